//! Proportional-fair resource-block scheduler.
//!
//! RBs go one at a time to the backlogged flow with the largest
//! `instantaneous_rate / average_rate`. Averages are frozen within a TTI, so
//! the greedy per-RB rule reduces to: rank flows by metric, give each flow the
//! RBs its backlog needs, pass the surplus down the ranking.

/// Average rate assumed for a flow that has never been served, bits/s.
const MIN_AVG_RATE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfFlow {
    /// Exponentially averaged served rate, bits/s.
    pub avg_rate: f64,
    pub backlog_bits: u64,
    /// Bits per RB per TTI on this flow's link.
    pub rate_per_rb: u32,
    /// Inactive flows are neither scheduled nor averaged.
    pub active: bool,
}

impl Default for PfFlow {
    fn default() -> Self {
        PfFlow {
            avg_rate: 0.0,
            backlog_bits: 0,
            rate_per_rb: 0,
            active: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Allocation {
    pub flow: usize,
    pub rbs: u32,
    pub bits: u64,
}

#[derive(Debug, Clone)]
pub struct PfScheduler {
    /// Averaging constant in TTIs.
    pub window_ttis: f64,
    pub tti_s: f64,
    ranked: Vec<usize>,
}

impl PfScheduler {
    pub fn new(window_ttis: f64, tti_s: f64) -> Self {
        PfScheduler {
            window_ttis,
            tti_s,
            ranked: Vec::new(),
        }
    }

    /// Allocates `rb_count` RBs for one TTI, writes the grants into `out`
    /// (ranking order) and updates every active flow's average. Backlogs are
    /// left untouched; the caller drains `bits` from its queues.
    pub fn schedule(&mut self, flows: &mut [PfFlow], rb_count: u32, out: &mut Vec<Allocation>) {
        out.clear();
        self.ranked.clear();
        self.ranked.extend(
            flows
                .iter()
                .enumerate()
                .filter(|(_, f)| f.active && f.backlog_bits > 0 && f.rate_per_rb > 0)
                .map(|(i, _)| i),
        );
        let metric = |f: &PfFlow| f64::from(f.rate_per_rb) / f.avg_rate.max(MIN_AVG_RATE);
        self.ranked.sort_by(|&a, &b| {
            metric(&flows[b])
                .total_cmp(&metric(&flows[a]))
                .then(a.cmp(&b))
        });

        let mut remaining = rb_count;
        for &i in &self.ranked {
            if remaining == 0 {
                break;
            }
            let f = &flows[i];
            let rate = u64::from(f.rate_per_rb);
            let need = f.backlog_bits.div_ceil(rate);
            let rbs = need.min(u64::from(remaining)) as u32;
            let bits = (u64::from(rbs) * rate).min(f.backlog_bits);
            remaining -= rbs;
            out.push(Allocation { flow: i, rbs, bits });
        }

        let alpha = 1.0 / self.window_ttis;
        for f in flows.iter_mut().filter(|f| f.active) {
            f.avg_rate *= 1.0 - alpha;
        }
        for a in out.iter() {
            flows[a.flow].avg_rate += alpha * a.bits as f64 / self.tti_s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> PfScheduler {
        PfScheduler::new(1000.0, 1e-3)
    }

    fn deep(rate: u32) -> PfFlow {
        PfFlow {
            backlog_bits: 10_000_000,
            rate_per_rb: rate,
            ..PfFlow::default()
        }
    }

    #[test]
    fn single_backlogged_flow_takes_everything() {
        let mut flows = vec![deep(999), PfFlow::default()];
        let mut out = Vec::new();
        sched().schedule(&mut flows, 25, &mut out);
        assert_eq!(out, vec![Allocation { flow: 0, rbs: 25, bits: 25 * 999 }]);
    }

    #[test]
    fn zero_backlog_gets_nothing() {
        let mut flows = vec![PfFlow { avg_rate: 0.0, backlog_bits: 0, rate_per_rb: 999, active: true }, deep(999)];
        let mut out = Vec::new();
        sched().schedule(&mut flows, 25, &mut out);
        assert!(out.iter().all(|a| a.flow != 0));
    }

    #[test]
    fn surplus_passes_to_next_flow() {
        // Flow 0 has the better metric but only needs 3 RBs.
        let mut flows = vec![
            PfFlow { avg_rate: 10.0, backlog_bits: 2500, rate_per_rb: 999, active: true },
            PfFlow { avg_rate: 1e6, ..deep(999) },
        ];
        let mut out = Vec::new();
        sched().schedule(&mut flows, 25, &mut out);
        assert_eq!(out[0], Allocation { flow: 0, rbs: 3, bits: 2500 });
        assert_eq!(out[1].rbs, 22);
    }

    #[test]
    fn averages_update_for_idle_flows_too() {
        let mut flows = vec![PfFlow { avg_rate: 1000.0, ..PfFlow::default() }];
        let mut out = Vec::new();
        sched().schedule(&mut flows, 25, &mut out);
        assert!((flows[0].avg_rate - 999.0).abs() < 1e-9);
    }

    /// Brute-force oracle: replay the per-RB greedy rule literally, one RB at a
    /// time, recomputing the argmax over flows that still need RBs.
    fn per_rb_oracle(flows: &[PfFlow], rb_count: u32) -> Vec<u32> {
        let mut alloc = vec![0u32; flows.len()];
        for _ in 0..rb_count {
            let best = flows
                .iter()
                .enumerate()
                .filter(|(i, f)| {
                    f.active && f.rate_per_rb > 0 && u64::from(alloc[*i]) * u64::from(f.rate_per_rb) < f.backlog_bits
                })
                .max_by(|(ia, a), (ib, b)| {
                    let ma = f64::from(a.rate_per_rb) / a.avg_rate.max(MIN_AVG_RATE);
                    let mb = f64::from(b.rate_per_rb) / b.avg_rate.max(MIN_AVG_RATE);
                    ma.total_cmp(&mb).then(ib.cmp(ia))
                });
            match best {
                Some((i, _)) => alloc[i] += 1,
                None => break,
            }
        }
        alloc
    }

    #[test]
    fn two_symmetric_flows_split_evenly() {
        let mut flows = vec![deep(999), deep(999)];
        let mut s = sched();
        let mut out = Vec::new();
        let mut totals = [0u64; 2];
        for _ in 0..1000 {
            s.schedule(&mut flows, 25, &mut out);
            for a in &out {
                totals[a.flow] += u64::from(a.rbs);
            }
        }
        let share = totals[0] as f64 / (totals[0] + totals[1]) as f64;
        assert!((share - 0.5).abs() <= 0.02, "share {share}");
    }

    #[test]
    fn saturated_flows_converge_to_equal_throughput() {
        for k in [2usize, 5, 10] {
            let mut flows = vec![deep(999); k];
            let mut s = sched();
            let mut out = Vec::new();
            let mut served = vec![0u64; k];
            for _ in 0..5000 {
                s.schedule(&mut flows, 25, &mut out);
                for a in &out {
                    served[a.flow] += a.bits;
                }
            }
            let capacity = 25.0 * 999.0 * 5000.0;
            for (i, bits) in served.iter().enumerate() {
                let share = *bits as f64 / (capacity / k as f64);
                assert!((share - 1.0).abs() <= 0.05, "k={k} flow {i} share {share}");
            }
        }
    }

    use proptest::prelude::*;

    fn flow_strategy() -> impl Strategy<Value = PfFlow> {
        (0.0f64..2e6, 0u64..60_000, 0u32..1000, proptest::bool::weighted(0.9)).prop_map(|(avg, backlog, rate, active)| PfFlow {
            avg_rate: avg,
            backlog_bits: backlog,
            rate_per_rb: rate,
            active,
        })
    }

    proptest! {
        #[test]
        fn matches_per_rb_greedy_and_respects_caps(flows in proptest::collection::vec(flow_strategy(), 0..12), rb_count in 1u32..60) {
            let oracle = per_rb_oracle(&flows, rb_count);
            let mut work = flows.clone();
            let mut out = Vec::new();
            sched().schedule(&mut work, rb_count, &mut out);
            let mut alloc = vec![0u32; flows.len()];
            for a in &out {
                alloc[a.flow] = a.rbs;
                prop_assert!(a.bits <= u64::from(a.rbs) * u64::from(flows[a.flow].rate_per_rb));
                prop_assert!(a.bits <= flows[a.flow].backlog_bits);
            }
            prop_assert_eq!(&alloc, &oracle);
            let used: u32 = alloc.iter().sum();
            prop_assert!(used <= rb_count);
            let demand: u64 = flows.iter().filter(|f| f.active && f.rate_per_rb > 0)
                .map(|f| f.backlog_bits.div_ceil(u64::from(f.rate_per_rb))).sum();
            if demand >= u64::from(rb_count) {
                prop_assert_eq!(used, rb_count);
            }
            prop_assert!(work.iter().all(|f| f.avg_rate >= 0.0));
        }
    }
}
