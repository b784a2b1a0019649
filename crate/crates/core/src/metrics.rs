//! Per-second traffic records, run summaries and CSV export.

use std::collections::BTreeMap;
use std::io::Write;

use crate::adaptation::{policy_at, AdaptationEvent, Policy};
use crate::engine::SimTime;
use crate::error::{Result, SimError};
use crate::mobility::CongestionSchedule;
use crate::radio::Direction;
use crate::sensing::CongestionLevel;
use crate::traffic::{DropReason, Packet, TrafficClass};

pub const BIN: SimTime = SimTime::from_secs(1);

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricRecord {
    /// Bin start relative to the measurement origin.
    pub bin_start: SimTime,
    pub delivered_bytes: u64,
    pub generated_bytes: u64,
    pub generated_count: u64,
    pub delivered_count: u64,
    pub dropped_count: u64,
    /// Microseconds, over packets delivered in this bin.
    pub latency_sum: u64,
    pub latency_sq_sum: f64,
    /// Packets created in this bin that were eventually delivered.
    pub delivered_of_created: u64,
    pub active_user_s: f64,
}

impl MetricRecord {
    pub fn throughput_bps(&self) -> f64 {
        self.delivered_bytes as f64 * 8.0 / BIN.as_secs_f64()
    }

    pub fn mean_latency_ms(&self) -> f64 {
        if self.delivered_count == 0 {
            0.0
        } else {
            self.latency_sum as f64 / self.delivered_count as f64 / 1000.0
        }
    }
}

fn slot(class: TrafficClass, dir: Direction) -> usize {
    class.index() * 2 + dir.index()
}

/// (class, direction) in output order.
pub fn series() -> impl Iterator<Item = (TrafficClass, Direction)> {
    TrafficClass::ALL
        .into_iter()
        .flat_map(|c| Direction::ALL.into_iter().map(move |d| (c, d)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Totals {
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub delivered_bytes: u64,
}

#[derive(Debug, Clone)]
pub struct MetricsRecorder {
    origin: SimTime,
    bins: Vec<[MetricRecord; 4]>,
    totals: [Totals; 4],
    drops: BTreeMap<&'static str, u64>,
}

impl MetricsRecorder {
    /// Bins cover `[origin, origin + duration)`.
    pub fn new(origin: SimTime, duration: SimTime) -> Self {
        let n = duration.as_micros().div_ceil(BIN.as_micros()) as usize;
        let bins = (0..n)
            .map(|i| {
                let r = MetricRecord {
                    bin_start: SimTime::from_secs(i as u64),
                    ..MetricRecord::default()
                };
                [r; 4]
            })
            .collect();
        MetricsRecorder {
            origin,
            bins,
            totals: [Totals::default(); 4],
            drops: BTreeMap::new(),
        }
    }

    fn bin(&mut self, t: SimTime) -> Option<&mut [MetricRecord; 4]> {
        if t < self.origin {
            return None;
        }
        let i = ((t - self.origin).as_micros() / BIN.as_micros()) as usize;
        self.bins.get_mut(i)
    }

    pub fn record_generated(&mut self, p: &Packet) {
        let s = slot(p.class, p.direction);
        self.totals[s].generated += 1;
        if let Some(b) = self.bin(p.created_at) {
            b[s].generated_count += 1;
            b[s].generated_bytes += u64::from(p.size);
        }
    }

    pub fn record_delivery(&mut self, p: &mut Packet, t: SimTime) -> Result<()> {
        if p.delivered_at.is_some() || p.drop_reason.is_some() {
            return Err(SimError::Fault {
                time: t,
                target: crate::engine::ModuleId::Metrics,
                kind: "delivery",
                message: format!("packet {} already finalized", p.id),
            });
        }
        p.delivered_at = Some(t);
        let s = slot(p.class, p.direction);
        self.totals[s].delivered += 1;
        self.totals[s].delivered_bytes += u64::from(p.size);
        let latency = (t - p.created_at).as_micros();
        if let Some(b) = self.bin(t) {
            let r = &mut b[s];
            r.delivered_bytes += u64::from(p.size);
            r.delivered_count += 1;
            r.latency_sum += latency;
            r.latency_sq_sum += (latency as f64).powi(2);
        }
        if let Some(b) = self.bin(p.created_at) {
            b[s].delivered_of_created += 1;
        }
        Ok(())
    }

    pub fn record_drop(&mut self, p: &mut Packet, t: SimTime, reason: DropReason) -> Result<()> {
        if p.delivered_at.is_some() || p.drop_reason.is_some() {
            return Err(SimError::Fault {
                time: t,
                target: crate::engine::ModuleId::Metrics,
                kind: "drop",
                message: format!("packet {} already finalized", p.id),
            });
        }
        p.drop_reason = Some(reason);
        let s = slot(p.class, p.direction);
        self.totals[s].dropped += 1;
        *self.drops.entry(reason.label()).or_default() += 1;
        if let Some(b) = self.bin(t) {
            b[s].dropped_count += 1;
        }
        Ok(())
    }

    /// Adds `users` active for `dt` starting at `t` to the user-second count of
    /// both directions of `class`.
    pub fn add_active(&mut self, class: TrafficClass, t: SimTime, dt: SimTime, users: usize) {
        let amount = users as f64 * dt.as_secs_f64();
        if let Some(b) = self.bin(t) {
            for d in Direction::ALL {
                b[slot(class, d)].active_user_s += amount;
            }
        }
    }

    pub fn totals(&self, class: TrafficClass, dir: Direction) -> Totals {
        self.totals[slot(class, dir)]
    }

    pub fn drops_by_reason(&self) -> &BTreeMap<&'static str, u64> {
        &self.drops
    }

    pub fn origin(&self) -> SimTime {
        self.origin
    }

    pub fn records(&self, class: TrafficClass, dir: Direction) -> Vec<MetricRecord> {
        let s = slot(class, dir);
        self.bins.iter().map(|b| b[s]).collect()
    }

    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub level: CongestionLevel,
    pub policy: Policy,
    pub class: TrafficClass,
    pub direction: Direction,
    pub per_user_throughput_bps: f64,
    pub mean_latency_ms: f64,
    pub delivery_ratio: f64,
    /// No packets generated: the ratio is reported as 1.0.
    pub ratio_undefined: bool,
    pub delivered_bytes: u64,
    pub active_user_s: f64,
    pub delivered_count: u64,
    pub generated_count: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunSummary {
    pub rows: Vec<SummaryRow>,
    /// Set when there were no records at all.
    pub empty: bool,
}

impl RunSummary {
    pub fn row(&self, level: CongestionLevel, policy: Policy, class: TrafficClass, dir: Direction) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.level == level && r.policy == policy && r.class == class && r.direction == dir)
    }
}

#[derive(Default)]
struct Acc {
    delivered_bytes: u64,
    active: f64,
    latency: u64,
    delivered: u64,
    generated: u64,
    delivered_of_created: u64,
}

/// Groups bins by the scheduled congestion level and the policy in force at
/// the start of the bin. Bin times are relative to `origin`; the policy log
/// uses absolute time.
pub fn summarize(
    records: &[(TrafficClass, Direction, Vec<MetricRecord>)],
    schedule: &CongestionSchedule,
    policy_log: &[AdaptationEvent],
    origin: SimTime,
) -> RunSummary {
    if records.iter().all(|(_, _, r)| r.is_empty()) {
        return RunSummary { rows: Vec::new(), empty: true };
    }
    let mut groups: BTreeMap<(CongestionLevel, Policy, TrafficClass, Direction), Acc> = BTreeMap::new();
    for (class, dir, bins) in records {
        for r in bins {
            let level = schedule.level_at(r.bin_start);
            let policy = policy_at(policy_log, origin + r.bin_start);
            let a = groups.entry((level, policy, *class, *dir)).or_default();
            a.delivered_bytes += r.delivered_bytes;
            a.active += r.active_user_s;
            a.latency += r.latency_sum;
            a.delivered += r.delivered_count;
            a.generated += r.generated_count;
            a.delivered_of_created += r.delivered_of_created;
        }
    }
    let rows = groups
        .into_iter()
        .map(|((level, policy, class, direction), a)| SummaryRow {
            level,
            policy,
            class,
            direction,
            per_user_throughput_bps: if a.active > 0.0 { a.delivered_bytes as f64 * 8.0 / a.active } else { 0.0 },
            mean_latency_ms: if a.delivered > 0 { a.latency as f64 / a.delivered as f64 / 1000.0 } else { 0.0 },
            delivery_ratio: if a.generated > 0 { a.delivered_of_created as f64 / a.generated as f64 } else { 1.0 },
            ratio_undefined: a.generated == 0,
            delivered_bytes: a.delivered_bytes,
            active_user_s: a.active,
            delivered_count: a.delivered,
            generated_count: a.generated,
        })
        .collect();
    RunSummary { rows, empty: false }
}

pub const TIMESERIES_HEADER: &str = "bin_start_s,class,direction,throughput_bps,delivered,dropped,mean_latency_ms";
pub const SUMMARY_HEADER: &str = "level,policy,class,direction,per_user_throughput_bps,mean_latency_ms,delivery_ratio";

fn write_series_rows<W: Write>(out: &mut W, class: TrafficClass, dir: Direction, bins: &[MetricRecord]) -> std::io::Result<()> {
    for r in bins {
        writeln!(
            out,
            "{},{},{},{:.1},{},{},{:.3}",
            r.bin_start.as_micros() / 1_000_000,
            class,
            dir,
            r.throughput_bps(),
            r.delivered_count,
            r.dropped_count,
            r.mean_latency_ms()
        )?;
    }
    Ok(())
}

pub fn write_timeseries<W: Write>(mut out: W, records: &[(TrafficClass, Direction, Vec<MetricRecord>)]) -> std::io::Result<()> {
    writeln!(out, "{TIMESERIES_HEADER}")?;
    for (c, d, bins) in records {
        write_series_rows(&mut out, *c, *d, bins)?;
    }
    Ok(())
}

/// Same schema as the full time series, for one (class, direction).
pub fn write_series<W: Write>(mut out: W, class: TrafficClass, dir: Direction, bins: &[MetricRecord]) -> std::io::Result<()> {
    writeln!(out, "{TIMESERIES_HEADER}")?;
    write_series_rows(&mut out, class, dir, bins)
}

pub fn write_summary<W: Write>(mut out: W, summary: &RunSummary) -> std::io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for r in &summary.rows {
        writeln!(
            out,
            "{},{},{},{},{:.1},{:.3},{:.6}",
            r.level, r.policy, r.class, r.direction, r.per_user_throughput_bps, r.mean_latency_ms, r.delivery_ratio
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::FlowSpec;

    fn packet(id: u64, created_ms: u64) -> Packet {
        let spec = FlowSpec::mt(Direction::Ul, 800, SimTime::from_millis(100));
        Packet::new(id, &spec, 0, SimTime::from_millis(created_ms))
    }

    #[test]
    fn latency_lands_in_delivery_bin() {
        let mut m = MetricsRecorder::new(SimTime::ZERO, SimTime::from_secs(5));
        let mut p = packet(1, 1000);
        m.record_generated(&p);
        m.record_delivery(&mut p, SimTime::from_millis(1050)).unwrap();
        let r = m.records(TrafficClass::Mt, Direction::Ul);
        assert_eq!(r[1].latency_sum, 50_000);
        assert_eq!(r[1].mean_latency_ms(), 50.0);
        assert_eq!(r[1].delivered_bytes, 800);
    }

    #[test]
    fn double_delivery_is_a_fault() {
        let mut m = MetricsRecorder::new(SimTime::ZERO, SimTime::from_secs(5));
        let mut p = packet(1, 0);
        m.record_delivery(&mut p, SimTime::from_millis(10)).unwrap();
        assert!(m.record_delivery(&mut p, SimTime::from_millis(20)).is_err());
        assert!(m.record_drop(&mut p, SimTime::from_millis(20), DropReason::Ttl).is_err());
    }

    #[test]
    fn drops_count_without_latency() {
        let mut m = MetricsRecorder::new(SimTime::ZERO, SimTime::from_secs(5));
        let mut p = packet(1, 0);
        m.record_generated(&p);
        m.record_drop(&mut p, SimTime::from_millis(300), DropReason::RachExhausted).unwrap();
        let r = m.records(TrafficClass::Mt, Direction::Ul);
        assert_eq!((r[0].dropped_count, r[0].delivered_count, r[0].latency_sum), (1, 0, 0));
        assert_eq!(m.drops_by_reason()["rach_exhausted"], 1);
    }

    #[test]
    fn origin_offsets_bins() {
        let mut m = MetricsRecorder::new(SimTime::from_secs(270), SimTime::from_secs(300));
        assert_eq!(m.bin_count(), 300);
        let mut p = packet(1, 270_500);
        m.record_generated(&p);
        m.record_delivery(&mut p, SimTime::from_millis(271_200)).unwrap();
        let r = m.records(TrafficClass::Mt, Direction::Ul);
        assert_eq!((r[0].generated_count, r[1].delivered_count), (1, 1));
        assert_eq!(r[0].delivered_of_created, 1);
    }

    #[test]
    fn empty_summary_is_flagged() {
        let s = summarize(&[], &CongestionSchedule::constant(CongestionLevel::Low), &[], SimTime::ZERO);
        assert!(s.empty);
        assert!(s.rows.is_empty());
    }

    #[test]
    fn no_traffic_reports_unit_ratio_with_flag() {
        let m = MetricsRecorder::new(SimTime::ZERO, SimTime::from_secs(3));
        let recs: Vec<_> = series().map(|(c, d)| (c, d, m.records(c, d))).collect();
        let s = summarize(&recs, &CongestionSchedule::constant(CongestionLevel::Low), &[], SimTime::ZERO);
        assert_eq!(s.rows.len(), 4);
        assert!(s.rows.iter().all(|r| r.delivery_ratio == 1.0 && r.ratio_undefined));
    }

    #[test]
    fn per_user_throughput_and_grouping() {
        let mut m = MetricsRecorder::new(SimTime::ZERO, SimTime::from_secs(4));
        let spec = FlowSpec::ht(Direction::Dl, 1000, 800e3);
        let mut id = 0;
        for s in 0..4u64 {
            m.add_active(TrafficClass::Ht, SimTime::from_secs(s), BIN, 2);
            for _ in 0..200 {
                let mut p = Packet::new(id, &spec, 0, SimTime::from_secs(s));
                id += 1;
                m.record_generated(&p);
                m.record_delivery(&mut p, SimTime::from_secs(s) + SimTime::from_millis(5)).unwrap();
            }
        }
        let schedule = CongestionSchedule::parse("low:0,high:2").unwrap();
        let recs: Vec<_> = series().map(|(c, d)| (c, d, m.records(c, d))).collect();
        let s = summarize(&recs, &schedule, &[], SimTime::ZERO);
        let low = s.row(CongestionLevel::Low, Policy::Standard, TrafficClass::Ht, Direction::Dl).unwrap();
        assert_eq!(low.per_user_throughput_bps, 800e3);
        assert_eq!(low.delivery_ratio, 1.0);
        assert!(s.row(CongestionLevel::High, Policy::Standard, TrafficClass::Ht, Direction::Dl).is_some());
        // Accounting identity: bins sum to the cumulative total.
        let total: u64 = m.records(TrafficClass::Ht, Direction::Dl).iter().map(|r| r.delivered_bytes).sum();
        assert_eq!(total, m.totals(TrafficClass::Ht, Direction::Dl).delivered_bytes);
        // Re-summarizing is pure.
        assert_eq!(s, summarize(&recs, &schedule, &[], SimTime::ZERO));
    }

    #[test]
    fn csv_headers() {
        let m = MetricsRecorder::new(SimTime::ZERO, SimTime::from_secs(1));
        let recs: Vec<_> = series().map(|(c, d)| (c, d, m.records(c, d))).collect();
        let mut buf = Vec::new();
        write_timeseries(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(TIMESERIES_HEADER));
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("\n0,HT,DL,0.0,0,0,0.000\n"));
    }
}
