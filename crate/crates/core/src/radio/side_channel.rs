//! Short-range vehicle-to-vehicle channel used to reach the concentrator.
//!
//! Modelled as one shared pipe: transmissions are serialized first-in,
//! first-out, each costing a fixed overhead plus its bits at full capacity.

use crate::engine::SimTime;

#[derive(Debug, Clone, PartialEq)]
pub struct SideChannel {
    pub standard: &'static str,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub max_tx_power_dbm: f64,
    pub capacity_bps: f64,
    pub per_packet_overhead: SimTime,
    pub range_m: f64,
    busy_until: SimTime,
}

impl Default for SideChannel {
    fn default() -> Self {
        SideChannel {
            standard: "802.11n",
            carrier_hz: 2.4e9,
            bandwidth_hz: 20e6,
            max_tx_power_dbm: 30.0,
            capacity_bps: 24e6,
            per_packet_overhead: SimTime::from_micros(100),
            range_m: 150.0,
            busy_until: SimTime::ZERO,
        }
    }
}

impl SideChannel {
    /// Delay for `bytes` when `n_contenders` senders share the pipe fairly.
    /// `n_contenders` counts the sender itself and is clamped to at least 1.
    pub fn transfer_delay(&self, bytes: u32, n_contenders: u32) -> SimTime {
        let share = self.capacity_bps / f64::from(n_contenders.max(1));
        self.per_packet_overhead + SimTime::from_secs_f64(f64::from(bytes) * 8.0 / share)
    }

    pub fn in_range(&self, a: (f64, f64), b: (f64, f64)) -> bool {
        (a.0 - b.0).hypot(a.1 - b.1) <= self.range_m
    }

    /// Queues one transmission at `now` and returns its completion time.
    pub fn enqueue(&mut self, now: SimTime, bytes: u32) -> SimTime {
        let start = self.busy_until.max(now);
        self.busy_until = start + self.transfer_delay(bytes, 1);
        self.busy_until
    }

    pub fn busy_until(&self) -> SimTime {
        self.busy_until
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_800_byte_transfer() {
        let ch = SideChannel::default();
        // 100 us + 6400 bit / 24 Mb/s = 366.67 us.
        assert_eq!(ch.transfer_delay(800, 1), SimTime::from_micros(367));
        assert_eq!(ch.transfer_delay(800, 0), ch.transfer_delay(800, 1));
    }

    #[test]
    fn back_to_back_transfers_use_full_capacity() {
        let mut ch = SideChannel::default();
        let mut done = SimTime::ZERO;
        for _ in 0..50 {
            done = ch.enqueue(SimTime::ZERO, 800);
        }
        assert_eq!(done, SimTime::from_micros(50 * 367));
        // Airtime net of per-packet overhead equals bits over capacity, up to
        // microsecond rounding.
        let payload_time = done.as_secs_f64() - 50.0 * ch.per_packet_overhead.as_secs_f64();
        let goodput = 50.0 * 6400.0 / payload_time;
        assert!((goodput - ch.capacity_bps).abs() / ch.capacity_bps < 2e-3, "{goodput}");
    }

    #[test]
    fn fifo_serialization() {
        let mut ch = SideChannel::default();
        let a = ch.enqueue(SimTime::ZERO, 800);
        let b = ch.enqueue(SimTime::ZERO, 800);
        assert!(b > a);
        assert_eq!(b - a, ch.transfer_delay(800, 1));
        // An idle medium starts immediately.
        let c = ch.enqueue(SimTime::from_secs(1), 800);
        assert_eq!(c, SimTime::from_secs(1) + ch.transfer_delay(800, 1));
    }

    #[test]
    fn range_check() {
        let ch = SideChannel::default();
        assert!(ch.in_range((-5.0, 0.0), (0.0, -120.0)));
        assert!(!ch.in_range((-5.0, 0.0), (0.0, -200.0)));
    }
}
