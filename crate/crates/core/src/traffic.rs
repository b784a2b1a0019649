//! Machine-type and human-type traffic sources, and the aggregation application
//! run by a concentrator vehicle.

use std::collections::BTreeMap;
use std::fmt;

use crate::engine::SimTime;
use crate::mobility::{target_population, Road, Vehicle};
use crate::radio::Direction;
use crate::rng::RngStream;
use crate::sensing::CongestionLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrafficClass {
    Mt,
    Ht,
}

impl TrafficClass {
    pub const ALL: [TrafficClass; 2] = [TrafficClass::Mt, TrafficClass::Ht];

    pub fn label(self) -> &'static str {
        match self {
            TrafficClass::Mt => "MT",
            TrafficClass::Ht => "HT",
        }
    }

    pub fn index(self) -> usize {
        match self {
            TrafficClass::Mt => 0,
            TrafficClass::Ht => 1,
        }
    }
}

impl fmt::Display for TrafficClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateModel {
    /// One packet every `period`.
    Periodic { period: SimTime },
    /// Exponential inter-arrivals with the given mean.
    Poisson { mean_interarrival: SimTime },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSpec {
    pub class: TrafficClass,
    pub direction: Direction,
    pub packet_size: u32,
    pub rate_model: RateModel,
}

impl FlowSpec {
    pub fn mt(direction: Direction, packet_size: u32, period: SimTime) -> Self {
        FlowSpec {
            class: TrafficClass::Mt,
            direction,
            packet_size,
            rate_model: RateModel::Periodic { period },
        }
    }

    /// HT flow whose Poisson arrival rate yields `bitrate_bps` on average.
    pub fn ht(direction: Direction, packet_size: u32, bitrate_bps: f64) -> Self {
        let mean = f64::from(packet_size) * 8.0 / bitrate_bps;
        FlowSpec {
            class: TrafficClass::Ht,
            direction,
            packet_size,
            rate_model: RateModel::Poisson {
                mean_interarrival: SimTime::from_secs_f64(mean),
            },
        }
    }

    pub fn mean_bitrate_bps(&self) -> f64 {
        let gap = match self.rate_model {
            RateModel::Periodic { period } => period,
            RateModel::Poisson { mean_interarrival } => mean_interarrival,
        };
        f64::from(self.packet_size) * 8.0 / gap.as_secs_f64()
    }

    /// Offset of the first packet after activation. Periodic flows get a
    /// uniform phase in `[0, period)`.
    pub fn first_offset(&self, rng: &mut RngStream) -> SimTime {
        match self.rate_model {
            RateModel::Periodic { period } => SimTime::from_secs_f64(rng.uniform(0.0, period.as_secs_f64())),
            RateModel::Poisson { .. } => self.next_gap(rng),
        }
    }

    pub fn next_gap(&self, rng: &mut RngStream) -> SimTime {
        match self.rate_model {
            RateModel::Periodic { period } => period,
            RateModel::Poisson { mean_interarrival } => {
                // At least one microsecond so generation always advances time.
                SimTime::from_secs_f64(rng.exponential(mean_interarrival.as_secs_f64())).max(SimTime(1))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacketPath {
    Direct,
    Relayed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DropReason {
    RachExhausted,
    Ttl,
    NodeDeparted,
}

impl DropReason {
    pub fn label(self) -> &'static str {
        match self {
            DropReason::RachExhausted => "rach_exhausted",
            DropReason::Ttl => "ttl",
            DropReason::NodeDeparted => "node_departed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Packet {
    pub id: u64,
    pub class: TrafficClass,
    pub direction: Direction,
    /// Node that generates (UL) or consumes (DL) the packet.
    pub endpoint: usize,
    pub size: u32,
    pub created_at: SimTime,
    pub path: PacketPath,
    pub delivered_at: Option<SimTime>,
    pub drop_reason: Option<DropReason>,
}

impl Packet {
    pub fn new(id: u64, spec: &FlowSpec, endpoint: usize, created_at: SimTime) -> Self {
        Packet {
            id,
            class: spec.class,
            direction: spec.direction,
            endpoint,
            size: spec.packet_size,
            created_at,
            path: PacketPath::Direct,
            delivered_at: None,
            drop_reason: None,
        }
    }
}

/// HT devices present for a scenario at a congestion level when the vehicle
/// population sits at its target.
pub fn nominal_ht_devices(scenario: u8, static_users: u32, passenger_probability: f64, level: CongestionLevel) -> u32 {
    match scenario {
        2 => static_users + (f64::from(target_population(level)) * passenger_probability).round() as u32,
        _ => static_users,
    }
}

/// Uniform placement in a disc of `radius` around the junction.
pub fn place_static_users(count: u32, radius: f64, rng: &mut RngStream) -> Vec<(f64, f64)> {
    (0..count)
        .map(|_| {
            let r = radius * rng.uniform(0.0, 1.0).sqrt();
            let theta = rng.uniform(0.0, std::f64::consts::TAU);
            (r * theta.cos(), r * theta.sin())
        })
        .collect()
}

/// Head of the longer queue; ties go to road A. `queues` is indexed by road.
pub fn elect_concentrator(queues: [&[&Vehicle]; 2]) -> Option<u32> {
    let (a, b) = (queues[Road::A.index()], queues[Road::B.index()]);
    let pick = if b.len() > a.len() { b } else { a };
    pick.first().map(|v| v.id)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationBundle {
    pub concentrator: u32,
    pub members: Vec<u64>,
    pub created_at: SimTime,
    pub size: u32,
}

/// Concentrator bookkeeping: who is associated, and UL packets waiting for the
/// next bundle.
#[derive(Debug, Clone)]
pub struct Aggregator {
    pub window: SimTime,
    pub association_delay: SimTime,
    pub header_bytes: u32,
    concentrator: Option<u32>,
    // vehicle id -> time the association completes
    members: BTreeMap<u32, SimTime>,
    buffer: Vec<(u64, u32)>,
}

impl Default for Aggregator {
    fn default() -> Self {
        Aggregator::new(SimTime::from_millis(100), SimTime::from_millis(200), 20)
    }
}

impl Aggregator {
    pub fn new(window: SimTime, association_delay: SimTime, header_bytes: u32) -> Self {
        Aggregator {
            window,
            association_delay,
            header_bytes,
            concentrator: None,
            members: BTreeMap::new(),
            buffer: Vec::new(),
        }
    }

    pub fn concentrator(&self) -> Option<u32> {
        self.concentrator
    }

    /// Installs a new concentrator; existing associations are torn down and
    /// must be re-established.
    pub fn set_concentrator(&mut self, id: Option<u32>) {
        if self.concentrator != id {
            self.concentrator = id;
            self.members.clear();
        }
    }

    /// Makes the member set equal to `eligible`; newcomers become usable after
    /// the association delay.
    pub fn sync_members(&mut self, eligible: &[u32], now: SimTime) {
        self.members.retain(|id, _| eligible.contains(id));
        for id in eligible {
            if Some(*id) != self.concentrator {
                self.members.entry(*id).or_insert(now + self.association_delay);
            }
        }
    }

    pub fn is_associated(&self, vehicle: u32, now: SimTime) -> bool {
        self.members.get(&vehicle).is_some_and(|ready| *ready <= now)
    }

    pub fn association_count(&self, now: SimTime) -> usize {
        self.members.values().filter(|ready| **ready <= now).count()
    }

    pub fn push(&mut self, packet: u64, size: u32) {
        self.buffer.push((packet, size));
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    /// Closes the current bundling window.
    pub fn flush(&mut self, now: SimTime) -> Option<AggregationBundle> {
        let concentrator = self.concentrator?;
        if self.buffer.is_empty() {
            return None;
        }
        let size = self.buffer.iter().map(|(_, s)| s + self.header_bytes).sum();
        let members = self.buffer.drain(..).map(|(id, _)| id).collect();
        Some(AggregationBundle {
            concentrator,
            members,
            created_at: now,
            size,
        })
    }

    /// Drops all associations and returns packets still waiting to be bundled.
    pub fn dissolve(&mut self) -> Vec<(u64, u32)> {
        self.concentrator = None;
        self.members.clear();
        std::mem::take(&mut self.buffer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mobility::VehicleState;

    fn queued(id: u32, road: Road, pos: f64) -> Vehicle {
        Vehicle {
            id,
            road,
            position: pos,
            speed: 0.0,
            state: VehicleState::Queued,
            entered_at: SimTime::ZERO,
            has_passenger_ht: false,
        }
    }

    #[test]
    fn mt_rates_match_nominal_values() {
        let ul = FlowSpec::mt(Direction::Ul, 800, SimTime::from_millis(100));
        let dl = FlowSpec::mt(Direction::Dl, 800, SimTime::from_secs(1));
        assert_eq!(ul.mean_bitrate_bps(), 64_000.0);
        assert_eq!(dl.mean_bitrate_bps(), 6_400.0);
    }

    #[test]
    fn ht_interarrival_means() {
        let dl = FlowSpec::ht(Direction::Dl, 1000, 800e3);
        let ul = FlowSpec::ht(Direction::Ul, 1000, 400e3);
        assert_eq!(dl.rate_model, RateModel::Poisson { mean_interarrival: SimTime::from_millis(10) });
        assert_eq!(ul.rate_model, RateModel::Poisson { mean_interarrival: SimTime::from_millis(20) });
        assert!((ul.mean_bitrate_bps() - 400e3).abs() < 1e-6);
    }

    #[test]
    fn ht_empirical_rate() {
        let dl = FlowSpec::ht(Direction::Dl, 1000, 800e3);
        let mut rng = RngStream::new(5, "traffic-ht");
        let n = 100_000u64;
        let total: u64 = (0..n).map(|_| dl.next_gap(&mut rng).as_micros()).sum();
        let rate = n as f64 * 8000.0 / (total as f64 / 1e6);
        assert!((rate - 800e3).abs() / 800e3 <= 0.02, "rate {rate}");
    }

    #[test]
    fn periodic_phase_is_within_period() {
        let ul = FlowSpec::mt(Direction::Ul, 800, SimTime::from_millis(100));
        let mut rng = RngStream::new(1, "traffic-mt");
        for _ in 0..1000 {
            assert!(ul.first_offset(&mut rng) < SimTime::from_millis(100));
        }
    }

    #[test]
    fn ht_population_per_level() {
        let counts: Vec<u32> = CongestionLevel::ALL.iter().map(|l| nominal_ht_devices(2, 30, 0.25, *l)).collect();
        assert_eq!(counts, vec![35, 45, 55, 60]);
        assert!(CongestionLevel::ALL.iter().all(|l| nominal_ht_devices(1, 30, 0.25, *l) == 30));
    }

    #[test]
    fn static_users_inside_disc() {
        let mut rng = RngStream::new(3, "placement");
        let pts = place_static_users(30, 500.0, &mut rng);
        assert_eq!(pts.len(), 30);
        assert!(pts.iter().all(|(x, y)| x.hypot(*y) <= 500.0));
    }

    #[test]
    fn election_rule() {
        let a: Vec<Vehicle> = (0..10).map(|i| queued(i, Road::A, -5.0 - 7.0 * f64::from(i))).collect();
        let b: Vec<Vehicle> = (10..14).map(|i| queued(i, Road::B, -5.0 - 7.0 * f64::from(i - 10))).collect();
        let ar: Vec<&Vehicle> = a.iter().collect();
        let br: Vec<&Vehicle> = b.iter().collect();
        assert_eq!(elect_concentrator([&ar, &br]), Some(0));
        assert_eq!(elect_concentrator([&br[..1], &br]), Some(10));
        let b4: Vec<&Vehicle> = br.clone();
        let a4: Vec<&Vehicle> = ar[..4].to_vec();
        assert_eq!(elect_concentrator([&a4, &b4]), Some(0));
        assert_eq!(elect_concentrator([&[], &[]]), None);
    }

    #[test]
    fn association_and_bundling() {
        let mut agg = Aggregator::default();
        let t0 = SimTime::from_secs(1);
        agg.set_concentrator(Some(7));
        agg.sync_members(&[7, 8, 9], t0);
        assert!(!agg.is_associated(8, t0));
        assert!(!agg.is_associated(7, t0 + SimTime::from_secs(1)));
        assert!(agg.is_associated(8, t0 + SimTime::from_millis(200)));
        assert_eq!(agg.association_count(t0 + SimTime::from_secs(1)), 2);

        assert!(agg.flush(t0).is_none());
        for id in 0..50 {
            agg.push(id, 800);
        }
        let bundle = agg.flush(t0).unwrap();
        assert_eq!(bundle.members.len(), 50);
        assert_eq!(bundle.size, 50 * 820);
        assert_eq!(agg.buffered(), 0);

        // Re-election tears associations down.
        agg.set_concentrator(Some(9));
        assert_eq!(agg.association_count(t0 + SimTime::from_secs(10)), 0);
        agg.push(99, 800);
        assert_eq!(agg.dissolve(), vec![(99, 800)]);
        assert_eq!(agg.concentrator(), None);
    }
}
