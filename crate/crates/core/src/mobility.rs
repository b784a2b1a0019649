//! Junction geometry, fixed-time signal, vehicle arrivals, motion and queueing.
//!
//! Two one-way approaches (roads A and B) cross at the origin. A vehicle's
//! position is measured along its road: negative while approaching, zero at
//! the junction centre, positive once past it. Vehicles exist only inside
//! `[-coverage_radius, +coverage_radius]`.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::engine::SimTime;
use crate::error::{Result, SimError};
use crate::rng::RngStream;
use crate::sensing::CongestionLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Road {
    A,
    B,
}

impl Road {
    pub const ALL: [Road; 2] = [Road::A, Road::B];

    pub fn index(self) -> usize {
        match self {
            Road::A => 0,
            Road::B => 1,
        }
    }

    pub fn other(self) -> Road {
        match self {
            Road::A => Road::B,
            Road::B => Road::A,
        }
    }
}

impl fmt::Display for Road {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Road::A => "A",
            Road::B => "B",
        })
    }
}

impl FromStr for Road {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Road::A),
            "B" | "b" => Ok(Road::B),
            other => Err(SimError::config("road", format!("unknown road `{other}`"))),
        }
    }
}

/// Planar coordinates of a point `position` metres along `road`.
pub fn road_point(road: Road, position: f64) -> (f64, f64) {
    match road {
        Road::A => (position, 0.0),
        Road::B => (0.0, position),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Junction {
    pub coverage_radius: f64,
    pub stop_line_offset: f64,
}

impl Default for Junction {
    fn default() -> Self {
        Junction {
            coverage_radius: 500.0,
            stop_line_offset: 5.0,
        }
    }
}

impl Junction {
    /// Stop-line position along either road.
    pub fn stop_line(&self) -> f64 {
        -self.stop_line_offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LightState {
    Green,
    Red,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficLight {
    pub green: SimTime,
    pub red: SimTime,
    pub phase0_green_road: Road,
}

impl Default for TrafficLight {
    fn default() -> Self {
        TrafficLight {
            green: SimTime::from_secs(60),
            red: SimTime::from_secs(30),
            phase0_green_road: Road::A,
        }
    }
}

impl TrafficLight {
    pub fn cycle(&self) -> SimTime {
        self.green + self.red
    }

    /// Road A (phase-0 road) is green on `[0, green)` of each cycle; the other road
    /// is green for the remainder. There is no all-red interval.
    pub fn state(&self, t: SimTime, road: Road) -> LightState {
        let in_cycle = t.as_micros() % self.cycle().as_micros();
        let phase0_green = in_cycle < self.green.as_micros();
        if phase0_green == (road == self.phase0_green_road) {
            LightState::Green
        } else {
            LightState::Red
        }
    }

    /// Start of the green interval that contains `t` for `road`, if green.
    pub fn green_since(&self, t: SimTime, road: Road) -> Option<SimTime> {
        if self.state(t, road) != LightState::Green {
            return None;
        }
        let cycle = self.cycle().as_micros();
        let cycle_start = t.as_micros() - t.as_micros() % cycle;
        let start = if road == self.phase0_green_road {
            cycle_start
        } else {
            cycle_start + self.green.as_micros()
        };
        Some(SimTime(start))
    }
}

/// Vehicles maintained in coverage for each congestion level.
pub fn target_population(level: CongestionLevel) -> u32 {
    match level {
        CongestionLevel::Low => 20,
        CongestionLevel::Moderate => 60,
        CongestionLevel::High => 100,
        CongestionLevel::VeryHigh => 120,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CongestionSchedule {
    segments: Vec<(SimTime, CongestionLevel)>,
}

impl CongestionSchedule {
    pub fn new(segments: Vec<(SimTime, CongestionLevel)>) -> Result<Self> {
        if segments.first().map(|s| s.0) != Some(SimTime::ZERO) {
            return Err(SimError::config("schedule", "first segment must start at 0"));
        }
        if segments.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(SimError::config("schedule", "segment starts must be strictly increasing"));
        }
        Ok(CongestionSchedule { segments })
    }

    pub fn constant(level: CongestionLevel) -> Self {
        CongestionSchedule {
            segments: vec![(SimTime::ZERO, level)],
        }
    }

    pub fn segments(&self) -> &[(SimTime, CongestionLevel)] {
        &self.segments
    }

    pub fn level_at(&self, t: SimTime) -> CongestionLevel {
        self.segments
            .iter()
            .rev()
            .find(|(start, _)| *start <= t)
            .map(|s| s.1)
            .unwrap_or(self.segments[0].1)
    }

    /// Parses `low:0,moderate:75,...` (start offsets in seconds).
    pub fn parse(s: &str) -> Result<Self> {
        let mut segments = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (level, start) = part
                .split_once(':')
                .ok_or_else(|| SimError::config("schedule", format!("expected level:start, got `{part}`")))?;
            let level: CongestionLevel = level.parse()?;
            let start: f64 = start
                .trim()
                .parse()
                .map_err(|_| SimError::config("schedule", format!("bad start time `{start}`")))?;
            if !(start >= 0.0 && start.is_finite()) {
                return Err(SimError::config("schedule", format!("bad start time `{start}`")));
            }
            segments.push((SimTime::from_secs_f64(start), level));
        }
        Self::new(segments)
    }

    pub fn to_config_string(&self) -> String {
        self.segments
            .iter()
            .map(|(t, l)| format!("{}:{}", l.label(), trim_float(t.as_secs_f64())))
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn trim_float(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VehicleState {
    Moving,
    Queued,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vehicle {
    pub id: u32,
    pub road: Road,
    pub position: f64,
    pub speed: f64,
    pub state: VehicleState,
    pub entered_at: SimTime,
    pub has_passenger_ht: bool,
}

impl Vehicle {
    pub fn point(&self) -> (f64, f64) {
        road_point(self.road, self.position)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityParams {
    pub speed: f64,
    pub headway: f64,
    pub startup_delay: SimTime,
    pub step: SimTime,
    /// Lower bound on the spacing of consecutive arrivals on one approach.
    pub min_interarrival: SimTime,
    pub passenger_probability: f64,
}

impl Default for MobilityParams {
    fn default() -> Self {
        MobilityParams {
            speed: 5.0,
            headway: 7.0,
            startup_delay: SimTime::from_secs(1),
            step: SimTime::from_millis(100),
            min_interarrival: SimTime::from_secs(2),
            passenger_probability: 0.0,
        }
    }
}

/// Outcome of one mobility step.
#[derive(Debug, Default, Clone)]
pub struct StepReport {
    pub spawned: Vec<u32>,
    pub despawned: Vec<u32>,
    /// Vehicles that went from queued to moving during this step.
    pub released: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct Mobility {
    pub junction: Junction,
    pub light: TrafficLight,
    pub params: MobilityParams,
    // Per road, front (largest position) first.
    lanes: [VecDeque<Vehicle>; 2],
    next_id: u32,
    next_arrival: [Option<SimTime>; 2],
    arrival_level: Option<CongestionLevel>,
    last_release: [SimTime; 2],
    enabled: bool,
}

impl Mobility {
    pub fn new(junction: Junction, light: TrafficLight, params: MobilityParams) -> Self {
        Mobility {
            junction,
            light,
            params,
            lanes: [VecDeque::new(), VecDeque::new()],
            next_id: 0,
            next_arrival: [None, None],
            arrival_level: None,
            last_release: [SimTime::ZERO; 2],
            enabled: true,
        }
    }

    /// Disables arrivals entirely (no-vehicle scenarios).
    pub fn set_arrivals_enabled(&mut self, enabled: bool) {
        self.enabled = enabled;
    }

    pub fn light_state(&self, t: SimTime, road: Road) -> LightState {
        self.light.state(t, road)
    }

    /// Mean time a vehicle spends in coverage: free traversal plus the mean
    /// signal delay of a uniformly timed arrival plus one start-up delay.
    pub fn expected_dwell(&self) -> f64 {
        let travel = 2.0 * self.junction.coverage_radius / self.params.speed;
        let red = self.light.red.as_secs_f64();
        let cycle = self.light.cycle().as_secs_f64();
        travel + red * red / (2.0 * cycle) + self.params.startup_delay.as_secs_f64()
    }

    /// Mean inter-arrival time per approach for `level` (Little's law).
    pub fn mean_interarrival(&self, level: CongestionLevel) -> f64 {
        let per_road = f64::from(target_population(level)) / 2.0;
        self.expected_dwell() / per_road
    }

    fn draw_interarrival(&self, level: CongestionLevel, rng: &mut RngStream) -> SimTime {
        let mean = self.mean_interarrival(level);
        let floor = self.params.min_interarrival.as_secs_f64().min(mean);
        SimTime::from_secs_f64(floor + rng.exponential(mean - floor).max(0.0))
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &Vehicle> + Clone {
        self.lanes[0].iter().chain(self.lanes[1].iter())
    }

    pub fn lane(&self, road: Road) -> &VecDeque<Vehicle> {
        &self.lanes[road.index()]
    }

    pub fn vehicle(&self, id: u32) -> Option<&Vehicle> {
        self.vehicles().find(|v| v.id == id)
    }

    pub fn count(&self) -> usize {
        self.lanes[0].len() + self.lanes[1].len()
    }

    pub fn moving_count(&self) -> usize {
        self.vehicles().filter(|v| v.state == VehicleState::Moving).count()
    }

    /// Stationary vehicles on `road`, closest to the stop line first.
    pub fn queued_vehicles(&self, road: Road) -> Vec<&Vehicle> {
        self.lanes[road.index()]
            .iter()
            .filter(|v| v.state == VehicleState::Queued)
            .collect()
    }

    /// Places a vehicle directly (tests and synthetic traces).
    pub fn insert_vehicle(&mut self, road: Road, position: f64, state: VehicleState, now: SimTime, passenger: bool) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        let v = Vehicle {
            id,
            road,
            position,
            speed: if state == VehicleState::Moving { self.params.speed } else { 0.0 },
            state,
            entered_at: now,
            has_passenger_ht: passenger,
        };
        let lane = &mut self.lanes[road.index()];
        let idx = lane.iter().position(|o| o.position < position).unwrap_or(lane.len());
        lane.insert(idx, v);
        id
    }

    /// Injects vehicles at the coverage edge according to the arrival process of `level`.
    pub fn spawn_step(&mut self, level: CongestionLevel, now: SimTime, rng: &mut RngStream) -> Vec<u32> {
        if !self.enabled {
            return Vec::new();
        }
        if self.arrival_level != Some(level) {
            // Redraw pending arrivals at the new rate.
            self.arrival_level = Some(level);
            for road in Road::ALL {
                let mean = self.mean_interarrival(level);
                let first = SimTime::from_secs_f64(rng.uniform(0.0, mean));
                self.next_arrival[road.index()] = Some(now + first);
            }
        }
        let cap = 2 * target_population(level) as usize;
        let edge = -self.junction.coverage_radius;
        let mut spawned = Vec::new();
        for road in Road::ALL {
            while let Some(at) = self.next_arrival[road.index()] {
                if at > now {
                    break;
                }
                let lane = &self.lanes[road.index()];
                let blocked = lane.back().is_some_and(|v| v.position < edge + self.params.headway);
                if blocked {
                    // Entry blocked by a spilled-back queue; retry next step.
                    break;
                }
                if self.count() < cap {
                    let passenger = rng.bernoulli(self.params.passenger_probability);
                    let id = self.next_id;
                    self.next_id += 1;
                    self.lanes[road.index()].push_back(Vehicle {
                        id,
                        road,
                        position: edge,
                        speed: self.params.speed,
                        state: VehicleState::Moving,
                        entered_at: now,
                        has_passenger_ht: passenger,
                    });
                    spawned.push(id);
                }
                let gap = self.draw_interarrival(level, rng);
                self.next_arrival[road.index()] = Some(at + gap);
            }
        }
        spawned
    }

    /// Moves every vehicle by one step ending at `now + dt`, applying the
    /// signal, queue discharge and despawn rules.
    pub fn advance(&mut self, now: SimTime, dt: SimTime) -> StepReport {
        let mut report = StepReport::default();
        let t_end = now + dt;
        let dx = self.params.speed * dt.as_secs_f64();
        let stop_line = self.junction.stop_line();
        let radius = self.junction.coverage_radius;
        for road in Road::ALL {
            let light = self.light.state(t_end, road);
            let green_since = self.light.green_since(t_end, road);
            let headway = self.params.headway;
            let startup = self.params.startup_delay;
            let speed = self.params.speed;
            let mut last_release = self.last_release[road.index()];
            let lane = &mut self.lanes[road.index()];
            // (position, stationary) of the vehicle ahead, after its own update.
            let mut leader: Option<(f64, bool)> = None;
            for v in lane.iter_mut() {
                match v.state {
                    VehicleState::Queued => {
                        let leader_clear = leader.is_none_or(|(_, stationary)| !stationary);
                        if let (Some(since), true) = (green_since, leader_clear) {
                            let ready = since.max(last_release) + startup;
                            if t_end >= ready {
                                v.state = VehicleState::Moving;
                                v.speed = speed;
                                last_release = t_end;
                                report.released.push(v.id);
                            }
                        }
                    }
                    VehicleState::Moving => {
                        let mut target = v.position + dx;
                        let mut stop = false;
                        if let Some((lead_pos, stationary)) = leader {
                            let limit = lead_pos - headway;
                            if target >= limit {
                                target = limit;
                                stop = stationary;
                            }
                        }
                        if light == LightState::Red && v.position <= stop_line && target >= stop_line {
                            target = stop_line;
                            stop = true;
                        }
                        v.position = target.max(v.position);
                        if stop {
                            v.state = VehicleState::Queued;
                            v.speed = 0.0;
                        }
                    }
                }
                leader = Some((v.position, v.state == VehicleState::Queued));
            }
            self.last_release[road.index()] = last_release;
            while lane.front().is_some_and(|v| v.position > radius) {
                let v = lane.pop_front().expect("front");
                report.despawned.push(v.id);
            }
        }
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mobility() -> Mobility {
        Mobility::new(Junction::default(), TrafficLight::default(), MobilityParams::default())
    }

    #[test]
    fn light_timing() {
        let l = TrafficLight::default();
        assert_eq!(l.state(SimTime::ZERO, Road::A), LightState::Green);
        assert_eq!(l.state(SimTime::ZERO, Road::B), LightState::Red);
        assert_eq!(l.state(SimTime::from_secs(60), Road::A), LightState::Red);
        assert_eq!(l.state(SimTime::from_secs(60), Road::B), LightState::Green);
        assert_eq!(l.state(SimTime::from_secs(90), Road::A), LightState::Green);
        assert_eq!(l.green_since(SimTime::from_secs(75), Road::B), Some(SimTime::from_secs(60)));
        assert_eq!(l.green_since(SimTime::from_secs(75), Road::A), None);
    }

    #[test]
    fn exactly_one_road_green() {
        let l = TrafficLight::default();
        for ms in (0..180_000).step_by(250) {
            let t = SimTime::from_millis(ms);
            let greens = Road::ALL.iter().filter(|r| l.state(t, **r) == LightState::Green).count();
            assert_eq!(greens, 1);
        }
    }

    #[test]
    fn unknown_road_is_a_config_error() {
        assert!("C".parse::<Road>().is_err());
    }

    #[test]
    fn population_targets() {
        assert_eq!(target_population(CongestionLevel::Low), 20);
        assert_eq!(target_population(CongestionLevel::Moderate), 60);
        assert_eq!(target_population(CongestionLevel::High), 100);
        assert_eq!(target_population(CongestionLevel::VeryHigh), 120);
    }

    #[test]
    fn schedule_parsing_and_lookup() {
        let s = CongestionSchedule::parse("low:0,moderate:75,high:150,veryhigh:225").unwrap();
        assert_eq!(s.level_at(SimTime::from_secs(10)), CongestionLevel::Low);
        assert_eq!(s.level_at(SimTime::from_secs(75)), CongestionLevel::Moderate);
        assert_eq!(s.level_at(SimTime::from_secs(299)), CongestionLevel::VeryHigh);
        assert_eq!(s.to_config_string(), "low:0,moderate:75,high:150,veryhigh:225");
        assert!(CongestionSchedule::parse("low:5").is_err());
        assert!(CongestionSchedule::parse("low:0,high:0").is_err());
        assert!(CongestionSchedule::parse("low:0,jam:10").is_err());
    }

    #[test]
    fn free_vehicle_exits_after_200s() {
        let mut m = mobility();
        // Keep road A green throughout.
        m.light.green = SimTime::from_secs(10_000);
        m.insert_vehicle(Road::A, -500.0, VehicleState::Moving, SimTime::ZERO, false);
        let step = m.params.step;
        let mut t = SimTime::ZERO;
        let mut exit = None;
        while t < SimTime::from_secs(250) {
            let r = m.advance(t, step);
            t = t + step;
            if !r.despawned.is_empty() {
                exit = Some(t);
                break;
            }
        }
        // Leaves once strictly beyond +500 m: the step after reaching it.
        let exit = exit.expect("vehicle should leave").as_secs_f64();
        assert!((exit - 200.0).abs() <= 0.1 + 1e-9, "exit at {exit}");
    }

    #[test]
    fn red_light_builds_a_queue_with_headway() {
        let mut m = mobility();
        let step = m.params.step;
        // Road B is red on [0, 60).
        for p in [-30.0, -60.0, -90.0] {
            m.insert_vehicle(Road::B, p, VehicleState::Moving, SimTime::ZERO, false);
        }
        let mut t = SimTime::ZERO;
        while t < SimTime::from_secs(40) {
            m.advance(t, step);
            t = t + step;
        }
        let q: Vec<f64> = m.queued_vehicles(Road::B).iter().map(|v| v.position).collect();
        assert_eq!(q.len(), 3);
        for (got, want) in q.iter().zip([-5.0, -12.0, -19.0]) {
            assert!((got - want).abs() < 1e-9, "{q:?}");
        }
        assert!(m.queued_vehicles(Road::B).iter().all(|v| v.speed == 0.0));
        assert!(m.queued_vehicles(Road::A).is_empty());
    }

    #[test]
    fn green_discharges_front_first_with_startup_delay() {
        let mut m = mobility();
        let step = m.params.step;
        for p in [-5.0, -12.0, -19.0] {
            m.insert_vehicle(Road::B, p, VehicleState::Queued, SimTime::ZERO, false);
        }
        let mut t = SimTime::from_secs(59);
        let mut releases = Vec::new();
        while t < SimTime::from_secs(70) {
            let r = m.advance(t, step);
            t = t + step;
            for id in r.released {
                releases.push((id, t));
            }
        }
        let ids: Vec<u32> = releases.iter().map(|r| r.0).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        let times: Vec<f64> = releases.iter().map(|r| r.1.as_secs_f64()).collect();
        for (got, want) in times.iter().zip([61.0, 62.0, 63.0]) {
            assert!((got - want).abs() < 1e-6, "{times:?}");
        }
        assert!(m.queued_vehicles(Road::B).is_empty());
    }

    #[test]
    fn low_level_steady_state_population() {
        let mut m = mobility();
        let mut rng = RngStream::new(3, "mobility");
        let step = m.params.step;
        let mut t = SimTime::ZERO;
        let (mut sum, mut n) = (0.0, 0u64);
        while t < SimTime::from_secs(20_000) {
            m.spawn_step(CongestionLevel::Low, t, &mut rng);
            m.advance(t, step);
            t = t + step;
            assert!(m.count() <= 40);
            if t > SimTime::from_secs(400) {
                sum += m.count() as f64;
                n += 1;
            }
        }
        let mean = sum / n as f64;
        assert!((18.0..=22.0).contains(&mean), "mean population {mean}");
    }

    #[test]
    fn scenario_one_has_no_passengers_and_scenario_two_a_quarter() {
        let mut rng = RngStream::new(11, "mobility");
        let mut m = mobility();
        m.set_arrivals_enabled(true);
        let mut t = SimTime::ZERO;
        while t < SimTime::from_secs(600) {
            m.spawn_step(CongestionLevel::VeryHigh, t, &mut rng);
            m.advance(t, m.params.step);
            t = t + m.params.step;
        }
        assert!(m.vehicles().all(|v| !v.has_passenger_ht));

        let mut m = mobility();
        m.params.passenger_probability = 0.25;
        let (mut spawned, mut with_passenger) = (0u32, 0u32);
        let mut t = SimTime::ZERO;
        while spawned < 10_000 {
            let ids = m.spawn_step(CongestionLevel::VeryHigh, t, &mut rng);
            for id in ids {
                spawned += 1;
                if m.vehicle(id).unwrap().has_passenger_ht {
                    with_passenger += 1;
                }
            }
            m.advance(t, m.params.step);
            t = t + m.params.step;
        }
        let frac = f64::from(with_passenger) / f64::from(spawned);
        assert!((frac - 0.25).abs() <= 0.02, "passenger fraction {frac}");
    }

    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn queue_spacing_and_monotone_positions(seed in 0u64..1000, level in 0usize..4) {
            let level = CongestionLevel::ALL[level];
            let mut m = mobility();
            let mut rng = RngStream::new(seed, "mobility");
            let step = m.params.step;
            let mut t = SimTime::ZERO;
            let mut last_pos = std::collections::HashMap::new();
            while t < SimTime::from_secs(400) {
                m.spawn_step(level, t, &mut rng);
                m.advance(t, step);
                t = t + step;
                prop_assert!(m.count() <= 2 * target_population(level) as usize);
                for road in Road::ALL {
                    let lane = m.lane(road);
                    for w in lane.iter().collect::<Vec<_>>().windows(2) {
                        prop_assert!(w[0].position - w[1].position >= m.params.headway - 1e-9);
                    }
                }
                for v in m.vehicles() {
                    if let Some(p) = last_pos.insert(v.id, v.position) {
                        prop_assert!(v.position >= p);
                    }
                    if v.state == VehicleState::Queued {
                        prop_assert_eq!(v.speed, 0.0);
                    }
                }
            }
        }
    }
}
