//! Presence detectors, gap-based traffic estimation and congestion classification.
//!
//! Each approach carries two detectors: one just upstream of the stop line and
//! one further upstream. Vehicle counts come from occupancy runs on the upstream
//! detector (one run per vehicle); travel times come from matching runs between
//! the two detectors in first-in-first-out order. The in-coverage population is
//! then flow times mean dwell (Little's law).

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::engine::SimTime;
use crate::error::{Result, SimError};
use crate::mobility::{Junction, Road, Vehicle};

pub const SAMPLE_PERIOD: SimTime = SimTime::from_millis(250);
pub const VEHICLE_LENGTH: f64 = 4.5;
/// Upper bound on plausible travel speed between detectors, m/s.
const MAX_PLAUSIBLE_SPEED: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CongestionLevel {
    Low,
    Moderate,
    High,
    VeryHigh,
}

impl CongestionLevel {
    pub const ALL: [CongestionLevel; 4] = [
        CongestionLevel::Low,
        CongestionLevel::Moderate,
        CongestionLevel::High,
        CongestionLevel::VeryHigh,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CongestionLevel::Low => "low",
            CongestionLevel::Moderate => "moderate",
            CongestionLevel::High => "high",
            CongestionLevel::VeryHigh => "veryhigh",
        }
    }
}

impl fmt::Display for CongestionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CongestionLevel {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(CongestionLevel::Low),
            "moderate" => Ok(CongestionLevel::Moderate),
            "high" => Ok(CongestionLevel::High),
            "veryhigh" | "very_high" | "very-high" => Ok(CongestionLevel::VeryHigh),
            other => Err(SimError::config("level", format!("unknown congestion level `{other}`"))),
        }
    }
}

/// Upper bounds (inclusive) of the Low, Moderate and High bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Thresholds {
    pub low_max: u32,
    pub moderate_max: u32,
    pub high_max: u32,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            low_max: 20,
            moderate_max: 60,
            high_max: 100,
        }
    }
}

impl Thresholds {
    pub fn classify(&self, n: u32) -> CongestionLevel {
        if n <= self.low_max {
            CongestionLevel::Low
        } else if n <= self.moderate_max {
            CongestionLevel::Moderate
        } else if n <= self.high_max {
            CongestionLevel::High
        } else {
            CongestionLevel::VeryHigh
        }
    }
}

pub fn classify(n: u32) -> CongestionLevel {
    Thresholds::default().classify(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PresenceSample {
    pub t: SimTime,
    pub sensor_id: u32,
    pub occupied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensor {
    pub id: u32,
    pub road: Road,
    /// Distance upstream of the stop line, metres.
    pub offset: f64,
    pub zone_length: f64,
}

impl Sensor {
    /// Detection zone `[lo, hi]` along the road.
    pub fn zone(&self, junction: &Junction) -> (f64, f64) {
        let centre = junction.stop_line() - self.offset;
        (centre - self.zone_length / 2.0, centre + self.zone_length / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorLayout {
    pub sensors: Vec<Sensor>,
}

impl Default for SensorLayout {
    fn default() -> Self {
        Self::two_per_approach(10.0, 100.0, 2.0)
    }
}

impl SensorLayout {
    /// Sensor ids: road A gets 0 (near) and 1 (far), road B gets 2 and 3.
    pub fn two_per_approach(near: f64, far: f64, zone_length: f64) -> Self {
        let mut sensors = Vec::new();
        for road in Road::ALL {
            let base = 2 * road.index() as u32;
            sensors.push(Sensor { id: base, road, offset: near, zone_length });
            sensors.push(Sensor { id: base + 1, road, offset: far, zone_length });
        }
        SensorLayout { sensors }
    }

    pub fn validate(&self, junction: &Junction) -> Result<()> {
        for s in &self.sensors {
            // Negated so NaN is rejected too.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(s.zone_length > 0.0) {
                return Err(SimError::config("sensing.zone_m", "zone length must be positive"));
            }
            let (lo, _) = s.zone(junction);
            if lo < -junction.coverage_radius {
                return Err(SimError::config("sensing.far_m", "sensor lies outside coverage"));
            }
        }
        for road in Road::ALL {
            if self.sensors.iter().filter(|s| s.road == road).count() < 2 {
                return Err(SimError::config("sensing", format!("road {road} needs two sensors")));
            }
        }
        Ok(())
    }

    /// Sensor nearest the stop line on `road`.
    pub fn stop_line_sensor(&self, road: Road) -> &Sensor {
        self.sensors
            .iter()
            .filter(|s| s.road == road)
            .min_by(|a, b| a.offset.total_cmp(&b.offset))
            .expect("validated layout")
    }

    /// Sensor furthest upstream on `road`.
    pub fn upstream_sensor(&self, road: Road) -> &Sensor {
        self.sensors
            .iter()
            .filter(|s| s.road == road)
            .max_by(|a, b| a.offset.total_cmp(&b.offset))
            .expect("validated layout")
    }
}

/// One sample per sensor at time `t`: occupied iff some vehicle body overlaps the zone.
pub fn sample_sensors<'a, I>(vehicles: I, layout: &SensorLayout, junction: &Junction, t: SimTime) -> Vec<PresenceSample>
where
    I: IntoIterator<Item = &'a Vehicle> + Clone,
{
    layout
        .sensors
        .iter()
        .map(|s| {
            let (lo, hi) = s.zone(junction);
            let occupied = vehicles.clone().into_iter().any(|v| {
                v.road == s.road && v.position - VEHICLE_LENGTH / 2.0 < hi && lo < v.position + VEHICLE_LENGTH / 2.0
            });
            PresenceSample { t, sensor_id: s.id, occupied }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CongestionEstimate {
    pub n: u32,
    pub mean_speed: f64,
    pub window: (SimTime, SimTime),
    pub level: CongestionLevel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorParams {
    pub coverage_radius: f64,
    pub thresholds: Thresholds,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        EstimatorParams {
            coverage_radius: Junction::default().coverage_radius,
            thresholds: Thresholds::default(),
        }
    }
}

/// Maximal occupied run: `[start, end)` with `end` one sample period after the
/// last occupied sample.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Run {
    start: SimTime,
    end: SimTime,
}

impl Run {
    fn duration(&self) -> f64 {
        (self.end - self.start).as_secs_f64()
    }
}

fn series_by_sensor(trace: &[PresenceSample]) -> BTreeMap<u32, Vec<PresenceSample>> {
    let mut by: BTreeMap<u32, Vec<PresenceSample>> = BTreeMap::new();
    for s in trace {
        by.entry(s.sensor_id).or_default().push(*s);
    }
    for v in by.values_mut() {
        v.sort_by_key(|s| s.t);
    }
    by
}

fn check_cadence(sensor: u32, series: &[PresenceSample], window: (SimTime, SimTime)) -> Result<()> {
    for w in series.windows(2) {
        if w[1].t - w[0].t != SAMPLE_PERIOD {
            return Err(SimError::Trace(format!(
                "sensor {sensor}: samples at {} and {} are not {} apart",
                w[0].t, w[1].t, SAMPLE_PERIOD
            )));
        }
    }
    let first = series.first().map(|s| s.t);
    let last = series.last().map(|s| s.t);
    match (first, last) {
        (Some(f), Some(l)) if f <= window.0 && l + SAMPLE_PERIOD >= window.1 => Ok(()),
        _ => Err(SimError::Trace(format!(
            "sensor {sensor}: trace does not cover window [{}, {})",
            window.0, window.1
        ))),
    }
}

fn runs(series: &[PresenceSample]) -> Vec<Run> {
    let mut out = Vec::new();
    let mut open: Option<SimTime> = None;
    for s in series {
        match (s.occupied, open) {
            (true, None) => open = Some(s.t),
            (false, Some(start)) => {
                out.push(Run { start, end: s.t });
                open = None;
            }
            _ => {}
        }
    }
    if let (Some(start), Some(last)) = (open, series.last()) {
        out.push(Run { start, end: last.t + SAMPLE_PERIOD });
    }
    out
}

/// Pairs each stop-line run with the oldest unmatched upstream run that could
/// physically precede it. Returns `(upstream_start, stopline_start)` pairs.
fn match_fifo(upstream: &[Run], stopline: &[Run], separation: f64) -> Vec<(SimTime, SimTime)> {
    let min_travel = SimTime::from_secs_f64(separation / MAX_PLAUSIBLE_SPEED);
    let mut pending: VecDeque<SimTime> = VecDeque::new();
    let mut pairs = Vec::new();
    let mut ui = 0;
    for s in stopline {
        while ui < upstream.len() && upstream[ui].start + min_travel <= s.start {
            pending.push_back(upstream[ui].start);
            ui += 1;
        }
        // No candidate: the vehicle was already between the detectors when the trace began.
        if let Some(u) = pending.pop_front() {
            pairs.push((u, s.start));
        }
    }
    pairs
}

struct ApproachEstimate {
    population: f64,
    held: bool,
    upstream_durations: Vec<f64>,
}

fn estimate_approach(
    by_sensor: &BTreeMap<u32, Vec<PresenceSample>>,
    layout: &SensorLayout,
    road: Road,
    window: (SimTime, SimTime),
    params: &EstimatorParams,
) -> Result<ApproachEstimate> {
    let up_sensor = layout.upstream_sensor(road);
    let sl_sensor = layout.stop_line_sensor(road);
    let empty = Vec::new();
    let up_series = by_sensor.get(&up_sensor.id).unwrap_or(&empty);
    let sl_series = by_sensor.get(&sl_sensor.id).unwrap_or(&empty);
    check_cadence(up_sensor.id, up_series, window)?;
    check_cadence(sl_sensor.id, sl_series, window)?;

    let up_runs = runs(up_series);
    let sl_runs = runs(sl_series);
    let in_window = |t: SimTime| t >= window.0 && t < window.1;

    let starts: Vec<SimTime> = up_runs.iter().map(|r| r.start).filter(|t| in_window(*t)).collect();
    let window_s = (window.1 - window.0).as_secs_f64();
    let flow = match starts.len() {
        0 => 0.0,
        1 => 1.0 / window_s,
        k => {
            let span = (starts[k - 1] - starts[0]).as_secs_f64();
            if span > 0.0 {
                (k - 1) as f64 / span
            } else {
                k as f64 / window_s
            }
        }
    };

    let upstream_durations: Vec<f64> = up_runs
        .iter()
        .filter(|r| in_window(r.start))
        .map(Run::duration)
        .collect();

    let separation = up_sensor.offset - sl_sensor.offset;
    let travel: Vec<f64> = match_fifo(&up_runs, &sl_runs, separation)
        .into_iter()
        .filter(|(_, s)| in_window(*s))
        .map(|(u, s)| (s - u).as_secs_f64())
        .collect();

    let coverage_len = 2.0 * params.coverage_radius;
    let dwell = if !travel.is_empty() {
        let fastest = travel.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = travel.iter().sum::<f64>() / travel.len() as f64;
        let free_speed = separation / fastest;
        coverage_len / free_speed + (mean - fastest)
    } else {
        let speed = occupancy_speed(&upstream_durations, up_sensor.zone_length);
        if speed > 0.0 {
            coverage_len / speed
        } else {
            0.0
        }
    };

    let held = sl_series
        .iter()
        .rev()
        .find(|s| s.t < window.1)
        .is_some_and(|s| s.occupied);

    Ok(ApproachEstimate {
        population: flow * dwell,
        held,
        upstream_durations,
    })
}

fn occupancy_speed(durations: &[f64], zone_length: f64) -> f64 {
    if durations.is_empty() {
        return 0.0;
    }
    let mean = durations.iter().sum::<f64>() / durations.len() as f64;
    (VEHICLE_LENGTH + zone_length) / mean
}

/// Estimates the in-coverage vehicle population over `window` from a presence
/// trace. The trace may extend before the window; history improves travel-time
/// matching and should start from an empty road when available.
pub fn estimate(
    trace: &[PresenceSample],
    layout: &SensorLayout,
    window: (SimTime, SimTime),
    params: &EstimatorParams,
) -> Result<CongestionEstimate> {
    if window.1 <= window.0 {
        return Err(SimError::Trace("empty estimation window".into()));
    }
    let by_sensor = series_by_sensor(trace);
    let mut total = 0.0;
    let mut durations = Vec::new();
    let mut zone = 0.0;
    for road in Road::ALL {
        let a = estimate_approach(&by_sensor, layout, road, window, params)?;
        let held = if a.held { 1.0 } else { 0.0 };
        total += a.population.max(held);
        durations.extend(a.upstream_durations);
        zone = layout.upstream_sensor(road).zone_length;
    }
    let n = total.round().max(0.0) as u32;
    Ok(CongestionEstimate {
        n,
        mean_speed: occupancy_speed(&durations, zone),
        window,
        level: params.thresholds.classify(n),
    })
}

/// Consecutive `window_len` windows covering the trace's common span.
pub fn estimate_all(
    trace: &[PresenceSample],
    layout: &SensorLayout,
    window_len: SimTime,
    params: &EstimatorParams,
) -> Result<Vec<CongestionEstimate>> {
    let by_sensor = series_by_sensor(trace);
    let start = by_sensor.values().filter_map(|s| s.first()).map(|s| s.t).max();
    let end = by_sensor.values().filter_map(|s| s.last()).map(|s| s.t + SAMPLE_PERIOD).min();
    let (Some(start), Some(end)) = (start, end) else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    let mut w = start;
    while w + window_len <= end {
        out.push(estimate(trace, layout, (w, w + window_len), params)?);
        w = w + window_len;
    }
    Ok(out)
}

/// Writes `t_us,sensor_id,occupied` lines.
pub fn write_trace<W: Write>(mut out: W, samples: &[PresenceSample]) -> std::io::Result<()> {
    for s in samples {
        writeln!(out, "{},{},{}", s.t.as_micros(), s.sensor_id, u8::from(s.occupied))?;
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<PresenceSample>> {
    let mut samples = Vec::new();
    // `lines()` would silently accept CRLF.
    for (i, line) in input.split(b'\n').enumerate() {
        let line = line.map_err(|e| SimError::Trace(format!("line {}: {e}", i + 1)))?;
        let line = String::from_utf8(line).map_err(|_| SimError::Trace(format!("line {}: not UTF-8", i + 1)))?;
        if line.ends_with('\r') {
            return Err(SimError::Trace(format!("line {}: CRLF line ending", i + 1)));
        }
        if line.is_empty() {
            continue;
        }
        let bad = || SimError::Trace(format!("line {}: expected t_us,sensor_id,occupied, got `{line}`", i + 1));
        let mut fields = line.split(',');
        let (Some(t), Some(id), Some(occ), None) = (fields.next(), fields.next(), fields.next(), fields.next()) else {
            return Err(bad());
        };
        let t: u64 = t.parse().map_err(|_| bad())?;
        let sensor_id: u32 = id.parse().map_err(|_| bad())?;
        let occupied = match occ {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        };
        samples.push(PresenceSample { t: SimTime(t), sensor_id, occupied });
    }
    Ok(samples)
}

/// Free-flowing, evenly spaced traffic: `population` vehicles in coverage at
/// steady state, split across both roads, entering an empty road at t=0.
/// `phase` shifts the first entry on each road.
pub fn free_flow_trace(
    population: u32,
    speed: f64,
    phase: [f64; 2],
    duration: SimTime,
    layout: &SensorLayout,
    junction: &Junction,
) -> Vec<PresenceSample> {
    let per_road = f64::from(population) / 2.0;
    let traverse = 2.0 * junction.coverage_radius / speed;
    let headway = traverse / per_road;
    let mut out = Vec::new();
    let mut t = SimTime::ZERO;
    while t < duration {
        let now = t.as_secs_f64();
        let mut vehicles = Vec::new();
        for road in Road::ALL {
            let first = phase[road.index()];
            if now < first {
                continue;
            }
            let newest = ((now - first) / headway).floor() as i64;
            let mut k = newest;
            while k >= 0 {
                let pos = -junction.coverage_radius + speed * (now - first - k as f64 * headway);
                if pos > junction.coverage_radius {
                    break;
                }
                vehicles.push(Vehicle {
                    id: 0,
                    road,
                    position: pos,
                    speed,
                    state: crate::mobility::VehicleState::Moving,
                    entered_at: SimTime::ZERO,
                    has_passenger_ht: false,
                });
                k -= 1;
            }
        }
        out.extend(sample_sensors(&vehicles, layout, junction, t));
        t = t + SAMPLE_PERIOD;
    }
    out
}
