//! Flat `key=value` scenario configuration.
//!
//! Every key has a default in [`KEYS`]. Files hold one `key=value` per line;
//! `#` starts a comment. Later assignments override earlier ones, so command
//! line flags applied after the file win.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::adaptation::{Policy, PolicyRule};
use crate::engine::SimTime;
use crate::error::{Result, SimError};
use crate::mobility::{CongestionSchedule, Junction, MobilityParams, TrafficLight};
use crate::radio::{CellConfig, LinkModel, RachConfig, SideChannel};
use crate::sensing::{SensorLayout, Thresholds};

/// `(key, default, description)`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "1", "master seed"),
    ("scenario", "1", "1: static HT users only, 2: plus HT passengers in vehicles"),
    ("policy", "adaptive", "adaptive | standard | aggregator | extra"),
    ("schedule", "low:0,moderate:75,high:150,veryhigh:225", "congestion segments as level:start_s, relative to measurement start"),
    ("horizon_s", "300", "measured duration"),
    ("warmup_s", "270", "road-traffic warm-up before measurement; multiple of the light cycle"),
    ("window_s", "90", "estimation and adaptation window"),
    ("mt.enabled", "true", "vehicles carry MT devices"),
    ("mt.packet_bytes", "800", "MT packet size"),
    ("mt.ul_period_ms", "100", "MT uplink period"),
    ("mt.dl_period_ms", "1000", "MT downlink period"),
    ("ht.static_users", "30", "HT users placed uniformly in coverage"),
    ("ht.dl_kbps", "800", "HT downlink offered rate per user"),
    ("ht.ul_kbps", "400", "HT uplink offered rate per user"),
    ("ht.packet_bytes", "1000", "HT packet size"),
    ("ht.passenger_probability", "0.25", "share of vehicles carrying an HT passenger (scenario 2)"),
    ("cell.rb_count", "25", "RBs under standard policy"),
    ("cell.extra_rb_count", "50", "RBs under the extra-resources policy"),
    ("cell.rb_bandwidth_hz", "180000", "RB bandwidth"),
    ("cell.dl_carrier_hz", "945000000", "downlink carrier"),
    ("cell.ul_carrier_hz", "900000000", "uplink carrier"),
    ("cell.enb_tx_power_dbm", "43", "eNB transmit power"),
    ("cell.enb_noise_figure_db", "3", "eNB noise figure"),
    ("cell.ue_tx_power_dbm", "23", "UE transmit power"),
    ("cell.ue_noise_figure_db", "9", "UE noise figure"),
    ("link.pathloss_exponent", "3", "log-distance exponent"),
    ("link.eta_max", "5.55", "spectral-efficiency ceiling, b/s/Hz"),
    ("pf.window_ms", "1000", "PF averaging window"),
    ("rach.preambles", "54", "contention preambles"),
    ("rach.period_ms", "5", "PRACH opportunity period"),
    ("rach.max_attempts", "10", "attempts before failure"),
    ("rach.backoff_ms", "20", "uniform backoff window"),
    ("rach.grant_delay_ms", "15", "delay from winning to connected"),
    ("rach.idle_release_s", "10", "inactivity before release"),
    ("light.green_s", "60", "green duration per road"),
    ("light.red_s", "30", "red duration per road"),
    ("junction.radius_m", "500", "coverage radius"),
    ("junction.stop_line_m", "5", "stop line distance before the centre"),
    ("vehicle.speed_mps", "5", "free speed"),
    ("vehicle.headway_m", "7", "minimum spacing in queue"),
    ("vehicle.startup_s", "1", "queue discharge delay per vehicle"),
    ("vehicle.min_interarrival_s", "2", "minimum gap between entries"),
    ("mobility.step_ms", "100", "mobility update period"),
    ("sensing.near_m", "10", "near detector distance from stop line"),
    ("sensing.far_m", "100", "far detector distance from stop line"),
    ("sensing.zone_m", "2", "detection zone length"),
    ("thresholds.low", "20", "largest count classified low"),
    ("thresholds.moderate", "60", "largest count classified moderate"),
    ("thresholds.high", "100", "largest count classified high"),
    ("rule.low", "standard", "adaptive policy at low"),
    ("rule.moderate", "aggregator", "adaptive policy at moderate"),
    ("rule.high", "extra", "adaptive policy at high"),
    ("rule.veryhigh", "extra", "adaptive policy at very high"),
    ("aggregator.window_ms", "100", "bundling window"),
    ("aggregator.header_bytes", "20", "per-member bundle header"),
    ("aggregator.association_ms", "200", "association delay"),
    ("side.capacity_mbps", "24", "short-range channel capacity"),
    ("side.overhead_us", "100", "per-packet channel overhead"),
    ("side.range_m", "150", "short-range radio range"),
    ("trace_in", "", "replay this presence trace instead of live sampling"),
    ("trace_out", "", "write the live presence trace here"),
    ("out_dir", "", "output directory; falls back to the output-root environment variable"),
];

/// Environment variable naming the output root when `out_dir` is unset.
pub const OUT_ENV: &str = "JUNCTIONSIM_OUT";

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

impl Default for ConfigMap {
    fn default() -> Self {
        ConfigMap {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl ConfigMap {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match self.values.get_mut(key) {
            Some(v) => {
                *v = value.trim().to_string();
                Ok(())
            }
            None => Err(SimError::config(key, "unknown key")),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    /// Applies `key=value` lines.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| SimError::config(format!("line {}", i + 1), format!("expected key=value, got `{line}`")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        // An unreadable config file is a config error, not a runtime fault.
        let text = std::fs::read_to_string(path).map_err(|e| SimError::config(path.display().to_string(), e.to_string()))?;
        self.apply_text(&text)
    }

    /// Every key in sorted order, one `key=value` per line.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

/// Loads `path` (if any) then applies `overrides` in order.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<ScenarioConfig> {
    let mut map = ConfigMap::default();
    if let Some(p) = path {
        map.apply_file(p)?;
    }
    for (k, v) in overrides {
        map.set(k, v)?;
    }
    ScenarioConfig::from_map(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyMode {
    Adaptive,
    Fixed(Policy),
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub map: ConfigMap,
    pub seed: u64,
    pub scenario: u8,
    pub policy: PolicyMode,
    pub rule: [Policy; 4],
    pub schedule: CongestionSchedule,
    pub horizon: SimTime,
    pub warmup: SimTime,
    pub window: SimTime,
    pub mt_enabled: bool,
    pub mt_packet_bytes: u32,
    pub mt_ul_period: SimTime,
    pub mt_dl_period: SimTime,
    pub ht_static_users: u32,
    pub ht_dl_bps: f64,
    pub ht_ul_bps: f64,
    pub ht_packet_bytes: u32,
    pub passenger_probability: f64,
    pub cell: CellConfig,
    pub extra_rb_count: u32,
    pub link: LinkModel,
    pub pf_window: SimTime,
    pub rach: RachConfig,
    pub light: TrafficLight,
    pub junction: Junction,
    pub mobility: MobilityParams,
    pub sensors: SensorLayout,
    pub thresholds: Thresholds,
    pub aggregator_window: SimTime,
    pub aggregator_header: u32,
    pub association_delay: SimTime,
    pub side: SideChannel,
    pub trace_in: Option<PathBuf>,
    pub trace_out: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

struct Reader<'a>(&'a ConfigMap);

impl Reader<'_> {
    fn f64(&self, key: &str) -> Result<f64> {
        let v = self.0.get(key);
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| SimError::config(key, format!("expected a number, got `{v}`")))
    }

    fn positive(&self, key: &str) -> Result<f64> {
        let x = self.f64(key)?;
        if x > 0.0 {
            Ok(x)
        } else {
            Err(SimError::config(key, format!("must be positive, got {x}")))
        }
    }

    fn non_negative(&self, key: &str) -> Result<f64> {
        let x = self.f64(key)?;
        if x >= 0.0 {
            Ok(x)
        } else {
            Err(SimError::config(key, format!("must be non-negative, got {x}")))
        }
    }

    fn u64(&self, key: &str) -> Result<u64> {
        let v = self.0.get(key);
        v.parse().map_err(|_| SimError::config(key, format!("expected a non-negative integer, got `{v}`")))
    }

    fn u32_min(&self, key: &str, min: u32) -> Result<u32> {
        let v = self.0.get(key);
        let x: u32 = v
            .parse()
            .map_err(|_| SimError::config(key, format!("expected a non-negative integer, got `{v}`")))?;
        if x < min {
            return Err(SimError::config(key, format!("must be at least {min}, got {x}")));
        }
        Ok(x)
    }

    fn bool(&self, key: &str) -> Result<bool> {
        match self.0.get(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(SimError::config(key, format!("expected true or false, got `{v}`"))),
        }
    }

    fn probability(&self, key: &str) -> Result<f64> {
        let p = self.f64(key)?;
        if (0.0..=1.0).contains(&p) {
            Ok(p)
        } else {
            Err(SimError::config(key, format!("must lie in [0,1], got {p}")))
        }
    }

    fn secs(&self, key: &str) -> Result<SimTime> {
        Ok(SimTime::from_secs_f64(self.positive(key)?))
    }

    fn millis(&self, key: &str) -> Result<SimTime> {
        Ok(SimTime::from_secs_f64(self.positive(key)? / 1e3))
    }

    fn policy(&self, key: &str) -> Result<Policy> {
        self.0
            .get(key)
            .parse()
            .map_err(|_| SimError::config(key, format!("unknown policy `{}`", self.0.get(key))))
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        Some(self.0.get(key)).filter(|s| !s.is_empty()).map(PathBuf::from)
    }
}

impl ScenarioConfig {
    pub fn from_map(map: ConfigMap) -> Result<Self> {
        let r = Reader(&map);
        let scenario = match r.0.get("scenario") {
            "1" => 1,
            "2" => 2,
            v => return Err(SimError::config("scenario", format!("expected 1 or 2, got `{v}`"))),
        };
        let policy = match r.0.get("policy") {
            "adaptive" => PolicyMode::Adaptive,
            _ => PolicyMode::Fixed(r.policy("policy")?),
        };
        let schedule = CongestionSchedule::parse(r.0.get("schedule"))?;
        let cell = CellConfig {
            rb_count: r.u32_min("cell.rb_count", 1)?,
            rb_bandwidth_hz: r.positive("cell.rb_bandwidth_hz")?,
            dl_carrier_hz: r.positive("cell.dl_carrier_hz")?,
            ul_carrier_hz: r.positive("cell.ul_carrier_hz")?,
            enb_tx_power_dbm: r.f64("cell.enb_tx_power_dbm")?,
            enb_noise_figure_db: r.non_negative("cell.enb_noise_figure_db")?,
            ue_tx_power_dbm: r.f64("cell.ue_tx_power_dbm")?,
            ue_noise_figure_db: r.non_negative("cell.ue_noise_figure_db")?,
        };
        let link = LinkModel {
            pathloss_exponent: r.positive("link.pathloss_exponent")?,
            eta_max: r.positive("link.eta_max")?,
            ..LinkModel::default()
        };
        let rach = RachConfig {
            preamble_count: r.u32_min("rach.preambles", 1)?,
            prach_period: r.millis("rach.period_ms")?,
            max_attempts: r.u32_min("rach.max_attempts", 1)?,
            backoff_window: r.millis("rach.backoff_ms")?,
            connection_grant_delay: r.millis("rach.grant_delay_ms")?,
            idle_release_timeout: r.secs("rach.idle_release_s")?,
        };
        let light = TrafficLight {
            green: r.secs("light.green_s")?,
            red: r.secs("light.red_s")?,
            ..TrafficLight::default()
        };
        let junction = Junction {
            coverage_radius: r.positive("junction.radius_m")?,
            stop_line_offset: r.non_negative("junction.stop_line_m")?,
        };
        let mobility = MobilityParams {
            speed: r.positive("vehicle.speed_mps")?,
            headway: r.positive("vehicle.headway_m")?,
            startup_delay: SimTime::from_secs_f64(r.non_negative("vehicle.startup_s")?),
            step: r.millis("mobility.step_ms")?,
            min_interarrival: SimTime::from_secs_f64(r.non_negative("vehicle.min_interarrival_s")?),
            passenger_probability: if scenario == 2 { r.probability("ht.passenger_probability")? } else { 0.0 },
        };
        r.probability("ht.passenger_probability")?;
        let sensors = SensorLayout::two_per_approach(
            r.non_negative("sensing.near_m")?,
            r.positive("sensing.far_m")?,
            r.positive("sensing.zone_m")?,
        );
        sensors.validate(&junction)?;
        if r.f64("sensing.far_m")? <= r.f64("sensing.near_m")? {
            return Err(SimError::config("sensing.far_m", "must exceed sensing.near_m"));
        }
        let thresholds = Thresholds {
            low_max: r.u32_min("thresholds.low", 0)?,
            moderate_max: r.u32_min("thresholds.moderate", 0)?,
            high_max: r.u32_min("thresholds.high", 0)?,
        };
        if !(thresholds.low_max < thresholds.moderate_max && thresholds.moderate_max < thresholds.high_max) {
            return Err(SimError::config("thresholds", "must be strictly increasing"));
        }
        let mut side = SideChannel::default();
        side.capacity_bps = r.positive("side.capacity_mbps")? * 1e6;
        side.per_packet_overhead = SimTime::from_secs_f64(r.non_negative("side.overhead_us")? / 1e6);
        side.range_m = r.positive("side.range_m")?;

        let warmup = SimTime::from_secs_f64(r.non_negative("warmup_s")?);
        let window = r.secs("window_s")?;
        if !warmup.as_micros().is_multiple_of(light.cycle().as_micros()) {
            return Err(SimError::config("warmup_s", "must be a multiple of the light cycle"));
        }
        if warmup < window {
            return Err(SimError::config("warmup_s", "must cover at least one estimation window"));
        }

        Ok(ScenarioConfig {
            seed: r.u64("seed")?,
            scenario,
            policy,
            rule: [r.policy("rule.low")?, r.policy("rule.moderate")?, r.policy("rule.high")?, r.policy("rule.veryhigh")?],
            schedule,
            horizon: r.secs("horizon_s")?,
            warmup,
            window,
            mt_enabled: r.bool("mt.enabled")?,
            mt_packet_bytes: r.u32_min("mt.packet_bytes", 1)?,
            mt_ul_period: r.millis("mt.ul_period_ms")?,
            mt_dl_period: r.millis("mt.dl_period_ms")?,
            ht_static_users: r.u32_min("ht.static_users", 0)?,
            ht_dl_bps: r.positive("ht.dl_kbps")? * 1e3,
            ht_ul_bps: r.positive("ht.ul_kbps")? * 1e3,
            ht_packet_bytes: r.u32_min("ht.packet_bytes", 1)?,
            passenger_probability: r.probability("ht.passenger_probability")?,
            cell,
            extra_rb_count: r.u32_min("cell.extra_rb_count", 1)?,
            link,
            pf_window: r.millis("pf.window_ms")?,
            rach,
            light,
            junction,
            mobility,
            sensors,
            thresholds,
            aggregator_window: r.millis("aggregator.window_ms")?,
            aggregator_header: r.u32_min("aggregator.header_bytes", 0)?,
            association_delay: SimTime::from_secs_f64(r.non_negative("aggregator.association_ms")? / 1e3),
            side,
            trace_in: r.path("trace_in"),
            trace_out: r.path("trace_out"),
            out_dir: r.path("out_dir"),
            map,
        })
    }

    pub fn policy_rule(&self) -> PolicyRule {
        match self.policy {
            PolicyMode::Adaptive => PolicyRule::Table(self.rule),
            PolicyMode::Fixed(p) => PolicyRule::Pinned(p),
        }
    }

    /// Output directory: `out_dir`, else the environment root, else `out`.
    pub fn resolve_out_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn echo(&self) -> String {
        self.map.echo()
    }

    /// Rebuilds with one more override.
    pub fn with(&self, key: &str, value: &str) -> Result<Self> {
        let mut map = self.map.clone();
        map.set(key, value)?;
        Self::from_map(map)
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::from_map(ConfigMap::default()).expect("defaults are valid")
    }
}
