//! One simulated run: mobility, sensing, radio, traffic, adaptation and
//! metrics wired together on the event engine.
//!
//! Road traffic runs alone during the warm-up so queues reach steady state.
//! The network starts at the end of the warm-up, which is also the origin of
//! every reported time.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;

use crate::adaptation::{Action, AdaptationEvent, Adapter};
use crate::config::ScenarioConfig;
use crate::engine::{Engine, Event, HandlerFault, ModuleId, Payload, SimTime, TTI};
use crate::error::{Result, SimError};
use crate::metrics::{self, MetricRecord, MetricsRecorder, RunSummary};
use crate::mobility::{Mobility, Road};
use crate::radio::{Allocation, Direction, PfFlow, PfScheduler, RachOutcome, SideChannel};
use crate::rng::RngStream;
use crate::sensing::{self, EstimatorParams, PresenceSample, SAMPLE_PERIOD};
use crate::traffic::{elect_concentrator, place_static_users, Aggregator, DropReason, FlowSpec, Packet, PacketPath, TrafficClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ev {
    Tti,
    MobilityStep,
    SensorSample,
    Window,
    Gen { node: usize, dir: Direction },
    Prach,
    Granted { node: usize },
    IdleCheck { node: usize },
    /// A side-channel hop finished at node `to`.
    SideArrive { packet: u64, to: usize },
    BundleFlush,
}

impl Payload for Ev {
    fn kind(&self) -> &'static str {
        match self {
            Ev::Tti => "tti",
            Ev::MobilityStep => "mobility_step",
            Ev::SensorSample => "sensor_sample",
            Ev::Window => "window",
            Ev::Gen { .. } => "generate",
            Ev::Prach => "prach",
            Ev::Granted { .. } => "granted",
            Ev::IdleCheck { .. } => "idle_check",
            Ev::SideArrive { .. } => "side_arrive",
            Ev::BundleFlush => "bundle_flush",
        }
    }
}

fn target(ev: &Ev) -> ModuleId {
    match ev {
        Ev::Tti | Ev::Prach | Ev::Granted { .. } | Ev::IdleCheck { .. } => ModuleId::Radio,
        Ev::MobilityStep => ModuleId::Mobility,
        Ev::SensorSample => ModuleId::Sensing,
        Ev::Window => ModuleId::Adaptation,
        Ev::Gen { .. } | Ev::SideArrive { .. } | Ev::BundleFlush => ModuleId::Traffic,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NodeKind {
    Static,
    Passenger(u32),
    Vehicle(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Conn {
    Idle,
    Connecting { attempt: u32 },
    Connected,
}

#[derive(Debug)]
struct Item {
    bits: u64,
    packets: Vec<u64>,
}

#[derive(Debug)]
struct Node {
    kind: NodeKind,
    class: TrafficClass,
    pos: (f64, f64),
    present: bool,
    conn: Conn,
    last_activity: SimTime,
    idle_check_pending: bool,
    queues: [VecDeque<Item>; 2],
}

/// Counters gathered during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunStats {
    pub events: u64,
    pub ttis: u64,
    /// TTI/direction pairs that broke the RB cap or work conservation.
    pub tti_violations: u64,
    pub rach_attempts: u64,
    pub rach_collisions: u64,
    pub rach_failures: u64,
    pub bundles: u64,
    pub relayed_packets: u64,
    pub vehicles_spawned: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conservation {
    pub class: TrafficClass,
    pub direction: Direction,
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
}

impl Conservation {
    pub fn holds(&self) -> bool {
        self.delivered + self.dropped + self.in_flight == self.generated
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config_echo: String,
    pub origin: SimTime,
    pub records: Vec<(TrafficClass, Direction, Vec<MetricRecord>)>,
    pub summary: RunSummary,
    pub adaptation: Vec<AdaptationEvent>,
    pub conservation: Vec<Conservation>,
    pub stats: RunStats,
    pub trace: Vec<PresenceSample>,
}

impl RunResult {
    /// Writes the config echo, adaptation log, time series, summary and one
    /// plot-ready series per (class, direction) into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
        let write = |name: &str, bytes: Vec<u8>| -> Result<()> {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| SimError::io(path, e))
        };
        write("config.txt", self.config_echo.clone().into_bytes())?;
        let mut buf = Vec::new();
        crate::adaptation::write_log(&mut buf, &self.adaptation, self.origin).expect("in-memory write");
        write("adaptation.csv", buf)?;
        let mut buf = Vec::new();
        metrics::write_timeseries(&mut buf, &self.records).expect("in-memory write");
        write("timeseries.csv", buf)?;
        let mut buf = Vec::new();
        metrics::write_summary(&mut buf, &self.summary).expect("in-memory write");
        write("summary.csv", buf)?;
        for (c, d, bins) in &self.records {
            let mut buf = Vec::new();
            metrics::write_series(&mut buf, *c, *d, bins).expect("in-memory write");
            write(&format!("series_{c}_{d}.csv"), buf)?;
        }
        Ok(())
    }
}

struct World {
    cfg: ScenarioConfig,
    origin: SimTime,
    end: SimTime,
    mobility: Mobility,
    rng_mobility: RngStream,
    rng_traffic: RngStream,
    rng_rach: RngStream,
    specs: [[FlowSpec; 2]; 2],
    nodes: Vec<Node>,
    vehicle_nodes: HashMap<u32, usize>,
    passenger_nodes: HashMap<u32, usize>,
    flows: [Vec<PfFlow>; 2],
    pf: [PfScheduler; 2],
    allocs: Vec<Allocation>,
    rb_count: u32,
    prach: BTreeMap<SimTime, Vec<usize>>,
    picks: Vec<u32>,
    side: SideChannel,
    aggregator: Aggregator,
    aggregation_on: bool,
    packets: HashMap<u64, Packet>,
    next_packet: u64,
    metrics: MetricsRecorder,
    adapter: Adapter,
    trace: Vec<PresenceSample>,
    replay: Option<Vec<PresenceSample>>,
    network_up: bool,
    stats: RunStats,
}

type Step = std::result::Result<(), HandlerFault>;

fn fault(e: SimError) -> HandlerFault {
    HandlerFault(e.to_string())
}

impl World {
    fn new(cfg: ScenarioConfig, replay: Option<Vec<PresenceSample>>) -> Self {
        let origin = cfg.warmup;
        let end = origin + cfg.horizon;
        let seed = cfg.seed;
        let mt_ul = FlowSpec::mt(Direction::Ul, cfg.mt_packet_bytes, cfg.mt_ul_period);
        let mt_dl = FlowSpec::mt(Direction::Dl, cfg.mt_packet_bytes, cfg.mt_dl_period);
        let ht_ul = FlowSpec::ht(Direction::Ul, cfg.ht_packet_bytes, cfg.ht_ul_bps);
        let ht_dl = FlowSpec::ht(Direction::Dl, cfg.ht_packet_bytes, cfg.ht_dl_bps);
        let window_ttis = cfg.pf_window.as_secs_f64() / TTI.as_secs_f64();
        let tti_s = TTI.as_secs_f64();
        World {
            origin,
            end,
            mobility: Mobility::new(cfg.junction, cfg.light, cfg.mobility),
            rng_mobility: RngStream::new(seed, "mobility"),
            rng_traffic: RngStream::new(seed, "traffic"),
            rng_rach: RngStream::new(seed, "rach"),
            specs: [[mt_ul, mt_dl], [ht_ul, ht_dl]],
            nodes: Vec::new(),
            vehicle_nodes: HashMap::new(),
            passenger_nodes: HashMap::new(),
            flows: [Vec::new(), Vec::new()],
            pf: [PfScheduler::new(window_ttis, tti_s), PfScheduler::new(window_ttis, tti_s)],
            allocs: Vec::new(),
            rb_count: cfg.cell.rb_count,
            prach: BTreeMap::new(),
            picks: Vec::new(),
            side: cfg.side.clone(),
            aggregator: Aggregator::new(cfg.aggregator_window, cfg.association_delay, cfg.aggregator_header),
            aggregation_on: false,
            packets: HashMap::new(),
            next_packet: 0,
            metrics: MetricsRecorder::new(origin, cfg.horizon),
            adapter: Adapter::new(cfg.policy_rule(), cfg.cell.rb_count, cfg.extra_rb_count),
            trace: Vec::new(),
            replay,
            network_up: false,
            stats: RunStats::default(),
            cfg,
        }
    }

    fn handle(&mut self, eng: &mut Engine<Ev>, ev: Event<Ev>) -> Step {
        let now = ev.fire_at;
        match ev.payload {
            Ev::Tti => self.on_tti(eng, now),
            Ev::MobilityStep => self.on_mobility(eng, now),
            Ev::SensorSample => {
                if self.replay.is_none() {
                    let s = sensing::sample_sensors(self.mobility.vehicles(), &self.cfg.sensors, &self.cfg.junction, now);
                    self.trace.extend(s);
                }
                self.schedule_if_before_end(eng, now + SAMPLE_PERIOD, Ev::SensorSample)
            }
            Ev::Window => self.on_window(eng, now),
            Ev::Gen { node, dir } => self.on_generate(eng, now, node, dir),
            Ev::Prach => self.on_prach(eng, now),
            Ev::Granted { node } => self.on_granted(eng, now, node),
            Ev::IdleCheck { node } => self.on_idle_check(eng, now, node),
            Ev::SideArrive { packet, to } => self.on_side_arrive(eng, now, packet, to),
            Ev::BundleFlush => self.on_bundle_flush(eng, now),
        }
    }

    fn schedule(&self, eng: &mut Engine<Ev>, at: SimTime, ev: Ev) -> Step {
        eng.schedule(at, target(&ev), ev).map(|_| ()).map_err(fault)
    }

    fn schedule_if_before_end(&self, eng: &mut Engine<Ev>, at: SimTime, ev: Ev) -> Step {
        if at < self.end {
            self.schedule(eng, at, ev)?;
        }
        Ok(())
    }

    // ---- nodes and links ----

    fn add_node(&mut self, eng: &mut Engine<Ev>, now: SimTime, kind: NodeKind, class: TrafficClass, pos: (f64, f64), connected: bool) -> Result<usize, HandlerFault> {
        let id = self.nodes.len();
        self.nodes.push(Node {
            kind,
            class,
            pos,
            present: true,
            conn: if connected { Conn::Connected } else { Conn::Idle },
            last_activity: now,
            idle_check_pending: false,
            queues: [VecDeque::new(), VecDeque::new()],
        });
        for d in Direction::ALL {
            self.flows[d.index()].push(PfFlow {
                active: connected,
                ..PfFlow::default()
            });
        }
        self.update_link(id);
        for d in Direction::ALL {
            let offset = self.specs[class.index()][d.index()].first_offset(&mut self.rng_traffic);
            self.schedule_if_before_end(eng, now + offset, Ev::Gen { node: id, dir: d })?;
        }
        if connected {
            self.arm_idle_check(eng, id, now)?;
        }
        Ok(id)
    }

    fn update_link(&mut self, id: usize) {
        let pos = self.nodes[id].pos;
        let cell = crate::radio::CellConfig {
            rb_count: self.rb_count,
            ..self.cfg.cell
        };
        let link = self.cfg.link.link_state(&cell, pos.0.hypot(pos.1));
        self.flows[Direction::Ul.index()][id].rate_per_rb = link.rate_ul;
        self.flows[Direction::Dl.index()][id].rate_per_rb = link.rate_dl;
    }

    fn set_active(&mut self, id: usize) {
        let n = &self.nodes[id];
        let active = n.present && n.conn == Conn::Connected;
        for d in 0..2 {
            self.flows[d][id].active = active;
        }
    }

    fn add_vehicle(&mut self, eng: &mut Engine<Ev>, now: SimTime, vid: u32, connected: bool) -> Step {
        let Some(v) = self.mobility.vehicle(vid).copied() else {
            return Ok(());
        };
        if self.cfg.mt_enabled {
            let id = self.add_node(eng, now, NodeKind::Vehicle(vid), TrafficClass::Mt, v.point(), connected)?;
            self.vehicle_nodes.insert(vid, id);
        }
        if v.has_passenger_ht && self.cfg.scenario == 2 {
            let id = self.add_node(eng, now, NodeKind::Passenger(vid), TrafficClass::Ht, v.point(), connected)?;
            self.passenger_nodes.insert(vid, id);
        }
        Ok(())
    }

    fn remove_vehicle(&mut self, now: SimTime, vid: u32) -> Step {
        for id in [self.vehicle_nodes.remove(&vid), self.passenger_nodes.remove(&vid)].into_iter().flatten() {
            self.nodes[id].present = false;
            self.nodes[id].conn = Conn::Idle;
            self.set_active(id);
            for d in Direction::ALL {
                self.flows[d.index()][id].backlog_bits = 0;
                let items: Vec<Item> = self.nodes[id].queues[d.index()].drain(..).collect();
                for item in items {
                    for pid in item.packets {
                        self.salvage(now, pid, id)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// A packet stranded at a departing relay goes direct if its own endpoint
    /// is still around.
    fn salvage(&mut self, now: SimTime, pid: u64, departed: usize) -> Step {
        let endpoint = self.packets[&pid].endpoint;
        if endpoint != departed && self.nodes[endpoint].present {
            self.go_direct_deferred(pid);
            Ok(())
        } else {
            self.drop_packet(now, pid, DropReason::NodeDeparted)
        }
    }

    // Connection requests need the engine; packets salvaged without it are
    // parked and picked up at the next mobility step.
    fn go_direct_deferred(&mut self, pid: u64) {
        let p = self.packets.get_mut(&pid).expect("live packet");
        p.path = PacketPath::Direct;
        let (node, dir, bits) = (p.endpoint, p.direction, u64::from(p.size) * 8);
        self.push_item(node, dir, Item { bits, packets: vec![pid] });
    }

    fn go_direct(&mut self, eng: &mut Engine<Ev>, now: SimTime, pid: u64) -> Step {
        let p = &self.packets[&pid];
        let node = p.endpoint;
        if !self.nodes[node].present {
            return self.drop_packet(now, pid, DropReason::NodeDeparted);
        }
        self.go_direct_deferred(pid);
        self.request_connection(eng, now, node)
    }

    fn push_item(&mut self, node: usize, dir: Direction, item: Item) {
        self.flows[dir.index()][node].backlog_bits += item.bits;
        self.nodes[node].queues[dir.index()].push_back(item);
    }

    // ---- packets ----

    fn deliver(&mut self, t: SimTime, pid: u64) -> Step {
        let mut p = self.packets.remove(&pid).expect("live packet");
        self.metrics.record_delivery(&mut p, t).map_err(fault)
    }

    fn drop_packet(&mut self, t: SimTime, pid: u64, reason: DropReason) -> Step {
        let mut p = self.packets.remove(&pid).expect("live packet");
        self.metrics.record_drop(&mut p, t, reason).map_err(fault)
    }

    fn relay_target(&self, node: usize, now: SimTime) -> Option<usize> {
        if !self.aggregation_on {
            return None;
        }
        let NodeKind::Vehicle(vid) = self.nodes[node].kind else {
            return None;
        };
        let conc = self.aggregator.concentrator()?;
        if !self.aggregator.is_associated(vid, now) {
            return None;
        }
        let cn = *self.vehicle_nodes.get(&conc)?;
        (self.nodes[cn].present && self.side.in_range(self.nodes[node].pos, self.nodes[cn].pos)).then_some(cn)
    }

    fn on_generate(&mut self, eng: &mut Engine<Ev>, now: SimTime, node: usize, dir: Direction) -> Step {
        if !self.nodes[node].present {
            return Ok(());
        }
        let spec = self.specs[self.nodes[node].class.index()][dir.index()];
        let id = self.next_packet;
        self.next_packet += 1;
        let mut p = Packet::new(id, &spec, node, now);
        self.metrics.record_generated(&p);
        let relay = self.relay_target(node, now);
        if relay.is_some() {
            p.path = PacketPath::Relayed;
            self.stats.relayed_packets += 1;
        }
        self.packets.insert(id, p);
        let gap = spec.next_gap(&mut self.rng_traffic);
        self.schedule_if_before_end(eng, now + gap, Ev::Gen { node, dir })?;

        match (relay, dir) {
            (Some(cn), Direction::Ul) => {
                let done = self.side.enqueue(now, spec.packet_size);
                self.schedule(eng, done, Ev::SideArrive { packet: id, to: cn })
            }
            (Some(cn), Direction::Dl) => {
                self.push_item(cn, dir, Item { bits: u64::from(spec.packet_size) * 8, packets: vec![id] });
                self.request_connection(eng, now, cn)
            }
            (None, _) => {
                self.push_item(node, dir, Item { bits: u64::from(spec.packet_size) * 8, packets: vec![id] });
                self.request_connection(eng, now, node)
            }
        }
    }

    fn on_side_arrive(&mut self, eng: &mut Engine<Ev>, now: SimTime, pid: u64, to: usize) -> Step {
        let p = self.packets[&pid];
        match p.direction {
            Direction::Ul => {
                let conc_here = match self.nodes[to].kind {
                    NodeKind::Vehicle(vid) => self.aggregation_on && self.aggregator.concentrator() == Some(vid),
                    _ => false,
                };
                if self.nodes[to].present && conc_here {
                    self.aggregator.push(pid, p.size);
                    Ok(())
                } else {
                    self.go_direct(eng, now, pid)
                }
            }
            Direction::Dl => {
                if self.nodes[to].present {
                    self.deliver(now, pid)
                } else {
                    self.drop_packet(now, pid, DropReason::NodeDeparted)
                }
            }
        }
    }

    fn on_bundle_flush(&mut self, eng: &mut Engine<Ev>, now: SimTime) -> Step {
        if self.aggregation_on {
            if let Some(bundle) = self.aggregator.flush(now) {
                let cn = self.vehicle_nodes.get(&bundle.concentrator).copied();
                match cn.filter(|cn| self.nodes[*cn].present) {
                    Some(cn) => {
                        self.stats.bundles += 1;
                        self.push_item(cn, Direction::Ul, Item { bits: u64::from(bundle.size) * 8, packets: bundle.members });
                        self.request_connection(eng, now, cn)?;
                    }
                    None => {
                        for pid in bundle.members {
                            self.go_direct(eng, now, pid)?;
                        }
                    }
                }
            }
        }
        self.schedule_if_before_end(eng, now + self.aggregator.window, Ev::BundleFlush)
    }

    // ---- access ----

    fn request_connection(&mut self, eng: &mut Engine<Ev>, now: SimTime, node: usize) -> Step {
        if self.nodes[node].conn == Conn::Idle && self.nodes[node].present {
            self.nodes[node].conn = Conn::Connecting { attempt: 1 };
            let at = self.cfg.rach.next_opportunity(now + SimTime(1));
            self.add_contender(eng, node, at)?;
        }
        Ok(())
    }

    fn add_contender(&mut self, eng: &mut Engine<Ev>, node: usize, at: SimTime) -> Step {
        let list = self.prach.entry(at).or_default();
        list.push(node);
        if list.len() == 1 {
            self.schedule(eng, at, Ev::Prach)?;
        }
        Ok(())
    }

    fn on_prach(&mut self, eng: &mut Engine<Ev>, now: SimTime) -> Step {
        let contenders: Vec<usize> = self
            .prach
            .remove(&now)
            .unwrap_or_default()
            .into_iter()
            .filter(|n| self.nodes[*n].present && matches!(self.nodes[*n].conn, Conn::Connecting { .. }))
            .collect();
        let won = crate::radio::rach::resolve_opportunity(contenders.len(), self.cfg.rach.preamble_count, &mut self.rng_rach, &mut self.picks);
        for (node, won) in contenders.into_iter().zip(won) {
            let Conn::Connecting { attempt } = self.nodes[node].conn else { unreachable!() };
            self.stats.rach_attempts += 1;
            if !won {
                self.stats.rach_collisions += 1;
            }
            match self.cfg.rach.attempt_outcome(won, attempt, now, &mut self.rng_rach) {
                RachOutcome::Granted(at) => self.schedule(eng, at, Ev::Granted { node })?,
                RachOutcome::Retry(at) => {
                    self.nodes[node].conn = Conn::Connecting { attempt: attempt + 1 };
                    let at = self.cfg.rach.next_opportunity(at.max(now + SimTime(1)));
                    self.add_contender(eng, node, at)?;
                }
                RachOutcome::Failed => {
                    self.stats.rach_failures += 1;
                    self.nodes[node].conn = Conn::Idle;
                    for d in Direction::ALL {
                        self.flows[d.index()][node].backlog_bits = 0;
                        let items: Vec<Item> = self.nodes[node].queues[d.index()].drain(..).collect();
                        for pid in items.into_iter().flat_map(|i| i.packets) {
                            self.drop_packet(now, pid, DropReason::RachExhausted)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn on_granted(&mut self, eng: &mut Engine<Ev>, now: SimTime, node: usize) -> Step {
        if !self.nodes[node].present || !matches!(self.nodes[node].conn, Conn::Connecting { .. }) {
            return Ok(());
        }
        self.nodes[node].conn = Conn::Connected;
        self.nodes[node].last_activity = now;
        self.set_active(node);
        self.arm_idle_check(eng, node, now)
    }

    fn arm_idle_check(&mut self, eng: &mut Engine<Ev>, node: usize, now: SimTime) -> Step {
        if self.nodes[node].idle_check_pending {
            return Ok(());
        }
        let timeout = self.cfg.rach.idle_release_timeout;
        let at = (self.nodes[node].last_activity + timeout).max(now + SimTime(1));
        if at < self.end {
            self.nodes[node].idle_check_pending = true;
            self.schedule(eng, at, Ev::IdleCheck { node })?;
        }
        Ok(())
    }

    fn on_idle_check(&mut self, eng: &mut Engine<Ev>, now: SimTime, node: usize) -> Step {
        self.nodes[node].idle_check_pending = false;
        let n = &self.nodes[node];
        if !n.present || n.conn != Conn::Connected {
            return Ok(());
        }
        let idle = now - n.last_activity >= self.cfg.rach.idle_release_timeout;
        if idle && n.queues.iter().all(VecDeque::is_empty) {
            self.nodes[node].conn = Conn::Idle;
            self.set_active(node);
            Ok(())
        } else {
            self.arm_idle_check(eng, node, now)
        }
    }

    // ---- scheduling ----

    fn on_tti(&mut self, eng: &mut Engine<Ev>, now: SimTime) -> Step {
        let tend = now + TTI;
        self.stats.ttis += 1;
        for dir in Direction::ALL {
            let d = dir.index();
            let demand: u64 = self.flows[d]
                .iter()
                .filter(|f| f.active && f.rate_per_rb > 0)
                .map(|f| f.backlog_bits.div_ceil(u64::from(f.rate_per_rb)))
                .sum();
            let mut allocs = std::mem::take(&mut self.allocs);
            self.pf[d].schedule(&mut self.flows[d], self.rb_count, &mut allocs);
            let used: u64 = allocs.iter().map(|a| u64::from(a.rbs)).sum();
            if used > u64::from(self.rb_count) || used != demand.min(u64::from(self.rb_count)) {
                self.stats.tti_violations += 1;
            }
            for a in &allocs {
                if a.bits > u64::from(a.rbs) * u64::from(self.flows[d][a.flow].rate_per_rb) {
                    self.stats.tti_violations += 1;
                }
                self.drain(eng, now, tend, a.flow, dir, a.bits)?;
            }
            self.allocs = allocs;
        }
        self.schedule_if_before_end(eng, tend, Ev::Tti)
    }

    fn drain(&mut self, eng: &mut Engine<Ev>, now: SimTime, tend: SimTime, node: usize, dir: Direction, mut bits: u64) -> Step {
        let d = dir.index();
        self.flows[d][node].backlog_bits -= bits;
        self.nodes[node].last_activity = now;
        while bits > 0 {
            let front = self.nodes[node].queues[d].front_mut().expect("backlog matches queue");
            let take = bits.min(front.bits);
            front.bits -= take;
            bits -= take;
            if front.bits == 0 {
                let item = self.nodes[node].queues[d].pop_front().expect("front exists");
                for pid in item.packets {
                    self.complete_hop(eng, tend, pid, node)?;
                }
            }
        }
        Ok(())
    }

    /// A packet left the cellular link at `node`'s end.
    fn complete_hop(&mut self, eng: &mut Engine<Ev>, t: SimTime, pid: u64, node: usize) -> Step {
        let p = self.packets[&pid];
        if p.direction == Direction::Dl && p.endpoint != node {
            // At the concentrator; second hop over the side channel.
            if self.nodes[p.endpoint].present && self.side.in_range(self.nodes[node].pos, self.nodes[p.endpoint].pos) {
                let done = self.side.enqueue(t, p.size);
                return self.schedule(eng, done, Ev::SideArrive { packet: pid, to: p.endpoint });
            }
            return self.go_direct(eng, t, pid);
        }
        self.deliver(t, pid)
    }

    // ---- mobility, aggregation, adaptation ----

    fn on_mobility(&mut self, eng: &mut Engine<Ev>, now: SimTime) -> Step {
        let step = self.cfg.mobility.step;
        let level = self.cfg.schedule.level_at(now.saturating_sub(self.origin));
        let spawned = self.mobility.spawn_step(level, now, &mut self.rng_mobility);
        let report = self.mobility.advance(now, step);
        self.stats.vehicles_spawned += spawned.len() as u64;
        if self.network_up {
            for vid in spawned {
                if self.mobility.vehicle(vid).is_some() {
                    self.add_vehicle(eng, now, vid, false)?;
                }
            }
            for vid in report.despawned {
                self.remove_vehicle(now, vid)?;
            }
            let moved: Vec<(u32, usize)> = self
                .vehicle_nodes
                .iter()
                .chain(self.passenger_nodes.iter())
                .map(|(v, n)| (*v, *n))
                .collect();
            for (vid, node) in moved {
                if let Some(v) = self.mobility.vehicle(vid) {
                    self.nodes[node].pos = v.point();
                    self.update_link(node);
                }
            }
            // Packets salvaged without an engine handle may be waiting on idle nodes.
            for node in 0..self.nodes.len() {
                if self.nodes[node].present && self.nodes[node].conn == Conn::Idle && self.nodes[node].queues.iter().any(|q| !q.is_empty()) {
                    self.request_connection(eng, now, node)?;
                }
            }
            if self.aggregation_on {
                self.maintain_aggregation(eng, now)?;
            }
            let mt = if self.cfg.mt_enabled { self.vehicle_nodes.len() } else { 0 };
            let ht = self.cfg.ht_static_users as usize + self.passenger_nodes.len();
            self.metrics.add_active(TrafficClass::Mt, now, step, mt);
            self.metrics.add_active(TrafficClass::Ht, now, step, ht);
        }
        self.schedule_if_before_end(eng, now + step, Ev::MobilityStep)
    }

    fn maintain_aggregation(&mut self, eng: &mut Engine<Ev>, now: SimTime) -> Step {
        let queued: [Vec<u32>; 2] = Road::ALL.map(|r| self.mobility.queued_vehicles(r).iter().map(|v| v.id).collect());
        let still_queued = |id: u32| queued.iter().any(|q| q.contains(&id));
        let current = self.aggregator.concentrator().filter(|c| still_queued(*c) && self.vehicle_nodes.contains_key(c));
        let next = current.or_else(|| {
            let a = self.mobility.queued_vehicles(Road::A);
            let b = self.mobility.queued_vehicles(Road::B);
            elect_concentrator([&a, &b])
        });
        if next != self.aggregator.concentrator() {
            for (pid, _) in self.aggregator.dissolve() {
                self.go_direct(eng, now, pid)?;
            }
            self.aggregator.set_concentrator(next);
        }
        let Some(conc) = next else {
            return Ok(());
        };
        let Some(cpos) = self.mobility.vehicle(conc).map(|v| v.point()) else {
            return Ok(());
        };
        let eligible: Vec<u32> = queued
            .iter()
            .flatten()
            .copied()
            .filter(|id| *id != conc)
            .filter(|id| self.mobility.vehicle(*id).is_some_and(|v| self.side.in_range(v.point(), cpos)))
            .collect();
        self.aggregator.sync_members(&eligible, now);
        Ok(())
    }

    fn on_window(&mut self, eng: &mut Engine<Ev>, now: SimTime) -> Step {
        let window = (now - self.cfg.window, now);
        let params = EstimatorParams {
            coverage_radius: self.cfg.junction.coverage_radius,
            thresholds: self.cfg.thresholds,
        };
        let trace = self.replay.as_deref().unwrap_or(&self.trace);
        let estimate = sensing::estimate(trace, &self.cfg.sensors, window, &params).map_err(fault)?;
        let actions = self.adapter.evaluate(&estimate, now).actions.clone();
        for a in actions {
            self.apply(eng, now, a)?;
        }
        self.schedule_if_before_end(eng, now + self.cfg.window, Ev::Window)
    }

    fn apply(&mut self, eng: &mut Engine<Ev>, now: SimTime, action: Action) -> Step {
        match action {
            Action::SetRbCount(n) => {
                self.rb_count = n;
                for id in 0..self.nodes.len() {
                    self.update_link(id);
                }
            }
            Action::EnableAggregation => {
                self.aggregation_on = true;
                self.maintain_aggregation(eng, now)?;
            }
            Action::DissolveAggregation => {
                self.aggregation_on = false;
                for (pid, _) in self.aggregator.dissolve() {
                    self.go_direct(eng, now, pid)?;
                }
            }
        }
        Ok(())
    }

    /// Static users, and devices in vehicles already on the road, start connected.
    fn start_network(&mut self, eng: &mut Engine<Ev>) -> Result<()> {
        let now = self.origin;
        self.network_up = true;
        let mut placement = RngStream::new(self.cfg.seed, "placement");
        let points = place_static_users(self.cfg.ht_static_users, self.cfg.junction.coverage_radius, &mut placement);
        let run = |r: Step| r.map_err(|HandlerFault(m)| SimError::Fault { time: now, target: ModuleId::Harness, kind: "start", message: m });
        for p in points {
            run(self.add_node(eng, now, NodeKind::Static, TrafficClass::Ht, p, true).map(|_| ()))?;
        }
        let present: Vec<u32> = self.mobility.vehicles().map(|v| v.id).collect();
        for vid in present {
            run(self.add_vehicle(eng, now, vid, true))?;
        }
        for ev in [Ev::Tti, Ev::Window, Ev::BundleFlush] {
            eng.schedule(now, target(&ev), ev)?;
        }
        Ok(())
    }

    fn finish(self) -> RunResult {
        let mut in_flight: BTreeMap<(TrafficClass, u8), u64> = BTreeMap::new();
        for p in self.packets.values() {
            *in_flight.entry((p.class, p.direction.index() as u8)).or_default() += 1;
        }
        let conservation = metrics::series()
            .map(|(c, d)| {
                let t = self.metrics.totals(c, d);
                Conservation {
                    class: c,
                    direction: d,
                    generated: t.generated,
                    delivered: t.delivered,
                    dropped: t.dropped,
                    in_flight: in_flight.get(&(c, d.index() as u8)).copied().unwrap_or(0),
                }
            })
            .collect();
        let records: Vec<_> = metrics::series().map(|(c, d)| (c, d, self.metrics.records(c, d))).collect();
        let summary = metrics::summarize(&records, &self.cfg.schedule, self.adapter.log(), self.origin);
        RunResult {
            config_echo: self.cfg.echo(),
            origin: self.origin,
            records,
            summary,
            adaptation: self.adapter.log().to_vec(),
            conservation,
            stats: self.stats,
            trace: self.trace,
        }
    }
}

/// Runs one scenario to completion. A configured `trace_in` replaces live
/// sampling as the estimator's input; its times count from simulation start,
/// warm-up included.
pub fn run(cfg: &ScenarioConfig) -> Result<RunResult> {
    let replay = match &cfg.trace_in {
        Some(path) => {
            let file = std::fs::File::open(path).map_err(|e| SimError::io(path, e))?;
            Some(sensing::read_trace(std::io::BufReader::new(file))?)
        }
        None => None,
    };
    run_with_trace(cfg, replay)
}

pub fn run_with_trace(cfg: &ScenarioConfig, replay: Option<Vec<PresenceSample>>) -> Result<RunResult> {
    let mut world = World::new(cfg.clone(), replay);
    let mut eng: Engine<Ev> = Engine::new();
    eng.schedule(SimTime::ZERO, ModuleId::Mobility, Ev::MobilityStep)?;
    eng.schedule(SimTime::ZERO, ModuleId::Sensing, Ev::SensorSample)?;
    if world.origin > SimTime::ZERO {
        eng.run_until(world.origin - SimTime(1), |e, ev| world.handle(e, ev))?;
    }
    world.start_network(&mut eng)?;
    let end = world.end;
    eng.run_until(end - SimTime(1), |e, ev| world.handle(e, ev))?;
    world.stats.events = eng.executed();
    let result = world.finish();
    if let Some(path) = &cfg.trace_out {
        let mut buf = Vec::new();
        sensing::write_trace(&mut buf, &result.trace).expect("in-memory write");
        std::fs::write(path, buf).map_err(|e| SimError::io(path, e))?;
    }
    Ok(result)
}
