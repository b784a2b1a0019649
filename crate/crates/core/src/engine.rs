//! Deterministic discrete-event engine.
//!
//! Events are ordered by `(fire_at, seq)`: time first, then insertion order.
//! Cancellation is lazy; cancelled entries are skipped when they surface.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, Sub};

use crate::error::SimError;

/// Simulation time in integer microseconds since simulation start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    /// Rounds to the nearest microsecond; negative inputs clamp to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        SimTime((s * 1e6).round().max(0.0) as u64)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.as_secs_f64())
    }
}

/// Scheduling epoch of the radio scheduler.
pub const TTI: SimTime = SimTime::from_millis(1);

/// Module an event is addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModuleId {
    Mobility,
    Sensing,
    Radio,
    Traffic,
    Adaptation,
    Metrics,
    Harness,
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModuleId::Mobility => "mobility",
            ModuleId::Sensing => "sensing",
            ModuleId::Radio => "radio",
            ModuleId::Traffic => "traffic-apps",
            ModuleId::Adaptation => "adaptation",
            ModuleId::Metrics => "metrics",
            ModuleId::Harness => "harness",
        };
        f.write_str(s)
    }
}

/// Payloads report a short kind label used in fault diagnostics.
pub trait Payload {
    fn kind(&self) -> &'static str;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

#[derive(Debug, Clone)]
pub struct Event<E> {
    pub fire_at: SimTime,
    pub target: ModuleId,
    pub payload: E,
    pub seq: u64,
}

struct Entry<E>(Event<E>);

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.0.seq == other.0.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // BinaryHeap is a max-heap; invert so the earliest (fire_at, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.fire_at, other.0.seq).cmp(&(self.0.fire_at, self.0.seq))
    }
}

/// Error raised by an event handler; the engine attaches time and target.
#[derive(Debug, Clone)]
pub struct HandlerFault(pub String);

pub struct Engine<E> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Entry<E>>,
    cancelled: HashSet<u64>,
    executed: u64,
}

impl<E> Default for Engine<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Engine<E> {
    pub fn new() -> Self {
        Engine {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            cancelled: HashSet::new(),
            executed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of scheduled events that have neither fired nor been cancelled.
    pub fn pending(&self) -> usize {
        self.queue.len() - self.cancelled.len()
    }

    /// Total events executed since construction.
    pub fn executed(&self) -> u64 {
        self.executed
    }

    pub fn schedule(
        &mut self,
        fire_at: SimTime,
        target: ModuleId,
        payload: E,
    ) -> Result<EventHandle, SimError> {
        if fire_at < self.now {
            return Err(SimError::ScheduleInPast {
                now: self.now,
                requested: fire_at,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Entry(Event {
            fire_at,
            target,
            payload,
            seq,
        }));
        Ok(EventHandle(seq))
    }

    pub fn schedule_in(
        &mut self,
        delay: SimTime,
        target: ModuleId,
        payload: E,
    ) -> Result<EventHandle, SimError> {
        self.schedule(self.now + delay, target, payload)
    }

    /// Returns false if the event already fired or was already cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if handle.0 >= self.next_seq || self.cancelled.contains(&handle.0) {
            return false;
        }
        if !self.queue.iter().any(|e| e.0.seq == handle.0) {
            return false;
        }
        self.cancelled.insert(handle.0);
        true
    }

    fn pop_live(&mut self, horizon: SimTime) -> Option<Event<E>> {
        loop {
            let top = self.queue.peek()?;
            if top.0.fire_at > horizon {
                return None;
            }
            let Entry(ev) = self.queue.pop().expect("peeked");
            if self.cancelled.remove(&ev.seq) {
                continue;
            }
            return Some(ev);
        }
    }
}

impl<E: Payload> Engine<E> {
    /// Executes every event with `fire_at <= horizon`, then parks the clock at
    /// `horizon`. Returns the number of events executed by this call.
    pub fn run_until<F>(&mut self, horizon: SimTime, mut handler: F) -> Result<u64, SimError>
    where
        F: FnMut(&mut Engine<E>, Event<E>) -> Result<(), HandlerFault>,
    {
        if horizon < self.now {
            return Err(SimError::ScheduleInPast {
                now: self.now,
                requested: horizon,
            });
        }
        let mut count = 0;
        while let Some(ev) = self.pop_live(horizon) {
            debug_assert!(ev.fire_at >= self.now);
            self.now = ev.fire_at;
            let target = ev.target;
            let kind = ev.payload.kind();
            self.executed += 1;
            count += 1;
            if let Err(HandlerFault(msg)) = handler(self, ev) {
                return Err(SimError::Fault {
                    time: self.now,
                    target,
                    kind,
                    message: msg,
                });
            }
        }
        self.now = horizon;
        Ok(count)
    }
}
