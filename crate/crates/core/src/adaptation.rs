//! Maps congestion estimates to network policies and logs every decision.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::engine::SimTime;
use crate::error::{Result, SimError};
use crate::sensing::{CongestionEstimate, CongestionLevel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Policy {
    Standard,
    Aggregator,
    ExtraResources,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Standard, Policy::Aggregator, Policy::ExtraResources];

    pub fn label(self) -> &'static str {
        match self {
            Policy::Standard => "standard",
            Policy::Aggregator => "aggregator",
            Policy::ExtraResources => "extra",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Policy {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "standard" => Ok(Policy::Standard),
            "aggregator" | "aggregation" => Ok(Policy::Aggregator),
            "extra" | "extra_resources" | "extra-resources" => Ok(Policy::ExtraResources),
            other => Err(SimError::config("policy", format!("unknown policy `{other}`"))),
        }
    }
}

/// Level-to-policy table, or a policy pinned for the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyRule {
    Table([Policy; 4]),
    Pinned(Policy),
}

impl Default for PolicyRule {
    fn default() -> Self {
        PolicyRule::Table([Policy::Standard, Policy::Aggregator, Policy::ExtraResources, Policy::ExtraResources])
    }
}

impl PolicyRule {
    pub fn select(&self, level: CongestionLevel) -> Policy {
        match self {
            PolicyRule::Table(t) => t[level as usize],
            PolicyRule::Pinned(p) => *p,
        }
    }
}

/// A concrete change to apply to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    SetRbCount(u32),
    EnableAggregation,
    DissolveAggregation,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::SetRbCount(n) => write!(f, "set_rb_count={n}"),
            Action::EnableAggregation => f.write_str("enable_aggregation"),
            Action::DissolveAggregation => f.write_str("dissolve_aggregation"),
        }
    }
}

/// Actions that move the network from `prev` to `next`.
pub fn transition(prev: Policy, next: Policy, base_rbs: u32, extra_rbs: u32) -> Vec<Action> {
    let mut actions = Vec::new();
    if prev == next {
        return actions;
    }
    if prev == Policy::Aggregator {
        actions.push(Action::DissolveAggregation);
    }
    match (prev == Policy::ExtraResources, next == Policy::ExtraResources) {
        (false, true) => actions.push(Action::SetRbCount(extra_rbs)),
        (true, false) => actions.push(Action::SetRbCount(base_rbs)),
        _ => {}
    }
    if next == Policy::Aggregator {
        actions.push(Action::EnableAggregation);
    }
    actions
}

/// Actions that bring a freshly started network (standard policy) to `policy`.
pub fn initial_actions(policy: Policy, base_rbs: u32, extra_rbs: u32) -> Vec<Action> {
    transition(Policy::Standard, policy, base_rbs, extra_rbs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationEvent {
    pub t: SimTime,
    pub level: CongestionLevel,
    pub n: u32,
    pub prev: Policy,
    pub next: Policy,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone)]
pub struct Adapter {
    pub rule: PolicyRule,
    pub base_rbs: u32,
    pub extra_rbs: u32,
    active: Policy,
    log: Vec<AdaptationEvent>,
}

impl Adapter {
    pub fn new(rule: PolicyRule, base_rbs: u32, extra_rbs: u32) -> Self {
        Adapter {
            rule,
            base_rbs,
            extra_rbs,
            active: Policy::Standard,
            log: Vec::new(),
        }
    }

    pub fn active(&self) -> Policy {
        self.active
    }

    /// One evaluation at a window boundary. Always logged, even without a change.
    pub fn evaluate(&mut self, estimate: &CongestionEstimate, now: SimTime) -> &AdaptationEvent {
        let next = self.rule.select(estimate.level);
        let actions = transition(self.active, next, self.base_rbs, self.extra_rbs);
        self.log.push(AdaptationEvent {
            t: now,
            level: estimate.level,
            n: estimate.n,
            prev: self.active,
            next,
            actions,
        });
        self.active = next;
        self.log.last().expect("just pushed")
    }

    pub fn log(&self) -> &[AdaptationEvent] {
        &self.log
    }

    /// Policy in force at `t`: the latest decision at or before `t`.
    pub fn policy_at(&self, t: SimTime) -> Policy {
        policy_at(&self.log, t)
    }
}

pub fn policy_at(log: &[AdaptationEvent], t: SimTime) -> Policy {
    log.iter()
        .take_while(|e| e.t <= t)
        .last()
        .map_or(Policy::Standard, |e| e.next)
}

/// CSV: `t_us,level,n,prev_policy,next_policy,actions`; actions are `;`-joined.
/// `origin` is subtracted from event times.
pub fn write_log<W: Write>(mut out: W, log: &[AdaptationEvent], origin: SimTime) -> std::io::Result<()> {
    writeln!(out, "t_us,level,n,prev_policy,next_policy,actions")?;
    for e in log {
        let actions: Vec<String> = e.actions.iter().map(ToString::to_string).collect();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            e.t.saturating_sub(origin).as_micros(),
            e.level,
            e.n,
            e.prev,
            e.next,
            actions.join(";")
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(n: u32) -> CongestionEstimate {
        CongestionEstimate {
            n,
            mean_speed: 5.0,
            window: (SimTime::ZERO, SimTime::from_secs(90)),
            level: crate::sensing::classify(n),
        }
    }

    #[test]
    fn default_rule() {
        let r = PolicyRule::default();
        let got: Vec<Policy> = CongestionLevel::ALL.iter().map(|l| r.select(*l)).collect();
        assert_eq!(got, vec![Policy::Standard, Policy::Aggregator, Policy::ExtraResources, Policy::ExtraResources]);
        assert!(CongestionLevel::ALL.iter().all(|l| PolicyRule::Pinned(Policy::Aggregator).select(*l) == Policy::Aggregator));
    }

    #[test]
    fn transitions() {
        use Policy::*;
        assert!(transition(Standard, Standard, 25, 50).is_empty());
        assert_eq!(transition(Standard, ExtraResources, 25, 50), vec![Action::SetRbCount(50)]);
        assert_eq!(transition(ExtraResources, Standard, 25, 50), vec![Action::SetRbCount(25)]);
        assert_eq!(transition(Standard, Aggregator, 25, 50), vec![Action::EnableAggregation]);
        assert_eq!(
            transition(Aggregator, ExtraResources, 25, 50),
            vec![Action::DissolveAggregation, Action::SetRbCount(50)]
        );
        assert_eq!(
            transition(ExtraResources, Aggregator, 25, 50),
            vec![Action::SetRbCount(25), Action::EnableAggregation]
        );
    }

    #[test]
    fn every_evaluation_is_logged() {
        let mut a = Adapter::new(PolicyRule::default(), 25, 50);
        for (i, n) in [10, 10, 50, 130].iter().enumerate() {
            a.evaluate(&est(*n), SimTime::from_secs(90 * i as u64));
        }
        assert_eq!(a.log().len(), 4);
        assert!(a.log()[1].actions.is_empty());
        assert_eq!(a.log()[2].next, Policy::Aggregator);
        assert_eq!(a.active(), Policy::ExtraResources);
        assert_eq!(a.policy_at(SimTime::from_secs(200)), Policy::Aggregator);
        assert_eq!(a.policy_at(SimTime::from_secs(270)), Policy::ExtraResources);
    }

    #[test]
    fn log_format() {
        let mut a = Adapter::new(PolicyRule::default(), 25, 50);
        a.evaluate(&est(50), SimTime::from_secs(100));
        let mut buf = Vec::new();
        write_log(&mut buf, a.log(), SimTime::from_secs(10)).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t_us,level,n,prev_policy,next_policy,actions\n90000000,moderate,50,standard,aggregator,enable_aggregation\n"
        );
    }
}
