//! Contention-based random access.

use crate::engine::SimTime;
use crate::par;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RachConfig {
    pub preamble_count: u32,
    pub prach_period: SimTime,
    pub max_attempts: u32,
    pub backoff_window: SimTime,
    pub connection_grant_delay: SimTime,
    pub idle_release_timeout: SimTime,
}

impl Default for RachConfig {
    fn default() -> Self {
        RachConfig {
            preamble_count: 54,
            prach_period: SimTime::from_millis(5),
            max_attempts: 10,
            backoff_window: SimTime::from_millis(20),
            connection_grant_delay: SimTime::from_millis(15),
            idle_release_timeout: SimTime::from_secs(10),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RachOutcome {
    Granted(SimTime),
    Retry(SimTime),
    Failed,
}

impl RachConfig {
    /// First PRACH opportunity at or after `t`.
    pub fn next_opportunity(&self, t: SimTime) -> SimTime {
        let p = self.prach_period.as_micros();
        SimTime(t.as_micros().div_ceil(p) * p)
    }

    /// Outcome for a node that made its `attempt`-th try (1-based) at `now`.
    /// Winners are granted after the connection delay; losers back off uniformly
    /// and retry, or fail once `max_attempts` tries have collided.
    pub fn attempt_outcome(&self, won: bool, attempt: u32, now: SimTime, rng: &mut RngStream) -> RachOutcome {
        if won {
            RachOutcome::Granted(now + self.connection_grant_delay)
        } else if attempt >= self.max_attempts {
            RachOutcome::Failed
        } else {
            let backoff = rng.uniform(0.0, self.backoff_window.as_secs_f64());
            RachOutcome::Retry(now + SimTime::from_secs_f64(backoff))
        }
    }
}

/// Each contender picks a preamble uniformly; returns whether each one's
/// preamble was unique in this opportunity.
pub fn resolve_opportunity(contenders: usize, preambles: u32, rng: &mut RngStream, picks: &mut Vec<u32>) -> Vec<bool> {
    let mut counts = vec![0u32; preambles as usize];
    picks.clear();
    for _ in 0..contenders {
        let p = rng.index(preambles as usize) as u32;
        counts[p as usize] += 1;
        picks.push(p);
    }
    picks.iter().map(|p| counts[*p as usize] == 1).collect()
}

/// Closed-form expected number of unique-preamble winners.
pub fn expected_winners(contenders: u32, preambles: u32) -> f64 {
    if contenders == 0 {
        return 0.0;
    }
    let m = f64::from(preambles);
    f64::from(contenders) * ((m - 1.0) / m).powi(contenders as i32 - 1)
}

/// Monte Carlo mean of unique-preamble winners over `trials` independent
/// opportunities. Trials are split into fixed chunks, each with its own
/// substream, so the result does not depend on the thread count.
pub fn simulate_winners(contenders: usize, preambles: u32, trials: usize, seed: u64) -> f64 {
    const CHUNK: usize = 500;
    let chunks: Vec<(usize, usize)> = (0..trials.div_ceil(CHUNK))
        .map(|c| (c, CHUNK.min(trials - c * CHUNK)))
        .collect();
    let sums = par::map(&chunks, |&(c, n)| winners_chunk(contenders, preambles, n, seed, c));
    sums.iter().sum::<u64>() as f64 / trials as f64
}

/// Sequential twin of [`simulate_winners`] (identical result).
pub fn simulate_winners_sequential(contenders: usize, preambles: u32, trials: usize, seed: u64) -> f64 {
    const CHUNK: usize = 500;
    let chunks: Vec<(usize, usize)> = (0..trials.div_ceil(CHUNK))
        .map(|c| (c, CHUNK.min(trials - c * CHUNK)))
        .collect();
    let sums = par::map_sequential(&chunks, |&(c, n)| winners_chunk(contenders, preambles, n, seed, c));
    sums.iter().sum::<u64>() as f64 / trials as f64
}

fn winners_chunk(contenders: usize, preambles: u32, n: usize, seed: u64, chunk: usize) -> u64 {
    let mut rng = RngStream::new(seed, &format!("rach-mc-{chunk}"));
    let mut picks = Vec::with_capacity(contenders);
    (0..n)
        .map(|_| {
            resolve_opportunity(contenders, preambles, &mut rng, &mut picks)
                .into_iter()
                .filter(|w| *w)
                .count() as u64
        })
        .sum()
}
