//! Packet-queue-length forecast.
//!
//! Over a lookahead of `dt` seconds split into transmission intervals of
//! `t_m` seconds, at most one vehicle transmits per interval: either a
//! neighbor of the receiver (its queue grows) or the receiver itself (its
//! queue drains). With per-vehicle generation probability `p0` and `n`
//! neighbors, an interval carries a neighbor packet with probability
//! `1 - (1 - p0)^n` and is idle with probability `(1 - p0)^(n + 1)`.
//!
//! [`predict_queue_probability`] evaluates the closed-form probability that
//! the queue stays within capacity: the expected number of busy intervals
//! is rounded to `n_act`, and the binomial-style sum
//! `sum_{i<=L} C(n_act, i) * (1 - (1-p0)^n)^i * (1-p0)^(n_act - i)` with
//! `L = floor((n_act + b) / 2)` bounds the net queue growth by the
//! headroom `b`. The two factors only form a true binomial for `n = 1`;
//! the formula is kept verbatim and clamped, and [`queue_mc_oracle`]
//! simulates the same interval process so the gap is measurable instead of
//! hidden.

use rand::Rng;
use statrs::function::gamma::ln_gamma;

/// Queue-forecast parameters: generation probability per interval,
/// interval length, queue capacity, and lookahead.
#[derive(Debug, Clone, Copy)]
pub struct QueueConfig {
    pub p0: f64,
    /// Transmission interval t_m, seconds.
    pub t_m: f64,
    /// Maximum queue length M, packets.
    pub max_queue: usize,
    /// Lookahead dt, seconds (>= t_m).
    pub dt: f64,
}

impl QueueConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.p0) {
            return Err(format!("p0 must be in [0, 1], got {}", self.p0));
        }
        if self.t_m <= 0.0 {
            return Err("t_m must be positive".into());
        }
        if self.max_queue == 0 {
            return Err("max_queue must be >= 1".into());
        }
        if self.dt < self.t_m {
            return Err("dt must be >= t_m".into());
        }
        Ok(())
    }

    /// Number of transmission intervals in the lookahead.
    pub fn intervals(&self) -> f64 {
        self.dt / self.t_m
    }
}

/// Neighbor-count forecast for the lookahead: one expected count per
/// transmission interval, or a single average for all of them.
#[derive(Debug, Clone)]
pub enum NeighborForecast {
    PerInterval(Vec<f64>),
    Average(f64),
}

impl NeighborForecast {
    /// Mean neighbor count across the lookahead.
    pub fn average(&self) -> f64 {
        match self {
            NeighborForecast::Average(n) => *n,
            NeighborForecast::PerInterval(v) => {
                if v.is_empty() {
                    0.0
                } else {
                    v.iter().sum::<f64>() / v.len() as f64
                }
            }
        }
    }
}

/// Receiver-side inputs: current queue length and the neighbor forecast.
#[derive(Debug, Clone)]
pub struct QueueForecastInput {
    pub current_len: usize,
    pub neighbors: NeighborForecast,
}

/// Probability that at least one of `n` neighbors generates a packet in an
/// interval: `1 - (1 - p0)^n`. `n` may be fractional (an expected count).
pub fn prob_any_neighbor_transmits(n: f64, p0: f64) -> f64 {
    debug_assert!(n >= 0.0);
    1.0 - (1.0 - p0).powf(n)
}

/// Probability that neither the receiver nor any of its `n` neighbors
/// transmits in an interval: `(1 - p0)^(n + 1)`.
pub fn prob_idle_interval(n: f64, p0: f64) -> f64 {
    debug_assert!(n >= 0.0);
    (1.0 - p0).powf(n + 1.0)
}

/// Expected number of busy transmission intervals in the lookahead:
/// the interval count minus the expected idle intervals.
///
/// Per-interval neighbor counts are honored when provided (the forecast
/// then defines the interval count); otherwise the average count is used
/// for every interval.
pub fn active_interval_count(neighbors: &NeighborForecast, cfg: &QueueConfig) -> f64 {
    match neighbors {
        NeighborForecast::PerInterval(counts) => {
            let idle: f64 = counts.iter().map(|&n| prob_idle_interval(n, cfg.p0)).sum();
            counts.len() as f64 - idle
        }
        NeighborForecast::Average(n) => {
            let n_inter = cfg.intervals();
            n_inter - n_inter * prob_idle_interval(*n, cfg.p0)
        }
    }
}

/// ln C(n, k) for the closed-form sum.
fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Closed-form probability that the receiver's queue stays within capacity
/// over the lookahead, clamped to [0, 1].
pub fn predict_queue_probability(input: &QueueForecastInput, cfg: &QueueConfig) -> f64 {
    debug_assert!(input.current_len <= cfg.max_queue);
    let headroom = (cfg.max_queue - input.current_len.min(cfg.max_queue)) as u64;
    let n_act = active_interval_count(&input.neighbors, cfg).round().max(0.0) as u64;
    let n_bar = input.neighbors.average();
    let q = prob_any_neighbor_transmits(n_bar, cfg.p0);
    let r = 1.0 - cfg.p0;
    let limit = (n_act + headroom) / 2; // integer floor
    let top = limit.min(n_act);

    let mut sum = 0.0;
    for i in 0..=top {
        let term = if q == 0.0 {
            if i == 0 {
                r.powf(n_act as f64)
            } else {
                0.0
            }
        } else if r == 0.0 {
            if i == n_act {
                q.powf(n_act as f64)
            } else {
                0.0
            }
        } else {
            (ln_choose(n_act, i) + i as f64 * q.ln() + (n_act - i) as f64 * r.ln()).exp()
        };
        sum += term;
    }
    sum.clamp(0.0, 1.0)
}

/// Monte Carlo reference for [`predict_queue_probability`].
///
/// Simulates the interval model behind the closed form: `n_act` busy
/// intervals, each carrying a neighbor packet with probability
/// `1 - (1 - p0)^n` (queue grows) and a receiver transmission otherwise
/// (queue drains, floored at empty). A trial succeeds when the queue ends
/// the lookahead within capacity. For a single neighbor the closed form is
/// an exact binomial tail and the oracle converges to it; elsewhere the
/// difference measures the closed form's unnormalized probability factors.
pub fn queue_mc_oracle<R: Rng + ?Sized>(
    input: &QueueForecastInput,
    cfg: &QueueConfig,
    rng: &mut R,
    trials: usize,
) -> f64 {
    let n_act = active_interval_count(&input.neighbors, cfg).round().max(0.0) as u64;
    let n_bar = input.neighbors.average();
    let q = prob_any_neighbor_transmits(n_bar, cfg.p0);
    let start = input.current_len.min(cfg.max_queue);
    let mut ok = 0usize;
    for _ in 0..trials {
        let mut len = start;
        for _ in 0..n_act {
            if rng.random::<f64>() < q {
                len += 1;
            } else {
                len = len.saturating_sub(1);
            }
        }
        if len <= cfg.max_queue {
            ok += 1;
        }
    }
    ok as f64 / trials as f64
}
