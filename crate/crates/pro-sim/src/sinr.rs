//! Instantaneous SINR and the predicted probability that a receiver's SINR
//! clears its threshold after a lookahead interval.
//!
//! All powers are normalized: a signal received over distance `d` carries
//! power `d^(-alpha)`, so the SINR at a receiver is
//! `d_sr^(-alpha) / (N + sum_i d_ir^(-alpha))` with the noise `N` expressed
//! in the same units. Transmit power and antenna gains cancel in this form.
//!
//! Prediction paths:
//! - Monte Carlo ([`predict_sinr_probability_mc`]): samples every distance
//!   from its Gaussian law (truncated to positive values) and, when an
//!   interferer carries an inclusion probability, thins it per sample with
//!   an independent Bernoulli draw.
//! - Quadrature ([`predict_sinr_probability_quadrature`]): analytic density
//!   transforms. The density of `y = x^(-alpha)` has closed form; sums of
//!   such terms are built by iterated convolution (practical up to three
//!   stochastic interferers) and the ratio density follows by one more
//!   integral.
//!
//! Distances are physically positive, so every Gaussian distance law is
//! truncated at [`MIN_DISTANCE_M`] and renormalized.

use crate::gaussian::GaussianSpec;
use crate::mobility::{link_probability, Kinematics};
use crate::quad::integrate_piecewise;
use rand::Rng;
use thiserror::Error;

/// Truncation floor for Gaussian distance laws, in meters.
pub const MIN_DISTANCE_M: f64 = 0.1;

/// Largest number of stochastic interferers the quadrature path will
/// convolve; larger scenes must use the Monte Carlo path.
pub const MAX_QUADRATURE_INTERFERERS: usize = 3;

/// Default inclusion threshold below which potential interferers are
/// dropped from a scene.
pub const DEFAULT_P_CUT: f64 = 0.01;

/// Per-axis absolute tolerance for the density integrals.
const QUAD_TOL: f64 = 1e-6;

/// Gaussian support is truncated at this many standard deviations.
const SUPPORT_SIGMAS: f64 = 7.0;

#[derive(Debug, Error)]
pub enum SinrError {
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("scene has {0} stochastic interferers; the quadrature path supports at most {MAX_QUADRATURE_INTERFERERS}, use the Monte Carlo path")]
    TooManyInterferers(usize),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

/// Path-loss / threshold / noise parameters.
///
/// `alpha` is the path-loss exponent (2..=5 by environment), `beta` the
/// linear SINR threshold for successful decoding, `noise` the normalized
/// noise power, and `mc_samples` the sample count for the Monte Carlo path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinrConfig {
    pub alpha: f64,
    pub beta: f64,
    pub noise: f64,
    pub mc_samples: usize,
}

impl Default for SinrConfig {
    /// The default noise floor makes the noise-limited decode range equal
    /// 250 m at the default exponent and threshold: `250^(-3) / 1`.
    fn default() -> Self {
        SinrConfig {
            alpha: 3.0,
            beta: 1.0,
            noise: 6.4e-8,
            mc_samples: 100_000,
        }
    }
}

impl SinrConfig {
    pub fn validate(&self) -> Result<(), SinrError> {
        if !(2.0..=5.0).contains(&self.alpha) {
            return Err(SinrError::InvalidScene(format!(
                "alpha must be in [2, 5], got {}",
                self.alpha
            )));
        }
        if self.beta <= 0.0 {
            return Err(SinrError::InvalidScene("beta must be positive".into()));
        }
        if self.noise < 0.0 {
            return Err(SinrError::InvalidScene("noise must be non-negative".into()));
        }
        if self.mc_samples == 0 {
            return Err(SinrError::InvalidScene("mc_samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// One potential interferer: the Gaussian law of its distance to the
/// receiver after the lookahead, and the probability that it is actually
/// within interference range then.
#[derive(Debug, Clone, Copy)]
pub struct InterfererSpec {
    pub distance: GaussianSpec,
    pub inclusion: f64,
}

impl InterfererSpec {
    /// An interferer that is always present.
    pub fn certain(distance: GaussianSpec) -> Self {
        InterfererSpec {
            distance,
            inclusion: 1.0,
        }
    }
}

/// Everything the prediction needs about one receiver: the sender-distance
/// law, the interferer laws, and optionally the expected neighbor count the
/// quadrature path uses to pick its convolution dimension.
#[derive(Debug, Clone)]
pub struct InterferenceScene {
    pub sender_distance: GaussianSpec,
    pub interferers: Vec<InterfererSpec>,
    pub count_weight: Option<f64>,
}

impl InterferenceScene {
    pub fn validate(&self) -> Result<(), SinrError> {
        if self.sender_distance.mean <= 0.0 {
            return Err(SinrError::InvalidScene(
                "sender distance mean must be positive".into(),
            ));
        }
        for (i, spec) in self.interferers.iter().enumerate() {
            if spec.distance.mean <= 0.0 {
                return Err(SinrError::InvalidScene(format!(
                    "interferer {i} distance mean must be positive"
                )));
            }
            if !(0.0..=1.0).contains(&spec.inclusion) {
                return Err(SinrError::InvalidScene(format!(
                    "interferer {i} inclusion must be in [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Instantaneous SINR `d_sr^(-alpha) / (N + sum d_ir^(-alpha))`.
pub fn instantaneous_sinr(
    d_sr: f64,
    interferer_dists: &[f64],
    cfg: &SinrConfig,
) -> Result<f64, SinrError> {
    if d_sr <= 0.0 {
        return Err(SinrError::NonPositiveDistance(d_sr));
    }
    let mut denom = cfg.noise;
    for &d in interferer_dists {
        if d <= 0.0 {
            return Err(SinrError::NonPositiveDistance(d));
        }
        denom += d.powf(-cfg.alpha);
    }
    let signal = d_sr.powf(-cfg.alpha);
    if denom == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(signal / denom)
    }
}

/// Monte Carlo estimate of `P{SINR >= beta}` after the lookahead.
///
/// Returns the estimate and its binomial standard error. Interferers with
/// `inclusion < 1` are present in each sample with that probability.
pub fn predict_sinr_probability_mc<R: Rng + ?Sized>(
    scene: &InterferenceScene,
    cfg: &SinrConfig,
    rng: &mut R,
) -> (f64, f64) {
    let n = cfg.mc_samples.max(1);
    let mut hits = 0usize;
    for _ in 0..n {
        let d_sr = scene.sender_distance.sample_truncated(MIN_DISTANCE_M, rng);
        let signal = d_sr.powf(-cfg.alpha);
        let mut denom = cfg.noise;
        for spec in &scene.interferers {
            let present = spec.inclusion >= 1.0 || rng.random::<f64>() < spec.inclusion;
            if present {
                let d = spec.distance.sample_truncated(MIN_DISTANCE_M, rng);
                denom += d.powf(-cfg.alpha);
            }
        }
        let ok = if denom == 0.0 {
            true // no noise, no interference: SINR is unbounded
        } else {
            signal / denom >= cfg.beta
        };
        if ok {
            hits += 1;
        }
    }
    let p = hits as f64 / n as f64;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    (p, se)
}

/// Quantile ladder (in standard deviations) used to place integration
/// panel edges where a transformed Gaussian law carries its mass.
const LADDER: [f64; 17] = [
    -7.0, -5.0, -4.0, -3.0, -2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 7.0,
];

/// Image of `mean + c * sd` under `x -> x^(-alpha)`, floored at the
/// distance truncation point.
fn y_at(law: &GaussianSpec, c: f64, alpha: f64) -> f64 {
    (law.mean + c * law.std_dev()).max(MIN_DISTANCE_M).powf(-alpha)
}

/// Support of `y = x^(-alpha)` when `x` follows `law` truncated to
/// `x > MIN_DISTANCE_M`, clipped to `SUPPORT_SIGMAS` standard deviations.
pub fn inverse_power_support(law: &GaussianSpec, alpha: f64) -> (f64, f64) {
    (
        y_at(law, SUPPORT_SIGMAS, alpha),
        y_at(law, -SUPPORT_SIGMAS, alpha),
    )
}

/// Ascending panel edges covering the support of `y = x^(-alpha)`, dense
/// where the density is. Intended for [`integrate_piecewise`].
pub fn inverse_power_edges(law: &GaussianSpec, alpha: f64) -> Vec<f64> {
    let mut edges: Vec<f64> = LADDER.iter().map(|&c| y_at(law, c, alpha)).collect();
    sort_dedup(&mut edges);
    edges
}

fn sort_dedup(edges: &mut Vec<f64>) {
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    edges.dedup_by(|a, b| (*a - *b).abs() <= f64::EPSILON * a.abs().max(b.abs()));
}

/// Panel edges for `shift + sum_i x_i^(-alpha)`: every law is placed at the
/// same ladder quantile, which brackets the diagonal of the joint bulk.
fn sum_edges(laws: &[&GaussianSpec], shift: f64, alpha: f64) -> Vec<f64> {
    let mut edges: Vec<f64> = LADDER
        .iter()
        .map(|&c| shift + laws.iter().map(|law| y_at(law, c, alpha)).sum::<f64>())
        .collect();
    sort_dedup(&mut edges);
    edges
}

/// Restricts `interior` edges to (a, b) and adds the endpoints.
fn clip_edges(interior: &[f64], a: f64, b: f64) -> Vec<f64> {
    let mut edges = Vec::with_capacity(interior.len() + 2);
    edges.push(a);
    edges.extend(interior.iter().copied().filter(|&e| e > a && e < b));
    edges.push(b);
    edges
}

/// Density of `y = x^(-alpha)` for `x ~ N(mu, sigma_sq)` truncated to
/// `x > MIN_DISTANCE_M` and renormalized.
///
/// Zero outside the image of the truncated support (in particular for
/// `y <= 0`).
pub fn inverse_power_pdf(y: f64, mu: f64, sigma_sq: f64, alpha: f64) -> f64 {
    if y <= 0.0 || sigma_sq <= 0.0 {
        return 0.0;
    }
    let law = GaussianSpec::new(mu, sigma_sq);
    let x = y.powf(-1.0 / alpha);
    if x <= MIN_DISTANCE_M {
        return 0.0;
    }
    let mass = law.mass_above(MIN_DISTANCE_M);
    if mass <= 0.0 {
        return 0.0;
    }
    let jacobian = y.powf(-(1.0 + alpha) / alpha) / alpha;
    jacobian * law.pdf(x) / mass
}

/// Stochastic/deterministic split of a scene's interference terms.
///
/// Zero-variance laws contribute an exact `mean^(-alpha)` shift alongside
/// the noise; the rest get convolved.
struct InterferenceTerms<'a> {
    stochastic: Vec<&'a GaussianSpec>,
    shift: f64,
}

fn split_terms<'a>(
    interferers: &'a [GaussianSpec],
    noise: f64,
    alpha: f64,
) -> InterferenceTerms<'a> {
    let mut shift = noise;
    let mut stochastic = Vec::new();
    for law in interferers {
        if law.is_degenerate() {
            shift += law.mean.max(MIN_DISTANCE_M).powf(-alpha);
        } else {
            stochastic.push(law);
        }
    }
    InterferenceTerms { stochastic, shift }
}

/// Density of `z = N + sum_i x_i^(-alpha)` with each `x_i` following its
/// Gaussian law, by iterated convolution of the single-term densities.
///
/// The noise enters as a deterministic shift. Supports at most
/// [`MAX_QUADRATURE_INTERFERERS`] non-degenerate laws.
pub fn interference_sum_pdf(
    z: f64,
    interferers: &[GaussianSpec],
    noise: f64,
    alpha: f64,
) -> Result<f64, SinrError> {
    let terms = split_terms(interferers, noise, alpha);
    let m = terms.stochastic.len();
    if m == 0 {
        return Err(SinrError::InvalidScene(
            "no stochastic interference term; the sum is deterministic".into(),
        ));
    }
    if m > MAX_QUADRATURE_INTERFERERS {
        return Err(SinrError::TooManyInterferers(m));
    }
    Ok(convolved_pdf(z - terms.shift, &terms.stochastic, alpha))
}

/// Density of `sum_i y_i` at `s` where `y_i = x_i^(-alpha)`, laws given in
/// `laws` (all non-degenerate), via nested quadrature.
fn convolved_pdf(s: f64, laws: &[&GaussianSpec], alpha: f64) -> f64 {
    match laws {
        [] => 0.0,
        [only] => inverse_power_pdf(s, only.mean, only.variance, alpha),
        [rest @ .., last] => {
            let (y_lo, y_hi) = inverse_power_support(last, alpha);
            // Remaining mass must fit into the rest of the convolution.
            let (rest_lo, rest_hi) = rest.iter().fold((0.0, 0.0), |(lo, hi), law| {
                let (l, h) = inverse_power_support(law, alpha);
                (lo + l, hi + h)
            });
            let a = y_lo.max(s - rest_hi);
            let b = y_hi.min(s - rest_lo);
            if !(b > a) {
                return 0.0;
            }
            let edges = clip_edges(&inverse_power_edges(last, alpha), a, b);
            integrate_piecewise(
                |y| {
                    inverse_power_pdf(y, last.mean, last.variance, alpha)
                        * convolved_pdf(s - y, rest, alpha)
                },
                &edges,
                QUAD_TOL,
            )
        }
    }
}

/// Interference terms the quadrature path actually uses for a scene.
///
/// When `count_weight` is present, its nearest integer picks how many
/// interferers participate (the highest-inclusion ones); otherwise every
/// listed interferer does.
fn quadrature_terms(scene: &InterferenceScene) -> Vec<GaussianSpec> {
    match scene.count_weight {
        None => scene.interferers.iter().map(|s| s.distance).collect(),
        Some(w) => {
            let k = (w.round().max(0.0) as usize).min(scene.interferers.len());
            let mut order: Vec<usize> = (0..scene.interferers.len()).collect();
            order.sort_by(|&a, &b| {
                scene.interferers[b]
                    .inclusion
                    .partial_cmp(&scene.interferers[a].inclusion)
                    .unwrap()
                    .then(a.cmp(&b))
            });
            order
                .into_iter()
                .take(k)
                .map(|i| scene.interferers[i].distance)
                .collect()
        }
    }
}

/// Density of the predicted SINR `w = y / z` at `w`.
///
/// `y` is the received-signal term from the sender-distance law and `z` the
/// noise-plus-interference sum; the two are independent, so
/// `f_W(w) = integral |z| f_Y(wz) f_Z(z) dz` over the positive support of
/// `f_Z`.
pub fn sinr_ratio_pdf(w: f64, scene: &InterferenceScene, cfg: &SinrConfig) -> Result<f64, SinrError> {
    scene.validate()?;
    if w <= 0.0 {
        return Ok(0.0);
    }
    let sender = scene.sender_distance;
    if sender.is_degenerate() {
        return Err(SinrError::InvalidScene(
            "sender distance law is degenerate; the ratio has no density".into(),
        ));
    }
    let interferers = quadrature_terms(scene);
    let terms = split_terms(&interferers, cfg.noise, cfg.alpha);
    let m = terms.stochastic.len();
    if m > MAX_QUADRATURE_INTERFERERS {
        return Err(SinrError::TooManyInterferers(m));
    }
    let (y_lo, y_hi) = inverse_power_support(&sender, cfg.alpha);
    if m == 0 {
        // Deterministic denominator: f_W(w) = z0 * f_Y(z0 w).
        let z0 = terms.shift;
        if z0 <= 0.0 {
            return Err(SinrError::InvalidScene(
                "scene has neither noise nor interference; the ratio is unbounded".into(),
            ));
        }
        return Ok(z0 * inverse_power_pdf(z0 * w, sender.mean, sender.variance, cfg.alpha));
    }
    let (sum_lo, sum_hi) = terms.stochastic.iter().fold((0.0, 0.0), |(lo, hi), law| {
        let (l, h) = inverse_power_support(law, cfg.alpha);
        (lo + l, hi + h)
    });
    let z_lo = (terms.shift + sum_lo).max(y_lo / w);
    let z_hi = (terms.shift + sum_hi).min(y_hi / w);
    if !(z_hi > z_lo) {
        return Ok(0.0);
    }
    let stochastic = terms.stochastic;
    // Edges where either factor carries mass: the interference-sum bulk and
    // the image of the sender bulk under z = y / w.
    let mut interior = sum_edges(&stochastic, terms.shift, cfg.alpha);
    interior.extend(
        inverse_power_edges(&sender, cfg.alpha)
            .iter()
            .map(|y| y / w),
    );
    sort_dedup(&mut interior);
    let edges = clip_edges(&interior, z_lo, z_hi);
    Ok(integrate_piecewise(
        |z| {
            z * inverse_power_pdf(z * w, sender.mean, sender.variance, cfg.alpha)
                * convolved_pdf(z - terms.shift, &stochastic, cfg.alpha)
        },
        &edges,
        QUAD_TOL,
    ))
}

/// Quadrature evaluation of `P{SINR >= beta} = 1 - integral_0^beta f_W`,
/// clamped to [0, 1].
///
/// Degenerate (zero-variance) laws reduce to exact indicator or CDF
/// evaluations instead of densities.
pub fn predict_sinr_probability_quadrature(
    scene: &InterferenceScene,
    cfg: &SinrConfig,
) -> Result<f64, SinrError> {
    scene.validate()?;
    let sender = scene.sender_distance;
    let interferers = quadrature_terms(scene);
    let terms = split_terms(&interferers, cfg.noise, cfg.alpha);
    let m = terms.stochastic.len();
    if m > MAX_QUADRATURE_INTERFERERS {
        return Err(SinrError::TooManyInterferers(m));
    }

    if sender.is_degenerate() {
        let y0 = sender.mean.max(MIN_DISTANCE_M).powf(-cfg.alpha);
        let z_cap = y0 / cfg.beta; // success iff z <= y0 / beta
        if m == 0 {
            return Ok(if terms.shift <= z_cap { 1.0 } else { 0.0 });
        }
        let (sum_lo, sum_hi) = terms.stochastic.iter().fold((0.0, 0.0), |(lo, hi), law| {
            let (l, h) = inverse_power_support(law, cfg.alpha);
            (lo + l, hi + h)
        });
        let a = terms.shift + sum_lo;
        let b = (terms.shift + sum_hi).min(z_cap);
        let stochastic = terms.stochastic;
        let edges = clip_edges(&sum_edges(&stochastic, terms.shift, cfg.alpha), a, b);
        let p = integrate_piecewise(
            |z| convolved_pdf(z - terms.shift, &stochastic, cfg.alpha),
            &edges,
            QUAD_TOL,
        );
        return Ok(p.clamp(0.0, 1.0));
    }

    if m == 0 {
        // Deterministic denominator: success iff y >= beta * z0, i.e.
        // x <= (beta * z0)^(-1/alpha) under the truncated law.
        let z0 = terms.shift;
        if z0 <= 0.0 {
            return Ok(1.0); // no noise, no interference
        }
        let x_cap = (cfg.beta * z0).powf(-1.0 / cfg.alpha);
        let mass = sender.mass_above(MIN_DISTANCE_M);
        if mass <= 0.0 {
            return Ok(0.0);
        }
        let p = (sender.cdf(x_cap) - sender.cdf(MIN_DISTANCE_M)).max(0.0) / mass;
        return Ok(p.clamp(0.0, 1.0));
    }

    // The ratio density vanishes below y_lo / z_hi; start the failure
    // integral there rather than at zero.
    let (y_lo, _) = inverse_power_support(&sender, cfg.alpha);
    let z_center = terms.shift
        + terms
            .stochastic
            .iter()
            .map(|law| y_at(law, 0.0, cfg.alpha))
            .sum::<f64>();
    let z_hi = terms.shift
        + terms
            .stochastic
            .iter()
            .map(|law| inverse_power_support(law, cfg.alpha).1)
            .sum::<f64>();
    let w_lo = 0.5 * y_lo / z_hi.max(f64::MIN_POSITIVE);
    // Ratio-bulk edges: sender quantiles against the central interference
    // level and vice versa.
    let mut interior: Vec<f64> = inverse_power_edges(&sender, cfg.alpha)
        .iter()
        .map(|y| y / z_center)
        .collect();
    interior.extend(
        sum_edges(&terms.stochastic, terms.shift, cfg.alpha)
            .iter()
            .map(|z| y_at(&sender, 0.0, cfg.alpha) / z),
    );
    sort_dedup(&mut interior);
    let edges = clip_edges(&interior, w_lo.min(cfg.beta), cfg.beta);
    let fail = integrate_piecewise(
        |w| sinr_ratio_pdf(w, scene, cfg).unwrap_or(0.0),
        &edges,
        QUAD_TOL,
    );
    Ok((1.0 - fail).clamp(0.0, 1.0))
}

/// Builds the interference scene a sender uses to score one candidate
/// receiver.
///
/// Every vehicle in `world` other than the sender and receiver contributes
/// its post-lookahead distance law, weighted by its link probability to the
/// receiver; entries below `p_cut` are dropped. `count_weight` carries the
/// expected neighbor count over all contributors, including dropped ones.
pub fn effective_interference_scene(
    receiver: &Kinematics,
    world: &[(usize, Kinematics)],
    sender_id: usize,
    receiver_id: usize,
    sender: &Kinematics,
    dt: f64,
    range: f64,
    p_cut: f64,
) -> InterferenceScene {
    let d_sr = sender.position.distance(receiver.position);
    let sender_variance =
        (sender.sigma * sender.sigma + receiver.sigma * receiver.sigma) * dt.powi(3);
    let mut interferers = Vec::new();
    let mut count_weight = 0.0;
    for (id, kin) in world {
        if *id == sender_id || *id == receiver_id {
            continue;
        }
        let p_link = link_probability(kin, receiver, dt, range);
        count_weight += p_link;
        if p_link < p_cut {
            continue;
        }
        let d = kin.position.distance(receiver.position).max(MIN_DISTANCE_M);
        let variance = (kin.sigma * kin.sigma + receiver.sigma * receiver.sigma) * dt.powi(3);
        interferers.push(InterfererSpec {
            distance: GaussianSpec::new(d, variance),
            inclusion: p_link,
        });
    }
    InterferenceScene {
        sender_distance: GaussianSpec::new(d_sr.max(MIN_DISTANCE_M), sender_variance),
        interferers,
        count_weight: Some(count_weight),
    }
}
