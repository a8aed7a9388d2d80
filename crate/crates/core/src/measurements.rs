//! Mean square errors of concrete measurements followed by the Bayes
//! posterior-mean estimator.
//!
//! * Photon counting (SPADE in the imaging picture): outcome `k` with
//!   Poisson likelihood `e^{-q²/2}(q²/2)ᵏ/k!`.
//! * Position homodyne (direct imaging): outcome `x` with likelihood
//!   `(e^{-(x-q)²} + e^{-(x+q)²})/(2√π)`, even in `x`.
//!
//! Both MSEs are computed in the non-cancelling form
//! `Σ_outcomes ∫ P(q) P(o|q) (q - Π_o)² dq` after the posterior means `Π_o`
//! are known. [`mc_mse`] gives an independent sampling estimate.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{check_finite, Error, Result};
use crate::priors::Prior;
use crate::quadrature::{composite_nodes, GaussLegendre, QuadratureSpec};

/// Prior-averaged probability of a photon count above `k_max` that the
/// automatic policy accepts.
pub const PNR_AUTO_TAIL: f64 = 1e-10;

/// Largest tail above a caller-supplied `k_max` before it is rejected.
pub const PNR_MAX_TAIL: f64 = 1e-8;

/// Width (in `q` or `x`) of the first quadrature pass.
const PANEL_WIDTH: f64 = 0.5;

/// Standard deviation of each homodyne likelihood component.
const HOMODYNE_WIDTH: f64 = std::f64::consts::FRAC_1_SQRT_2;

const INV_2_SQRT_PI: f64 = 0.282_094_791_773_878_14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measurement {
    /// Photon-number resolving detection (SPADE).
    Pnr,
    /// Position-quadrature homodyne detection (direct imaging).
    Homodyne,
}

/// A posterior mean together with a flag set when the outcome has zero
/// marginal probability in floating point and the prior mean was returned
/// instead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorMean {
    pub value: f64,
    pub degenerate: bool,
}

/// Quadrature nodes `(q, w·P(q))` on the prior support.
fn prior_nodes(prior: &Prior, spec: &QuadratureSpec, panels: usize) -> Vec<(f64, f64)> {
    let (lo, hi) = prior.support_with(spec.domain_cut);
    let rule = GaussLegendre::new(spec.nodes_per_panel);
    composite_nodes(lo, hi, panels, &rule)
        .into_iter()
        .map(|(q, w)| (q, w * prior.ln_pdf_unchecked(q).exp()))
        .collect()
}

fn base_panels(width: f64) -> usize {
    ((width / PANEL_WIDTH).ceil() as usize).max(4)
}

fn half_line_only(prior: &Prior) -> Result<()> {
    if prior.is_half_line() {
        Ok(())
    } else {
        Err(Error::Unsupported(
            "a full-line prior in the two-source measurement models",
        ))
    }
}

/// `ln P(k | q)` for the photon-count likelihood, `λ = q²/2`.
fn ln_poisson(k: usize, lambda: f64, ln_fact: &[f64]) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -lambda + k as f64 * lambda.ln() - ln_fact[k]
}

/// Photon counting with outcomes `0..=k_max`; every count above `k_max` is
/// merged into one extra outcome with its own posterior mean, so the
/// truncated model is still a valid measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct PnrModel {
    prior: Prior,
    k_max: usize,
    tail_mass: f64,
    /// `Π_k` for `k ≤ k_max`, then the merged tail outcome.
    means: Vec<PosteriorMean>,
    marginals: Vec<f64>,
    mse: f64,
}

/// Per-outcome sums `(Σ wP p_k, Σ wP q p_k)` up to `k_cap`, with
/// `p_k = P(k|q)`.
fn pnr_sums(nodes: &[(f64, f64)], k_cap: usize, ln_fact: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut n0 = vec![0.0; k_cap + 1];
    let mut n1 = vec![0.0; k_cap + 1];
    for &(q, wp) in nodes {
        if wp == 0.0 {
            continue;
        }
        let lambda = 0.5 * q * q;
        for k in 0..=k_cap {
            let p = wp * ln_poisson(k, lambda, ln_fact).exp();
            n0[k] += p;
            n1[k] += p * q;
        }
    }
    (n0, n1)
}

impl PnrModel {
    /// With `k_max = None` the smallest `k_max` whose prior-averaged tail is
    /// below [`PNR_AUTO_TAIL`] is used. A supplied `k_max` whose tail
    /// exceeds [`PNR_MAX_TAIL`] is rejected.
    pub fn new(prior: &Prior, k_max: Option<usize>, spec: &QuadratureSpec) -> Result<Self> {
        half_line_only(prior)?;
        spec.validate()?;
        let (lo, hi) = prior.support_with(spec.domain_cut);
        let lambda_hi = 0.5 * hi * hi;
        // counts beyond this are below e^{-50} for every q in the support
        let k_cap = (lambda_hi + 10.0 * lambda_hi.sqrt() + 50.0).ceil() as usize;
        let k_cap = k_cap.max(k_max.unwrap_or(0) + 1);
        let ln_fact = crate::fock::ln_factorials(k_cap);

        let mut panels = base_panels(hi - lo);
        let mut prev: Option<Self> = None;
        loop {
            let nodes = prior_nodes(prior, spec, panels);
            let model = Self::from_nodes(prior, &nodes, k_max, k_cap, &ln_fact)?;
            if let Some(p) = prev {
                let change = (model.mse - p.mse).abs();
                if change <= spec.rel_tol * model.mse.abs() || change == 0.0 {
                    return Ok(model);
                }
                if panels >= spec.max_panels {
                    return Err(Error::QuadratureNonConvergence {
                        best: model.mse,
                        error: change,
                    });
                }
            }
            prev = Some(model);
            panels *= 2;
        }
    }

    fn from_nodes(
        prior: &Prior,
        nodes: &[(f64, f64)],
        k_max: Option<usize>,
        k_cap: usize,
        ln_fact: &[f64],
    ) -> Result<Self> {
        let (n0, n1) = pnr_sums(nodes, k_cap, ln_fact);
        // suffix sums give the tail mass above each k
        let mut tail = vec![0.0; k_cap + 2];
        for k in (0..=k_cap).rev() {
            tail[k] = tail[k + 1] + n0[k];
        }
        let k_max = match k_max {
            Some(k) => {
                if tail[k + 1] > PNR_MAX_TAIL {
                    return Err(Error::PnrTailTooLarge {
                        k_max: k,
                        tail: tail[k + 1],
                    });
                }
                k
            }
            None => (0..=k_cap).find(|&k| tail[k + 1] < PNR_AUTO_TAIL).unwrap_or(k_cap),
        };
        let prior_mean = prior.moments().mean;
        let mut marginals: Vec<f64> = n0[..=k_max].to_vec();
        let mut firsts: Vec<f64> = n1[..=k_max].to_vec();
        marginals.push(tail[k_max + 1]);
        firsts.push(n1[k_max + 1..].iter().sum());
        let means: Vec<PosteriorMean> = marginals
            .iter()
            .zip(&firsts)
            .map(|(&m0, &m1)| {
                if m0 > 0.0 && m0.is_normal() {
                    PosteriorMean {
                        value: m1 / m0,
                        degenerate: false,
                    }
                } else {
                    PosteriorMean {
                        value: prior_mean,
                        degenerate: true,
                    }
                }
            })
            .collect();
        let mut mse = 0.0;
        for &(q, wp) in nodes {
            if wp == 0.0 {
                continue;
            }
            let lambda = 0.5 * q * q;
            for (k, pm) in means.iter().enumerate().take(k_max + 1) {
                let p = ln_poisson(k, lambda, ln_fact).exp();
                let e = q - pm.value;
                mse += wp * p * e * e;
            }
            let rest: f64 = (k_max + 1..=k_cap).map(|k| ln_poisson(k, lambda, ln_fact).exp()).sum();
            let e = q - means[k_max + 1].value;
            mse += wp * rest * e * e;
        }
        Ok(Self {
            prior: *prior,
            k_max,
            tail_mass: tail[k_max + 1],
            means,
            marginals,
            mse,
        })
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Prior-averaged probability of a count above `k_max`.
    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn mse(&self) -> f64 {
        self.mse
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    /// Marginal probability of outcome `k`; counts above `k_max` share the
    /// merged outcome.
    pub fn marginal(&self, k: usize) -> f64 {
        self.marginals[k.min(self.k_max + 1)]
    }

    /// `Π_k`; counts above `k_max` share the merged outcome's mean.
    pub fn posterior_mean(&self, k: usize) -> PosteriorMean {
        self.means[k.min(self.k_max + 1)]
    }
}

/// Photon-counting MSE with the posterior-mean estimator.
pub fn mse_pnr(prior: &Prior, k_max: Option<usize>, spec: &QuadratureSpec) -> Result<f64> {
    PnrModel::new(prior, k_max, spec).map(|m| m.mse())
}

/// Closed form of the photon-counting MSE under the half-Gaussian prior:
/// `σ² - (2σ²/(π√(σ²+1))) [σ asin(σ/√(σ²+1)) + 1]`.
pub fn mse_pnr_closed_form(prior: &Prior) -> Result<f64> {
    match prior {
        Prior::HalfGaussian(p) => {
            let s = p.sigma();
            let root = (s * s + 1.0).sqrt();
            Ok(s * s - 2.0 * s * s / (PI * root) * (s * (s / root).asin() + 1.0))
        }
        _ => Err(Error::Unsupported("the closed-form photon-counting MSE")),
    }
}

/// `Π_k` for a single count, by direct quadrature.
pub fn posterior_mean_pnr(k: usize, prior: &Prior, spec: &QuadratureSpec) -> Result<PosteriorMean> {
    half_line_only(prior)?;
    spec.validate()?;
    let (lo, hi) = prior.support_with(spec.domain_cut);
    let ln_fact = crate::fock::ln_factorials(k);
    let nodes = prior_nodes(prior, spec, 4 * base_panels(hi - lo));
    // rescale by the largest log-term so high counts do not underflow
    let logs: Vec<f64> = nodes
        .iter()
        .map(|&(q, wp)| wp.ln() + ln_poisson(k, 0.5 * q * q, &ln_fact))
        .collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Ok(PosteriorMean {
            value: prior.moments().mean,
            degenerate: true,
        });
    }
    let (mut n0, mut n1) = (0.0, 0.0);
    for (&(q, _), l) in nodes.iter().zip(&logs) {
        let p = (l - top).exp();
        n0 += p;
        n1 += p * q;
    }
    Ok(PosteriorMean {
        value: n1 / n0,
        degenerate: false,
    })
}

/// Homodyne likelihood `P(x|q)`.
pub fn homodyne_likelihood(x: f64, q: f64) -> f64 {
    let a = x - q;
    let b = x + q;
    ((-a * a).exp() + (-b * b).exp()) * INV_2_SQRT_PI
}

/// Position homodyne with a converged tensor-product Gauss-Legendre rule in
/// `(x, q)`; the outer integral is folded onto `x ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct HomodyneModel {
    prior: Prior,
    q_nodes: Vec<(f64, f64)>,
    mse: f64,
}

fn homodyne_mse(prior: &Prior, q_nodes: &[(f64, f64)], x_nodes: &[(f64, f64)]) -> f64 {
    let prior_mean = prior.moments().mean;
    let mut total = 0.0;
    let mut lik = vec![0.0; q_nodes.len()];
    for &(x, wx) in x_nodes {
        let (mut n0, mut n1) = (0.0, 0.0);
        for (l, &(q, wp)) in lik.iter_mut().zip(q_nodes) {
            *l = wp * homodyne_likelihood(x, q);
            n0 += *l;
            n1 += *l * q;
        }
        let pm = if n0 > 0.0 && n0.is_normal() {
            n1 / n0
        } else {
            prior_mean
        };
        let mut acc = 0.0;
        for (l, &(q, _)) in lik.iter().zip(q_nodes) {
            let e = q - pm;
            acc += l * e * e;
        }
        total += wx * acc;
    }
    2.0 * total
}

impl HomodyneModel {
    pub fn new(prior: &Prior, spec: &QuadratureSpec) -> Result<Self> {
        half_line_only(prior)?;
        spec.validate()?;
        let (lo, hi) = prior.support_with(spec.domain_cut);
        let x_hi = hi + spec.domain_cut * HOMODYNE_WIDTH;
        let rule = GaussLegendre::new(spec.nodes_per_panel);
        let mut q_panels = base_panels(hi - lo);
        let mut x_panels = base_panels(x_hi);
        let mut prev: Option<f64> = None;
        loop {
            let q_nodes = prior_nodes(prior, spec, q_panels);
            let x_nodes = composite_nodes(0.0, x_hi, x_panels, &rule);
            let mse = homodyne_mse(prior, &q_nodes, &x_nodes);
            if let Some(p) = prev {
                let change = (mse - p).abs();
                if change <= spec.rel_tol * mse.abs() || change == 0.0 {
                    return Ok(Self {
                        prior: *prior,
                        q_nodes,
                        mse,
                    });
                }
                if q_panels.max(x_panels) >= spec.max_panels {
                    return Err(Error::QuadratureNonConvergence {
                        best: mse,
                        error: change,
                    });
                }
            }
            prev = Some(mse);
            q_panels *= 2;
            x_panels *= 2;
        }
    }

    pub fn mse(&self) -> f64 {
        self.mse
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    /// `Π_x`, evaluated at `|x|` so that `Π_x = Π_{-x}` holds exactly.
    pub fn posterior_mean(&self, x: f64) -> PosteriorMean {
        let x = x.abs();
        let (mut n0, mut n1) = (0.0, 0.0);
        for &(q, wp) in &self.q_nodes {
            let l = wp * homodyne_likelihood(x, q);
            n0 += l;
            n1 += l * q;
        }
        if n0 > 0.0 && n0.is_normal() {
            PosteriorMean {
                value: n1 / n0,
                degenerate: false,
            }
        } else {
            PosteriorMean {
                value: self.prior.moments().mean,
                degenerate: true,
            }
        }
    }
}

/// Homodyne MSE with the posterior-mean estimator.
pub fn mse_homodyne(prior: &Prior, spec: &QuadratureSpec) -> Result<f64> {
    HomodyneModel::new(prior, spec).map(|m| m.mse())
}

/// `Π_x` for a single homodyne outcome.
pub fn posterior_mean_homodyne(x: f64, prior: &Prior, spec: &QuadratureSpec) -> Result<PosteriorMean> {
    check_finite("x", x)?;
    Ok(HomodyneModel::new(prior, spec)?.posterior_mean(x))
}

/// Smallest sample count accepted by [`mc_mse`].
pub const MC_MIN_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Monte Carlo MSE: draw `q` from the prior, an outcome from the
/// likelihood, apply the posterior-mean estimator and average the squared
/// error. The stream is a ChaCha8 generator seeded from `seed`, so reruns
/// are bit-identical.
pub fn mc_mse(
    measurement: Measurement,
    prior: &Prior,
    n_samples: usize,
    seed: u64,
    spec: &QuadratureSpec,
) -> Result<McEstimate> {
    if n_samples < MC_MIN_SAMPLES {
        return Err(Error::InvalidParameter {
            name: "n_samples",
            value: n_samples as f64,
            reason: "at least 10^4 samples are required",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut record = |e2: f64| {
        sum += e2;
        sum_sq += e2 * e2;
    };
    match measurement {
        Measurement::Pnr => {
            let model = PnrModel::new(prior, None, spec)?;
            for _ in 0..n_samples {
                let q = prior.sample(&mut rng);
                let lambda = 0.5 * q * q;
                let k = if lambda > 0.0 {
                    Poisson::new(lambda)
                        .map_err(|_| Error::InvalidParameter {
                            name: "lambda",
                            value: lambda,
                            reason: "Poisson rate out of range",
                        })?
                        .sample(&mut rng) as usize
                } else {
                    0
                };
                let e = q - model.posterior_mean(k).value;
                record(e * e);
            }
        }
        Measurement::Homodyne => {
            let model = HomodyneModel::new(prior, spec)?;
            for _ in 0..n_samples {
                let q = prior.sample(&mut rng);
                let z: f64 = StandardNormal.sample(&mut rng);
                let sign = if rand::RngExt::random_bool(&mut rng, 0.5) {
                    1.0
                } else {
                    -1.0
                };
                let x = sign * q + HOMODYNE_WIDTH * z;
                let e = q - model.posterior_mean(x).value;
                record(e * e);
            }
        }
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok(McEstimate {
        estimate: mean,
        std_error: (var / n).sqrt(),
        samples: n_samples,
    })
}
