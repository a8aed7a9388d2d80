//! Prior densities on the separation parameter `q_α`.
//!
//! The displaced half-Gaussian is a normal `N(μ, σ²)` truncated to `q ≥ 0`.
//! Its moments depend on `z = μ/σ` through the inverse Mills ratio
//! `λ(z) = φ(z)/Φ(z)`; for `z < -3` the ratio and the variance factor
//! `1 - zλ - λ²` are evaluated from the Mills-ratio continued fraction, which
//! avoids the cancellation of the direct form deep in the left tail.

use std::f64::consts::{PI, SQRT_2};

use rand::RngExt;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{check_finite, check_positive, Error, Result};
use crate::quadrature::DECAY_SCALES;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this standardized location the continued-fraction branch is used.
const TAIL_SWITCH: f64 = -3.0;
const CF_DEPTH: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    /// Raw second moment `E[q²] = variance + mean²`.
    pub m2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfGaussianPrior {
    sigma: f64,
}

impl HalfGaussianPrior {
    pub fn new(sigma: f64) -> Result<Self> {
        check_positive("sigma", sigma)?;
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisplacedHalfGaussianPrior {
    mu: f64,
    sigma: f64,
    ln_g: f64,
    mu_t: f64,
    sigma_t2: f64,
}

impl DisplacedHalfGaussianPrior {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        check_finite("mu", mu)?;
        check_positive("sigma", sigma)?;
        let z = mu / sigma;
        let st = standardized(z);
        Ok(Self {
            mu,
            sigma,
            ln_g: sigma.ln() + st.ln_norm,
            mu_t: sigma * st.mean,
            sigma_t2: sigma * sigma * st.variance,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `G = √(π/2) σ (1 + erf(μ/(√2σ)))`.
    pub fn normalization(&self) -> f64 {
        self.ln_g.exp()
    }

    pub fn mu_t(&self) -> f64 {
        self.mu_t
    }

    pub fn sigma_t2(&self) -> f64 {
        self.sigma_t2
    }
}

/// Zero-mean Gaussian on the whole real line (single-source reference).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullGaussianPrior {
    sigma: f64,
}

impl FullGaussianPrior {
    pub fn new(sigma: f64) -> Result<Self> {
        check_positive("sigma", sigma)?;
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prior {
    HalfGaussian(HalfGaussianPrior),
    Displaced(DisplacedHalfGaussianPrior),
    FullGaussian(FullGaussianPrior),
}

impl Prior {
    pub fn half_gaussian(sigma: f64) -> Result<Self> {
        HalfGaussianPrior::new(sigma).map(Prior::HalfGaussian)
    }

    pub fn displaced(mu: f64, sigma: f64) -> Result<Self> {
        DisplacedHalfGaussianPrior::new(mu, sigma).map(Prior::Displaced)
    }

    pub fn full_gaussian(sigma: f64) -> Result<Self> {
        FullGaussianPrior::new(sigma).map(Prior::FullGaussian)
    }

    /// Displaced half-Gaussian with the given mean and variance.
    pub fn from_moments(mu_t: f64, sigma_t2: f64) -> Result<Self> {
        let fit = invert_moments(mu_t, sigma_t2)?;
        Self::displaced(fit.mu, fit.sigma)
    }

    /// Width parameter `σ` of the underlying Gaussian.
    pub fn sigma(&self) -> f64 {
        match self {
            Prior::HalfGaussian(p) => p.sigma,
            Prior::Displaced(p) => p.sigma,
            Prior::FullGaussian(p) => p.sigma,
        }
    }

    /// Location of the underlying Gaussian (0 unless displaced).
    pub fn location(&self) -> f64 {
        match self {
            Prior::Displaced(p) => p.mu,
            _ => 0.0,
        }
    }

    pub fn is_half_line(&self) -> bool {
        !matches!(self, Prior::FullGaussian(_))
    }

    /// `ln P(q)`; `-inf` outside the support is never returned because
    /// negative `q` on a half-line prior is rejected by [`Prior::pdf`].
    pub(crate) fn ln_pdf_unchecked(&self, q: f64) -> f64 {
        match self {
            Prior::HalfGaussian(p) => {
                let s = p.sigma;
                (2.0f64).ln() - s.ln() - LN_SQRT_2PI - q * q / (2.0 * s * s)
            }
            Prior::Displaced(p) => {
                let d = q - p.mu;
                -d * d / (2.0 * p.sigma * p.sigma) - p.ln_g
            }
            Prior::FullGaussian(p) => {
                let s = p.sigma;
                -s.ln() - LN_SQRT_2PI - q * q / (2.0 * s * s)
            }
        }
    }

    pub fn pdf(&self, q: f64) -> Result<f64> {
        check_finite("q_alpha", q)?;
        if self.is_half_line() && q < 0.0 {
            return Err(Error::InvalidParameter {
                name: "q_alpha",
                value: q,
                reason: "half-line prior is supported on q >= 0",
            });
        }
        Ok(self.ln_pdf_unchecked(q).exp())
    }

    pub fn moments(&self) -> Moments {
        let (mean, variance) = match self {
            Prior::HalfGaussian(p) => {
                let s2 = p.sigma * p.sigma;
                (p.sigma * (2.0 / PI).sqrt(), (1.0 - 2.0 / PI) * s2)
            }
            Prior::Displaced(p) => (p.mu_t, p.sigma_t2),
            Prior::FullGaussian(p) => (0.0, p.sigma * p.sigma),
        };
        let m2 = match self {
            // exact: the half-Gaussian raw second moment is σ²
            Prior::HalfGaussian(p) => p.sigma * p.sigma,
            _ => variance + mean * mean,
        };
        Moments { mean, variance, m2 }
    }

    /// Interval outside which the density is below `e^{-72}` of its peak.
    pub fn support(&self) -> (f64, f64) {
        self.support_with(DECAY_SCALES)
    }

    /// Interval outside which the density is below `e^{-scales²/2}` of its
    /// peak.
    pub fn support_with(&self, scales: f64) -> (f64, f64) {
        let s = self.sigma();
        match self {
            Prior::FullGaussian(_) => (-scales * s, scales * s),
            _ => {
                let mu = self.location();
                let peak = mu.max(0.0);
                let lo = (mu - scales * s).max(0.0);
                let hi = mu + ((peak - mu).powi(2) + (scales * s).powi(2)).sqrt();
                (lo, hi)
            }
        }
    }

    /// Draws one `q_α`.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Prior::HalfGaussian(p) => {
                let z: f64 = StandardNormal.sample(rng);
                p.sigma * z.abs()
            }
            Prior::FullGaussian(p) => {
                let z: f64 = StandardNormal.sample(rng);
                p.sigma * z
            }
            Prior::Displaced(p) => {
                let a = -p.mu / p.sigma;
                p.mu + p.sigma * sample_std_truncated(a, rng)
            }
        }
    }
}

/// Standard normal conditioned on `x ≥ a`.
fn sample_std_truncated<R: rand::Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a <= 1.0 {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if z >= a {
                return z;
            }
        }
    }
    // exponential proposal with optimal rate (Robert, 1995)
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    let exp = Exp::new(rate).expect("positive rate");
    loop {
        let x = a + exp.sample(rng);
        let u: f64 = rng.random();
        if u <= (-(x - rate).powi(2) / 2.0).exp() {
            return x;
        }
    }
}

/// Moments of `N(z, 1)` truncated to `[0, ∞)` plus `ln(√(2π) Φ(z))`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Standardized {
    pub mean: f64,
    pub variance: f64,
    pub ln_norm: f64,
}

pub(crate) fn standardized(z: f64) -> Standardized {
    if z < TAIL_SWITCH {
        // Mills ratio R(x) = Φ(-x)/φ(x) = 1/F₀ with Fₖ = x + (k+1)/Fₖ₊₁.
        let x = -z;
        let mut f = x;
        let mut f2 = x;
        let mut f1 = x;
        for k in (0..CF_DEPTH).rev() {
            f = x + (k as f64 + 1.0) / f;
            match k {
                2 => f2 = f,
                1 => f1 = f,
                _ => {}
            }
        }
        let f0 = f;
        let big_k = 1.0 / f1;
        let t = 1.0 / f2;
        Standardized {
            // z + λ = K, 1 - zλ - λ² = K(2T - K)
            mean: big_k,
            variance: big_k * (2.0 * t - big_k),
            ln_norm: -z * z / 2.0 - f0.ln(),
        }
    } else {
        let phi_big = 0.5 * libm::erfc(-z / SQRT_2);
        let phi = (-z * z / 2.0).exp() / (2.0 * PI).sqrt();
        let lambda = phi / phi_big;
        Standardized {
            mean: z + lambda,
            variance: 1.0 - z * lambda - lambda * lambda,
            ln_norm: LN_SQRT_2PI + phi_big.ln(),
        }
    }
}

/// Result of fitting a displaced half-Gaussian to a mean and variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentFit {
    pub mu: f64,
    pub sigma: f64,
    /// `max(|Δμ_t|, |Δσ_t²|)` of the fitted prior against the targets.
    pub residual: f64,
}

impl MomentFit {
    pub fn uses_negative_mu(&self) -> bool {
        self.mu < 0.0
    }
}

/// Agreement demanded between targets and the fitted prior's moments.
pub const INVERSION_TOL: f64 = 1e-8;

const Z_MIN: f64 = -60.0;
const Z_MAX: f64 = 1e8;

/// Finds `(μ, σ)` whose truncated normal has mean `mu_t` and variance
/// `sigma_t2`.
///
/// The family is closed under scaling, so the ratio `μ_t/σ_t` depends on
/// `z = μ/σ` alone and increases monotonically from 1 (`z → -∞`, an
/// exponential law) to `∞`. The ratio equation is solved for `z` by
/// bisection and `σ` follows from the variance. Targets with `μ_t ≤ σ_t`
/// are unreachable and reported as errors.
pub fn invert_moments(mu_t: f64, sigma_t2: f64) -> Result<MomentFit> {
    check_positive("target_mu_t", mu_t)?;
    check_positive("target_sigma_t2", sigma_t2)?;
    let sd = sigma_t2.sqrt();
    let target = mu_t / sd;
    let ratio = |z: f64| {
        let st = standardized(z);
        st.mean / st.variance.sqrt()
    };
    // out of range: the residual is the gap to the nearest attainable ratio
    let unreachable = |bound: f64, reason| Error::UnreachableMoments {
        mu_t,
        sigma_t2,
        residual: (target - bound).abs(),
        reason,
    };
    let (r_min, r_max) = (ratio(Z_MIN), ratio(Z_MAX));
    if target <= r_min {
        return Err(unreachable(
            r_min,
            "mean/std ratio must exceed 1 (the exponential-law limit)",
        ));
    }
    if target >= r_max {
        return Err(unreachable(
            r_max,
            "mean/std ratio too large for a double-precision fit",
        ));
    }
    let (mut lo, mut hi) = (Z_MIN, Z_MAX);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * mid.abs().max(1.0) {
            break;
        }
    }
    let z = 0.5 * (lo + hi);
    let st = standardized(z);
    let sigma = sd / st.variance.sqrt();
    let mu = z * sigma;
    let fitted = DisplacedHalfGaussianPrior::new(mu, sigma)?;
    let residual = (fitted.mu_t - mu_t).abs().max((fitted.sigma_t2 - sigma_t2).abs());
    let scale = mu_t.max(sigma_t2).max(1.0);
    if residual > INVERSION_TOL * scale {
        return Err(Error::UnreachableMoments {
            mu_t,
            sigma_t2,
            residual,
            reason: "root solve did not reproduce the targets",
        });
    }
    Ok(MomentFit { mu, sigma, residual })
}
