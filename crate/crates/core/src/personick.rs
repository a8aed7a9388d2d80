//! Minimum mean square error over all measurements (Personick bound).
//!
//! For a prior `P(q)` and a family of states `ρ(q)` the prior-weighted
//! operators `Γₖ = ∫ P(q) qᵏ ρ(q) dq` determine the optimal estimator
//! operator `B`, the solution of `Γ₀B + BΓ₀ = 2Γ₁`, and the MMSE
//! `δ = tr Γ₂ - tr(BΓ₁)`. Only the trace of `Γ₂` enters, and it equals the
//! prior's raw second moment, so that operator is never built.
//!
//! Two routes are provided:
//!
//! * a numeric route that integrates `Γ₀` and `Γ₁` in the truncated number
//!   basis for any prior, and solves for `B` in the eigenbasis of `Γ₀`;
//! * an analytic route for the half-Gaussian prior, where `Γ₀` is a squeezed
//!   thermal state with known eigenbasis `Û(r)|n⟩` and eigenvalues
//!   `(1-s)sⁿ`, so the MMSE reduces to a double sum over the matrix
//!   elements of `Γ₁` in that basis.
//!
//! A zero-mean Gaussian prior on the whole line with a single coherent
//! state serves as an exactly solvable reference.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};

use crate::error::{check_positive, Error, Result};
use crate::fock::{
    coherent_amplitudes_into, eigh_symmetric, hermite_functions_into, ln_factorials, squeeze_elements, Eigh,
    FockOperator, SqueezeParams,
};
use crate::priors::Prior;
use crate::quadrature::{composite_nodes, GaussLegendre, QuadratureSpec};

/// Eigenvalue pairs with `λᵢ + λⱼ` below this fraction of the largest
/// eigenvalue are excluded from the spectral solve.
pub const PAIR_FLOOR: f64 = 1e-13;

/// Relative MMSE change under cutoff doubling accepted by the automatic
/// cutoff policy.
pub const CUTOFF_REL_TOL: f64 = 1e-6;

/// Largest cutoff the automatic policy will try.
pub const MAX_AUTO_CUTOFF: usize = 1024;

/// Panel width (in `q`) of the first Gauss-Legendre pass when building `Γₖ`.
const GAMMA_PANEL_WIDTH: f64 = 0.5;

/// Geometric weights `sⁿ` below this are dropped from the analytic `Γ₀`.
const THERMAL_WEIGHT_CUT: f64 = 1e-18;

/// Prior-weighted operator moments of the source state.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaTriple {
    pub gamma0: FockOperator,
    pub gamma1: FockOperator,
    /// `tr Γ₂ = ∫ P(q) q² dq`.
    pub gamma2_trace: f64,
}

impl GammaTriple {
    pub fn cutoff(&self) -> usize {
        self.gamma0.cutoff()
    }

    /// Leading `(cutoff+1)`-square blocks. Matrix elements do not depend on
    /// the truncation, so this equals a fresh build at the smaller cutoff.
    pub fn truncated(&self, cutoff: usize) -> Self {
        Self {
            gamma0: self.gamma0.truncated(cutoff),
            gamma1: self.gamma1.truncated(cutoff),
            gamma2_trace: self.gamma2_trace,
        }
    }
}

/// Optimal estimator operator and the resulting MMSE.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonickSolution {
    pub b: FockOperator,
    pub mmse: f64,
    pub gamma2_trace: f64,
    /// `tr(BΓ₁)` accumulated in the eigenbasis of `Γ₀`.
    pub tr_b_gamma1: f64,
    /// Eigenvalues of `B`, ascending: the values reported by the optimal
    /// estimator.
    pub estimator_values: DVector<f64>,
    /// Eigenvectors of `B` as columns: the optimal projective measurement.
    pub measurement: DMatrix<f64>,
    /// Unordered eigenvalue pairs of `Γ₀` excluded by [`PAIR_FLOOR`].
    pub dropped_pairs: usize,
    /// `max |Γ₀B + BΓ₀ - 2Γ₁|`.
    pub lyapunov_residual: f64,
}

impl PersonickSolution {
    /// `tr(BΓ₁)` evaluated directly in the number basis.
    pub fn tr_b_gamma1_direct(&self, gammas: &GammaTriple) -> f64 {
        self.b.entries().component_mul(gammas.gamma1.entries()).sum()
    }
}

fn mask_parity(m: &mut DMatrix<f64>, keep_even: bool, scale: f64) {
    let d = m.nrows();
    for j in 0..d {
        for i in 0..d {
            if ((i + j) % 2 == 0) == keep_even {
                m[(i, j)] *= scale;
            } else {
                m[(i, j)] = 0.0;
            }
        }
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for j in 0..d {
        for i in (j + 1)..d {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Raw quadrature sums `(Σ w P c cᵀ, Σ w P q c cᵀ)` over the half-line part
/// of the prior support, `c = ⟨·|α⟩`, `α = q/√2`.
fn gamma_sums(
    prior: &Prior,
    dim: usize,
    lo: f64,
    hi: f64,
    panels: usize,
    rule: &GaussLegendre,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let nodes = composite_nodes(lo, hi, panels, rule);
    let ln_fact = ln_factorials(dim);
    let mut v = DMatrix::<f64>::zeros(dim, nodes.len());
    let mut vq = DMatrix::<f64>::zeros(dim, nodes.len());
    let mut amps = vec![0.0; dim];
    for (j, &(q, w)) in nodes.iter().enumerate() {
        let weight = w * prior.ln_pdf_unchecked(q).exp();
        if weight == 0.0 {
            continue;
        }
        coherent_amplitudes_into(q / SQRT_2, &ln_fact, &mut amps);
        let root = weight.sqrt();
        for (n, a) in amps.iter().enumerate() {
            v[(n, j)] = root * a;
            vq[(n, j)] = root * a * q;
        }
    }
    let mut g0 = &v * v.transpose();
    let mut g1 = &vq * v.transpose();
    symmetrize(&mut g0);
    symmetrize(&mut g1);
    (g0, g1)
}

/// `Γ₀`, `Γ₁` and `tr Γ₂` by quadrature in the truncated number basis.
///
/// Half-line priors use the two-source state `½|α⟩⟨α| + ½|-α⟩⟨-α|`; the
/// full-line Gaussian uses the single coherent state `|α⟩⟨α|`. In both
/// cases the integral is folded onto `q ≥ 0` using `⟨n|-α⟩ = (-1)ⁿ⟨n|α⟩`,
/// which makes the parity zeros exact: for the two-source state both
/// operators vanish on `n + m` odd, and for the single source `Γ₁` vanishes
/// on `n + m` even instead.
///
/// `spec.domain_cut` is read as a number of prior widths; panels are doubled
/// until no entry moves by more than `spec.rel_tol` of the largest entry.
pub fn build_gamma_numeric(prior: &Prior, cutoff: usize, spec: &QuadratureSpec) -> Result<GammaTriple> {
    spec.validate()?;
    let dim = cutoff + 1;
    let (lo, hi) = match prior.support_with(spec.domain_cut) {
        (_, hi) if !prior.is_half_line() => (0.0, hi),
        bounds => bounds,
    };
    let rule = GaussLegendre::new(spec.nodes_per_panel);
    let mut panels = (((hi - lo) / GAMMA_PANEL_WIDTH).ceil() as usize).max(4);
    let mut prev = gamma_sums(prior, dim, lo, hi, panels, &rule);
    let (mut g0, mut g1) = loop {
        panels *= 2;
        let next = gamma_sums(prior, dim, lo, hi, panels, &rule);
        let scale = next.0.amax().max(next.1.amax());
        let change = (&next.0 - &prev.0).amax().max((&next.1 - &prev.1).amax());
        if change <= spec.rel_tol * scale {
            break next;
        }
        if panels >= spec.max_panels {
            return Err(Error::QuadratureNonConvergence {
                best: next.0.trace(),
                error: change,
            });
        }
        prev = next;
    };
    if prior.is_half_line() {
        mask_parity(&mut g0, true, 1.0);
        mask_parity(&mut g1, true, 1.0);
    } else {
        mask_parity(&mut g0, true, 2.0);
        mask_parity(&mut g1, false, 2.0);
    }
    Ok(GammaTriple {
        gamma0: FockOperator::new(g0, true)?,
        gamma1: FockOperator::new(g1, true)?,
        gamma2_trace: prior.moments().m2,
    })
}

/// Single coherent state under a zero-mean Gaussian prior on the whole line.
pub fn build_gamma_single_source(sigma: f64, cutoff: usize, spec: &QuadratureSpec) -> Result<GammaTriple> {
    build_gamma_numeric(&Prior::full_gaussian(sigma)?, cutoff, spec)
}

fn thermal_levels(s: f64) -> usize {
    if s <= 0.0 {
        1
    } else {
        (THERMAL_WEIGHT_CUT.ln() / s.ln()).ceil().max(0.0) as usize + 1
    }
}

/// `Γ₀ = (1-s) Σₖ sᵏ Û(r)|k⟩⟨k|Û†(r)` for the half-Gaussian prior of width
/// `sigma`, truncated to the leading `(cutoff+1)`-square block.
pub fn build_gamma0_analytic(sigma: f64, cutoff: usize) -> Result<FockOperator> {
    check_positive("sigma", sigma)?;
    let p = SqueezeParams::from_sigma(sigma)?;
    let levels = thermal_levels(p.s);
    let u = squeeze_elements(p.r, cutoff + 1, levels);
    let mut weighted = u.clone();
    let mut w = 1.0 - p.s;
    for k in 0..levels {
        weighted.column_mut(k).scale_mut(w);
        w *= p.s;
    }
    let mut g0 = weighted * u.transpose();
    symmetrize(&mut g0);
    FockOperator::new(g0, true)
}

/// Matrix elements of `Γ₁` in the eigenbasis `Û(r)|n⟩` of `Γ₀` for the
/// half-Gaussian prior.
///
/// With `ψₙ` the Hermite functions and `s = tanh r`,
/// `⟨n|Û†Γ₁Û|m⟩ = C s^((n+m)/2) Jₙₘ`, `C = 4√2 sinh(r)/σ`,
/// `Jₙₘ = ∫₀^∞ y ψₙ(y) ψₘ(y) dy` for `n + m` even and zero otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct SqueezedFrame {
    pub sigma: f64,
    pub params: SqueezeParams,
    prefactor: f64,
    j: DMatrix<f64>,
}

impl SqueezedFrame {
    pub fn new(sigma: f64, cutoff: usize) -> Result<Self> {
        check_positive("sigma", sigma)?;
        let params = SqueezeParams::from_sigma(sigma)?;
        Ok(Self {
            sigma,
            params,
            prefactor: 4.0 * SQRT_2 * params.r.sinh() / sigma,
            j: halfline_hermite_overlaps(cutoff + 1),
        })
    }

    pub fn cutoff(&self) -> usize {
        self.j.nrows() - 1
    }

    pub fn element(&self, n: usize, m: usize) -> f64 {
        if (n + m) % 2 == 1 {
            return 0.0;
        }
        self.prefactor * self.params.s.powf(0.5 * (n + m) as f64) * self.j[(n, m)]
    }

    pub fn gamma1(&self) -> FockOperator {
        let d = self.j.nrows();
        FockOperator::new(DMatrix::from_fn(d, d, |n, m| self.element(n, m)), true).expect("symmetric by construction")
    }

    /// `σ² - (2/(1-s)) Σ_{n,m ≤ cutoff} |⟨n|Û†Γ₁Û|m⟩|² / (sⁿ + sᵐ)`.
    ///
    /// Written as `C² J² s^max(n,m) / (1 + s^|n-m|)` so that nothing
    /// overflows or divides by an underflowed power.
    pub fn mmse(&self, cutoff: usize) -> f64 {
        let s = self.params.s;
        let d = (cutoff + 1).min(self.j.nrows());
        let mut sum = 0.0;
        for n in 0..d {
            for m in (n % 2..d).step_by(2) {
                let j = self.j[(n, m)];
                let hi = n.max(m) as f64;
                let gap = n.abs_diff(m) as f64;
                sum += j * j * s.powf(hi) / (1.0 + s.powf(gap));
            }
        }
        let tr_b_gamma1 = 2.0 * self.prefactor * self.prefactor * sum / (1.0 - s);
        self.sigma * self.sigma - tr_b_gamma1
    }
}

/// `∫₀^∞ y ψₙ(y) ψₘ(y) dy` for `n, m < dim`.
fn halfline_hermite_overlaps(dim: usize) -> DMatrix<f64> {
    let turning = (2.0 * dim as f64 + 1.0).sqrt();
    let cut = turning + 12.0;
    let width = (PI / turning).min(0.5);
    let panels = (cut / width).ceil() as usize;
    let rule = GaussLegendre::new(20);
    let nodes = composite_nodes(0.0, cut, panels, &rule);
    let mut left = DMatrix::<f64>::zeros(dim, nodes.len());
    let mut right = DMatrix::<f64>::zeros(dim, nodes.len());
    let mut buf = vec![0.0; dim];
    for (k, &(y, w)) in nodes.iter().enumerate() {
        hermite_functions_into(y, &mut buf);
        for (n, v) in buf.iter().enumerate() {
            left[(n, k)] = *v;
            right[(n, k)] = w * y * v;
        }
    }
    let mut j = left * right.transpose();
    symmetrize(&mut j);
    mask_parity(&mut j, true, 1.0);
    j
}

/// [`SqueezedFrame::gamma1`] at the given cutoff.
pub fn gamma1_elements_analytic(sigma: f64, cutoff: usize) -> Result<FockOperator> {
    Ok(SqueezedFrame::new(sigma, cutoff)?.gamma1())
}

/// Physicists' Hermite polynomial coefficients, lowest power first.
fn hermite_coefficients(n: usize) -> Vec<f64> {
    let mut prev = vec![1.0];
    if n == 0 {
        return prev;
    }
    let mut cur = vec![0.0, 2.0];
    for k in 1..n {
        let mut next = vec![0.0; k + 2];
        for (p, c) in cur.iter().enumerate() {
            next[p + 1] += 2.0 * c;
        }
        for (p, c) in prev.iter().enumerate() {
            next[p] -= 2.0 * k as f64 * c;
        }
        prev = cur;
        cur = next;
    }
    cur
}

/// The same matrix elements as [`gamma1_elements_analytic`] from the exact
/// polynomial expansion of `Hₙ Hₘ` against closed-form half-line Gaussian
/// moments. The alternating coefficients cancel catastrophically as
/// `n + m` grows; this is a cross-check for `n + m ≤ 20`, not a production
/// path.
pub fn gamma1_elements_expansion(sigma: f64, cutoff: usize) -> Result<FockOperator> {
    check_positive("sigma", sigma)?;
    let params = SqueezeParams::from_sigma(sigma)?;
    let prefactor = 4.0 * SQRT_2 * params.r.sinh() / sigma;
    let d = cutoff + 1;
    let coeffs: Vec<Vec<f64>> = (0..d).map(hermite_coefficients).collect();
    let ln_fact = ln_factorials(cutoff);
    let mut out = DMatrix::<f64>::zeros(d, d);
    for n in 0..d {
        for m in (n % 2..d).step_by(2) {
            let mut acc = 0.0;
            for (a, ca) in coeffs[n].iter().enumerate() {
                for (b, cb) in coeffs[m].iter().enumerate() {
                    if *ca != 0.0 && *cb != 0.0 {
                        acc += ca * cb * crate::quadrature::halfline_gaussian_moment((a + b) as u32, 1.0)?;
                    }
                }
            }
            // ψₙψₘ = e^{-y²} HₙHₘ / (√π √(2ⁿn! 2ᵐm!))
            let norm = (-(0.5 * ((n + m) as f64) * 2f64.ln() + 0.5 * (ln_fact[n] + ln_fact[m]))).exp() / PI.sqrt();
            out[(n, m)] = prefactor * params.s.powf(0.5 * (n + m) as f64) * norm * acc;
        }
    }
    FockOperator::new(out, true)
}

/// Half-Gaussian MMSE from the analytic double sum truncated at `cutoff`.
pub fn mmse_halfgaussian_analytic(sigma: f64, cutoff: usize) -> Result<f64> {
    Ok(SqueezedFrame::new(sigma, cutoff)?.mmse(cutoff))
}

/// Eigendecomposition of `Γ₀`, block by block when its parity zeros are
/// exact so that every eigenvector has definite parity.
fn parity_eigh(m: &DMatrix<f64>, even_parity: bool) -> Eigh {
    let d = m.nrows();
    if !even_parity || d < 2 {
        return eigh_symmetric(m.clone());
    }
    let mut values = DVector::<f64>::zeros(d);
    let mut vectors = DMatrix::<f64>::zeros(d, d);
    let mut col = 0;
    for start in 0..2 {
        let idx: Vec<usize> = (start..d).step_by(2).collect();
        let block = DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])]);
        let e = eigh_symmetric(block);
        for k in 0..idx.len() {
            values[col] = e.values[k];
            for (i, &row) in idx.iter().enumerate() {
                vectors[(row, col)] = e.vectors[(i, k)];
            }
            col += 1;
        }
    }
    Eigh { values, vectors }
}

/// Solves `Γ₀B + BΓ₀ = 2Γ₁` spectrally: in the eigenbasis `{vᵢ, λᵢ}` of
/// `Γ₀`, `B̃ᵢⱼ = 2⟨vᵢ|Γ₁|vⱼ⟩/(λᵢ + λⱼ)`. Pairs below [`PAIR_FLOOR`]`·λ_max`
/// get `B̃ᵢⱼ = 0` and are counted in `dropped_pairs`.
pub fn solve_b(gammas: &GammaTriple) -> Result<PersonickSolution> {
    let g0 = gammas.gamma0.entries();
    let g1 = gammas.gamma1.entries();
    if g0.shape() != g1.shape() {
        return Err(Error::InvalidParameter {
            name: "gamma1",
            value: g1.nrows() as f64,
            reason: "Gamma_0 and Gamma_1 must share a cutoff",
        });
    }
    crate::error::check_finite("gamma2_trace", gammas.gamma2_trace)?;
    let eig = parity_eigh(g0, gammas.gamma0.has_even_parity());
    let lambda_max = eig.values.max();
    if lambda_max.is_nan() || lambda_max <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "gamma0",
            value: lambda_max,
            reason: "largest eigenvalue must be positive",
        });
    }
    let floor = PAIR_FLOOR * lambda_max;
    let v = &eig.vectors;
    let g = v.transpose() * g1 * v;
    let d = g.nrows();
    let mut bt = DMatrix::<f64>::zeros(d, d);
    let mut dropped = 0;
    let mut tr_b_gamma1 = 0.0;
    for j in 0..d {
        for i in 0..=j {
            let denom = eig.values[i] + eig.values[j];
            if denom < floor {
                dropped += 1;
                continue;
            }
            let gij = 0.5 * (g[(i, j)] + g[(j, i)]);
            let bij = 2.0 * gij / denom;
            bt[(i, j)] = bij;
            bt[(j, i)] = bij;
            tr_b_gamma1 += if i == j { bij * gij } else { 2.0 * bij * gij };
        }
    }
    let mut b = v * bt * v.transpose();
    symmetrize(&mut b);
    if gammas.gamma1.has_even_parity() && gammas.gamma0.has_even_parity() {
        mask_parity(&mut b, true, 1.0);
    }
    let residual = (g0 * &b + &b * g0 - g1 * 2.0).amax();
    let b_eig = eigh_symmetric(b.clone());
    Ok(PersonickSolution {
        b: FockOperator::new(b, true)?,
        mmse: gammas.gamma2_trace - tr_b_gamma1,
        gamma2_trace: gammas.gamma2_trace,
        tr_b_gamma1,
        estimator_values: b_eig.values,
        measurement: b_eig.vectors,
        dropped_pairs: dropped,
        lyapunov_residual: residual,
    })
}

/// Re-solves after conjugating `Γ₀` and `Γ₁` by the squeezing unitary
/// `Û(r_test)` and returns `(δ_before, δ_after)`.
///
/// The rotated operators are held in a padded basis large enough to carry
/// `Û|n⟩` for every retained `n`, so the conjugation itself is not
/// truncated.
pub fn mmse_unitary_invariance_check(gammas: &GammaTriple, r_test: f64) -> Result<(f64, f64)> {
    crate::error::check_finite("r_test", r_test)?;
    if r_test.abs() > 1.0 {
        return Err(Error::InvalidParameter {
            name: "r_test",
            value: r_test,
            reason: "invariance check is limited to |r| <= 1",
        });
    }
    let before = solve_b(gammas)?.mmse;
    if r_test == 0.0 {
        return Ok((before, solve_b(gammas)?.mmse));
    }
    let d = gammas.cutoff() + 1;
    let padded = ((d as f64) * (2.0 * r_test).cosh() * 1.5).ceil() as usize + 40;
    let u = squeeze_elements(r_test, padded, d);
    let ut = u.transpose();
    let rotated = GammaTriple {
        gamma0: gammas.gamma0.conjugated_by(&ut)?,
        gamma1: gammas.gamma1.conjugated_by(&ut)?,
        gamma2_trace: gammas.gamma2_trace,
    };
    Ok((before, solve_b(&rotated)?.mmse))
}

/// Outcome of the automatic cutoff policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffChoice {
    pub cutoff: usize,
    pub mmse: f64,
    /// MMSE at twice the chosen cutoff.
    pub doubled_mmse: f64,
}

impl CutoffChoice {
    pub fn rel_change(&self) -> f64 {
        rel_change(self.mmse, self.doubled_mmse)
    }
}

fn rel_change(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// First cutoff tried by the automatic policy: ten levels above the mean
/// photon number `⟨α²⟩ = m₂/2` of the prior-averaged state.
pub fn initial_cutoff(prior: &Prior) -> usize {
    10 + (0.5 * prior.moments().m2).ceil() as usize
}

/// Doubles the cutoff from `start` until `δ(c)` and `δ(2c)` agree to
/// [`CUTOFF_REL_TOL`], then bisects for the smallest cutoff that passes the
/// same test.
pub fn converge_cutoff<F>(start: usize, mut mmse_at: F) -> Result<CutoffChoice>
where
    F: FnMut(usize) -> Result<f64>,
{
    let mut pass = |c: usize| -> Result<(bool, f64, f64)> {
        let a = mmse_at(c)?;
        let b = mmse_at(2 * c)?;
        Ok((rel_change(a, b) < CUTOFF_REL_TOL, a, b))
    };
    let mut lo = None;
    let top = MAX_AUTO_CUTOFF / 2;
    let mut c = start.clamp(1, top);
    let (mut mmse, mut doubled) = loop {
        let (ok, a, b) = pass(c)?;
        if ok {
            break (a, b);
        }
        if c == top {
            return Err(Error::CutoffNotConverged {
                max_cutoff: MAX_AUTO_CUTOFF,
                last_change: rel_change(a, b),
            });
        }
        lo = Some(c);
        c = (2 * c).min(top);
    };
    if let Some(mut l) = lo {
        while c - l > 1 {
            let mid = l + (c - l) / 2;
            let (ok, a, b) = pass(mid)?;
            if ok {
                c = mid;
                mmse = a;
                doubled = b;
            } else {
                l = mid;
            }
        }
    }
    Ok(CutoffChoice {
        cutoff: c,
        mmse,
        doubled_mmse: doubled,
    })
}

/// Numeric-route solution with the cutoff chosen automatically.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoSolution {
    pub choice: CutoffChoice,
    pub gammas: GammaTriple,
    pub solution: PersonickSolution,
}

/// Builds `Γₖ` once at the largest cutoff needed so far and slices leading
/// blocks for smaller cutoffs.
struct NumericLadder<'a> {
    prior: &'a Prior,
    spec: &'a QuadratureSpec,
    built: Option<GammaTriple>,
}

impl NumericLadder<'_> {
    fn triple(&mut self, cutoff: usize) -> Result<GammaTriple> {
        match &self.built {
            Some(t) if t.cutoff() >= cutoff => Ok(t.truncated(cutoff)),
            _ => {
                let t = build_gamma_numeric(self.prior, cutoff, self.spec)?;
                self.built = Some(t.clone());
                Ok(t)
            }
        }
    }
}

/// Numeric-route MMSE with the automatic cutoff policy.
pub fn solve_auto(prior: &Prior, spec: &QuadratureSpec) -> Result<AutoSolution> {
    let mut ladder = NumericLadder {
        prior,
        spec,
        built: None,
    };
    let start = initial_cutoff(prior);
    // one build covering the first doubling step
    ladder.triple(2 * start)?;
    let choice = converge_cutoff(start, |c| Ok(solve_b(&ladder.triple(c)?)?.mmse))?;
    let gammas = ladder.triple(choice.cutoff)?;
    let solution = solve_b(&gammas)?;
    Ok(AutoSolution {
        choice,
        gammas,
        solution,
    })
}

/// Analytic half-Gaussian MMSE with the automatic cutoff policy.
pub fn mmse_halfgaussian_auto(sigma: f64) -> Result<CutoffChoice> {
    let start = initial_cutoff(&Prior::half_gaussian(sigma)?);
    let mut frame = SqueezedFrame::new(sigma, 2 * start)?;
    converge_cutoff(start, |c| {
        if frame.cutoff() < c {
            frame = SqueezedFrame::new(sigma, c)?;
        }
        Ok(frame.mmse(c))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    #[test]
    fn half_gaussian_gamma_traces() {
        let t = build_gamma_numeric(&Prior::half_gaussian(1.0).unwrap(), 60, &spec()).unwrap();
        assert!((t.gamma0.trace() - 1.0).abs() < 1e-9);
        assert_eq!(t.gamma2_trace, 1.0);
        assert!(t.gamma0.has_even_parity() && t.gamma1.has_even_parity());
        // tr Γ₁ is the prior mean
        assert!((t.gamma1.trace() - (2.0 / PI).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn narrow_prior_gives_vacuum() {
        let t = build_gamma_numeric(&Prior::half_gaussian(1e-4).unwrap(), 6, &spec()).unwrap();
        assert!((t.gamma0.get(0, 0) - 1.0).abs() < 1e-8);
        assert!(t.gamma0.entries().iter().skip(1).all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn displaced_second_moment_is_raw_moment() {
        let p = Prior::displaced(1.0, 1.0).unwrap();
        let t = build_gamma_numeric(&p, 10, &spec()).unwrap();
        let m = p.moments();
        assert!((t.gamma2_trace - (m.mean * m.mean + m.variance)).abs() < 1e-14);
        let lambda = (-0.5f64).exp() / (2.0 * PI).sqrt() / (0.5 * libm::erfc(-1.0 / SQRT_2));
        assert!((t.gamma2_trace - (1.0 + 1.0 + lambda)).abs() < 1e-12);
    }

    #[test]
    fn squeeze_parameters_at_unit_sigma() {
        let p = SqueezeParams::from_sigma(1.0).unwrap();
        assert!((p.r - 0.274_653_072_167_027).abs() < 1e-12);
        assert!((p.n_bar - 0.366_025_403_784_438_6).abs() < 1e-12);
        assert!((p.s - 0.267_949_192_431_122_7).abs() < 1e-12);
    }

    #[test]
    fn analytic_gamma0_has_geometric_spectrum() {
        for sigma in [0.3, 1.0, 2.0] {
            let g0 = build_gamma0_analytic(sigma, 120).unwrap();
            let e = crate::fock::eigh(&g0).unwrap();
            let s = SqueezeParams::from_sigma(sigma).unwrap().s;
            let d = e.values.len();
            for n in 0..6 {
                let expect = (1.0 - s) * s.powi(n as i32);
                assert!((e.values[d - 1 - n] - expect).abs() < 1e-10, "sigma {sigma} n {n}");
            }
        }
    }

    #[test]
    fn analytic_gamma0_narrow_is_vacuum() {
        let g0 = build_gamma0_analytic(1e-6, 4).unwrap();
        assert!((g0.get(0, 0) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn analytic_gamma0_matches_numeric() {
        for sigma in [0.5, 1.0, 2.0] {
            let a = build_gamma0_analytic(sigma, 30).unwrap();
            let n = build_gamma_numeric(&Prior::half_gaussian(sigma).unwrap(), 30, &spec()).unwrap();
            let diff = (a.entries() - n.gamma0.entries()).amax();
            assert!(diff < 1e-12, "sigma {sigma}: {diff:e}");
        }
    }

    #[test]
    fn gamma1_corner_element() {
        let sigma = 1.0;
        let p = SqueezeParams::from_sigma(sigma).unwrap();
        let a = 0.5 * (1.0 / (sigma * sigma) + 1.0 - p.r.tanh());
        let expect = 1.0 / (sigma * (2.0 * PI).sqrt() * p.r.cosh() * a);
        let g = gamma1_elements_analytic(sigma, 4).unwrap();
        assert!((g.get(0, 0) - expect).abs() < 1e-14);
        assert_eq!(g.get(0, 1), 0.0);
        assert_eq!(g.get(2, 3), 0.0);
    }

    #[test]
    fn gamma1_quadrature_matches_expansion() {
        for sigma in [0.5, 1.0, 2.0] {
            let q = gamma1_elements_analytic(sigma, 10).unwrap();
            let e = gamma1_elements_expansion(sigma, 10).unwrap();
            let diff = (q.entries() - e.entries()).amax();
            assert!(diff < 1e-11, "sigma {sigma}: {diff:e}");
        }
    }

    #[test]
    fn gamma1_matches_conjugated_numeric() {
        for sigma in [0.5, 1.0, 2.0] {
            let frame = SqueezedFrame::new(sigma, 30).unwrap();
            let padded = 160;
            let t = build_gamma_numeric(&Prior::half_gaussian(sigma).unwrap(), padded, &spec()).unwrap();
            let u = squeeze_elements(frame.params.r, padded + 1, 31);
            let rotated = u.transpose() * t.gamma1.entries() * &u;
            let diff = (rotated - frame.gamma1().entries()).amax();
            assert!(diff < 1e-10, "sigma {sigma}: {diff:e}");
        }
    }

    #[test]
    fn hermite_coefficients_low_order() {
        assert_eq!(hermite_coefficients(0), vec![1.0]);
        assert_eq!(hermite_coefficients(2), vec![-2.0, 0.0, 4.0]);
        assert_eq!(hermite_coefficients(3), vec![0.0, -12.0, 0.0, 8.0]);
    }

    #[test]
    fn commuting_case() {
        let g0 = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.3, 0.2]));
        let c = 1.7;
        let t = GammaTriple {
            gamma0: FockOperator::new(g0.clone(), true).unwrap(),
            gamma1: FockOperator::new(&g0 * c, true).unwrap(),
            gamma2_trace: 4.0,
        };
        let sol = solve_b(&t).unwrap();
        assert!((sol.b.entries() - DMatrix::identity(3, 3) * c).amax() < 1e-14);
        assert!((sol.mmse - (4.0 - c * c)).abs() < 1e-14);
        assert_eq!(sol.dropped_pairs, 0);
    }

    #[test]
    fn single_source_anchor() {
        for sigma in [0.5, 1.0] {
            let t = build_gamma_single_source(sigma, 80, &spec()).unwrap();
            let sol = solve_b(&t).unwrap();
            let s2 = sigma * sigma;
            assert!((sol.mmse - s2 / (1.0 + 2.0 * s2)).abs() < 1e-9, "{}", sol.mmse);
            assert!((sol.tr_b_gamma1 - 2.0 * s2 * s2 / (1.0 + 2.0 * s2)).abs() < 1e-9);
            assert!((sol.tr_b_gamma1 - sol.tr_b_gamma1_direct(&t)).abs() < 1e-10);
        }
    }

    #[test]
    fn single_source_estimator_is_position_in_squeezed_frame() {
        let sigma = 1.0;
        let t = build_gamma_single_source(sigma, 100, &spec()).unwrap();
        let sol = solve_b(&t).unwrap();
        let r = SqueezeParams::from_sigma(sigma).unwrap().r;
        let u = squeeze_elements(r, 101, 12);
        let bt = u.transpose() * sol.b.entries() * &u;
        for n in 0..10 {
            assert!(bt[(n, n)].abs() < 1e-9);
            for m in (n + 2)..12 {
                assert!(bt[(n, m)].abs() < 1e-9);
            }
        }
        let base = bt[(0, 1)];
        for n in 0..10 {
            let ratio = bt[(n, n + 1)] / base;
            assert!((ratio - ((n + 1) as f64).sqrt()).abs() < 1e-8, "n {n}: {ratio}");
        }
    }

    #[test]
    fn two_source_matches_analytic_sum() {
        let sigma = 1.0;
        let t = build_gamma_numeric(&Prior::half_gaussian(sigma).unwrap(), 120, &spec()).unwrap();
        let numeric = solve_b(&t).unwrap();
        let analytic = mmse_halfgaussian_analytic(sigma, 60).unwrap();
        assert!(
            (numeric.mmse - analytic).abs() < 1e-7,
            "{} vs {}",
            numeric.mmse,
            analytic
        );
        // B inherits the parity zeros
        assert!(numeric.b.has_even_parity());
    }

    #[test]
    fn analytic_mmse_limits_and_convergence() {
        let small = 0.01;
        let v = mmse_halfgaussian_analytic(small, 20).unwrap();
        let prior_var = small * small * (1.0 - 2.0 / PI);
        assert!((v - prior_var).abs() / prior_var < 1e-3);
        let a = mmse_halfgaussian_analytic(1.0, 20).unwrap();
        let b = mmse_halfgaussian_analytic(1.0, 40).unwrap();
        assert!((a - b).abs() < 1e-8);
        let mut prev = f64::INFINITY;
        for c in 0..30 {
            let v = mmse_halfgaussian_analytic(1.0, c).unwrap();
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn invariance_under_squeezing() {
        let t = build_gamma_single_source(1.0, 60, &spec()).unwrap();
        let (a, b) = mmse_unitary_invariance_check(&t, 0.3).unwrap();
        assert!((a - 1.0 / 3.0).abs() < 1e-7 && (b - a).abs() < 1e-7, "{a} {b}");
        let (a, b) = mmse_unitary_invariance_check(&t, 0.0).unwrap();
        assert_eq!(a, b);
        let h = build_gamma_numeric(&Prior::half_gaussian(1.0).unwrap(), 60, &spec()).unwrap();
        let (a, b) = mmse_unitary_invariance_check(&h, 0.3).unwrap();
        assert!((b - a).abs() < 1e-7, "{a} {b}");
        assert!(mmse_unitary_invariance_check(&h, 1.5).is_err());
    }

    #[test]
    fn auto_cutoff_doubling_is_stable() {
        let c = mmse_halfgaussian_auto(1.0).unwrap();
        assert!(c.rel_change() < CUTOFF_REL_TOL);
        let again = mmse_halfgaussian_analytic(1.0, 2 * c.cutoff).unwrap();
        assert!((again - c.doubled_mmse).abs() < 1e-14);
        let p = Prior::displaced(1.0, 0.5).unwrap();
        let auto = solve_auto(&p, &spec()).unwrap();
        assert!(auto.choice.rel_change() < CUTOFF_REL_TOL);
        assert_eq!(auto.solution.mmse, auto.choice.mmse);
    }

    #[test]
    fn lyapunov_residual_is_small() {
        let t = build_gamma_numeric(&Prior::half_gaussian(2.5).unwrap(), 20, &spec()).unwrap();
        let sol = solve_b(&t).unwrap();
        assert_eq!(sol.dropped_pairs, 0);
        assert!(sol.lyapunov_residual < 1e-9, "{:e}", sol.lyapunov_residual);
        assert!(sol.mmse >= 0.0 && sol.mmse <= t.gamma2_trace);
    }
}
