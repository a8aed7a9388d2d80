//! Truncated single-mode Fock space.
//!
//! Every state and operator used here has real matrix elements in the number
//! basis (real coherent amplitudes, real squeezing), so the kernel is real
//! symmetric linear algebra on `nalgebra` matrices of side `cutoff + 1`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_finite, Error, Result};

/// Asymmetry tolerated on operators flagged Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Interior-block unitarity residual above which a squeeze matrix is
/// flagged as untrustworthy.
pub const SQUEEZE_RESIDUAL_WARN: f64 = 1e-8;

/// `ln n!` for `n = 0..=max`.
pub(crate) fn ln_factorials(max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(max + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for n in 1..=max {
        acc += (n as f64).ln();
        out.push(acc);
    }
    out
}

/// Writes `⟨n|α⟩ = e^{-α²/2} αⁿ/√n!` for `n < out.len()`.
///
/// Very large `|α|` switches to the log domain so the leading factor does
/// not underflow.
pub(crate) fn coherent_amplitudes_into(alpha: f64, ln_fact: &[f64], out: &mut [f64]) {
    if alpha == 0.0 {
        out.fill(0.0);
        if let Some(first) = out.first_mut() {
            *first = 1.0;
        }
        return;
    }
    if alpha * alpha < 1000.0 {
        // e^{-α²/2} stays a normal float; the recurrence is more accurate
        let mut c = (-0.5 * alpha * alpha).exp();
        for (n, slot) in out.iter_mut().enumerate() {
            if n > 0 {
                c *= alpha / (n as f64).sqrt();
            }
            *slot = c;
        }
        return;
    }
    let ln_a = alpha.abs().ln();
    let base = -0.5 * alpha * alpha;
    let negative = alpha < 0.0;
    for (n, slot) in out.iter_mut().enumerate() {
        let mag = (base + n as f64 * ln_a - 0.5 * ln_fact[n]).exp();
        *slot = if negative && n % 2 == 1 { -mag } else { mag };
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FockVector {
    amplitudes: DVector<f64>,
}

impl FockVector {
    pub fn from_amplitudes(amplitudes: DVector<f64>) -> Self {
        Self { amplitudes }
    }

    pub fn cutoff(&self) -> usize {
        self.amplitudes.len() - 1
    }

    pub fn amplitudes(&self) -> &DVector<f64> {
        &self.amplitudes
    }

    /// `1 - Σ|cₙ|²`: probability lost to truncation.
    pub fn tail_mass(&self) -> f64 {
        1.0 - self.amplitudes.norm_squared()
    }
}

/// Dense operator on the truncated Fock space.
#[derive(Debug, Clone, PartialEq)]
pub struct FockOperator {
    entries: DMatrix<f64>,
    hermitian: bool,
}

impl FockOperator {
    /// Wraps a square matrix. A `hermitian` claim is checked against
    /// [`HERMITIAN_TOL`].
    pub fn new(entries: DMatrix<f64>, hermitian: bool) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(Error::InvalidParameter {
                name: "entries",
                value: entries.nrows() as f64,
                reason: "operator matrix must be square and non-empty",
            });
        }
        if let Some(bad) = entries.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "entries",
                value: *bad,
                reason: "operator entries must be finite",
            });
        }
        if hermitian {
            let asymmetry = max_asymmetry(&entries);
            if asymmetry > HERMITIAN_TOL {
                return Err(Error::NotHermitian { asymmetry });
            }
        }
        Ok(Self { entries, hermitian })
    }

    /// Symmetrizes `(M + Mᵀ)/2` and flags the result Hermitian.
    pub fn symmetrized(entries: DMatrix<f64>) -> Result<Self> {
        let sym = (&entries + entries.transpose()) * 0.5;
        Self::new(sym, true)
    }

    pub fn cutoff(&self) -> usize {
        self.entries.nrows() - 1
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn get(&self, n: usize, m: usize) -> f64 {
        self.entries[(n, m)]
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    /// Leading `(cutoff + 1) x (cutoff + 1)` block.
    pub fn truncated(&self, cutoff: usize) -> Self {
        let d = (cutoff + 1).min(self.dim());
        Self {
            entries: self.entries.view((0, 0), (d, d)).into_owned(),
            hermitian: self.hermitian,
        }
    }

    /// `Uᵀ M U` for a real (orthogonal) `U`.
    pub fn conjugated_by(&self, u: &DMatrix<f64>) -> Result<Self> {
        let out = u.transpose() * &self.entries * u;
        if self.hermitian {
            Self::symmetrized(out)
        } else {
            Self::new(out, false)
        }
    }

    /// True when every entry with `n + m` odd is exactly zero.
    pub fn has_even_parity(&self) -> bool {
        let d = self.dim();
        (0..d).all(|n| ((n + 1) % 2..d).step_by(2).all(|m| self.entries[(n, m)] == 0.0))
    }
}

pub(crate) fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `|α⟩` truncated at `cutoff`, with `α = q_alpha / √2`.
pub fn coherent_vector(q_alpha: f64, cutoff: usize) -> Result<FockVector> {
    check_finite("q_alpha", q_alpha)?;
    let alpha = q_alpha / std::f64::consts::SQRT_2;
    let ln_fact = ln_factorials(cutoff);
    let mut amps = vec![0.0; cutoff + 1];
    coherent_amplitudes_into(alpha, &ln_fact, &mut amps);
    Ok(FockVector::from_amplitudes(DVector::from_vec(amps)))
}

/// `ρ = ½|α⟩⟨α| + ½|-α⟩⟨-α|`, `α = q_alpha/√2 ≥ 0`.
///
/// The odd-`n+m` entries cancel between the two components and are written
/// as exact zeros.
pub fn rho_two_source(q_alpha: f64, cutoff: usize) -> Result<FockOperator> {
    check_finite("q_alpha", q_alpha)?;
    if q_alpha < 0.0 {
        return Err(Error::InvalidParameter {
            name: "q_alpha",
            value: q_alpha,
            reason: "two-source displacement must be >= 0",
        });
    }
    let c = coherent_vector(q_alpha, cutoff)?;
    let a = c.amplitudes();
    let d = cutoff + 1;
    let m = DMatrix::from_fn(d, d, |n, k| if (n + k) % 2 == 0 { a[n] * a[k] } else { 0.0 });
    FockOperator::new(m, true)
}

/// Ladder operator `â` with `⟨n|â|n+1⟩ = √(n+1)`.
pub fn annihilation(cutoff: usize) -> FockOperator {
    let d = cutoff + 1;
    let m = DMatrix::from_fn(d, d, |n, k| if k == n + 1 { (k as f64).sqrt() } else { 0.0 });
    FockOperator {
        entries: m,
        hermitian: false,
    }
}

/// Squeezed-thermal parameters of the prior-averaged coherent state under a
/// Gaussian prior of width `σ` on the position displacement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqueezeParams {
    pub r: f64,
    pub n_bar: f64,
    pub s: f64,
}

impl SqueezeParams {
    pub fn from_sigma(sigma: f64) -> Result<Self> {
        crate::error::check_finite("sigma", sigma)?;
        if sigma < 0.0 {
            return Err(Error::InvalidParameter {
                name: "sigma",
                value: sigma,
                reason: "must be >= 0",
            });
        }
        let g = 2.0 * sigma * sigma + 1.0;
        let root = g.sqrt();
        let n_bar = 0.5 * (root - 1.0);
        // s = n̄/(n̄+1) = (√g - 1)/(√g + 1) = tanh r
        Ok(Self {
            r: 0.25 * g.ln(),
            n_bar,
            s: (root - 1.0) / (root + 1.0),
        })
    }
}

/// Matrix of the squeezing unitary `Û(r) = exp(r(â†² - â²)/2)` in the number
/// basis, which satisfies `Û â Û† = â cosh r - â† sinh r`.
#[derive(Debug, Clone, PartialEq)]
pub struct SqueezeMatrix {
    pub op: FockOperator,
    pub r: f64,
    /// `max |(UᵀU - I)ₙₘ|` over `n, m ≤ cutoff/2`.
    pub interior_residual: f64,
}

impl SqueezeMatrix {
    pub fn is_trustworthy(&self) -> bool {
        self.interior_residual <= SQUEEZE_RESIDUAL_WARN
    }
}

/// Largest squeezing accepted by [`squeeze_matrix`].
pub const MAX_SQUEEZE: f64 = 5.0;

/// Writes the Hermite functions `ψₙ(x) = π^{-1/4} e^{-x²/2} Hₙ(x)/√(2ⁿn!)`
/// for `n < out.len()` using the normalized three-term recurrence.
pub(crate) fn hermite_functions_into(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp();
    if out.len() > 1 {
        out[1] = std::f64::consts::SQRT_2 * x * out[0];
    }
    for n in 1..out.len().saturating_sub(1) {
        let nf = n as f64;
        out[n + 1] = (2.0 / (nf + 1.0)).sqrt() * x * out[n] - (nf / (nf + 1.0)).sqrt() * out[n - 1];
    }
}

/// Matrix elements `⟨m|Û(r)|n⟩` of the untruncated squeezing unitary for
/// `m < rows`, `n < cols`.
///
/// `Û(r)` rescales position wavefunctions, `(Ûψ)(x) = e^{-r/2} ψ(e^{-r}x)`,
/// so each element is the overlap `∫ ψₘ(x) e^{-r/2} ψₙ(e^{-r}x) dx`, taken
/// by composite Gauss-Legendre quadrature over the even integrand. Elements
/// with `m + n` odd vanish by parity and are set to exact zeros. Column or
/// row recurrences derived from the Heisenberg relations are unstable here.
pub fn squeeze_elements(r: f64, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut c = DMatrix::<f64>::zeros(rows, cols);
    if rows == 0 || cols == 0 {
        return c;
    }
    if r == 0.0 {
        for k in 0..rows.min(cols) {
            c[(k, k)] = 1.0;
        }
        return c;
    }
    let k = rows.max(cols) as f64;
    let stretch = r.abs().exp();
    let turning = (2.0 * k + 1.0).sqrt();
    let cut = stretch * (turning + 10.0);
    let width = (2.0 * std::f64::consts::PI / (turning * stretch)).min(0.5);
    let panels = (cut / width).ceil() as usize;
    let rule = crate::quadrature::GaussLegendre::new(20);
    let nodes = crate::quadrature::composite_nodes(0.0, cut, panels, &rule);
    let scale = (-r).exp();
    let pre = (-0.5 * r).exp();
    let mut left = DMatrix::<f64>::zeros(rows, nodes.len());
    let mut right = DMatrix::<f64>::zeros(cols, nodes.len());
    let mut buf_l = vec![0.0; rows];
    let mut buf_r = vec![0.0; cols];
    for (j, &(x, w)) in nodes.iter().enumerate() {
        hermite_functions_into(x, &mut buf_l);
        hermite_functions_into(scale * x, &mut buf_r);
        for (i, v) in buf_l.iter().enumerate() {
            left[(i, j)] = 2.0 * w * v;
        }
        for (i, v) in buf_r.iter().enumerate() {
            right[(i, j)] = pre * v;
        }
    }
    left.mul_to(&right.transpose(), &mut c);
    for m in 0..rows {
        for n in ((m + 1) % 2..cols).step_by(2) {
            c[(m, n)] = 0.0;
        }
    }
    c
}

/// Truncated squeezing unitary of side `cutoff + 1`.
pub fn squeeze_matrix(r: f64, cutoff: usize) -> Result<SqueezeMatrix> {
    check_finite("r", r)?;
    if r.abs() > MAX_SQUEEZE {
        return Err(Error::InvalidParameter {
            name: "r",
            value: r,
            reason: "squeezing beyond |r| = 5 is outside the controlled truncation range",
        });
    }
    let d = cutoff + 1;
    let u = squeeze_elements(r, d, d);
    let half = cutoff / 2 + 1;
    let mut residual: f64 = 0.0;
    for n in 0..half {
        for m in 0..half {
            let dot = u.column(n).dot(&u.column(m));
            let target = if n == m { 1.0 } else { 0.0 };
            residual = residual.max((dot - target).abs());
        }
    }
    Ok(SqueezeMatrix {
        op: FockOperator {
            entries: u,
            hermitian: false,
        },
        r,
        interior_residual: residual,
    })
}

/// Eigendecomposition of a Hermitian operator, eigenvalues ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigh {
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors as columns, in the order of `values`.
    pub vectors: DMatrix<f64>,
}

impl Eigh {
    /// `max |M - V Λ Vᵀ|`.
    pub fn reconstruction_residual(&self, m: &DMatrix<f64>) -> f64 {
        let rebuilt = &self.vectors * DMatrix::from_diagonal(&self.values) * self.vectors.transpose();
        (m - rebuilt).amax()
    }

    /// `max |VᵀV - I|`.
    pub fn orthonormality_residual(&self) -> f64 {
        let d = self.vectors.ncols();
        (self.vectors.transpose() * &self.vectors - DMatrix::identity(d, d)).amax()
    }
}

pub fn eigh(op: &FockOperator) -> Result<Eigh> {
    if !op.is_hermitian() {
        return Err(Error::NotHermitian {
            asymmetry: max_asymmetry(op.entries()),
        });
    }
    Ok(eigh_symmetric(op.entries().clone()))
}

pub(crate) fn eigh_symmetric(mut m: DMatrix<f64>) -> Eigh {
    let d = m.nrows();
    // eigenvalues spanning more than ~300 decades make the implicit QR
    // shifts underflow to 0/0. Entries below 1e-60 of the largest shift no
    // eigenvalue by more than that, far under any threshold used downstream.
    let flush = m.amax() * 1e-60;
    m.apply(|x| {
        if x.abs() < flush {
            *x = 0.0;
        }
    });
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(d, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Eigh { values, vectors }
}
