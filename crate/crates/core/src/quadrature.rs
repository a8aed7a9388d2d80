//! One-dimensional quadrature for smooth integrands with Gaussian decay.
//!
//! Two rules are offered: a composite Gauss-Legendre rule refined by panel
//! doubling, and a globally adaptive Gauss-Kronrod (7/15) rule. Integrals on
//! the half line or the full line are cut at `domain_cut`; callers that know
//! the decay scale of their integrand pick the cut with [`gaussian_cut`].
//!
//! The vector-valued integrals used to build Fock-space operators reuse the
//! same Gauss-Legendre panels through [`composite_nodes`].

use crate::error::{Error, Result};

/// Number of decay scales kept by [`gaussian_cut`]; `exp(-12^2 / 2)` is
/// below `1e-31`.
pub const DECAY_SCALES: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    GaussLegendreComposite,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub rule: Rule,
    pub nodes_per_panel: usize,
    /// Integration runs on `[0, L]` or `[-L, L]` for infinite domains.
    pub domain_cut: f64,
    pub rel_tol: f64,
    /// Panel (or subinterval) budget before reporting non-convergence.
    pub max_panels: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            rule: Rule::GaussLegendreComposite,
            nodes_per_panel: 20,
            domain_cut: DECAY_SCALES,
            rel_tol: 1e-12,
            max_panels: 1 << 14,
        }
    }
}

impl QuadratureSpec {
    pub fn adaptive() -> Self {
        Self {
            rule: Rule::Adaptive,
            ..Self::default()
        }
    }

    pub fn with_cut(mut self, domain_cut: f64) -> Self {
        self.domain_cut = domain_cut;
        self
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes_per_panel < 2 {
            return Err(Error::InvalidParameter {
                name: "nodes_per_panel",
                value: self.nodes_per_panel as f64,
                reason: "must be >= 2",
            });
        }
        crate::error::check_positive("rel_tol", self.rel_tol)?;
        crate::error::check_positive("domain_cut", self.domain_cut)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    Finite(f64, f64),
    /// `[0, inf)`, truncated at the spec's `domain_cut`.
    HalfLine,
    /// `(-inf, inf)`, truncated at `[-domain_cut, domain_cut]`.
    FullLine,
}

impl Domain {
    fn bounds(self, cut: f64) -> (f64, f64) {
        match self {
            Domain::Finite(a, b) => (a, b),
            Domain::HalfLine => (0.0, cut),
            Domain::FullLine => (-cut, cut),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// Upper integration limit for an integrand whose envelope is a Gaussian of
/// width `scale` centred at `center`.
pub fn gaussian_cut(center: f64, scale: f64) -> f64 {
    center + DECAY_SCALES * scale
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            weights[i] = w;
            nodes[n - 1 - i] = x;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Single-panel rule on `[a, b]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Nodes and weights of a composite Gauss-Legendre rule on `[a, b]` with
/// `panels` equal panels.
pub fn composite_nodes(a: f64, b: f64, panels: usize, rule: &GaussLegendre) -> Vec<(f64, f64)> {
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * rule.len());
    for p in 0..panels {
        let lo = a + h * p as f64;
        let mid = lo + 0.5 * h;
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            out.push((mid + 0.5 * h * x, 0.5 * h * w));
        }
    }
    out
}

/// Integrates `f` over `domain`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, domain: Domain, spec: &QuadratureSpec) -> Result<Estimate> {
    spec.validate()?;
    let (a, b) = domain.bounds(spec.domain_cut);
    if a == b {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    match spec.rule {
        Rule::GaussLegendreComposite => composite(&f, a, b, spec),
        Rule::Adaptive => adaptive(&f, a, b, spec),
    }
}

fn composite<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<Estimate> {
    let rule = GaussLegendre::new(spec.nodes_per_panel);
    let sum = |panels: usize| -> (f64, f64) {
        composite_nodes(a, b, panels, &rule)
            .into_iter()
            .fold((0.0, 0.0), |(s, abs), (x, w)| {
                let v = f(x);
                (s + w * v, abs + w * v.abs())
            })
    };
    let mut panels = 4;
    let (mut prev, _) = sum(panels);
    loop {
        panels *= 2;
        let (value, scale) = sum(panels);
        let error = (value - prev).abs();
        if error <= spec.rel_tol * value.abs().max(1e-3 * scale) || error == 0.0 {
            return Ok(Estimate { value, error });
        }
        if panels >= spec.max_panels {
            return Err(Error::QuadratureNonConvergence { best: value, error });
        }
        prev = value;
    }
}

// Gauss-Kronrod 7/15 abscissae and weights (QUADPACK qk15).
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let pair = f(c - x) + f(c + x);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<Estimate> {
    // (lo, hi, value, error)
    let mut pieces: Vec<(f64, f64, f64, f64)> = Vec::new();
    let initial = 8;
    let h = (b - a) / initial as f64;
    for i in 0..initial {
        let lo = a + h * i as f64;
        let hi = if i + 1 == initial { b } else { lo + h };
        let (v, e) = kronrod15(f, lo, hi);
        pieces.push((lo, hi, v, e));
    }
    loop {
        let value: f64 = pieces.iter().map(|p| p.2).sum();
        let error: f64 = pieces.iter().map(|p| p.3).sum();
        let scale: f64 = pieces.iter().map(|p| p.2.abs()).sum();
        if error <= spec.rel_tol * value.abs().max(1e-3 * scale) || error == 0.0 {
            return Ok(Estimate { value, error });
        }
        if pieces.len() >= spec.max_panels {
            return Err(Error::QuadratureNonConvergence { best: value, error });
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (lo, hi, _, _) = pieces.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = kronrod15(f, lo, mid);
        let (v2, e2) = kronrod15(f, mid, hi);
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
    }
}

/// `∫₀^∞ q^(k+1) e^(-A q²) dq = Γ((k+2)/2) / (2 A^((k+2)/2))`.
pub fn halfline_gaussian_moment(k: u32, a: f64) -> Result<f64> {
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::InvalidParameter {
            name: "A",
            value: a,
            reason: "Gaussian exponent must be > 0",
        });
    }
    let p = (k as f64 + 2.0) / 2.0;
    Ok((libm::lgamma(p) - p * a.ln()).exp() / 2.0)
}
