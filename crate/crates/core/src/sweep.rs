//! Parameter sweeps over prior families, shared by the command-line and
//! browser front ends.
//!
//! A sweep evaluates one [`SweepRow`] per grid point. Rows are independent,
//! so callers may evaluate them in any order or in parallel; [`run_row`]
//! depends only on the configuration and the row index.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::measurements::{mc_mse, HomodyneModel, Measurement, PnrModel};
use crate::personick::{build_gamma_numeric, mmse_halfgaussian_auto, solve_auto, solve_b, SqueezedFrame};
use crate::priors::{invert_moments, Prior};
use crate::quadrature::QuadratureSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    /// Half-Gaussian prior, grid over `σ`.
    Fig1,
    /// Displaced half-Gaussian with fixed mean, grid over the variance.
    Fig2FixedMean,
    /// Displaced half-Gaussian with fixed variance, grid over the mean.
    Fig3FixedVariance,
    /// Displaced half-Gaussian with fixed location `μ`, grid over `σ`.
    Custom,
}

impl SweepMode {
    pub fn name(self) -> &'static str {
        match self {
            SweepMode::Fig1 => "fig1",
            SweepMode::Fig2FixedMean => "fig2_fixed_mean",
            SweepMode::Fig3FixedVariance => "fig3_fixed_variance",
            SweepMode::Custom => "custom",
        }
    }
}

impl FromStr for SweepMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fig1" => Ok(SweepMode::Fig1),
            "fig2_fixed_mean" | "fig2" => Ok(SweepMode::Fig2FixedMean),
            "fig3_fixed_variance" | "fig3" => Ok(SweepMode::Fig3FixedVariance),
            "custom" => Ok(SweepMode::Custom),
            _ => Err(format!(
                "unknown sweep mode `{s}` (expected fig1, fig2_fixed_mean, fig3_fixed_variance or custom)"
            )),
        }
    }
}

impl fmt::Display for SweepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spacing {
    Linear,
    Log,
}

/// `start:stop:count[:log]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
    pub spacing: Spacing,
}

impl Grid {
    pub fn new(start: f64, stop: f64, count: usize, spacing: Spacing) -> std::result::Result<Self, String> {
        let g = Self {
            start,
            stop,
            count,
            spacing,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.start.is_finite() && self.stop.is_finite()) {
            return Err("grid bounds must be finite".into());
        }
        if self.count < 2 {
            return Err("grid count must be >= 2".into());
        }
        if self.start >= self.stop {
            return Err("grid start must be < stop".into());
        }
        if self.spacing == Spacing::Log && self.start <= 0.0 {
            return Err("log grid needs start > 0".into());
        }
        Ok(())
    }

    pub fn point(&self, i: usize) -> f64 {
        let t = i as f64 / (self.count - 1) as f64;
        if i + 1 == self.count {
            return self.stop;
        }
        match self.spacing {
            Spacing::Linear => self.start + t * (self.stop - self.start),
            Spacing::Log => (self.start.ln() + t * (self.stop / self.start).ln()).exp(),
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.point(i)).collect()
    }
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if !(3..=4).contains(&parts.len()) {
            return Err(format!("grid `{s}` must be start:stop:count[:log]"));
        }
        let num = |p: &str| p.trim().parse::<f64>().map_err(|_| format!("bad number `{p}` in grid"));
        let count = parts[2]
            .trim()
            .parse::<usize>()
            .map_err(|_| format!("bad count `{}` in grid", parts[2]))?;
        let spacing = match parts.get(3).map(|p| p.trim()) {
            None | Some("lin") | Some("linear") => Spacing::Linear,
            Some("log") => Spacing::Log,
            Some(other) => return Err(format!("unknown grid spacing `{other}`")),
        };
        Grid::new(num(parts[0])?, num(parts[1])?, count, spacing)
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.stop, self.count)?;
        if self.spacing == Spacing::Log {
            f.write_str(":log")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutoffPolicy {
    Fixed(usize),
    Auto,
}

impl FromStr for CutoffPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.trim() == "auto" {
            return Ok(CutoffPolicy::Auto);
        }
        let n: usize = s
            .trim()
            .parse()
            .map_err(|_| format!("cutoff `{s}` must be an integer or `auto`"))?;
        if n < 4 {
            return Err("a fixed cutoff must be >= 4".into());
        }
        Ok(CutoffPolicy::Fixed(n))
    }
}

impl fmt::Display for CutoffPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CutoffPolicy::Fixed(n) => write!(f, "{n}"),
            CutoffPolicy::Auto => f.write_str("auto"),
        }
    }
}

/// Monte Carlo cross-check attached to every row of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McSettings {
    pub seed: u64,
    pub samples: usize,
}

impl McSettings {
    /// Per-row seed derived from the master seed and the row index.
    pub fn row_seed(&self, index: usize) -> u64 {
        self.seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub mode: SweepMode,
    /// Fixed mean (fig2), fixed variance (fig3) or fixed location (custom);
    /// unused by fig1.
    pub fixed: f64,
    pub grid: Grid,
    pub cutoff: CutoffPolicy,
    pub k_max: Option<usize>,
    pub quadrature: QuadratureSpec,
    pub mc: Option<McSettings>,
}

/// Default number of log-spaced grid points.
pub const DEFAULT_GRID_POINTS: usize = 50;

impl SweepConfig {
    pub fn new(mode: SweepMode, fixed: f64, grid: Grid) -> Self {
        Self {
            mode,
            fixed,
            grid,
            cutoff: CutoffPolicy::Auto,
            k_max: None,
            quadrature: QuadratureSpec::default(),
            mc: None,
        }
    }

    /// Half-Gaussian, `σ ∈ [0.1, 3]`.
    pub fn fig1() -> Self {
        Self::new(
            SweepMode::Fig1,
            f64::NAN,
            Grid::new(0.1, 3.0, DEFAULT_GRID_POINTS, Spacing::Log).expect("valid"),
        )
    }

    /// Fixed mean `mu_t`, variance in `[0.2, 2]`.
    pub fn fig2(mu_t: f64) -> Self {
        Self::new(
            SweepMode::Fig2FixedMean,
            mu_t,
            Grid::new(0.2, 2.0, DEFAULT_GRID_POINTS, Spacing::Log).expect("valid"),
        )
    }

    /// Fixed variance `sigma_t2`, mean in `[0.2, 5]`.
    pub fn fig3(sigma_t2: f64) -> Self {
        Self::new(
            SweepMode::Fig3FixedVariance,
            sigma_t2,
            Grid::new(0.2, 5.0, DEFAULT_GRID_POINTS, Spacing::Log).expect("valid"),
        )
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        self.grid.validate()?;
        if self.mode != SweepMode::Fig1 && !self.fixed.is_finite() {
            return Err(format!("mode {} needs a finite fixed parameter", self.mode));
        }
        if let CutoffPolicy::Fixed(n) = self.cutoff {
            if n < 4 {
                return Err("a fixed cutoff must be >= 4".into());
            }
        }
        if let Some(mc) = self.mc {
            if mc.samples < crate::measurements::MC_MIN_SAMPLES {
                return Err("Monte Carlo needs at least 10000 samples".into());
            }
        }
        self.quadrature.validate().map_err(|e| e.to_string())
    }

    /// Prior at grid point `i`, plus whether the moment fit needed `μ < 0`.
    pub fn prior_at(&self, i: usize) -> Result<(Prior, bool)> {
        let x = self.grid.point(i);
        match self.mode {
            SweepMode::Fig1 => Ok((Prior::half_gaussian(x)?, false)),
            SweepMode::Custom => Ok((Prior::displaced(self.fixed, x)?, self.fixed < 0.0)),
            SweepMode::Fig2FixedMean | SweepMode::Fig3FixedVariance => {
                let (mu_t, sigma_t2) = if self.mode == SweepMode::Fig2FixedMean {
                    (self.fixed, x)
                } else {
                    (x, self.fixed)
                };
                let fit = invert_moments(mu_t, sigma_t2)?;
                Ok((Prior::displaced(fit.mu, fit.sigma)?, fit.uses_negative_mu()))
            }
        }
    }

    /// Target `(μ_t, σ_t²)` at grid point `i`, independent of whether the
    /// point is attainable.
    pub fn targets_at(&self, i: usize) -> (f64, f64) {
        let x = self.grid.point(i);
        match self.mode {
            SweepMode::Fig2FixedMean => (self.fixed, x),
            SweepMode::Fig3FixedVariance => (x, self.fixed),
            SweepMode::Fig1 | SweepMode::Custom => match self.prior_at(i) {
                Ok((p, _)) => {
                    let m = p.moments();
                    (m.mean, m.variance)
                }
                Err(_) => (f64::NAN, f64::NAN),
            },
        }
    }

    /// `key=value` lines describing the configuration, in a fixed order.
    pub fn echo(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("mode".to_string(), self.mode.to_string()),
            ("fixed".to_string(), fmt_value(self.fixed)),
            ("grid".to_string(), self.grid.to_string()),
            ("cutoff".to_string(), self.cutoff.to_string()),
            (
                "k_max".to_string(),
                self.k_max.map_or("auto".to_string(), |k| k.to_string()),
            ),
            (
                "quadrature_nodes".to_string(),
                self.quadrature.nodes_per_panel.to_string(),
            ),
            ("quadrature_cut".to_string(), fmt_value(self.quadrature.domain_cut)),
            ("quadrature_rel_tol".to_string(), fmt_value(self.quadrature.rel_tol)),
        ];
        match self.mc {
            Some(mc) => {
                out.push(("seed".to_string(), mc.seed.to_string()));
                out.push(("mc_samples".to_string(), mc.samples.to_string()));
            }
            None => out.push(("seed".to_string(), "none".to_string())),
        }
        out
    }
}

/// 17 significant digits, `.` decimal separator.
pub fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

/// MMSE and measurement MSEs for one prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub mu_t: f64,
    pub sigma_t2: f64,
    pub mu: f64,
    pub sigma: f64,
    pub cutoff_used: usize,
    pub mmse: f64,
    pub mse_spade: f64,
    pub mse_di: f64,
    pub k_max: usize,
    pub dropped_eigenpairs: usize,
    /// `NaN` when the MMSE came from the analytic half-Gaussian sum, which
    /// never forms `B` in the number basis.
    pub lyapunov_residual: f64,
    /// Relative MMSE change on doubling the cutoff (auto policy only).
    pub cutoff_rel_change: f64,
    /// MMSE at twice the selected cutoff, computed by the auto policy's
    /// convergence test; `NaN` for a fixed cutoff.
    pub mmse_doubled: f64,
    pub flags: Vec<&'static str>,
}

impl PointResult {
    pub fn ratio_di_over_spade(&self) -> f64 {
        self.mse_di / self.mse_spade
    }
}

/// Evaluates one prior. Half-Gaussian priors use the analytic MMSE sum;
/// displaced priors use the numeric number-basis route.
pub fn evaluate_point(
    prior: &Prior,
    cutoff: CutoffPolicy,
    k_max: Option<usize>,
    spec: &QuadratureSpec,
) -> Result<PointResult> {
    let mut flags = Vec::new();
    let (cutoff_used, mmse, dropped, residual, doubled) = match (prior, cutoff) {
        (Prior::HalfGaussian(p), CutoffPolicy::Auto) => {
            let c = mmse_halfgaussian_auto(p.sigma())?;
            (c.cutoff, c.mmse, 0, f64::NAN, c.doubled_mmse)
        }
        (Prior::HalfGaussian(p), CutoffPolicy::Fixed(n)) => {
            (n, SqueezedFrame::new(p.sigma(), n)?.mmse(n), 0, f64::NAN, f64::NAN)
        }
        (_, CutoffPolicy::Auto) => {
            let a = solve_auto(prior, spec)?;
            (
                a.choice.cutoff,
                a.solution.mmse,
                a.solution.dropped_pairs,
                a.solution.lyapunov_residual,
                a.choice.doubled_mmse,
            )
        }
        (_, CutoffPolicy::Fixed(n)) => {
            let sol = solve_b(&build_gamma_numeric(prior, n, spec)?)?;
            (n, sol.mmse, sol.dropped_pairs, sol.lyapunov_residual, f64::NAN)
        }
    };
    if dropped > 0 {
        flags.push("dropped_eigenpairs");
    }
    let pnr = PnrModel::new(prior, k_max, spec)?;
    let di = HomodyneModel::new(prior, spec)?;
    let m = prior.moments();
    Ok(PointResult {
        mu_t: m.mean,
        sigma_t2: m.variance,
        mu: prior.location(),
        sigma: prior.sigma(),
        cutoff_used,
        mmse,
        mse_spade: pnr.mse(),
        mse_di: di.mse(),
        k_max: pnr.k_max(),
        dropped_eigenpairs: dropped,
        lyapunov_residual: residual,
        cutoff_rel_change: (mmse - doubled).abs() / doubled.abs(),
        mmse_doubled: doubled,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct McColumns {
    pub spade: f64,
    pub spade_se: f64,
    pub di: f64,
    pub di_se: f64,
}

/// One sweep record; `result` carries the error message for points that
/// could not be evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub grid_value: f64,
    pub target_mu_t: f64,
    pub target_sigma_t2: f64,
    pub result: std::result::Result<PointResult, String>,
    pub mc: Option<McColumns>,
}

pub fn run_row(config: &SweepConfig, index: usize) -> SweepRow {
    let (target_mu_t, target_sigma_t2) = config.targets_at(index);
    let mut mc = None;
    let result = config.prior_at(index).and_then(|(prior, negative_mu)| {
        let mut r = evaluate_point(&prior, config.cutoff, config.k_max, &config.quadrature)?;
        if negative_mu {
            r.flags.push("negative_mu");
        }
        if let Some(settings) = config.mc {
            let seed = settings.row_seed(index);
            let s = mc_mse(Measurement::Pnr, &prior, settings.samples, seed, &config.quadrature)?;
            let d = mc_mse(
                Measurement::Homodyne,
                &prior,
                settings.samples,
                seed ^ 1,
                &config.quadrature,
            )?;
            mc = Some(McColumns {
                spade: s.estimate,
                spade_se: s.std_error,
                di: d.estimate,
                di_se: d.std_error,
            });
        }
        Ok(r)
    });
    SweepRow {
        index,
        grid_value: config.grid.point(index),
        target_mu_t,
        target_sigma_t2,
        result: result.map_err(|e: Error| e.to_string()),
        mc,
    }
}

/// Sequential sweep in grid order.
pub fn run_sweep(config: &SweepConfig) -> Vec<SweepRow> {
    (0..config.grid.count).map(|i| run_row(config, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g: Grid = "0.2:2:5".parse().unwrap();
        assert_eq!(g.points(), vec![0.2, 0.65, 1.1, 1.55, 2.0]);
        let g: Grid = "0.1:10:3:log".parse().unwrap();
        assert!((g.point(1) - 1.0).abs() < 1e-15);
        assert_eq!(g.point(2), 10.0);
        assert!("1:0:3".parse::<Grid>().is_err());
        assert!("0:1:1".parse::<Grid>().is_err());
        assert!("0:1:3:log".parse::<Grid>().is_err());
        assert!("a:1:3".parse::<Grid>().is_err());
        assert_eq!(g.to_string(), "0.1:10:3:log");
    }

    #[test]
    fn cutoff_parsing() {
        assert_eq!("auto".parse::<CutoffPolicy>().unwrap(), CutoffPolicy::Auto);
        assert_eq!("35".parse::<CutoffPolicy>().unwrap(), CutoffPolicy::Fixed(35));
        assert!("3".parse::<CutoffPolicy>().is_err());
        assert!("x".parse::<CutoffPolicy>().is_err());
    }

    #[test]
    fn unreachable_point_becomes_error_row() {
        let mut cfg = SweepConfig::fig3(0.05);
        cfg.grid = Grid::new(0.2, 0.5, 2, Spacing::Linear).unwrap();
        let row = run_row(&cfg, 0);
        assert!(row.result.is_err());
        assert_eq!(row.target_mu_t, 0.2);
        let row = run_row(&cfg, 1);
        let r = row.result.unwrap();
        assert!((r.mu_t - 0.5).abs() < 1e-8 && (r.sigma_t2 - 0.05).abs() < 1e-8);
    }

    #[test]
    fn half_gaussian_point() {
        let r = evaluate_point(
            &Prior::half_gaussian(1.0).unwrap(),
            CutoffPolicy::Auto,
            None,
            &QuadratureSpec::default(),
        )
        .unwrap();
        assert!((r.mse_spade - 0.196_289_062).abs() < 1e-6);
        assert!(r.mmse <= r.mse_spade && r.mmse <= r.mse_di);
    }

    #[test]
    fn row_seeds_differ() {
        let mc = McSettings {
            seed: 5,
            samples: 10_000,
        };
        assert_ne!(mc.row_seed(0), mc.row_seed(1));
        assert_eq!(mc.row_seed(3), mc.row_seed(3));
    }
}
