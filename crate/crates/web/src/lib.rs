//! Browser bindings. Each export returns a JSON string; the page in `www/`
//! draws it on a canvas.
//!
//! The computation lives in plain functions returning `serde` structs so
//! it can be tested natively; the `#[wasm_bindgen]` wrappers only serialize.

use serde::Serialize;
use superres_bayes::priors::{invert_moments, Prior};
use superres_bayes::quadrature::QuadratureSpec;
use superres_bayes::sweep::{evaluate_point, run_row, CutoffPolicy, Grid, Spacing, SweepConfig};
use wasm_bindgen::prelude::*;

/// Upper bound on points per curve, to keep a page responsive.
pub const MAX_POINTS: usize = 120;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CurvePoint {
    pub x: f64,
    pub mmse: Option<f64>,
    pub spade: Option<f64>,
    pub di: Option<f64>,
    pub ratio: Option<f64>,
    pub cutoff: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Curve {
    pub x_label: &'static str,
    pub points: Vec<CurvePoint>,
    /// Swept values where `mse_di/mse_spade` crosses 1.
    pub crossings: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PriorView {
    pub mu: f64,
    pub sigma: f64,
    pub negative_mu: bool,
    pub q: Vec<f64>,
    pub density: Vec<f64>,
    pub mmse: f64,
    pub spade: f64,
    pub di: f64,
    pub cutoff: usize,
}

fn check_count(count: usize) -> Result<(), String> {
    if (2..=MAX_POINTS).contains(&count) {
        Ok(())
    } else {
        Err(format!("point count must be between 2 and {MAX_POINTS}"))
    }
}

fn run_curve(config: &SweepConfig, x_label: &'static str) -> Curve {
    let points: Vec<CurvePoint> = (0..config.grid.count)
        .map(|i| {
            let row = run_row(config, i);
            match row.result {
                Ok(r) => CurvePoint {
                    x: row.grid_value,
                    mmse: Some(r.mmse),
                    spade: Some(r.mse_spade),
                    di: Some(r.mse_di),
                    ratio: Some(r.ratio_di_over_spade()),
                    cutoff: Some(r.cutoff_used),
                    error: None,
                },
                Err(e) => CurvePoint {
                    x: row.grid_value,
                    mmse: None,
                    spade: None,
                    di: None,
                    ratio: None,
                    cutoff: None,
                    error: Some(e),
                },
            }
        })
        .collect();
    let crossings = points
        .windows(2)
        .filter_map(|w| match (w[0].ratio, w[1].ratio) {
            (Some(a), Some(b)) if (a < 1.0) != (b < 1.0) => Some(w[0].x + (1.0 - a) * (w[1].x - w[0].x) / (b - a)),
            _ => None,
        })
        .collect();
    Curve {
        x_label,
        points,
        crossings,
    }
}

/// MMSE, SPADE and direct-imaging MSE against the half-Gaussian width.
pub fn half_gaussian_curve(sigma_min: f64, sigma_max: f64, count: usize) -> Result<Curve, String> {
    check_count(count)?;
    let mut config = SweepConfig::fig1();
    config.grid = Grid::new(sigma_min, sigma_max, count, Spacing::Log)?;
    config.validate()?;
    Ok(run_curve(&config, "sigma"))
}

/// The three errors against the prior variance at a fixed prior mean.
pub fn fixed_mean_curve(mu_t: f64, var_min: f64, var_max: f64, count: usize) -> Result<Curve, String> {
    check_count(count)?;
    if !(mu_t.is_finite() && mu_t > 0.0) {
        return Err(format!("prior mean must be positive, got {mu_t}"));
    }
    let mut config = SweepConfig::fig2(mu_t);
    config.grid = Grid::new(var_min, var_max, count, Spacing::Linear)?;
    config.validate()?;
    Ok(run_curve(&config, "variance"))
}

/// Fits a displaced half-Gaussian to `(mu_t, sigma_t2)`, samples its
/// density and evaluates the three errors.
pub fn prior_view(mu_t: f64, sigma_t2: f64, samples: usize) -> Result<PriorView, String> {
    check_count(samples)?;
    let fit = invert_moments(mu_t, sigma_t2).map_err(|e| e.to_string())?;
    let prior = Prior::displaced(fit.mu, fit.sigma).map_err(|e| e.to_string())?;
    let hi = mu_t + 5.0 * sigma_t2.sqrt();
    let q: Vec<f64> = (0..samples).map(|i| hi * i as f64 / (samples - 1) as f64).collect();
    let density = q.iter().map(|&x| prior.pdf(x).unwrap_or(0.0)).collect();
    let r = evaluate_point(&prior, CutoffPolicy::Auto, None, &QuadratureSpec::default()).map_err(|e| e.to_string())?;
    Ok(PriorView {
        mu: fit.mu,
        sigma: fit.sigma,
        negative_mu: fit.uses_negative_mu(),
        q,
        density,
        mmse: r.mmse,
        spade: r.mse_spade,
        di: r.mse_di,
        cutoff: r.cutoff_used,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = halfGaussianCurve)]
pub fn half_gaussian_curve_js(sigma_min: f64, sigma_max: f64, count: usize) -> Result<String, JsValue> {
    to_js(half_gaussian_curve(sigma_min, sigma_max, count))
}

#[wasm_bindgen(js_name = fixedMeanCurve)]
pub fn fixed_mean_curve_js(mu_t: f64, var_min: f64, var_max: f64, count: usize) -> Result<String, JsValue> {
    to_js(fixed_mean_curve(mu_t, var_min, var_max, count))
}

#[wasm_bindgen(js_name = priorView)]
pub fn prior_view_js(mu_t: f64, sigma_t2: f64, samples: usize) -> Result<String, JsValue> {
    to_js(prior_view(mu_t, sigma_t2, samples))
}
