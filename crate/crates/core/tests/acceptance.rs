//! The twelve acceptance criteria. Each test writes one `PASS`/`FAIL` line
//! to stderr (uncaptured, so it shows in a plain `cargo test` run) before
//! asserting.

use std::io::Write;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use superres_bayes::fock::squeeze_elements;
use superres_bayes::measurements::{mc_mse, mse_homodyne, mse_pnr, mse_pnr_closed_form, Measurement};
use superres_bayes::personick::{
    build_gamma0_analytic, build_gamma_numeric, build_gamma_single_source, gamma1_elements_analytic, solve_auto,
    solve_b, GammaTriple, SqueezedFrame,
};
use superres_bayes::priors::Prior;
use superres_bayes::quadrature::{integrate, Domain, QuadratureSpec};
use superres_bayes::sweep::{evaluate_point, run_sweep, CutoffPolicy, SweepConfig, SweepRow};
use superres_bayes::{fock::FockOperator, sweep::Grid, sweep::Spacing};

// Pinned tolerances.
const TOL_SINGLE_SOURCE: f64 = 1e-6;
const TOL_GAMMA2_QUAD: f64 = 1e-10;
const TOL_PNR_CLOSED: f64 = 1e-8;
const PNR_AT_ONE: f64 = 0.19625;
const TOL_PNR_AT_ONE: f64 = 5e-5;
const ORDERING_SLACK: f64 = 1e-8;
const TOL_GAMMA_AGREEMENT: f64 = 1e-8;
const TOL_PARITY_NUMERIC: f64 = 1e-12;
const TOL_LYAPUNOV: f64 = 1e-9;
const TOL_INVARIANCE: f64 = 1e-7;
const TOL_CUTOFF_REL: f64 = 1e-6;
const CUTOFF_BOUND: usize = 64;
const CROSSING_WINDOW: (f64, f64) = (0.8, 1.4);
const SPADE_NEAR_OPTIMAL: f64 = 0.10;
const TOL_COLLAPSE: f64 = 0.05;
const MC_SAMPLES: usize = 1_000_000;
const MC_STD_ERRORS: f64 = 3.0;

fn report(id: u8, passed: bool, detail: &str) {
    let tag = if passed { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "{tag} criterion {id}: {detail}");
    assert!(passed, "criterion {id} failed: {detail}");
}

fn spec() -> QuadratureSpec {
    QuadratureSpec::default()
}

fn sweeps() -> &'static Vec<(SweepConfig, Vec<SweepRow>)> {
    static CELL: OnceLock<Vec<(SweepConfig, Vec<SweepRow>)>> = OnceLock::new();
    CELL.get_or_init(|| {
        [
            SweepConfig::fig1(),
            SweepConfig::fig2(1.0),
            SweepConfig::fig2(2.0),
            SweepConfig::fig3(0.05),
            SweepConfig::fig3(0.2),
            SweepConfig::fig3(1.0),
        ]
        .into_iter()
        .map(|c| {
            let rows = run_sweep(&c);
            (c, rows)
        })
        .collect()
    })
}

fn sigma_grid_20() -> impl Iterator<Item = f64> {
    (0..20).map(|i| 0.1 + 2.9 * i as f64 / 19.0)
}

fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Photon counting on a half-Gaussian prior, summed term by term:
/// `mse = σ² - Σₖ P(k) E[q|k]²` with
/// `P(k) = √(2/π)/σ · Γ(k+½) / (2·2ᵏ k! a^(k+½))`,
/// `E[q|k] = Γ(k+1)/(Γ(k+½)√a)` and `a = ½ + 1/(2σ²)`.
fn pnr_oracle(sigma: f64) -> f64 {
    let a = 0.5 + 0.5 / (sigma * sigma);
    let ln_pref = (2.0 / std::f64::consts::PI).sqrt().ln() - sigma.ln() - 2f64.ln();
    let mut acc = 0.0;
    for k in 0..100_000 {
        let kf = k as f64;
        let ln_p = ln_pref + ln_gamma(kf + 0.5) - kf * 2f64.ln() - ln_gamma(kf + 1.0) - (kf + 0.5) * a.ln();
        let ln_m = ln_gamma(kf + 1.0) - ln_gamma(kf + 0.5) - 0.5 * a.ln();
        let term = (ln_p + 2.0 * ln_m).exp();
        acc += term;
        if kf > 2.0 / a && term < 1e-20 * acc {
            break;
        }
    }
    sigma * sigma - acc
}

#[test]
fn criterion_01_single_source_anchor() {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for sigma in [0.1, 0.5, 1.0, 2.0, 5.0] {
        let cutoff = solve_auto(&Prior::full_gaussian(sigma).unwrap(), &spec())
            .unwrap()
            .choice
            .cutoff;
        let sol = solve_b(&build_gamma_single_source(sigma, cutoff, &spec()).unwrap()).unwrap();
        let s2 = sigma * sigma;
        let d = (sol.mmse - s2 / (1.0 + 2.0 * s2)).abs();
        let t = (sol.tr_b_gamma1 - 2.0 * s2 * s2 / (1.0 + 2.0 * s2)).abs();
        worst = worst.max(d).max(t);
        parts.push(format!("sigma={sigma}@{cutoff}"));
    }
    report(
        1,
        worst <= TOL_SINGLE_SOURCE,
        &format!("max |error| {worst:.3e} <= {TOL_SINGLE_SOURCE:e} ({})", parts.join(" ")),
    );
}

#[test]
fn criterion_02_half_gaussian_trace() {
    let adaptive = QuadratureSpec::adaptive();
    let mut exact = true;
    let mut worst: f64 = 0.0;
    for sigma in sigma_grid_20() {
        let p = Prior::half_gaussian(sigma).unwrap();
        exact &= p.moments().m2 == sigma * sigma;
        exact &= build_gamma_numeric(&p, 8, &spec()).unwrap().gamma2_trace == sigma * sigma;
        let norm = (2.0 / std::f64::consts::PI).sqrt() / sigma;
        let quad = integrate(
            |q| norm * q * q * (-0.5 * q * q / (sigma * sigma)).exp(),
            Domain::Finite(0.0, 40.0 * sigma),
            &adaptive,
        )
        .unwrap();
        worst = worst.max((quad.value - sigma * sigma).abs());
    }
    report(
        2,
        exact && worst <= TOL_GAMMA2_QUAD,
        &format!("closed form exact: {exact}; quadrature max |error| {worst:.3e} <= {TOL_GAMMA2_QUAD:e}"),
    );
}

#[test]
fn criterion_03_pnr_closed_form() {
    let mut worst: f64 = 0.0;
    for sigma in sigma_grid_20() {
        let p = Prior::half_gaussian(sigma).unwrap();
        let quad = mse_pnr(&p, None, &spec()).unwrap();
        let closed = mse_pnr_closed_form(&p).unwrap();
        let oracle = pnr_oracle(sigma);
        worst = worst.max((quad - closed).abs()).max((quad - oracle).abs());
    }
    let p1 = Prior::half_gaussian(1.0).unwrap();
    let at_one = mse_pnr(&p1, None, &spec()).unwrap();
    let near = (at_one - PNR_AT_ONE).abs() <= TOL_PNR_AT_ONE;
    report(
        3,
        worst <= TOL_PNR_CLOSED && near,
        &format!(
            "max |quadrature - closed form| {worst:.3e} <= {TOL_PNR_CLOSED:e}; sigma=1 gives {at_one:.8} (~{PNR_AT_ONE} within {TOL_PNR_AT_ONE:e})"
        ),
    );
}

#[test]
fn criterion_04_lower_bound_ordering() {
    let (mut checked, mut skipped) = (0, 0);
    let mut bad = Vec::new();
    for (cfg, rows) in sweeps() {
        for row in rows {
            let Ok(r) = &row.result else {
                skipped += 1;
                continue;
            };
            checked += 1;
            let mmse = if r.mmse_doubled.is_finite() {
                r.mmse_doubled
            } else {
                r.mmse
            };
            if mmse > r.mse_spade + ORDERING_SLACK || mmse > r.mse_di + ORDERING_SLACK {
                bad.push(format!("{}[{}]", cfg.mode, row.index));
            }
        }
    }
    report(
        4,
        bad.is_empty() && checked > 200,
        &format!(
            "{checked} points, {skipped} unattainable targets skipped, violations {bad:?} (slack {ORDERING_SLACK:e})"
        ),
    );
}

#[test]
fn criterion_05_gamma_agreement() {
    let padded = 160;
    let (mut e0, mut e1): (f64, f64) = (0.0, 0.0);
    for sigma in [0.5, 1.0, 2.0] {
        let numeric = build_gamma_numeric(&Prior::half_gaussian(sigma).unwrap(), padded, &spec()).unwrap();
        let a0 = build_gamma0_analytic(sigma, 30).unwrap();
        e0 = e0.max((a0.entries() - numeric.gamma0.truncated(30).entries()).amax());
        let r = SqueezedFrame::new(sigma, 30).unwrap().params.r;
        let u = squeeze_elements(r, padded + 1, 31);
        let rotated = u.transpose() * numeric.gamma1.entries() * &u;
        e1 = e1.max((rotated - gamma1_elements_analytic(sigma, 30).unwrap().entries()).amax());
    }
    report(
        5,
        e0 <= TOL_GAMMA_AGREEMENT && e1 <= TOL_GAMMA_AGREEMENT,
        &format!("Gamma_0 {e0:.3e}, Gamma_1 {e1:.3e} <= {TOL_GAMMA_AGREEMENT:e}"),
    );
}

#[test]
fn criterion_06_parity_rule() {
    let mut exact = true;
    let mut numeric: f64 = 0.0;
    for sigma in [0.5, 1.0, 2.0] {
        let a = gamma1_elements_analytic(sigma, 30).unwrap();
        let n = build_gamma_numeric(&Prior::half_gaussian(sigma).unwrap(), 30, &spec()).unwrap();
        let frame = SqueezedFrame::new(sigma, 30).unwrap();
        for i in 0..=30 {
            for j in 0..=30 {
                if (i + j) % 2 == 1 {
                    exact &= a.get(i, j) == 0.0 && frame.element(i, j) == 0.0;
                    numeric = numeric.max(n.gamma0.get(i, j).abs()).max(n.gamma1.get(i, j).abs());
                }
            }
        }
    }
    report(
        6,
        exact && numeric <= TOL_PARITY_NUMERIC,
        &format!(
            "analytic odd entries exactly zero: {exact}; numeric max |odd| {numeric:.3e} <= {TOL_PARITY_NUMERIC:e}"
        ),
    );
}

fn lyapunov_residual(g: &GammaTriple, b: &FockOperator) -> f64 {
    let g0 = g.gamma0.entries();
    let b = b.entries();
    (g0 * b + b * g0 - g.gamma1.entries() * 2.0).amax()
}

#[test]
fn criterion_07_lyapunov_residual() {
    let mut worst_clean: f64 = 0.0;
    let mut drops = Vec::new();
    for sigma in [0.1, 0.5, 1.0, 2.0, 3.0] {
        let full = build_gamma_numeric(&Prior::half_gaussian(sigma).unwrap(), 40, &spec()).unwrap();
        for cutoff in [10, 20, 30, 40] {
            let g = full.truncated(cutoff);
            let sol = solve_b(&g).unwrap();
            if sol.dropped_pairs == 0 {
                worst_clean = worst_clean.max(lyapunov_residual(&g, &sol.b));
            } else {
                drops.push(format!("{sigma}/{cutoff}:{}", sol.dropped_pairs));
            }
        }
    }
    report(
        7,
        worst_clean <= TOL_LYAPUNOV && drops.is_empty(),
        &format!(
            "residual without drops {worst_clean:.3e} <= {TOL_LYAPUNOV:e}; dropped pairs (sigma/cutoff:count) {drops:?}"
        ),
    );
}

/// Conjugates both operators by `Û(r)` in a basis padded far enough that
/// the rotation itself loses nothing, then re-solves.
fn rotated_mmse(g: &GammaTriple, r: f64) -> f64 {
    let d = g.cutoff() + 1;
    let padded = 3 * d + 60;
    let u = squeeze_elements(r, padded, padded);
    let embed = |m: &DMatrix<f64>| {
        let mut out = DMatrix::zeros(padded, padded);
        out.view_mut((0, 0), (d, d)).copy_from(m);
        out
    };
    let g0 = u.transpose() * embed(g.gamma0.entries()) * &u;
    let g1 = u.transpose() * embed(g.gamma1.entries()) * &u;
    let sym = |m: DMatrix<f64>| FockOperator::symmetrized(m).unwrap();
    let rotated = GammaTriple {
        gamma0: sym(g0),
        gamma1: sym(g1),
        gamma2_trace: g.gamma2_trace,
    };
    solve_b(&rotated).unwrap().mmse
}

#[test]
fn criterion_08_unitary_invariance() {
    let triples = [
        build_gamma_single_source(1.0, 40, &spec()).unwrap(),
        build_gamma_numeric(&Prior::half_gaussian(1.0).unwrap(), 40, &spec()).unwrap(),
        build_gamma_numeric(&Prior::displaced(1.0, 0.5).unwrap(), 40, &spec()).unwrap(),
    ];
    let mut worst: f64 = 0.0;
    for g in &triples {
        let before = solve_b(g).unwrap().mmse;
        worst = worst.max((rotated_mmse(g, 0.3) - before).abs());
    }
    report(
        8,
        worst <= TOL_INVARIANCE,
        &format!("max |change| {worst:.3e} <= {TOL_INVARIANCE:e}"),
    );
}

#[test]
fn criterion_09_cutoff_convergence() {
    let mut worst: f64 = 0.0;
    let mut over = Vec::new();
    for (cfg, rows) in sweeps() {
        for row in rows {
            let Ok(r) = &row.result else { continue };
            let (prior, _) = cfg.prior_at(row.index).unwrap();
            let doubled = evaluate_point(&prior, CutoffPolicy::Fixed(2 * r.cutoff_used), cfg.k_max, &spec()).unwrap();
            worst = worst.max((doubled.mmse - r.mmse).abs() / doubled.mmse);
            if r.cutoff_used > CUTOFF_BOUND {
                over.push(format!("{}[{}]={}", cfg.mode, row.index, r.cutoff_used));
            }
        }
    }
    report(
        9,
        worst < TOL_CUTOFF_REL && over.is_empty(),
        &format!(
            "max relative change on doubling {worst:.3e} < {TOL_CUTOFF_REL:e}; cutoffs above {CUTOFF_BOUND}: {over:?}"
        ),
    );
}

#[test]
fn criterion_10_fixed_mean_crossing() {
    let (_, rows) = sweeps()
        .iter()
        .find(|(c, _)| c.mode.name() == "fig2_fixed_mean" && c.fixed == 2.0)
        .unwrap();
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| {
            r.result
                .as_ref()
                .ok()
                .map(|p| (r.grid_value, p.mse_di / p.mse_spade - 1.0))
        })
        .collect();
    let crossings: Vec<f64> = pts
        .windows(2)
        .filter(|w| (w[0].1 < 0.0) != (w[1].1 < 0.0))
        .map(|w| w[0].0 - w[0].1 * (w[1].0 - w[0].0) / (w[1].1 - w[0].1))
        .collect();
    let in_window = crossings
        .iter()
        .any(|c| (CROSSING_WINDOW.0..=CROSSING_WINDOW.1).contains(c));

    let mut near: f64 = 0.0;
    for v in Grid::new(0.05, 0.2, 8, Spacing::Linear).unwrap().points() {
        let r = evaluate_point(&Prior::from_moments(1.0, v).unwrap(), CutoffPolicy::Auto, None, &spec()).unwrap();
        near = near.max((r.mse_spade - r.mmse) / r.mmse);
    }
    report(
        10,
        in_window && near <= SPADE_NEAR_OPTIMAL,
        &format!(
            "crossings {crossings:.4?} in {CROSSING_WINDOW:?}; SPADE excess over MMSE at mean 1 {near:.4} <= {SPADE_NEAR_OPTIMAL}"
        ),
    );
}

#[test]
fn criterion_11_large_mean_collapse() {
    let r = evaluate_point(
        &Prior::from_moments(5.0, 0.05).unwrap(),
        CutoffPolicy::Auto,
        None,
        &spec(),
    )
    .unwrap();
    let v = [r.mmse, r.mse_spade, r.mse_di];
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(0.0, f64::max);
    let spread = (hi - lo) / lo;
    report(
        11,
        spread <= TOL_COLLAPSE,
        &format!(
            "mmse {:.6} spade {:.6} di {:.6}; spread {spread:.3e} <= {TOL_COLLAPSE}",
            v[0], v[1], v[2]
        ),
    );
}

#[test]
fn criterion_12_monte_carlo() {
    let priors = [
        ("half-Gaussian", Prior::half_gaussian(1.0).unwrap()),
        ("displaced", Prior::from_moments(1.0, 0.2).unwrap()),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, (name, p)) in priors.iter().enumerate() {
        for (j, (m, exact)) in [
            (Measurement::Pnr, mse_pnr(p, None, &spec()).unwrap()),
            (Measurement::Homodyne, mse_homodyne(p, &spec()).unwrap()),
        ]
        .into_iter()
        .enumerate()
        {
            let est = mc_mse(m, p, MC_SAMPLES, 1000 + (2 * i + j) as u64, &spec()).unwrap();
            let z = (est.estimate - exact).abs() / est.std_error;
            ok &= z <= MC_STD_ERRORS;
            parts.push(format!("{name}/{m:?} {z:.2}se"));
        }
    }
    report(12, ok, &format!("{} (<= {MC_STD_ERRORS} se)", parts.join(", ")));
}
