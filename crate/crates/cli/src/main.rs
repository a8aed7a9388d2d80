//! `superres`: single-point evaluations, figure sweeps and the validation
//! suite, all emitting CSV.

mod config;
mod output;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use superres_bayes::measurements::{mc_mse, Measurement, MC_MIN_SAMPLES};
use superres_bayes::priors::{invert_moments, Prior};
use superres_bayes::quadrature::QuadratureSpec;
use superres_bayes::sweep::{
    evaluate_point, fmt_value, run_row, CutoffPolicy, Grid, McColumns, McSettings, SweepConfig, SweepMode, SweepRow,
};
use superres_bayes::validation::{self, Tolerances, ValidationSettings};

use config::ConfigFile;

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

#[derive(Debug)]
enum Failure {
    Usage(String),
    Numeric(String),
    Validation(usize),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Numeric(_) => EXIT_NUMERIC,
            Failure::Validation(_) => EXIT_VALIDATION,
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

#[derive(Parser, Debug)]
#[command(
    name = "superres",
    version,
    about = "Bayesian MMSE versus SPADE and direct imaging for two-point separation estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate one prior and print a single CSV record.
    Point(PointArgs),
    /// Evaluate a grid of priors and write one CSV record per grid point.
    Sweep(SweepArgs),
    /// Run the acceptance checks and print a pass/fail report.
    Validate(ValidateArgs),
}

#[derive(Args, Debug, Default)]
struct PriorArgs {
    /// `half-gaussian` or `displaced`; inferred from the other flags if absent.
    #[arg(long)]
    prior: Option<String>,
    /// Width of the (displaced) half-Gaussian.
    #[arg(long, allow_negative_numbers = true)]
    sigma: Option<f64>,
    /// Location of the displaced half-Gaussian (may be negative).
    #[arg(long, allow_negative_numbers = true)]
    mu: Option<f64>,
    /// Target prior mean.
    #[arg(long = "mu-t", allow_negative_numbers = true)]
    mu_t: Option<f64>,
    /// Target prior variance.
    #[arg(long = "sigma-t2", allow_negative_numbers = true)]
    sigma_t2: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// key=value configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fock-space cutoff: an integer >= 4, or `auto`.
    #[arg(long)]
    cutoff: Option<CutoffPolicy>,
    /// Largest photon count kept separately in the SPADE model.
    #[arg(long = "k-max")]
    k_max: Option<usize>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for the Monte Carlo cross-check columns.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo samples per measurement (needs --seed).
    #[arg(long = "mc-samples")]
    mc_samples: Option<usize>,
}

#[derive(Args, Debug)]
struct PointArgs {
    #[command(flatten)]
    prior: PriorArgs,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// fig1, fig2_fixed_mean, fig3_fixed_variance or custom.
    #[arg(long)]
    mode: Option<SweepMode>,
    /// Sweep grid `start:stop:count[:log]`.
    #[arg(long)]
    grid: Option<Grid>,
    #[command(flatten)]
    prior: PriorArgs,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// Seed for the Monte Carlo criterion (default 2024).
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo samples for the cross-validation criterion.
    #[arg(long = "mc-samples")]
    mc_samples: Option<usize>,
    /// Comma-separated criterion numbers to run instead of all twelve.
    #[arg(long, value_delimiter = ',')]
    only: Option<Vec<u8>>,
    /// Report file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value configuration file (seed, mc_samples, out).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Multiplies every numeric tolerance; exercises the failure path.
    #[arg(long = "tolerance-scale", hide = true)]
    tolerance_scale: Option<f64>,
}

/// Command-line prior flags merged with the config file.
struct PriorSettings {
    kind: Option<String>,
    sigma: Option<f64>,
    mu: Option<f64>,
    mu_t: Option<f64>,
    sigma_t2: Option<f64>,
}

impl PriorSettings {
    fn merge(args: PriorArgs, cfg: &ConfigFile) -> Result<Self, Failure> {
        Ok(Self {
            kind: cfg.merge(args.prior, "prior").map_err(usage)?,
            sigma: cfg.merge(args.sigma, "sigma").map_err(usage)?,
            mu: cfg.merge(args.mu, "mu").map_err(usage)?,
            mu_t: cfg.merge(args.mu_t, "mu_t").map_err(usage)?,
            sigma_t2: cfg.merge(args.sigma_t2, "sigma_t2").map_err(usage)?,
        })
    }

    fn echo(&self) -> Vec<(String, String)> {
        let opt = |v: Option<f64>| v.map_or("none".to_string(), fmt_value);
        vec![
            ("prior".into(), self.kind.clone().unwrap_or_else(|| "inferred".into())),
            ("sigma".into(), opt(self.sigma)),
            ("mu".into(), opt(self.mu)),
            ("mu_t".into(), opt(self.mu_t)),
            ("sigma_t2".into(), opt(self.sigma_t2)),
        ]
    }
}

struct CommonSettings {
    cutoff: CutoffPolicy,
    k_max: Option<usize>,
    out: Option<PathBuf>,
    mc: Option<McSettings>,
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile, Failure> {
    path.map_or(Ok(ConfigFile::default()), |p| ConfigFile::load(p).map_err(usage))
}

fn check_mc(seed: Option<u64>, samples: Option<usize>) -> Result<Option<McSettings>, Failure> {
    match (seed, samples) {
        (None, Some(_)) => Err(usage("--mc-samples needs --seed")),
        (None, None) => Ok(None),
        (Some(seed), n) => {
            let samples = n.unwrap_or(MC_MIN_SAMPLES);
            if samples < MC_MIN_SAMPLES {
                return Err(usage(format!("--mc-samples must be at least {MC_MIN_SAMPLES}")));
            }
            Ok(Some(McSettings { seed, samples }))
        }
    }
}

impl CommonSettings {
    fn merge(args: CommonArgs, cfg: &ConfigFile) -> Result<Self, Failure> {
        let cutoff = cfg
            .merge(args.cutoff, "cutoff")
            .map_err(usage)?
            .unwrap_or(CutoffPolicy::Auto);
        let k_max = cfg.merge(args.k_max, "k_max").map_err(usage)?;
        let out = cfg.merge(args.out, "out").map_err(usage)?;
        let seed = cfg.merge(args.seed, "seed").map_err(usage)?;
        let samples = cfg.merge(args.mc_samples, "mc_samples").map_err(usage)?;
        Ok(Self {
            cutoff,
            k_max,
            out,
            mc: check_mc(seed, samples)?,
        })
    }
}

fn positive(name: &str, v: f64) -> Result<f64, Failure> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(usage(format!("--{name} must be a positive number, got {v}")))
    }
}

fn finite(name: &str, v: f64) -> Result<f64, Failure> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(usage(format!("--{name} must be finite, got {v}")))
    }
}

fn resolve_kind(p: &PriorSettings) -> Result<&'static str, Failure> {
    match p.kind.as_deref() {
        Some("half-gaussian") => Ok("half-gaussian"),
        Some("displaced") => Ok("displaced"),
        Some(other) => Err(usage(format!(
            "--prior must be half-gaussian or displaced, got `{other}`"
        ))),
        None if p.mu.is_some() || p.mu_t.is_some() || p.sigma_t2.is_some() => Ok("displaced"),
        None => Ok("half-gaussian"),
    }
}

/// The prior for `point`, plus whether a moment fit needed `μ < 0`.
fn point_prior(p: &PriorSettings) -> Result<(Prior, bool), Failure> {
    let numeric = |e: superres_bayes::Error| Failure::Numeric(e.to_string());
    match resolve_kind(p)? {
        "half-gaussian" => {
            if p.mu.is_some() || p.mu_t.is_some() || p.sigma_t2.is_some() {
                return Err(usage("the half-Gaussian prior takes only --sigma"));
            }
            let sigma = positive("sigma", p.sigma.ok_or_else(|| usage("--sigma is required"))?)?;
            Ok((Prior::half_gaussian(sigma).map_err(numeric)?, false))
        }
        _ => match (p.mu, p.sigma, p.mu_t, p.sigma_t2) {
            (Some(mu), Some(sigma), None, None) => {
                let prior = Prior::displaced(finite("mu", mu)?, positive("sigma", sigma)?).map_err(numeric)?;
                Ok((prior, mu < 0.0))
            }
            (None, None, Some(mu_t), Some(sigma_t2)) => {
                let fit = invert_moments(positive("mu-t", mu_t)?, positive("sigma-t2", sigma_t2)?).map_err(numeric)?;
                Ok((
                    Prior::displaced(fit.mu, fit.sigma).map_err(numeric)?,
                    fit.uses_negative_mu(),
                ))
            }
            _ => Err(usage(
                "the displaced prior takes either --mu and --sigma, or --mu-t and --sigma-t2",
            )),
        },
    }
}

/// Opens the output before any computation so a bad path fails fast.
fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    match path {
        Some(p) => File::create(p)
            .map(|f| Box::new(BufWriter::new(f)) as Box<dyn Write>)
            .map_err(|e| usage(format!("cannot write {}: {e}", p.display()))),
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn io_failure(e: impl std::fmt::Display) -> Failure {
    usage(format!("write failed: {e}"))
}

fn common_echo(c: &CommonSettings) -> Vec<(String, String)> {
    let spec = QuadratureSpec::default();
    let mut v = vec![
        ("cutoff".to_string(), c.cutoff.to_string()),
        ("k_max".to_string(), c.k_max.map_or("auto".into(), |k| k.to_string())),
        ("quadrature_nodes".to_string(), spec.nodes_per_panel.to_string()),
        ("quadrature_cut".to_string(), fmt_value(spec.domain_cut)),
        ("quadrature_rel_tol".to_string(), fmt_value(spec.rel_tol)),
    ];
    match c.mc {
        Some(mc) => {
            v.push(("seed".into(), mc.seed.to_string()));
            v.push(("mc_samples".into(), mc.samples.to_string()));
        }
        None => v.push(("seed".into(), "none".into())),
    }
    v
}

fn cmd_point(args: PointArgs) -> Result<(), Failure> {
    let cfg = load_config(args.common.config.as_deref())?;
    let prior_settings = PriorSettings::merge(args.prior, &cfg)?;
    let common = CommonSettings::merge(args.common, &cfg)?;
    let (prior, negative_mu) = point_prior(&prior_settings)?;
    let mut out = open_output(common.out.as_deref())?;

    let spec = QuadratureSpec::default();
    let numeric = |e: superres_bayes::Error| Failure::Numeric(e.to_string());
    let mut result = evaluate_point(&prior, common.cutoff, common.k_max, &spec).map_err(numeric)?;
    if negative_mu {
        result.flags.push("negative_mu");
    }
    let mc = match common.mc {
        Some(s) => {
            let seed = s.row_seed(0);
            let p = mc_mse(Measurement::Pnr, &prior, s.samples, seed, &spec).map_err(numeric)?;
            let d = mc_mse(Measurement::Homodyne, &prior, s.samples, seed ^ 1, &spec).map_err(numeric)?;
            Some(McColumns {
                spade: p.estimate,
                spade_se: p.std_error,
                di: d.estimate,
                di_se: d.std_error,
            })
        }
        None => None,
    };
    let row = SweepRow {
        index: 0,
        grid_value: prior.sigma(),
        target_mu_t: prior_settings.mu_t.unwrap_or(result.mu_t),
        target_sigma_t2: prior_settings.sigma_t2.unwrap_or(result.sigma_t2),
        result: Ok(result),
        mc,
    };
    let mut echo = prior_settings.echo();
    echo.extend(common_echo(&common));
    output::write_preamble(&mut out, "point", &echo).map_err(io_failure)?;
    output::write_rows(&mut out, &[row], common.mc.is_some()).map_err(io_failure)?;
    out.flush().map_err(io_failure)
}

fn sweep_config(args: SweepArgs) -> Result<(SweepConfig, Option<PathBuf>), Failure> {
    let cfg = load_config(args.common.config.as_deref())?;
    let mode = cfg.merge(args.mode, "mode").map_err(usage)?;
    let grid = cfg.merge(args.grid, "grid").map_err(usage)?;
    let p = PriorSettings::merge(args.prior, &cfg)?;
    let common = CommonSettings::merge(args.common, &cfg)?;

    let mode = mode.unwrap_or(match (p.mu_t, p.sigma_t2, p.mu) {
        (Some(_), None, None) => SweepMode::Fig2FixedMean,
        (None, Some(_), None) => SweepMode::Fig3FixedVariance,
        (None, None, Some(_)) => SweepMode::Custom,
        _ => SweepMode::Fig1,
    });
    let expected_kind = if mode == SweepMode::Fig1 {
        "half-gaussian"
    } else {
        "displaced"
    };
    if let Some(kind) = p.kind.as_deref() {
        if kind != expected_kind {
            return Err(usage(format!("mode {mode} sweeps a {expected_kind} prior, not {kind}")));
        }
    }
    let only = |allowed: &[&str]| -> Result<(), Failure> {
        let given = [
            ("sigma", p.sigma.is_some()),
            ("mu", p.mu.is_some()),
            ("mu-t", p.mu_t.is_some()),
            ("sigma-t2", p.sigma_t2.is_some()),
        ];
        match given.iter().find(|(name, set)| *set && !allowed.contains(name)) {
            Some((name, _)) => Err(usage(format!(
                "--{name} does not apply to mode {mode} (use --grid for the swept variable)"
            ))),
            None => Ok(()),
        }
    };
    let mut config = match mode {
        SweepMode::Fig1 => {
            only(&[])?;
            SweepConfig::fig1()
        }
        SweepMode::Fig2FixedMean => {
            only(&["mu-t"])?;
            SweepConfig::fig2(positive(
                "mu-t",
                p.mu_t.ok_or_else(|| usage("mode fig2_fixed_mean needs --mu-t"))?,
            )?)
        }
        SweepMode::Fig3FixedVariance => {
            only(&["sigma-t2"])?;
            let v = p
                .sigma_t2
                .ok_or_else(|| usage("mode fig3_fixed_variance needs --sigma-t2"))?;
            SweepConfig::fig3(positive("sigma-t2", v)?)
        }
        SweepMode::Custom => {
            only(&["mu"])?;
            let mu = finite("mu", p.mu.ok_or_else(|| usage("mode custom needs --mu"))?)?;
            let g = grid.ok_or_else(|| usage("mode custom needs --grid over sigma"))?;
            SweepConfig::new(SweepMode::Custom, mu, g)
        }
    };
    if let Some(g) = grid {
        config.grid = g;
    }
    config.cutoff = common.cutoff;
    config.k_max = common.k_max;
    config.mc = common.mc;
    config.validate().map_err(usage)?;
    Ok((config, common.out))
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let (config, out_path) = sweep_config(args)?;
    let mut out = open_output(out_path.as_deref())?;
    let rows: Vec<SweepRow> = (0..config.grid.count)
        .into_par_iter()
        .map(|i| run_row(&config, i))
        .collect();
    output::write_preamble(&mut out, "sweep", &config.echo()).map_err(io_failure)?;
    output::write_rows(&mut out, &rows, config.mc.is_some()).map_err(io_failure)?;
    out.flush().map_err(io_failure)?;

    let failed = rows.iter().filter(|r| r.result.is_err()).count();
    eprintln!("{} rows, {failed} failed", rows.len());
    if failed == rows.len() {
        return Err(Failure::Numeric("every grid point failed".into()));
    }
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<(), Failure> {
    let cfg = load_config(args.config.as_deref())?;
    let defaults = ValidationSettings::default();
    let seed = cfg.merge(args.seed, "seed").map_err(usage)?.unwrap_or(defaults.seed);
    let mc_samples = cfg
        .merge(args.mc_samples, "mc_samples")
        .map_err(usage)?
        .unwrap_or(defaults.mc_samples);
    if mc_samples < MC_MIN_SAMPLES {
        return Err(usage(format!("--mc-samples must be at least {MC_MIN_SAMPLES}")));
    }
    let out_path = cfg.merge(args.out, "out").map_err(usage)?;
    if let Some(ids) = &args.only {
        if let Some(bad) = ids.iter().find(|id| !(1..=12).contains(*id)) {
            return Err(usage(format!("--only: no criterion {bad}")));
        }
    }
    let mut tolerances = Tolerances::default();
    if let Some(f) = args.tolerance_scale {
        tolerances = tolerances.scaled(f);
    }
    let settings = ValidationSettings {
        seed,
        mc_samples,
        only: args.only,
        tolerances,
    };
    let mut out = open_output(out_path.as_deref())?;
    let outcomes = validation::run(&settings);

    let mut echo = vec![
        ("seed".to_string(), seed.to_string()),
        ("mc_samples".to_string(), mc_samples.to_string()),
    ];
    if let Some(f) = args.tolerance_scale {
        echo.push(("tolerance_scale".into(), fmt_value(f)));
    }
    output::write_preamble(&mut out, "validate", &echo).map_err(io_failure)?;
    output::write_report(&mut out, &outcomes).map_err(io_failure)?;
    out.flush().map_err(io_failure)?;

    let failed = outcomes.iter().filter(|o| !o.passed).count();
    eprintln!("{}/{} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        return Err(Failure::Validation(failed));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Point(a) => cmd_point(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Numeric(m) => eprintln!("numeric failure: {m}"),
                Failure::Validation(n) => eprintln!("validation failed: {n} criteria"),
            }
            ExitCode::from(f.code())
        }
    }
}
