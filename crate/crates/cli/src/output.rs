//! CSV emission. Every file starts with `#` comment lines carrying the tool
//! version, the column-set version and a `key=value` echo of the full
//! configuration, followed by a header row and one record per row.

use std::io::Write;

use superres_bayes::sweep::{fmt_value, SweepRow};
use superres_bayes::validation::CheckOutcome;

/// Bumped whenever the column set changes.
pub const COLUMNS_VERSION: u32 = 1;

pub const ROW_COLUMNS: &[&str] = &[
    "index",
    "grid_value",
    "target_mu_t",
    "target_sigma_t2",
    "mu_t",
    "sigma_t2",
    "mu",
    "sigma",
    "cutoff_used",
    "mmse",
    "mse_spade",
    "mse_di",
    "ratio_di_over_spade",
    "k_max",
    "dropped_eigenpairs",
    "lyapunov_residual",
    "cutoff_rel_change",
    "quadrature_flags",
];

pub const MC_COLUMNS: &[&str] = &["mc_spade", "mc_spade_se", "mc_di", "mc_di_se"];

pub fn write_preamble(out: &mut dyn Write, command: &str, echo: &[(String, String)]) -> std::io::Result<()> {
    writeln!(
        out,
        "# superres {} columns v{COLUMNS_VERSION}",
        env!("CARGO_PKG_VERSION")
    )?;
    writeln!(out, "# command={command}")?;
    for (k, v) in echo {
        writeln!(out, "# {k}={v}")?;
    }
    Ok(())
}

fn blank_row(n: usize) -> Vec<String> {
    vec![String::new(); n]
}

fn row_record(row: &SweepRow, with_mc: bool) -> Vec<String> {
    let mut rec = vec![
        row.index.to_string(),
        fmt_value(row.grid_value),
        fmt_value(row.target_mu_t),
        fmt_value(row.target_sigma_t2),
    ];
    match &row.result {
        Ok(r) => rec.extend([
            fmt_value(r.mu_t),
            fmt_value(r.sigma_t2),
            fmt_value(r.mu),
            fmt_value(r.sigma),
            r.cutoff_used.to_string(),
            fmt_value(r.mmse),
            fmt_value(r.mse_spade),
            fmt_value(r.mse_di),
            fmt_value(r.ratio_di_over_spade()),
            r.k_max.to_string(),
            r.dropped_eigenpairs.to_string(),
            fmt_value(r.lyapunov_residual),
            fmt_value(r.cutoff_rel_change),
            r.flags.join(";"),
        ]),
        Err(_) => rec.extend(blank_row(ROW_COLUMNS.len() - 4)),
    }
    if with_mc {
        match &row.mc {
            Some(mc) => rec.extend([mc.spade, mc.spade_se, mc.di, mc.di_se].map(fmt_value)),
            None => rec.extend(blank_row(MC_COLUMNS.len())),
        }
    }
    rec.push(row.result.as_ref().err().cloned().unwrap_or_default());
    rec
}

pub fn write_rows(out: &mut dyn Write, rows: &[SweepRow], with_mc: bool) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = ROW_COLUMNS.to_vec();
    if with_mc {
        header.extend(MC_COLUMNS);
    }
    header.push("error");
    w.write_record(&header)?;
    for row in rows {
        w.write_record(row_record(row, with_mc))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report(out: &mut dyn Write, outcomes: &[CheckOutcome]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["criterion", "name", "result", "detail"])?;
    for o in outcomes {
        w.write_record([
            o.id.to_string(),
            o.name.to_string(),
            if o.passed { "PASS" } else { "FAIL" }.to_string(),
            o.detail.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn failed_row() -> SweepRow {
        SweepRow {
            index: 3,
            grid_value: 0.5,
            target_mu_t: 0.2,
            target_sigma_t2: 0.5,
            result: Err("not attainable, residual 1e-3".into()),
            mc: None,
        }
    }

    #[test]
    fn failed_rows_keep_width_and_quote_errors() {
        let mut buf = Vec::new();
        write_rows(&mut buf, &[failed_row()], true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        let row = lines.next().unwrap();
        assert_eq!(header.split(',').count(), ROW_COLUMNS.len() + MC_COLUMNS.len() + 1);
        assert!(row.starts_with("3,5.0000000000000000e-1,"));
        assert!(row.ends_with("\"not attainable, residual 1e-3\""));
    }

    #[test]
    fn preamble_lines_are_comments() {
        let mut buf = Vec::new();
        write_preamble(&mut buf, "sweep", &[("mode".into(), "fig1".into())]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().all(|l| l.starts_with("# ")));
        assert!(text.contains("# mode=fig1\n"));
    }
}
