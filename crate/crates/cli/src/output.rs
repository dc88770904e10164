//! File writers. Every file is written to a temporary sibling and renamed
//! into place, so a failed command never leaves a truncated output.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;
use tempfile::NamedTempFile;

use scm_core::harness::{ComparisonReport, RunOutput, TrajectoryRecord, VerificationReport};

use crate::svg::{line_chart, Series};
use crate::CliError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn trajectory_header(k: usize, m: usize) -> String {
    let mut cols = vec!["t".to_string(), "mse_window".into(), "eg_analytic".into()];
    cols.extend((1..=k).map(|i| format!("w_{i}")));
    for i in 1..=k {
        cols.extend((i..=k).map(|j| format!("Q_{i}{j}")));
    }
    for i in 1..=k {
        cols.extend((1..=m).map(|n| format!("R_{i}{n}")));
    }
    cols.join(",")
}

/// `t,mse_window,eg_analytic,w_1..w_K,Q_11,Q_12,..(upper triangle),R_11..R_KM`.
pub fn trajectory_csv(records: &[TrajectoryRecord], k: usize, m: usize) -> String {
    let mut out = trajectory_header(k, m);
    out.push('\n');
    for r in records {
        let fields = [r.t, r.mse_window, r.eg_analytic]
            .into_iter()
            .chain(r.w.iter().copied())
            .chain(r.q.iter().copied())
            .chain(r.r.iter().copied())
            .map(num)
            .collect::<Vec<_>>();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn series(records: &[TrajectoryRecord], label: String, f: impl Fn(&TrajectoryRecord) -> f64) -> Series {
    Series {
        label,
        points: records.iter().map(|r| (r.t, f(r))).collect(),
    }
}

/// Writes `trajectory.csv`, `summary.json`, `mse.svg`, `w.svg` and `qr.svg`.
pub fn write_run(dir: &Path, out: &RunOutput, k: usize, m: usize) -> Result<(), CliError> {
    create_dir(dir)?;
    let recs = &out.records;
    write_atomic(&dir.join("trajectory.csv"), trajectory_csv(recs, k, m).as_bytes())?;
    write_json(&dir.join("summary.json"), &out.summary)?;

    let mse = [
        series(recs, "mse_window".into(), |r| r.mse_window),
        series(recs, "eg_analytic".into(), |r| r.eg_analytic),
    ];
    write_atomic(&dir.join("mse.svg"), line_chart("MSE", "t", &mse, true).as_bytes())?;

    let w: Vec<Series> = (0..k).map(|i| series(recs, format!("w_{}", i + 1), move |r| r.w[i])).collect();
    write_atomic(&dir.join("w.svg"), line_chart("hidden-to-output weights", "t", &w, false).as_bytes())?;

    let mut qr = Vec::new();
    let mut idx = 0;
    for i in 0..k {
        for j in i..k {
            let at = idx;
            qr.push(series(recs, format!("Q_{}{}", i + 1, j + 1), move |r| r.q[at]));
            idx += 1;
        }
    }
    for i in 0..k {
        for n in 0..m {
            let at = i * m + n;
            qr.push(series(recs, format!("R_{}{}", i + 1, n + 1), move |r| r.r[at]));
        }
    }
    write_atomic(&dir.join("qr.svg"), line_chart("order parameters", "t", &qr, false).as_bytes())
}

pub fn comparison_csv(report: &ComparisonReport) -> String {
    let mut out = String::from(
        "seed,base_final_mse,variant_final_mse,diff_final_mse,\
         base_symmetry_break_t,variant_symmetry_break_t,diff_symmetry_break_t,\
         base_singular_dwell,variant_singular_dwell,diff_singular_dwell,\
         base_diverged,variant_diverged\n",
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.seed,
            num(r.base.final_mse),
            num(r.variant.final_mse),
            opt_num(r.diff.final_mse),
            opt_num(r.base.symmetry_break_t),
            opt_num(r.variant.symmetry_break_t),
            opt_num(r.diff.symmetry_break_t),
            opt_num(r.base.singular_dwell),
            opt_num(r.variant.singular_dwell),
            opt_num(r.diff.singular_dwell),
            r.base.diverged,
            r.variant.diverged,
        );
    }
    out
}

pub fn verification_csv(report: &VerificationReport) -> String {
    let mut out = String::from("index,M,K,singular,analytic,mc_mean,mc_stderr,z,pass\n");
    for t in &report.trials {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            t.index,
            t.m,
            t.k,
            t.singular,
            num(t.analytic),
            num(t.mc_mean),
            num(t.mc_stderr),
            num(t.z),
            t.pass
        );
    }
    out
}
