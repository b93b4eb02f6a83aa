//! Artifacts of a run under `<out>/<name>/`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use bridgecert::couplingsim::DiagnosticSeries;

use crate::pipeline::RunOutput;

pub fn run_dir(out: &Path, name: &str) -> PathBuf {
    out.join(name)
}

/// Writes `t, mean, stderr, n` rows.
pub fn write_series<W: Write>(w: W, s: &DiagnosticSeries) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["t", "mean", "stderr", "n"])?;
    for k in 0..s.len() {
        csv.write_record([s.times[k].to_string(), s.mean[k].to_string(), s.stderr[k].to_string(), s.n[k].to_string()])?;
    }
    csv.flush()?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("failed to write {}", path.display()))
}

/// Replaces `dir` with the artifacts of `run`.
pub fn write_run(dir: &Path, run: &RunOutput) -> Result<Vec<PathBuf>> {
    if dir.exists() {
        fs::remove_dir_all(dir).with_context(|| format!("failed to clear {}", dir.display()))?;
    }
    fs::create_dir_all(dir).with_context(|| format!("failed to create {}", dir.display()))?;
    let mut written = Vec::new();

    let path = dir.join("report.json");
    write_json(&path, &run.report)?;
    written.push(path);

    let path = dir.join("timings.json");
    write_json(&path, &run.timings)?;
    written.push(path);

    for (stem, s) in &run.series {
        let path = dir.join(format!("{stem}.csv"));
        write_series(fs::File::create(&path)?, s).with_context(|| format!("failed to write {}", path.display()))?;
        written.push(path);
    }

    if !run.lsi_ratios.is_empty() {
        let path = dir.join("lsi_ratios.csv");
        let mut csv = csv::Writer::from_path(&path)?;
        csv.write_record(["test", "kind", "ratio"])?;
        for (k, product, r) in &run.lsi_ratios {
            csv.write_record([k.to_string(), if *product { "product" } else { "joint" }.to_string(), r.to_string()])?;
        }
        csv.flush()?;
        written.push(path);
    }

    if !run.alpha_iterates.is_empty() {
        let path = dir.join("alpha_iterates.csv");
        let mut csv = csv::Writer::from_path(&path)?;
        csv.write_record(["iteration", "alpha"])?;
        for (k, a) in run.alpha_iterates.iter().enumerate() {
            csv.write_record([k.to_string(), a.to_string()])?;
        }
        csv.flush()?;
        written.push(path);
    }
    Ok(written)
}
