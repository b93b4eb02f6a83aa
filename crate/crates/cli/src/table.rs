//! Fixed point, bracket and LSI constant across a parameter lattice.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use bridgecert::fixedpoint::{alpha_bracket, solve_alpha_psi, ProblemParams};
use bridgecert::lsi::{lsi_constant, LsiParams};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lattice {
    #[serde(rename = "T")]
    pub t: Vec<f64>,
    pub beta_mu: Vec<f64>,
    pub alpha_nu: Vec<f64>,
    #[serde(rename = "L")]
    pub l: Vec<f64>,
    #[serde(rename = "C_mu", default)]
    pub c_mu: Option<f64>,
}

impl Lattice {
    pub fn parse(text: &str) -> Result<Self> {
        let lattice: Lattice = toml::from_str(text).context("invalid lattice")?;
        for (name, axis) in
            [("T", &lattice.t), ("beta_mu", &lattice.beta_mu), ("alpha_nu", &lattice.alpha_nu), ("L", &lattice.l)]
        {
            if axis.is_empty() {
                bail!("axis {name} is empty");
            }
        }
        Ok(lattice)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("failed to read lattice {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn points(&self) -> Vec<(f64, f64, f64, f64)> {
        let mut out = Vec::new();
        for &t in &self.t {
            for &b in &self.beta_mu {
                for &a in &self.alpha_nu {
                    for &l in &self.l {
                        out.push((t, b, a, l));
                    }
                }
            }
        }
        out
    }
}

/// Writes one CSV row per lattice point and returns the number of rows
/// whose solve failed.
pub fn write_table<W: Write>(lattice: &Lattice, w: W) -> Result<usize> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "T",
        "beta_mu",
        "alpha_nu",
        "L",
        "alpha_psi",
        "iterations",
        "lower",
        "upper",
        "lsi_constant",
        "status",
    ])?;
    let mut failures = 0;
    for (t, b, a, l) in lattice.points() {
        let mut row = vec![t.to_string(), b.to_string(), a.to_string(), l.to_string()];
        let solved = ProblemParams::new(t, b, a, l, lattice.c_mu)
            .and_then(|p| Ok((p, solve_alpha_psi(&p)?, alpha_bracket(&p)?)));
        match solved {
            Ok((p, sol, (lo, hi))) => {
                let lsi = p
                    .c_mu
                    .and_then(|c| LsiParams::new(sol.alpha_psi, l, t, c).ok())
                    .map(|lp| lsi_constant(&lp).constant.to_string())
                    .unwrap_or_default();
                row.extend([
                    sol.alpha_psi.to_string(),
                    sol.iterates.len().to_string(),
                    lo.to_string(),
                    hi.to_string(),
                    lsi,
                    "ok".to_string(),
                ]);
            }
            Err(e) => {
                failures += 1;
                row.extend([String::new(), String::new(), String::new(), String::new(), String::new(), e.to_string()]);
            }
        }
        csv.write_record(&row)?;
    }
    csv.flush()?;
    Ok(failures)
}
