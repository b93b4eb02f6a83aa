//! Scenario files: marginals, grid, horizon and check settings.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use bridgecert::potentials::Potential;
use bridgecert::schrodinger::MarginalSpec;
use bridgecert::Grid1D;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SinkhornSpec {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SinkhornSpec {
    fn default() -> Self {
        Self { tol: 1e-11, max_iter: 5000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub envelope: f64,
    pub spacetime: f64,
    pub hessian: f64,
    pub tv: f64,
    pub local: f64,
    pub residual: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { envelope: 1e-3, spacetime: 1e-5, hessian: 5e-3, tv: 0.08, local: 1e-3, residual: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSpec {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub ladder: usize,
    pub coalesce_eps: f64,
    pub crossing_correction: bool,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self { dt: 1e-3, n_paths: 10_000, seed: 1, ladder: 20, coalesce_eps: 1e-4, crossing_correction: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HTransformSpec {
    pub eps: f64,
    pub n_paths: usize,
    pub bins: usize,
    pub seed: u64,
}

impl Default for HTransformSpec {
    fn default() -> Self {
        Self { eps: 0.1, n_paths: 100_000, bins: 64, seed: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LsiSpec {
    pub n_tests: usize,
    pub seed: u64,
    pub eps: f64,
}

impl Default for LsiSpec {
    fn default() -> Self {
        Self { n_tests: 100, seed: 3, eps: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub horizon: f64,
    pub grid: GridSpec,
    pub mu: Potential,
    pub nu: Potential,
    #[serde(default)]
    pub sinkhorn: SinkhornSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub htransform: HTransformSpec,
    #[serde(default)]
    pub lsi: LsiSpec,
    /// Check ids to leave out.
    #[serde(default)]
    pub skip: Vec<String>,
}

/// A parsed scenario together with the digest of its source text.
#[derive(Clone, Debug)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub sha256: String,
}

pub fn digest(text: &str) -> String {
    format!("{:x}", Sha256::digest(text.as_bytes()))
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        let scenario: Scenario = toml::from_str(text).context("invalid scenario")?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<LoadedScenario> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("failed to read scenario {}", path.display()))?;
        let scenario = Self::parse(&text).with_context(|| format!("in {}", path.display()))?;
        Ok(LoadedScenario { scenario, sha256: digest(&text) })
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty()
            || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
            || self.name.starts_with('.')
        {
            bail!("name must be a nonempty file name made of letters, digits, '.', '_' or '-'");
        }
        if self.horizon <= 0.0 || !self.horizon.is_finite() {
            bail!("horizon must be positive, got {}", self.horizon);
        }
        self.grid()?;
        self.mu.validate().context("mu")?;
        self.nu.validate().context("nu")?;
        let known = crate::checks::ids();
        if let Some(bad) = self.skip.iter().find(|s| !known.contains(&s.as_str())) {
            bail!("unknown check id '{bad}' in skip (see `list-checks`)");
        }
        if !(self.htransform.eps > 0.0 && self.htransform.eps < self.horizon) {
            bail!("htransform.eps must lie in (0, horizon)");
        }
        if !(self.lsi.eps > 0.0 && self.lsi.eps < self.horizon) {
            bail!("lsi.eps must lie in (0, horizon)");
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid1D> {
        Grid1D::new(self.grid.lo, self.grid.hi, self.grid.n).context("grid")
    }

    pub fn marginals(&self) -> Result<(MarginalSpec, MarginalSpec)> {
        let grid = self.grid()?;
        let mu = MarginalSpec::from_potential(&self.mu, grid).context("mu")?;
        let nu = MarginalSpec::from_potential(&self.nu, grid).context("nu")?;
        Ok((mu, nu))
    }

    pub fn enabled(&self, id: &str) -> bool {
        !self.skip.iter().any(|s| s == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "tiny"
horizon = 1.0
grid = { lo = -6.0, hi = 6.0, n = 64 }
mu = { family = "gaussian", mean = 0.0, var = 1.0 }
nu = { family = "double_well", height = 1.0, separation = 1.5 }
"#;

    #[test]
    fn minimal_scenario_gets_defaults() {
        let s = Scenario::parse(MINIMAL).unwrap();
        assert_eq!(s.sinkhorn, SinkhornSpec::default());
        assert_eq!(s.htransform.bins, 64);
        assert!(s.enabled("htransform.tv"));
        s.marginals().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(Scenario::parse(&format!("{MINIMAL}\nbogus = 1\n")).is_err());
        let typo = MINIMAL.replace("var = 1.0", "variance = 1.0");
        assert!(Scenario::parse(&typo).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(Scenario::parse(&MINIMAL.replace("horizon = 1.0", "horizon = -1.0")).is_err());
        assert!(Scenario::parse(&MINIMAL.replace("var = 1.0", "var = 0.0")).is_err());
        assert!(Scenario::parse(&MINIMAL.replace("\"tiny\"", "\"../up\"")).is_err());
        assert!(Scenario::parse(&format!("{MINIMAL}\nskip = [\"nope\"]\n")).is_err());
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(digest("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
