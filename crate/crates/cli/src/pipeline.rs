//! Solve, certify, simulate: one scenario end to end.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use bridgecert::couplingsim::{
    gamma_dt_halving, gamma_supermartingale_test, gradient_martingale_test, htransform_sample, DiagnosticSeries,
    SimConfig,
};
use bridgecert::fixedpoint::{alpha_bracket, solve_alpha_psi, AlphaSolution, ProblemParams};
use bridgecert::heatflow::space_time_transform_check;
use bridgecert::lsi::{
    default_local_tests, empirical_lsi_check, local_estimates_check, lsi_constant, LsiParams, LsiReport,
};
use bridgecert::schrodinger::{
    barpsi_transform, bridge_density, certify_potential_envelopes, hessian_cov_check, problem_params, sinkhorn_solve,
    system_residual, BridgeDensity, MarginalSpec, SinkhornState,
};
use bridgecert::Error;

use crate::checks::{CheckOutcome, Status};
use crate::scenario::{GridSpec, LoadedScenario, Scenario};

/// Why a run stopped before producing a report.
#[derive(Debug)]
pub enum RunError {
    /// The scenario cannot be run as written.
    Usage(anyhow::Error),
    /// A solver or simulation did not produce a usable result.
    Solver(anyhow::Error),
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Usage(e) => write!(f, "{e:#}"),
            RunError::Solver(e) => write!(f, "solver failure: {e:#}"),
        }
    }
}

impl std::error::Error for RunError {}

fn solver<T>(r: bridgecert::Result<T>, what: &str) -> Result<T, RunError> {
    r.map_err(|e| RunError::Solver(anyhow::Error::new(e).context(what.to_string())))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SinkhornSummary {
    pub iterations: usize,
    /// Total variation error of the `x` and `y` marginals.
    pub marginal_err: (f64, f64),
    pub residual_x: f64,
    pub residual_y: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub scenario_sha256: String,
    pub horizon: f64,
    pub grid: GridSpec,
    pub sinkhorn: SinkhornSummary,
    pub params: Option<ProblemParams>,
    pub alpha_psi: Option<f64>,
    pub lsi: Option<LsiReport>,
    pub checks: Vec<CheckOutcome>,
    pub passed: bool,
}

/// Everything a run writes to disk.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: Report,
    pub timings: BTreeMap<String, f64>,
    /// Plot-ready series keyed by file stem.
    pub series: BTreeMap<String, DiagnosticSeries>,
    pub lsi_ratios: Vec<(usize, bool, f64)>,
    pub alpha_iterates: Vec<f64>,
}

struct Timer {
    timings: BTreeMap<String, f64>,
}

impl Timer {
    fn time<T>(&mut self, step: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.insert(step.to_string(), start.elapsed().as_secs_f64());
        out
    }
}

struct Solved<'a> {
    scenario: &'a Scenario,
    mu: MarginalSpec,
    nu: MarginalSpec,
    state: SinkhornState,
    bridge: BridgeDensity,
    params: Option<ProblemParams>,
    solution: Option<AlphaSolution>,
}

impl Solved<'_> {
    fn sim_config(&self, n_paths: usize, seed: u64) -> Result<SimConfig, RunError> {
        let s = &self.scenario.simulation;
        let cfg = SimConfig {
            dt: s.dt,
            horizon: self.scenario.horizon,
            n_paths,
            seed,
            coalesce_eps: s.coalesce_eps,
            crossing_correction: s.crossing_correction,
        };
        cfg.validate().map_err(|e| RunError::Usage(anyhow::Error::new(e).context("simulation settings")))?;
        Ok(cfg)
    }
}

/// Runs every enabled check of a scenario.
pub fn run(loaded: &LoadedScenario) -> Result<RunOutput, RunError> {
    let sc = &loaded.scenario;
    let mut timer = Timer { timings: BTreeMap::new() };
    let (mu, nu) = sc.marginals().map_err(RunError::Usage)?;
    let state = timer.time("sinkhorn", || {
        solver(sinkhorn_solve(&mu, &nu, sc.horizon, sc.sinkhorn.tol, sc.sinkhorn.max_iter), "sinkhorn")
    })?;
    let bridge = solver(bridge_density(&state, &mu, &nu), "bridge density")?;
    let params = solver(problem_params(&mu, &nu, sc.horizon), "problem parameters")?;
    let solution = match params {
        Some(p) if p.alpha_nu > 0.0 => Some(timer.time("fixedpoint", || solver(solve_alpha_psi(&p), "fixed point"))?),
        _ => None,
    };
    let solved = Solved { scenario: sc, mu, nu, state, bridge, params, solution };

    let mut checks = Vec::new();
    let mut series = BTreeMap::new();
    let mut lsi_ratios = Vec::new();
    let mut lsi = None;
    for info in crate::checks::CHECKS {
        let id = info.id;
        if !sc.enabled(id) {
            checks.push(CheckOutcome::skipped(id, "disabled in scenario"));
            continue;
        }
        let outcome = timer.time(id, || run_check(id, &solved, &mut series, &mut lsi_ratios, &mut lsi))?;
        checks.push(outcome);
    }
    let (residual_x, residual_y) = solver(system_residual(&solved.state, &solved.mu, &solved.nu), "residual")?;
    let passed = checks.iter().all(|c| c.status != Status::Fail);
    let report = Report {
        name: sc.name.clone(),
        scenario_sha256: loaded.sha256.clone(),
        horizon: sc.horizon,
        grid: sc.grid.clone(),
        sinkhorn: SinkhornSummary {
            iterations: solved.state.iterations,
            marginal_err: solved.state.marginal_err,
            residual_x,
            residual_y,
        },
        params: solved.params,
        alpha_psi: solved.solution.as_ref().map(|s| s.alpha_psi),
        lsi,
        checks,
        passed,
    };
    Ok(RunOutput {
        report,
        timings: timer.timings,
        series,
        lsi_ratios,
        alpha_iterates: solved.solution.map(|s| s.iterates).unwrap_or_default(),
    })
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

/// Turns a failed precondition into a skip and any other error into a
/// solver failure.
fn guarded(id: &str, r: bridgecert::Result<CheckOutcome>) -> Result<CheckOutcome, RunError> {
    match r {
        Ok(c) => Ok(c),
        Err(Error::Precondition(msg)) => Ok(CheckOutcome::skipped(id, msg)),
        Err(e) => solver(Err(e), id),
    }
}

fn run_check(
    id: &str,
    s: &Solved<'_>,
    series: &mut BTreeMap<String, DiagnosticSeries>,
    lsi_ratios: &mut Vec<(usize, bool, f64)>,
    lsi: &mut Option<LsiReport>,
) -> Result<CheckOutcome, RunError> {
    let sc = s.scenario;
    let tol = &sc.tolerances;
    let t = sc.horizon;
    let psi = &s.state.psi;
    let outcome = match id {
        "sinkhorn.residual" => {
            let (rx, ry) = solver(system_residual(&s.state, &s.mu, &s.nu), id)?;
            CheckOutcome::verdict(
                id,
                rx < tol.residual && ry < tol.residual,
                json!({ "residual_x": rx, "residual_y": ry, "tol": tol.residual, "iterations": s.state.iterations }),
            )
        }
        "fixedpoint.bracket" => match (&s.params, &s.solution) {
            (Some(p), Some(sol)) => {
                let (lo, hi) = solver(alpha_bracket(p), id)?;
                let inside = sol.alpha_psi >= lo - 1e-10 && sol.alpha_psi <= hi + 1e-10;
                let monotone = sol.iterates.windows(2).all(|w| w[1] >= w[0] - 1e-12);
                CheckOutcome::verdict(
                    id,
                    inside && monotone && sol.residual < 1e-10,
                    json!({ "alpha_psi": sol.alpha_psi, "lower": lo, "upper": hi, "residual": sol.residual,
                            "iterations": sol.iterates.len(), "monotone": monotone }),
                )
            }
            _ => CheckOutcome::skipped(id, not_applicable(s)),
        },
        "envelopes.potentials" => {
            let rep = solver(certify_potential_envelopes(&s.state, &s.mu, &s.nu, s.params, tol.envelope), id)?;
            match rep.passed() {
                Some(p) => CheckOutcome::verdict(id, p, to_value(&rep)),
                None => CheckOutcome::skipped(id, not_applicable(s)),
            }
        }
        "spacetime.transform" => {
            let alpha = s.solution.as_ref().map_or(0.0, |sol| sol.alpha_psi);
            let rep = solver(space_time_transform_check(psi, alpha, t, tol.spacetime), id)?;
            CheckOutcome::verdict(id, rep.passed(), to_value(&rep))
        }
        "hessian.covariance" => {
            let bar = solver(barpsi_transform(psi, &s.nu, t), id)?;
            let rep = solver(hessian_cov_check(&bar, &s.bridge, tol.hessian), id)?;
            CheckOutcome::verdict(id, rep.passed(), to_value(&rep))
        }
        "martingale.gradient" => {
            let cfg = s.sim_config(sc.simulation.n_paths, sc.simulation.seed)?;
            guarded(id, {
                gradient_martingale_test(psi, t, s.mu.mean(), &cfg, sc.simulation.ladder, 3.0).map(|rep| {
                    let out = CheckOutcome::verdict(
                        id,
                        rep.passed(),
                        json!({ "max_z": rep.max_z, "band": rep.band, "excluded": rep.excluded }),
                    );
                    series.insert("martingale".into(), rep.series);
                    out
                })
            })?
        }
        "coupling.gamma" => match (&s.params, &s.solution) {
            (Some(p), Some(sol)) if sol.alpha_psi >= 0.0 => {
                let cfg = s.sim_config(sc.simulation.n_paths, sc.simulation.seed.wrapping_add(1))?;
                let (x0, x1) = (s.mu.mean() - 1.0, s.mu.mean() + 1.0);
                guarded(id, {
                    gamma_supermartingale_test(psi, p.l, t, x0, x1, &cfg, sc.simulation.ladder, 2.0).and_then(|rep| {
                        let halving = gamma_dt_halving(psi, p.l, t, x0, x1, &cfg)?;
                        let out = CheckOutcome::verdict(
                            id,
                            rep.passed() && halving.passed(),
                            json!({ "gamma0": rep.gamma0, "max_increase_z": rep.max_increase_z,
                                    "max_paired_z": rep.max_paired_z, "band": rep.band,
                                    "coalesced_fraction": rep.coalesced_fraction, "excluded": rep.excluded,
                                    "halving": halving }),
                        );
                        series.insert("gamma".into(), rep.series);
                        Ok(out)
                    })
                })?
            }
            (Some(_), Some(sol)) => CheckOutcome::skipped(
                id,
                format!("alpha_psi = {:.4} is negative, so psi need not lie in the invariant class", sol.alpha_psi),
            ),
            _ => CheckOutcome::skipped(id, not_applicable(s)),
        },
        "htransform.tv" => {
            let h = &sc.htransform;
            let cfg = s.sim_config(h.n_paths, h.seed)?;
            guarded(id, {
                htransform_sample(&s.mu, psi, t, h.eps, &cfg, h.bins).map(|rep| {
                    CheckOutcome::verdict(
                        id,
                        rep.tv < tol.tv,
                        json!({ "tv": rep.tv, "tol": tol.tv, "eps": rep.eps, "bins": rep.bins,
                                "n_paths": rep.n_paths, "excluded": rep.excluded,
                                "overflow_empirical": rep.overflow_empirical,
                                "overflow_analytic": rep.overflow_analytic }),
                    )
                })
            })?
        }
        "lsi.empirical" => match (&s.params, &s.solution, s.mu.lsi_constant) {
            (Some(p), Some(sol), Some(c_mu)) => {
                let lp = solver(LsiParams::new(sol.alpha_psi, p.l, t, c_mu), id)?;
                let report = lsi_constant(&lp);
                let emp =
                    solver(empirical_lsi_check(&s.bridge, report.constant, sc.lsi.n_tests, sc.lsi.seed, 1e-9), id)?;
                lsi_ratios.extend(emp.ratios.iter().enumerate().map(|(k, r)| (k, emp.product_tests.contains(&k), *r)));
                let out = CheckOutcome::verdict(
                    id,
                    emp.passed(),
                    json!({ "constant": report.constant, "sharpest_ratio": emp.sharpest_ratio,
                            "sharpest_product_ratio": emp.sharpest_product_ratio, "failures": emp.failures,
                            "n_tests": emp.n_tests }),
                );
                *lsi = Some(report);
                out
            }
            (_, _, None) => CheckOutcome::skipped(id, "no LSI constant is known for mu"),
            _ => CheckOutcome::skipped(id, not_applicable(s)),
        },
        "lsi.local" => {
            let tests = solver(default_local_tests(psi.grid()), id)?;
            guarded(id, {
                local_estimates_check(psi, t, sc.lsi.eps, &tests, tol.local).map(|rep| {
                    CheckOutcome::verdict(
                        id,
                        rep.passed(),
                        json!({ "worst_grad_excess": rep.worst_grad_excess,
                                "worst_entropy_excess": rep.worst_entropy_excess,
                                "worst_entropy_excess_linear": rep.worst_entropy_excess_linear,
                                "max_grad_ratio": rep.max_grad_ratio, "alpha_measured": rep.alpha_measured,
                                "pde_range": rep.pde_range, "samples": rep.samples.len(), "tol": rep.tol }),
                    )
                })
            })?
        }
        other => unreachable!("check {other} is registered but has no runner"),
    };
    Ok(outcome)
}

fn not_applicable(s: &Solved<'_>) -> String {
    match &s.params {
        None => "no upper curvature bound for mu or no curvature data for nu".into(),
        Some(p) => format!("alpha_nu = {} is not positive", p.alpha_nu),
    }
}
