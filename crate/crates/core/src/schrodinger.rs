//! Log-domain Sinkhorn for the Schrödinger system
//!
//! ```text
//! phi = U_mu  - H_T(psi),    psi = U_nu - H_T(phi),    H_T(g) = -log P_T exp(-g)
//! ```
//!
//! together with the static bridge `exp(-phi(x) - psi(y)) p_T(x - y)`, its
//! conditionals and certification of the potential envelopes.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::fixedpoint::{eval_g, potential_envelopes, solve_alpha_psi, AlphaSolution, ProblemParams};
use crate::grid::{log_sum_exp, sup_diff_mod_constant, Grid1D, GridFunction};
use crate::heatflow::log_heat_apply;
use crate::potentials::{CurvatureData, Potential};
use crate::weakconvex::{certify_envelope, kappa_ell_estimate_on, ConvexityProfile, EnvelopeBound, EnvelopeReport};

/// A marginal `exp(-U)` sampled on a grid, normalised by the trapezoid rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalSpec {
    pub potential: GridFunction,
    pub density: GridFunction,
    pub curvature: CurvatureData,
    pub beta_upper: Option<f64>,
    pub lsi_constant: Option<f64>,
}

impl MarginalSpec {
    /// Normalises `potential` so that `exp(-potential)` integrates to one.
    pub fn new(
        potential: GridFunction,
        curvature: CurvatureData,
        beta_upper: Option<f64>,
        lsi_constant: Option<f64>,
    ) -> Result<Self> {
        let grid = *potential.grid();
        let log_terms: Vec<f64> =
            grid.trapezoid_weights().iter().zip(potential.values()).map(|(w, u)| w.ln() - u).collect();
        let log_z = log_sum_exp(&log_terms);
        if !log_z.is_finite() {
            return domain("marginal has no mass on the grid");
        }
        let potential = potential.shifted(log_z);
        let density = GridFunction::new(grid, potential.values().iter().map(|u| (-u).exp()).collect())?;
        Ok(Self { potential, density, curvature, beta_upper, lsi_constant })
    }

    pub fn from_potential(family: &Potential, grid: Grid1D) -> Result<Self> {
        Self::new(family.sample(grid)?, family.curvature()?, family.beta_upper(), family.lsi_constant())
    }

    pub fn grid(&self) -> &Grid1D {
        self.potential.grid()
    }

    pub fn mean(&self) -> f64 {
        self.density.map(|x, p| x * p).map(|g| g.integral()).unwrap_or(f64::NAN)
    }
}

/// Derives `(T, beta_mu, alpha_nu, L, C_mu)` from the marginals, or `None`
/// when `beta_mu` or the curvature data of `nu` is unknown.
pub fn problem_params(mu: &MarginalSpec, nu: &MarginalSpec, horizon: f64) -> Result<Option<ProblemParams>> {
    let (Some(beta), Some(profile)) = (mu.beta_upper, nu.curvature.profile()?) else {
        return Ok(None);
    };
    ProblemParams::new(horizon, beta, profile.alpha, profile.l, mu.lsi_constant).map(Some)
}

/// Converged Schrödinger potentials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornState {
    pub phi: GridFunction,
    pub psi: GridFunction,
    pub horizon: f64,
    pub iterations: usize,
    /// Total-variation error of the `(x, y)` marginals.
    pub marginal_err: (f64, f64),
    /// `marginal_err` after each sweep.
    pub history: Vec<(f64, f64)>,
    /// Index range on which `psi` has mean zero.
    pub gauge: Range<usize>,
}

fn tv_error(log_density: &[f64], target: &GridFunction) -> f64 {
    let w = target.grid().trapezoid_weights();
    0.5 * log_density.iter().zip(target.values()).zip(&w).map(|((l, t), w)| w * (l.exp() - t).abs()).sum::<f64>()
}

fn same_grid(mu: &MarginalSpec, nu: &MarginalSpec) -> Result<Grid1D> {
    if mu.grid() != nu.grid() {
        return domain("marginals must share one grid");
    }
    Ok(*mu.grid())
}

/// Gauge range used throughout: points at least `max(4 sqrt(T), 10 h)` from
/// both ends.
pub fn interior_range(grid: &Grid1D, horizon: f64) -> Range<usize> {
    grid.interior(grid.boundary_margin(horizon))
}

/// Alternating projections from `psi = 0` until both marginal errors are
/// below `tol`.
pub fn sinkhorn_solve(
    mu: &MarginalSpec,
    nu: &MarginalSpec,
    horizon: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SinkhornState> {
    let grid = same_grid(mu, nu)?;
    if !(horizon > 0.0) {
        return domain(format!("horizon must be positive, got {horizon}"));
    }
    if !(tol > 0.0) {
        return domain(format!("tolerance must be positive, got {tol}"));
    }
    let gauge = interior_range(&grid, horizon);
    if gauge.is_empty() {
        return domain("grid too small for the boundary margin");
    }
    let u_mu = mu.potential.values();
    let u_nu = nu.potential.values();
    let mut psi = GridFunction::constant(grid, 0.0)?;
    let mut phi = GridFunction::constant(grid, 0.0)?;
    let mut history: Vec<(f64, f64)> = Vec::new();
    for iteration in 0..=max_iter {
        let h_psi = log_heat_apply(&psi, horizon)?;
        if iteration > 0 {
            let log_x: Vec<f64> = phi.values().iter().zip(h_psi.values()).map(|(p, h)| -p - h).collect();
            let err_x = tv_error(&log_x, &mu.density);
            let err_y = history.last().map_or(0.0, |e| e.1);
            let last = history.last_mut().expect("history is filled every sweep");
            last.0 = err_x;
            if err_x < tol && err_y < tol {
                return Ok(SinkhornState {
                    phi,
                    psi,
                    horizon,
                    iterations: iteration,
                    marginal_err: (err_x, err_y),
                    history,
                    gauge,
                });
            }
        }
        if iteration == max_iter {
            break;
        }
        phi = GridFunction::new(grid, u_mu.iter().zip(h_psi.values()).map(|(u, h)| u - h).collect())?;
        let h_phi = log_heat_apply(&phi, horizon)?;
        let new_psi = GridFunction::new(grid, u_nu.iter().zip(h_phi.values()).map(|(u, h)| u - h).collect())?;
        let log_y: Vec<f64> = new_psi.values().iter().zip(h_phi.values()).map(|(p, h)| -p - h).collect();
        let err_y = tv_error(&log_y, &nu.density);
        let c = new_psi.mean_over(gauge.clone());
        psi = new_psi.shifted(-c);
        phi = phi.shifted(c);
        history.push((f64::NAN, err_y));
    }
    let trace: Vec<f64> = history.iter().map(|e| e.0.max(e.1)).collect();
    Err(Error::Convergence { iterations: max_iter, last_error: trace.last().copied().unwrap_or(f64::NAN), trace })
}

/// Interior sup-norm residuals of both equations of the system, after
/// removing constants.
pub fn system_residual(state: &SinkhornState, mu: &MarginalSpec, nu: &MarginalSpec) -> Result<(f64, f64)> {
    let h_psi = log_heat_apply(&state.psi, state.horizon)?;
    let h_phi = log_heat_apply(&state.phi, state.horizon)?;
    let rhs_phi: Vec<f64> = mu.potential.values().iter().zip(h_psi.values()).map(|(u, h)| u - h).collect();
    let rhs_psi: Vec<f64> = nu.potential.values().iter().zip(h_phi.values()).map(|(u, h)| u - h).collect();
    Ok((
        sup_diff_mod_constant(state.phi.values(), &rhs_phi, state.gauge.clone()),
        sup_diff_mod_constant(state.psi.values(), &rhs_psi, state.gauge.clone()),
    ))
}

/// Cell masses of a coupling on the product grid, row-major in `(x, y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BridgeDensity {
    grid: Grid1D,
    horizon: f64,
    masses: Vec<f64>,
}

impl BridgeDensity {
    pub fn from_masses(grid: Grid1D, horizon: f64, masses: Vec<f64>) -> Result<Self> {
        if masses.len() != grid.len() * grid.len() {
            return domain("coupling masses must cover the product grid");
        }
        if masses.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return domain("coupling masses must be finite and nonnegative");
        }
        Ok(Self { grid, horizon, masses })
    }

    /// Independent coupling of two marginals.
    pub fn product(mu: &MarginalSpec, nu: &MarginalSpec, horizon: f64) -> Result<Self> {
        let grid = same_grid(mu, nu)?;
        let w = grid.trapezoid_weights();
        let n = grid.len();
        let mut masses = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                masses[i * n + j] = w[i] * mu.density.values()[i] * w[j] * nu.density.values()[j];
            }
        }
        Self::from_masses(grid, horizon, masses)
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n(&self) -> usize {
        self.grid.len()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn mass(&self, i: usize, j: usize) -> f64 {
        self.masses[i * self.n() + j]
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Row sums: the `x` marginal as cell masses.
    pub fn x_marginal(&self) -> Vec<f64> {
        self.masses.chunks(self.n()).map(|row| row.iter().sum()).collect()
    }

    /// Column sums: the `y` marginal as cell masses.
    pub fn y_marginal(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n];
        for row in self.masses.chunks(n) {
            for (o, m) in out.iter_mut().zip(row) {
                *o += m;
            }
        }
        out
    }

    /// Means, variances and covariance `(mx, my, vx, vy, cxy)`.
    pub fn moments(&self) -> (f64, f64, f64, f64, f64) {
        let xs = self.grid.points();
        let n = self.n();
        let total = self.total_mass();
        let (mut mx, mut my) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let m = self.masses[i * n + j];
                mx += m * xs[i];
                my += m * xs[j];
            }
        }
        mx /= total;
        my /= total;
        let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let m = self.masses[i * n + j];
                let (dx, dy) = (xs[i] - mx, xs[j] - my);
                vx += m * dx * dx;
                vy += m * dy * dy;
                cxy += m * dx * dy;
            }
        }
        (mx, my, vx / total, vy / total, cxy / total)
    }

    pub fn correlation(&self) -> f64 {
        let (_, _, vx, vy, c) = self.moments();
        c / (vx * vy).sqrt()
    }

    /// Coupling with `x` and `y` exchanged.
    pub fn transposed(&self) -> Self {
        let n = self.n();
        let mut masses = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                masses[j * n + i] = self.masses[i * n + j];
            }
        }
        Self { grid: self.grid, horizon: self.horizon, masses }
    }
}

/// Materialises `w_i w_j exp(-phi_i - psi_j - (x_i - y_j)^2 / (2T)) / sqrt(2 pi T)`.
pub fn bridge_density(state: &SinkhornState, mu: &MarginalSpec, nu: &MarginalSpec) -> Result<BridgeDensity> {
    let grid = same_grid(mu, nu)?;
    if state.phi.grid() != &grid {
        return domain("potentials and marginals live on different grids");
    }
    let t = state.horizon;
    let xs = grid.points();
    let lw: Vec<f64> = grid.trapezoid_weights().iter().map(|w| w.ln()).collect();
    let log_norm = -0.5 * (2.0 * std::f64::consts::PI * t).ln();
    let n = grid.len();
    let phi = state.phi.values();
    let psi = state.psi.values();
    let rows = crate::par::map_range(n, |i| {
        (0..n)
            .map(|j| {
                let d = xs[i] - xs[j];
                (lw[i] + lw[j] - phi[i] - psi[j] - d * d / (2.0 * t) + log_norm).exp()
            })
            .collect::<Vec<f64>>()
    });
    BridgeDensity::from_masses(grid, t, rows.concat())
}

/// Law of `x` given `y = y_j` under a coupling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalSlice {
    pub y: f64,
    /// Probabilities of the `x` grid points.
    pub weights: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
}

pub fn conditional_distribution(bridge: &BridgeDensity, j: usize) -> Result<ConditionalSlice> {
    let n = bridge.n();
    if j >= n {
        return domain(format!("column {j} out of range"));
    }
    let column: Vec<f64> = (0..n).map(|i| bridge.mass(i, j)).collect();
    let total: f64 = column.iter().sum();
    if !(total > 0.0) {
        return domain(format!("column {j} carries no mass"));
    }
    let weights: Vec<f64> = column.iter().map(|m| m / total).collect();
    let xs = bridge.grid.points();
    let mean: f64 = weights.iter().zip(&xs).map(|(p, x)| p * x).sum();
    let variance: f64 = weights.iter().zip(&xs).map(|(p, x)| p * (x - mean).powi(2)).sum();
    Ok(ConditionalSlice { y: xs[j], weights, mean, variance })
}

/// `T (psi - U_nu + y^2 / (2T))`, convex whenever the system holds.
pub fn barpsi_transform(psi: &GridFunction, nu: &MarginalSpec, horizon: f64) -> Result<GridFunction> {
    if psi.grid() != nu.grid() {
        return domain("potential and marginal live on different grids");
    }
    let u = nu.potential.values();
    let values = psi
        .values()
        .iter()
        .zip(u)
        .zip(psi.grid().points())
        .map(|((p, u), y)| horizon * (p - u) + 0.5 * y * y)
        .collect();
    GridFunction::new(*psi.grid(), values)
}

/// Inverse of [`barpsi_transform`].
pub fn barpsi_inverse(psi_bar: &GridFunction, nu: &MarginalSpec, horizon: f64) -> Result<GridFunction> {
    let u = nu.potential.values();
    let values = psi_bar
        .values()
        .iter()
        .zip(u)
        .zip(psi_bar.grid().points())
        .map(|((b, u), y)| (b - 0.5 * y * y) / horizon + u)
        .collect();
    GridFunction::new(*psi_bar.grid(), values)
}

/// `y` indices that carry at least `1e-8` of the largest column mass and
/// whose conditional puts less than `1e-8` of its mass on the outer 5% of
/// the grid on either side.
pub fn well_resolved_columns(bridge: &BridgeDensity) -> Vec<usize> {
    let n = bridge.n();
    let strip = (n / 20).max(1);
    let column = bridge.y_marginal();
    let heaviest = column.iter().copied().fold(0.0, f64::max);
    (1..n - 1)
        .filter(|&j| column[j] >= 1e-8 * heaviest)
        .filter(|&j| {
            conditional_distribution(bridge, j).is_ok_and(|c| {
                let outer: f64 = c.weights[..strip].iter().chain(&c.weights[n - strip..]).sum();
                outer < 1e-8
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HessianCovReport {
    pub max_rel_err: f64,
    pub worst_y: f64,
    pub points: usize,
    pub tol: f64,
}

impl HessianCovReport {
    pub fn passed(&self) -> bool {
        self.points > 0 && self.max_rel_err < self.tol
    }
}

/// Compares the second difference of `psi_bar` with `Var(x | y) / T` on the
/// well-resolved columns.
pub fn hessian_cov_check(psi_bar: &GridFunction, bridge: &BridgeDensity, tol: f64) -> Result<HessianCovReport> {
    if psi_bar.grid() != bridge.grid() {
        return domain("potential and bridge live on different grids");
    }
    let second = psi_bar.second_difference();
    let mut report = HessianCovReport { max_rel_err: 0.0, worst_y: f64::NAN, points: 0, tol };
    for j in well_resolved_columns(bridge) {
        let c = conditional_distribution(bridge, j)?;
        let target = c.variance / bridge.horizon;
        let rel = (second[j] - target).abs() / target;
        report.points += 1;
        if rel > report.max_rel_err || report.worst_y.is_nan() {
            report.max_rel_err = report.max_rel_err.max(rel);
            report.worst_y = c.y;
        }
    }
    Ok(report)
}

/// Smallest conditional variance against the floor `G(alpha_psi, 2) / 2`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VarianceFloor {
    pub min_variance: f64,
    pub floor: f64,
    pub points: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PotentialEnvelopeReport {
    NotApplicable { reason: String },
    Checked(Box<PotentialEnvelopeChecks>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PotentialEnvelopeChecks {
    pub params: ProblemParams,
    pub solution: AlphaSolution,
    pub margin: f64,
    pub kappa_psi: EnvelopeReport,
    pub ell_phi: EnvelopeReport,
    pub crude_kappa_psi: EnvelopeReport,
    pub variance_floor: VarianceFloor,
    pub tol: f64,
}

impl PotentialEnvelopeReport {
    pub fn passed(&self) -> Option<bool> {
        match self {
            PotentialEnvelopeReport::NotApplicable { .. } => None,
            PotentialEnvelopeReport::Checked(c) => Some(
                c.kappa_psi.passed()
                    && c.ell_phi.passed()
                    && c.crude_kappa_psi.passed()
                    && c.variance_floor.min_variance >= c.variance_floor.floor * (1.0 - c.tol),
            ),
        }
    }
}

/// Measures the pairwise envelopes of `psi'` and `phi'` on the interior and
/// compares them with the bounds built from `alpha_psi`.
pub fn certify_potential_envelopes(
    state: &SinkhornState,
    mu: &MarginalSpec,
    nu: &MarginalSpec,
    params: Option<ProblemParams>,
    tol: f64,
) -> Result<PotentialEnvelopeReport> {
    let params = match params {
        Some(p) => p,
        None => match problem_params(mu, nu, state.horizon)? {
            Some(p) => p,
            None => {
                return Ok(PotentialEnvelopeReport::NotApplicable {
                    reason: "no upper curvature bound for mu or no curvature data for nu".into(),
                })
            }
        },
    };
    if !(params.alpha_nu > 0.0) {
        return Ok(PotentialEnvelopeReport::NotApplicable {
            reason: format!("alpha_nu = {} is not positive", params.alpha_nu),
        });
    }
    let solution = solve_alpha_psi(&params)?;
    let env = potential_envelopes(&params, solution.alpha_psi)?;
    let grid = *state.psi.grid();
    let margin = grid.boundary_margin(state.horizon);
    let range = grid.interior(margin);
    let h = grid.spacing();
    let psi_env = kappa_ell_estimate_on(&state.psi.gradient(), range.clone(), h)?;
    let phi_env = kappa_ell_estimate_on(&state.phi.gradient(), range, h)?;
    let kappa_psi = certify_envelope(
        &psi_env,
        &EnvelopeBound::semiconvex(ConvexityProfile::new(solution.alpha_psi, params.l)?),
        tol,
    );
    let crude_kappa_psi = certify_envelope(
        &psi_env,
        &EnvelopeBound::semiconvex(ConvexityProfile::new(params.alpha_nu - 1.0 / params.t, params.l)?),
        tol,
    );
    let ell_phi =
        certify_envelope(&phi_env, &EnvelopeBound::semiconcave(env.ell_offset(), env.ell_weight(), params.l), tol);
    let bridge = bridge_density(state, mu, nu)?;
    let columns = well_resolved_columns(&bridge);
    let min_variance = columns
        .iter()
        .map(|&j| conditional_distribution(&bridge, j).map(|c| c.variance))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let variance_floor =
        VarianceFloor { min_variance, floor: 0.5 * eval_g(&params, solution.alpha_psi, 2.0)?, points: columns.len() };
    Ok(PotentialEnvelopeReport::Checked(Box::new(PotentialEnvelopeChecks {
        params,
        solution,
        margin,
        kappa_psi,
        ell_phi,
        crude_kappa_psi,
        variance_floor,
        tol,
    })))
}

/// Discrete relative entropy of a coupling against `mu(dx) p_T(y - x) dy`.
///
/// Returns `+inf` when the coupling charges a cell where the reference
/// underflows to zero.
pub fn entropic_cost(bridge: &BridgeDensity, mu: &MarginalSpec) -> Result<f64> {
    let grid = *bridge.grid();
    if mu.grid() != &grid {
        return domain("coupling and marginal live on different grids");
    }
    let t = bridge.horizon;
    let xs = grid.points();
    let lw: Vec<f64> = grid.trapezoid_weights().iter().map(|w| w.ln()).collect();
    let log_norm = -0.5 * (2.0 * std::f64::consts::PI * t).ln();
    let n = grid.len();
    let u = mu.potential.values();
    let rows = crate::par::map_range(n, |i| {
        let mut acc = 0.0;
        for j in 0..n {
            let m = bridge.mass(i, j);
            if m == 0.0 {
                continue;
            }
            let d = xs[i] - xs[j];
            let log_ref = lw[i] - u[i] + lw[j] - d * d / (2.0 * t) + log_norm;
            if log_ref == f64::NEG_INFINITY {
                return f64::INFINITY;
            }
            acc += m * (m.ln() - log_ref);
        }
        acc
    });
    Ok(rows.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(grid: Grid1D, var: f64) -> MarginalSpec {
        MarginalSpec::from_potential(&Potential::Gaussian { mean: 0.0, var }, grid).unwrap()
    }

    /// Quadratic coefficients `(b, a)` of `(phi, psi)` for centred Gaussian
    /// marginals, by iterating the scalar system.
    fn quadratic_coefficients(var_mu: f64, var_nu: f64, t: f64) -> (f64, f64) {
        let mut a = 0.0;
        let mut b = 0.0;
        for _ in 0..10_000 {
            b = 1.0 / var_mu - a / (1.0 + t * a);
            a = 1.0 / var_nu - b / (1.0 + t * b);
        }
        (b, a)
    }

    #[test]
    fn marginal_is_normalised() {
        let g = Grid1D::new(-8.0, 8.0, 257).unwrap();
        let m = gaussian(g, 1.0);
        assert!((m.density.integral() - 1.0).abs() < 1e-10);
        let fam = Potential::DoubleWell { height: 1.0, separation: 1.0, alpha: None };
        let m = MarginalSpec::from_potential(&fam, g).unwrap();
        assert!((m.density.integral() - 1.0).abs() < 1e-10);
        for (u, p) in m.potential.values().iter().zip(m.density.values()) {
            assert!(((-u).exp() - p).abs() < 1e-15);
        }
    }

    #[test]
    fn gaussian_potentials_are_quadratic() {
        let g = Grid1D::new(-8.0, 8.0, 257).unwrap();
        let (mu, nu) = (gaussian(g, 1.0), gaussian(g, 1.0));
        let st = sinkhorn_solve(&mu, &nu, 1.0, 1e-12, 500).unwrap();
        let (b, a) = quadratic_coefficients(1.0, 1.0, 1.0);
        assert!((a - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-12);
        let exact_psi: Vec<f64> = g.points().iter().map(|y| 0.5 * a * y * y).collect();
        let exact_phi: Vec<f64> = g.points().iter().map(|x| 0.5 * b * x * x).collect();
        let r = st.gauge.clone();
        assert!(sup_diff_mod_constant(st.psi.values(), &exact_psi, r.clone()) < 1e-8);
        assert!(sup_diff_mod_constant(st.phi.values(), &exact_phi, r) < 1e-8);
        let (rp, rq) = system_residual(&st, &mu, &nu).unwrap();
        assert!(rp < 1e-10 && rq < 1e-10);
        assert!(st.history.windows(2).all(|w| w[1].0 <= w[0].0 * (1.0 + 1e-9)));
    }

    #[test]
    fn bridge_matches_gaussian_covariance() {
        let g = Grid1D::new(-9.0, 9.0, 301).unwrap();
        let (mu, nu) = (gaussian(g, 1.0), gaussian(g, 2.0));
        let t = 0.8;
        let st = sinkhorn_solve(&mu, &nu, t, 1e-12, 1000).unwrap();
        let bridge = bridge_density(&st, &mu, &nu).unwrap();
        let (b, a) = quadratic_coefficients(1.0, 2.0, t);
        // precision matrix [[b + 1/T, -1/T], [-1/T, a + 1/T]]
        let (p11, p12, p22) = (b + 1.0 / t, -1.0 / t, a + 1.0 / t);
        let det = p11 * p22 - p12 * p12;
        let (vx, vy, cxy) = (p22 / det, p11 / det, -p12 / det);
        let (_, _, mvx, mvy, mc) = bridge.moments();
        assert!((mvx - vx).abs() / vx < 1e-6 && (mvy - vy).abs() / vy < 1e-6);
        assert!((mc - cxy).abs() / cxy < 1e-4);
        assert!((vx - 1.0).abs() < 1e-9 && (vy - 2.0).abs() < 1e-9);
        // conditional of x given y has mean (-p12 / p11) y
        for j in [100, 150, 200] {
            let c = conditional_distribution(&bridge, j).unwrap();
            assert!((c.mean - (-p12 / p11) * c.y).abs() < 1e-4 * (1.0 + c.y.abs()));
        }
    }

    #[test]
    fn long_horizon_correlation_matches_closed_form() {
        let g = Grid1D::new(-36.0, 36.0, 721).unwrap();
        let mu = gaussian(g, 1.0);
        let t = 50.0;
        let st = sinkhorn_solve(&mu, &mu, t, 1e-12, 2000).unwrap();
        let bridge = bridge_density(&st, &mu, &mu).unwrap();
        let (_, a) = quadratic_coefficients(1.0, 1.0, t);
        let exact = 1.0 / (1.0 + a * t);
        assert!((bridge.correlation() - exact).abs() / exact < 1e-4, "{} vs {exact}", bridge.correlation());
        assert!((exact - 0.02).abs() < 1e-4);
    }

    #[test]
    fn marginals_and_gauge() {
        let g = Grid1D::new(-8.0, 8.0, 201).unwrap();
        let mu = gaussian(g, 1.0);
        let nu = MarginalSpec::from_potential(&Potential::DoubleWell { height: 1.0, separation: 1.0, alpha: None }, g)
            .unwrap();
        let st = sinkhorn_solve(&mu, &nu, 1.0, 1e-10, 2000).unwrap();
        let bridge = bridge_density(&st, &mu, &nu).unwrap();
        let w = g.trapezoid_weights();
        let tv_x: f64 = bridge
            .x_marginal()
            .iter()
            .zip(&w)
            .zip(mu.density.values())
            .map(|((m, w), p)| (m - w * p).abs())
            .sum::<f64>()
            * 0.5;
        let tv_y: f64 = bridge
            .y_marginal()
            .iter()
            .zip(&w)
            .zip(nu.density.values())
            .map(|((m, w), p)| (m - w * p).abs())
            .sum::<f64>()
            * 0.5;
        assert!(tv_x < 1e-10 && tv_y < 1e-10);

        let shifted = SinkhornState { phi: st.phi.shifted(-0.7), psi: st.psi.shifted(0.7), ..st.clone() };
        let b2 = bridge_density(&shifted, &mu, &nu).unwrap();
        for (p, q) in bridge.masses().iter().zip(b2.masses()) {
            assert!((p - q).abs() <= 1e-12 * p.max(1e-300) + 1e-300);
        }

        let swapped = sinkhorn_solve(&nu, &mu, 1.0, 1e-10, 2000).unwrap();
        let bt = bridge_density(&swapped, &nu, &mu).unwrap().transposed();
        let diff: f64 = bridge.masses().iter().zip(bt.masses()).map(|(p, q)| (p - q).abs()).sum();
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn conditional_matches_potential() {
        let g = Grid1D::new(-8.0, 8.0, 201).unwrap();
        let (mu, nu) = (gaussian(g, 1.0), gaussian(g, 1.0));
        let t = 1.0;
        let st = sinkhorn_solve(&mu, &nu, t, 1e-10, 500).unwrap();
        let bridge = bridge_density(&st, &mu, &nu).unwrap();
        let w = g.trapezoid_weights();
        let j = 120;
        let c = conditional_distribution(&bridge, j).unwrap();
        assert!((c.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let y = g.x(j);
        let logs: Vec<f64> = (0..g.len())
            .map(|i| {
                let x = g.x(i);
                let v = st.phi.values()[i] + x * x / (2.0 * t) - x * y / t;
                (c.weights[i] / w[i]).ln() + v
            })
            .collect();
        let spread =
            logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - logs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 1e-8, "{spread}");
    }

    #[test]
    fn barpsi_round_trip_and_convexity() {
        let g = Grid1D::new(-8.0, 8.0, 201).unwrap();
        let mu = gaussian(g, 1.0);
        let nu = MarginalSpec::from_potential(&Potential::DoubleWell { height: 1.0, separation: 1.0, alpha: None }, g)
            .unwrap();
        let st = sinkhorn_solve(&mu, &nu, 1.0, 1e-10, 2000).unwrap();
        let bar = barpsi_transform(&st.psi, &nu, 1.0).unwrap();
        assert!(bar.second_difference().iter().all(|d| *d >= -1e-8));
        let back = barpsi_inverse(&bar, &nu, 1.0).unwrap();
        for (p, q) in back.values().iter().zip(st.psi.values()) {
            assert!((p - q).abs() < 1e-12 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn entropic_cost_examples() {
        let g = Grid1D::new(-8.0, 8.0, 161).unwrap();
        let t = 1.0;
        let mu = gaussian(g, 1.0);
        // the reference itself has zero cost
        let xs = g.points();
        let w = g.trapezoid_weights();
        let n = g.len();
        let mut masses = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let d = xs[i] - xs[j];
                masses[i * n + j] = w[i] * mu.density.values()[i] * w[j] * (-d * d / (2.0 * t)).exp()
                    / (2.0 * std::f64::consts::PI * t).sqrt();
            }
        }
        let reference = BridgeDensity::from_masses(g, t, masses).unwrap();
        assert!(entropic_cost(&reference, &mu).unwrap().abs() < 1e-12);

        let nu = gaussian(g, 1.0);
        let st = sinkhorn_solve(&mu, &nu, t, 1e-11, 500).unwrap();
        let bridge = bridge_density(&st, &mu, &nu).unwrap();
        let optimal = entropic_cost(&bridge, &mu).unwrap();
        let product = entropic_cost(&BridgeDensity::product(&mu, &nu, t).unwrap(), &mu).unwrap();
        assert!(optimal < product);
    }
}
