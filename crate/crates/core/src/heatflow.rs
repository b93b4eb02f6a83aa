//! The log-heat (Cole–Hopf) operator `g -> -log P_tau exp(-g)`, HJB
//! propagation and a backward Kolmogorov solver with drift.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::{log_sum_exp, Grid1D, GridFunction};
use crate::par;
use crate::weakconvex::{certify_envelope, kappa_ell_estimate_on, ConvexityProfile, EnvelopeBound, EnvelopeReport};

/// `-log sum_j w_j (2 pi tau)^{-1/2} exp(-(x - y_j)^2 / (2 tau) - g_j)` at
/// arbitrary points `xs`, with trapezoid weights over the grid of `g`.
pub fn log_heat_eval(g: &GridFunction, tau: f64, xs: &[f64]) -> Result<Vec<f64>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return domain(format!("heat time must be positive, got {tau}"));
    }
    let grid = g.grid();
    let ys = grid.points();
    let log_w: Vec<f64> = grid.trapezoid_weights().iter().zip(g.values()).map(|(w, gj)| w.ln() - gj).collect();
    let log_norm = -0.5 * (2.0 * std::f64::consts::PI * tau).ln();
    let out = par::map_range(xs.len(), |i| {
        let x = xs[i];
        let terms: Vec<f64> = ys.iter().zip(&log_w).map(|(y, lw)| lw - (x - y) * (x - y) / (2.0 * tau)).collect();
        -(log_sum_exp(&terms) + log_norm)
    });
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return domain(format!("heat kernel mass underflows at evaluation point {}", xs[i]));
    }
    Ok(out)
}

/// [`log_heat_eval`] at the grid points of `g`.
///
/// For `tau` below `h^2` the kernel is not resolved by the grid and `g` is
/// returned unchanged.
pub fn log_heat_apply(g: &GridFunction, tau: f64) -> Result<GridFunction> {
    if !(tau > 0.0) || !tau.is_finite() {
        return domain(format!("heat time must be positive, got {tau}"));
    }
    let grid = *g.grid();
    if tau < grid.spacing().powi(2) {
        return Ok(g.clone());
    }
    let values = log_heat_eval(g, tau, &grid.points())?;
    Ok(GridFunction::from_parts_unchecked(grid, values))
}

/// `U_t = -log P_{T-t} exp(-g)`, the HJB solution with terminal datum `g`.
pub fn hjb_propagate(g: &GridFunction, horizon: f64, t: f64) -> Result<GridFunction> {
    if !(horizon > 0.0) {
        return domain(format!("horizon must be positive, got {horizon}"));
    }
    if !(t >= 0.0 && t < horizon) {
        return domain(format!("time {t} must lie in [0, {horizon})"));
    }
    log_heat_apply(g, horizon - t)
}

/// Envelope certification of a propagated potential at one time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimeSlice {
    pub t: f64,
    pub envelope: EnvelopeReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InvarianceReport {
    #[serde(rename = "L")]
    pub l: f64,
    pub horizon: f64,
    pub margin: f64,
    pub tol: f64,
    pub terminal: EnvelopeReport,
    pub slices: Vec<TimeSlice>,
}

impl InvarianceReport {
    pub fn passed(&self) -> bool {
        self.slices.iter().all(|s| s.envelope.passed())
    }

    pub fn worst_margin(&self) -> f64 {
        self.slices.iter().map(|s| s.envelope.worst_margin).fold(f64::INFINITY, f64::min)
    }
}

fn class_envelope(u: &GridFunction, l: f64, margin: f64, tol: f64) -> Result<EnvelopeReport> {
    let grid = u.grid();
    let range = grid.interior(margin);
    let env = kappa_ell_estimate_on(&u.gradient(), range, grid.spacing())?;
    let bound = EnvelopeBound::semiconvex(ConvexityProfile::new(0.0, l)?);
    Ok(certify_envelope(&env, &bound, tol))
}

/// Checks that `U_t` stays in the class `r -> -f_L(r)/r` at each of `times`.
///
/// The terminal datum must itself pass on the interior; otherwise the
/// check is refused with [`Error::Precondition`].
pub fn invariance_check(
    g: &GridFunction,
    l: f64,
    horizon: f64,
    times: &[f64],
    margin: f64,
    tol: f64,
) -> Result<InvarianceReport> {
    let terminal = class_envelope(g, l, margin, tol)?;
    if !terminal.passed() {
        return Err(Error::Precondition(format!(
            "terminal datum is not in the class for L = {l} (worst margin {:.3e} at r = {:.3})",
            terminal.worst_margin, terminal.worst_distance
        )));
    }
    let slices = times
        .iter()
        .map(|&t| {
            let u = hjb_propagate(g, horizon, t)?;
            Ok(TimeSlice { t, envelope: class_envelope(&u, l, margin, tol)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InvarianceReport { l, horizon, margin, tol, terminal, slices })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpaceTimeReport {
    pub alpha: f64,
    pub horizon: f64,
    /// Standard deviation of the difference over the interior.
    pub deviation: f64,
    pub points: usize,
    pub tol: f64,
    /// Second difference of `psi - alpha x^2/2` is at least `-1e-8` on the
    /// interior.
    pub shifted_datum_convex: bool,
}

impl SpaceTimeReport {
    pub fn passed(&self) -> bool {
        self.deviation < self.tol
    }
}

/// Verifies that
/// `U_0^{T,psi}(x) - alpha x^2 / (2(1+T alpha)) - U_0^{T/(1+T alpha), psi_hat}(x/(1+T alpha))`
/// does not depend on `x`, where `psi_hat = psi - alpha x^2/2`.
///
/// The contracted term is evaluated off-grid with the same quadrature nodes.
pub fn space_time_transform_check(psi: &GridFunction, alpha: f64, horizon: f64, tol: f64) -> Result<SpaceTimeReport> {
    if !(horizon > 0.0) {
        return domain(format!("horizon must be positive, got {horizon}"));
    }
    let d = 1.0 + horizon * alpha;
    if !(d > 0.0) {
        return domain(format!("alpha = {alpha} must exceed -1/T"));
    }
    let grid = *psi.grid();
    let psi_hat = psi.map(|x, v| v - 0.5 * alpha * x * x)?;
    let lhs = log_heat_apply(psi, horizon)?;
    let range = grid.interior(grid.boundary_margin(horizon));
    if range.is_empty() {
        return domain("grid too small for the boundary margin");
    }
    let xs: Vec<f64> = range.clone().map(|i| grid.x(i)).collect();
    let contracted: Vec<f64> = xs.iter().map(|x| x / d).collect();
    let rhs = log_heat_eval(&psi_hat, horizon / d, &contracted)?;
    let diffs: Vec<f64> =
        range.clone().zip(&xs).zip(&rhs).map(|((i, x), r)| lhs.values()[i] - alpha * x * x / (2.0 * d) - r).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let var = diffs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / diffs.len() as f64;
    let second = psi_hat.second_difference();
    let shifted_datum_convex = range.clone().all(|i| second[i] >= -1e-8);
    Ok(SpaceTimeReport { alpha, horizon, deviation: var.sqrt(), points: diffs.len(), tol, shifted_datum_convex })
}

/// Gradients `x -> b(t, x)` of a drift potential sampled on a time ladder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftFamily {
    grid: Grid1D,
    times: Vec<f64>,
    gradients: Vec<Vec<f64>>,
}

impl DriftFamily {
    pub fn new(grid: Grid1D, times: Vec<f64>, gradients: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != gradients.len() {
            return domain("drift family needs one gradient per time and at least one time");
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return domain("drift times must be strictly increasing");
        }
        if gradients.iter().any(|g| g.len() != grid.len() || g.iter().any(|v| !v.is_finite())) {
            return domain("drift gradients must be finite and match the grid");
        }
        Ok(Self { grid, times, gradients })
    }

    /// Time-independent drift `U'`.
    pub fn stationary(gradient: &GridFunction) -> Self {
        Self { grid: *gradient.grid(), times: vec![0.0], gradients: vec![gradient.values().to_vec()] }
    }

    /// Gradients of `U_t^{T,g}` at each of `times`; `t = T` uses `g` itself.
    pub fn from_hjb(g: &GridFunction, horizon: f64, times: &[f64]) -> Result<Self> {
        let gradients = times
            .iter()
            .map(|&t| {
                if t == horizon {
                    Ok(g.gradient().into_values())
                } else {
                    Ok(hjb_propagate(g, horizon, t)?.gradient().into_values())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(*g.grid(), times.to_vec(), gradients)
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn gradients(&self) -> &[Vec<f64>] {
        &self.gradients
    }

    fn time_weights(&self, t: f64) -> (usize, usize, f64) {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return (0, 0, 0.0);
        }
        if t >= self.times[n - 1] {
            return (n - 1, n - 1, 0.0);
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let s = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        (k, k + 1, s)
    }

    /// Drift on the whole grid at time `t`, linear in time and clamped to
    /// the ladder.
    pub fn at_time(&self, t: f64) -> Vec<f64> {
        let (a, b, s) = self.time_weights(t);
        self.gradients[a].iter().zip(&self.gradients[b]).map(|(u, v)| u * (1.0 - s) + v * s).collect()
    }

    /// Drift at `(t, x)`; `None` outside the grid.
    pub fn value(&self, t: f64, x: f64) -> Option<f64> {
        let (i, sx) = self.grid.locate(x)?;
        let (a, b, st) = self.time_weights(t);
        let at = |g: &[f64]| g[i] * (1.0 - sx) + g[i + 1] * sx;
        Some(at(&self.gradients[a]) * (1.0 - st) + at(&self.gradients[b]) * st)
    }
}

fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    rhs[0] /= beta;
    for i in 1..n {
        c[i - 1] = sup[i - 1] / beta;
        beta = diag[i] - sub[i] * c[i - 1];
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// `P_{t0,t1} f` for the diffusion `dX = -b(s, X) ds + dB`.
///
/// Solves `d_s u + u''/2 - b u' = 0` backward from `u(t1) = f` by
/// Crank–Nicolson with centred advection and reflecting ends. The step
/// count is raised to keep `dt <= h^2`, which makes the scheme monotone.
pub fn backward_semigroup_apply(
    f: &GridFunction,
    drift: &DriftFamily,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<GridFunction> {
    if !(t1 > t0) {
        return domain(format!("need t0 < t1, got [{t0}, {t1}]"));
    }
    if f.grid() != drift.grid() {
        return domain("test function and drift live on different grids");
    }
    let grid = *f.grid();
    let n = grid.len();
    let h = grid.spacing();
    let steps = steps.max(((t1 - t0) / (h * h)).ceil() as usize).max(1);
    let dt = (t1 - t0) / steps as f64;
    let diff = 0.5 / (h * h);
    let mut u = f.values().to_vec();
    let mut sub = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for k in 0..steps {
        let s_mid = t1 - (k as f64 + 0.5) * dt;
        let b = drift.at_time(s_mid);
        for i in 1..n - 1 {
            let pe = 2.0 * b[i].abs() * h;
            if pe > 2.0 {
                return Err(Error::Conditioning(format!(
                    "cell Peclet number {pe:.2} > 2 at x = {:.3}; refine the grid",
                    grid.x(i)
                )));
            }
            lower[i] = diff + b[i] / (2.0 * h);
            upper[i] = diff - b[i] / (2.0 * h);
        }
        // reflecting ends: ghost value equals the inner neighbour
        lower[0] = 0.0;
        upper[0] = 2.0 * diff;
        lower[n - 1] = 2.0 * diff;
        upper[n - 1] = 0.0;
        for i in 0..n {
            let centre = -(lower[i] + upper[i]);
            let left = if i > 0 { u[i - 1] } else { 0.0 };
            let right = if i + 1 < n { u[i + 1] } else { 0.0 };
            rhs[i] = u[i] + 0.5 * dt * (lower[i] * left + centre * u[i] + upper[i] * right);
            sub[i] = -0.5 * dt * lower[i];
            sup[i] = -0.5 * dt * upper[i];
            diag[i] = 1.0 - 0.5 * dt * centre;
        }
        thomas(&sub, &diag, &sup, &mut rhs);
        std::mem::swap(&mut u, &mut rhs);
    }
    GridFunction::new(grid, u)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(lo: f64, hi: f64, n: usize) -> Grid1D {
        Grid1D::new(lo, hi, n).unwrap()
    }

    #[test]
    fn quadratic_datum_keeps_quadratic_shape() {
        let gr = grid(-10.0, 10.0, 401);
        for &(a, tau) in &[(1.0, 1.0), (0.5, 0.3), (3.0, 2.0)] {
            let g = GridFunction::from_fn(gr, |x| 0.5 * a * x * x).unwrap();
            let u = log_heat_apply(&g, tau).unwrap();
            let k = a / (1.0 + tau * a);
            let exact: Vec<f64> = gr.points().iter().map(|x| 0.5 * k * x * x).collect();
            let range = 40..361;
            let shift = u.values()[200] - exact[200];
            for i in range {
                let rel = (u.values()[i] - exact[i] - shift).abs() / exact[i].abs().max(1.0);
                assert!(rel < 1e-6, "a={a} tau={tau} x={} rel={rel}", gr.x(i));
            }
        }
    }

    #[test]
    fn constants_are_fixed_and_shift_equivariant() {
        let gr = grid(-8.0, 8.0, 321);
        let g = GridFunction::from_fn(gr, |x| 0.5 * x * x + x.sin()).unwrap();
        let u = log_heat_apply(&g, 0.7).unwrap();
        let v = log_heat_apply(&g.shifted(3.25), 0.7).unwrap();
        for (a, b) in u.values().iter().zip(v.values()) {
            assert!((b - a - 3.25).abs() < 1e-12);
        }
        let c = GridFunction::constant(gr, 2.0).unwrap();
        let uc = log_heat_apply(&c, 0.5).unwrap();
        for i in gr.interior(6.0) {
            assert!((uc.values()[i] - 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn second_difference_bounded_by_inverse_time() {
        let gr = grid(-8.0, 8.0, 321);
        let g = GridFunction::from_fn(gr, |x| 0.25 * x.powi(4) - 2.0 * x * x + (3.0 * x).cos()).unwrap();
        for &tau in &[0.2, 1.0] {
            let u = log_heat_apply(&g, tau).unwrap();
            for d in u.second_difference() {
                assert!(d <= 1.0 / tau + 1e-6);
            }
        }
    }

    #[test]
    fn semigroup_composition() {
        let gr = grid(-10.0, 10.0, 401);
        let g = GridFunction::from_fn(gr, |x| 0.5 * x * x - 0.4 * x.cos()).unwrap();
        let direct = hjb_propagate(&g, 1.0, 0.0).unwrap();
        let half = hjb_propagate(&g, 1.0, 0.4).unwrap();
        let two_step = hjb_propagate(&half, 0.4, 0.0).unwrap();
        let range = gr.interior(gr.boundary_margin(1.0));
        let err = crate::grid::sup_diff_mod_constant(direct.values(), two_step.values(), range);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn near_terminal_time_is_identity() {
        let gr = grid(-6.0, 6.0, 241);
        let g = GridFunction::from_fn(gr, |x| x * x).unwrap();
        let u = hjb_propagate(&g, 1.0, 1.0 - 1e-9).unwrap();
        let range = gr.interior(gr.boundary_margin(1e-9));
        assert!(crate::grid::sup_diff_mod_constant(u.values(), g.values(), range) < 1e-6);
        assert!(hjb_propagate(&g, 1.0, 1.0).is_err());
    }

    #[test]
    fn quartic_stays_convex() {
        let gr = grid(-4.0, 4.0, 321);
        let g = GridFunction::from_fn(gr, |x| 0.25 * x.powi(4)).unwrap();
        let u = hjb_propagate(&g, 1.0, 0.0).unwrap();
        let d = u.second_difference();
        for i in gr.interior(gr.boundary_margin(1.0)) {
            assert!(d[i] >= -1e-9);
        }
    }

    #[test]
    fn invariance_examples() {
        let gr = grid(-12.0, 12.0, 481);
        let times = [0.0, 0.25, 0.5, 0.75];
        let quad = GridFunction::from_fn(gr, |x| 0.5 * x * x).unwrap();
        let rep = invariance_check(&quad, 0.0, 1.0, &times, 4.0, 1e-6).unwrap();
        assert!(rep.passed());
        let cosine = GridFunction::from_fn(gr, |x| -0.4 * x.cos()).unwrap();
        let rep = invariance_check(&cosine, 0.4, 1.0, &times, 4.0, 1e-3).unwrap();
        assert!(rep.passed(), "worst {}", rep.worst_margin());
        let rough = GridFunction::from_fn(gr, |x| 0.5 * x * x - 2.0 * x.cos()).unwrap();
        assert!(matches!(invariance_check(&rough, 0.2, 1.0, &times, 4.0, 1e-3), Err(Error::Precondition(_))));
    }

    #[test]
    fn space_time_identity() {
        let gr = grid(-12.0, 12.0, 481);
        let psi = GridFunction::from_fn(gr, |x| 0.5 * x * x - 0.3 * x.cos()).unwrap();
        let rep = space_time_transform_check(&psi, 0.5, 1.0, 1e-5).unwrap();
        assert!(rep.passed(), "{}", rep.deviation);
        let rep0 = space_time_transform_check(&psi, 0.0, 1.0, 1e-12).unwrap();
        assert!(rep0.deviation < 1e-12);
        let quad = GridFunction::from_fn(gr, |x| 0.8 * x * x).unwrap();
        let rep = space_time_transform_check(&quad, 1.6, 1.0, 1e-10).unwrap();
        assert!(rep.passed() && rep.shifted_datum_convex);
    }

    #[test]
    fn backward_solver_preserves_constants() {
        let gr = grid(-6.0, 6.0, 121);
        let drift = DriftFamily::stationary(&GridFunction::from_fn(gr, |x| x).unwrap());
        let f = GridFunction::constant(gr, 1.75).unwrap();
        let u = backward_semigroup_apply(&f, &drift, 0.0, 0.5, 10).unwrap();
        for v in u.values() {
            assert!((v - 1.75).abs() < 1e-10);
        }
    }

    #[test]
    fn backward_solver_matches_heat_kernel_without_drift() {
        let gr = grid(-10.0, 10.0, 401);
        let drift = DriftFamily::stationary(&GridFunction::constant(gr, 0.0).unwrap());
        let f = GridFunction::from_fn(gr, |x| 2.0 + (x).sin() * (-0.05 * x * x).exp()).unwrap();
        let u = backward_semigroup_apply(&f, &drift, 0.0, 0.5, 50).unwrap();
        // direct Gaussian smoothing of f
        let h = gr.spacing();
        let tau: f64 = 0.5;
        for i in gr.interior(gr.boundary_margin(tau)) {
            let x = gr.x(i);
            let mut acc = 0.0;
            for k in -4000..=4000 {
                let z = k as f64 * 0.002;
                let y = x + z * tau.sqrt();
                let w = (-(z * z) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt() * 0.002;
                acc += w * (2.0 + y.sin() * (-0.05 * y * y).exp());
            }
            let rel = (u.values()[i] - acc).abs() / acc.abs();
            assert!(rel < 1e-4, "x={x} rel={rel} h={h}");
        }
    }

    #[test]
    fn backward_solver_is_order_preserving() {
        let gr = grid(-6.0, 6.0, 121);
        let drift = DriftFamily::stationary(&GridFunction::from_fn(gr, |x| x + (2.0 * x).sin()).unwrap());
        let f1 = GridFunction::from_fn(gr, |x| (2.0 * x).cos()).unwrap();
        let f2 = GridFunction::from_fn(gr, |x| (2.0 * x).cos() + 0.01 * (-(x - 1.0).powi(2)).exp()).unwrap();
        let u1 = backward_semigroup_apply(&f1, &drift, 0.0, 0.3, 1).unwrap();
        let u2 = backward_semigroup_apply(&f2, &drift, 0.0, 0.3, 1).unwrap();
        for (a, b) in u1.values().iter().zip(u2.values()) {
            assert!(b >= a);
        }
    }

    #[test]
    fn backward_solver_rejects_large_peclet() {
        let gr = grid(-6.0, 6.0, 33);
        let drift = DriftFamily::stationary(&GridFunction::from_fn(gr, |x| 10.0 * x).unwrap());
        let f = GridFunction::constant(gr, 1.0).unwrap();
        assert!(matches!(backward_semigroup_apply(&f, &drift, 0.0, 0.1, 10), Err(Error::Conditioning(_))));
    }

    #[test]
    fn drift_family_interpolates() {
        let gr = grid(0.0, 1.0, 17);
        let fam = DriftFamily::new(gr, vec![0.0, 1.0], vec![vec![0.0; 17], vec![2.0; 17]]).unwrap();
        assert_eq!(fam.value(0.25, 0.5), Some(0.5));
        assert_eq!(fam.value(5.0, 0.5), Some(2.0));
        assert_eq!(fam.value(0.5, 1.5), None);
    }
}
