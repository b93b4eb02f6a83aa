//! Log-Sobolev constant of the bridge, local gradient and entropy estimates
//! for the time-inhomogeneous semigroup, and empirical LSI tests.
//!
//! Convention: `rho` satisfies LSI with constant `C` when
//! `Ent_rho(f) <= (C / 2) int |grad f|^2 / f d rho` for positive `f`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::grid::{Grid1D, GridFunction};
use crate::heatflow::{backward_semigroup_apply, DriftFamily};
use crate::par;
use crate::schrodinger::BridgeDensity;

/// Data of the LSI constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsiParams {
    pub alpha_psi: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "C_mu")]
    pub c_mu: f64,
}

impl LsiParams {
    pub fn new(alpha_psi: f64, l: f64, t: f64, c_mu: f64) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return domain(format!("horizon must be positive, got {t}"));
        }
        if !(alpha_psi > -1.0 / t) || !alpha_psi.is_finite() {
            return domain(format!("alpha_psi = {alpha_psi} must exceed -1/T = {}", -1.0 / t));
        }
        if !(l >= 0.0) || !l.is_finite() {
            return domain(format!("L must be nonnegative, got {l}"));
        }
        if !(c_mu > 0.0) || !c_mu.is_finite() {
            return domain(format!("C_mu must be positive, got {c_mu}"));
        }
        Ok(Self { alpha_psi, l, t, c_mu })
    }
}

/// `alpha_t = alpha / (1 + s alpha) - L / (1 + s alpha)^2` with `s = T - t`.
pub fn alpha_profile(p: &LsiParams, t: f64) -> f64 {
    let d = 1.0 + (p.t - t) * p.alpha_psi;
    p.alpha_psi / d - p.l / (d * d)
}

/// `C_{t,T} = exp(-int_t^T alpha_s ds)` in closed form.
pub fn contraction_coefficient(p: &LsiParams, t: f64) -> f64 {
    let s = p.t - t;
    let d = 1.0 + s * p.alpha_psi;
    (p.l * s / d).exp() / d
}

/// `C_{t,T}` from quadrature of [`alpha_profile`].
pub fn contraction_coefficient_quadrature(p: &LsiParams, t: f64) -> f64 {
    (-adaptive_simpson(&|s| alpha_profile(p, s), t, p.t, QUAD_TOL)).exp()
}

const QUAD_TOL: f64 = 1e-10;
const MAX_DEPTH: usize = 30;

/// Adaptive Simpson quadrature with absolute tolerance `tol`, floored at
/// the rounding level of the partial sums.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (fa, fb, m) = (f(a), f(b), 0.5 * (a + b));
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    let floor = 1e-14 * (left.abs() + right.abs());
    if depth == 0 || delta.abs() <= 15.0 * tol.max(floor) {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    ClosedForm,
    Quadrature,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsiReport {
    pub params: LsiParams,
    pub constant: f64,
    /// `max(2 C_mu, 2 C_mu C_{0,T} + int_0^T C_{t,T} dt)`.
    pub mixing_constant: f64,
    /// `max(2 C_mu, 2 C_mu C_{0,T}^2 + int_0^T C_{t,T}^2 dt)`.
    pub squared_constant: f64,
    pub c0t: f64,
    pub integral_term: f64,
    pub squared_integral_term: f64,
    pub route: Route,
    /// Largest relative gap between closed-form and quadrature `C_{t,T}`
    /// on a 65-point time ladder.
    pub quadrature_gap: f64,
    pub profile_min: f64,
}

/// The LSI constant of the bridge.
///
/// `constant` is the larger of the mixing formula built from `C_{t,T}` and
/// the one built from `C_{t,T}^2`. They coincide in the order
/// `mixing >= squared` whenever the curvature profile is nonnegative.
pub fn lsi_constant(p: &LsiParams) -> LsiReport {
    let closed = |t: f64| contraction_coefficient(p, t);
    let quad = |t: f64| contraction_coefficient_quadrature(p, t);
    let ladder = 64;
    let quadrature_gap = (0..=ladder)
        .map(|k| {
            let t = p.t * k as f64 / ladder as f64;
            let c = closed(t);
            (c - quad(t)).abs() / c.abs().max(1.0)
        })
        .fold(0.0, f64::max);
    let finite = (0..=ladder).all(|k| closed(p.t * k as f64 / ladder as f64).is_finite());
    let (route, coeff): (Route, Box<dyn Fn(f64) -> f64>) =
        if finite { (Route::ClosedForm, Box::new(closed)) } else { (Route::Quadrature, Box::new(quad)) };
    let c0t = coeff(0.0);
    let integral_term = adaptive_simpson(&|t| coeff(t), 0.0, p.t, QUAD_TOL);
    let squared_integral_term = adaptive_simpson(&|t| coeff(t).powi(2), 0.0, p.t, QUAD_TOL);
    let first = 2.0 * p.c_mu;
    let mixing_constant = first.max(2.0 * p.c_mu * c0t + integral_term);
    let squared_constant = first.max(2.0 * p.c_mu * c0t * c0t + squared_integral_term);
    let profile_min = alpha_profile(p, 0.0).min(alpha_profile(p, p.t));
    LsiReport {
        params: *p,
        constant: mixing_constant.max(squared_constant),
        mixing_constant,
        squared_constant,
        c0t,
        integral_term,
        squared_integral_term,
        route,
        quadrature_gap,
        profile_min,
    }
}

/// One `(t, x)` evaluation of the local estimates for one test function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalSample {
    pub test: usize,
    pub t: f64,
    pub x: f64,
    pub grad_lhs: f64,
    pub grad_rhs: f64,
    pub entropy: f64,
    /// Bound with `int_t^{T'} C_{s,T'}^2 ds`.
    pub entropy_bound: f64,
    /// Bound with `int_t^{T'} C_{s,T'} ds`.
    pub entropy_bound_linear: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalReport {
    pub end_time: f64,
    pub tol: f64,
    pub times: Vec<f64>,
    /// Measured curvature infimum of the drift potential on `times`.
    pub alpha_measured: Vec<f64>,
    /// `C_{t,T'}` at each of `times`.
    pub contraction: Vec<f64>,
    /// Sub-interval on which the semigroup is solved.
    pub pde_range: (f64, f64),
    pub samples: Vec<LocalSample>,
    pub worst_grad_excess: f64,
    pub worst_entropy_excess: f64,
    pub worst_entropy_excess_linear: f64,
    /// Largest `|grad P f| / (C P |grad f|)` over samples with a nonzero
    /// right side.
    pub max_grad_ratio: f64,
}

impl LocalReport {
    pub fn passed(&self) -> bool {
        self.worst_grad_excess <= self.tol && self.worst_entropy_excess <= self.tol
    }
}

/// Number of gaps in the drift time ladder.
const DRIFT_LADDER: usize = 100;
const SAMPLE_TIMES: usize = 4;
const SAMPLE_POINTS: usize = 5;

/// Checks `|grad P_{t,T'} f|(x) <= C_{t,T'} P_{t,T'}(|grad f|)(x)` and the
/// local LSI `P(f log f) - P f log P f <= (C~/2) P(|grad f|^2 / f)` at
/// `4 x 5` points `(t, x)`, `T' = T - eps`, where `P` is the semigroup of
/// `dX = -grad U_s^{T,psi}(X) ds + dB`. `C_{t,T'}` uses the measured
/// infimum of the second difference of `U_s` on the interior grid.
pub fn local_estimates_check(
    psi: &GridFunction,
    horizon: f64,
    eps: f64,
    tests: &[GridFunction],
    tol: f64,
) -> Result<LocalReport> {
    if !(eps > 0.0 && eps < horizon) {
        return domain(format!("eps must lie in (0, {horizon}), got {eps}"));
    }
    if tests.iter().any(|f| f.grid() != psi.grid() || f.values().iter().any(|v| !(*v > 0.0))) {
        return domain("test functions must be positive on the potential's grid");
    }
    let grid = *psi.grid();
    let end = horizon - eps;
    let ladder: Vec<f64> = (0..=DRIFT_LADDER).map(|k| end * k as f64 / DRIFT_LADDER as f64).collect();
    let drift = DriftFamily::from_hjb(psi, horizon, &ladder)?;
    let h = grid.spacing();
    let inner = grid.interior(grid.boundary_margin(horizon));
    if inner.len() < 3 {
        return domain("grid has no interior");
    }
    let alpha_measured: Vec<f64> = drift
        .gradients()
        .iter()
        .map(|b| {
            (inner.start + 1..inner.end - 1).map(|i| (b[i + 1] - b[i - 1]) / (2.0 * h)).fold(f64::INFINITY, f64::min)
        })
        .collect();
    // log C_{t_k,T'} by the trapezoid rule from the right end
    let mut log_c = vec![0.0; ladder.len()];
    for k in (0..ladder.len() - 1).rev() {
        let dt = ladder[k + 1] - ladder[k];
        log_c[k] = log_c[k + 1] - 0.5 * dt * (alpha_measured[k] + alpha_measured[k + 1]);
    }
    let (a, b) = resolved_range(&drift, inner.clone());
    let sub = Grid1D::new(grid.x(a), grid.x(b - 1), b - a)?;
    let restrict = |f: &GridFunction| GridFunction::new(sub, f.values()[a..b].to_vec());
    let sub_drift =
        DriftFamily::new(sub, drift.times().to_vec(), drift.gradients().iter().map(|g| g[a..b].to_vec()).collect())?;
    let contraction: Vec<f64> = log_c.iter().map(|v| v.exp()).collect();
    let tail_integral = |power: i32| -> Vec<f64> {
        let mut acc = vec![0.0; ladder.len()];
        for k in (0..ladder.len() - 1).rev() {
            let dt = ladder[k + 1] - ladder[k];
            acc[k] = acc[k + 1] + 0.5 * dt * (contraction[k].powi(power) + contraction[k + 1].powi(power));
        }
        acc
    };
    let squared = tail_integral(2);
    let linear = tail_integral(1);

    let sample_idx: Vec<usize> = (0..SAMPLE_TIMES).map(|k| k * DRIFT_LADDER / SAMPLE_TIMES).collect();
    let centre = 0.5 * (sub.lo() + sub.hi());
    let half = 0.25 * (grid.x(inner.end - 1).min(sub.hi()) - grid.x(inner.start).max(sub.lo()));
    let xs: Vec<f64> =
        (0..SAMPLE_POINTS).map(|j| centre - half + 2.0 * half * j as f64 / (SAMPLE_POINTS - 1) as f64).collect();

    let jobs: Vec<(usize, usize)> = (0..tests.len()).flat_map(|f| sample_idx.iter().map(move |&k| (f, k))).collect();
    let results = par::map_range(jobs.len(), |job| -> Result<Vec<LocalSample>> {
        let (fi, k) = jobs[job];
        let f = &restrict(&tests[fi])?;
        let t = ladder[k];
        let grad = f.gradient();
        let abs_grad = grad.map(|_, v| v.abs())?;
        let f_log_f = f.map(|_, v| v * v.ln())?;
        let fisher = GridFunction::new(sub, grad.values().iter().zip(f.values()).map(|(g, v)| g * g / v).collect())?;
        let pf = backward_semigroup_apply(f, &sub_drift, t, end, 0)?;
        let p_abs = backward_semigroup_apply(&abs_grad, &sub_drift, t, end, 0)?;
        let p_flf = backward_semigroup_apply(&f_log_f, &sub_drift, t, end, 0)?;
        let p_fisher = backward_semigroup_apply(&fisher, &sub_drift, t, end, 0)?;
        let grad_pf = pf.gradient();
        let at = |g: &GridFunction, x: f64| g.interpolate(x).unwrap_or(f64::NAN);
        Ok(xs
            .iter()
            .map(|&x| {
                let m = at(&pf, x);
                LocalSample {
                    test: fi,
                    t,
                    x,
                    grad_lhs: at(&grad_pf, x).abs(),
                    grad_rhs: contraction[k] * at(&p_abs, x),
                    entropy: at(&p_flf, x) - m * m.ln(),
                    entropy_bound: 0.5 * squared[k] * at(&p_fisher, x),
                    entropy_bound_linear: 0.5 * linear[k] * at(&p_fisher, x),
                }
            })
            .collect())
    });
    let mut samples = Vec::with_capacity(jobs.len() * xs.len());
    for r in results {
        samples.extend(r?);
    }
    let worst = |f: &dyn Fn(&LocalSample) -> f64| samples.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let worst_grad_excess = worst(&|s| s.grad_lhs - s.grad_rhs);
    let worst_entropy_excess = worst(&|s| s.entropy - s.entropy_bound);
    let worst_entropy_excess_linear = worst(&|s| s.entropy - s.entropy_bound_linear);
    let max_grad_ratio =
        samples.iter().filter(|s| s.grad_rhs > 1e-8).map(|s| s.grad_lhs / s.grad_rhs).fold(0.0, f64::max);
    Ok(LocalReport {
        end_time: end,
        tol,
        pde_range: (sub.lo(), sub.hi()),
        times: sample_idx.iter().map(|&k| ladder[k]).collect(),
        alpha_measured: sample_idx.iter().map(|&k| alpha_measured[k]).collect(),
        contraction: sample_idx.iter().map(|&k| contraction[k]).collect(),
        samples,
        worst_grad_excess,
        worst_entropy_excess,
        worst_entropy_excess_linear,
        max_grad_ratio,
    })
}

/// Largest index range around the centre of `inner` on which the drift
/// keeps the cell Peclet number `2 |b| h` at most 2 at every time.
fn resolved_range(drift: &DriftFamily, inner: std::ops::Range<usize>) -> (usize, usize) {
    let h = drift.grid().spacing();
    let n = drift.grid().len();
    let ok = |i: usize| drift.gradients().iter().all(|g| 2.0 * g[i].abs() * h <= 2.0);
    let centre = (inner.start + inner.end) / 2;
    let mut a = centre;
    while a > 0 && ok(a - 1) {
        a -= 1;
    }
    let mut b = centre + 1;
    while b < n && ok(b) {
        b += 1;
    }
    (a, b)
}

/// Smooth positive test functions used when none are supplied: a monotone
/// profile, an oscillating one, a localised bump and a constant.
pub fn default_local_tests(grid: &Grid1D) -> Result<Vec<GridFunction>> {
    Ok(vec![
        GridFunction::from_fn(*grid, |x| 1.5 + (0.7 * x).tanh())?,
        GridFunction::from_fn(*grid, |x| (0.4 * (1.3 * x).sin()).exp())?,
        GridFunction::from_fn(*grid, |x| 0.5 + (-(x - 0.5) * (x - 0.5)).exp())?,
        GridFunction::constant(*grid, 2.0)?,
    ])
}

/// Outcome of random LSI tests on a bridge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalLsiReport {
    pub constant: f64,
    pub tol: f64,
    pub n_tests: usize,
    /// `2 Ent / Dirichlet` for each test, in test order.
    pub ratios: Vec<f64>,
    /// Indices of tests that depend on `x` only.
    pub product_tests: Vec<usize>,
    pub sharpest_ratio: f64,
    pub sharpest_product_ratio: f64,
    pub failures: usize,
    pub regenerated: usize,
}

impl EmpiricalLsiReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Discrete entropy and Dirichlet form of `f` (row-major `[i * n + j]`)
/// against normalised cell masses, with forward differences.
pub fn entropy_and_dirichlet(bridge: &BridgeDensity, f: &[f64]) -> (f64, f64) {
    let n = bridge.n();
    let h = bridge.grid().spacing();
    let total = bridge.total_mass();
    let mut mean = 0.0;
    let mut flf = 0.0;
    let mut dirichlet = 0.0;
    for i in 0..n {
        for j in 0..n {
            let m = bridge.mass(i, j) / total;
            if m == 0.0 {
                continue;
            }
            let v = f[i * n + j];
            mean += m * v;
            flf += m * v * v.ln();
            let mut g2 = 0.0;
            if i + 1 < n {
                g2 += ((f[(i + 1) * n + j] - v) / h).powi(2);
            }
            if j + 1 < n {
                g2 += ((f[i * n + j + 1] - v) / h).powi(2);
            }
            dirichlet += m * g2 / v;
        }
    }
    ((flf - mean * mean.ln()).max(0.0), dirichlet)
}

const FLOOR: f64 = 1e-3;
const PRODUCT_EVERY: usize = 10;

/// Three passes of a box filter of radius `r` along rows and columns
/// approximate a Gaussian blur of standard deviation `sqrt(r (r + 1))`.
fn blur(field: &mut [f64], n: usize, r: usize) {
    let mut line = vec![0.0; n];
    let mut out = vec![0.0; n];
    for axis in 0..2 {
        for a in 0..n {
            let idx = |b: usize| if axis == 0 { a * n + b } else { b * n + a };
            for (b, v) in line.iter_mut().enumerate() {
                *v = field[idx(b)];
            }
            for _ in 0..3 {
                let mut prefix = vec![0.0; n + 1];
                for b in 0..n {
                    prefix[b + 1] = prefix[b] + line[b];
                }
                for (b, o) in out.iter_mut().enumerate() {
                    let lo = b.saturating_sub(r);
                    let hi = (b + r + 1).min(n);
                    *o = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
                }
                line.copy_from_slice(&out);
            }
            for (b, v) in line.iter().enumerate() {
                field[idx(b)] = *v;
            }
        }
    }
}

/// `max(exp(a W), 1e-3)` for a blurred white-noise field `W` of unit
/// variance; every tenth test depends on `x` only.
fn random_test(n: usize, h: f64, test: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let length: f64 = (rng.random_range(0.2f64.ln()..2.0f64.ln())).exp();
    let amplitude: f64 = rng.random_range(0.1..1.5);
    let radius = ((length / h).max(1.0)) as usize;
    let product = test % PRODUCT_EVERY == PRODUCT_EVERY - 1;
    let mut field: Vec<f64> = if product {
        let row: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        (0..n * n).map(|k| row[k / n]).collect()
    } else {
        (0..n * n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    };
    blur(&mut field, n, radius);
    let mean = field.iter().sum::<f64>() / field.len() as f64;
    let sd = (field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / field.len() as f64).sqrt();
    let scale = if sd > 0.0 { amplitude / sd } else { 0.0 };
    field.iter().map(|v| (scale * (v - mean)).exp().max(FLOOR)).collect()
}

/// Draws `n_tests` random positive test functions on the product grid and
/// checks `Ent(f) <= (constant / 2) Dirichlet(f) + tol` for each.
pub fn empirical_lsi_check(
    bridge: &BridgeDensity,
    constant: f64,
    n_tests: usize,
    seed: u64,
    tol: f64,
) -> Result<EmpiricalLsiReport> {
    if !(constant > 0.0) {
        return domain("LSI constant must be positive");
    }
    let n = bridge.n();
    let h = bridge.grid().spacing();
    let results = par::map_range(n_tests, |test| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(test as u64);
        let mut regenerated = 0;
        loop {
            let f = random_test(n, h, test, &mut rng);
            let (ent, dir) = entropy_and_dirichlet(bridge, &f);
            if dir > 1e-12 || regenerated >= 16 {
                return (ent, dir, regenerated);
            }
            regenerated += 1;
        }
    });
    let ratios: Vec<f64> = results.iter().map(|&(e, d, _)| if d > 0.0 { 2.0 * e / d } else { 0.0 }).collect();
    let failures = results.iter().filter(|&&(e, d, _)| e > 0.5 * constant * d + tol).count();
    let product_tests: Vec<usize> = (0..n_tests).filter(|t| t % PRODUCT_EVERY == PRODUCT_EVERY - 1).collect();
    Ok(EmpiricalLsiReport {
        constant,
        tol,
        n_tests,
        sharpest_ratio: ratios.iter().copied().fold(0.0, f64::max),
        sharpest_product_ratio: product_tests.iter().map(|&t| ratios[t]).fold(0.0, f64::max),
        ratios,
        product_tests,
        failures,
        regenerated: results.iter().map(|r| r.2).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::Potential;
    use crate::schrodinger::{bridge_density, sinkhorn_solve, MarginalSpec};
    use proptest::prelude::*;

    fn params(alpha: f64, l: f64, t: f64) -> LsiParams {
        LsiParams::new(alpha, l, t, 1.0).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(LsiParams::new(-1.5, 0.0, 1.0, 1.0).is_err());
        assert!(LsiParams::new(0.5, -0.1, 1.0, 1.0).is_err());
        assert!(LsiParams::new(0.5, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn profile_end_value_and_monotonicity() {
        let p = params(0.8, 0.3, 2.0);
        assert!((alpha_profile(&p, 2.0) - 0.5).abs() < 1e-15);
        let q = params(0.8, 0.0, 2.0);
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=100 {
            let v = alpha_profile(&q, 2.0 * k as f64 / 100.0);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn coefficient_examples() {
        let p = params(0.7, 0.4, 1.5);
        assert!((contraction_coefficient(&p, 1.5) - 1.0).abs() < 1e-15);
        let q = params(0.7, 0.0, 1.5);
        for &t in &[0.0, 0.4, 1.1] {
            let expected = 1.0 / (1.0 + (1.5 - t) * 0.7);
            assert!((contraction_coefficient(&q, t) - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn flat_profile_constant() {
        let p = LsiParams::new(0.0, 0.0, 1.3, 0.6).unwrap();
        let rep = lsi_constant(&p);
        assert!((rep.integral_term - 1.3).abs() < 1e-10);
        assert!((rep.constant - (1.2f64).max(1.2 + 1.3)).abs() < 1e-10);
        assert_eq!(rep.route, Route::ClosedForm);
    }

    #[test]
    fn short_horizon_limit() {
        let p = LsiParams::new(0.5, 0.2, 1e-6, 0.7).unwrap();
        let rep = lsi_constant(&p);
        assert!(rep.integral_term < 2e-6);
        assert!((rep.constant / 1.4 - 1.0).abs() < 1e-5);
    }

    #[test]
    fn negative_profile_uses_squared_form() {
        let p = LsiParams::new(0.2, 1.5, 2.0, 1.0).unwrap();
        let rep = lsi_constant(&p);
        assert!(rep.profile_min < 0.0);
        assert!(rep.squared_constant > rep.mixing_constant);
        assert_eq!(rep.constant, rep.squared_constant);
    }

    proptest! {
        #[test]
        fn closed_form_matches_quadrature(alpha in -0.45f64..3.0, l in 0.0f64..2.0, t in 0.1f64..2.0, frac in 0.0f64..1.0) {
            prop_assume!(alpha > -0.9 / t);
            let p = params(alpha, l, t);
            let s = frac * t;
            let a = contraction_coefficient(&p, s);
            let b = contraction_coefficient_quadrature(&p, s);
            prop_assert!((a - b).abs() < 1e-8 * a.max(1.0));
        }

        #[test]
        fn coefficient_splits_over_time(alpha in 0.0f64..3.0, l in 0.0f64..2.0, t in 0.1f64..2.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let p = params(alpha, l, t);
            let (t0, t1) = (a.min(b) * t, a.max(b) * t);
            let head = (-adaptive_simpson(&|s| alpha_profile(&p, s), t0, t1, 1e-12)).exp();
            let lhs = contraction_coefficient(&p, t0);
            prop_assert!((lhs - head * contraction_coefficient(&p, t1)).abs() < 1e-8 * lhs.max(1.0));
        }

        #[test]
        fn constant_dominates_marginal_branch(alpha in 0.0f64..3.0, l in 0.0f64..2.0, t in 0.1f64..2.0, c in 0.1f64..3.0) {
            let p = LsiParams::new(alpha, l, t, c).unwrap();
            let rep = lsi_constant(&p);
            prop_assert!(rep.constant >= 2.0 * c);
            if rep.profile_min >= 0.0 {
                prop_assert!(rep.mixing_constant >= rep.squared_constant - 1e-12);
            }
        }
    }

    #[test]
    fn ornstein_uhlenbeck_gradient_estimate_is_tight() {
        let gr = Grid1D::new(-8.0, 8.0, 321).unwrap();
        let psi = GridFunction::from_fn(gr, |x| 0.6 * x * x).unwrap();
        let tests = vec![GridFunction::from_fn(gr, |x| 1.5 + (0.7 * x).tanh()).unwrap()];
        let rep = local_estimates_check(&psi, 1.0, 0.1, &tests, 1e-3).unwrap();
        assert!(rep.passed(), "{} {}", rep.worst_grad_excess, rep.worst_entropy_excess);
        let min_ratio = rep
            .samples
            .iter()
            .filter(|s| s.grad_rhs > 1e-6)
            .map(|s| s.grad_lhs / s.grad_rhs)
            .fold(f64::INFINITY, f64::min);
        assert!(min_ratio > 0.98 && rep.max_grad_ratio < 1.0 + 1e-3, "{min_ratio} {}", rep.max_grad_ratio);
    }

    #[test]
    fn constant_test_function_is_trivial() {
        let gr = Grid1D::new(-6.0, 6.0, 161).unwrap();
        let psi = GridFunction::from_fn(gr, |x| 0.5 * x * x - 0.3 * x.cos()).unwrap();
        let tests = vec![GridFunction::constant(gr, 3.0).unwrap()];
        let rep = local_estimates_check(&psi, 1.0, 0.2, &tests, 1e-3).unwrap();
        for s in &rep.samples {
            assert!(s.entropy.abs() < 1e-9 && s.entropy_bound.abs() < 1e-9 && s.grad_lhs < 1e-9);
        }
    }

    #[test]
    fn entropy_of_constant_vanishes() {
        let gr = Grid1D::new(-6.0, 6.0, 64).unwrap();
        let mu = MarginalSpec::from_potential(&Potential::Gaussian { mean: 0.0, var: 1.0 }, gr).unwrap();
        let bridge = BridgeDensity::product(&mu, &mu, 1.0).unwrap();
        let (e, d) = entropy_and_dirichlet(&bridge, &vec![2.5; 64 * 64]);
        assert!(e.abs() < 1e-12 && d == 0.0);
    }

    #[test]
    fn gaussian_bridge_passes_random_tests() {
        let gr = Grid1D::new(-8.0, 8.0, 128).unwrap();
        let mu = MarginalSpec::from_potential(&Potential::Gaussian { mean: 0.0, var: 1.0 }, gr).unwrap();
        let state = sinkhorn_solve(&mu, &mu, 1.0, 1e-10, 5000).unwrap();
        let bridge = bridge_density(&state, &mu, &mu).unwrap();
        let alpha = crate::fixedpoint::alpha_psi_gaussian_closed_form(1.0, 1.0, 1.0);
        let rep = lsi_constant(&LsiParams::new(alpha, 0.0, 1.0, 1.0).unwrap());
        let emp = empirical_lsi_check(&bridge, rep.constant, 30, 5, 1e-9).unwrap();
        assert!(emp.passed(), "sharpest {}", emp.sharpest_ratio);
        assert!(emp.sharpest_ratio <= rep.constant);
        assert!(emp.sharpest_product_ratio <= 2.0 * 1.0 + 1e-9);
        let again = empirical_lsi_check(&bridge, rep.constant, 30, 5, 1e-9).unwrap();
        assert_eq!(emp, again);
    }
}
