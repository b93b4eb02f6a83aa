//! The curvature fixed point governing the potential envelopes.
//!
//! For horizon `T`, upper curvature `beta_mu` of the first marginal and a
//! weak convexity profile `(alpha_nu, L)` of the second,
//!
//! ```text
//! F(a, s) = beta_mu s + s / (T (1 + T a)) + sqrt(s) f_L(sqrt(s)) / (1 + T a)^2
//! G(a, u) = inf { s >= 0 : F(a, s) >= u }
//! ```
//!
//! and `alpha_psi` is the smallest solution of
//! `a = alpha_nu - 1/T + G(a, 2) / (2 T^2)` above `alpha_nu - 1/T`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::weakconvex::{fl, fl_over_r};

const G_REL_TOL: f64 = 1e-12;
const ALPHA_REL_TOL: f64 = 1e-12;
const MAX_ALPHA_ITERATIONS: usize = 10_000;

/// Parameters of the curvature estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    #[serde(rename = "T")]
    pub t: f64,
    pub beta_mu: f64,
    pub alpha_nu: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "C_mu", default, skip_serializing_if = "Option::is_none")]
    pub c_mu: Option<f64>,
}

impl ProblemParams {
    pub fn new(t: f64, beta_mu: f64, alpha_nu: f64, l: f64, c_mu: Option<f64>) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return domain(format!("horizon T must be positive, got {t}"));
        }
        if !(beta_mu > 0.0) || !beta_mu.is_finite() {
            return domain(format!("beta_mu must be positive, got {beta_mu}"));
        }
        if !alpha_nu.is_finite() {
            return domain("alpha_nu must be finite");
        }
        if !(l >= 0.0) || !l.is_finite() {
            return domain(format!("L must be nonnegative, got {l}"));
        }
        if let Some(c) = c_mu {
            if !(c > 0.0) || !c.is_finite() {
                return domain(format!("C_mu must be positive, got {c}"));
            }
        }
        Ok(Self { t, beta_mu, alpha_nu, l, c_mu })
    }

    fn check_alpha(&self, alpha: f64) -> Result<()> {
        if !(1.0 + self.t * alpha > 0.0) {
            return domain(format!("alpha = {alpha} must exceed -1/T = {}", -1.0 / self.t));
        }
        Ok(())
    }
}

fn f_unchecked(p: &ProblemParams, alpha: f64, s: f64) -> f64 {
    let d = 1.0 + p.t * alpha;
    let rs = s.sqrt();
    p.beta_mu * s + s / (p.t * d) + rs * fl(p.l, rs) / (d * d)
}

/// `F(alpha, s)`.
pub fn eval_f(p: &ProblemParams, alpha: f64, s: f64) -> Result<f64> {
    p.check_alpha(alpha)?;
    if !(s >= 0.0) {
        return domain(format!("F needs s >= 0, got {s}"));
    }
    Ok(f_unchecked(p, alpha, s))
}

/// `G(alpha, u)`, the inverse of the increasing map `s -> F(alpha, s)`.
pub fn eval_g(p: &ProblemParams, alpha: f64, u: f64) -> Result<f64> {
    p.check_alpha(alpha)?;
    if !(u > 0.0) || !u.is_finite() {
        return domain(format!("G needs u > 0, got {u}"));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while f_unchecked(p, alpha, hi) < u {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        if hi - lo <= G_REL_TOL * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f_unchecked(p, alpha, mid) >= u {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Smallest fixed point together with its iterate trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaSolution {
    pub alpha_psi: f64,
    pub iterates: Vec<f64>,
    pub residual: f64,
    /// Closed-form bracket; `None` when `alpha_nu <= 0`.
    pub bracket: Option<(f64, f64)>,
}

/// Right-hand side `alpha_nu - 1/T + G(alpha, 2) / (2 T^2)`.
pub fn fixed_point_map(p: &ProblemParams, alpha: f64) -> Result<f64> {
    Ok(p.alpha_nu - 1.0 / p.t + eval_g(p, alpha, 2.0)? / (2.0 * p.t * p.t))
}

/// Runs the monotone iteration from `alpha_nu - 1/T`.
pub fn solve_alpha_psi(p: &ProblemParams) -> Result<AlphaSolution> {
    solve_alpha_psi_from(p, p.alpha_nu - 1.0 / p.t)
}

/// Runs the monotone iteration from `start`, which must lie in
/// `[alpha_nu - 1/T, alpha_psi]` for the limit to be the smallest fixed point.
pub fn solve_alpha_psi_from(p: &ProblemParams, start: f64) -> Result<AlphaSolution> {
    if !(p.alpha_nu > 0.0) {
        return domain(format!(
            "the fixed point iteration starts at alpha_nu - 1/T and needs alpha_nu > 0, got {}",
            p.alpha_nu
        ));
    }
    if start < p.alpha_nu - 1.0 / p.t {
        return domain("iteration start lies below alpha_nu - 1/T");
    }
    let mut iterates = vec![start];
    let mut alpha = start;
    for _ in 0..MAX_ALPHA_ITERATIONS {
        let next = fixed_point_map(p, alpha)?;
        iterates.push(next);
        let done = (next - alpha).abs() < ALPHA_REL_TOL * alpha.abs().max(1.0);
        alpha = next;
        if done {
            let residual = (alpha - fixed_point_map(p, alpha)?).abs();
            return Ok(AlphaSolution { alpha_psi: alpha, iterates, residual, bracket: alpha_bracket(p).ok() });
        }
    }
    let trace: Vec<f64> = iterates.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    Err(Error::Convergence { iterations: MAX_ALPHA_ITERATIONS, last_error: *trace.last().unwrap_or(&f64::NAN), trace })
}

/// Closed-form lower and upper bounds on any fixed point.
pub fn alpha_bracket(p: &ProblemParams) -> Result<(f64, f64)> {
    let a = p.alpha_nu;
    if !(a > 0.0) {
        return domain(format!("the closed-form bracket divides by alpha_nu and is unavailable for alpha_nu = {a}"));
    }
    let t2b = p.t * p.t * p.beta_mu;
    let shift = p.l / (t2b * a);
    let lower = 0.5 * a - 1.0 / p.t - 0.5 * shift + 0.5 * ((a + shift).powi(2) + 4.0 * a / t2b).sqrt();
    let upper = 0.5 * a - 1.0 / p.t + 0.5 * (a * a + 4.0 * a / t2b).sqrt();
    Ok((lower, upper))
}

/// Fixed point when `L = 0`, where both bracket ends coincide.
pub fn alpha_psi_gaussian_closed_form(t: f64, beta_mu: f64, alpha_nu: f64) -> f64 {
    0.5 * alpha_nu - 1.0 / t + 0.5 * (alpha_nu * alpha_nu + 4.0 * alpha_nu / (t * t * beta_mu)).sqrt()
}

/// Lower envelope for `kappa_psi` and upper envelope for `ell_phi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialEnvelopes {
    pub params: ProblemParams,
    pub alpha_psi: f64,
}

impl PotentialEnvelopes {
    /// `alpha_psi - f_L(r)/r`.
    pub fn kappa(&self, r: f64) -> f64 {
        self.alpha_psi - fl_over_r(self.params.l, r)
    }

    /// `beta_mu - alpha_psi/(1 + T alpha_psi) + f_L(r)/(r (1 + T alpha_psi)^2)`.
    pub fn ell(&self, r: f64) -> f64 {
        let d = 1.0 + self.params.t * self.alpha_psi;
        self.params.beta_mu - self.alpha_psi / d + fl_over_r(self.params.l, r) / (d * d)
    }

    /// Constant part of [`Self::ell`].
    pub fn ell_offset(&self) -> f64 {
        self.params.beta_mu - self.alpha_psi / (1.0 + self.params.t * self.alpha_psi)
    }

    /// Weight of `f_L(r)/r` in [`Self::ell`].
    pub fn ell_weight(&self) -> f64 {
        (1.0 + self.params.t * self.alpha_psi).powi(-2)
    }

    /// Crude bound `alpha_nu - 1/T - f_L(r)/r` that seeds the iteration.
    pub fn crude_kappa(&self, r: f64) -> f64 {
        self.params.alpha_nu - 1.0 / self.params.t - fl_over_r(self.params.l, r)
    }
}

pub fn potential_envelopes(p: &ProblemParams, alpha_psi: f64) -> Result<PotentialEnvelopes> {
    p.check_alpha(alpha_psi)?;
    Ok(PotentialEnvelopes { params: *p, alpha_psi })
}
