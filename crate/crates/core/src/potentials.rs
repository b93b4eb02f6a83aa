//! Closed-form marginal potentials and their curvature data.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::grid::{Grid1D, GridFunction};
use crate::weakconvex::{h2prime_to_l, ConvexityProfile, PiecewiseProfile};

/// What is known about the lower curvature of a potential.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurvatureData {
    Convex(ConvexityProfile),
    Piecewise(PiecewiseProfile),
    Unknown,
}

impl CurvatureData {
    /// Reduces to an `(alpha, L)` profile, converting a piecewise bound.
    pub fn profile(&self) -> Result<Option<ConvexityProfile>> {
        match self {
            CurvatureData::Convex(p) => Ok(Some(*p)),
            CurvatureData::Piecewise(p) => Ok(Some(ConvexityProfile::new(p.alpha, h2prime_to_l(p)?)?)),
            CurvatureData::Unknown => Ok(None),
        }
    }
}

/// Potential `U` of a probability density `exp(-U)` on the line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Potential {
    /// `(x - mean)^2 / (2 var)`.
    Gaussian { mean: f64, var: f64 },
    /// `c x^2 / 2 - a cos(omega x)`.
    QuadraticPlusCosine {
        a: f64,
        c: f64,
        omega: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
    },
    /// `height ((x / separation)^2 - 1)^2`.
    DoubleWell {
        height: f64,
        separation: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
    },
    /// Values at increasing nodes, linearly interpolated.
    Custom {
        x: Vec<f64>,
        u: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
        #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
        l: Option<f64>,
        #[serde(rename = "L_prime", default, skip_serializing_if = "Option::is_none")]
        l_prime: Option<f64>,
        #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
        radius: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta: Option<f64>,
        #[serde(rename = "C_lsi", default, skip_serializing_if = "Option::is_none")]
        c_lsi: Option<f64>,
    },
}

impl Potential {
    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                domain(format!("{what} must be finite"))
            }
        };
        match self {
            Potential::Gaussian { mean, var } => {
                finite(*mean, "gaussian mean")?;
                if !(*var > 0.0) || !var.is_finite() {
                    return domain(format!("gaussian variance must be positive, got {var}"));
                }
            }
            Potential::QuadraticPlusCosine { a, c, omega, alpha } => {
                finite(*a, "cosine amplitude")?;
                finite(*omega, "cosine frequency")?;
                if !(*c > 0.0) || !c.is_finite() {
                    return domain(format!("quadratic coefficient must be positive, got {c}"));
                }
                if let Some(al) = alpha {
                    if !(*al > 0.0 && *al < *c) {
                        return domain(format!("alpha must lie in (0, c) = (0, {c}), got {al}"));
                    }
                }
            }
            Potential::DoubleWell { height, separation, alpha } => {
                if !(*height > 0.0) || !height.is_finite() {
                    return domain(format!("double-well height must be positive, got {height}"));
                }
                if !(*separation > 0.0) || !separation.is_finite() {
                    return domain(format!("double-well separation must be positive, got {separation}"));
                }
                if let Some(al) = alpha {
                    if !(*al > 0.0) || !al.is_finite() {
                        return domain(format!("alpha must be positive, got {al}"));
                    }
                }
            }
            Potential::Custom { x, u, alpha, l, l_prime, radius, beta, c_lsi } => {
                if x.len() < 2 || x.len() != u.len() {
                    return domain("custom table needs at least two (x, u) pairs of equal length");
                }
                if x.windows(2).any(|w| !(w[1] > w[0])) {
                    return domain("custom table nodes must be strictly increasing");
                }
                if x.iter().chain(u).any(|v| !v.is_finite()) {
                    return domain("custom table contains non-finite entries");
                }
                for (name, v) in
                    [("alpha", alpha), ("L", l), ("L_prime", l_prime), ("R", radius), ("beta", beta), ("C_lsi", c_lsi)]
                {
                    if let Some(v) = v {
                        finite(*v, name)?;
                    }
                }
                if l.is_some() && (l_prime.is_some() || radius.is_some()) {
                    return domain("give either L or (L_prime, R) for a custom potential, not both");
                }
                if l_prime.is_some() != radius.is_some() {
                    return domain("L_prime and R must be given together");
                }
                if (l.is_some() || l_prime.is_some()) && alpha.is_none() {
                    return domain("custom curvature data needs alpha");
                }
            }
        }
        Ok(())
    }

    /// `U(x)`; custom tables are extended flat beyond their nodes.
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Potential::Gaussian { mean, var } => (x - mean).powi(2) / (2.0 * var),
            Potential::QuadraticPlusCosine { a, c, omega, .. } => 0.5 * c * x * x - a * (omega * x).cos(),
            Potential::DoubleWell { height, separation, .. } => {
                let q = (x / separation).powi(2) - 1.0;
                height * q * q
            }
            Potential::Custom { x: xs, u, .. } => interpolate_table(xs, u, x),
        }
    }

    /// `U'(x)` for the closed-form families; `None` for tables.
    pub fn derivative(&self, x: f64) -> Option<f64> {
        match self {
            Potential::Gaussian { mean, var } => Some((x - mean) / var),
            Potential::QuadraticPlusCosine { a, c, omega, .. } => Some(c * x + a * omega * (omega * x).sin()),
            Potential::DoubleWell { height, separation, .. } => {
                let s2 = separation * separation;
                Some(4.0 * height * x * (x * x / s2 - 1.0) / s2)
            }
            Potential::Custom { .. } => None,
        }
    }

    /// Upper bound on `U''` when one exists.
    pub fn beta_upper(&self) -> Option<f64> {
        match self {
            Potential::Gaussian { var, .. } => Some(1.0 / var),
            Potential::QuadraticPlusCosine { a, c, omega, .. } => Some(c + a.abs() * omega * omega),
            Potential::DoubleWell { .. } => None,
            Potential::Custom { beta, .. } => *beta,
        }
    }

    /// A log-Sobolev constant of `exp(-U)` when one is known.
    ///
    /// Gaussians give their variance; the cosine family uses the bounded
    /// perturbation estimate `exp(2|a|) / c`.
    pub fn lsi_constant(&self) -> Option<f64> {
        match self {
            Potential::Gaussian { var, .. } => Some(*var),
            Potential::QuadraticPlusCosine { a, c, .. } => Some((2.0 * a.abs()).exp() / c),
            Potential::DoubleWell { .. } => None,
            Potential::Custom { c_lsi, .. } => *c_lsi,
        }
    }

    /// Lower curvature data in the form used by the envelope estimates.
    pub fn curvature(&self) -> Result<CurvatureData> {
        self.validate()?;
        Ok(match self {
            Potential::Gaussian { var, .. } => CurvatureData::Convex(ConvexityProfile::new(1.0 / var, 0.0)?),
            Potential::QuadraticPlusCosine { a, c, omega, alpha } => {
                let alpha = alpha.unwrap_or(0.5 * c);
                CurvatureData::Piecewise(cosine_piecewise(*a, *c, *omega, alpha)?)
            }
            Potential::DoubleWell { height, separation, alpha } => {
                let alpha = alpha.unwrap_or(1.0);
                let s2 = separation * separation;
                let radius = (4.0 * s2 + alpha * s2 * s2 / height).sqrt();
                CurvatureData::Piecewise(PiecewiseProfile::new(alpha, alpha + 4.0 * height / s2, radius)?)
            }
            Potential::Custom { alpha, l, l_prime, radius, .. } => match (alpha, l, l_prime, radius) {
                (Some(al), Some(l), None, None) => CurvatureData::Convex(ConvexityProfile::new(*al, *l)?),
                (Some(al), None, Some(lp), Some(r)) => CurvatureData::Piecewise(PiecewiseProfile::new(*al, *lp, *r)?),
                (Some(al), None, None, None) => CurvatureData::Convex(ConvexityProfile::new(*al, 0.0)?),
                _ => CurvatureData::Unknown,
            },
        })
    }

    /// Exact pairwise convexity profile `inf_{|x-y|=r} (U'(x)-U'(y))/(x-y)`
    /// for the closed-form families.
    pub fn exact_kappa(&self, r: f64) -> Option<f64> {
        match self {
            Potential::Gaussian { var, .. } => Some(1.0 / var),
            Potential::QuadraticPlusCosine { a, c, omega, .. } => Some(c - cosine_dip(*a, *omega, r)),
            Potential::DoubleWell { height, separation, .. } => {
                Some(height / separation.powi(4) * (r * r - 4.0 * separation * separation))
            }
            Potential::Custom { .. } => None,
        }
    }

    pub fn sample(&self, grid: Grid1D) -> Result<GridFunction> {
        self.validate()?;
        GridFunction::from_fn(grid, |x| self.value(x))
    }
}

/// Largest pairwise curvature loss `2|a| omega |sin(omega r / 2)| / r` of `-a cos(omega x)`.
fn cosine_dip(a: f64, omega: f64, r: f64) -> f64 {
    if r == 0.0 {
        return a.abs() * omega * omega;
    }
    2.0 * a.abs() * omega.abs() * (0.5 * omega * r).sin().abs() / r
}

/// Piecewise bound for `c x^2/2 - a cos(omega x)` at the level `alpha`.
fn cosine_piecewise(a: f64, c: f64, omega: f64, alpha: f64) -> Result<PiecewiseProfile> {
    let dip_allowed = c - alpha;
    let l_prime = (alpha - (c - a.abs() * omega * omega)).max(0.0);
    if l_prime == 0.0 {
        return PiecewiseProfile::new(alpha, 0.0, 0.0);
    }
    // beyond r_max the dip is below the allowance whatever the phase
    let r_max = 2.0 * a.abs() * omega.abs() / dip_allowed;
    let steps = 20_000;
    let mut last_bad = 0.0;
    for k in 1..=steps {
        let r = r_max * k as f64 / steps as f64;
        if cosine_dip(a, omega, r) > dip_allowed {
            last_bad = r;
        }
    }
    let (mut lo, mut hi) = (last_bad, (last_bad + r_max / steps as f64).min(r_max));
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if cosine_dip(a, omega, mid) > dip_allowed {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    PiecewiseProfile::new(alpha, l_prime, hi)
}

fn interpolate_table(xs: &[f64], us: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return us[0];
    }
    let n = xs.len();
    if x >= xs[n - 1] {
        return us[n - 1];
    }
    let k = xs.partition_point(|&v| v <= x) - 1;
    let s = (x - xs[k]) / (xs[k + 1] - xs[k]);
    us[k] * (1.0 - s) + us[k + 1] * s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_kappa(p: &Potential, r: f64) -> f64 {
        (0..4001)
            .map(|k| {
                let x = -10.0 + 20.0 * k as f64 / 4000.0;
                (p.derivative(x + r).unwrap() - p.derivative(x).unwrap()) / r
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn exact_kappa_matches_brute_force() {
        let cases = [
            Potential::QuadraticPlusCosine { a: 1.2, c: 1.0, omega: 1.0, alpha: None },
            Potential::DoubleWell { height: 1.0, separation: 1.0, alpha: None },
        ];
        for p in &cases {
            for &r in &[0.05, 0.5, 1.3, 2.0, 4.0] {
                let exact = p.exact_kappa(r).unwrap();
                let brute = brute_kappa(p, r);
                assert!(brute >= exact - 1e-9, "{p:?} r={r}");
                assert!(brute - exact < 1e-3 * (1.0 + exact.abs()), "{p:?} r={r}: {brute} vs {exact}");
            }
        }
    }

    #[test]
    fn piecewise_data_bounds_exact_profile() {
        let cases = [
            Potential::QuadraticPlusCosine { a: 1.2, c: 1.0, omega: 1.0, alpha: None },
            Potential::QuadraticPlusCosine { a: 0.8, c: 2.0, omega: 2.0, alpha: Some(1.5) },
            Potential::DoubleWell { height: 1.0, separation: 1.0, alpha: None },
            Potential::DoubleWell { height: 0.5, separation: 1.5, alpha: Some(0.3) },
        ];
        for p in &cases {
            let CurvatureData::Piecewise(pw) = p.curvature().unwrap() else { panic!("expected piecewise data") };
            for k in 1..=3000 {
                let r = 6.0 * k as f64 / 3000.0;
                assert!(p.exact_kappa(r).unwrap() >= pw.bound(r) - 1e-9, "{p:?} r={r}");
            }
            let profile = p.curvature().unwrap().profile().unwrap().unwrap();
            for k in 1..=300 {
                let r = 6.0 * k as f64 / 300.0;
                assert!(p.exact_kappa(r).unwrap() >= profile.lower_bound(r) - 1e-9);
            }
        }
    }

    #[test]
    fn mild_cosine_is_convex() {
        let p = Potential::QuadraticPlusCosine { a: 0.2, c: 1.0, omega: 1.0, alpha: None };
        let profile = p.curvature().unwrap().profile().unwrap().unwrap();
        assert_eq!(profile.l, 0.0);
        assert_eq!(profile.alpha, 0.5);
    }

    #[test]
    fn custom_table_interpolates_and_gates_curvature() {
        let p = Potential::Custom {
            x: vec![-1.0, 0.0, 2.0],
            u: vec![1.0, 0.0, 4.0],
            alpha: None,
            l: None,
            l_prime: None,
            radius: None,
            beta: None,
            c_lsi: None,
        };
        assert_eq!(p.value(-0.5), 0.5);
        assert_eq!(p.value(1.0), 2.0);
        assert_eq!(p.value(10.0), 4.0);
        assert_eq!(p.curvature().unwrap(), CurvatureData::Unknown);
        let bad = Potential::Custom {
            x: vec![0.0, 0.0],
            u: vec![1.0, 2.0],
            alpha: None,
            l: None,
            l_prime: None,
            radius: None,
            beta: None,
            c_lsi: None,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Potential::Gaussian { mean: 0.0, var: 0.0 }.validate().is_err());
        assert!(Potential::DoubleWell { height: -1.0, separation: 1.0, alpha: None }.validate().is_err());
        assert!(Potential::QuadraticPlusCosine { a: 1.0, c: 1.0, omega: 1.0, alpha: Some(1.5) }.validate().is_err());
    }
}
