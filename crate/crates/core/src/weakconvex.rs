//! Weak convexity profiles.
//!
//! The tanh profile `f_L(r) = 2 sqrt(L) tanh(r sqrt(L) / 2)` solves
//! `f f' + 2 f'' = 0` with `f(0) = 0`, `f'(0) = L`. A potential `U` is weakly
//! convex with profile `(alpha, L)` when its distance-indexed convexity lower
//! bound satisfies `kappa_U(r) >= alpha - f_L(r) / r` for every `r > 0`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::grid::GridFunction;

/// Beyond this argument `tanh` is 1 to double precision.
const TANH_SATURATION: f64 = 20.0;

/// `f_L(r)` with its first two derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlValue {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

fn check_args(l: f64, r: f64) -> Result<()> {
    if !(l >= 0.0) || !l.is_finite() {
        return domain(format!("f_L needs L >= 0, got {l}"));
    }
    if !(r >= 0.0) {
        return domain(format!("f_L needs r >= 0, got {r}"));
    }
    Ok(())
}

/// `tanh(u)` and `sech^2(u)` with saturation for large `u`.
fn tanh_sech2(u: f64) -> (f64, f64) {
    if u > TANH_SATURATION {
        let e = (-2.0 * u).exp();
        (1.0, 4.0 * e)
    } else {
        let c = u.cosh();
        (u.tanh(), 1.0 / (c * c))
    }
}

/// Evaluates `f_L(r)`, `f_L'(r)` and `f_L''(r)`. `f_0` is identically zero.
pub fn eval_fl(l: f64, r: f64) -> Result<FlValue> {
    check_args(l, r)?;
    if l == 0.0 {
        return Ok(FlValue { value: 0.0, first: 0.0, second: 0.0 });
    }
    if r == f64::INFINITY {
        return Ok(FlValue { value: 2.0 * l.sqrt(), first: 0.0, second: 0.0 });
    }
    let s = l.sqrt();
    let (t, sech2) = tanh_sech2(0.5 * r * s);
    Ok(FlValue { value: 2.0 * s * t, first: l * sech2, second: -l * s * t * sech2 })
}

/// `f_L(r)`; callers guarantee `L >= 0`, `r >= 0`.
pub fn fl(l: f64, r: f64) -> f64 {
    if l <= 0.0 {
        return 0.0;
    }
    let s = l.sqrt();
    let u = 0.5 * r * s;
    2.0 * s * if u > TANH_SATURATION { 1.0 } else { u.tanh() }
}

/// `f_L'(r)`.
pub fn fl_prime(l: f64, r: f64) -> f64 {
    if l <= 0.0 {
        return 0.0;
    }
    l * tanh_sech2(0.5 * r * l.sqrt()).1
}

/// `f_L(r) / r`, continuous at `r = 0` where it equals `L`.
pub fn fl_over_r(l: f64, r: f64) -> f64 {
    if l <= 0.0 {
        return 0.0;
    }
    let s = l.sqrt();
    let u = 0.5 * r * s;
    if u < 1e-4 {
        // tanh(u)/u = 1 - u^2/3 + O(u^4)
        l * (1.0 - u * u / 3.0)
    } else {
        fl(l, r) / r
    }
}

/// Envelope `r -> alpha - f_L(r) / r`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityProfile {
    pub alpha: f64,
    #[serde(rename = "L")]
    pub l: f64,
}

impl ConvexityProfile {
    pub fn new(alpha: f64, l: f64) -> Result<Self> {
        if !alpha.is_finite() {
            return domain("profile alpha must be finite");
        }
        if !(l >= 0.0) || !l.is_finite() {
            return domain(format!("profile L must be a finite nonnegative number, got {l}"));
        }
        Ok(Self { alpha, l })
    }

    pub fn lower_bound(&self, r: f64) -> f64 {
        self.alpha - fl_over_r(self.l, r)
    }
}

/// Two-level bound: `alpha` beyond radius `R`, `alpha - L'` within it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseProfile {
    pub alpha: f64,
    pub l_prime: f64,
    pub radius: f64,
}

impl PiecewiseProfile {
    pub fn new(alpha: f64, l_prime: f64, radius: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return domain(format!("piecewise profile needs alpha > 0, got {alpha}"));
        }
        if !(l_prime >= 0.0) || !l_prime.is_finite() {
            return domain(format!("piecewise profile needs L' >= 0, got {l_prime}"));
        }
        if !(radius >= 0.0) || !radius.is_finite() {
            return domain(format!("piecewise profile needs R >= 0, got {radius}"));
        }
        Ok(Self { alpha, l_prime, radius })
    }

    pub fn bound(&self, r: f64) -> f64 {
        if r > self.radius {
            self.alpha
        } else {
            self.alpha - self.l_prime
        }
    }
}

/// Smallest `L` with `f_L(R) / R >= L'`.
///
/// The returned profile `(alpha, L)` dominates the piecewise bound from
/// below: `alpha - f_L(r)/r <= p.bound(r)` for every `r > 0`.
pub fn h2prime_to_l(p: &PiecewiseProfile) -> Result<f64> {
    let p = PiecewiseProfile::new(p.alpha, p.l_prime, p.radius)?;
    // With R = 0 the dip covers no positive distance.
    if p.l_prime == 0.0 || p.radius == 0.0 {
        return Ok(0.0);
    }
    let target = p.l_prime;
    let ratio = |l: f64| fl(l, p.radius) / p.radius;
    let mut lo = 0.0;
    let mut hi = target.max(1e-300);
    let mut grow = 0;
    while ratio(hi) < target {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 2000 || !hi.is_finite() {
            return domain(format!("no finite L satisfies f_L(R)/R >= {target}"));
        }
    }
    for _ in 0..200 {
        if hi - lo <= 1e-12 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if ratio(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Distance-bucketed extrema of gradient difference quotients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseEnvelope {
    /// Smallest pair distance that falls in each bucket.
    pub distances: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl PairwiseEnvelope {
    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }
}

/// Envelope over every pair of grid points.
pub fn kappa_ell_estimate(gradient: &GridFunction, bucket_width: f64) -> Result<PairwiseEnvelope> {
    kappa_ell_estimate_on(gradient, 0..gradient.len(), bucket_width)
}

/// Envelope over pairs of grid points with indices in `range`.
///
/// In one dimension `<grad U(x) - grad U(y), x - y> / |x - y|^2` is the
/// difference quotient of the gradient, so the bucket extrema are exact over
/// the sampled pairs.
pub fn kappa_ell_estimate_on(
    gradient: &GridFunction,
    range: Range<usize>,
    bucket_width: f64,
) -> Result<PairwiseEnvelope> {
    let h = gradient.grid().spacing();
    if range.end > gradient.len() || range.len() < 2 {
        return domain("pairwise envelope needs at least 2 grid points");
    }
    if !(bucket_width >= h * (1.0 - 1e-9)) || !bucket_width.is_finite() {
        return domain(format!("bucket width {bucket_width} is smaller than the grid spacing {h}"));
    }
    let g = &gradient.values()[range.clone()];
    let m = g.len();
    let per_offset = crate::par::map_range(m - 1, |k0| {
        let k = k0 + 1;
        let d = k as f64 * h;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..m - k {
            let q = (g[i + k] - g[i]) / d;
            lo = lo.min(q);
            hi = hi.max(q);
        }
        (d, lo, hi)
    });
    let mut env = PairwiseEnvelope { distances: vec![], lower: vec![], upper: vec![] };
    let mut current: Option<usize> = None;
    for (d, lo, hi) in per_offset {
        let bucket = (d / bucket_width + 1e-9).floor() as usize;
        if current == Some(bucket) {
            let last = env.len() - 1;
            env.lower[last] = env.lower[last].min(lo);
            env.upper[last] = env.upper[last].max(hi);
        } else {
            current = Some(bucket);
            env.distances.push(d);
            env.lower.push(lo);
            env.upper.push(hi);
        }
    }
    Ok(env)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Lower,
    Upper,
}

/// Bound `offset + weight * f_L(r) / r` applied to one side of an envelope.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeBound {
    pub side: Side,
    pub offset: f64,
    pub weight: f64,
    #[serde(rename = "L")]
    pub l: f64,
}

impl EnvelopeBound {
    /// `kappa(r) >= alpha - f_L(r)/r`.
    pub fn semiconvex(profile: ConvexityProfile) -> Self {
        Self { side: Side::Lower, offset: profile.alpha, weight: -1.0, l: profile.l }
    }

    /// `ell(r) <= offset + weight * f_L(r)/r`.
    pub fn semiconcave(offset: f64, weight: f64, l: f64) -> Self {
        Self { side: Side::Upper, offset, weight, l }
    }

    pub fn value(&self, r: f64) -> f64 {
        self.offset + self.weight * fl_over_r(self.l, r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub distance: f64,
    pub measured: f64,
    pub bound: f64,
}

/// Outcome of comparing an envelope with a bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub side: Side,
    pub buckets: usize,
    /// Smallest signed slack; negative where the bound is crossed.
    pub worst_margin: f64,
    pub worst_distance: f64,
    pub tol: f64,
    pub violations: Vec<Violation>,
}

impl EnvelopeReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every bucket where the envelope crosses `bound` by more than `tol`.
pub fn certify_envelope(env: &PairwiseEnvelope, bound: &EnvelopeBound, tol: f64) -> EnvelopeReport {
    let mut report = EnvelopeReport {
        side: bound.side,
        buckets: env.len(),
        worst_margin: f64::INFINITY,
        worst_distance: f64::NAN,
        tol,
        violations: vec![],
    };
    for (k, &r) in env.distances.iter().enumerate() {
        let b = bound.value(r);
        let (measured, margin) = match bound.side {
            Side::Lower => (env.lower[k], env.lower[k] - b),
            Side::Upper => (env.upper[k], b - env.upper[k]),
        };
        if margin < report.worst_margin {
            report.worst_margin = margin;
            report.worst_distance = r;
        }
        if margin < -tol {
            report.violations.push(Violation { distance: r, measured, bound: b });
        }
    }
    report
}
