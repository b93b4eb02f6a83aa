//! Monte Carlo for diffusions `dX = -grad U_t(X) dt + dB`, their coupling by
//! reflection, and the h-transform representation of the bridge.
//!
//! Every path owns two ChaCha8 streams derived from `(seed, path index)`:
//! one for Gaussian increments and one for uniforms. Ensembles are therefore
//! bit-reproducible and independent of thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::GridFunction;
use crate::heatflow::{log_heat_apply, DriftFamily};
use crate::par;
use crate::schrodinger::MarginalSpec;
use crate::weakconvex::{fl, fl_prime};

/// Largest supported dimension.
pub const MAX_DIM: usize = 3;

pub type Point = [f64; MAX_DIM];

/// Fraction of paths allowed to leave the drift domain.
const MAX_EXCLUDED_FRACTION: f64 = 1e-3;

fn default_eps() -> f64 {
    1e-4
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default = "default_eps")]
    pub coalesce_eps: f64,
    /// Merge paths that cross within a step with the Brownian bridge
    /// crossing probability, not only on a sign change at the step end.
    #[serde(default = "default_true")]
    pub crossing_correction: bool,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, n_paths: usize, seed: u64) -> Result<Self> {
        let cfg = Self { dt, horizon, n_paths, seed, coalesce_eps: default_eps(), crossing_correction: true };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return domain(format!("time step must be positive, got {}", self.dt));
        }
        if !(self.horizon >= self.dt) || !self.horizon.is_finite() {
            return domain(format!("horizon {} must be at least one step", self.horizon));
        }
        if self.n_paths < 100 {
            return domain(format!("at least 100 paths are required, got {}", self.n_paths));
        }
        if !(self.coalesce_eps > 0.0) {
            return domain("coalescence radius must be positive");
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round().max(1.0) as usize
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        let cfg = Self { horizon, ..*self };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Gradient `grad U_t` of a time-dependent potential.
pub trait DriftField: Sync {
    fn dim(&self) -> usize;

    /// Writes `grad U_t(x)` into `out`; returns `false` outside the domain.
    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) -> bool;
}

#[derive(Clone, Copy, Debug)]
pub struct ZeroDrift {
    pub dim: usize,
}

impl DriftField for ZeroDrift {
    fn dim(&self) -> usize {
        self.dim
    }

    fn gradient(&self, _t: f64, _x: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        true
    }
}

/// `grad U(x) = diag(curvature) x`.
#[derive(Clone, Copy, Debug)]
pub struct QuadraticDrift {
    pub dim: usize,
    pub curvature: Point,
}

impl DriftField for QuadraticDrift {
    fn dim(&self) -> usize {
        self.dim
    }

    fn gradient(&self, _t: f64, x: &[f64], out: &mut [f64]) -> bool {
        for k in 0..self.dim {
            out[k] = self.curvature[k] * x[k];
        }
        true
    }
}

/// Drift given by a closure.
pub struct FnDrift<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> DriftField for FnDrift<F>
where
    F: Fn(f64, &[f64], &mut [f64]) -> bool + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        (self.f)(t, x, out)
    }
}

impl DriftField for DriftFamily {
    fn dim(&self) -> usize {
        1
    }

    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        match self.value(t, x[0]) {
            Some(v) => {
                out[0] = v;
                true
            }
            None => false,
        }
    }
}

struct PathRng {
    normals: ChaCha8Rng,
    uniforms: ChaCha8Rng,
}

impl PathRng {
    fn new(seed: u64, path: usize) -> Self {
        let mut normals = ChaCha8Rng::seed_from_u64(seed);
        normals.set_stream(2 * path as u64);
        let mut uniforms = ChaCha8Rng::seed_from_u64(seed);
        uniforms.set_stream(2 * path as u64 + 1);
        Self { normals, uniforms }
    }

    /// Brownian increment over `dt` built from `substeps` normals per axis.
    fn increment(&mut self, dim: usize, dt: f64, substeps: usize) -> Point {
        let mut db = [0.0; MAX_DIM];
        let scale = (dt / substeps as f64).sqrt();
        for _ in 0..substeps {
            for v in db.iter_mut().take(dim) {
                let z: f64 = self.normals.sample(StandardNormal);
                *v += scale * z;
            }
        }
        db
    }

    fn uniform(&mut self) -> f64 {
        self.uniforms.random::<f64>()
    }
}

/// Step indices of an evenly spaced ladder with `intervals` gaps.
fn ladder_indices(steps: usize, intervals: usize) -> Vec<usize> {
    let intervals = intervals.clamp(1, steps);
    (0..=intervals).map(|k| ((k as f64) * steps as f64 / intervals as f64).round() as usize).collect()
}

fn dot(a: &Point, b: &Point, dim: usize) -> f64 {
    (0..dim).map(|k| a[k] * b[k]).sum()
}

/// `dB - 2 e <e, dB>`, the mirror image of `dB` in the hyperplane `e^perp`.
pub fn reflect(db: &Point, e: &Point, dim: usize) -> Point {
    let c = 2.0 * dot(e, db, dim);
    let mut out = [0.0; MAX_DIM];
    for k in 0..dim {
        out[k] = db[k] - c * e[k];
    }
    out
}

/// One coupled pair recorded on the ladder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairPath {
    pub x: Vec<Point>,
    pub x_hat: Vec<Point>,
    /// `int_0^t rate(r_s) ds` up to coalescence.
    pub rate_integral: Vec<f64>,
    pub tau: Option<f64>,
    /// Sum of squared increments of `r` before coalescence.
    pub qv: f64,
    pub active_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEnsemble {
    pub dim: usize,
    pub times: Vec<f64>,
    pub paths: Vec<PairPath>,
    pub excluded: usize,
    pub total: usize,
}

impl PairEnsemble {
    /// Fraction of pairs merged by time `t`.
    pub fn coalesced_fraction(&self, t: f64) -> f64 {
        let merged = self.paths.iter().filter(|p| p.tau.is_some_and(|tau| tau <= t)).count();
        merged as f64 / self.paths.len() as f64
    }

    /// Pooled ratio of the quadratic variation of `r` to `4 t`.
    pub fn qv_ratio(&self) -> f64 {
        let qv: f64 = self.paths.iter().map(|p| p.qv).sum();
        let t: f64 = self.paths.iter().map(|p| p.active_time).sum();
        qv / (4.0 * t)
    }
}

fn check_excluded(excluded: usize, total: usize) -> Result<()> {
    if excluded as f64 > MAX_EXCLUDED_FRACTION * total as f64 {
        return Err(Error::OutOfGrid { excluded, total });
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn simulate_pair(
    drift: &dyn DriftField,
    x0: &Point,
    x0_hat: &Point,
    cfg: &SimConfig,
    path: usize,
    record: &[usize],
    rate: &(dyn Fn(f64) -> f64 + Sync),
    substeps: usize,
) -> Option<PairPath> {
    let dim = drift.dim();
    let dt = cfg.dt;
    let steps = cfg.steps();
    let mut rng = PathRng::new(cfg.seed, path);
    let (mut x, mut xh) = (*x0, *x0_hat);
    let mut tau = None;
    let mut integral = 0.0;
    let (mut qv, mut active) = (0.0, 0.0);
    let mut out = PairPath { x: vec![], x_hat: vec![], rate_integral: vec![], tau: None, qv: 0.0, active_time: 0.0 };
    let mut next_record = 0;
    let (mut gx, mut gxh) = ([0.0; MAX_DIM], [0.0; MAX_DIM]);
    let mut coupled = {
        let d: Point = std::array::from_fn(|k| x[k] - xh[k]);
        dot(&d, &d, dim).sqrt() < cfg.coalesce_eps
    };
    if coupled {
        xh = x;
        tau = Some(0.0);
    }
    for n in 0..=steps {
        if next_record < record.len() && record[next_record] == n {
            out.x.push(x);
            out.x_hat.push(xh);
            out.rate_integral.push(integral);
            next_record += 1;
        }
        if n == steps {
            break;
        }
        let t = n as f64 * dt;
        let db = rng.increment(dim, dt, substeps);
        if coupled {
            if !drift.gradient(t, &x[..dim], &mut gx[..dim]) {
                return None;
            }
            for k in 0..dim {
                x[k] += -gx[k] * dt + db[k];
            }
            xh = x;
            continue;
        }
        if !drift.gradient(t, &x[..dim], &mut gx[..dim]) || !drift.gradient(t, &xh[..dim], &mut gxh[..dim]) {
            return None;
        }
        let d: Point = std::array::from_fn(|k| x[k] - xh[k]);
        let r = dot(&d, &d, dim).sqrt();
        let e: Point = std::array::from_fn(|k| if k < dim { d[k] / r } else { 0.0 });
        integral += rate(r) * dt;
        let dbh = reflect(&db, &e, dim);
        let mut xn = x;
        let mut xhn = xh;
        for k in 0..dim {
            xn[k] += -gx[k] * dt + db[k];
            xhn[k] += -gxh[k] * dt + dbh[k];
        }
        let dn: Point = std::array::from_fn(|k| xn[k] - xhn[k]);
        let rn = dot(&dn, &dn, dim).sqrt();
        let crossed = rn < cfg.coalesce_eps
            || dot(&dn, &e, dim) <= 0.0
            || (cfg.crossing_correction && rng.uniform() < (-r * rn / (2.0 * dt)).exp());
        active += dt;
        if crossed {
            x = xn;
            xh = xn;
            coupled = true;
            tau = Some(t + dt);
        } else {
            qv += (rn - r) * (rn - r);
            x = xn;
            xh = xhn;
        }
    }
    out.tau = tau;
    out.qv = qv;
    out.active_time = active;
    Some(out)
}

/// Simulates `cfg.n_paths` reflection-coupled pairs from `(x0, x0_hat)`,
/// recording positions on a ladder of `intervals` equal gaps.
///
/// `rate` is integrated along `r_t` until coalescence.
pub fn simulate_reflection_pair(
    drift: &dyn DriftField,
    x0: &[f64],
    x0_hat: &[f64],
    cfg: &SimConfig,
    intervals: usize,
    rate: &(dyn Fn(f64) -> f64 + Sync),
) -> Result<PairEnsemble> {
    simulate_pairs_with(drift, x0, x0_hat, cfg, intervals, rate, 1)
}

#[allow(clippy::too_many_arguments)]
fn simulate_pairs_with(
    drift: &dyn DriftField,
    x0: &[f64],
    x0_hat: &[f64],
    cfg: &SimConfig,
    intervals: usize,
    rate: &(dyn Fn(f64) -> f64 + Sync),
    substeps: usize,
) -> Result<PairEnsemble> {
    cfg.validate()?;
    let dim = drift.dim();
    if !(1..=MAX_DIM).contains(&dim) || x0.len() != dim || x0_hat.len() != dim {
        return domain(format!("starting points must have the drift dimension {dim} (at most {MAX_DIM})"));
    }
    let mut a = [0.0; MAX_DIM];
    let mut b = [0.0; MAX_DIM];
    a[..dim].copy_from_slice(x0);
    b[..dim].copy_from_slice(x0_hat);
    let steps = cfg.steps();
    let record = ladder_indices(steps, intervals);
    let times = record.iter().map(|&n| n as f64 * cfg.dt).collect();
    let results = par::map_range(cfg.n_paths, |p| simulate_pair(drift, &a, &b, cfg, p, &record, rate, substeps));
    let total = results.len();
    let paths: Vec<PairPath> = results.into_iter().flatten().collect();
    let excluded = total - paths.len();
    check_excluded(excluded, total)?;
    Ok(PairEnsemble { dim, times, paths, excluded, total })
}

/// Time-indexed Monte Carlo means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticSeries {
    pub label: String,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n: Vec<usize>,
}

impl DiagnosticSeries {
    /// Series from samples indexed `[time][path]`.
    pub fn from_samples(label: &str, times: &[f64], samples: &[Vec<f64>]) -> Self {
        let mut mean = Vec::with_capacity(times.len());
        let mut stderr = Vec::with_capacity(times.len());
        let mut n = Vec::with_capacity(times.len());
        for s in samples {
            let (m, se) = mean_stderr(s);
            mean.push(m);
            stderr.push(se);
            n.push(s.len());
        }
        Self { label: label.to_string(), times: times.to_vec(), mean, stderr, n }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn mean_stderr(s: &[f64]) -> (f64, f64) {
    let n = s.len() as f64;
    let m = s.iter().sum::<f64>() / n;
    if s.len() < 2 {
        return (m, 0.0);
    }
    let var = s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Series of `grad U_t(X_t)` with its flatness verdict.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub series: DiagnosticSeries,
    /// Largest `|mean_k - mean_0| / stderr_k`.
    pub max_z: f64,
    pub band: f64,
    pub excluded: usize,
}

impl MartingaleReport {
    pub fn passed(&self) -> bool {
        self.max_z <= self.band
    }
}

fn z_score(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff.abs() < 1e-12 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

/// Time ladder `0, dt, ..., steps dt`.
fn step_times(cfg: &SimConfig) -> Vec<f64> {
    (0..=cfg.steps()).map(|n| n as f64 * cfg.dt).collect()
}

/// Endpoints of single diffusions recorded on a ladder: `[time][path]`.
struct SingleEnsemble {
    times: Vec<f64>,
    positions: Vec<Vec<f64>>,
    starts: Vec<f64>,
    excluded: usize,
}

fn simulate_single(
    drift: &DriftFamily,
    start: &(dyn Fn(&mut PathRng) -> f64 + Sync),
    cfg: &SimConfig,
    intervals: usize,
) -> Result<SingleEnsemble> {
    cfg.validate()?;
    let steps = cfg.steps();
    let record = ladder_indices(steps, intervals);
    let results = par::map_range(cfg.n_paths, |p| {
        let mut rng = PathRng::new(cfg.seed, p);
        let x0 = start(&mut rng);
        let mut x = x0;
        let mut rec = Vec::with_capacity(record.len());
        let mut next = 0;
        for n in 0..=steps {
            if next < record.len() && record[next] == n {
                rec.push(x);
                next += 1;
            }
            if n == steps {
                break;
            }
            let t = n as f64 * cfg.dt;
            let g = drift.value(t, x)?;
            let z: f64 = rng.normals.sample(StandardNormal);
            x += -g * cfg.dt + cfg.dt.sqrt() * z;
        }
        Some((x0, rec))
    });
    let total = results.len();
    let kept: Vec<(f64, Vec<f64>)> = results.into_iter().flatten().collect();
    let excluded = total - kept.len();
    check_excluded(excluded, total)?;
    let mut positions = vec![Vec::with_capacity(kept.len()); record.len()];
    let mut starts = Vec::with_capacity(kept.len());
    for (x0, rec) in kept {
        starts.push(x0);
        for (k, v) in rec.into_iter().enumerate() {
            positions[k].push(v);
        }
    }
    Ok(SingleEnsemble { times: record.iter().map(|&n| n as f64 * cfg.dt).collect(), positions, starts, excluded })
}

/// Checks that `grad U_t^{T,psi}(X_t)` has constant mean along
/// `dX = -grad U_t^{T,psi}(X) dt + dB`, `X_0 = x0`, within `band` standard
/// errors on a ladder of `intervals` gaps up to `cfg.horizon <= T`.
pub fn gradient_martingale_test(
    psi: &GridFunction,
    horizon: f64,
    x0: f64,
    cfg: &SimConfig,
    intervals: usize,
    band: f64,
) -> Result<MartingaleReport> {
    if cfg.horizon > horizon + 1e-12 {
        return domain("simulation horizon exceeds the HJB horizon");
    }
    let drift = DriftFamily::from_hjb(psi, horizon, &step_times(cfg))?;
    let ens = simulate_single(&drift, &|_| x0, cfg, intervals)?;
    let samples: Vec<Vec<f64>> = ens
        .times
        .iter()
        .zip(&ens.positions)
        .map(|(&t, xs)| xs.iter().map(|&x| drift.value(t, x).unwrap_or(f64::NAN)).collect())
        .collect();
    let series = DiagnosticSeries::from_samples("grad_U_t(X_t)", &ens.times, &samples);
    let max_z =
        (0..series.len()).map(|k| z_score(series.mean[k] - series.mean[0], series.stderr[k]).abs()).fold(0.0, f64::max);
    Ok(MartingaleReport { series, max_z, band, excluded: ens.excluded })
}

/// Mean of `Gamma_t` along reflection-coupled characteristics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GammaReport {
    pub series: DiagnosticSeries,
    pub gamma0: f64,
    /// Largest `(mean_{k+1} - mean_k) / stderr_{k+1}`.
    pub max_increase_z: f64,
    /// Largest increase in units of the standard error of the paired
    /// increment, reported for inspection only.
    pub max_paired_z: f64,
    pub band: f64,
    pub coalesced_fraction: f64,
    pub excluded: usize,
}

impl GammaReport {
    pub fn passed(&self) -> bool {
        self.gamma0 >= 0.0 && self.max_increase_z <= self.band
    }
}

fn gamma_samples(ens: &PairEnsemble, drift: &DriftFamily, l: f64) -> Vec<Vec<f64>> {
    let mut samples = vec![Vec::with_capacity(ens.paths.len()); ens.times.len()];
    for p in &ens.paths {
        for (k, &t) in ens.times.iter().enumerate() {
            let merged = p.tau.is_some_and(|tau| tau <= t);
            let value = if merged {
                0.0
            } else {
                let (x, xh) = (p.x[k][0], p.x_hat[k][0]);
                let r = (x - xh).abs();
                let e = (x - xh).signum();
                let gap = match (drift.value(t, x), drift.value(t, xh)) {
                    (Some(a), Some(b)) => (a - b) * e,
                    _ => f64::NAN,
                };
                p.rate_integral[k].exp() * (gap + fl(l, r))
            };
            samples[k].push(value);
        }
    }
    samples
}

#[allow(clippy::too_many_arguments)]
fn gamma_ensemble(
    g: &GridFunction,
    l: f64,
    horizon: f64,
    x0: f64,
    x0_hat: f64,
    cfg: &SimConfig,
    intervals: usize,
    substeps: usize,
) -> Result<(PairEnsemble, DriftFamily)> {
    if cfg.horizon > horizon + 1e-12 {
        return domain("simulation horizon exceeds the HJB horizon");
    }
    let drift = DriftFamily::from_hjb(g, horizon, &step_times(cfg))?;
    let rate = move |r: f64| fl_prime(l, r);
    let ens = simulate_pairs_with(&drift, &[x0], &[x0_hat], cfg, intervals, &rate, substeps)?;
    Ok((ens, drift))
}

/// `Gamma_t = exp(int_0^t f_L'(r_s) ds) (<grad U_t(X) - grad U_t(X_hat), e_t> + f_L(r_t))`
/// along reflection-coupled HJB characteristics; zero after coalescence.
#[allow(clippy::too_many_arguments)]
pub fn gamma_supermartingale_test(
    g: &GridFunction,
    l: f64,
    horizon: f64,
    x0: f64,
    x0_hat: f64,
    cfg: &SimConfig,
    intervals: usize,
    band: f64,
) -> Result<GammaReport> {
    let (ens, drift) = gamma_ensemble(g, l, horizon, x0, x0_hat, cfg, intervals, 1)?;
    let samples = gamma_samples(&ens, &drift, l);
    let series = DiagnosticSeries::from_samples("Gamma_t", &ens.times, &samples);
    let mut max_increase_z = f64::NEG_INFINITY;
    let mut max_paired_z = f64::NEG_INFINITY;
    for k in 0..series.len() - 1 {
        let inc = series.mean[k + 1] - series.mean[k];
        max_increase_z = max_increase_z.max(z_score(inc, series.stderr[k + 1]));
        let diffs: Vec<f64> = samples[k + 1].iter().zip(&samples[k]).map(|(a, b)| a - b).collect();
        let (_, se) = mean_stderr(&diffs);
        max_paired_z = max_paired_z.max(z_score(inc, se));
    }
    Ok(GammaReport {
        gamma0: series.mean[0],
        series,
        max_increase_z,
        max_paired_z,
        band,
        coalesced_fraction: ens.coalesced_fraction(cfg.horizon),
        excluded: ens.excluded,
    })
}

/// Terminal mean of `Gamma` at step `dt` and `dt/2` driven by the same
/// Brownian path.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HalvingReport {
    pub coarse_mean: f64,
    pub fine_mean: f64,
    pub stderr: f64,
}

impl HalvingReport {
    pub fn passed(&self) -> bool {
        (self.coarse_mean - self.fine_mean).abs() < self.stderr
    }
}

pub fn gamma_dt_halving(
    g: &GridFunction,
    l: f64,
    horizon: f64,
    x0: f64,
    x0_hat: f64,
    cfg: &SimConfig,
) -> Result<HalvingReport> {
    let terminal = |cfg: &SimConfig, substeps: usize| -> Result<(f64, f64)> {
        let (ens, drift) = gamma_ensemble(g, l, horizon, x0, x0_hat, cfg, 1, substeps)?;
        let samples = gamma_samples(&ens, &drift, l);
        Ok(mean_stderr(samples.last().expect("ladder has an end point")))
    };
    let (coarse_mean, coarse_se) = terminal(cfg, 2)?;
    let fine = SimConfig { dt: 0.5 * cfg.dt, ..*cfg };
    let (fine_mean, fine_se) = terminal(&fine, 1)?;
    Ok(HalvingReport { coarse_mean, fine_mean, stderr: coarse_se.max(fine_se) })
}

/// Statistics of one-step increments of the direction `e_t`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DirectionReport {
    pub dt: f64,
    pub samples: usize,
    /// Mean of `<e_{t+dt} - e_t, e_t>` and its standard error.
    pub mean_inner: f64,
    pub stderr_inner: f64,
    /// Largest `|<e_{t+dt} - e_t, e_t>| / dt`.
    pub max_normalised_inner: f64,
    /// Mean of `|de - de_pred| / dt` where
    /// `de_pred = -dt r^{-1} proj_{e^perp}(grad U(X) - grad U(X_hat))`.
    pub mean_prediction_error: f64,
}

/// One Euler step of many coupled pairs started at `x0, x0_hat`, comparing
/// the change of `e` with its first-order prediction.
pub fn direction_increment_check(
    drift: &dyn DriftField,
    x0: &[f64],
    x0_hat: &[f64],
    dt: f64,
    n: usize,
    seed: u64,
) -> Result<DirectionReport> {
    let dim = drift.dim();
    if !(1..=MAX_DIM).contains(&dim) || x0.len() != dim || x0_hat.len() != dim {
        return domain("starting points must match the drift dimension");
    }
    let mut a = [0.0; MAX_DIM];
    let mut b = [0.0; MAX_DIM];
    a[..dim].copy_from_slice(x0);
    b[..dim].copy_from_slice(x0_hat);
    let (mut ga, mut gb) = ([0.0; MAX_DIM], [0.0; MAX_DIM]);
    if !drift.gradient(0.0, &a[..dim], &mut ga[..dim]) || !drift.gradient(0.0, &b[..dim], &mut gb[..dim]) {
        return domain("starting points lie outside the drift domain");
    }
    let d: Point = std::array::from_fn(|k| a[k] - b[k]);
    let r = dot(&d, &d, dim).sqrt();
    if r == 0.0 {
        return domain("starting points coincide");
    }
    let e: Point = std::array::from_fn(|k| d[k] / r);
    let gap: Point = std::array::from_fn(|k| ga[k] - gb[k]);
    let along = dot(&gap, &e, dim);
    let pred: Point = std::array::from_fn(|k| -dt / r * (gap[k] - along * e[k]));
    let results = par::map_range(n, |p| {
        let mut rng = PathRng::new(seed, p);
        let db = rng.increment(dim, dt, 1);
        let dbh = reflect(&db, &e, dim);
        let dn: Point = std::array::from_fn(|k| d[k] - gap[k] * dt + db[k] - dbh[k]);
        let rn = dot(&dn, &dn, dim).sqrt();
        let de: Point = std::array::from_fn(|k| dn[k] / rn - e[k]);
        let inner = dot(&de, &e, dim);
        let err = (0..dim).map(|k| (de[k] - pred[k]).powi(2)).sum::<f64>().sqrt() / dt;
        (inner, err)
    });
    let inners: Vec<f64> = results.iter().map(|v| v.0).collect();
    let (mean_inner, stderr_inner) = mean_stderr(&inners);
    Ok(DirectionReport {
        dt,
        samples: n,
        mean_inner,
        stderr_inner,
        max_normalised_inner: inners.iter().map(|v| v.abs() / dt).fold(0.0, f64::max),
        mean_prediction_error: results.iter().map(|v| v.1).sum::<f64>() / n as f64,
    })
}

/// Comparison of simulated `(X_0, X_{T-eps})` with the bridge marginal.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HTransformReport {
    pub eps: f64,
    pub bins: usize,
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    /// Bin frequencies, row-major in `(x, y)`.
    pub empirical: Vec<f64>,
    pub analytic: Vec<f64>,
    pub overflow_empirical: f64,
    pub overflow_analytic: f64,
    pub tv: f64,
    pub n_paths: usize,
    pub excluded: usize,
}

/// Inverse CDF sampler for a density that is linear between grid points.
struct GridSampler {
    xs: Vec<f64>,
    p: Vec<f64>,
    cdf: Vec<f64>,
}

impl GridSampler {
    fn new(density: &GridFunction) -> Self {
        let xs = density.grid().points();
        let p = density.values().to_vec();
        let h = density.grid().spacing();
        let mut cdf = vec![0.0; xs.len()];
        for i in 1..xs.len() {
            cdf[i] = cdf[i - 1] + 0.5 * h * (p[i - 1] + p[i]);
        }
        Self { xs, p, cdf }
    }

    fn quantile(&self, u: f64) -> f64 {
        let total = *self.cdf.last().expect("grid is nonempty");
        let target = u * total;
        let i = self.cdf.partition_point(|&c| c <= target).clamp(1, self.cdf.len() - 1) - 1;
        let h = self.xs[i + 1] - self.xs[i];
        let rest = target - self.cdf[i];
        let (p0, p1) = (self.p[i], self.p[i + 1]);
        let slope = (p1 - p0) / h;
        // solve p0 s + slope s^2 / 2 = rest for the offset s in [0, h]
        let s = if slope.abs() < 1e-14 * p0.max(1e-300) {
            if p0 > 0.0 {
                rest / p0
            } else {
                0.5 * h
            }
        } else {
            let disc = (p0 * p0 + 2.0 * slope * rest).max(0.0);
            2.0 * rest / (p0 + disc.sqrt()).max(1e-300)
        };
        self.xs[i] + s.clamp(0.0, h)
    }
}

/// Equal-width edges covering the `[q, 1 - q]` quantile range of a grid
/// density.
fn quantile_edges(density: &GridFunction, q: f64, bins: usize) -> Vec<f64> {
    let s = GridSampler::new(density);
    let (lo, hi) = (s.quantile(q), s.quantile(1.0 - q));
    (0..=bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect()
}

fn bin_of(edges: &[f64], v: f64) -> Option<usize> {
    let bins = edges.len() - 1;
    if !(v >= edges[0] && v < edges[bins]) {
        return None;
    }
    let k = ((v - edges[0]) / (edges[bins] - edges[0]) * bins as f64) as usize;
    Some(k.min(bins - 1))
}

/// Tail probability that sets the histogram box.
const BOX_TAIL: f64 = 1e-6;
const SUB_SAMPLES: usize = 6;

/// Draws `X_0 ~ mu`, integrates `dX = -grad U_t^{T,psi}(X) dt + dB` up to
/// `T - eps` and compares the joint law of `(X_0, X_{T-eps})` with
/// `exp(-phi(x) - U_{T-eps}(y) - (y-x)^2 / (2(T-eps)))` on a `bins x bins`
/// histogram plus one overflow cell.
pub fn htransform_sample(
    mu: &MarginalSpec,
    psi: &GridFunction,
    horizon: f64,
    eps: f64,
    cfg: &SimConfig,
    bins: usize,
) -> Result<HTransformReport> {
    if !(eps > 0.0 && eps < horizon) {
        return domain(format!("eps must lie in (0, {horizon}), got {eps}"));
    }
    if psi.grid() != mu.grid() {
        return domain("potential and marginal live on different grids");
    }
    if bins == 0 {
        return domain("need at least one bin");
    }
    let grid = *psi.grid();
    let span = horizon - eps;
    let cfg = cfg.with_horizon(span)?;
    let phi = GridFunction::new(
        grid,
        mu.potential.values().iter().zip(log_heat_apply(psi, horizon)?.values()).map(|(u, h)| u - h).collect(),
    )?;
    let end_potential = log_heat_apply(psi, eps)?;

    // analytic joint density on the grid and its y marginal
    let xs = grid.points();
    let w = grid.trapezoid_weights();
    let n = grid.len();
    let log_joint = |x: f64, fx: f64, y: f64, vy: f64| -fx - vy - (y - x) * (y - x) / (2.0 * span);
    let rows = par::map_range(n, |i| {
        (0..n).map(|j| log_joint(xs[i], phi.values()[i], xs[j], end_potential.values()[j]).exp()).collect::<Vec<f64>>()
    });
    let mut z = 0.0;
    let mut y_marginal = vec![0.0; n];
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            z += w[i] * w[j] * v;
            y_marginal[j] += w[i] * v;
        }
    }
    if !(z > 0.0) || !z.is_finite() {
        return domain("analytic bridge density has no mass on the grid");
    }
    let y_density = GridFunction::new(grid, y_marginal.iter().map(|v| v / z).collect())?;
    let x_edges = quantile_edges(&mu.density, BOX_TAIL, bins);
    let y_edges = quantile_edges(&y_density, BOX_TAIL, bins);

    let (bx, by) = (x_edges[1] - x_edges[0], y_edges[1] - y_edges[0]);
    let cell = bx * by / (SUB_SAMPLES * SUB_SAMPLES) as f64;
    let analytic: Vec<f64> = par::map_range(bins * bins, |idx| {
        let (a, b) = (idx / bins, idx % bins);
        let mut acc = 0.0;
        for sa in 0..SUB_SAMPLES {
            let x = x_edges[a] + (sa as f64 + 0.5) * bx / SUB_SAMPLES as f64;
            let fx = phi.interpolate(x).unwrap_or(f64::INFINITY);
            for sb in 0..SUB_SAMPLES {
                let y = y_edges[b] + (sb as f64 + 0.5) * by / SUB_SAMPLES as f64;
                let vy = end_potential.interpolate(y).unwrap_or(f64::INFINITY);
                acc += log_joint(x, fx, y, vy).exp();
            }
        }
        acc * cell / z
    });
    let overflow_analytic = (1.0 - analytic.iter().sum::<f64>()).max(0.0);

    let drift = DriftFamily::from_hjb(psi, horizon, &step_times(&cfg))?;
    let sampler = GridSampler::new(&mu.density);
    let ens = simulate_single(&drift, &|rng: &mut PathRng| sampler.quantile(rng.uniform()), &cfg, 1)?;
    let ends = ens.positions.last().expect("ladder has an end point");
    let m = ends.len() as f64;
    let mut empirical = vec![0.0; bins * bins];
    let mut overflow = 0.0;
    for (x0, y) in ens.starts.iter().zip(ends) {
        match (bin_of(&x_edges, *x0), bin_of(&y_edges, *y)) {
            (Some(a), Some(b)) => empirical[a * bins + b] += 1.0 / m,
            _ => overflow += 1.0 / m,
        }
    }
    let tv = 0.5
        * (empirical.iter().zip(&analytic).map(|(p, q)| (p - q).abs()).sum::<f64>()
            + (overflow - overflow_analytic).abs());
    Ok(HTransformReport {
        eps,
        bins,
        x_edges,
        y_edges,
        empirical,
        analytic,
        overflow_empirical: overflow,
        overflow_analytic,
        tv,
        n_paths: ends.len(),
        excluded: ens.excluded,
    })
}
