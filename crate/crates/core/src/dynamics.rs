//! Trajectories of `x' = g(x)`, Lyapunov descent checks, additive-noise
//! Euler-Maruyama ensembles and the small-noise potential estimate
//! `V = -eps ln P_stat`.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::DynamicsError;
use crate::field::{default_step, VectorField};
use crate::forms::{potential, OneForm};
use crate::gradientize::transform_field;
use crate::quadrature::QuadratureRule;

/// Recorded states of one integration run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Integration step (not the recording interval).
    pub dt: f64,
    /// Set when a non-finite state stopped the run early; `states` then ends
    /// at the last finite state.
    pub aborted: bool,
}

impl Trajectory {
    fn start(x0: &DVector<f64>, dt: f64, capacity: usize) -> Self {
        let mut times = Vec::with_capacity(capacity);
        let mut states = Vec::with_capacity(capacity);
        times.push(0.0);
        states.push(x0.clone());
        Self {
            times,
            states,
            dt,
            aborted: false,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory holds at least the initial state")
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, DVector::len)
    }

    /// CSV with header `t,x_1,...,x_N`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DynamicsError> {
        let mut w = csv::Writer::from_writer(writer);
        let export = |e: csv::Error| DynamicsError::Export(e.to_string());
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("x_{i}")));
        w.write_record(&header).map_err(export)?;
        for (t, x) in self.times.iter().zip(&self.states) {
            let mut row = vec![format!("{t:e}")];
            row.extend(x.iter().map(|v| format!("{v:e}")));
            w.write_record(&row).map_err(export)?;
        }
        w.flush().map_err(|e| DynamicsError::Export(e.to_string()))
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), DynamicsError> {
        let file = File::create(path).map_err(|e| DynamicsError::Export(e.to_string()))?;
        self.write_csv(file)
    }
}

fn check_step(dt: f64, steps: usize) -> Result<(), DynamicsError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DynamicsError::InvalidStep(dt));
    }
    if steps == 0 {
        return Err(DynamicsError::NoSteps);
    }
    Ok(())
}

fn check_dim(field: &VectorField, x0: &DVector<f64>) -> Result<(), DynamicsError> {
    if x0.len() != field.dim() {
        return Err(crate::error::FieldError::DimensionMismatch {
            expected: field.dim(),
            got: x0.len(),
        }
        .into());
    }
    Ok(())
}

fn finite(x: &DVector<f64>) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Classical fourth-order Runge-Kutta, recording every step.
pub fn integrate_rk4(
    field: &VectorField,
    x0: &DVector<f64>,
    dt: f64,
    steps: usize,
) -> Result<Trajectory, DynamicsError> {
    integrate_rk4_every(field, x0, dt, steps, 1)
}

/// Runge-Kutta 4 recording every `record_every`-th state.
pub fn integrate_rk4_every(
    field: &VectorField,
    x0: &DVector<f64>,
    dt: f64,
    steps: usize,
    record_every: usize,
) -> Result<Trajectory, DynamicsError> {
    check_step(dt, steps)?;
    check_dim(field, x0)?;
    let every = record_every.max(1);
    let mut traj = Trajectory::start(x0, dt, steps / every + 1);
    let mut x = x0.clone();
    for k in 1..=steps {
        let k1 = field.eval_unchecked(&x);
        let k2 = field.eval_unchecked(&(&x + &k1 * (0.5 * dt)));
        let k3 = field.eval_unchecked(&(&x + &k2 * (0.5 * dt)));
        let k4 = field.eval_unchecked(&(&x + &k3 * dt));
        let incr = (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        x += incr;
        if !finite(&x) {
            traj.aborted = true;
            break;
        }
        if k % every == 0 {
            traj.times.push(k as f64 * dt);
            traj.states.push(x.clone());
        }
    }
    Ok(traj)
}

/// Explicit Euler, recording every step.
pub fn forward_euler(
    field: &VectorField,
    x0: &DVector<f64>,
    dt: f64,
    steps: usize,
) -> Result<Trajectory, DynamicsError> {
    euler_maruyama_with(field, x0, &SdeConfig::new(0.0, dt, steps), 0)
}

/// Settings of an Euler-Maruyama run with additive noise
/// `<z_i(t) z_j(t')> = 2 eps delta_ij delta(t - t')`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdeConfig {
    pub eps: f64,
    pub dt: f64,
    pub steps: usize,
    pub record_every: usize,
}

impl SdeConfig {
    pub fn new(eps: f64, dt: f64, steps: usize) -> Self {
        Self {
            eps,
            dt,
            steps,
            record_every: 1,
        }
    }

    pub fn with_record_every(mut self, every: usize) -> Self {
        self.record_every = every.max(1);
        self
    }
}

/// `x_{k+1} = x_k + dt g(x_k) + sqrt(2 eps dt) N(0, I)`. With `eps = 0` no
/// random numbers are drawn and the result is forward Euler bit for bit.
pub fn euler_maruyama(
    field: &VectorField,
    eps: f64,
    x0: &DVector<f64>,
    dt: f64,
    steps: usize,
    seed: u64,
) -> Result<Trajectory, DynamicsError> {
    euler_maruyama_with(field, x0, &SdeConfig::new(eps, dt, steps), seed)
}

pub fn euler_maruyama_with(
    field: &VectorField,
    x0: &DVector<f64>,
    cfg: &SdeConfig,
    seed: u64,
) -> Result<Trajectory, DynamicsError> {
    check_step(cfg.dt, cfg.steps)?;
    check_dim(field, x0)?;
    if !(cfg.eps >= 0.0 && cfg.eps.is_finite()) {
        return Err(DynamicsError::InvalidNoise(cfg.eps));
    }
    let every = cfg.record_every.max(1);
    let dt = cfg.dt;
    let sigma = (2.0 * cfg.eps * dt).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traj = Trajectory::start(x0, dt, cfg.steps / every + 1);
    let mut x = x0.clone();
    for k in 1..=cfg.steps {
        let g = field.eval_unchecked(&x);
        x.axpy(dt, &g, 1.0);
        if cfg.eps > 0.0 {
            for v in x.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += sigma * z;
            }
        }
        if !finite(&x) {
            traj.aborted = true;
            break;
        }
        if k % every == 0 {
            traj.times.push(k as f64 * dt);
            traj.states.push(x.clone());
        }
    }
    Ok(traj)
}

/// Seed of trajectory `index` in an ensemble with `master` seed
/// (SplitMix64 finalizer of the pair).
pub fn trajectory_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    pub trajectories: Vec<Trajectory>,
    pub seeds: Vec<u64>,
    pub noise_eps: f64,
}

impl TrajectoryEnsemble {
    pub fn any_aborted(&self) -> bool {
        self.trajectories.iter().any(|t| t.aborted)
    }

    /// Writes `traj_0000.csv`, `traj_0001.csv`, ... into `dir`.
    pub fn export_csv(&self, dir: &Path) -> Result<Vec<PathBuf>, DynamicsError> {
        std::fs::create_dir_all(dir).map_err(|e| DynamicsError::Export(e.to_string()))?;
        self.trajectories
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let path = dir.join(format!("traj_{i:04}.csv"));
                t.save_csv(&path).map(|_| path)
            })
            .collect()
    }
}

/// One Euler-Maruyama trajectory per initial state, run in parallel.
/// Results depend only on `(master_seed, index)`, not on scheduling.
pub fn ensemble(
    field: &VectorField,
    initial: &[DVector<f64>],
    cfg: &SdeConfig,
    master_seed: u64,
) -> Result<TrajectoryEnsemble, DynamicsError> {
    let seeds: Vec<u64> = (0..initial.len() as u64)
        .map(|i| trajectory_seed(master_seed, i))
        .collect();
    let trajectories = initial
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(x0, &seed)| euler_maruyama_with(field, x0, cfg, seed))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TrajectoryEnsemble {
        trajectories,
        seeds,
        noise_eps: cfg.eps,
    })
}

/// Descent along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovReport {
    /// `max_k V(x_{k+1}) - V(x_k)`.
    pub max_increase: f64,
    /// `max_increase <= threshold`.
    pub monotone: bool,
    /// `tol * dt^2 * max(1, max|V|)`.
    pub threshold: f64,
    /// Largest `grad V . g` along the trajectory (central differences).
    pub max_rate: f64,
    pub samples: usize,
}

pub const DEFAULT_LYAPUNOV_TOL: f64 = 1e-6;

/// Checks that `v` does not increase along `traj`.
pub fn lyapunov_check(
    v: &dyn Fn(&DVector<f64>) -> f64,
    field: &VectorField,
    traj: &Trajectory,
    tol: f64,
) -> Result<LyapunovReport, DynamicsError> {
    let values: Vec<f64> = traj.states.iter().map(v).collect();
    let mut max_increase = f64::NEG_INFINITY;
    for w in values.windows(2) {
        max_increase = max_increase.max(w[1] - w[0]);
    }
    if values.len() < 2 {
        max_increase = 0.0;
    }
    let vmax = values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let threshold = tol * traj.dt * traj.dt * vmax.max(1.0);
    let mut max_rate = f64::NEG_INFINITY;
    for x in &traj.states {
        let g = field.eval(x)?;
        max_rate = max_rate.max(fd_gradient(v, x).dot(&g));
    }
    Ok(LyapunovReport {
        max_increase,
        monotone: max_increase <= threshold,
        threshold,
        max_rate,
        samples: values.len(),
    })
}

fn fd_gradient(v: &dyn Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
    let mut probe = x.clone();
    DVector::from_fn(x.len(), |i, _| {
        let h = default_step(x[i]);
        probe[i] = x[i] + h;
        let plus = v(&probe);
        probe[i] = x[i] - h;
        let minus = v(&probe);
        probe[i] = x[i];
        (plus - minus) / (2.0 * h)
    })
}

/// `(g(x) + S grad V(x)) . grad V(x)`; zero when `g = -S grad V + w` with
/// `w` orthogonal to `grad V`.
pub fn orthogonality_residual(
    field: &VectorField,
    v: &dyn Fn(&DVector<f64>) -> f64,
    s: &DMatrix<f64>,
    x: &DVector<f64>,
) -> Result<f64, DynamicsError> {
    let g = field.eval(x)?;
    let grad = fd_gradient(v, x);
    Ok((g + s * &grad).dot(&grad))
}

/// `-k(w)(x)`: the negated homotopy potential of the field's one-form.
/// Non-increasing along the flow when the form is closed. Evaluates to NaN
/// outside the domain.
pub fn homotopy_lyapunov(field: &VectorField, quad: QuadratureRule) -> impl Fn(&DVector<f64>) -> f64 {
    let form = OneForm::new(field.clone());
    move |x| potential(&form, x, &quad).map_or(f64::NAN, |p| -p)
}

/// `-k(F)(D y)` with `F(x) = D g(D^-1 x)`, as a function of the original
/// coordinates `y`.
pub fn transformed_lyapunov(
    field: &VectorField,
    d: &DMatrix<f64>,
    quad: QuadratureRule,
) -> Result<impl Fn(&DVector<f64>) -> f64, crate::error::GradientizeError> {
    let form = OneForm::new(transform_field(field, d)?);
    let d = d.clone();
    Ok(move |y: &DVector<f64>| potential(&form, &(&d * y), &quad).map_or(f64::NAN, |p| -p))
}

/// One histogram axis: `bins` equal cells covering `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self, DynamicsError> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi && bins > 0) {
            return Err(DynamicsError::BadAxis { lo, hi, bins });
        }
        Ok(Self { lo, hi, bins })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    pub fn center(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.width()
    }

    fn index(&self, v: f64) -> Option<usize> {
        if !(v >= self.lo && v < self.hi) {
            return None;
        }
        Some((((v - self.lo) / self.width()) as usize).min(self.bins - 1))
    }
}

/// Histogram of post-burn-in states on a rectangular grid; the last axis
/// varies fastest in `counts`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityGrid {
    pub axes: Vec<Axis>,
    pub counts: Vec<u64>,
    /// Samples that fell inside the grid (`counts` sums to this).
    pub total: u64,
    /// Samples outside the grid.
    pub dropped: u64,
}

fn flat_index(axes: &[Axis], x: &DVector<f64>) -> Option<usize> {
    let mut idx = 0;
    for (a, v) in axes.iter().zip(x.iter()) {
        idx = idx * a.bins + a.index(*v)?;
    }
    Some(idx)
}

fn unflatten(axes: &[Axis], mut idx: usize) -> Vec<usize> {
    let mut out = vec![0; axes.len()];
    for (k, a) in axes.iter().enumerate().rev() {
        out[k] = idx % a.bins;
        idx /= a.bins;
    }
    out
}

impl DensityGrid {
    pub fn cell_count(&self) -> usize {
        self.counts.len()
    }

    pub fn cell_center(&self, idx: usize) -> Vec<f64> {
        unflatten(&self.axes, idx)
            .into_iter()
            .zip(&self.axes)
            .map(|(k, a)| a.center(k))
            .collect()
    }

    pub fn occupied_cells(&self) -> usize {
        self.counts.iter().filter(|c| **c > 0).count()
    }
}

/// Histogram of every trajectory's states after discarding the first
/// `burn_in` recorded states (default: the first 20% of each trajectory).
pub fn stationary_density(
    ens: &TrajectoryEnsemble,
    axes: &[Axis],
    burn_in: Option<usize>,
) -> Result<DensityGrid, DynamicsError> {
    for a in axes {
        Axis::new(a.lo, a.hi, a.bins)?;
    }
    let cells: usize = axes.iter().map(|a| a.bins).product();
    let partials: Vec<(Vec<u64>, u64, u64)> = ens
        .trajectories
        .par_iter()
        .map(|t| -> Result<_, DynamicsError> {
            if t.dim() != axes.len() {
                return Err(DynamicsError::GridMismatch { dim: t.dim() });
            }
            let skip = burn_in.unwrap_or(t.len() / 5);
            let mut counts = vec![0u64; cells];
            let (mut inside, mut outside) = (0u64, 0u64);
            for x in t.states.iter().skip(skip) {
                match flat_index(axes, x) {
                    Some(i) => {
                        counts[i] += 1;
                        inside += 1;
                    }
                    None => outside += 1,
                }
            }
            Ok((counts, inside, outside))
        })
        .collect::<Result<_, _>>()?;
    let mut counts = vec![0u64; cells];
    let (mut total, mut dropped) = (0u64, 0u64);
    for (c, i, o) in partials {
        for (acc, v) in counts.iter_mut().zip(c) {
            *acc += v;
        }
        total += i;
        dropped += o;
    }
    if total + dropped == 0 {
        return Err(DynamicsError::EmptyAfterBurnIn);
    }
    Ok(DensityGrid {
        axes: axes.to_vec(),
        counts,
        total,
        dropped,
    })
}

/// `-eps ln(freq)` per cell, shifted so the smallest value is 0; empty
/// cells are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrahamEstimate {
    pub axes: Vec<Axis>,
    pub eps: f64,
    pub values: Vec<Option<f64>>,
}

pub fn graham_estimate(density: &DensityGrid, eps: f64) -> Result<GrahamEstimate, DynamicsError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(DynamicsError::InvalidNoise(eps));
    }
    if density.total == 0 {
        return Err(DynamicsError::EmptyGrid);
    }
    let total = density.total as f64;
    let raw: Vec<Option<f64>> = density
        .counts
        .iter()
        .map(|&c| (c > 0).then(|| -eps * (c as f64 / total).ln()))
        .collect();
    let min = raw.iter().flatten().fold(f64::INFINITY, |m, v| m.min(*v));
    Ok(GrahamEstimate {
        axes: density.axes.clone(),
        eps,
        values: raw.into_iter().map(|v| v.map(|x| x - min)).collect(),
    })
}

impl GrahamEstimate {
    pub fn cell_center(&self, idx: usize) -> Vec<f64> {
        unflatten(&self.axes, idx)
            .into_iter()
            .zip(&self.axes)
            .map(|(k, a)| a.center(k))
            .collect()
    }

    /// Sup-norm gap to `reference` over occupied cells whose centers satisfy
    /// `region`, after shifting the reference to minimum 0 on those cells.
    /// `None` when no cell qualifies.
    pub fn sup_error(
        &self,
        reference: &dyn Fn(&[f64]) -> f64,
        region: &dyn Fn(&[f64]) -> bool,
    ) -> Option<f64> {
        let pairs: Vec<(f64, f64)> = self
            .values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let c = self.cell_center(i);
                v.filter(|_| region(&c)).map(|v| (v, reference(&c)))
            })
            .collect();
        let rmin = pairs.iter().fold(f64::INFINITY, |m, p| m.min(p.1));
        pairs
            .iter()
            .map(|(v, r)| (v - (r - rmin)).abs())
            .reduce(f64::max)
    }

    /// Occupied cells whose value is the smallest among occupied cells
    /// within `radius` cells in every axis direction (ties go to the lower
    /// index).
    pub fn local_minima(&self, radius: usize) -> Vec<usize> {
        let r = radius as i64;
        let mut out = Vec::new();
        for (i, v) in self.values.iter().enumerate() {
            let Some(v) = *v else { continue };
            let here = unflatten(&self.axes, i);
            let mut is_min = true;
            let mut offsets = vec![-r; self.axes.len()];
            'scan: loop {
                let mut j = 0usize;
                let mut valid = true;
                for (k, a) in self.axes.iter().enumerate() {
                    let c = here[k] as i64 + offsets[k];
                    if c < 0 || c >= a.bins as i64 {
                        valid = false;
                        break;
                    }
                    j = j * a.bins + c as usize;
                }
                if valid && j != i {
                    if let Some(w) = self.values[j] {
                        if w < v || (w == v && j < i) {
                            is_min = false;
                            break 'scan;
                        }
                    }
                }
                let mut k = 0;
                loop {
                    if k == offsets.len() {
                        break 'scan;
                    }
                    offsets[k] += 1;
                    if offsets[k] <= r {
                        break;
                    }
                    offsets[k] = -r;
                    k += 1;
                }
            }
            if is_min {
                out.push(i);
            }
        }
        out
    }
}
