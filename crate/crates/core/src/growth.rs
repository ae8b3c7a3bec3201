//! Log volume growth of a small frame carried by the probability-flow ODE.
//!
//! Around a target `x⁽⁰⁾` we place `N` orthonormal offsets of length `σ`.
//! Each diffusion step advances the centre and the frame together, adds the
//! log stretch of every axis,
//!
//! ```text
//! log l_{t+1} = log l_t + Σ_k [ ln‖x⁽ᵏ⁾_{t+1} − x⁽⁰⁾_{t+1}‖ − ln‖x⁽ᵏ⁾_t − x⁽⁰⁾_t‖ ]
//! ```
//!
//! then sorts the axes by stretched length (longest first), re-orthonormalises
//! them with Gram–Schmidt and rescales to `σ`. The running sum after step `t`
//! is `log l_t`; `log l_0 = 0`.
//!
//! With `N = D` this is the log-determinant of the flow's Jacobian along the
//! centre trajectory, up to O(σ) effects. `N = 1, T' = 1` is the cheap
//! single-axis, single-step variant.

use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::ode::{self, Method};
use crate::schedule::{Schedule, StepGrid};
use crate::score::ScoreProvider;
use crate::{Error, Result};

/// Relative residual below which a Gram–Schmidt row counts as dependent.
pub const GS_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowthConfig {
    pub num_axes: usize,
    pub sphere_radius: f64,
    /// Diffusion steps to follow; `None` runs the whole schedule.
    pub steps: Option<usize>,
    pub seed: u64,
    pub method: Method,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        Self {
            num_axes: 100,
            sphere_radius: 0.05,
            steps: None,
            seed: 0,
            method: Method::Euler,
        }
    }
}

impl GrowthConfig {
    /// One random axis, one step.
    pub fn cheap(sphere_radius: f64, seed: u64) -> Self {
        Self {
            num_axes: 1,
            sphere_radius,
            steps: Some(1),
            seed,
            method: Method::Euler,
        }
    }

    pub fn steps_for(&self, schedule: &Schedule) -> usize {
        self.steps.unwrap_or(schedule.num_steps())
    }

    pub fn validate(&self, dim: usize, schedule: &Schedule) -> Result<()> {
        if self.num_axes == 0 || self.num_axes > dim {
            return Err(Error::domain(format!(
                "num_axes must lie in 1..={dim}, got {}",
                self.num_axes
            )));
        }
        if !(self.sphere_radius > 0.0 && self.sphere_radius.is_finite()) {
            return Err(Error::domain(format!(
                "sphere_radius must be positive, got {}",
                self.sphere_radius
            )));
        }
        let steps = self.steps_for(schedule);
        if steps == 0 || steps > schedule.num_steps() {
            return Err(Error::domain(format!(
                "steps must lie in 1..={}, got {steps}",
                schedule.num_steps()
            )));
        }
        Ok(())
    }
}

/// Cumulative `log l_1 … log l_{T'}` for one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthSeries {
    pub target_id: String,
    pub log_l: Vec<f64>,
    pub per_step: Vec<f64>,
    /// Frame rows that collapsed and were replaced by fresh random directions.
    pub replacements: usize,
}

impl GrowthSeries {
    /// `log l_step` with `step` counted from 1.
    pub fn at_step(&self, step: usize) -> Option<f64> {
        step.checked_sub(1).and_then(|i| self.log_l.get(i)).copied()
    }

    pub fn last(&self) -> f64 {
        *self.log_l.last().expect("series has at least one step")
    }
}

#[derive(Debug, Clone)]
pub struct Orthonormalized {
    pub basis: Array2<f64>,
    pub replacements: usize,
}

/// Classical Gram–Schmidt with one re-orthogonalisation pass, rows in order.
///
/// A row whose residual falls below [`GS_TOLERANCE`] times its input norm is
/// swapped for a Gaussian direction drawn from `rng`.
pub fn gram_schmidt<R: Rng + ?Sized>(v: ArrayView2<'_, f64>, rng: &mut R) -> Result<Orthonormalized> {
    let (n, d) = v.dim();
    if n > d {
        return Err(Error::domain(format!("cannot orthonormalise {n} rows in dimension {d}")));
    }
    let mut q = Array2::<f64>::zeros((n, d));
    let mut replacements = 0;
    for i in 0..n {
        let mut row = v.row(i).to_vec();
        let scale = norm(&row);
        let mut residual = if scale.is_finite() && scale > 0.0 {
            project_out(&mut row, q.view(), i);
            norm(&row)
        } else {
            0.0
        };
        while !(residual > GS_TOLERANCE * scale) || !residual.is_finite() {
            replacements += 1;
            row = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let fresh = norm(&row);
            project_out(&mut row, q.view(), i);
            residual = norm(&row);
            if residual > GS_TOLERANCE * fresh {
                break;
            }
        }
        let inv = 1.0 / residual;
        q.row_mut(i).iter_mut().zip(&row).for_each(|(o, r)| *o = r * inv);
    }
    Ok(Orthonormalized { basis: q, replacements })
}

/// Two classical passes against the first `k` rows of `q`.
fn project_out(row: &mut [f64], q: ArrayView2<'_, f64>, k: usize) {
    for _ in 0..2 {
        let coeffs: Vec<f64> = (0..k).map(|j| dot(q.row(j).as_slice().unwrap(), row)).collect();
        for (j, c) in coeffs.into_iter().enumerate() {
            row.iter_mut().zip(q.row(j).iter()).for_each(|(r, qj)| *r -= c * qj);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Runs the frame transport from a random orthonormal frame seeded by `cfg.seed`.
pub fn volume_growth<P: ScoreProvider + ?Sized>(
    x0: &[f64],
    provider: &P,
    schedule: &Schedule,
    cfg: &GrowthConfig,
) -> Result<GrowthSeries> {
    cfg.validate(x0.len(), schedule)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eps = Array2::from_shape_simple_fn((cfg.num_axes, x0.len()), || {
        rng.sample::<f64, _>(StandardNormal)
    });
    let frame = gram_schmidt(eps.view(), &mut rng)?;
    let grid = schedule.step_grid().truncated(cfg.steps_for(schedule))?;
    let mut series = transport_frame(x0, frame.basis.view(), provider, &grid, cfg, &mut rng)?;
    series.replacements += frame.replacements;
    Ok(series)
}

/// Frame transport from a caller-supplied orthonormal frame (`N × D` rows)
/// over an explicit grid.
pub fn volume_growth_with_frame<P: ScoreProvider + ?Sized>(
    x0: &[f64],
    frame: ArrayView2<'_, f64>,
    provider: &P,
    grid: &StepGrid,
    cfg: &GrowthConfig,
) -> Result<GrowthSeries> {
    if frame.ncols() != x0.len() || frame.nrows() == 0 || frame.nrows() > x0.len() {
        return Err(Error::domain(format!(
            "frame of shape {:?} does not fit a point of dimension {}",
            frame.dim(),
            x0.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    transport_frame(x0, frame, provider, grid, cfg, &mut rng)
}

fn transport_frame<P: ScoreProvider + ?Sized>(
    x0: &[f64],
    frame: ArrayView2<'_, f64>,
    provider: &P,
    grid: &StepGrid,
    cfg: &GrowthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GrowthSeries> {
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("target point is not finite"));
    }
    let sigma = cfg.sphere_radius;
    let (n_axes, d) = frame.dim();
    // Row 0 is the centre, rows 1..=N the frame points.
    let mut batch = Array2::<f64>::zeros((n_axes + 1, d));
    batch.row_mut(0).assign(&ndarray::ArrayView1::from(x0));
    for k in 0..n_axes {
        let mut r = batch.row_mut(k + 1);
        r.assign(&ndarray::ArrayView1::from(x0));
        r.scaled_add(sigma, &frame.row(k));
    }

    let mut log_l = Vec::with_capacity(grid.steps());
    let mut per_step = Vec::with_capacity(grid.steps());
    let mut total = 0.0;
    let mut replacements = 0;
    for (k, (_, m, dm)) in grid.iter().enumerate() {
        let before = offset_norms(&batch);
        let next = ode::step(batch.view(), m, dm, provider, cfg.method).map_err(|e| e.at_step(k + 1))?;
        let after = offset_norms(&next);
        if let Some(row) = after.iter().position(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::Integration {
                step: k + 1,
                row: row + 1,
                reason: format!("frame axis length became {}", after[row]),
            });
        }
        let inc: f64 = after.iter().zip(&before).map(|(a, b)| a.ln() - b.ln()).sum();
        total += inc;
        per_step.push(inc);
        log_l.push(total);

        // Longest axis first; equal lengths keep their axis order.
        let mut order: Vec<usize> = (0..n_axes).collect();
        order.sort_by(|&a, &b| after[b].total_cmp(&after[a]));
        let center = next.row(0).to_owned();
        let offsets = Array2::from_shape_fn((n_axes, d), |(i, j)| next[[order[i] + 1, j]] - center[j]);
        let q = gram_schmidt(offsets.view(), rng)?;
        replacements += q.replacements;
        batch = next;
        for i in 0..n_axes {
            let mut r = batch.row_mut(i + 1);
            r.assign(&center);
            r.scaled_add(sigma, &q.basis.row(i));
        }
    }
    Ok(GrowthSeries {
        target_id: String::new(),
        log_l,
        per_step,
        replacements,
    })
}

fn offset_norms(batch: &Array2<f64>) -> Vec<f64> {
    let center = batch.row(0);
    batch
        .axis_iter(Axis(0))
        .skip(1)
        .map(|r| r.iter().zip(center.iter()).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt())
        .collect()
}

/// `log l_1` along one random axis: the cheap ease-of-reproduction score.
pub fn cheap_rate<P: ScoreProvider + ?Sized>(
    x0: &[f64],
    provider: &P,
    schedule: &Schedule,
    sphere_radius: f64,
    seed: u64,
    method: Method,
) -> Result<f64> {
    let cfg = GrowthConfig {
        method,
        ..GrowthConfig::cheap(sphere_radius, seed)
    };
    Ok(volume_growth(x0, provider, schedule, &cfg)?.per_step[0])
}

/// Seed for one target: the first 8 bytes of SHA-256(global seed ‖ id).
pub fn sample_seed(global: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[derive(Debug, Default)]
pub struct GrowthReport {
    /// Successful series, in dataset order.
    pub series: Vec<GrowthSeries>,
    pub failures: Vec<(String, Error)>,
    /// Wall time of every sample, successful or not, in dataset order.
    pub wall_seconds: Vec<(String, f64)>,
}

/// [`volume_growth`] for every sample, each seeded by [`sample_seed`].
pub fn growth_report<P: ScoreProvider + ?Sized>(
    ds: &Dataset,
    provider: &P,
    schedule: &Schedule,
    cfg: &GrowthConfig,
) -> Result<GrowthReport> {
    if provider.dim() != ds.dim() {
        return Err(Error::domain(format!(
            "provider has D={}, dataset has D={}",
            provider.dim(),
            ds.dim()
        )));
    }
    cfg.validate(ds.dim(), schedule)?;
    let run = |i: usize| {
        let id = &ds.ids()[i];
        let sample_cfg = GrowthConfig {
            seed: sample_seed(cfg.seed, id),
            ..*cfg
        };
        let started = Instant::now();
        let result = volume_growth(&ds.row_f64(i), provider, schedule, &sample_cfg).map(|mut s| {
            s.target_id = id.clone();
            s
        });
        (id.clone(), result, started.elapsed().as_secs_f64())
    };
    let results: Vec<_> = if provider.concurrent() {
        (0..ds.len()).into_par_iter().map(run).collect()
    } else {
        (0..ds.len()).map(run).collect()
    };
    let mut report = GrowthReport::default();
    for (id, r, secs) in results {
        report.wall_seconds.push((id.clone(), secs));
        match r {
            Ok(s) => report.series.push(s),
            Err(e) => report.failures.push((id, e)),
        }
    }
    Ok(report)
}
