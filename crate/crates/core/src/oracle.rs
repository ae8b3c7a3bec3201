//! Ground truth that does not go through the frame-transport code.
//!
//! * [`mc_frequencies`] draws terminal noise, runs it back to data and counts
//!   which training sample each draw lands on. This is the direct estimate
//!   of each sample's generation probability.
//! * [`toy2d`] transports rings around 2-D samples and checks that their
//!   images stay in disjoint regions.
//! * [`analytic_single`] is the closed-form flow of a one-sample mixture.
//! * [`spearman`] compares rankings.

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::ode::{self, Direction, Method};
use crate::schedule::{variance, Schedule};
use crate::score::{ExactMixtureScore, ScoreProvider};
use crate::{Error, Result};

const MC_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assign {
    /// Every endpoint goes to its nearest sample.
    #[default]
    Nearest,
    /// Only endpoints within this distance of a sample are assigned.
    Radius(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub draws: usize,
    pub seed: u64,
    pub assign: Assign,
    pub method: Method,
    /// Draws that are also integrated forward again to measure round-trip error.
    pub roundtrip_probes: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            draws: 10_000,
            seed: 0,
            assign: Assign::Nearest,
            method: Method::Heun,
            roundtrip_probes: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RoundTripStats {
    pub probes: usize,
    pub mean_relative: f64,
    pub max_relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub ids: Vec<String>,
    pub frequencies: Vec<f64>,
    /// Binomial standard error `√(p(1−p)/M)` of each frequency.
    pub std_errors: Vec<f64>,
    pub num_draws: usize,
    pub unassigned: f64,
    pub failed_draws: usize,
    pub diagnostics: Vec<String>,
    pub roundtrip: RoundTripStats,
}

/// Standard-normal draw `j` of the family `seed`, independent of chunking.
fn noise_row(seed: u64, j: usize, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j as u64);
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn mc_frequencies<P: ScoreProvider + ?Sized>(
    ds: &Dataset,
    provider: &P,
    schedule: &Schedule,
    cfg: &McConfig,
) -> Result<OracleReport> {
    if cfg.draws == 0 {
        return Err(Error::domain("at least one draw is needed"));
    }
    if let Assign::Radius(r) = cfg.assign {
        if !(r > 0.0) {
            return Err(Error::domain(format!("assignment radius must be positive, got {r}")));
        }
    }
    let dim = ds.dim();
    if provider.dim() != dim {
        return Err(Error::domain(format!(
            "provider has D={}, dataset has D={dim}",
            provider.dim()
        )));
    }
    let grid = schedule.step_grid();
    let decay0 = (-schedule.m_start()).exp();
    let centers = ds.to_array() * decay0;

    let mut counts = vec![0usize; ds.len()];
    let mut failed = 0;
    let mut diagnostics = Vec::new();
    let mut probe_errors = Vec::new();
    let mut start = 0;
    while start < cfg.draws {
        let len = MC_CHUNK.min(cfg.draws - start);
        let mut noise = Array2::zeros((len, dim));
        for i in 0..len {
            let row = noise_row(cfg.seed, start + i, dim);
            noise.row_mut(i).assign(&ArrayView1::from(&row));
        }
        match ode::integrate(noise.clone(), &grid, Direction::Reverse, provider, cfg.method, false) {
            Ok(traj) => {
                let ends = traj.into_end();
                for end in ends.rows() {
                    if let Some(i) = assign(end, &centers, cfg.assign) {
                        counts[i] += 1;
                    }
                }
                let probes = cfg.roundtrip_probes.saturating_sub(probe_errors.len()).min(len);
                if probes > 0 {
                    let back = ends.slice(ndarray::s![..probes, ..]).to_owned();
                    let again = ode::integrate(back, &grid, Direction::Forward, provider, cfg.method, false)?
                        .into_end();
                    for i in 0..probes {
                        let (a, b) = (again.row(i), noise.row(i));
                        let err = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                        let scale = b.iter().map(|y| y * y).sum::<f64>().sqrt();
                        probe_errors.push(err / scale);
                    }
                }
            }
            Err(e) => {
                failed += len;
                diagnostics.push(format!("draws {start}..{}: {e}", start + len));
            }
        }
        start += len;
    }

    let m = cfg.draws as f64;
    let frequencies: Vec<f64> = counts.iter().map(|&c| c as f64 / m).collect();
    let std_errors = frequencies.iter().map(|p| (p * (1.0 - p) / m).sqrt()).collect();
    let assigned: usize = counts.iter().sum();
    let roundtrip = if probe_errors.is_empty() {
        RoundTripStats::default()
    } else {
        RoundTripStats {
            probes: probe_errors.len(),
            mean_relative: probe_errors.iter().sum::<f64>() / probe_errors.len() as f64,
            max_relative: probe_errors.iter().copied().fold(0.0, f64::max),
        }
    };
    Ok(OracleReport {
        ids: ds.ids().to_vec(),
        frequencies,
        std_errors,
        num_draws: cfg.draws,
        unassigned: (cfg.draws - assigned) as f64 / m,
        failed_draws: failed,
        diagnostics,
        roundtrip,
    })
}

fn assign(point: ArrayView1<'_, f64>, centers: &Array2<f64>, mode: Assign) -> Option<usize> {
    if point.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let (best, d2) = centers
        .rows()
        .into_iter()
        .map(|c| c.iter().zip(point.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    match mode {
        Assign::Nearest => Some(best),
        Assign::Radius(r) => (d2.sqrt() <= r).then_some(best),
    }
}

/// Closed-form flow of a one-sample mixture: `x(m) = y e^{−m} + √v(m) C`.
pub fn analytic_single(y: &[f64], c: &[f64], m: f64) -> Result<Vec<f64>> {
    if !(m >= 0.0) {
        return Err(Error::domain(format!("m must be non-negative, got {m}")));
    }
    if y.len() != c.len() {
        return Err(Error::domain("y and C differ in length"));
    }
    let (decay, sd) = ((-m).exp(), variance(m).sqrt());
    Ok(y.iter().zip(c).map(|(yi, ci)| yi * decay + sd * ci).collect())
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::domain(format!("lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(Error::domain("spearman needs at least 3 pairs"));
    }
    let (ra, rb) = (ranks(a)?, ranks(b)?);
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - mean) * (y - mean);
        saa += (x - mean).powi(2);
        sbb += (y - mean).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::domain("spearman is undefined for a constant input"));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties sharing their average rank.
pub fn ranks(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::domain("cannot rank NaN"));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    /// Number of samples placed at equal angles on a circle.
    pub samples: usize,
    pub ring_points: usize,
    pub ring_radius: f64,
    pub circle_radius: f64,
    pub method: Method,
    /// Explicit sample positions; overrides `samples` and `circle_radius`.
    pub centers: Option<Vec<[f64; 2]>>,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            samples: 2,
            ring_points: 64,
            ring_radius: 0.01,
            circle_radius: 1.0,
            method: Method::Heun,
            centers: None,
        }
    }
}

impl ToyConfig {
    pub fn placement(&self) -> Result<Vec<[f64; 2]>> {
        if let Some(c) = &self.centers {
            if c.is_empty() {
                return Err(Error::domain("no toy samples given"));
            }
            return Ok(c.clone());
        }
        if self.samples == 0 {
            return Err(Error::domain("toy2d needs at least one sample"));
        }
        // Snap rounding residue such as sin(π) to zero so mirror-symmetric
        // layouts are symmetric in floating point as well.
        let snap = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
        Ok((0..self.samples)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / self.samples as f64;
                [self.circle_radius * snap(a.cos()), self.circle_radius * snap(a.sin())]
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectorCheck {
    /// Largest distance of a bisector probe from the moving bisector, over all knots.
    pub max_deviation: f64,
    /// Every final point of ring 0 is on sample 0's side and likewise for ring 1.
    pub separated: bool,
}

#[derive(Debug, Clone)]
pub struct ToyResult {
    pub centers: Vec<[f64; 2]>,
    pub ring_points: usize,
    /// `(m, rows)` per knot. Rows are ring points, sample-major, followed by
    /// one row per sample centre.
    pub knots: Vec<(f64, Array2<f64>)>,
    pub overlapping_pairs: Vec<(usize, usize)>,
    /// Mean final distance of ring points from their transported centre.
    pub mean_final_radius: Vec<f64>,
    /// `σ_ring √(v(m_T)/v(m_0))`, the isolated-sample prediction.
    pub predicted_radius: f64,
    pub bisector: Option<BisectorCheck>,
}

impl ToyResult {
    pub fn disjoint(&self) -> bool {
        self.overlapping_pairs.is_empty()
    }

    pub fn final_ring(&self, sample: usize) -> Vec<[f64; 2]> {
        let last = &self.knots.last().expect("knots").1;
        (0..self.ring_points)
            .map(|j| {
                let r = last.row(sample * self.ring_points + j);
                [r[0], r[1]]
            })
            .collect()
    }
}

/// Rings of points around 2-D samples carried from `t_eps` to `t_max`.
pub fn toy2d(cfg: &ToyConfig, schedule: &Schedule) -> Result<ToyResult> {
    let centers = cfg.placement()?;
    if cfg.ring_points < 3 || !(cfg.ring_radius > 0.0) {
        return Err(Error::domain("rings need >= 3 points and a positive radius"));
    }
    let n = centers.len();
    let p = cfg.ring_points;
    let c_arr = Array2::from_shape_fn((n, 2), |(i, j)| centers[i][j]);
    let provider = ExactMixtureScore::from_centers(c_arr, schedule.m_end());
    let decay0 = (-schedule.m_start()).exp();

    let mut start = Array2::zeros((n * p + n, 2));
    for (i, c) in centers.iter().enumerate() {
        for j in 0..p {
            let a = std::f64::consts::TAU * j as f64 / p as f64;
            start[[i * p + j, 0]] = c[0] * decay0 + cfg.ring_radius * a.cos();
            start[[i * p + j, 1]] = c[1] * decay0 + cfg.ring_radius * a.sin();
        }
        start[[n * p + i, 0]] = c[0] * decay0;
        start[[n * p + i, 1]] = c[1] * decay0;
    }
    let grid = schedule.step_grid();
    let traj = ode::integrate(start, &grid, Direction::Forward, &provider, cfg.method, true)?;
    let last = &traj.knots.last().expect("knots").1;

    let hulls: Vec<Vec<[f64; 2]>> = (0..n)
        .map(|i| convex_hull((0..p).map(|j| [last[[i * p + j, 0]], last[[i * p + j, 1]]]).collect()))
        .collect();
    let mut overlapping_pairs = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if convex_polygons_intersect(&hulls[a], &hulls[b]) {
                overlapping_pairs.push((a, b));
            }
        }
    }
    let mean_final_radius = (0..n)
        .map(|i| {
            let c = last.row(n * p + i);
            (0..p)
                .map(|j| ((last[[i * p + j, 0]] - c[0]).powi(2) + (last[[i * p + j, 1]] - c[1]).powi(2)).sqrt())
                .sum::<f64>()
                / p as f64
        })
        .collect();
    let predicted_radius =
        cfg.ring_radius * (variance(schedule.m_end()) / variance(schedule.m_start())).sqrt();

    let bisector = if n == 2 {
        Some(bisector_check(&centers, &traj.knots, p, &provider, schedule, cfg.method)?)
    } else {
        None
    };

    Ok(ToyResult {
        centers,
        ring_points: p,
        knots: traj.knots,
        overlapping_pairs,
        mean_final_radius,
        predicted_radius,
        bisector,
    })
}

fn bisector_check(
    centers: &[[f64; 2]],
    ring_knots: &[(f64, Array2<f64>)],
    p: usize,
    provider: &ExactMixtureScore,
    schedule: &Schedule,
    method: Method,
) -> Result<BisectorCheck> {
    let (a, b) = (centers[0], centers[1]);
    let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let u = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
    let perp = [-u[1], u[0]];
    // Signed offset from the bisector of the scaled centres at clock m.
    let side = |x: f64, y: f64, m: f64| {
        let e = (-m).exp();
        (x - mid[0] * e) * u[0] + (y - mid[1] * e) * u[1]
    };

    let probes = 9;
    let decay0 = (-schedule.m_start()).exp();
    let start = Array2::from_shape_fn((probes, 2), |(i, j)| {
        let s = (i as f64 / (probes - 1) as f64 - 0.5) * 2.0 * len;
        mid[j] * decay0 + s * perp[j]
    });
    let mut max_deviation: f64 = 0.0;
    ode::transport(start, &schedule.step_grid(), Direction::Forward, provider, method, |_, m, x| {
        for r in x.rows() {
            max_deviation = max_deviation.max(side(r[0], r[1], m).abs());
        }
        Ok(())
    })?;

    let (m_end, last) = ring_knots.last().map(|(m, x)| (*m, x)).expect("knots");
    let separated = (0..p).all(|j| side(last[[j, 0]], last[[j, 1]], m_end) < 0.0)
        && (0..p).all(|j| side(last[[p + j, 0]], last[[p + j, 1]], m_end) > 0.0);
    Ok(BisectorCheck {
        max_deviation,
        separated,
    })
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain; counter-clockwise, no repeated first point.
pub fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Separating-axis test for two convex polygons (touching counts as intersecting).
pub fn convex_polygons_intersect(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
    if a.is_empty() || b.is_empty() {
        return false;
    }
    for poly in [a, b] {
        let k = poly.len();
        for i in 0..k {
            let (p, q) = (poly[i], poly[(i + 1) % k]);
            let axis = [-(q[1] - p[1]), q[0] - p[0]];
            if axis == [0.0, 0.0] {
                continue;
            }
            let project = |s: &[[f64; 2]]| {
                s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    let d = v[0] * axis[0] + v[1] * axis[1];
                    (lo.min(d), hi.max(d))
                })
            };
            let (alo, ahi) = project(a);
            let (blo, bhi) = project(b);
            if ahi < blo || bhi < alo {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_single_cases() {
        let y = [1.0, -2.0];
        let m = 0.7_f64;
        let e = (-m).exp();
        assert_eq!(analytic_single(&y, &[0.0, 0.0], m).unwrap(), vec![e, -2.0 * e]);
        assert_eq!(analytic_single(&y, &[0.3, 0.4], 0.0).unwrap(), y.to_vec());
        let c = [0.3, 0.4];
        let mut prev = 0.0;
        for m in [0.01, 0.1, 1.0, 3.0] {
            let x = analytic_single(&y, &c, m).unwrap();
            let d = ((x[0] - y[0] * (-m).exp()).powi(2) + (x[1] - y[1] * (-m).exp()).powi(2)).sqrt();
            assert!((d - variance(m).sqrt() * 0.5).abs() < 1e-14);
            assert!(d > prev);
            prev = d;
        }
        assert!(analytic_single(&y, &c, -0.1).is_err());
    }

    #[test]
    fn spearman_examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&a, &a).unwrap(), 1.0);
        assert_eq!(spearman(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        let rho = spearman(&a, &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((rho - 0.8).abs() < 1e-15, "{rho}");
        assert!(spearman(&a, &[1.0, 2.0]).is_err());
        assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(spearman(&a, &[5.0; 4]).is_err());
    }

    #[test]
    fn average_ranks() {
        assert_eq!(ranks(&[10.0, 20.0, 10.0, 5.0]).unwrap(), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn hull_and_intersection() {
        let square = convex_hull(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]]);
        assert_eq!(square.len(), 4);
        let shifted: Vec<[f64; 2]> = square.iter().map(|p| [p[0] + 0.5, p[1] + 0.5]).collect();
        let far: Vec<[f64; 2]> = square.iter().map(|p| [p[0] + 2.0, p[1]]).collect();
        let inner = convex_hull(vec![[0.4, 0.4], [0.6, 0.4], [0.5, 0.6]]);
        assert!(convex_polygons_intersect(&square, &shifted));
        assert!(!convex_polygons_intersect(&square, &far));
        assert!(convex_polygons_intersect(&square, &inner));
        // Diagonal gap: axis-aligned boxes would overlap, the triangles don't.
        let t1 = convex_hull(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let t2 = convex_hull(vec![[1.0, 1.0], [0.6, 1.0], [1.0, 0.6]]);
        assert!(!convex_polygons_intersect(&t1, &t2));
    }

    #[test]
    fn placement_on_circle() {
        let cfg = ToyConfig { samples: 4, ..Default::default() };
        let p = cfg.placement().unwrap();
        assert_eq!(p[1], [0.0, 1.0]);
        assert_eq!(p[2], [-1.0, 0.0]);
        assert!(ToyConfig { samples: 0, ..Default::default() }.placement().is_err());
    }

    #[test]
    fn single_sample_frequency_is_one() {
        let ds = Dataset::from_rows(&[vec![0.3, -0.4]]).unwrap();
        let sched = Schedule::default().with_steps(100).unwrap();
        let provider = ExactMixtureScore::new(&ds, &sched);
        let cfg = McConfig { draws: 500, roundtrip_probes: 10, ..Default::default() };
        let r = mc_frequencies(&ds, &provider, &sched, &cfg).unwrap();
        assert_eq!(r.frequencies, vec![1.0]);
        assert_eq!(r.unassigned, 0.0);
        assert_eq!(r.roundtrip.probes, 10);
    }

    #[test]
    fn radius_assignment_leaves_far_draws_unassigned() {
        let ds = Dataset::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let sched = Schedule::default().with_steps(100).unwrap();
        let provider = ExactMixtureScore::new(&ds, &sched);
        let tight = McConfig { draws: 300, assign: Assign::Radius(1e-9), roundtrip_probes: 0, ..Default::default() };
        let r = mc_frequencies(&ds, &provider, &sched, &tight).unwrap();
        assert!(r.unassigned > 0.9);
        let total: f64 = r.frequencies.iter().sum::<f64>() + r.unassigned;
        assert!((total - 1.0).abs() < 1e-12);
        let bad = McConfig { assign: Assign::Radius(0.0), ..tight };
        assert!(mc_frequencies(&ds, &provider, &sched, &bad).is_err());
        let none = McConfig { draws: 0, ..tight };
        assert!(mc_frequencies(&ds, &provider, &sched, &none).is_err());
    }

    #[test]
    fn noise_rows_are_chunk_independent() {
        assert_eq!(noise_row(5, 17, 3), noise_row(5, 17, 3));
        assert_ne!(noise_row(5, 17, 3), noise_row(5, 18, 3));
    }
}
