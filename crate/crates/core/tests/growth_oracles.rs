mod common;

use common::*;
use memometer::growth::{growth_report, sample_seed, volume_growth, volume_growth_with_frame};
use memometer::ode::{integrate, Direction};
use memometer::{Dataset, ExactMixtureScore, GridKind, GrowthConfig, Method, Schedule};
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mixture score with its own stabilisation, independent of the library.
fn reference_score(centers: &Array2<f64>, x: &[f64], m: f64) -> Vec<f64> {
    let decay = (-m).exp();
    let v = 1.0 - (-2.0 * m).exp();
    let logits: Vec<f64> = centers
        .outer_iter()
        .map(|y| -y.iter().zip(x).map(|(a, b)| (b - decay * a).powi(2)).sum::<f64>() / (2.0 * v))
        .collect();
    let top = logits.iter().cloned().fold(f64::MIN, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = w.iter().sum();
    (0..x.len())
        .map(|j| {
            centers
                .outer_iter()
                .zip(&w)
                .map(|(y, wi)| wi / z * (decay * y[j] - x[j]) / v)
                .sum()
        })
        .collect()
}

/// Algorithm 1 written out as literally as possible: Euler steps, a product
/// of after/before ratios, sort, modified Gram–Schmidt, rescale.
fn literal_growth(centers: &Array2<f64>, x0: &[f64], frame: &Array2<f64>, ms: &[f64], sigma: f64) -> Vec<f64> {
    let d = x0.len();
    let euler = |x: &[f64], m: f64, dm: f64| -> Vec<f64> {
        let s = reference_score(centers, x, m);
        (0..d).map(|j| x[j] - (x[j] + s[j]) * dm).collect()
    };
    let mut center = x0.to_vec();
    let mut axes: Vec<Vec<f64>> = frame
        .outer_iter()
        .map(|r| (0..d).map(|j| x0[j] + sigma * r[j]).collect())
        .collect();
    let mut product = 1.0f64;
    let mut out = Vec::new();
    for k in 0..ms.len() - 1 {
        let (m, dm) = (ms[k], ms[k + 1] - ms[k]);
        let new_center = euler(&center, m, dm);
        let mut moved: Vec<(f64, Vec<f64>)> = axes
            .iter()
            .map(|a| {
                let before: Vec<f64> = (0..d).map(|j| a[j] - center[j]).collect();
                let after_pt = euler(a, m, dm);
                let after: Vec<f64> = (0..d).map(|j| after_pt[j] - new_center[j]).collect();
                product *= norm(&after) / norm(&before);
                (norm(&after), after)
            })
            .collect();
        out.push(product.ln());
        moved.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for (_, mut v) in moved {
            for q in &basis {
                let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
            }
            let n = norm(&v);
            basis.push(v.into_iter().map(|a| a / n).collect());
        }
        center = new_center;
        axes = basis
            .iter()
            .map(|q| (0..d).map(|j| center[j] + sigma * q[j]).collect())
            .collect();
    }
    out
}

#[test]
fn cumulative_rate_equals_product_of_ratios() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let sched = Schedule::default().with_steps(10).unwrap();
    let grid = sched.step_grid();
    for _ in 0..5 {
        let centers = uniform_matrix(&mut rng, 4, 2, 1.0);
        let score = ExactMixtureScore::from_centers(centers.clone(), sched.m_end());
        let x0 = vec![centers[[0, 0]], centers[[0, 1]]];
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let frame = array![[angle.cos(), angle.sin()], [-angle.sin(), angle.cos()]];
        let cfg = GrowthConfig { num_axes: 2, sphere_radius: 0.05, ..Default::default() };
        let lib = volume_growth_with_frame(&x0, frame.view(), &score, &grid, &cfg).unwrap();
        let literal = literal_growth(&centers, &x0, &frame, grid.m(), 0.05);
        assert_eq!(lib.log_l.len(), 10);
        for (a, b) in lib.log_l.iter().zip(&literal) {
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn single_sample_closed_form() {
    let sched = Schedule::default().with_grid(GridKind::LogM);
    let y = [0.3, -0.1, 0.8, 0.0, -0.5, 0.25, 0.6, -0.9];
    let score = ExactMixtureScore::from_centers(Array2::from_shape_vec((1, 8), y.to_vec()).unwrap(), sched.m_end());
    let cfg = GrowthConfig { num_axes: 8, method: Method::Heun, seed: 4, ..Default::default() };
    let s = volume_growth(&y, &score, &sched, &cfg).unwrap();
    let v = |m: f64| 1.0 - (-2.0 * m).exp();
    let expected = 4.0 * (v(sched.m_end()) / v(sched.m_start())).ln();
    assert!((s.last() - expected).abs() < 1e-3 * expected, "{} vs {expected}", s.last());
}

#[test]
fn rotation_invariance_with_matched_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let sched = Schedule::default().with_steps(200).unwrap();
    let grid = sched.step_grid();
    let d = 4;
    let q = random_orthogonal(&mut rng, d);
    let centers = uniform_matrix(&mut rng, 6, d, 1.0);
    let plain = ExactMixtureScore::from_centers(centers.clone(), sched.m_end());
    let rotated = ExactMixtureScore::from_centers(rotate_rows(&centers, &q), sched.m_end());
    let x0 = centers.row(2).to_vec();
    let frame = random_orthogonal(&mut rng, d).slice(ndarray::s![..3, ..]).to_owned();
    let cfg = GrowthConfig { num_axes: 3, ..Default::default() };
    let a = volume_growth_with_frame(&x0, frame.view(), &plain, &grid, &cfg).unwrap();
    let b = volume_growth_with_frame(&rotate(&q, &x0), rotate_rows(&frame, &q).view(), &rotated, &grid, &cfg).unwrap();
    for (x, y) in a.log_l.iter().zip(&b.log_l) {
        assert!((x - y).abs() < 1e-8, "{x} vs {y}");
    }
}

#[test]
fn full_frame_tracks_log_jacobian_determinant() {
    // With N = D the rate approximates ln|det J| of the flow map.
    let sched = Schedule::default().with_grid(GridKind::LogM);
    let centers = array![[0.6, 0.1], [-0.4, 0.5], [0.0, -0.7]];
    let score = ExactMixtureScore::from_centers(centers.clone(), sched.m_end());
    let x0 = [0.55, 0.12];
    let cfg = GrowthConfig { num_axes: 2, sphere_radius: 1e-4, method: Method::Heun, ..Default::default() };
    let growth = volume_growth(&x0, &score, &sched, &cfg).unwrap().last();

    let h = 1e-7;
    let probes = array![
        [x0[0] + h, x0[1]],
        [x0[0] - h, x0[1]],
        [x0[0], x0[1] + h],
        [x0[0], x0[1] - h]
    ];
    let end = integrate(probes, &sched.step_grid(), Direction::Forward, &score, Method::Heun, false)
        .unwrap()
        .into_end();
    let j = |r: usize, c: usize| (end[[2 * c, r]] - end[[2 * c + 1, r]]) / (2.0 * h);
    let log_det = (j(0, 0) * j(1, 1) - j(0, 1) * j(1, 0)).abs().ln();
    assert!((growth - log_det).abs() < 1e-2 * log_det.abs(), "{growth} vs {log_det}");
}

#[test]
fn report_is_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let ds = Dataset::from_rows(&rows).unwrap();
    let sched = Schedule::default().with_steps(50).unwrap();
    let score = ExactMixtureScore::new(&ds, &sched);
    let cfg = GrowthConfig { num_axes: 2, seed: 77, ..Default::default() };
    let a = growth_report(&ds, &score, &sched, &cfg).unwrap();
    let perm = [4, 0, 5, 2, 1, 3];
    let shuffled = ds.subset(&perm).unwrap();
    let b = growth_report(&shuffled, &score, &sched, &cfg).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(b.series[k], a.series[i]);
    }
    let again = growth_report(&ds, &score, &sched, &cfg).unwrap();
    assert_eq!(a.series, again.series);
}

#[test]
fn report_of_one_equals_direct_call() {
    let ds = Dataset::from_rows(&[vec![0.2, -0.3, 0.4]]).unwrap();
    let sched = Schedule::default().with_steps(20).unwrap();
    let score = ExactMixtureScore::new(&ds, &sched);
    let cfg = GrowthConfig { num_axes: 3, seed: 5, ..Default::default() };
    let r = growth_report(&ds, &score, &sched, &cfg).unwrap();
    let direct = volume_growth(
        &ds.row_f64(0),
        &score,
        &sched,
        &GrowthConfig { seed: sample_seed(5, &ds.ids()[0]), ..cfg },
    )
    .unwrap();
    assert_eq!(r.series.len(), 1);
    assert_eq!(r.series[0].log_l, direct.log_l);
    assert_eq!(r.series[0].target_id, ds.ids()[0]);
}

#[test]
fn trained_points_grow_faster_than_held_out() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..32).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    };
    let trained = Dataset::from_rows(&draw(&mut rng)).unwrap();
    let held = Dataset::from_rows(&draw(&mut rng)).unwrap();
    let sched = Schedule::default().with_steps(200).unwrap();
    let score = ExactMixtureScore::new(&trained, &sched);
    let cfg = GrowthConfig { num_axes: 2, ..Default::default() };
    let mean = |ds: &Dataset| {
        let r = growth_report(ds, &score, &sched, &cfg).unwrap();
        r.series.iter().map(|s| s.last()).sum::<f64>() / r.series.len() as f64
    };
    let (a, b) = (mean(&trained), mean(&held));
    assert!(a > b, "{a} <= {b}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn series_is_a_prefix_sum(seed in any::<u64>(), n in 1usize..5, axes in 1usize..4, steps in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = uniform_matrix(&mut rng, n, 3, 1.0);
        let sched = Schedule::default().with_steps(20).unwrap();
        let score = ExactMixtureScore::from_centers(centers.clone(), sched.m_end());
        let x0 = centers.row(0).to_vec();
        let cfg = GrowthConfig { num_axes: axes, steps: Some(steps), seed, ..Default::default() };
        let s = volume_growth(&x0, &score, &sched, &cfg).unwrap();
        prop_assert_eq!(s.log_l.len(), steps);
        let mut acc = 0.0;
        for (l, p) in s.log_l.iter().zip(&s.per_step) {
            acc += p;
            prop_assert_eq!(*l, acc);
            prop_assert!(l.is_finite());
        }
    }
}
