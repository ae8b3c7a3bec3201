//! Reference implementations written without reusing library code paths.
#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

/// `log P_m(x)` of the noised equal-weight mixture, up to the constant
/// `−ln n − (D/2) ln(2πv)`, by stabilised direct summation.
pub fn log_density(centers: &Array2<f64>, x: &[f64], m: f64) -> f64 {
    let decay = (-m).exp();
    let v = 1.0 - (-2.0 * m).exp();
    let exps: Vec<f64> = centers
        .outer_iter()
        .map(|y| {
            let d2: f64 = y.iter().zip(x).map(|(yi, xi)| (xi - decay * yi).powi(2)).sum();
            -d2 / (2.0 * v)
        })
        .collect();
    let top = exps.iter().cloned().fold(f64::MIN, f64::max);
    top + exps.iter().map(|e| (e - top).exp()).sum::<f64>().ln()
}

/// Central finite difference of [`log_density`] with step `h`.
pub fn fd_score(centers: &Array2<f64>, x: &[f64], m: f64, h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut hi = x.to_vec();
            let mut lo = x.to_vec();
            hi[j] += h;
            lo[j] -= h;
            (log_density(centers, &hi, m) - log_density(centers, &lo, m)) / (2.0 * h)
        })
        .collect()
}

/// The mixture score written as the textbook sum, no max-subtraction.
pub fn naive_score(centers: &Array2<f64>, x: &[f64], m: f64) -> Vec<f64> {
    let decay = (-m).exp();
    let v = 1.0 - (-2.0 * m).exp();
    let mut num = vec![0.0; x.len()];
    let mut den = 0.0;
    for y in centers.outer_iter() {
        let d2: f64 = y.iter().zip(x).map(|(yi, xi)| (xi - decay * yi).powi(2)).sum();
        let w = (-d2 / (2.0 * v)).exp();
        den += w;
        for (j, n) in num.iter_mut().enumerate() {
            *n += w * (decay * y[j] - x[j]) / v;
        }
    }
    num.into_iter().map(|n| n / den).collect()
}

pub fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, half_width: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-half_width..half_width))
}

pub fn gaussian_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Haar-ish random orthogonal matrix by modified Gram–Schmidt on Gaussian columns.
pub fn random_orthogonal<R: Rng>(rng: &mut R, d: usize) -> Array2<f64> {
    let mut q = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        let mut v = gaussian_vec(rng, d);
        for k in 0..i {
            let dot: f64 = (0..d).map(|j| v[j] * q[[k, j]]).sum();
            for j in 0..d {
                v[j] -= dot * q[[k, j]];
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        for j in 0..d {
            q[[i, j]] = v[j] / norm;
        }
    }
    q
}

pub fn rotate_rows(a: &Array2<f64>, q: &Array2<f64>) -> Array2<f64> {
    a.dot(&q.t())
}

pub fn rotate(q: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    (0..q.nrows()).map(|i| (0..x.len()).map(|j| q[[i, j]] * x[j]).sum()).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Student-t two-sided tail by Simpson quadrature in `θ = atan(x/√ν)`, where
/// the density becomes `∝ cos^{ν−1} θ`. Needs no gamma function.
pub fn t_two_sided_quadrature(t: f64, df: f64) -> f64 {
    let f = |theta: f64| theta.cos().powf(df - 1.0);
    let simpson = |a: f64, b: f64, n: usize| {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let theta_t = (t.abs() / df.sqrt()).atan();
    let half = std::f64::consts::FRAC_PI_2;
    let panels = 200_000;
    1.0 - simpson(0.0, theta_t, panels) / simpson(0.0, half, panels)
}
