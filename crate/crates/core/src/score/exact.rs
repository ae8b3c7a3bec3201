use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array2, ArrayView2, Zip};

use super::{check_shape, ScoreProvider};
use crate::dataset::Dataset;
use crate::schedule::{variance, Schedule};
use crate::{Error, Result};

/// Rows below this count are evaluated on the calling thread.
const PAR_ROWS: usize = 32;

/// Score of the noised empirical distribution
///
/// ```text
/// P_m(x) ∝ Σ_i exp(−‖x − y⁽ⁱ⁾e^{−m}‖² / 2v(m))
/// s(x)   = Σ_i w_i (y⁽ⁱ⁾e^{−m} − x) / v,   w = softmax(−‖x − y⁽ⁱ⁾e^{−m}‖² / 2v)
/// ```
///
/// The normaliser cancels in `∇ log P` and is never formed. Weights use
/// max-subtraction, so the score stays finite even when every exponent
/// underflows (D in the thousands, small `v`).
///
/// With [`with_top_k`](Self::with_top_k) only the K most responsible centres
/// contribute. The discarded softmax mass is tracked and exposed through
/// [`max_dropped_mass`](Self::max_dropped_mass).
#[derive(Debug)]
pub struct ExactMixtureScore {
    centers: Array2<f64>,
    m_max: f64,
    top_k: Option<usize>,
    dropped_mass: AtomicU64,
}

impl Clone for ExactMixtureScore {
    fn clone(&self) -> Self {
        Self {
            centers: self.centers.clone(),
            m_max: self.m_max,
            top_k: self.top_k,
            dropped_mass: AtomicU64::new(self.dropped_mass.load(Ordering::Relaxed)),
        }
    }
}

impl ExactMixtureScore {
    pub fn new(dataset: &Dataset, schedule: &Schedule) -> Self {
        Self::from_centers(dataset.to_array(), schedule.m_end())
    }

    /// Mixture over explicit centres, valid for `m ∈ (0, m_max]`.
    pub fn from_centers(centers: Array2<f64>, m_max: f64) -> Self {
        assert!(centers.nrows() > 0 && centers.ncols() > 0, "empty mixture");
        Self {
            centers,
            m_max,
            top_k: None,
            dropped_mass: AtomicU64::new(0f64.to_bits()),
        }
    }

    /// Keeps only the `k` nearest centres per evaluation. `k >= n` is the full sum.
    pub fn with_top_k(mut self, k: usize) -> Self {
        assert!(k > 0, "top-k truncation needs k >= 1");
        self.top_k = (k < self.centers.nrows()).then_some(k);
        self
    }

    pub fn centers(&self) -> ArrayView2<'_, f64> {
        self.centers.view()
    }

    pub fn len(&self) -> usize {
        self.centers.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.nrows() == 0
    }

    pub fn top_k(&self) -> Option<usize> {
        self.top_k
    }

    /// Largest softmax mass discarded by top-k truncation so far.
    pub fn max_dropped_mass(&self) -> f64 {
        f64::from_bits(self.dropped_mass.load(Ordering::Relaxed))
    }

    fn check_m(&self, m: f64) -> Result<()> {
        if !(m > 0.0) {
            return Err(Error::domain(format!(
                "the mixture score needs m > 0 (v(m) = 0 is singular), got {m}"
            )));
        }
        if m > self.m_max * (1.0 + 1e-12) {
            return Err(Error::domain(format!(
                "m={m} is past the end of the schedule (m_max={})",
                self.m_max
            )));
        }
        Ok(())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.centers.ncols() {
            return Err(Error::domain(format!(
                "mixture has D={}, point has {} entries",
                self.centers.ncols(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Posterior responsibilities `w_i` of every centre for `x`.
    pub fn weights(&self, x: &[f64], m: f64) -> Result<Vec<f64>> {
        self.check_m(m)?;
        self.check_point(x)?;
        let mut w = Vec::new();
        let total = self.unnormalised_weights(x, (-m).exp(), variance(m), &mut w);
        w.iter_mut().for_each(|wi| *wi /= total);
        Ok(w)
    }

    pub fn exact_score(&self, x: &[f64], m: f64) -> Result<Vec<f64>> {
        self.check_m(m)?;
        self.check_point(x)?;
        let mut out = vec![0.0; x.len()];
        let mut scratch = Vec::new();
        self.score_into(x, (-m).exp(), variance(m), &mut out, &mut scratch);
        Ok(out)
    }

    /// Row-wise [`exact_score`](Self::exact_score); bit-identical to it.
    pub fn exact_score_batch(&self, points: ArrayView2<'_, f64>, m: f64) -> Result<Array2<f64>> {
        self.check_m(m)?;
        check_shape(points, self.centers.ncols())?;
        let (decay, v) = ((-m).exp(), variance(m));
        let mut out = Array2::zeros(points.raw_dim());
        let zip = Zip::from(out.rows_mut()).and(points.rows());
        let kernel = |mut o: ndarray::ArrayViewMut1<'_, f64>, x: ndarray::ArrayView1<'_, f64>| {
            let x = x.to_vec();
            let mut row = vec![0.0; x.len()];
            self.score_into(&x, decay, v, &mut row, &mut Vec::new());
            o.assign(&ndarray::ArrayView1::from(&row));
        };
        if points.nrows() >= PAR_ROWS {
            zip.par_for_each(kernel);
        } else {
            zip.for_each(kernel);
        }
        Ok(out)
    }

    /// Fills `w` with `exp(logit_i − max logit)` and returns their sum.
    fn unnormalised_weights(&self, x: &[f64], decay: f64, v: f64, w: &mut Vec<f64>) -> f64 {
        w.clear();
        w.extend(self.centers.rows().into_iter().map(|y| {
            let d2: f64 = x
                .iter()
                .zip(y.iter())
                .map(|(&xj, &yj)| {
                    let diff = xj - decay * yj;
                    diff * diff
                })
                .sum();
            -d2 / (2.0 * v)
        }));
        let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for wi in w.iter_mut() {
            *wi = (*wi - max).exp();
            total += *wi;
        }
        total
    }

    fn score_into(&self, x: &[f64], decay: f64, v: f64, out: &mut [f64], w: &mut Vec<f64>) {
        let total = self.unnormalised_weights(x, decay, v, w);
        out.iter_mut().for_each(|o| *o = 0.0);

        let mut accumulate = |i: usize, wi: f64| {
            for (o, &yj) in out.iter_mut().zip(self.centers.row(i).iter()) {
                *o += wi * decay * yj;
            }
        };
        let kept = match self.top_k {
            None => {
                for (i, &wi) in w.iter().enumerate() {
                    accumulate(i, wi);
                }
                total
            }
            Some(k) => {
                let mut order: Vec<usize> = (0..w.len()).collect();
                order.select_nth_unstable_by(k - 1, |&a, &b| w[b].total_cmp(&w[a]));
                order.truncate(k);
                order.sort_unstable();
                let mut kept = 0.0;
                for &i in &order {
                    accumulate(i, w[i]);
                    kept += w[i];
                }
                self.record_dropped(1.0 - kept / total);
                kept
            }
        };
        for (o, &xj) in out.iter_mut().zip(x) {
            *o = (*o / kept - xj) / v;
        }
    }

    fn record_dropped(&self, mass: f64) {
        let mut current = self.dropped_mass.load(Ordering::Relaxed);
        while mass > f64::from_bits(current) {
            match self.dropped_mass.compare_exchange_weak(
                current,
                mass.to_bits(),
                Ordering::Relaxed,
                Ordering::Relaxed,
            ) {
                Ok(_) => break,
                Err(seen) => current = seen,
            }
        }
    }
}

impl ScoreProvider for ExactMixtureScore {
    fn dim(&self) -> usize {
        self.centers.ncols()
    }

    fn evaluate(&self, points: ArrayView2<'_, f64>, m: f64) -> Result<Array2<f64>> {
        self.exact_score_batch(points, m)
    }
}
