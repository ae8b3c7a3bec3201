//! Cohort statistics: two-sample t-tests, the nearest-neighbour memorisation
//! ratio, top/bottom rankings and histograms.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::growth::GrowthSeries;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TTestKind {
    /// Unequal variances, Welch–Satterthwaite degrees of freedom.
    #[default]
    Welch,
    /// Pooled variance, `n_a + n_b − 2` degrees of freedom.
    Student,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub kind: TTestKind,
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    /// Two-sided.
    pub p_value: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub var_a: f64,
    pub var_b: f64,
    pub n_a: usize,
    pub n_b: usize,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    ttest(a, b, TTestKind::Welch)
}

pub fn ttest(a: &[f64], b: &[f64], kind: TTestKind) -> Result<TTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::domain(format!(
            "t-test needs at least 2 values per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::domain("t-test input contains non-finite values"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let ((ma, va), (mb, vb)) = (mean_var(a), mean_var(b));
    if va == 0.0 && vb == 0.0 {
        if ma == mb {
            return Ok(TTestResult {
                kind,
                t_statistic: 0.0,
                degrees_of_freedom: na + nb - 2.0,
                p_value: 1.0,
                mean_a: ma,
                mean_b: mb,
                var_a: va,
                var_b: vb,
                n_a: a.len(),
                n_b: b.len(),
            });
        }
        return Err(Error::domain("both groups have zero variance"));
    }
    let (se2, df) = match kind {
        TTestKind::Welch => {
            let (qa, qb) = (va / na, vb / nb);
            let df = (qa + qb).powi(2) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
            (qa + qb, df)
        }
        TTestKind::Student => {
            let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0);
            (pooled * (1.0 / na + 1.0 / nb), na + nb - 2.0)
        }
    };
    let t = (ma - mb) / se2.sqrt();
    Ok(TTestResult {
        kind,
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: t_two_sided_p(t, df)?,
        mean_a: ma,
        mean_b: mb,
        var_a: va,
        var_b: vb,
        n_a: a.len(),
        n_b: b.len(),
    })
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) || t.is_nan() {
        return Err(Error::domain(format!("invalid t={t}, df={df}")));
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    let x = df / (df + t * t);
    Ok(reg_inc_beta(df / 2.0, 0.5, x)?.clamp(0.0, 1.0))
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("I_x(a,b) needs a,b > 0 and x in [0,1], got a={a}, b={b}, x={x}")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // The continued fraction converges quickly for x < (a+1)/(a+b+2).
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_cf(a, b, x)? / a)
    } else {
        Ok(1.0 - front * beta_cf(b, a, 1.0 - x)? / b)
    }
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_cf(a: f64, b: f64, x: f64) -> Result<f64> {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            return Ok(h);
        }
    }
    Err(Error::domain(format!("incomplete beta did not converge for a={a}, b={b}, x={x}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarliniConfig {
    pub alpha: f64,
    pub n_neighbors: usize,
    /// Keep training rows equal to the candidate `x` in the neighbour set.
    pub include_candidate: bool,
}

impl Default for CarliniConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            n_neighbors: 50,
            include_candidate: false,
        }
    }
}

impl CarliniConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::domain(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.n_neighbors == 0 {
            return Err(Error::domain("n_neighbors must be at least 1"));
        }
        Ok(())
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `‖x̂ − x‖ / (α · mean ‖x̂ − y‖)` over the `n` training samples nearest `x̂`.
pub fn carlini_metric(x_hat: &[f64], x: &[f64], train: &Dataset, cfg: &CarliniConfig) -> Result<f64> {
    cfg.validate()?;
    let dim = train.dim();
    if x_hat.len() != dim || x.len() != dim {
        return Err(Error::domain(format!(
            "vectors must have D={dim}, got {} and {}",
            x_hat.len(),
            x.len()
        )));
    }
    let mut dists: Vec<f64> = (0..train.len())
        .map(|i| train.row_f64(i))
        .filter(|y| cfg.include_candidate || y.as_slice() != x)
        .map(|y| l2(x_hat, &y))
        .collect();
    if dists.len() < cfg.n_neighbors {
        return Err(Error::domain(format!(
            "{} neighbour candidates available, {} requested",
            dists.len(),
            cfg.n_neighbors
        )));
    }
    dists.sort_by(f64::total_cmp);
    let mean = dists[..cfg.n_neighbors].iter().sum::<f64>() / cfg.n_neighbors as f64;
    if mean == 0.0 {
        return Err(Error::Degenerate(
            "every nearest neighbour coincides with the generated sample".into(),
        ));
    }
    Ok(l2(x_hat, x) / (cfg.alpha * mean))
}

/// Ids ordered by `value` descending, ties broken by id ascending.
fn order_desc(items: &[(String, f64)]) -> Result<Vec<String>> {
    if items.iter().any(|(_, v)| v.is_nan()) {
        return Err(Error::domain("cannot rank NaN values"));
    }
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.sort_by(|&i, &j| items[j].1.total_cmp(&items[i].1).then_with(|| items[i].0.cmp(&items[j].0)));
    Ok(idx.into_iter().map(|i| items[i].0.clone()).collect())
}

/// First and last `k` ids after sorting by `value` descending (ties by id).
/// The bottom list keeps the descending order.
pub fn rank_values(items: &[(String, f64)], k: usize) -> Result<(Vec<String>, Vec<String>)> {
    if k == 0 || k > items.len() {
        return Err(Error::domain(format!("k must be in 1..={}, got {k}", items.len())));
    }
    let order = order_desc(items)?;
    let bottom = order[order.len() - k..].to_vec();
    let top = order[..k].to_vec();
    Ok((top, bottom))
}

/// [`rank_values`] over `log_l` at the 1-based `at_step`.
pub fn rank_topk(report: &[GrowthSeries], k: usize, at_step: usize) -> Result<(Vec<String>, Vec<String>)> {
    let items = report
        .iter()
        .map(|s| {
            s.at_step(at_step)
                .map(|v| (s.target_id.clone(), v))
                .ok_or_else(|| {
                    Error::domain(format!(
                        "step {at_step} out of range for {} ({} steps)",
                        s.target_id,
                        s.log_l.len()
                    ))
                })
        })
        .collect::<Result<Vec<_>>>()?;
    rank_values(&items, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width bins over `[min, max]`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::domain("histogram of an empty list"));
    }
    if bins == 0 {
        return Err(Error::domain("histogram needs at least one bin"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("histogram input contains non-finite values"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut h = Histogram { edges, counts: Vec::new() };
    h.counts = h.count(values);
    Ok(h)
}

impl Histogram {
    /// Counts of `values` in these bins. Values beyond the edges land in
    /// the first or last bin.
    pub fn count(&self, values: &[f64]) -> Vec<usize> {
        let bins = self.edges.len() - 1;
        let lo = self.edges[0];
        let width = (self.edges[bins] - lo) / bins as f64;
        let mut counts = vec![0; bins];
        for &v in values {
            // Negative offsets saturate to bin 0 in the cast.
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welch_equal_variance_example() {
        let r = welch_ttest(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!((r.t_statistic + 1.0).abs() < 1e-14);
        assert!((r.degrees_of_freedom - 8.0).abs() < 1e-12);
        // 2·sf(1, 8) from an independent t-distribution implementation.
        assert!((r.p_value - 0.346_593_507_087_334_16).abs() < 1e-12, "{}", r.p_value);
        let s = ttest(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0], TTestKind::Student).unwrap();
        assert!((s.p_value - r.p_value).abs() < 1e-14);
    }

    #[test]
    fn identical_groups() {
        let a = [1.0, 4.0, 2.0];
        let r = welch_ttest(&a, &a).unwrap();
        assert_eq!((r.t_statistic, r.p_value), (0.0, 1.0));
        let c = welch_ttest(&[3.0, 3.0], &[3.0, 3.0]).unwrap();
        assert_eq!(c.p_value, 1.0);
    }

    #[test]
    fn extreme_separation() {
        let a = [0.0, 0.001, -0.001, 0.0005];
        let b: Vec<f64> = a.iter().map(|v| v + 1000.0).collect();
        assert!(welch_ttest(&a, &b).unwrap().p_value < 1e-6);
    }

    #[test]
    fn ttest_domain() {
        assert!(welch_ttest(&[1.0], &[1.0, 2.0]).is_err());
        assert!(welch_ttest(&[1.0, 1.0], &[2.0, 2.0]).is_err());
        assert!(welch_ttest(&[1.0, f64::NAN], &[2.0, 3.0]).is_err());
    }

    #[test]
    fn ln_gamma_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, 1) = x and I_x(a, 1) = x^a.
        for x in [0.1, 0.5, 0.9] {
            assert!((reg_inc_beta(1.0, 1.0, x).unwrap() - x).abs() < 1e-14);
            assert!((reg_inc_beta(3.0, 1.0, x).unwrap() - x.powi(3)).abs() < 1e-14);
        }
        assert_eq!(reg_inc_beta(2.0, 3.0, 0.0).unwrap(), 0.0);
        assert_eq!(reg_inc_beta(2.0, 3.0, 1.0).unwrap(), 1.0);
        assert!(reg_inc_beta(0.0, 1.0, 0.5).is_err());
        // t with one degree of freedom is Cauchy: P(|T| > 1) = 1/2.
        assert!((t_two_sided_p(1.0, 1.0).unwrap() - 0.5).abs() < 1e-14);
    }

    fn train() -> Dataset {
        Dataset::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]).unwrap()
    }

    #[test]
    fn carlini_examples() {
        let ds = train();
        let cfg = CarliniConfig { alpha: 1.0, n_neighbors: 3, include_candidate: false };
        let origin = [0.0, 0.0];
        assert_eq!(carlini_metric(&[1.0, 0.0], &[1.0, 0.0], &ds, &cfg).unwrap(), 0.0);
        // All neighbours and x at distance 1 from x̂.
        assert_eq!(carlini_metric(&origin, &[1.0, 0.0], &ds, &cfg).unwrap(), 1.0);
        let half = CarliniConfig { alpha: 2.0, ..cfg };
        assert_eq!(carlini_metric(&origin, &[1.0, 0.0], &ds, &half).unwrap(), 0.5);
    }

    #[test]
    fn carlini_candidate_modes() {
        let ds = train();
        let x_hat = [0.9, 0.0];
        let x = [1.0, 0.0];
        let excl = CarliniConfig { alpha: 1.0, n_neighbors: 1, include_candidate: false };
        let incl = CarliniConfig { include_candidate: true, ..excl };
        let d_next = (0.81f64 + 1.0).sqrt();
        assert!((carlini_metric(&x_hat, &x, &ds, &excl).unwrap() - 0.1 / d_next).abs() < 1e-15);
        assert!((carlini_metric(&x_hat, &x, &ds, &incl).unwrap() - 1.0).abs() < 1e-12);
        let too_many = CarliniConfig { n_neighbors: 4, ..excl };
        assert!(carlini_metric(&x_hat, &x, &ds, &too_many).is_err());
    }

    #[test]
    fn carlini_zero_denominator() {
        let ds = Dataset::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5 + 1e-3]]).unwrap();
        let cfg = CarliniConfig { alpha: 1.0, n_neighbors: 1, include_candidate: false };
        let err = carlini_metric(&[0.5, 0.5], &[0.5, 0.501], &ds, &cfg);
        assert!(matches!(err, Err(Error::Degenerate(_))), "{err:?}");
        assert!(CarliniConfig { alpha: 0.0, ..cfg }.validate().is_err());
        assert!(CarliniConfig { n_neighbors: 0, ..cfg }.validate().is_err());
    }

    fn series(id: &str, v: f64) -> GrowthSeries {
        GrowthSeries {
            target_id: id.into(),
            log_l: vec![v / 2.0, v],
            per_step: vec![v / 2.0, v / 2.0],
            replacements: 0,
        }
    }

    #[test]
    fn rank_examples() {
        let r = [series("a", 5.0), series("b", 3.0)];
        let (top, bottom) = rank_topk(&r, 1, 2).unwrap();
        assert_eq!((top, bottom), (vec!["a".to_string()], vec!["b".to_string()]));
        let (top, bottom) = rank_topk(&r, 2, 2).unwrap();
        assert_eq!(top, bottom);
        assert!(rank_topk(&r, 0, 2).is_err());
        assert!(rank_topk(&r, 3, 2).is_err());
        assert!(rank_topk(&r, 1, 3).is_err());
    }

    #[test]
    fn rank_ties_by_id() {
        let r = [series("c", 1.0), series("a", 1.0), series("b", 2.0)];
        let (top, bottom) = rank_topk(&r, 2, 2).unwrap();
        assert_eq!(top, vec!["b", "a"]);
        assert_eq!(bottom, vec!["a", "c"]);
    }

    #[test]
    fn histogram_examples() {
        let h = histogram(&[1.0, 2.0, 3.0], 1).unwrap();
        assert_eq!(h.counts, vec![3]);
        assert_eq!(h.edges, vec![1.0, 3.0]);
        assert_eq!(histogram(&[0.0, 1.0], 2).unwrap().counts, vec![1, 1]);
        assert_eq!(histogram(&[4.0, 4.0], 3).unwrap().counts.iter().sum::<usize>(), 2);
        assert!(histogram(&[], 2).is_err());
        assert!(histogram(&[1.0], 0).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn group() -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(-100.0f64..100.0, 2..30)
        }

        proptest! {
            #[test]
            fn swap_negates_t(a in group(), b in group()) {
                let (Ok(ab), Ok(ba)) = (welch_ttest(&a, &b), welch_ttest(&b, &a)) else {
                    return Ok(());
                };
                prop_assert!((ab.t_statistic + ba.t_statistic).abs() <= 1e-12 * ab.t_statistic.abs().max(1.0));
                prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&ab.p_value));
                prop_assert!(ab.degrees_of_freedom > 0.0);
            }

            #[test]
            fn carlini_scale_invariant(
                rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 6..12),
                x_hat in prop::collection::vec(-1.0f64..1.0, 3),
                c in 0.1f64..10.0,
            ) {
                let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * c).collect()).collect();
                let (Ok(ds), Ok(ds_c)) = (Dataset::from_rows(&rows), Dataset::from_rows(&scaled)) else {
                    return Ok(());
                };
                // Use the stored f32 rows so both sides see identical inputs.
                let x = ds.row_f64(0);
                let x_c = ds_c.row_f64(0);
                let xh_c: Vec<f64> = x_hat.iter().map(|v| v * c).collect();
                let cfg = CarliniConfig { alpha: 0.5, n_neighbors: 3, include_candidate: false };
                if let (Ok(a), Ok(b)) = (
                    carlini_metric(&x_hat, &x, &ds, &cfg),
                    carlini_metric(&xh_c, &x_c, &ds_c, &cfg),
                ) {
                    prop_assert!((a - b).abs() <= 1e-5 * a.max(1.0), "{a} vs {b}");
                }
            }

            #[test]
            fn rank_invariant_under_monotone_map(values in prop::collection::vec(-50.0f64..50.0, 1..40), k_frac in 0.0f64..1.0) {
                let items: Vec<(String, f64)> = values.iter().enumerate().map(|(i, v)| (format!("{i:03}"), *v)).collect();
                let mapped: Vec<(String, f64)> = items.iter().map(|(id, v)| (id.clone(), (v / 10.0).exp() + 3.0 * v)).collect();
                let k = 1 + ((values.len() - 1) as f64 * k_frac) as usize;
                prop_assert_eq!(rank_values(&items, k).unwrap(), rank_values(&mapped, k).unwrap());
            }

            #[test]
            fn histogram_counts_sum(values in prop::collection::vec(-1e3f64..1e3, 1..100), bins in 1usize..20) {
                let h = histogram(&values, bins).unwrap();
                prop_assert_eq!(h.counts.iter().sum::<usize>(), values.len());
                prop_assert_eq!(h.edges.len(), bins + 1);
            }
        }
    }
}
