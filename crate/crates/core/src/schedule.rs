//! Variance-preserving noise schedule.
//!
//! The forward SDE is `dx = -½β(t)x dt + √β(t) dw` with a linear
//! `β(t) = β_min + t(β_max − β_min)`. Its perturbation kernel is
//! `N(e^{−m(t)} x₀, v(t) I)` where
//!
//! ```text
//! m(t) = ½ t β_min + ¼ t² (β_max − β_min)
//! v(m) = 1 − e^{−2m}
//! ```
//!
//! All dynamics in this crate run on the `m` clock. [`StepGrid`] holds the
//! discretisation shared by the integrators.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How the `num_steps + 1` knots are placed between `t_eps` and `t_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    /// Uniform in `t`, mapped through `m(t)`.
    #[default]
    UniformT,
    /// Uniform in `m`.
    UniformM,
    /// Geometric in `m`. Resolves the stiff `1/v` region near the data end,
    /// which Heun needs for closed-form accuracy at moderate step counts.
    LogM,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ScheduleParams {
    beta_min: f64,
    beta_max: f64,
    t_eps: f64,
    t_max: f64,
    num_steps: usize,
    grid_kind: GridKind,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            beta_min: 0.1,
            beta_max: 20.0,
            t_eps: 1e-3,
            t_max: 1.0,
            num_steps: 1000,
            grid_kind: GridKind::UniformT,
        }
    }
}

/// Validated VP schedule. Immutable once built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleParams", into = "ScheduleParams")]
pub struct Schedule {
    beta_min: f64,
    beta_max: f64,
    t_eps: f64,
    t_max: f64,
    num_steps: usize,
    grid_kind: GridKind,
}

impl TryFrom<ScheduleParams> for Schedule {
    type Error = Error;

    fn try_from(p: ScheduleParams) -> Result<Self> {
        Schedule::new(p.beta_min, p.beta_max, p.t_eps, p.t_max, p.num_steps, p.grid_kind)
    }
}

impl From<Schedule> for ScheduleParams {
    fn from(s: Schedule) -> Self {
        Self {
            beta_min: s.beta_min,
            beta_max: s.beta_max,
            t_eps: s.t_eps,
            t_max: s.t_max,
            num_steps: s.num_steps,
            grid_kind: s.grid_kind,
        }
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::try_from(ScheduleParams::default()).expect("default schedule is valid")
    }
}

impl Schedule {
    pub fn new(
        beta_min: f64,
        beta_max: f64,
        t_eps: f64,
        t_max: f64,
        num_steps: usize,
        grid_kind: GridKind,
    ) -> Result<Self> {
        if !(beta_min > 0.0 && beta_min < beta_max && beta_max.is_finite()) {
            return Err(Error::domain(format!(
                "need 0 < beta_min < beta_max, got beta_min={beta_min}, beta_max={beta_max}"
            )));
        }
        if !(t_eps > 0.0 && t_eps < t_max && t_max <= 1.0) {
            return Err(Error::domain(format!(
                "need 0 < t_eps < t_max <= 1, got t_eps={t_eps}, t_max={t_max}"
            )));
        }
        if num_steps == 0 {
            return Err(Error::domain("num_steps must be at least 1"));
        }
        Ok(Self {
            beta_min,
            beta_max,
            t_eps,
            t_max,
            num_steps,
            grid_kind,
        })
    }

    pub fn beta_min(&self) -> f64 {
        self.beta_min
    }

    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }

    pub fn t_eps(&self) -> f64 {
        self.t_eps
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn grid_kind(&self) -> GridKind {
        self.grid_kind
    }

    pub fn with_steps(mut self, num_steps: usize) -> Result<Self> {
        if num_steps == 0 {
            return Err(Error::domain("num_steps must be at least 1"));
        }
        self.num_steps = num_steps;
        Ok(self)
    }

    pub fn with_grid(mut self, grid_kind: GridKind) -> Self {
        self.grid_kind = grid_kind;
        self
    }

    pub fn beta(&self, t: f64) -> Result<f64> {
        check_unit_time(t)?;
        Ok(self.beta_min + t * (self.beta_max - self.beta_min))
    }

    pub fn m_of_t(&self, t: f64) -> Result<f64> {
        check_unit_time(t)?;
        Ok(self.m_unchecked(t))
    }

    fn m_unchecked(&self, t: f64) -> f64 {
        0.5 * t * self.beta_min + 0.25 * t * t * (self.beta_max - self.beta_min)
    }

    /// Inverts `m(t)` on `[0, 1]`.
    pub fn t_of_m(&self, m: f64) -> Result<f64> {
        if !(m >= 0.0 && m <= self.m_unchecked(1.0) * (1.0 + 1e-12)) {
            return Err(Error::domain(format!("m={m} is outside m([0, 1])")));
        }
        let a = 0.5 * self.beta_min;
        let b = 0.25 * (self.beta_max - self.beta_min);
        // Rationalised root of b t² + a t − m = 0; no cancellation for small m.
        Ok((2.0 * m / (a + (a * a + 4.0 * b * m).sqrt())).min(1.0))
    }

    /// Variance of the perturbation kernel, `1 − e^{−2m}`.
    pub fn v_of_m(m: f64) -> Result<f64> {
        if !(m >= 0.0) {
            return Err(Error::domain(format!("m must be non-negative, got {m}")));
        }
        Ok(variance(m))
    }

    pub fn m_start(&self) -> f64 {
        self.m_unchecked(self.t_eps)
    }

    pub fn m_end(&self) -> f64 {
        self.m_unchecked(self.t_max)
    }

    /// Samples the perturbation kernel: `e^{−m(t)} x₀ + √v(t) · noise`.
    pub fn perturb(&self, x0: &[f64], t: f64, noise: &[f64]) -> Result<Vec<f64>> {
        if x0.len() != noise.len() {
            return Err(Error::domain(format!(
                "point has {} entries but noise has {}",
                x0.len(),
                noise.len()
            )));
        }
        let m = self.m_of_t(t)?;
        let decay = (-m).exp();
        let sd = variance(m).sqrt();
        Ok(x0
            .iter()
            .zip(noise)
            .map(|(&x, &e)| decay * x + sd * e)
            .collect())
    }

    pub fn step_grid(&self) -> StepGrid {
        let n = self.num_steps;
        let m0 = self.m_start();
        let m_last = self.m_end();
        let mut t = Vec::with_capacity(n + 1);
        let mut m = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let frac = k as f64 / n as f64;
            let (tk, mk) = match self.grid_kind {
                GridKind::UniformT => {
                    let tk = self.t_eps + frac * (self.t_max - self.t_eps);
                    (tk, self.m_unchecked(tk))
                }
                GridKind::UniformM => {
                    let mk = m0 + frac * (m_last - m0);
                    (self.t_of_m(mk).unwrap_or(self.t_max), mk)
                }
                GridKind::LogM => {
                    let mk = m0 * (frac * (m_last / m0).ln()).exp();
                    (self.t_of_m(mk).unwrap_or(self.t_max), mk)
                }
            };
            t.push(tk);
            m.push(mk);
        }
        // Pin the endpoints so every grid kind spans exactly [m(t_eps), m(t_max)].
        t[0] = self.t_eps;
        m[0] = m0;
        t[n] = self.t_max;
        m[n] = m_last;
        StepGrid { t, m }
    }
}

pub(crate) fn variance(m: f64) -> f64 {
    -(-2.0 * m).exp_m1()
}

fn check_unit_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::domain(format!("t must lie in [0, 1], got {t}")))
    }
}

/// Knots `(t_k, m_k)` for `k = 0..=T`, strictly increasing in `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGrid {
    t: Vec<f64>,
    m: Vec<f64>,
}

impl StepGrid {
    /// Builds a grid from explicit `m` knots.
    pub fn from_m(m: Vec<f64>) -> Result<Self> {
        if m.len() < 2 {
            return Err(Error::domain("a grid needs at least two knots"));
        }
        if m[0] <= 0.0 || m.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("grid knots must be positive and strictly increasing"));
        }
        Ok(Self {
            t: vec![f64::NAN; m.len()],
            m,
        })
    }

    /// Number of steps `T`; there are `T + 1` knots.
    pub fn steps(&self) -> usize {
        self.m.len() - 1
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn m(&self) -> &[f64] {
        &self.m
    }

    /// `Δm_k = m_{k+1} − m_k` for `k < T`.
    pub fn dm(&self, k: usize) -> f64 {
        self.m[k + 1] - self.m[k]
    }

    /// `(t_k, m_k, Δm_k)` for every step.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.steps()).map(move |k| (self.t[k], self.m[k], self.dm(k)))
    }

    /// The first `steps` steps of this grid.
    pub fn truncated(&self, steps: usize) -> Result<Self> {
        if steps == 0 || steps > self.steps() {
            return Err(Error::domain(format!(
                "cannot truncate a {}-step grid to {steps} steps",
                self.steps()
            )));
        }
        Ok(Self {
            t: self.t[..=steps].to_vec(),
            m: self.m[..=steps].to_vec(),
        })
    }
}
