//! Probability-flow ODE on the `m` clock.
//!
//! With `m(t)` as the time variable the deterministic reverse process of the
//! VP SDE reads
//!
//! ```text
//! dx/dm = −(x + s(x, m))
//! ```
//!
//! Integrating with increasing `m` carries data towards noise, decreasing `m`
//! carries noise back to data. Rows of a batch never interact.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::schedule::{Schedule, StepGrid};
use crate::score::ScoreProvider;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Euler,
    /// Explicit trapezoidal (Heun) predictor-corrector.
    Heun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Data to noise, `m` increasing.
    Forward,
    /// Noise to data, `m` decreasing.
    Reverse,
}

/// Recorded knots of an integration, ordered in integration time.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub direction: Direction,
    pub knots: Vec<(f64, Array2<f64>)>,
}

impl Trajectory {
    pub fn start(&self) -> &Array2<f64> {
        &self.knots.first().expect("trajectory has knots").1
    }

    pub fn end(&self) -> &Array2<f64> {
        &self.knots.last().expect("trajectory has knots").1
    }

    pub fn into_end(self) -> Array2<f64> {
        self.knots.into_iter().last().expect("trajectory has knots").1
    }
}

fn velocity<P: ScoreProvider + ?Sized>(
    x: ArrayView2<'_, f64>,
    m: f64,
    provider: &P,
) -> Result<Array2<f64>> {
    let s = provider.evaluate(x, m)?;
    if s.dim() != x.dim() {
        return Err(Error::Integration {
            step: 0,
            row: 0,
            reason: format!("provider returned shape {:?} for input {:?}", s.dim(), x.dim()),
        });
    }
    if let Some(pos) = s.iter().position(|v| !v.is_finite()) {
        return Err(Error::Integration {
            step: 0,
            row: pos / x.ncols().max(1),
            reason: format!("non-finite score at m={m}"),
        });
    }
    Ok(-(s + x))
}

/// One step of signed size `dm` from `m`.
pub(crate) fn step<P: ScoreProvider + ?Sized>(
    x: ArrayView2<'_, f64>,
    m: f64,
    dm: f64,
    provider: &P,
    method: Method,
) -> Result<Array2<f64>> {
    let k1 = velocity(x, m, provider)?;
    match method {
        Method::Euler => Ok(&x + &(k1 * dm)),
        Method::Heun => {
            let predictor = &x + &(&k1 * dm);
            let k2 = velocity(predictor.view(), m + dm, provider)?;
            Ok(&x + &((k1 + k2) * (0.5 * dm)))
        }
    }
}

/// Advances `x` from `m_k` to `m_k + Δm`.
pub fn forward_step<P: ScoreProvider + ?Sized>(
    x: ArrayView2<'_, f64>,
    m_k: f64,
    dm: f64,
    provider: &P,
    method: Method,
) -> Result<Array2<f64>> {
    if !(dm > 0.0 && m_k > 0.0) {
        return Err(Error::domain(format!(
            "forward step needs m_k > 0 and Δm > 0, got m_k={m_k}, Δm={dm}"
        )));
    }
    step(x, m_k, dm, provider, method)
}

/// Streams `x` across `grid` in `direction`, calling `on_knot(k, m, x)` at every
/// knot including the start. `k` counts steps taken. Returns the final batch.
pub fn transport<P, F>(
    mut x: Array2<f64>,
    grid: &StepGrid,
    direction: Direction,
    provider: &P,
    method: Method,
    mut on_knot: F,
) -> Result<Array2<f64>>
where
    P: ScoreProvider + ?Sized,
    F: FnMut(usize, f64, &Array2<f64>) -> Result<()>,
{
    check_finite(&x)?;
    let ms = grid.m();
    let steps = grid.steps();
    let m_at = |k: usize| match direction {
        Direction::Forward => ms[k],
        Direction::Reverse => ms[steps - k],
    };
    on_knot(0, m_at(0), &x)?;
    for k in 0..steps {
        let (m, m_next) = (m_at(k), m_at(k + 1));
        x = step(x.view(), m, m_next - m, provider, method).map_err(|e| e.at_step(k + 1))?;
        on_knot(k + 1, m_next, &x)?;
    }
    Ok(x)
}

fn check_finite(x: &Array2<f64>) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(pos) => Err(Error::Integration {
            step: 0,
            row: pos / x.ncols().max(1),
            reason: "non-finite initial point".into(),
        }),
        None => Ok(()),
    }
}

/// Integrates over `grid`, keeping every knot when `store_all`, else only the endpoints.
pub fn integrate<P: ScoreProvider + ?Sized>(
    x: Array2<f64>,
    grid: &StepGrid,
    direction: Direction,
    provider: &P,
    method: Method,
    store_all: bool,
) -> Result<Trajectory> {
    let mut knots = Vec::with_capacity(if store_all { grid.steps() + 1 } else { 2 });
    let steps = grid.steps();
    let end = transport(x, grid, direction, provider, method, |k, m, xk| {
        if store_all || k == 0 {
            knots.push((m, xk.clone()));
        }
        Ok(())
    })?;
    if !store_all {
        let m_end = match direction {
            Direction::Forward => grid.m()[steps],
            Direction::Reverse => grid.m()[0],
        };
        knots.push((m_end, end));
    }
    Ok(Trajectory { direction, knots })
}

/// Data-to-noise over the schedule's grid, all knots recorded.
pub fn integrate_forward<P: ScoreProvider + ?Sized>(
    x0: Array2<f64>,
    schedule: &Schedule,
    provider: &P,
    method: Method,
) -> Result<Trajectory> {
    integrate(x0, &schedule.step_grid(), Direction::Forward, provider, method, true)
}

/// Noise-to-data over the schedule's grid, all knots recorded.
pub fn integrate_reverse<P: ScoreProvider + ?Sized>(
    xt: Array2<f64>,
    schedule: &Schedule,
    provider: &P,
    method: Method,
) -> Result<Trajectory> {
    integrate(xt, &schedule.step_grid(), Direction::Reverse, provider, method, true)
}
