//! Ease-of-reproduction measurements for unconditional diffusion models.
//!
//! A small sphere around a training sample is transported by the
//! deterministic probability-flow ODE of a variance-preserving diffusion.
//! Samples whose neighbourhood expands quickly occupy a large region of the
//! terminal noise space, and are therefore generated (reproduced) more often.
//!
//! The crate is organised bottom-up:
//!
//! | module | contents |
//! |--------|----------|
//! | [`schedule`] | VP noise schedule, `t ↔ m` clock, step grids |
//! | [`dataset`] | flat sample matrices, CIFAR-10 / raw loaders, flips, splits |
//! | [`score`] | the [`ScoreProvider`] contract, exact mixture score, bridge client |
//! | [`ode`] | Euler / Heun transport in the `m` clock |
//! | [`growth`] | frame transport and the cumulative log volume growth |
//! | [`oracle`] | Monte-Carlo generation frequencies, 2-D toy dynamics, closed forms |
//! | [`stats`] | Welch t-test, nearest-neighbour memorisation ratio, rankings |
//! | [`config`] | JSON configuration shared by the CLI |

// `!(x > 0.0)` rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
mod error;
pub mod growth;
pub mod ode;
pub mod oracle;
pub mod schedule;
pub mod score;
pub mod stats;

pub use config::Config;
pub use dataset::{Dataset, PixelLayout, ValueRange};
pub use error::{Error, Result};
pub use growth::{GrowthConfig, GrowthReport, GrowthSeries};
pub use ode::{Direction, Method, Trajectory};
pub use oracle::OracleReport;
pub use schedule::{GridKind, Schedule, StepGrid};
pub use score::{ExactMixtureScore, ScoreProvider};
pub use stats::{CarliniConfig, TTestResult};
