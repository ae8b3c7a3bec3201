//! Score providers: `(points, m) ↦ ∇ log P_m(points)`.
//!
//! [`ExactMixtureScore`] is the closed-form score of the noised empirical
//! distribution. [`BridgeClient`] forwards evaluations to an external process
//! (typically a trained network) over the framed protocol in [`bridge`].

pub mod bridge;
mod exact;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};

pub use bridge::BridgeClient;
pub use exact::ExactMixtureScore;

use crate::{Error, Result};

/// Contract for anything that can evaluate the score field.
///
/// `evaluate` receives one point per row and must return an array of the
/// same shape. Implementations that cannot serve concurrent callers report
/// `concurrent() == false`; drivers then funnel their calls through a single
/// thread.
pub trait ScoreProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn evaluate(&self, points: ArrayView2<'_, f64>, m: f64) -> Result<Array2<f64>>;

    fn concurrent(&self) -> bool {
        true
    }
}

impl<P: ScoreProvider + ?Sized> ScoreProvider for Box<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn evaluate(&self, points: ArrayView2<'_, f64>, m: f64) -> Result<Array2<f64>> {
        (**self).evaluate(points, m)
    }

    fn concurrent(&self) -> bool {
        (**self).concurrent()
    }
}

impl<P: ScoreProvider + ?Sized> ScoreProvider for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn evaluate(&self, points: ArrayView2<'_, f64>, m: f64) -> Result<Array2<f64>> {
        (**self).evaluate(points, m)
    }

    fn concurrent(&self) -> bool {
        (**self).concurrent()
    }
}

/// `s ≡ 0`. Leaves only the linear decay term of the flow.
#[derive(Debug, Clone, Copy)]
pub struct ZeroScore {
    pub dim: usize,
}

impl ScoreProvider for ZeroScore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, points: ArrayView2<'_, f64>, _m: f64) -> Result<Array2<f64>> {
        check_shape(points, self.dim)?;
        Ok(Array2::zeros(points.raw_dim()))
    }
}

pub(crate) fn check_shape(points: ArrayView2<'_, f64>, dim: usize) -> Result<()> {
    if points.ncols() != dim {
        return Err(Error::domain(format!(
            "provider expects D={dim}, got points with {} columns",
            points.ncols()
        )));
    }
    Ok(())
}

/// Where scores come from, as written on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSpec {
    Exact,
    /// `bridge:stdio:<command line>`
    Stdio(String),
    /// `bridge:tcp:<host:port>`
    Tcp(String),
}

impl FromStr for ProviderSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "exact" {
            return Ok(ProviderSpec::Exact);
        }
        let rest = s
            .strip_prefix("bridge:")
            .ok_or_else(|| Error::domain(format!("unknown provider {s:?}")))?;
        if let Some(cmd) = rest.strip_prefix("stdio:").filter(|c| !c.trim().is_empty()) {
            Ok(ProviderSpec::Stdio(cmd.to_string()))
        } else if let Some(addr) = rest.strip_prefix("tcp:").filter(|a| !a.is_empty()) {
            Ok(ProviderSpec::Tcp(addr.to_string()))
        } else {
            Err(Error::domain(format!(
                "bridge provider must be bridge:stdio:<command> or bridge:tcp:<host:port>, got {s:?}"
            )))
        }
    }
}

impl fmt::Display for ProviderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProviderSpec::Exact => f.write_str("exact"),
            ProviderSpec::Stdio(cmd) => write!(f, "bridge:stdio:{cmd}"),
            ProviderSpec::Tcp(addr) => write!(f, "bridge:tcp:{addr}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_score_shape() {
        let z = ZeroScore { dim: 2 };
        let out = z.evaluate(array![[1.0, 2.0], [3.0, 4.0]].view(), 0.5).unwrap();
        assert_eq!(out, Array2::<f64>::zeros((2, 2)));
        assert!(z.evaluate(array![[1.0]].view(), 0.5).is_err());
    }

    #[test]
    fn provider_specs() {
        assert_eq!("exact".parse::<ProviderSpec>().unwrap(), ProviderSpec::Exact);
        assert_eq!(
            "bridge:stdio:python serve.py --exact d.f32".parse::<ProviderSpec>().unwrap(),
            ProviderSpec::Stdio("python serve.py --exact d.f32".into())
        );
        assert_eq!(
            "bridge:tcp:127.0.0.1:9000".parse::<ProviderSpec>().unwrap(),
            ProviderSpec::Tcp("127.0.0.1:9000".into())
        );
        for bad in ["", "bridge", "bridge:stdio:", "bridge:udp:x", "learned"] {
            assert!(bad.parse::<ProviderSpec>().is_err(), "{bad}");
        }
        let s = ProviderSpec::Tcp("h:1".into());
        assert_eq!(s.to_string().parse::<ProviderSpec>().unwrap(), s);
    }
}
