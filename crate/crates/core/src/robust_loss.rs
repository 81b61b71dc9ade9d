//! Loss functions `rho`, their derivatives `psi` and second derivatives `psi'`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default Huber tuning constant (95% efficiency under normal errors).
pub const DEFAULT_HUBER_L: f64 = 1.345;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    LeastSquares,
    Huber,
    Absolute,
    EpsInsensitive,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::LeastSquares => "least-squares",
            LossKind::Huber => "huber",
            LossKind::Absolute => "absolute",
            LossKind::EpsInsensitive => "eps-insensitive",
        }
    }
}

/// A loss family with its tuning constants.
///
/// The Huber threshold is `huber_l * scale`, where `scale` is a robust
/// residual scale supplied by the caller; `eps` is on the data scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub huber_l: f64,
    pub eps: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self::huber(DEFAULT_HUBER_L)
    }
}

impl LossSpec {
    pub fn least_squares() -> Self {
        Self {
            kind: LossKind::LeastSquares,
            huber_l: DEFAULT_HUBER_L,
            eps: 0.0,
        }
    }

    pub fn huber(l: f64) -> Self {
        Self {
            kind: LossKind::Huber,
            huber_l: l,
            eps: 0.0,
        }
    }

    pub fn absolute() -> Self {
        Self {
            kind: LossKind::Absolute,
            huber_l: DEFAULT_HUBER_L,
            eps: 0.0,
        }
    }

    pub fn eps_insensitive(eps: f64) -> Self {
        Self {
            kind: LossKind::EpsInsensitive,
            huber_l: DEFAULT_HUBER_L,
            eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.huber_l > 0.0 && self.huber_l.is_finite()) {
            return Err(Error::Config(format!("huber_l must be positive, got {}", self.huber_l)));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("eps must be nonnegative, got {}", self.eps)));
        }
        Ok(())
    }

    /// Whether `psi'` exists, i.e. whether linearized variance is available.
    pub fn has_derivative(&self) -> bool {
        matches!(self.kind, LossKind::LeastSquares | LossKind::Huber)
    }

    pub fn rho(&self, x: f64, scale: f64) -> f64 {
        match self.kind {
            LossKind::LeastSquares => 0.5 * x * x,
            LossKind::Huber => {
                let k = self.huber_l * scale;
                let a = x.abs();
                if a < k {
                    0.5 * x * x
                } else {
                    k * a - 0.5 * k * k
                }
            }
            LossKind::Absolute => x.abs(),
            LossKind::EpsInsensitive => (x.abs() - self.eps).max(0.0),
        }
    }

    pub fn psi(&self, x: f64, scale: f64) -> f64 {
        match self.kind {
            LossKind::LeastSquares => x,
            LossKind::Huber => {
                let k = self.huber_l * scale;
                x.clamp(-k, k)
            }
            LossKind::Absolute => sign(x),
            LossKind::EpsInsensitive => {
                if x.abs() > self.eps {
                    sign(x)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn psi_prime(&self, x: f64, scale: f64) -> Result<f64> {
        match self.kind {
            LossKind::LeastSquares => Ok(1.0),
            LossKind::Huber => Ok(if x.abs() < self.huber_l * scale { 1.0 } else { 0.0 }),
            other => Err(Error::UnsupportedDerivative(other.name())),
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
