//! Energy-to-bits maps.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateKind {
    /// `g(t) = gamma * t`
    Linear,
    /// `g(t) = prefactor * log_base(1 + beta * t)`
    LogShannon,
}

/// The map `g` from transmit energy in a slot to bits delivered in that slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFunction {
    pub kind: RateKind,
    pub gamma: f64,
    pub beta: f64,
    pub half_factor: bool,
    pub log_base: f64,
}

impl RateFunction {
    pub fn linear(gamma: f64) -> Self {
        Self {
            kind: RateKind::Linear,
            gamma,
            beta: 1.0,
            half_factor: false,
            log_base: std::f64::consts::E,
        }
    }

    /// `ln(1 + beta t)`.
    pub fn natural_log(beta: f64) -> Self {
        Self::log(beta, std::f64::consts::E, false)
    }

    pub fn log(beta: f64, log_base: f64, half_factor: bool) -> Self {
        Self {
            kind: RateKind::LogShannon,
            gamma: 1.0,
            beta,
            half_factor,
            log_base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            RateKind::Linear if !(self.gamma > 0.0 && self.gamma.is_finite()) => Err(
                Error::Config(format!("linear rate needs gamma > 0, got {}", self.gamma)),
            ),
            RateKind::LogShannon if !(self.beta > 0.0 && self.beta.is_finite()) => Err(
                Error::Config(format!("log rate needs beta > 0, got {}", self.beta)),
            ),
            RateKind::LogShannon if !(self.log_base > 1.0 && self.log_base.is_finite()) => {
                Err(Error::Config(format!(
                    "log base must exceed 1, got {}",
                    self.log_base
                )))
            }
            _ => Ok(()),
        }
    }

    /// The map `t -> g(h t)` for a fixed channel gain `h > 0`.
    pub fn scaled(&self, h: f64) -> Self {
        let mut out = *self;
        match self.kind {
            RateKind::Linear => out.gamma *= h,
            RateKind::LogShannon => out.beta *= h,
        }
        out
    }

    pub fn is_linear(&self) -> bool {
        self.kind == RateKind::Linear
    }

    fn prefactor(&self) -> f64 {
        if self.half_factor {
            0.5
        } else {
            1.0
        }
    }

    /// `g(t)`, rejecting negative energy.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("g: energy must be >= 0, got {t}")));
        }
        Ok(self.bits(t))
    }

    /// `g^{-1}(b)`, rejecting negative bit counts.
    pub fn inverse(&self, b: f64) -> Result<f64> {
        if !(b >= 0.0) {
            return Err(Error::Domain(format!("g^-1: bits must be >= 0, got {b}")));
        }
        Ok(self.energy_for(b))
    }

    /// Unchecked `g(t)` for hot loops; `t` must be nonnegative.
    #[inline]
    pub fn bits(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0, "negative energy {t}");
        match self.kind {
            RateKind::Linear => self.gamma * t,
            RateKind::LogShannon => {
                self.prefactor() * (self.beta * t).ln_1p() / self.log_base.ln()
            }
        }
    }

    /// Unchecked `g^{-1}(b)`; may return `+inf` for very large `b`.
    #[inline]
    pub fn energy_for(&self, b: f64) -> f64 {
        debug_assert!(b >= 0.0, "negative bits {b}");
        match self.kind {
            RateKind::Linear => b / self.gamma,
            RateKind::LogShannon => {
                (b / self.prefactor() * self.log_base.ln()).exp_m1() / self.beta
            }
        }
    }
}
