//! Decaying stepsize schedules.
//!
//! The algorithm pairs a polynomially decaying iteration stepsize
//! `lambda_t = lambda0 / (t+1)^nu` with a per-agent quantization stepsize
//! `d_t = d0 / (t+1)^varsigma`. Both exponents live in (1/2, 1), and the
//! quantization exponent must decay strictly slower than the iteration
//! exponent (`max_i varsigma_i < nu`) so the per-round privacy loss stays
//! summable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dynamic quantization stepsize `d_t = d0 / (t+1)^varsigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantSchedule {
    pub d0: f64,
    pub varsigma: f64,
}

impl QuantSchedule {
    pub fn new(d0: f64, varsigma: f64) -> Result<Self> {
        if !(d0.is_finite() && d0 > 0.0) {
            return Err(Error::invalid(format!("d0 must be positive, got {d0}")));
        }
        if !(varsigma > 0.5 && varsigma < 1.0) {
            return Err(Error::invalid(format!(
                "varsigma must lie in (1/2, 1), got {varsigma}"
            )));
        }
        Ok(Self { d0, varsigma })
    }

    /// Stepsize at round `t`.
    pub fn stepsize(&self, t: usize) -> f64 {
        self.d0 / ((t + 1) as f64).powf(self.varsigma)
    }
}

/// Iteration stepsize `lambda_t = lambda0 / (t+1)^nu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub lambda0: f64,
    pub nu: f64,
}

impl StepSchedule {
    pub fn new(lambda0: f64, nu: f64) -> Result<Self> {
        if !(lambda0.is_finite() && lambda0 > 0.0) {
            return Err(Error::invalid(format!(
                "lambda0 must be positive, got {lambda0}"
            )));
        }
        if !(nu > 0.5 && nu < 1.0) {
            return Err(Error::invalid(format!("nu must lie in (1/2, 1), got {nu}")));
        }
        Ok(Self { lambda0, nu })
    }

    /// Stepsize at round `t`.
    pub fn stepsize(&self, t: usize) -> f64 {
        self.lambda0 / ((t + 1) as f64).powf(self.nu)
    }
}
