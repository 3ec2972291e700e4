//! The Zipf-Mandelbrot family `theta_i ∝ (alpha + i)^(-beta)`, `i = 1..=k+1`.

use serde::{Deserialize, Serialize};

use crate::simplex::SimplexPoint;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZmParams {
    pub alpha: f64,
    pub beta: f64,
}

impl ZmParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let p = Self { alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > -1.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Zipf-Mandelbrot alpha must exceed -1, got {}",
                self.alpha
            )));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Zipf-Mandelbrot beta must be nonnegative, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// `ln theta_i` for `i = 1..=k+1`, computed without forming `C_k` directly.
pub(crate) fn zm_log_probs(params: ZmParams, k: usize) -> Vec<f64> {
    let mut logs: Vec<f64> = (1..=k + 1)
        .map(|i| -params.beta * (params.alpha + i as f64).ln())
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_c = max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logs.iter_mut().for_each(|l| *l -= log_c);
    logs
}

/// `ln C_k(alpha, beta) = ln sum_i (alpha + i)^(-beta)`.
pub fn log_normalizer(params: ZmParams, k: usize) -> f64 {
    let logs: Vec<f64> = (1..=k + 1)
        .map(|i| -params.beta * (params.alpha + i as f64).ln())
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// `ZM_k(alpha, beta)` as a point on the `k`-simplex.
pub fn zm_distribution(params: ZmParams, k: usize) -> Result<SimplexPoint> {
    params.validate()?;
    if k < 1 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let probs: Vec<f64> = zm_log_probs(params, k).into_iter().map(f64::exp).collect();
    SimplexPoint::normalized(probs)
}

/// `KL(uniform || ZM_k(alpha, beta))`, i.e.
/// `(k+1)^-1 sum_i ln(C_k (alpha+i)^beta / (k+1))`.
///
/// Decreasing in `alpha` for fixed `beta > 0` and zero at `beta = 0`.
pub fn uniform_kl(params: ZmParams, k: usize) -> f64 {
    let d = (k + 1) as f64;
    let logs = zm_log_probs(params, k);
    (-logs.iter().sum::<f64>() / d - d.ln()).max(0.0)
}
