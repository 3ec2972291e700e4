//! Log-space helpers shared by the density and estimator code.

use statrs::function::gamma::ln_gamma;

/// `ln n!`
pub fn ln_factorial(n: u64) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

/// Log of the multivariate beta function `prod Γ(a_i) / Γ(sum a_i)`.
pub fn ln_multi_beta(alphas: &[f64]) -> f64 {
    let total: f64 = alphas.iter().sum();
    alphas.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(total)
}

/// `c * ln(x)` with the convention `0 * ln(0) = 0`.
#[inline]
pub fn xlogy(c: f64, x: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        c * x.ln()
    }
}

/// Streaming log-sum-exp that also tracks the sum of squared weights.
///
/// Weights are supplied on the log scale; `-inf` entries are zero weights.
#[derive(Debug, Clone, Copy)]
pub struct LogWeightAccumulator {
    max: f64,
    sum: f64,
    sum_sq: f64,
    count: u64,
    nonzero: u64,
}

impl Default for LogWeightAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl LogWeightAccumulator {
    pub fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
            sum_sq: 0.0,
            count: 0,
            nonzero: 0,
        }
    }

    pub fn push(&mut self, log_w: f64) {
        self.count += 1;
        if log_w == f64::NEG_INFINITY {
            return;
        }
        debug_assert!(!log_w.is_nan());
        self.nonzero += 1;
        if log_w > self.max {
            let scale = (self.max - log_w).exp();
            self.sum *= scale;
            self.sum_sq *= scale * scale;
            self.max = log_w;
        }
        let w = (log_w - self.max).exp();
        self.sum += w;
        self.sum_sq += w * w;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn nonzero(&self) -> u64 {
        self.nonzero
    }

    /// `ln sum w`
    pub fn log_sum(&self) -> f64 {
        if self.nonzero == 0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }

    /// `ln mean w`
    pub fn log_mean(&self) -> f64 {
        self.log_sum() - (self.count as f64).ln()
    }

    /// Effective sample size `(sum w)^2 / sum w^2`.
    pub fn ess(&self) -> f64 {
        if self.nonzero == 0 {
            0.0
        } else {
            self.sum * self.sum / self.sum_sq
        }
    }

    /// Standard error of `ln mean w`, i.e. the relative standard error of the
    /// mean weight (delta method).
    pub fn log_mean_se(&self) -> f64 {
        if self.nonzero == 0 || self.count < 2 {
            return f64::INFINITY;
        }
        let n = self.count as f64;
        let mean = self.sum / n;
        let var = (self.sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
        var.sqrt() / (mean * n.sqrt())
    }
}

/// Numerically stable `ln(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}
