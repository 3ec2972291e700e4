//! Eliciting a Dirichlet prior on the weights of an ordered probability
//! vector: an equispaced ordered mode plus a concentration chosen so that
//! all probabilities lie in `(l, u)` with probability at least `gamma`.

use serde::{Deserialize, Serialize};

use crate::sampling::{par_batches, DirichletSampler, RngStream, DEFAULT_BATCH};
use crate::simplex::{ordered_from_weights_slice, DirichletParams, SimplexPoint};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElicitationInput {
    pub k: usize,
    pub delta: f64,
    pub l: f64,
    pub u: f64,
    pub gamma: f64,
}

impl ElicitationInput {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        check_spacing(self.k, self.delta)?;
        if !(0.0 <= self.l && self.l < self.u && self.u <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= l < u <= 1, got l = {}, u = {}",
                self.l, self.u
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Largest admissible spacing, `2 / (k (k + 1))`.
pub fn max_spacing(k: usize) -> f64 {
    2.0 / (k * (k + 1)) as f64
}

fn check_spacing(k: usize, delta: f64) -> Result<()> {
    let hi = max_spacing(k);
    if !(delta >= 0.0 && delta <= hi * (1.0 + 1e-12)) {
        return Err(Error::InvalidParameter(format!(
            "spacing must lie in [0, {hi}], got {delta}"
        )));
    }
    Ok(())
}

/// The equispaced ordered point `theta*` with spacing `delta` and its
/// weights `xi`.
pub fn equispaced_mode(k: usize, delta: f64) -> Result<(SimplexPoint, SimplexPoint)> {
    check_spacing(k, delta)?;
    let kf = k as f64;
    let first = kf * delta / 2.0 + 1.0 / (kf + 1.0);
    let theta: Vec<f64> = (0..=k)
        .map(|i| (first - i as f64 * delta).max(0.0))
        .collect();
    let mut xi: Vec<f64> = (1..=k).map(|i| i as f64 * delta).collect();
    xi.push((1.0 - kf * (kf + 1.0) * delta / 2.0).max(0.0));
    Ok((SimplexPoint::normalized(theta)?, SimplexPoint::normalized(xi)?))
}

/// `Dirichlet(1 + tau xi_1, ..., 1 + tau xi_(k+1))`.
pub fn dirichlet_from_mode(xi: &SimplexPoint, tau: f64) -> Result<DirichletParams> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "concentration must be positive, got {tau}"
        )));
    }
    DirichletParams::new(xi.probs().iter().map(|x| 1.0 + tau * x).collect())
}

/// Monte Carlo estimate of `P(l < theta_(k+1), theta_1 < u)` under the
/// ordered prior with weight parameters `omega`, with its standard error.
pub fn bounds_probability(
    omega: &DirichletParams,
    l: f64,
    u: f64,
    n_draws: usize,
    rng: &RngStream,
) -> (f64, f64) {
    let sampler = DirichletSampler::new(omega);
    let dim = omega.dim();
    let hits: u64 = par_batches(rng, n_draws, DEFAULT_BATCH, |range, r| {
        let mut w = vec![0.0; dim];
        range
            .filter(|_| {
                sampler.sample_into(r, &mut w);
                let theta = ordered_from_weights_slice(&w);
                l < theta[dim - 1] && theta[0] < u
            })
            .count() as u64
    })
    .into_iter()
    .sum();
    let p = hits as f64 / n_draws as f64;
    (p, (p * (1.0 - p) / n_draws as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSearchStep {
    pub tau: f64,
    pub prob: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSearch {
    pub tau: f64,
    pub prob: f64,
    pub se: f64,
    pub trace: Vec<TauSearchStep>,
}

impl TauSearch {
    /// Largest drop in probability between successive τ values in the
    /// trace, measured in combined standard errors (0 when monotone).
    pub fn max_monotonicity_violation(&self) -> f64 {
        let mut steps = self.trace.clone();
        steps.sort_by(|a, b| a.tau.total_cmp(&b.tau));
        steps
            .windows(2)
            .map(|w| {
                let se = (w[0].se.powi(2) + w[1].se.powi(2)).sqrt().max(f64::MIN_POSITIVE);
                ((w[0].prob - w[1].prob) / se).max(0.0)
            })
            .fold(0.0, f64::max)
    }
}

pub const BISECTION_STEPS: usize = 20;
const MAX_TAU: f64 = 1e9;

/// Smallest τ whose prior satisfies the bound requirement, to the resolution
/// of a geometric bracket from τ = 1 followed by bisection.
///
/// Every evaluation reuses the same random stream.
pub fn find_tau(input: &ElicitationInput, n_draws: usize, rng: &RngStream) -> Result<TauSearch> {
    input.validate()?;
    if n_draws == 0 {
        return Err(Error::InvalidParameter("n_draws must be at least 1".into()));
    }
    let (theta_star, xi) = equispaced_mode(input.k, input.delta)?;
    let t = theta_star.probs();
    // theta_(k+1) > 0 almost surely, so l = 0 is reachable even at a zero mode
    let lower_ok = input.l < t[input.k] || input.l == 0.0;
    if !(lower_ok && t[0] < input.u) {
        return Err(Error::InvalidParameter(format!(
            "the mode ({}, ..., {}) is not inside ({}, {}), so no concentration reaches the \
             requested certainty",
            t[0], t[input.k], input.l, input.u
        )));
    }
    let mut trace = Vec::new();
    let mut eval = |tau: f64| -> Result<TauSearchStep> {
        let omega = dirichlet_from_mode(&xi, tau)?;
        let (prob, se) = bounds_probability(&omega, input.l, input.u, n_draws, rng);
        let step = TauSearchStep { tau, prob, se };
        trace.push(step.clone());
        Ok(step)
    };

    let mut hi = eval(1.0)?;
    let mut lo_tau = 0.0;
    if hi.prob >= input.gamma {
        loop {
            let tau = hi.tau / 2.0;
            if tau < 1e-9 {
                break;
            }
            let s = eval(tau)?;
            if s.prob >= input.gamma {
                hi = s;
            } else {
                lo_tau = tau;
                break;
            }
        }
    } else {
        loop {
            lo_tau = hi.tau;
            let tau = hi.tau * 2.0;
            if tau > MAX_TAU {
                return Err(Error::Numerical(format!(
                    "certainty {} not reached for concentration up to {MAX_TAU}",
                    input.gamma
                )));
            }
            hi = eval(tau)?;
            if hi.prob >= input.gamma {
                break;
            }
        }
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo_tau + hi.tau);
        let s = eval(mid)?;
        if s.prob >= input.gamma {
            hi = s;
        } else {
            lo_tau = mid;
        }
    }
    Ok(TauSearch {
        tau: hi.tau,
        prob: hi.prob,
        se: hi.se,
        trace,
    })
}

/// The elicited prior in the form written by the command-line tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElicitedPrior {
    pub k: usize,
    pub delta: f64,
    pub l: f64,
    pub u: f64,
    pub gamma: f64,
    pub tau: f64,
    pub omega_alphas: Vec<f64>,
}

pub fn elicit(input: &ElicitationInput, n_draws: usize, rng: &RngStream) -> Result<(ElicitedPrior, TauSearch)> {
    let search = find_tau(input, n_draws, rng)?;
    let (_, xi) = equispaced_mode(input.k, input.delta)?;
    let omega = dirichlet_from_mode(&xi, search.tau)?;
    Ok((
        ElicitedPrior {
            k: input.k,
            delta: input.delta,
            l: input.l,
            u: input.u,
            gamma: input.gamma,
            tau: search.tau,
            omega_alphas: omega.alphas().to_vec(),
        },
        search,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simplex::{ordered_from_weights, weights_from_ordered};

    #[test]
    fn zero_spacing_gives_uniform_mode() {
        let (theta, xi) = equispaced_mode(17, 0.0).unwrap();
        assert!(theta.max_abs_diff(&SimplexPoint::uniform(18)) < 1e-15);
        assert_eq!(xi, SimplexPoint::vertex(18, 17));
    }

    #[test]
    fn maximal_spacing() {
        let (theta, xi) = equispaced_mode(17, max_spacing(17)).unwrap();
        assert!((theta.probs()[0] - 1.0 / 9.0).abs() < 1e-15);
        assert!(xi.probs()[17].abs() < 1e-15);
        assert!(equispaced_mode(17, max_spacing(17) * 1.01).is_err());
        assert!(equispaced_mode(17, -0.001).is_err());
    }

    #[test]
    fn mode_and_weights_agree() {
        for k in 1..12 {
            for f in [0.0, 0.1, 0.5, 0.9, 1.0] {
                let delta = f * max_spacing(k);
                let (theta, xi) = equispaced_mode(k, delta).unwrap();
                assert!(theta.is_ordered());
                assert!(ordered_from_weights(&xi).max_abs_diff(&theta) < 1e-14);
                assert!(weights_from_ordered(&theta).unwrap().max_abs_diff(&xi) < 1e-13);
                for w in theta.probs().windows(2) {
                    assert!((w[0] - w[1] - delta).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn concentration_parameterisation() {
        let (_, xi) = equispaced_mode(17, 0.0).unwrap();
        let d = dirichlet_from_mode(&xi, 4.0).unwrap();
        let mut expect = vec![1.0; 18];
        expect[17] = 5.0;
        assert_eq!(d.alphas(), expect.as_slice());

        let (_, xi) = equispaced_mode(17, 2.0 / 306.0).unwrap();
        let tau = 7.0;
        let d = dirichlet_from_mode(&xi, tau).unwrap();
        assert!((d.alphas()[0] - (1.0 + 2.0 * tau / 306.0)).abs() < 1e-12);
        assert!((d.alphas()[16] - (1.0 + 2.0 * tau / 18.0)).abs() < 1e-12);
        assert!((d.alphas()[17] - 1.0).abs() < 1e-12);

        let tiny = dirichlet_from_mode(&xi, 1e-12).unwrap();
        assert!(tiny.alphas().iter().all(|a| (a - 1.0).abs() < 1e-11));
        assert!(dirichlet_from_mode(&xi, 0.0).is_err());
    }

    #[test]
    fn mode_outside_bounds_is_rejected() {
        let input = ElicitationInput { k: 17, delta: 0.0, l: 0.1, u: 0.5, gamma: 0.99 };
        let err = find_tau(&input, 1000, &RngStream::new(1, 0)).unwrap_err();
        assert!(err.to_string().contains("not inside"));
    }

    #[test]
    fn search_returns_smallest_passing_value() {
        let input = ElicitationInput { k: 5, delta: 0.0, l: 0.02, u: 0.5, gamma: 0.9 };
        let s = find_tau(&input, 20_000, &RngStream::new(2, 0)).unwrap();
        assert!(s.prob >= input.gamma);
        let below = s
            .trace
            .iter()
            .filter(|st| st.tau < s.tau)
            .all(|st| st.prob < input.gamma);
        assert!(below);
        assert!(s.max_monotonicity_violation() < 2.0);
    }

    #[test]
    fn probability_increases_with_concentration() {
        let (_, xi) = equispaced_mode(9, 0.0).unwrap();
        let rng = RngStream::new(3, 0);
        let ps: Vec<f64> = [0.5, 5.0, 50.0, 500.0]
            .iter()
            .map(|&tau| bounds_probability(&dirichlet_from_mode(&xi, tau).unwrap(), 0.01, 0.3, 20_000, &rng).0)
            .collect();
        assert!(ps.windows(2).all(|w| w[0] <= w[1]), "{ps:?}");
        assert!(ps[3] > 0.99);
    }
}
