//! Points on the probability simplex, count vectors, Dirichlet parameters and
//! the exact functions defined on them.

use serde::{Deserialize, Serialize};

use crate::special::{ln_factorial, ln_multi_beta, xlogy};
use crate::{Error, Result};

/// Absolute tolerance on `sum(probs) == 1`.
pub const SUM_TOLERANCE: f64 = 1e-12;

/// Slack allowed when checking `theta_i >= theta_(i+1)` on floating point input.
pub const ORDER_TOLERANCE: f64 = 1e-12;

/// A probability vector `(theta_1, ..., theta_(k+1))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexPoint {
    probs: Vec<f64>,
}

impl SimplexPoint {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidSimplex(format!(
                "need at least 2 categories, got {}",
                probs.len()
            )));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::InvalidSimplex(format!(
                "probability {} at position {} is negative or not finite",
                p,
                i + 1
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidSimplex(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalises a nonnegative vector with positive sum onto the simplex.
    pub fn normalized(mut weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::InvalidSimplex(format!(
                "cannot normalise a vector with sum {sum}"
            )));
        }
        weights.iter_mut().for_each(|w| *w /= sum);
        Self::new(weights)
    }

    /// The uniform distribution on `dim` cells.
    pub fn uniform(dim: usize) -> Self {
        assert!(dim >= 2, "uniform point needs at least 2 cells");
        Self {
            probs: vec![1.0 / dim as f64; dim],
        }
    }

    /// The vertex `e_index` (0-based).
    pub fn vertex(dim: usize, index: usize) -> Self {
        assert!(dim >= 2 && index < dim);
        let mut probs = vec![0.0; dim];
        probs[index] = 1.0;
        Self { probs }
    }

    /// Wraps a vector already known to lie on the simplex.
    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        debug_assert!(probs.len() >= 2);
        debug_assert!(
            (probs.iter().sum::<f64>() - 1.0).abs() < 1e-9,
            "from_raw off simplex: {probs:?}"
        );
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    /// Number of cells, `k + 1`.
    pub fn dim(&self) -> usize {
        self.probs.len()
    }

    /// `k`, the dimension of the simplex.
    pub fn k(&self) -> usize {
        self.probs.len() - 1
    }

    /// True when `theta_1 >= ... >= theta_(k+1)` (ties allowed).
    pub fn is_ordered(&self) -> bool {
        self.first_order_violation().is_none()
    }

    /// 1-based index `i` of the first violation `theta_i < theta_(i+1)`.
    pub fn first_order_violation(&self) -> Option<usize> {
        self.probs
            .windows(2)
            .position(|w| w[0] + ORDER_TOLERANCE < w[1])
            .map(|i| i + 1)
    }

    pub fn max_abs_diff(&self, other: &SimplexPoint) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for SimplexPoint {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SimplexPoint> for Vec<f64> {
    fn from(p: SimplexPoint) -> Self {
        p.probs
    }
}

impl AsRef<[f64]> for SimplexPoint {
    fn as_ref(&self) -> &[f64] {
        &self.probs
    }
}

/// Multinomial counts `(t_1, ..., t_(k+1))` with total `n >= 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u64>", into = "Vec<u64>")]
pub struct CountVector {
    counts: Vec<u64>,
    n: u64,
}

impl CountVector {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::InvalidCounts(format!(
                "need at least 2 categories, got {}",
                counts.len()
            )));
        }
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return Err(Error::InvalidCounts("total count must be at least 1".into()));
        }
        Ok(Self { counts, n })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    /// Relative frequencies `t / n`.
    pub fn frequencies(&self) -> SimplexPoint {
        let n = self.n as f64;
        SimplexPoint::from_raw(self.counts.iter().map(|&c| c as f64 / n).collect())
    }

    /// Reorders the cells: cell `i` of the result is cell `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: perm.len(),
            });
        }
        Self::new(perm.iter().map(|&j| self.counts[j]).collect())
    }
}

impl TryFrom<Vec<u64>> for CountVector {
    type Error = Error;
    fn try_from(v: Vec<u64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CountVector> for Vec<u64> {
    fn from(c: CountVector) -> Self {
        c.counts
    }
}

/// Dirichlet shape parameters, all strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DirichletParams {
    alphas: Vec<f64>,
}

impl DirichletParams {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "Dirichlet needs at least 2 parameters, got {}",
                alphas.len()
            )));
        }
        if let Some(a) = alphas.iter().find(|a| !a.is_finite() || **a <= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "Dirichlet parameter {a} is not positive"
            )));
        }
        Ok(Self { alphas })
    }

    /// Dirichlet(1, ..., 1), the uniform distribution on the simplex.
    pub fn uniform(dim: usize) -> Self {
        assert!(dim >= 2);
        Self {
            alphas: vec![1.0; dim],
        }
    }

    /// Conjugate update: Dirichlet(alpha + t).
    pub fn posterior(&self, t: &CountVector) -> Result<Self> {
        check_dims(self.dim(), t.dim())?;
        Ok(Self {
            alphas: self
                .alphas
                .iter()
                .zip(t.counts())
                .map(|(a, &c)| a + c as f64)
                .collect(),
        })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn dim(&self) -> usize {
        self.alphas.len()
    }

    pub fn total(&self) -> f64 {
        self.alphas.iter().sum()
    }

    pub fn mean(&self) -> SimplexPoint {
        let total = self.total();
        SimplexPoint::from_raw(self.alphas.iter().map(|a| a / total).collect())
    }

    /// Mode `(alpha_i - 1) / (sum alpha - (k+1))`, defined when every
    /// `alpha_i >= 1` and at least one exceeds 1.
    pub fn mode(&self) -> Option<SimplexPoint> {
        if self.alphas.iter().any(|&a| a < 1.0) {
            return None;
        }
        let tau = self.total() - self.dim() as f64;
        if tau <= 0.0 {
            return None;
        }
        Some(SimplexPoint::from_raw(
            self.alphas.iter().map(|a| (a - 1.0) / tau).collect(),
        ))
    }

    pub fn is_uniform(&self) -> bool {
        self.alphas.iter().all(|&a| a == 1.0)
    }

    /// Normalised log density with respect to Lebesgue measure on the first
    /// `k` coordinates. Uses `0 * ln 0 = 0`, so boundary points are finite
    /// whenever the matching parameter equals 1.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.alphas.len());
        let kernel: f64 = self
            .alphas
            .iter()
            .zip(x)
            .map(|(&a, &xi)| xlogy(a - 1.0, xi))
            .sum();
        kernel - ln_multi_beta(&self.alphas)
    }
}

impl TryFrom<Vec<f64>> for DirichletParams {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DirichletParams> for Vec<f64> {
    fn from(d: DirichletParams) -> Self {
        d.alphas
    }
}

pub(crate) fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::DimensionMismatch { expected, got })
    } else {
        Ok(())
    }
}

/// Maps weights `omega` to ordered probabilities, `theta_i = sum_{j>=i} omega_j / j`.
///
/// Every simplex point maps into the closed ordered cone and every ordered
/// point has exactly one preimage (see [`weights_from_ordered`]).
pub fn ordered_from_weights(omega: &SimplexPoint) -> SimplexPoint {
    SimplexPoint::from_raw(ordered_from_weights_slice(omega.probs()))
}

pub fn ordered_from_weights_slice(omega: &[f64]) -> Vec<f64> {
    let mut theta = vec![0.0; omega.len()];
    let mut acc = 0.0;
    // suffix accumulation keeps theta_i >= theta_(i+1) exact in floating point
    for j in (0..omega.len()).rev() {
        acc += omega[j] / (j + 1) as f64;
        theta[j] = acc;
    }
    theta
}

/// Inverse of [`ordered_from_weights`]: `omega_i = i (theta_i - theta_(i+1))`,
/// `omega_(k+1) = (k+1) theta_(k+1)`.
pub fn weights_from_ordered(theta: &SimplexPoint) -> Result<SimplexPoint> {
    if let Some(index) = theta.first_order_violation() {
        return Err(Error::OrderingViolated { index });
    }
    let omega = weights_from_ordered_slice(theta.probs());
    SimplexPoint::normalized(omega)
}

pub fn weights_from_ordered_slice(theta: &[f64]) -> Vec<f64> {
    let d = theta.len();
    (0..d)
        .map(|i| {
            let next = if i + 1 < d { theta[i + 1] } else { 0.0 };
            ((i + 1) as f64 * (theta[i] - next)).max(0.0)
        })
        .collect()
}

/// `KL(theta || p) = sum theta_i ln(theta_i / p_i)` with `0 ln 0 = 0`.
///
/// Returns `f64::INFINITY` when `theta_i > 0` but `p_i = 0`.
pub fn kl_divergence(theta: &SimplexPoint, p: &SimplexPoint) -> Result<f64> {
    check_dims(theta.dim(), p.dim())?;
    Ok(kl_slices(theta.probs(), p.probs()))
}

pub(crate) fn kl_slices(theta: &[f64], p: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&t, &q) in theta.iter().zip(p) {
        if t == 0.0 {
            continue;
        }
        if q == 0.0 {
            return f64::INFINITY;
        }
        total += t * (t / q).ln();
    }
    total.max(0.0)
}

/// `ln [ n! / prod t_j! * prod theta_j^t_j ]`; `-inf` when a cell with
/// positive count has zero probability.
pub fn log_multinomial_pmf(t: &CountVector, theta: &SimplexPoint) -> Result<f64> {
    check_dims(t.dim(), theta.dim())?;
    Ok(log_multinomial_coefficient(t) + log_likelihood_kernel(t.counts(), theta.probs()))
}

/// `ln n! - sum ln t_j!`
pub fn log_multinomial_coefficient(t: &CountVector) -> f64 {
    ln_factorial(t.n()) - t.counts().iter().map(|&c| ln_factorial(c)).sum::<f64>()
}

/// `sum t_j ln theta_j`
pub(crate) fn log_likelihood_kernel(counts: &[u64], theta: &[f64]) -> f64 {
    counts
        .iter()
        .zip(theta)
        .map(|(&c, &p)| xlogy(c as f64, p))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sp(v: &[f64]) -> SimplexPoint {
        SimplexPoint::new(v.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_simplex_points() {
        assert!(SimplexPoint::new(vec![1.0]).is_err());
        assert!(SimplexPoint::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexPoint::new(vec![1.5, -0.5]).is_err());
        assert!(SimplexPoint::new(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn last_vertex_maps_to_uniform() {
        for dim in 2..8 {
            let theta = ordered_from_weights(&SimplexPoint::vertex(dim, dim - 1));
            assert!(theta.max_abs_diff(&SimplexPoint::uniform(dim)) < 1e-15);
        }
    }

    #[test]
    fn first_vertex_is_fixed() {
        let theta = ordered_from_weights(&SimplexPoint::vertex(4, 0));
        assert_eq!(theta.probs(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn ordered_transform_hand_example() {
        // A_3 (0.1, 0.2, 0.3, 0.4)^t by hand:
        // theta_4 = 0.4/4 = 0.1, theta_3 = 0.1 + 0.3/3 = 0.2,
        // theta_2 = 0.2 + 0.2/2 = 0.3, theta_1 = 0.3 + 0.1 = 0.4
        let theta = ordered_from_weights(&sp(&[0.1, 0.2, 0.3, 0.4]));
        assert!(theta.max_abs_diff(&sp(&[0.4, 0.3, 0.2, 0.1])) < 1e-15);
        let omega = weights_from_ordered(&sp(&[0.4, 0.3, 0.2, 0.1])).unwrap();
        assert!(omega.max_abs_diff(&sp(&[0.1, 0.2, 0.3, 0.4])) < 1e-15);
    }

    #[test]
    fn uniform_inverts_to_last_vertex() {
        let omega = weights_from_ordered(&SimplexPoint::uniform(5)).unwrap();
        assert!(omega.max_abs_diff(&SimplexPoint::vertex(5, 4)) < 1e-15);
    }

    #[test]
    fn ordering_violation_reports_first_index() {
        let err = weights_from_ordered(&sp(&[0.3, 0.4, 0.3])).unwrap_err();
        assert_eq!(err, Error::OrderingViolated { index: 1 });
        let err = weights_from_ordered(&sp(&[0.5, 0.2, 0.3])).unwrap_err();
        assert_eq!(err, Error::OrderingViolated { index: 2 });
    }

    #[test]
    fn kl_examples() {
        let a = sp(&[0.2, 0.3, 0.5]);
        assert_eq!(kl_divergence(&a, &a).unwrap(), 0.0);
        let kl = kl_divergence(&sp(&[1.0, 0.0]), &sp(&[0.5, 0.5])).unwrap();
        assert!((kl - 2f64.ln()).abs() < 1e-15);
        let kl = kl_divergence(&sp(&[0.5, 0.5]), &sp(&[1.0, 0.0])).unwrap();
        assert_eq!(kl, f64::INFINITY);
        assert!(kl_divergence(&a, &sp(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn multinomial_pmf_examples() {
        let theta = sp(&[0.2, 0.3, 0.5]);
        for i in 0..3 {
            let mut c = vec![0; 3];
            c[i] = 1;
            let t = CountVector::new(c).unwrap();
            let lp = log_multinomial_pmf(&t, &theta).unwrap();
            assert!((lp - theta.probs()[i].ln()).abs() < 1e-14);
        }
        let lp = log_multinomial_pmf(&CountVector::new(vec![2, 0]).unwrap(), &sp(&[0.5, 0.5]))
            .unwrap();
        assert!((lp - 0.25f64.ln()).abs() < 1e-14);
        let lp = log_multinomial_pmf(&CountVector::new(vec![1, 1]).unwrap(), &sp(&[1.0, 0.0]))
            .unwrap();
        assert_eq!(lp, f64::NEG_INFINITY);
    }

    fn compositions(n: u64, parts: usize) -> Vec<Vec<u64>> {
        if parts == 1 {
            return vec![vec![n]];
        }
        let mut out = Vec::new();
        for first in 0..=n {
            for mut rest in compositions(n - first, parts - 1) {
                rest.insert(0, first);
                out.push(rest);
            }
        }
        out
    }

    #[test]
    fn multinomial_pmf_normalises() {
        let thetas = [
            sp(&[0.7, 0.3]),
            sp(&[0.2, 0.3, 0.5]),
            sp(&[0.1, 0.2, 0.3, 0.4]),
        ];
        for theta in &thetas {
            for n in 1..=20 {
                let total: f64 = compositions(n, theta.dim())
                    .into_iter()
                    .map(|c| {
                        log_multinomial_pmf(&CountVector::new(c).unwrap(), theta)
                            .unwrap()
                            .exp()
                    })
                    .sum();
                assert!((total - 1.0).abs() < 1e-10, "n={n} total={total}");
            }
        }
    }

    #[test]
    fn large_counts_stay_finite() {
        let t = CountVector::new(vec![3416, 1912, 1748]).unwrap();
        let lp = log_multinomial_pmf(&t, &t.frequencies()).unwrap();
        assert!(lp.is_finite() && lp < 0.0);
    }

    #[test]
    fn dirichlet_log_density_uniform() {
        let d = DirichletParams::uniform(3);
        // Dirichlet(1,1,1) density is 2 on the triangle
        assert!((d.log_density(&[0.2, 0.3, 0.5]) - 2f64.ln()).abs() < 1e-14);
        assert!((d.log_density(&[0.0, 0.0, 1.0]) - 2f64.ln()).abs() < 1e-14);
    }

    fn simplex_strategy() -> impl Strategy<Value = SimplexPoint> {
        (2usize..=21)
            .prop_flat_map(|d| proptest::collection::vec(0.0f64..1.0, d))
            .prop_filter_map("degenerate", |v| SimplexPoint::normalized(v).ok())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn ordered_round_trip(omega in simplex_strategy()) {
            let theta = ordered_from_weights(&omega);
            prop_assert!(theta.is_ordered());
            let back = weights_from_ordered(&theta).unwrap();
            prop_assert!(back.max_abs_diff(&omega) < 1e-12);
        }

        #[test]
        fn kl_nonnegative_and_zero_only_at_equality(
            (a, b) in (2usize..=8).prop_flat_map(|d| (
                proptest::collection::vec(0.01f64..1.0, d),
                proptest::collection::vec(0.01f64..1.0, d),
            ))
        ) {
            let a = SimplexPoint::normalized(a).unwrap();
            let b = SimplexPoint::normalized(b).unwrap();
            let kl = kl_divergence(&a, &b).unwrap();
            prop_assert!(kl >= 0.0);
            if a.max_abs_diff(&b) > 1e-6 {
                prop_assert!(kl > 0.0);
            }
            prop_assert_eq!(kl_divergence(&a, &a).unwrap(), 0.0);
        }
    }
}
