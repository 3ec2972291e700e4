//! Exact prior predictive computations for Dirichlet priors and the
//! large-sample behaviour of the conflict p-value.
//!
//! For a Dirichlet prior the prior predictive of the counts is the
//! Dirichlet-multinomial distribution, so the conflict p-value can be
//! computed exactly by enumerating every count vector of size `n`. As `n`
//! grows the p-value converges to `Π(π(θ) <= π(θ_true))`.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::prior_check::{PriorKind, PriorSpec};
use crate::sampling::{par_batches, par_items, sample_multinomial_counts, RngStream, DEFAULT_BATCH};
use crate::simplex::{check_dims, CountVector, DirichletParams, SimplexPoint};
use crate::special::{ln_factorial, ln_multi_beta};
use crate::{Error, Result};

/// Largest number of count vectors an exact computation may enumerate.
pub const ENUMERATION_LIMIT: f64 = 1e8;

/// Relative tolerance on `ln m` when deciding `m(t) <= m(t_obs)`.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// `ln m(t)`, the Dirichlet-multinomial log mass.
pub fn exact_log_prior_predictive(t: &CountVector, alphas: &DirichletParams) -> Result<f64> {
    check_dims(alphas.dim(), t.dim())?;
    Ok(log_mass(t.counts(), t.n(), alphas.alphas(), ln_multi_beta(alphas.alphas())))
}

pub fn exact_prior_predictive(t: &CountVector, alphas: &DirichletParams) -> Result<f64> {
    exact_log_prior_predictive(t, alphas).map(f64::exp)
}

fn log_mass(counts: &[u64], n: u64, alphas: &[f64], ln_b_prior: f64) -> f64 {
    let mut post_sum = 0.0;
    let mut ln_num = 0.0;
    let mut ln_fact = 0.0;
    for (&c, &a) in counts.iter().zip(alphas) {
        let ac = a + c as f64;
        post_sum += ac;
        ln_num += statrs::function::gamma::ln_gamma(ac);
        ln_fact += ln_factorial(c);
    }
    ln_factorial(n) - ln_fact + ln_num - statrs::function::gamma::ln_gamma(post_sum) - ln_b_prior
}

/// Number of count vectors of size `n` over `dim` cells, `C(n + dim - 1, dim - 1)`.
pub fn lattice_size(n: u64, dim: usize) -> f64 {
    let k = dim as u64 - 1;
    (ln_factorial(n + k) - ln_factorial(n) - ln_factorial(k)).exp()
}

fn check_enumerable(n: u64, dim: usize) -> Result<()> {
    let size = lattice_size(n, dim);
    if size > ENUMERATION_LIMIT * (1.0 + 1e-9) {
        return Err(Error::EnumerationTooLarge {
            size,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(())
}

/// Calls `f` on every count vector of size `n` over `dim` cells, in
/// lexicographic order of the leading cells.
pub fn for_each_count_vector<F: FnMut(&[u64])>(n: u64, dim: usize, mut f: F) {
    let mut c = vec![0u64; dim];
    fn rec<F: FnMut(&[u64])>(c: &mut Vec<u64>, i: usize, left: u64, f: &mut F) {
        if i + 1 == c.len() {
            c[i] = left;
            f(c);
            return;
        }
        for v in 0..=left {
            c[i] = v;
            rec(c, i + 1, left - v, f);
        }
    }
    rec(&mut c, 0, n, &mut f);
}

/// The exact predictive distribution over all count vectors of size `n`:
/// sorted log masses with cumulative masses, for repeated p-value lookups.
#[derive(Debug, Clone)]
pub struct PredictiveTable {
    n: u64,
    log_masses: Vec<f64>,
    cumulative: Vec<f64>,
}

impl PredictiveTable {
    pub fn new(n: u64, alphas: &DirichletParams) -> Result<Self> {
        let dim = alphas.dim();
        check_enumerable(n, dim)?;
        let ln_b = ln_multi_beta(alphas.alphas());
        let mut log_masses = Vec::new();
        for_each_count_vector(n, dim, |c| log_masses.push(log_mass(c, n, alphas.alphas(), ln_b)));
        log_masses.sort_by(f64::total_cmp);
        let mut acc = 0.0;
        let cumulative = log_masses
            .iter()
            .map(|lm| {
                acc += lm.exp();
                acc
            })
            .collect();
        Ok(Self {
            n,
            log_masses,
            cumulative,
        })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn total_mass(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    /// `sum_{t: m(t) <= exp(log_m)} m(t)`.
    pub fn pvalue_at(&self, log_m: f64) -> f64 {
        let threshold = log_m + TIE_TOLERANCE * log_m.abs().max(1.0);
        let idx = self.log_masses.partition_point(|&x| x <= threshold);
        if idx == 0 {
            0.0
        } else {
            self.cumulative[idx - 1].min(1.0)
        }
    }
}

/// Exact conflict p-value `M(m(T) <= m(t_obs))` by enumeration.
pub fn exact_conflict_pvalue(t_obs: &CountVector, alphas: &DirichletParams) -> Result<f64> {
    check_dims(alphas.dim(), t_obs.dim())?;
    check_enumerable(t_obs.n(), t_obs.dim())?;
    let n = t_obs.n();
    let ln_b = ln_multi_beta(alphas.alphas());
    let lobs = log_mass(t_obs.counts(), n, alphas.alphas(), ln_b);
    let threshold = lobs + TIE_TOLERANCE * lobs.abs().max(1.0);
    let mut p = 0.0;
    for_each_count_vector(n, t_obs.dim(), |c| {
        let lm = log_mass(c, n, alphas.alphas(), ln_b);
        if lm <= threshold {
            p += lm.exp();
        }
    });
    Ok(p.min(1.0))
}

/// Lattice index of `r`: `n_i = floor(n r_i + 1/2)` for the first `k`
/// cells, the last cell taking the remainder.
pub fn cell_index(r: &[f64], n: u64) -> Result<Vec<u64>> {
    let k = r.len() - 1;
    let mut idx: Vec<u64> = r[..k]
        .iter()
        .map(|&x| (n as f64 * x + 0.5).floor().max(0.0) as u64)
        .collect();
    let used: u64 = idx.iter().sum();
    if used > n {
        return Err(Error::InvalidParameter(format!(
            "point {r:?} lies outside the cells covered at n = {n}"
        )));
    }
    idx.push(n - used);
    Ok(idx)
}

/// `n^k m(n(r))`, the prior predictive spread as a density over the cell
/// containing `r`.
pub fn continuized_density(r: &SimplexPoint, n: u64, alphas: &DirichletParams) -> Result<f64> {
    check_dims(alphas.dim(), r.dim())?;
    let counts = cell_index(r.probs(), n)?;
    let lm = exact_log_prior_predictive(&CountVector::new(counts)?, alphas)?;
    Ok((r.k() as f64 * (n as f64).ln() + lm).exp())
}

/// `Π(π(θ) <= π(θ_true))` and `Π(π(θ) < π(θ_true))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitingPValue {
    pub at_most: f64,
    pub below: f64,
    pub exact: bool,
}

/// Limit of the conflict p-value when the data are generated by `theta_true`.
///
/// Uses a closed form for two-cell Dirichlet priors and `n_draws` prior
/// draws otherwise.
pub fn limiting_pvalue(
    prior: &PriorSpec,
    theta_true: &SimplexPoint,
    n_draws: usize,
    rng: &RngStream,
) -> Result<LimitingPValue> {
    check_dims(prior.dim(), theta_true.dim())?;
    if let PriorKind::Dirichlet { alphas } = &prior.kind {
        if alphas.is_uniform() {
            return Ok(LimitingPValue {
                at_most: 1.0,
                below: 0.0,
                exact: true,
            });
        }
        if alphas.dim() == 2 {
            let p = beta_limit(alphas.alphas()[0], alphas.alphas()[1], theta_true.probs()[0]);
            return Ok(LimitingPValue {
                at_most: p,
                below: p,
                exact: true,
            });
        }
    }
    let target = prior.log_density(theta_true.probs());
    if target == f64::NEG_INFINITY {
        return Err(Error::InvalidParameter(
            "theta_true lies outside the prior support".into(),
        ));
    }
    let sampler = prior.sampler()?;
    let counts: Vec<(u64, u64)> = par_batches(rng, n_draws, DEFAULT_BATCH, |range, r| {
        let mut buf = Vec::new();
        let (mut le, mut lt) = (0u64, 0u64);
        for _ in range {
            sampler.sample_into(r, &mut buf);
            let ld = prior.log_density(&buf);
            le += (ld <= target) as u64;
            lt += (ld < target) as u64;
        }
        (le, lt)
    });
    let (le, lt) = counts
        .into_iter()
        .fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(LimitingPValue {
        at_most: le as f64 / n_draws as f64,
        below: lt as f64 / n_draws as f64,
        exact: false,
    })
}

/// `P(π(X) <= π(x0))` for `X ~ Beta(a, b)`.
fn beta_limit(a: f64, b: f64, x0: f64) -> f64 {
    let ld = |x: f64| (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln();
    let cdf = |x: f64| beta_reg(a, b, x.clamp(0.0, 1.0));
    let target = ld(x0);
    if a > 1.0 && b > 1.0 {
        let mode = (a - 1.0) / (a + b - 2.0);
        // the other endpoint of the level set {ld = target}
        let other = |lo: f64, hi: f64, increasing: bool| -> f64 {
            let (mut lo, mut hi) = (lo, hi);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let above = ld(mid) > target;
                if above == increasing {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        };
        if x0 <= mode {
            let x2 = other(mode, 1.0, false);
            cdf(x0) + 1.0 - cdf(x2)
        } else {
            let x1 = other(0.0, mode, true);
            cdf(x1) + 1.0 - cdf(x0)
        }
    } else if a <= 1.0 && b <= 1.0 {
        // U-shaped or flat: density below target in the middle interval
        if a == 1.0 && b == 1.0 {
            return 1.0;
        }
        let anti = (1.0 - a) / (2.0 - a - b);
        let x_other = if x0 <= anti {
            let (mut lo, mut hi) = (anti, 1.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if ld(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        } else {
            let (mut lo, mut hi) = (0.0, anti);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if ld(mid) < target {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        };
        (cdf(x0) - cdf(x_other)).abs()
    } else if a > 1.0 {
        // increasing density
        cdf(x0)
    } else {
        1.0 - cdf(x0)
    }
}

/// Checks the hypotheses under which the conflict p-value converges.
pub fn check_convergence_assumptions(prior: &DirichletParams) -> Result<()> {
    if let Some(a) = prior.alphas().iter().find(|&&a| a < 1.0) {
        return Err(Error::AssumptionViolated(format!(
            "bounded prior density requires every alpha >= 1, found {a}"
        )));
    }
    if prior.is_uniform() {
        return Err(Error::AssumptionViolated(
            "the uniform prior has a constant density, so its level sets have positive volume"
                .into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: u64,
    pub replication: usize,
    pub pvalue: f64,
    pub limit: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub n: u64,
    pub median_pvalue: f64,
    pub median_abs_error: f64,
    /// `median_pvalue` lies in `[below - tol, at_most + tol]`.
    pub sandwich_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub limit: LimitingPValue,
    pub rows: Vec<ConvergenceRow>,
    pub summary: Vec<ConvergenceSummary>,
    pub sandwich_tolerance: f64,
    pub seed: u64,
}

/// Tolerance used for the empirical sandwich check.
pub const SANDWICH_TOLERANCE: f64 = 0.05;

impl ConvergenceTable {
    /// Number of times the median absolute error increases along the schedule.
    pub fn error_inversions(&self) -> usize {
        self.summary
            .windows(2)
            .filter(|w| w[1].median_abs_error > w[0].median_abs_error)
            .count()
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("n,replication,pvalue,limit,abs_error\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.n, r.replication, r.pvalue, r.limit, r.abs_error
            ));
        }
        out
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// For each `n` in the schedule, draws `replications` count vectors from
/// `multinomial(n, theta_true)` and computes their exact conflict p-values.
pub fn convergence_experiment(
    prior: &DirichletParams,
    theta_true: &SimplexPoint,
    n_schedule: &[u64],
    replications: usize,
    rng: &RngStream,
) -> Result<ConvergenceTable> {
    check_convergence_assumptions(prior)?;
    check_dims(prior.dim(), theta_true.dim())?;
    if replications == 0 || n_schedule.is_empty() {
        return Err(Error::InvalidParameter(
            "need at least one replication and one sample size".into(),
        ));
    }
    let limit = limiting_pvalue(
        &PriorSpec::dirichlet(prior.clone()),
        theta_true,
        1_000_000,
        &rng.substream(u64::MAX),
    )?;
    let ln_b = ln_multi_beta(prior.alphas());
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (si, &n) in n_schedule.iter().enumerate() {
        let table = PredictiveTable::new(n, prior)?;
        let pvals: Vec<f64> = par_items(&rng.substream(si as u64), replications, |_, r| {
            let c = sample_multinomial_counts(n, theta_true.probs(), r);
            table.pvalue_at(log_mass(&c, n, prior.alphas(), ln_b))
        });
        for (rep, &p) in pvals.iter().enumerate() {
            rows.push(ConvergenceRow {
                n,
                replication: rep,
                pvalue: p,
                limit: limit.at_most,
                abs_error: (p - limit.at_most).abs(),
            });
        }
        let med = median(pvals.clone());
        summary.push(ConvergenceSummary {
            n,
            median_pvalue: med,
            median_abs_error: median(pvals.iter().map(|p| (p - limit.at_most).abs()).collect()),
            sandwich_holds: med >= limit.below - SANDWICH_TOLERANCE
                && med <= limit.at_most + SANDWICH_TOLERANCE,
        });
    }
    Ok(ConvergenceTable {
        limit,
        rows,
        summary,
        sandwich_tolerance: SANDWICH_TOLERANCE,
        seed: rng.seed(),
    })
}
