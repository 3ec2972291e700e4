//! Gibbs sampling for ordered probabilities under a Dirichlet prior on the
//! weights `omega`.
//!
//! The state is `theta_1 >= ... >= theta_(k+1)`; a sweep updates
//! `theta_1, ..., theta_k` in turn from their full conditionals, with
//! `theta_(k+1) = 1 - sum_{j<=k} theta_j` following along. Each conditional
//! lives on an interval fixed by the neighbouring coordinates and is sampled
//! by inverting a piecewise-linear approximation of its CDF on a Chebyshev
//! grid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::sampling::{par_items, RngStream};
use crate::simplex::{
    check_dims, ordered_from_weights_slice, weights_from_ordered_slice, CountVector,
    DirichletParams, SimplexPoint,
};
use crate::special::xlogy;
use crate::{Error, Result};

/// Number of grid points for each conditional draw.
pub const GRID_POINTS: usize = 512;

/// Gap enforced between adjacent probabilities before a sweep.
pub const TIE_NUDGE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsState {
    theta: Vec<f64>,
    pub sweep_index: usize,
}

impl GibbsState {
    /// Starts from an ordered point, nudging ties into the open cone.
    pub fn new(theta: &SimplexPoint) -> Result<Self> {
        if let Some(index) = theta.first_order_violation() {
            return Err(Error::OrderingViolated { index });
        }
        let mut s = Self {
            theta: theta.probs().to_vec(),
            sweep_index: 0,
        };
        s.nudge();
        Ok(s)
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn k(&self) -> usize {
        self.theta.len() - 1
    }

    fn nudge(&mut self) {
        let omega = weights_from_ordered_slice(&self.theta);
        if omega.iter().all(|&w| w >= TIE_NUDGE) {
            return;
        }
        let mut omega: Vec<f64> = omega.into_iter().map(|w| w.max(TIE_NUDGE)).collect();
        let total: f64 = omega.iter().sum();
        omega.iter_mut().for_each(|w| *w /= total);
        self.theta = ordered_from_weights_slice(&omega);
    }

    /// `sum_{j <= k, j != i} theta_j` (1-based `i`).
    fn rest_sum(&self, i: usize) -> f64 {
        let k = self.k();
        self.theta[..k]
            .iter()
            .enumerate()
            .filter(|(j, _)| j + 1 != i)
            .map(|(_, x)| x)
            .sum()
    }

    fn set(&mut self, i: usize, value: f64) {
        let k = self.k();
        self.theta[i - 1] = value;
        let s: f64 = self.theta[..k].iter().sum();
        self.theta[k] = (1.0 - s).max(0.0);
    }
}

/// Interval on which `theta_i` may move given the rest of the state
/// (1-based `i`, `1 <= i <= k`).
pub fn conditional_interval(i: usize, state: &GibbsState) -> Result<(f64, f64)> {
    let k = state.k();
    if i == 0 || i > k {
        return Err(Error::InvalidParameter(format!(
            "coordinate {i} outside 1..={k}"
        )));
    }
    let th = &state.theta;
    let s = state.rest_sum(i);
    let prev = if i == 1 { 1.0 } else { th[i - 2] };
    let hi = prev.min(1.0 - s);
    let lo = if i == k {
        (1.0 - s) / 2.0
    } else {
        th[i].max(1.0 - s - th[k - 1])
    };
    if !(lo <= hi) {
        return Err(Error::Numerical(format!(
            "empty interval [{lo}, {hi}] for coordinate {i}"
        )));
    }
    Ok((lo.max(0.0), hi.min(1.0)))
}

/// Unnormalised log density of `theta_i = x` given the rest.
fn log_conditional(
    i: usize,
    x: f64,
    state: &GibbsState,
    s: f64,
    counts: &[f64],
    alphas: &[f64],
) -> f64 {
    let k = state.k();
    let th = &state.theta;
    let mut v = xlogy(counts[i - 1], x) + xlogy(counts[k] + alphas[k] - 1.0, 1.0 - x - s);
    if i >= 2 {
        v += xlogy(alphas[i - 2] - 1.0, th[i - 2] - x);
    }
    if i < k {
        v += xlogy(alphas[i - 1] - 1.0, x - th[i]);
        v += xlogy(alphas[k - 1] - 1.0, x + th[k - 1] - 1.0 + s);
    } else {
        v += xlogy(alphas[k - 1] - 1.0, 2.0 * x - 1.0 + s);
    }
    v
}

/// Piecewise-linear density on a Chebyshev grid with its cumulative
/// trapezoid integral.
#[derive(Debug, Clone)]
pub struct GridDensity {
    pub nodes: Vec<f64>,
    pub density: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl GridDensity {
    /// Tabulates `exp(log_f)` on `points` Chebyshev-Lobatto nodes in
    /// `[lo, hi]`, scaled so the largest value is 1.
    pub fn new<F: Fn(f64) -> f64>(lo: f64, hi: f64, points: usize, log_f: F) -> Result<Self> {
        let points = points.max(3);
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        let last = (points - 1) as f64;
        let nodes: Vec<f64> = (0..points)
            .map(|j| {
                if j == 0 {
                    lo
                } else if j == points - 1 {
                    hi
                } else {
                    mid - half * (std::f64::consts::PI * j as f64 / last).cos()
                }
            })
            .collect();
        let mut logs: Vec<f64> = nodes.iter().map(|&x| log_f(x)).collect();
        // integrable endpoint singularities: cap at the neighbouring value
        if !(logs[0] < f64::INFINITY) {
            logs[0] = logs[1];
        }
        if !(logs[points - 1] < f64::INFINITY) {
            logs[points - 1] = logs[points - 2];
        }
        for l in logs.iter_mut() {
            if l.is_nan() {
                *l = f64::NEG_INFINITY;
            }
        }
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Numerical(format!(
                "conditional density vanishes on [{lo}, {hi}]"
            )));
        }
        let density: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let mut cumulative = Vec::with_capacity(points);
        cumulative.push(0.0);
        for j in 1..points {
            let area = 0.5 * (density[j] + density[j - 1]) * (nodes[j] - nodes[j - 1]);
            cumulative.push(cumulative[j - 1] + area);
        }
        Ok(Self {
            nodes,
            density,
            cumulative,
        })
    }

    pub fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Value at `u in [0, 1]` of the inverse of the piecewise-linear CDF.
    pub fn inverse_cdf(&self, u: f64) -> f64 {
        let total = self.total();
        if !(total > 0.0) {
            return self.nodes[0];
        }
        let target = u * total;
        let j = self
            .cumulative
            .partition_point(|&c| c < target)
            .clamp(1, self.nodes.len() - 1);
        let (x0, x1) = (self.nodes[j - 1], self.nodes[j]);
        let (d0, d1) = (self.density[j - 1], self.density[j]);
        let h = x1 - x0;
        let r = target - self.cumulative[j - 1];
        // solve d0 t + (d1 - d0) t^2 / (2h) = r for t in [0, h]
        let slope = (d1 - d0) / h;
        let t = if slope.abs() < 1e-14 * (d0 + d1).max(f64::MIN_POSITIVE) / h.max(f64::MIN_POSITIVE)
        {
            if d0 > 0.0 {
                r / d0
            } else {
                0.5 * h
            }
        } else {
            let disc = (d0 * d0 + 2.0 * slope * r).max(0.0);
            // numerically stable root of the quadratic
            2.0 * r / (d0 + disc.sqrt())
        };
        (x0 + t.clamp(0.0, h)).clamp(x0, x1)
    }
}

/// Draws `theta_i` from its full conditional (1-based `i`).
pub fn sample_conditional<R: Rng + ?Sized>(
    i: usize,
    state: &GibbsState,
    counts: &[f64],
    prior_alphas: &DirichletParams,
    rng: &mut R,
) -> Result<f64> {
    let (lo, hi) = conditional_interval(i, state)?;
    if hi - lo <= 0.0 {
        return Ok(lo);
    }
    let s = state.rest_sum(i);
    let alphas = prior_alphas.alphas();
    let grid = GridDensity::new(lo, hi, GRID_POINTS, |x| {
        log_conditional(i, x, state, s, counts, alphas)
    })?;
    Ok(grid.inverse_cdf(rng.random::<f64>()))
}

/// Conditional density grid for coordinate `i`, exposed for diagnostics.
pub fn conditional_grid(
    i: usize,
    state: &GibbsState,
    counts: &[f64],
    prior_alphas: &DirichletParams,
) -> Result<GridDensity> {
    let (lo, hi) = conditional_interval(i, state)?;
    let s = state.rest_sum(i);
    GridDensity::new(lo, hi, GRID_POINTS, |x| {
        log_conditional(i, x, state, s, counts, prior_alphas.alphas())
    })
}

/// One systematic-scan sweep over `theta_1, ..., theta_k`.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    state: &mut GibbsState,
    counts: &[f64],
    prior_alphas: &DirichletParams,
    rng: &mut R,
) -> Result<()> {
    state.nudge();
    for i in 1..=state.k() {
        let x = sample_conditional(i, state, counts, prior_alphas, rng)?;
        state.set(i, x);
    }
    state.sweep_index += 1;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSummary {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    /// Integrated autocorrelation time in sweeps.
    pub autocorr_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsOutput {
    /// Retained states, one per sweep after burn-in.
    pub samples: Vec<Vec<f64>>,
    pub summary: Vec<CoordinateSummary>,
    pub n_sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub stream_id: u64,
}

impl GibbsOutput {
    pub fn csv(&self) -> String {
        let dim = self.samples.first().map_or(0, Vec::len);
        let mut out = (1..=dim)
            .map(|i| format!("theta_{i}"))
            .collect::<Vec<_>>()
            .join(",");
        out.push('\n');
        for s in &self.samples {
            out.push_str(
                &s.iter()
                    .map(|x| x.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            );
            out.push('\n');
        }
        out
    }
}

/// Integrated autocorrelation time with the initial positive sequence
/// truncation.
pub fn autocorrelation_time(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return 1.0;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return 1.0;
    }
    let rho = |lag: usize| -> f64 {
        (0..n - lag)
            .map(|t| (x[t] - mean) * (x[t + lag] - mean))
            .sum::<f64>()
            / (n as f64 * var)
    };
    let mut tau = 1.0;
    let mut lag = 1;
    while lag + 1 < n / 2 {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    tau
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(samples: &[Vec<f64>]) -> Vec<CoordinateSummary> {
    let dim = samples.first().map_or(0, Vec::len);
    (0..dim)
        .map(|i| {
            let col: Vec<f64> = samples.iter().map(|s| s[i]).collect();
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
            let mut sorted = col.clone();
            sorted.sort_by(f64::total_cmp);
            CoordinateSummary {
                mean,
                sd,
                q025: quantile(&sorted, 0.025),
                q50: quantile(&sorted, 0.5),
                q975: quantile(&sorted, 0.975),
                autocorr_time: autocorrelation_time(&col),
            }
        })
        .collect()
}

/// Default starting point: the ordered point of the prior mode (or mean) of
/// the weights, which is interior when every weight is positive.
pub fn default_init(prior_alphas: &DirichletParams) -> SimplexPoint {
    let omega = prior_alphas.mean();
    SimplexPoint::from_raw(ordered_from_weights_slice(omega.probs()))
}

/// Runs one chain of `n_sweeps` sweeps and keeps the states after
/// `burn_in`. With `counts = None` the chain targets the prior.
pub fn run_gibbs(
    counts: Option<&CountVector>,
    prior_alphas: &DirichletParams,
    n_sweeps: usize,
    burn_in: usize,
    init: Option<&SimplexPoint>,
    rng: &RngStream,
) -> Result<GibbsOutput> {
    let dim = prior_alphas.dim();
    if dim < 2 {
        return Err(Error::InvalidParameter("need at least two cells".into()));
    }
    if n_sweeps == 0 {
        return Err(Error::InvalidParameter("n_sweeps must be at least 1".into()));
    }
    if burn_in >= n_sweeps {
        return Err(Error::InvalidParameter(format!(
            "burn-in {burn_in} leaves no sweeps out of {n_sweeps}"
        )));
    }
    let f: Vec<f64> = match counts {
        Some(c) => {
            check_dims(dim, c.dim())?;
            c.counts().iter().map(|&x| x as f64).collect()
        }
        None => vec![0.0; dim],
    };
    let start = match init {
        Some(p) => {
            check_dims(dim, p.dim())?;
            p.clone()
        }
        None => default_init(prior_alphas),
    };
    let mut state = GibbsState::new(&start)?;
    let mut r = rng.clone();
    let mut samples = Vec::with_capacity(n_sweeps - burn_in);
    for sweep in 0..n_sweeps {
        gibbs_sweep(&mut state, &f, prior_alphas, &mut r)?;
        if sweep >= burn_in {
            samples.push(state.theta.clone());
        }
    }
    let summary = summarize(&samples);
    Ok(GibbsOutput {
        samples,
        summary,
        n_sweeps,
        burn_in,
        seed: rng.seed(),
        stream_id: rng.stream_id(),
    })
}

/// Runs `n_chains` independent chains, chain `c` on substream `c`.
pub fn run_chains(
    counts: Option<&CountVector>,
    prior_alphas: &DirichletParams,
    n_sweeps: usize,
    burn_in: usize,
    n_chains: usize,
    rng: &RngStream,
) -> Result<Vec<GibbsOutput>> {
    par_items(rng, n_chains, |_, r| {
        run_gibbs(counts, prior_alphas, n_sweeps, burn_in, None, r)
    })
    .into_iter()
    .collect()
}
