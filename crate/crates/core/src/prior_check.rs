//! Prior-data conflict checks.
//!
//! The prior predictive `m(t)` of a count vector is estimated by importance
//! sampling, and the conflict p-value is the prior predictive probability of
//! observing a count vector no more probable than the observed one,
//! `M(m(T) <= m(t_obs))`.

use serde::{Deserialize, Serialize};

use crate::elicitation::{dirichlet_from_mode, equispaced_mode, find_tau, ElicitationInput};
use crate::grouping::{group_counts, sum_groups, GroupSpec};
use crate::region::TrineGeometry;
use crate::sampling::{
    par_batches, par_items, sample_multinomial_counts, DirichletSampler, RngStream,
    TrineRadialLaw, TrineSampler, DEFAULT_BATCH,
};
use crate::simplex::{
    check_dims, log_likelihood_kernel, log_multinomial_coefficient, ordered_from_weights_slice,
    weights_from_ordered_slice, CountVector, DirichletParams, SimplexPoint,
};
use crate::special::{ln_factorial, LogWeightAccumulator};
use crate::{Error, Result};

/// The prior distributions that can be checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorKind {
    /// Density proportional to `(1 - Q(theta))^(1/2)` on the trine ellipse.
    Trine {
        a: f64,
        #[serde(default)]
        law: TrineRadialLaw,
    },
    /// `theta = A omega` with `omega ~ Dirichlet(omega_alphas)`.
    OrderedDirichlet { omega_alphas: DirichletParams },
    Dirichlet { alphas: DirichletParams },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    #[serde(flatten)]
    pub kind: PriorKind,
    /// Constant added to the log density. Conflict p-values do not depend on it.
    #[serde(default)]
    pub log_scale: f64,
}

impl From<PriorKind> for PriorSpec {
    fn from(kind: PriorKind) -> Self {
        Self {
            kind,
            log_scale: 0.0,
        }
    }
}

impl PriorSpec {
    pub fn trine(a: f64) -> Result<Self> {
        TrineGeometry::new(a)?;
        Ok(PriorKind::Trine {
            a,
            law: TrineRadialLaw::default(),
        }
        .into())
    }

    pub fn ordered(omega_alphas: DirichletParams) -> Self {
        PriorKind::OrderedDirichlet { omega_alphas }.into()
    }

    pub fn dirichlet(alphas: DirichletParams) -> Self {
        PriorKind::Dirichlet { alphas }.into()
    }

    /// The same prior with its density multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            kind: self.kind.clone(),
            log_scale: self.log_scale + factor.ln(),
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            PriorKind::Trine { .. } => 3,
            PriorKind::OrderedDirichlet { omega_alphas } => omega_alphas.dim(),
            PriorKind::Dirichlet { alphas } => alphas.dim(),
        }
    }

    /// Whether `log_density` is normalised.
    pub fn is_normalized(&self) -> bool {
        !matches!(self.kind, PriorKind::Trine { .. }) && self.log_scale == 0.0
    }

    /// Prior mode in probability space.
    pub fn mode(&self) -> SimplexPoint {
        match &self.kind {
            PriorKind::Trine { a, .. } => TrineGeometry::new(*a)
                .map(|g| g.center_point())
                .unwrap_or_else(|_| SimplexPoint::uniform(3)),
            PriorKind::OrderedDirichlet { omega_alphas } => {
                let omega = omega_alphas.mode().unwrap_or_else(|| omega_alphas.mean());
                SimplexPoint::from_raw(ordered_from_weights_slice(omega.probs()))
            }
            PriorKind::Dirichlet { alphas } => alphas.mode().unwrap_or_else(|| alphas.mean()),
        }
    }

    pub fn sampler(&self) -> Result<PriorSampler> {
        Ok(match &self.kind {
            PriorKind::Trine { a, law } => PriorSampler::Trine(TrineSampler::new(*a, *law)?),
            PriorKind::OrderedDirichlet { omega_alphas } => {
                PriorSampler::Ordered(DirichletSampler::new(omega_alphas))
            }
            PriorKind::Dirichlet { alphas } => PriorSampler::Raw(DirichletSampler::new(alphas)),
        })
    }

    /// Log density with respect to Lebesgue measure on the first `k`
    /// coordinates; `-inf` outside the support.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        let base = match &self.kind {
            PriorKind::Trine { a, .. } => match TrineGeometry::new(*a) {
                Ok(g) => {
                    let q = g.quadratic_form(theta[0], theta[1]);
                    if q < 1.0 {
                        0.5 * (1.0 - q).ln()
                    } else {
                        f64::NEG_INFINITY
                    }
                }
                Err(_) => f64::NEG_INFINITY,
            },
            PriorKind::OrderedDirichlet { omega_alphas } => {
                if theta.windows(2).any(|w| w[0] < w[1]) {
                    return f64::NEG_INFINITY;
                }
                let omega = weights_from_ordered_slice(theta);
                omega_alphas.log_density(&omega) + ordered_log_jacobian(theta.len())
            }
            PriorKind::Dirichlet { alphas } => alphas.log_density(theta),
        };
        base + self.log_scale
    }

    /// Log density of the prior on the weights `omega`, for ordered priors.
    fn log_density_weights(&self, omega: &[f64], theta: &[f64]) -> f64 {
        match &self.kind {
            PriorKind::OrderedDirichlet { omega_alphas } => {
                omega_alphas.log_density(omega) + self.log_scale
            }
            _ => self.log_density(theta) - ordered_log_jacobian(theta.len()),
        }
    }
}

/// `ln (k+1)!`, the log Jacobian of `theta -> omega` on the first `k`
/// coordinates.
fn ordered_log_jacobian(dim: usize) -> f64 {
    ln_factorial(dim as u64)
}

pub enum PriorSampler {
    Trine(TrineSampler),
    Ordered(DirichletSampler),
    Raw(DirichletSampler),
}

impl PriorSampler {
    pub fn sample_into(&self, rng: &mut RngStream, out: &mut Vec<f64>) {
        match self {
            PriorSampler::Trine(s) => {
                out.clear();
                out.extend_from_slice(s.sample(rng).probs());
            }
            PriorSampler::Ordered(s) => {
                out.resize(s.dim(), 0.0);
                s.sample_into(rng, out);
                *out = ordered_from_weights_slice(out);
            }
            PriorSampler::Raw(s) => {
                out.resize(s.dim(), 0.0);
                s.sample_into(rng, out);
            }
        }
    }
}

/// An importance sampling proposal, a Dirichlet either on the probabilities
/// directly or on the ordered weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "space", content = "alphas", rename_all = "snake_case")]
pub enum Proposal {
    Theta(DirichletParams),
    Weights(DirichletParams),
}

impl Proposal {
    pub fn params(&self) -> &DirichletParams {
        match self {
            Proposal::Theta(p) | Proposal::Weights(p) => p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEstimate {
    pub log_m: f64,
    /// Standard error of `log_m`.
    pub se: f64,
    pub ess: f64,
    pub nonzero: u64,
}

fn accumulate(
    t: &CountVector,
    prior: &PriorSpec,
    proposal: &Proposal,
    n_is: usize,
    rng: &mut RngStream,
) -> LogWeightAccumulator {
    let coef = log_multinomial_coefficient(t);
    let params = proposal.params();
    let sampler = DirichletSampler::new(params);
    let mut acc = LogWeightAccumulator::new();
    let mut x = vec![0.0; params.dim()];
    for _ in 0..n_is {
        sampler.sample_into(rng, &mut x);
        acc.push(log_weight(coef, t.counts(), prior, proposal, &x));
    }
    acc
}

fn estimate_with(
    t: &CountVector,
    prior: &PriorSpec,
    proposal: &Proposal,
    n_is: usize,
    rng: &mut RngStream,
) -> Result<LogEstimate> {
    let acc = accumulate(t, prior, proposal, n_is, rng);
    if acc.nonzero() == 0 {
        return Err(Error::AllWeightsZero {
            proposal: format!("{proposal:?}"),
        });
    }
    Ok(LogEstimate {
        log_m: acc.log_mean(),
        se: acc.log_mean_se(),
        ess: acc.ess(),
        nonzero: acc.nonzero(),
    })
}

/// Importance sampling estimate of `ln m(t)` from `n_is` proposal draws.
pub fn estimate_log_prior_predictive(
    t: &CountVector,
    prior: &PriorSpec,
    proposal: &Proposal,
    n_is: usize,
    rng: &RngStream,
) -> Result<LogEstimate> {
    check_dims(prior.dim(), t.dim())?;
    check_dims(prior.dim(), proposal.params().dim())?;
    if n_is == 0 {
        return Err(Error::InvalidParameter("n_is must be at least 1".into()));
    }
    estimate_with(t, prior, proposal, n_is, &mut rng.clone())
}

/// Largest `lambda` in `[0, 1]` such that `lambda p + (1 - lambda) mode` is
/// ordered, by bisection (`mode` must be ordered).
pub fn boundary_mixture(p: &[f64], mode: &[f64]) -> (f64, Vec<f64>) {
    let mix = |l: f64| -> Vec<f64> { p.iter().zip(mode).map(|(a, b)| l * a + (1.0 - l) * b).collect() };
    let ordered = |v: &[f64]| v.windows(2).all(|w| w[0] >= w[1]);
    if ordered(p) {
        return (1.0, p.to_vec());
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ordered(&mix(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, mix(lo))
}

/// Least-squares projection of `p` onto non-increasing sequences (pool
/// adjacent violators).
pub fn isotonic_decreasing(p: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(p.len());
    for &x in p {
        blocks.push((x, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a >= b {
                break;
            }
            blocks.pop();
            let len = blocks.len();
            blocks[len - 1] = ((a * na as f64 + b * nb as f64) / (na + nb) as f64, na + nb);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(v, n)| std::iter::repeat_n(v, n))
        .collect()
}

/// Where the proposal for an ordered prior is centred when `t / n` is not
/// ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderedCenter {
    /// The point where the segment from the prior mode to `t / n` leaves
    /// the ordered cone.
    #[default]
    BoundaryMixture,
    /// The isotonic projection of `t / n`.
    Isotonic,
}

/// Proposal for estimating `m(t)` under `prior` with concentration `tau`.
///
/// For unordered priors this is the Dirichlet with mode `t / n`. For ordered
/// priors the mode is pulled toward the prior mode until it reaches the
/// ordered cone, and the Dirichlet is placed on the weights, so every
/// proposal draw is ordered.
pub fn proposal_for(t: &CountVector, prior: &PriorSpec, tau: f64) -> Result<Proposal> {
    proposal_centered(t, prior, tau, OrderedCenter::default())
}

pub fn proposal_centered(
    t: &CountVector,
    prior: &PriorSpec,
    tau: f64,
    center: OrderedCenter,
) -> Result<Proposal> {
    check_dims(prior.dim(), t.dim())?;
    let freq = t.frequencies();
    match &prior.kind {
        PriorKind::OrderedDirichlet { .. } => {
            let target = match center {
                OrderedCenter::BoundaryMixture => {
                    boundary_mixture(freq.probs(), prior.mode().probs()).1
                }
                OrderedCenter::Isotonic => isotonic_decreasing(freq.probs()),
            };
            let xi = SimplexPoint::normalized(weights_from_ordered_slice(&target))?;
            Ok(Proposal::Weights(dirichlet_from_mode(&xi, tau)?))
        }
        _ => Ok(Proposal::Theta(dirichlet_from_mode(&freq, tau)?)),
    }
}

/// Optional adaptation of a proposal before the final importance run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Refinement {
    #[default]
    None,
    /// `rounds` pilot runs of `pilot` draws, each refitting the Dirichlet by
    /// matching the weighted mean and a pooled precision of the draws.
    MomentMatched { rounds: usize, pilot: usize },
}

/// Smallest Dirichlet parameter allowed after refitting.
const REFIT_ALPHA_FLOOR: f64 = 0.5;
/// Precision shrink factor applied to refitted proposals, widening them.
const REFIT_WIDEN: f64 = 0.7;

fn refit(params: &DirichletParams, draws: &[Vec<f64>], log_w: &[f64]) -> Option<DirichletParams> {
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let sw: f64 = w.iter().sum();
    let dim = params.dim();
    let mean: Vec<f64> = (0..dim)
        .map(|i| draws.iter().zip(&w).map(|(x, wi)| x[i] * wi).sum::<f64>() / sw)
        .collect();
    let mut precisions: Vec<f64> = (0..dim)
        .map(|i| {
            let var = draws
                .iter()
                .zip(&w)
                .map(|(x, wi)| (x[i] - mean[i]).powi(2) * wi)
                .sum::<f64>()
                / sw;
            if var > 0.0 {
                mean[i] * (1.0 - mean[i]) / var - 1.0
            } else {
                f64::NAN
            }
        })
        .filter(|p| p.is_finite())
        .collect();
    if precisions.is_empty() {
        return None;
    }
    precisions.sort_by(f64::total_cmp);
    let total = precisions[precisions.len() / 2].max(1.0) * REFIT_WIDEN;
    DirichletParams::new(mean.iter().map(|m| (m * total).max(REFIT_ALPHA_FLOOR)).collect()).ok()
}

fn log_weight(
    coef: f64,
    counts: &[u64],
    prior: &PriorSpec,
    proposal: &Proposal,
    x: &[f64],
) -> f64 {
    let lw = match proposal {
        Proposal::Theta(q) => {
            let prior_ld = prior.log_density(x);
            if prior_ld == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                coef + log_likelihood_kernel(counts, x) + prior_ld - q.log_density(x)
            }
        }
        Proposal::Weights(q) => {
            let theta = ordered_from_weights_slice(x);
            let prior_ld = prior.log_density_weights(x, &theta);
            if prior_ld == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                coef + log_likelihood_kernel(counts, &theta) + prior_ld - q.log_density(x)
            }
        }
    };
    if lw.is_nan() {
        f64::NEG_INFINITY
    } else {
        lw
    }
}

/// Applies `refinement` to `proposal` using pilot importance runs for `t`.
pub fn refine_proposal(
    t: &CountVector,
    prior: &PriorSpec,
    proposal: Proposal,
    refinement: Refinement,
    rng: &mut RngStream,
) -> Proposal {
    let Refinement::MomentMatched { rounds, pilot } = refinement else {
        return proposal;
    };
    let coef = log_multinomial_coefficient(t);
    let mut current = proposal;
    for _ in 0..rounds {
        let params = current.params();
        let sampler = DirichletSampler::new(params);
        let mut draws = Vec::with_capacity(pilot);
        let mut log_w = Vec::with_capacity(pilot);
        for _ in 0..pilot {
            let mut x = vec![0.0; params.dim()];
            sampler.sample_into(rng, &mut x);
            log_w.push(log_weight(coef, t.counts(), prior, &current, &x));
            draws.push(x);
        }
        let Some(next) = refit(params, &draws, &log_w) else {
            break;
        };
        current = match current {
            Proposal::Theta(_) => Proposal::Theta(next),
            Proposal::Weights(_) => Proposal::Weights(next),
        };
    }
    current
}

/// How the proposal concentration is chosen for each count vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "value", rename_all = "snake_case")]
pub enum TauRule {
    /// `tau = factor * n`; a factor of 1 for an unordered prior gives the
    /// posterior under the uniform prior.
    SampleSizeFraction(f64),
    Fixed(f64),
    /// Chosen from the grid by [`tune_tau`] on a representative predictive
    /// draw.
    Tuned(Vec<f64>),
}

impl Default for TauRule {
    fn default() -> Self {
        TauRule::SampleSizeFraction(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauProfile {
    pub selected: f64,
    /// `(tau, ess)` for every grid value; excluded values have `ess = 0`.
    pub profile: Vec<(f64, f64)>,
}

/// Picks the grid value of `tau` maximising the effective sample size of
/// the importance weights for `t_repr`.
pub fn tune_tau(
    t_repr: &CountVector,
    prior: &PriorSpec,
    tau_grid: &[f64],
    center: OrderedCenter,
    n_is: usize,
    rng: &RngStream,
) -> Result<TauProfile> {
    if tau_grid.is_empty() {
        return Err(Error::InvalidParameter("empty τ grid".into()));
    }
    let mut profile = Vec::with_capacity(tau_grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &tau in tau_grid {
        let proposal = proposal_centered(t_repr, prior, tau, center)?;
        let ess = match estimate_log_prior_predictive(t_repr, prior, &proposal, n_is, rng) {
            Ok(e) => e.ess,
            Err(Error::AllWeightsZero { .. }) => 0.0,
            Err(e) => return Err(e),
        };
        profile.push((tau, ess));
        if ess > 0.0 && best.is_none_or(|(_, b)| ess > b) {
            best = Some((tau, ess));
        }
    }
    match best {
        Some((selected, _)) => Ok(TauProfile { selected, profile }),
        None => Err(Error::AllWeightsZero {
            proposal: format!("every τ in {tau_grid:?}"),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictOptions {
    pub n_pred: usize,
    pub n_is: usize,
    pub tau: TauRule,
    #[serde(default)]
    pub center: OrderedCenter,
    #[serde(default)]
    pub refinement: Refinement,
}

impl Default for ConflictOptions {
    fn default() -> Self {
        Self {
            n_pred: 1000,
            n_is: 10_000,
            tau: TauRule::default(),
            center: OrderedCenter::default(),
            refinement: Refinement::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictivePoint {
    pub counts: Vec<u64>,
    pub estimate: Option<LogEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssSummary {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub pvalue: f64,
    pub n_predictive: usize,
    pub n_failed: usize,
    /// More than 1% of predictive points could not be estimated.
    pub unreliable: bool,
    /// `false` when the prior density is only known up to a constant.
    pub normalized_prior: bool,
    pub observed: LogEstimate,
    pub points: Vec<PredictivePoint>,
    pub ess: EssSummary,
    pub tau: TauRule,
    pub tau_profile: Option<TauProfile>,
    pub n_is: usize,
    pub seed: u64,
    pub stream_id: u64,
}

impl ConflictReport {
    /// CSV of `log_m,se` for every predictive point (empty fields on failure).
    pub fn points_csv(&self) -> String {
        let mut out = String::from("log_m,se\n");
        for p in &self.points {
            match &p.estimate {
                Some(e) => out.push_str(&format!("{},{}\n", e.log_m, e.se)),
                None => out.push_str(",\n"),
            }
        }
        out
    }
}

fn resolve_tau(rule: &TauRule, n: u64, tuned: Option<f64>) -> f64 {
    match rule {
        TauRule::SampleSizeFraction(f) => f * n as f64,
        TauRule::Fixed(t) => *t,
        TauRule::Tuned(_) => tuned.expect("tuned before use"),
    }
}

/// Draws a count vector of size `n` from the prior predictive.
fn sample_predictive(
    sampler: &PriorSampler,
    n: u64,
    rng: &mut RngStream,
    buf: &mut Vec<f64>,
) -> Result<CountVector> {
    loop {
        sampler.sample_into(rng, buf);
        let counts = sample_multinomial_counts(n, buf, rng);
        if counts.iter().sum::<u64>() == n {
            return CountVector::new(counts);
        }
    }
}

/// Conflict p-value `M(m(T) <= m(t_obs))` from `n_pred` prior predictive
/// draws, each `m` estimated with `n_is` importance draws.
pub fn conflict_pvalue(
    t_obs: &CountVector,
    prior: &PriorSpec,
    options: &ConflictOptions,
    rng: &RngStream,
) -> Result<ConflictReport> {
    check_dims(prior.dim(), t_obs.dim())?;
    if options.n_pred == 0 || options.n_is == 0 {
        return Err(Error::InvalidParameter(
            "n_pred and n_is must be at least 1".into(),
        ));
    }
    let n = t_obs.n();
    let sampler = prior.sampler()?;

    let tau_profile = match &options.tau {
        TauRule::Tuned(grid) => {
            let mut r = rng.substream(2);
            let repr = sample_predictive(&sampler, n, &mut r, &mut Vec::new())?;
            Some(tune_tau(&repr, prior, grid, options.center, options.n_is, &rng.substream(3))?)
        }
        _ => None,
    };
    let tau = resolve_tau(&options.tau, n, tau_profile.as_ref().map(|p| p.selected));

    let observed = {
        let mut r = rng.substream(1);
        let proposal = proposal_centered(t_obs, prior, tau, options.center)?;
        let proposal = refine_proposal(t_obs, prior, proposal, options.refinement, &mut r);
        estimate_with(t_obs, prior, &proposal, options.n_is, &mut r)?
    };

    let points: Vec<PredictivePoint> = par_items(&rng.substream(0), options.n_pred, |_, r| {
        let mut buf = Vec::new();
        let t = match sample_predictive(&sampler, n, r, &mut buf) {
            Ok(t) => t,
            Err(_) => {
                return PredictivePoint {
                    counts: Vec::new(),
                    estimate: None,
                }
            }
        };
        let estimate = proposal_centered(&t, prior, tau, options.center)
            .and_then(|q| {
                let q = refine_proposal(&t, prior, q, options.refinement, r);
                estimate_with(&t, prior, &q, options.n_is, r)
            })
            .ok();
        PredictivePoint {
            counts: t.counts().to_vec(),
            estimate,
        }
    });

    let ok: Vec<&LogEstimate> = points.iter().filter_map(|p| p.estimate.as_ref()).collect();
    let n_failed = points.len() - ok.len();
    if ok.is_empty() {
        return Err(Error::Numerical(
            "no predictive point could be estimated".into(),
        ));
    }
    let below = ok.iter().filter(|e| e.log_m <= observed.log_m).count();
    let mut ess: Vec<f64> = ok.iter().map(|e| e.ess).collect();
    ess.sort_by(f64::total_cmp);
    Ok(ConflictReport {
        pvalue: below as f64 / ok.len() as f64,
        n_predictive: ok.len(),
        n_failed,
        unreliable: n_failed as f64 > 0.01 * points.len() as f64,
        normalized_prior: prior.is_normalized(),
        observed,
        points,
        ess: EssSummary {
            min: ess[0],
            median: ess[ess.len() / 2],
            max: ess[ess.len() - 1],
        },
        tau: options.tau.clone(),
        tau_profile,
        n_is: options.n_is,
        seed: rng.seed(),
        stream_id: rng.stream_id(),
    })
}

/// Bounds for the grouped problem when `k + 1` cells are grouped with the
/// strided layout into `m` groups: `u' = u + sum_{j=2}^{g} 1/(1 + (j-1) m)`,
/// `l' = l + sum_{j=2}^{g} 1/(j m)`, where `g` is the size of the last group.
pub fn grouped_bounds(l: f64, u: f64, k: usize, m: usize) -> Result<(f64, f64)> {
    if !(0.0 <= l && l < u && u <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need 0 <= l < u <= 1, got l = {l}, u = {u}"
        )));
    }
    let dim = k + 1;
    let groups = GroupSpec::Strided(m).groups(dim)?;
    let first = groups[0].len();
    let last = groups[groups.len() - 1].len();
    let u2 = u + (2..=first).map(|j| 1.0 / (1 + (j - 1) * m) as f64).sum::<f64>();
    let l2 = l + (2..=last).map(|j| 1.0 / (j * m) as f64).sum::<f64>();
    Ok((l2, u2.min(1.0)))
}

/// Fraction of prior predictive count vectors of size `n` whose grouped
/// frequencies are ordered.
pub fn predictive_in_region_rate(
    prior: &PriorSpec,
    spec: &GroupSpec,
    n: u64,
    n_draws: usize,
    rng: &RngStream,
) -> Result<f64> {
    let dim = prior.dim();
    let groups = spec.groups(dim)?;
    let sampler = prior.sampler()?;
    let hits: usize = par_batches(rng, n_draws, DEFAULT_BATCH, |range, r| {
        let mut buf = Vec::new();
        range
            .filter(|_| {
                sampler.sample_into(r, &mut buf);
                let t: Vec<f64> = sample_multinomial_counts(n, &buf, r)
                    .into_iter()
                    .map(|c| c as f64)
                    .collect();
                sum_groups(&t, &groups).windows(2).all(|w| w[0] >= w[1])
            })
            .count()
    })
    .into_iter()
    .sum();
    Ok(hits as f64 / n_draws as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedConflictReport {
    pub m: usize,
    pub l: f64,
    pub u: f64,
    pub tau_prior: f64,
    pub grouped_counts: Vec<u64>,
    pub report: ConflictReport,
}

/// Conflict check for the problem reduced to `m` strided groups: the prior
/// for the grouped probabilities is elicited afresh with a uniform mode and
/// the grouped bounds, then checked against the grouped counts.
pub fn grouped_conflict_check(
    t_obs: &CountVector,
    l: f64,
    u: f64,
    gamma: f64,
    m: usize,
    options: &ConflictOptions,
    elicit_draws: usize,
    rng: &RngStream,
) -> Result<GroupedConflictReport> {
    let k = t_obs.dim() - 1;
    let (l2, u2) = grouped_bounds(l, u, k, m)?;
    let input = ElicitationInput {
        k: m - 1,
        delta: 0.0,
        l: l2,
        u: u2,
        gamma,
    };
    let search = find_tau(&input, elicit_draws, &rng.substream(10))?;
    let (_, xi) = equispaced_mode(m - 1, 0.0)?;
    let prior = PriorSpec::ordered(dirichlet_from_mode(&xi, search.tau)?);
    let grouped = group_counts(t_obs, &GroupSpec::Strided(m))?;
    let report = conflict_pvalue(&grouped, &prior, options, &rng.substream(11))?;
    Ok(GroupedConflictReport {
        m,
        l: l2,
        u: u2,
        tau_prior: search.tau,
        grouped_counts: grouped.counts().to_vec(),
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::sample_dirichlet;
    use crate::special::ln_multi_beta;
    use rand::Rng;

    fn dm_log_mass(t: &CountVector, alphas: &[f64]) -> f64 {
        let post: Vec<f64> = alphas.iter().zip(t.counts()).map(|(a, &c)| a + c as f64).collect();
        log_multinomial_coefficient(t) + ln_multi_beta(&post) - ln_multi_beta(alphas)
    }

    #[test]
    fn uniform_beta_predictive_is_flat() {
        let prior = PriorSpec::dirichlet(DirichletParams::uniform(2));
        for c in [0u64, 3, 10] {
            let t = CountVector::new(vec![c, 10 - c]).unwrap();
            let q = proposal_for(&t, &prior, 10.0).unwrap();
            let e = estimate_log_prior_predictive(&t, &prior, &q, 20_000, &RngStream::new(1, c)).unwrap();
            let exact = -(11f64.ln());
            assert!((e.log_m - exact).abs() < 3.0 * e.se + 1e-12, "{c}: {} vs {exact}", e.log_m);
        }
    }

    #[test]
    fn uniform_prior_closed_form_k2() {
        let prior = PriorSpec::dirichlet(DirichletParams::uniform(3));
        let t = CountVector::new(vec![5, 3, 2]).unwrap();
        let q = proposal_for(&t, &prior, 10.0).unwrap();
        let e = estimate_log_prior_predictive(&t, &prior, &q, 20_000, &RngStream::new(2, 0)).unwrap();
        // n! / (n + k)! * k! ... for the uniform prior every count vector has
        // mass 1 / C(n + k, k)
        let exact = -((12.0 * 11.0 / 2.0) as f64).ln();
        assert!((e.log_m - exact).abs() < 3.0 * e.se);
    }

    #[test]
    fn random_dirichlet_cases_match_closed_form() {
        let mut rng = RngStream::new(3, 0);
        let mut misses = 0;
        for case in 0..100 {
            let dim = rng.random_range(2..=4usize);
            let n = rng.random_range(1..=30u64);
            let alphas: Vec<f64> = (0..dim).map(|_| rng.random_range(0.5..5.0)).collect();
            let params = DirichletParams::new(alphas.clone()).unwrap();
            let theta = sample_dirichlet(&params, &mut rng);
            let t = CountVector::new(sample_multinomial_counts(n, theta.probs(), &mut rng)).unwrap();
            let prior = PriorSpec::dirichlet(params);
            let q = proposal_for(&t, &prior, n as f64).unwrap();
            let e = estimate_log_prior_predictive(&t, &prior, &q, 20_000, &RngStream::new(30, case)).unwrap();
            if (e.log_m - dm_log_mass(&t, &alphas)).abs() > 3.0 * e.se {
                misses += 1;
            }
        }
        assert!(misses <= 3, "{misses} of 100 outside 3 SE");
    }

    #[test]
    fn zero_weights_are_reported() {
        let prior = PriorSpec::trine(1.0 / 3.0).unwrap();
        let t = CountVector::new(vec![10, 10, 10]).unwrap();
        let q = Proposal::Theta(DirichletParams::new(vec![1.0, 1.0, 1e4]).unwrap());
        let err = estimate_log_prior_predictive(&t, &prior, &q, 200, &RngStream::new(4, 0)).unwrap_err();
        assert!(matches!(err, Error::AllWeightsZero { .. }));
    }

    #[test]
    fn proposal_keeps_ordered_frequencies() {
        let prior = PriorSpec::ordered(DirichletParams::new(vec![1.0, 1.0, 1.0, 3.0]).unwrap());
        let t = CountVector::new(vec![9, 5, 4, 2]).unwrap();
        let (lambda, target) = boundary_mixture(t.frequencies().probs(), prior.mode().probs());
        assert_eq!(lambda, 1.0);
        assert!(SimplexPoint::from_raw(target).max_abs_diff(&t.frequencies()) == 0.0);
    }

    #[test]
    fn proposal_projects_unordered_frequencies() {
        let (_, xi) = equispaced_mode(17, max_spacing_17()).unwrap();
        let prior = PriorSpec::ordered(dirichlet_from_mode(&xi, 16.5).unwrap());
        let t = CountVector::new(vec![35, 29, 20, 145, 96, 11, 4, 4, 4, 3, 3, 2, 2, 1, 1, 1, 1, 1]).unwrap();
        let (lambda, target) = boundary_mixture(t.frequencies().probs(), prior.mode().probs());
        assert!(lambda > 0.0 && lambda < 1.0);
        assert!(target.windows(2).all(|w| w[0] >= w[1]));
        let min_gap = target.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min);
        assert!(min_gap < 1e-9);
        let q = proposal_for(&t, &prior, 60.0).unwrap();
        assert!(matches!(q, Proposal::Weights(_)));
        let sampler = DirichletSampler::new(q.params());
        let mut rng = RngStream::new(5, 0);
        for _ in 0..1000 {
            let theta = ordered_from_weights_slice(sampler.sample(&mut rng).probs());
            assert!(theta.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    fn max_spacing_17() -> f64 {
        crate::elicitation::max_spacing(17)
    }

    #[test]
    fn ordered_density_matches_weight_density() {
        let omega = DirichletParams::new(vec![1.5, 2.0, 1.0, 3.0]).unwrap();
        let prior = PriorSpec::ordered(omega.clone());
        let w = [0.1, 0.2, 0.3, 0.4];
        let theta = ordered_from_weights_slice(&w);
        let lhs = prior.log_density(&theta);
        let rhs = omega.log_density(&w) + 24f64.ln();
        assert!((lhs - rhs).abs() < 1e-12);
        assert_eq!(prior.log_density(&[0.2, 0.5, 0.2, 0.1]), f64::NEG_INFINITY);
    }

    #[test]
    fn ordered_density_is_normalised_k1() {
        // k = 1: theta_1 in [1/2, 1], density 2 * Beta density of omega
        let prior = PriorSpec::ordered(DirichletParams::new(vec![2.0, 3.0]).unwrap());
        let n = 200_000;
        let h = 0.5 / n as f64;
        let total: f64 = (0..n)
            .map(|i| {
                let x = 0.5 + (i as f64 + 0.5) * h;
                prior.log_density(&[x, 1.0 - x]).exp() * h
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn tune_tau_selection_contract() {
        let prior = PriorSpec::dirichlet(DirichletParams::new(vec![2.0, 2.0, 2.0]).unwrap());
        let t = CountVector::new(vec![40, 35, 25]).unwrap();
        let grid = [1.0, 10.0, 100.0];
        let p = tune_tau(&t, &prior, &grid, OrderedCenter::default(), 2000, &RngStream::new(6, 0)).unwrap();
        let best = p.profile.iter().cloned().fold((0.0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        assert_eq!(p.selected, best.0);
        let single = tune_tau(&t, &prior, &[7.0], OrderedCenter::default(), 500, &RngStream::new(6, 0)).unwrap();
        assert_eq!(single.selected, 7.0);
        assert!(tune_tau(&t, &prior, &[], OrderedCenter::default(), 500, &RngStream::new(6, 0)).is_err());
    }

    #[test]
    fn grouped_bound_formulas() {
        let (l, u) = grouped_bounds(0.01, 0.3, 17, 9).unwrap();
        assert!((u - (0.3 + 0.1)).abs() < 1e-15);
        assert!((l - (0.01 + 1.0 / 18.0)).abs() < 1e-15);
        let (l, u) = grouped_bounds(0.01, 0.3, 17, 6).unwrap();
        assert!((u - (0.3 + 1.0 / 7.0 + 1.0 / 13.0)).abs() < 1e-15);
        assert!((l - (0.01 + 1.0 / 12.0 + 1.0 / 18.0)).abs() < 1e-15);
        assert_eq!(grouped_bounds(0.01, 0.3, 17, 18).unwrap(), (0.01, 0.3));
        assert!(grouped_bounds(0.3, 0.3, 17, 9).is_err());
    }

    #[test]
    fn grouped_upper_bound_holds_for_ordered_points() {
        let (l, u) = (1.0 / 450.0, 0.5);
        let mut rng = RngStream::new(7, 0);
        let (_, xi) = equispaced_mode(17, 0.0).unwrap();
        let w = DirichletSampler::new(&dirichlet_from_mode(&xi, 2.85).unwrap());
        for m in [9usize, 6] {
            let (_, u2) = grouped_bounds(l, u, 17, m).unwrap();
            let groups = GroupSpec::Strided(m).groups(18).unwrap();
            let mut checked = 0;
            while checked < 100_000 {
                let theta = ordered_from_weights_slice(w.sample(&mut rng).probs());
                if !(l < theta[17] && theta[0] < u) {
                    continue;
                }
                let g = sum_groups(&theta, &groups);
                assert!(g[0] < u2);
                checked += 1;
            }
        }
    }

    #[test]
    fn grouped_lower_bound_is_not_implied() {
        // an ordered point inside (l, u) whose last pair falls below l'
        let (l, u) = (0.001, 0.5);
        let mut theta = vec![0.0; 18];
        theta[0] = 0.45;
        theta[1] = 0.45;
        for x in theta.iter_mut().skip(2) {
            *x = 0.1 / 16.0;
        }
        let (l2, _) = grouped_bounds(l, u, 17, 9).unwrap();
        let g = sum_groups(&theta, &GroupSpec::Strided(9).groups(18).unwrap());
        assert!(theta[17] > l && theta[0] < u);
        assert!(g[8] < l2);
    }

    #[test]
    fn in_region_rate_trivial_cases() {
        let prior = PriorSpec::ordered(DirichletParams::new(vec![1.0, 1.0, 1.0, 5.0]).unwrap());
        let one = predictive_in_region_rate(&prior, &GroupSpec::Strided(1), 50, 1000, &RngStream::new(8, 0)).unwrap();
        assert_eq!(one, 1.0);
        let small = predictive_in_region_rate(&prior, &GroupSpec::identity(4), 20, 20_000, &RngStream::new(8, 1)).unwrap();
        let large = predictive_in_region_rate(&prior, &GroupSpec::identity(4), 20_000, 20_000, &RngStream::new(8, 1)).unwrap();
        assert!(large > small);
        assert!(large > 0.9);
    }

    #[test]
    fn pvalue_is_scale_invariant_and_deterministic() {
        let prior = PriorSpec::dirichlet(DirichletParams::new(vec![3.0, 2.0, 2.0]).unwrap());
        let t = CountVector::new(vec![5, 10, 15]).unwrap();
        let opts = ConflictOptions { n_pred: 200, n_is: 500, tau: TauRule::default(), center: OrderedCenter::default(), refinement: Refinement::None };
        let rng = RngStream::new(9, 0);
        let a = conflict_pvalue(&t, &prior, &opts, &rng).unwrap();
        let b = conflict_pvalue(&t, &prior.scaled(7.3), &opts, &rng).unwrap();
        let c = conflict_pvalue(&t, &prior, &opts, &rng).unwrap();
        assert_eq!(a.pvalue, b.pvalue);
        assert_eq!(a, c);
        assert!(b.normalized_prior == false && a.normalized_prior);
    }

    #[test]
    fn pvalue_invariant_under_relabelling() {
        let prior = PriorSpec::dirichlet(DirichletParams::new(vec![3.0, 2.0, 1.5]).unwrap());
        let perm = [2usize, 0, 1];
        let alphas: Vec<f64> = perm.iter().map(|&i| prior_alphas(&prior)[i]).collect();
        let prior_p = PriorSpec::dirichlet(DirichletParams::new(alphas).unwrap());
        let t = CountVector::new(vec![20, 6, 4]).unwrap();
        let t_p = t.permuted(&perm).unwrap();
        let opts = ConflictOptions { n_pred: 400, n_is: 2000, tau: TauRule::default(), center: OrderedCenter::default(), refinement: Refinement::None };
        let a = conflict_pvalue(&t, &prior, &opts, &RngStream::new(10, 0)).unwrap();
        let b = conflict_pvalue(&t_p, &prior_p, &opts, &RngStream::new(10, 1)).unwrap();
        let se = (a.pvalue * (1.0 - a.pvalue) / 400.0).sqrt();
        assert!((a.pvalue - b.pvalue).abs() < 4.0 * se * 2f64.sqrt() + 0.01);
    }

    fn prior_alphas(p: &PriorSpec) -> Vec<f64> {
        match &p.kind {
            PriorKind::Dirichlet { alphas } => alphas.alphas().to_vec(),
            _ => unreachable!(),
        }
    }

    #[test]
    fn prior_spec_json_shape() {
        let p = PriorSpec::trine(0.4).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"kind\":\"trine\""));
        let back: PriorSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        let q: PriorSpec = serde_json::from_str(r#"{"kind":"ordered_dirichlet","omega_alphas":[1,1,2]}"#).unwrap();
        assert_eq!(q.dim(), 3);
    }
}
