//! Model checks under the uniform prior on the full simplex.
//!
//! For a region with positive prior mass the relative belief ratio
//! `RB = Π0(Θ | t) / Π0(Θ)` is reported with the posterior content as its
//! strength. Measure-zero hypotheses such as the Zipf-Mandelbrot family are
//! checked through the prior and posterior distributions of the KL distance
//! `d(θ) = inf_{α,β} KL(θ || ZM_k(α, β))`, discretised into bins of width δ.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

use crate::grouping::{sum_groups, GroupSpec};
use crate::region::ConstraintRegion;
use crate::sampling::{par_batches, DirichletSampler, RngStream, DEFAULT_BATCH};
use crate::simplex::{check_dims, CountVector, DirichletParams, SimplexPoint};
use crate::special::xlogy;
use crate::zm::{uniform_kl, zm_log_probs, ZmParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMassSource {
    Analytic,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub prior_prob: f64,
    pub prior_source: PriorMassSource,
    /// Binomial standard error of `prior_prob` (0 when analytic).
    pub prior_se: f64,
    pub post_prob: f64,
    pub rb: f64,
    pub strength: f64,
    /// Binomial standard error of `post_prob`.
    pub mc_se: f64,
    pub n_draws: u64,
    pub seed: u64,
    pub stream_id: u64,
}

impl CheckReport {
    pub fn evidence_in_favor(&self) -> bool {
        self.rb > 1.0
    }
}

/// Membership test specialised for hot loops over raw probability slices.
struct RegionTester<'a> {
    region: &'a ConstraintRegion,
    groups: Option<Vec<Vec<usize>>>,
}

impl<'a> RegionTester<'a> {
    fn new(region: &'a ConstraintRegion, dim: usize) -> Result<Self> {
        region.check_dim(dim)?;
        let groups = match region {
            ConstraintRegion::GroupedOrderedCone(spec) => Some(spec.groups(dim)?),
            _ => None,
        };
        Ok(Self { region, groups })
    }

    fn contains(&self, p: &[f64]) -> bool {
        match (self.region, &self.groups) {
            (ConstraintRegion::GroupedOrderedCone(_), Some(groups)) => {
                let g = sum_groups(p, groups);
                g.windows(2).all(|w| w[0] >= w[1])
            }
            (ConstraintRegion::OrderedCone, _) => p.windows(2).all(|w| w[0] >= w[1]),
            _ => self
                .region
                .contains(&SimplexPoint::from_raw(p.to_vec()))
                .unwrap_or(false),
        }
    }
}

/// Fraction of `n_draws` Dirichlet draws falling in the region.
fn dirichlet_region_fraction(
    params: &DirichletParams,
    tester: &RegionTester<'_>,
    n_draws: usize,
    rng: &RngStream,
) -> f64 {
    let sampler = DirichletSampler::new(params);
    let dim = params.dim();
    let hits: u64 = par_batches(rng, n_draws, DEFAULT_BATCH, |range, r| {
        let mut buf = vec![0.0; dim];
        range
            .filter(|_| {
                sampler.sample_into(r, &mut buf);
                tester.contains(&buf)
            })
            .count() as u64
    })
    .into_iter()
    .sum();
    hits as f64 / n_draws as f64
}

/// Relative belief check of `region` under the uniform prior.
///
/// The posterior content is estimated from `n_draws` draws of
/// `Dirichlet(t + 1)`; the prior content is exact where a closed form exists
/// and otherwise estimated from `n_draws` uniform draws.
pub fn rb_region_check(
    t: &CountVector,
    region: &ConstraintRegion,
    n_draws: u64,
    rng: &RngStream,
) -> Result<CheckReport> {
    if n_draws == 0 {
        return Err(Error::InvalidParameter("n_draws must be at least 1".into()));
    }
    let dim = t.dim();
    let tester = RegionTester::new(region, dim)?;
    let n = n_draws as usize;

    let (prior_prob, prior_source, prior_se) = match region.analytic_uniform_mass(dim)? {
        Some(m) if m == 0.0 => return Err(Error::MeasureZeroRegion),
        Some(m) => (m, PriorMassSource::Analytic, 0.0),
        None => {
            let p = dirichlet_region_fraction(
                &DirichletParams::uniform(dim),
                &tester,
                n,
                &rng.substream(1),
            );
            if p == 0.0 {
                return Err(Error::MeasureZeroRegion);
            }
            (
                p,
                PriorMassSource::MonteCarlo,
                (p * (1.0 - p) / n as f64).sqrt(),
            )
        }
    };

    let posterior = DirichletParams::uniform(dim).posterior(t)?;
    let post_prob = dirichlet_region_fraction(&posterior, &tester, n, &rng.substream(0));
    Ok(CheckReport {
        prior_prob,
        prior_source,
        prior_se,
        post_prob,
        rb: post_prob / prior_prob,
        strength: post_prob,
        mc_se: (post_prob * (1.0 - post_prob) / n as f64).sqrt(),
        n_draws,
        seed: rng.seed(),
        stream_id: rng.stream_id(),
    })
}

/// Grouped ordered-cone check: groups the counts with `spec` and checks the
/// ordered cone of the grouped cells, treating the grouped counts as a
/// multinomial with a uniform prior on the grouped simplex.
///
/// Checking [`ConstraintRegion::GroupedOrderedCone`] with
/// [`rb_region_check`] instead keeps the uniform prior on the original cells,
/// whose aggregate is `Dirichlet(group sizes)`. Both give prior content `1/m!`
/// for `m` equal groups; the posterior contents differ.
pub fn rb_grouped_order_check(
    t: &CountVector,
    spec: &GroupSpec,
    n_draws: u64,
    rng: &RngStream,
) -> Result<CheckReport> {
    let grouped = group_counts(t, spec)?;
    rb_region_check(&grouped, &ConstraintRegion::OrderedCone, n_draws, rng)
}

pub use crate::grouping::group_counts;

/// β values for the ZM table: 0 plus a geometric grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaGrid {
    pub betas: Vec<f64>,
    /// α values per β row.
    pub alpha_points: usize,
    /// Smallest α in each row.
    pub alpha_min: f64,
}

impl Default for BetaGrid {
    fn default() -> Self {
        Self::geometric(0.05, 25.0, 60, 24)
    }
}

impl BetaGrid {
    /// `0` followed by `points` geometrically spaced values in `[lo, hi]`.
    pub fn geometric(lo: f64, hi: f64, points: usize, alpha_points: usize) -> Self {
        let mut betas = vec![0.0];
        if points == 1 {
            betas.push(lo);
        } else {
            let ratio = (hi / lo).powf(1.0 / (points - 1) as f64);
            betas.extend((0..points).map(|i| lo * ratio.powi(i as i32)));
        }
        Self {
            betas,
            alpha_points,
            alpha_min: -0.95,
        }
    }

    /// FNV-1a over the bit patterns, used as part of the cache key.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for b in &self.betas {
            feed(b.to_bits());
        }
        feed(self.alpha_points as u64);
        feed(self.alpha_min.to_bits());
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZmEntry {
    pub params: ZmParams,
    pub probs: SimplexPoint,
}

pub const ZM_TABLE_FORMAT_VERSION: u32 = 1;

/// A table of Zipf-Mandelbrot distributions used to evaluate `d(θ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZmTable {
    pub format_version: u32,
    pub k: usize,
    pub delta: f64,
    pub grid: BetaGrid,
    /// Largest α kept for each β row (`None` when the whole row lies within
    /// δ of the uniform distribution, or for β = 0).
    pub alpha_max: Vec<Option<f64>>,
    pub entries: Vec<ZmEntry>,
    #[serde(skip)]
    log_probs: Vec<Vec<f64>>,
}

/// Largest `α` with `uniform_kl(α, β) >= δ`, by bisection.
///
/// Returns `None` when no `α > -1` reaches δ.
pub fn alpha_max(beta: f64, k: usize, delta: f64) -> Option<f64> {
    let kl = |alpha: f64| uniform_kl(ZmParams { alpha, beta }, k);
    let floor = -1.0 + 1e-12;
    if beta == 0.0 || kl(floor) < delta {
        return None;
    }
    let mut lo = floor;
    let mut hi = 1.0;
    while kl(hi) >= delta {
        lo = hi;
        hi = 2.0 * hi + 1.0;
        if hi > 1e15 {
            return Some(lo);
        }
    }
    // invariant: kl(lo) >= delta > kl(hi)
    for _ in 0..200 {
        if kl(lo) <= delta * (1.0 + 1e-6) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if kl(mid) >= delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

pub fn build_zm_table(k: usize, delta: f64, grid: &BetaGrid) -> Result<ZmTable> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must be positive, got {delta}"
        )));
    }
    if k < 1 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if grid.betas.is_empty() || grid.alpha_points == 0 {
        return Err(Error::InvalidParameter("empty β grid".into()));
    }
    let rows: Vec<(Option<f64>, Vec<ZmEntry>)> = grid
        .betas
        .par_iter()
        .map(|&beta| build_row(k, delta, beta, grid))
        .collect();
    let alpha_max = rows.iter().map(|(a, _)| *a).collect();
    let entries = rows.into_iter().flat_map(|(_, e)| e).collect();
    Ok(ZmTable::from_parts(k, delta, grid.clone(), alpha_max, entries))
}

fn build_row(k: usize, delta: f64, beta: f64, grid: &BetaGrid) -> (Option<f64>, Vec<ZmEntry>) {
    let entry = |alpha: f64| {
        let params = ZmParams { alpha, beta };
        let probs = SimplexPoint::from_raw(
            zm_log_probs(params, k).into_iter().map(f64::exp).collect(),
        );
        ZmEntry { params, probs }
    };
    if beta == 0.0 {
        return (None, vec![entry(0.0)]);
    }
    let Some(amax) = alpha_max(beta, k, delta) else {
        return (None, Vec::new());
    };
    let lo = grid.alpha_min;
    let alphas: Vec<f64> = if amax <= lo || grid.alpha_points == 1 {
        vec![amax]
    } else {
        // geometric in α + 1, which resolves the fast change near α = -1
        let (l, h) = ((lo + 1.0).ln(), (amax + 1.0).ln());
        let m = grid.alpha_points - 1;
        (0..=m)
            .map(|i| (l + (h - l) * i as f64 / m as f64).exp() - 1.0)
            .collect()
    };
    let mut kept: Vec<ZmEntry> = Vec::with_capacity(alphas.len());
    for (i, &alpha) in alphas.iter().enumerate() {
        let e = entry(alpha);
        let last = i + 1 == alphas.len();
        let distinct = kept.last().is_none_or(|prev| {
            crate::simplex::kl_slices(prev.probs.probs(), e.probs.probs()) >= delta / 10.0
        });
        if distinct || last {
            kept.push(e);
        }
    }
    (Some(amax), kept)
}

impl ZmTable {
    fn from_parts(
        k: usize,
        delta: f64,
        grid: BetaGrid,
        alpha_max: Vec<Option<f64>>,
        entries: Vec<ZmEntry>,
    ) -> Self {
        let mut t = Self {
            format_version: ZM_TABLE_FORMAT_VERSION,
            k,
            delta,
            grid,
            alpha_max,
            entries,
            log_probs: Vec::new(),
        };
        t.rebuild_cache();
        t
    }

    fn rebuild_cache(&mut self) {
        self.log_probs = self
            .entries
            .iter()
            .map(|e| e.probs.probs().iter().map(|p| p.ln()).collect())
            .collect();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn cache_file_name(k: usize, delta: f64, grid: &BetaGrid) -> String {
        format!(
            "zm_table_k{k}_d{:016x}_g{:016x}.json",
            delta.to_bits(),
            grid.fingerprint()
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::Numerical(format!("serialising ZM table: {e}")))?;
        fs::write(path, json)
            .map_err(|e| Error::InvalidParameter(format!("writing {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidParameter(format!("reading {}: {e}", path.display())))?;
        let mut t: ZmTable = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidParameter(format!("parsing {}: {e}", path.display())))?;
        if t.format_version != ZM_TABLE_FORMAT_VERSION {
            return Err(Error::InvalidParameter(format!(
                "ZM table format {} is not supported",
                t.format_version
            )));
        }
        t.rebuild_cache();
        Ok(t)
    }

    /// Loads the table for `(k, delta, grid)` from `dir`, building and
    /// saving it on a miss.
    pub fn load_or_build(dir: &Path, k: usize, delta: f64, grid: &BetaGrid) -> Result<Self> {
        let path: PathBuf = dir.join(Self::cache_file_name(k, delta, grid));
        if path.exists() {
            if let Ok(t) = Self::load(&path) {
                if t.k == k && t.delta == delta && &t.grid == grid {
                    return Ok(t);
                }
            }
        }
        let t = build_zm_table(k, delta, grid)?;
        fs::create_dir_all(dir)
            .map_err(|e| Error::InvalidParameter(format!("creating {}: {e}", dir.display())))?;
        t.save(&path)?;
        Ok(t)
    }
}

/// `KL(θ || ZM(α, β))` given `sum θ ln θ`.
fn kl_to_params(theta: &[f64], neg_entropy: f64, params: ZmParams) -> f64 {
    if !(params.alpha > -1.0) || params.beta < 0.0 {
        return f64::INFINITY;
    }
    let k = theta.len() - 1;
    let logs = zm_log_probs(params, k);
    let cross: f64 = theta.iter().zip(&logs).map(|(&t, &l)| xlogy_ln(t, l)).sum();
    (neg_entropy - cross).max(0.0)
}

#[inline]
fn xlogy_ln(t: f64, log_p: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t * log_p
    }
}

/// Table minimum of `KL(θ || entry)`, before refinement.
pub fn kl_to_zm_table(theta: &SimplexPoint, table: &ZmTable) -> Result<(f64, ZmParams)> {
    check_dims(table.k + 1, theta.dim())?;
    let neg_entropy: f64 = theta.probs().iter().map(|&t| xlogy(t, t)).sum();
    Ok(table_scan(theta.probs(), neg_entropy, table))
}

fn table_scan(theta: &[f64], neg_entropy: f64, table: &ZmTable) -> (f64, ZmParams) {
    let mut best = (f64::INFINITY, ZmParams { alpha: 0.0, beta: 0.0 });
    for (entry, logs) in table.entries.iter().zip(&table.log_probs) {
        let cross: f64 = theta.iter().zip(logs).map(|(&t, &l)| xlogy_ln(t, l)).sum();
        let kl = neg_entropy - cross;
        if kl < best.0 {
            best = (kl, entry.params);
        }
    }
    (best.0.max(0.0), best.1)
}

/// Iterations of the coordinate-wise pattern search in `kl_to_zm`.
pub const PATTERN_SEARCH_ITERATIONS: usize = 50;

/// `d(θ) = inf KL(θ || ZM_k(α, β))`: table scan followed by a coordinate-wise
/// pattern search from the best entry (initial steps 0.5 in α and 0.1 in β,
/// halved on failure). Never exceeds the table minimum.
pub fn kl_to_zm(theta: &SimplexPoint, table: &ZmTable) -> Result<(f64, ZmParams)> {
    check_dims(table.k + 1, theta.dim())?;
    Ok(kl_to_zm_slice(theta.probs(), table))
}

fn kl_to_zm_slice(theta: &[f64], table: &ZmTable) -> (f64, ZmParams) {
    let neg_entropy: f64 = theta.iter().map(|&t| xlogy(t, t)).sum();
    let (mut best, mut params) = table_scan(theta, neg_entropy, table);
    let mut steps = [0.5, 0.1];
    for _ in 0..PATTERN_SEARCH_ITERATIONS {
        if best == 0.0 || (steps[0] < 1e-10 && steps[1] < 1e-10) {
            break;
        }
        for (axis, step) in steps.iter_mut().enumerate() {
            let mut improved = false;
            for sign in [1.0, -1.0] {
                let mut cand = params;
                if axis == 0 {
                    cand.alpha += sign * *step;
                    if cand.alpha <= -1.0 {
                        cand.alpha = -1.0 + 0.5 * (params.alpha + 1.0);
                    }
                } else {
                    cand.beta = (cand.beta + sign * *step).max(0.0);
                }
                let v = kl_to_params(theta, neg_entropy, cand);
                if v < best {
                    best = v;
                    params = cand;
                    improved = true;
                    break;
                }
            }
            if !improved {
                *step *= 0.5;
            }
        }
    }
    (best, params)
}

/// Prior and posterior distributions of `d(θ)` binned at width δ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceCheckReport {
    /// `RB([0, δ) | t)`; `None` when the prior mass of the first bin was
    /// estimated as 0.
    pub rb_zero: Option<f64>,
    pub rb_undefined: bool,
    /// When no prior draw fell in the first bin: the posterior mass of the
    /// bin divided by the one-sided upper confidence bound (level
    /// [`RB_BOUND_LEVEL`]) on its prior mass.
    pub rb_lower_bound: Option<f64>,
    pub strength: f64,
    /// Bin masses (sum to 1) of the prior distances.
    pub prior_hist: Vec<f64>,
    /// Bin masses (sum to 1) of the posterior distances.
    pub post_hist: Vec<f64>,
    pub delta: f64,
    pub n_draws: u64,
    pub prior_first_bin_count: u64,
    pub post_first_bin_count: u64,
    pub seed: u64,
    pub stream_id: u64,
}

/// Confidence level of [`DistanceCheckReport::rb_lower_bound`].
pub const RB_BOUND_LEVEL: f64 = 0.95;

impl DistanceCheckReport {
    /// `RB([0, δ)) > 1`, or its lower bound exceeds 1 when the prior bin is
    /// empty.
    pub fn evidence_in_favor(&self) -> bool {
        match (self.rb_zero, self.rb_lower_bound) {
            (Some(r), _) => r > 1.0,
            (None, Some(b)) => b > 1.0,
            _ => false,
        }
    }

    /// CSV with columns `bin_left,prior_density,post_density`.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_left,prior_density,post_density\n");
        for (i, (p, q)) in self.prior_hist.iter().zip(&self.post_hist).enumerate() {
            out.push_str(&format!(
                "{},{},{}\n",
                i as f64 * self.delta,
                p / self.delta,
                q / self.delta
            ));
        }
        out
    }
}

/// Distances `d(θ)` for `n` draws from `params`.
pub fn sample_distances(
    params: &DirichletParams,
    table: &ZmTable,
    n: usize,
    rng: &RngStream,
) -> Vec<f64> {
    let sampler = DirichletSampler::new(params);
    let dim = params.dim();
    par_batches(rng, n, 1024, |range, r| {
        let mut buf = vec![0.0; dim];
        range
            .map(|_| {
                sampler.sample_into(r, &mut buf);
                kl_to_zm_slice(&buf, table).0
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

fn histogram(values: &[f64], delta: f64, bins: usize) -> (Vec<f64>, u64) {
    let mut counts = vec![0u64; bins];
    for &v in values {
        let b = ((v / delta).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = values.len() as f64;
    (counts.iter().map(|&c| c as f64 / n).collect(), counts[0])
}

/// Relative belief check of the ZM family via the distance `d(θ)`.
pub fn rb_distance_check(
    t: &CountVector,
    delta: f64,
    table: &ZmTable,
    n_draws: u64,
    rng: &RngStream,
) -> Result<DistanceCheckReport> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must be positive, got {delta}"
        )));
    }
    if n_draws == 0 {
        return Err(Error::InvalidParameter("n_draws must be at least 1".into()));
    }
    check_dims(table.k + 1, t.dim())?;
    let dim = t.dim();
    let n = n_draws as usize;
    let prior_d = sample_distances(&DirichletParams::uniform(dim), table, n, &rng.substream(1));
    let posterior = DirichletParams::uniform(dim).posterior(t)?;
    let post_d = sample_distances(&posterior, table, n, &rng.substream(0));

    let max_d = prior_d
        .iter()
        .chain(&post_d)
        .cloned()
        .fold(0.0f64, f64::max);
    let bins = (max_d / delta).floor() as usize + 1;
    let (prior_hist, prior_first) = histogram(&prior_d, delta, bins);
    let (post_hist, post_first) = histogram(&post_d, delta, bins);

    let rb_zero = (prior_hist[0] > 0.0).then(|| post_hist[0] / prior_hist[0]);
    let strength = match rb_zero {
        Some(r0) => prior_hist
            .iter()
            .zip(&post_hist)
            .filter(|(p, _)| **p > 0.0)
            .filter(|(p, q)| **q / **p <= r0)
            .map(|(_, q)| q)
            .sum(),
        // an empty prior bin under a nonempty posterior bin is an infinite
        // ratio, which no other bin exceeds
        None if post_hist[0] > 0.0 => 1.0,
        None => 0.0,
    };
    let rb_lower_bound = rb_zero
        .is_none()
        .then(|| post_hist[0] / (1.0 - (1.0 - RB_BOUND_LEVEL).powf(1.0 / n as f64)));
    Ok(DistanceCheckReport {
        rb_zero,
        rb_undefined: rb_zero.is_none(),
        rb_lower_bound,
        strength,
        prior_hist,
        post_hist,
        delta,
        n_draws,
        prior_first_bin_count: prior_first,
        post_first_bin_count: post_first,
        seed: rng.seed(),
        stream_id: rng.stream_id(),
    })
}
