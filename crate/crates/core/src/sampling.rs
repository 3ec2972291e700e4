//! Seeded random generation: Dirichlet, multinomial, the trine prior and the
//! ordered prior induced by Dirichlet weights.
//!
//! Every sampler draws from an explicit [`RngStream`]. Parallel loops split
//! work into fixed-size batches and give batch `b` the substream `b`, so
//! results do not depend on the number of worker threads.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::Range;

use crate::region::TrineGeometry;
use crate::simplex::{ordered_from_weights_slice, CountVector, DirichletParams, SimplexPoint};
use crate::{Error, Result};

/// Batch size used by [`par_batches`] callers unless they choose otherwise.
pub const DEFAULT_BATCH: usize = 4096;

/// A reproducible random stream identified by `(seed, stream_id)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream `index`, a pure function of `(seed, stream_id, index)`.
    pub fn substream(&self, index: u64) -> RngStream {
        let child_seed = splitmix64(self.seed ^ splitmix64(self.stream_id.wrapping_add(1)));
        RngStream::new(child_seed, index)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Runs `f` over `0..total` in batches of `batch`, batch `b` drawing from
/// `base.substream(b)`. Results come back in batch order.
pub fn par_batches<T, F>(base: &RngStream, total: usize, batch: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>, &mut RngStream) -> T + Sync,
{
    let batch = batch.max(1);
    let n_batches = total.div_ceil(batch);
    (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = base.substream(b as u64);
            let start = b * batch;
            f(start..(start + batch).min(total), &mut rng)
        })
        .collect()
}

/// Runs `f(i, stream_i)` for every item with its own substream.
pub fn par_items<T, F>(base: &RngStream, total: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut RngStream) -> T + Sync,
{
    (0..total)
        .into_par_iter()
        .map(|i| {
            let mut rng = base.substream(i as u64);
            f(i, &mut rng)
        })
        .collect()
}

/// Dirichlet sampler with cached gamma generators (gamma-ratio method).
#[derive(Debug, Clone)]
pub struct DirichletSampler {
    gammas: Vec<Gamma<f64>>,
}

impl DirichletSampler {
    pub fn new(params: &DirichletParams) -> Self {
        let gammas = params
            .alphas()
            .iter()
            .map(|&a| Gamma::new(a, 1.0).expect("validated positive shape"))
            .collect();
        Self { gammas }
    }

    pub fn dim(&self) -> usize {
        self.gammas.len()
    }

    /// Fills `out` with a draw; `out.len()` must equal the dimension.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.gammas.len());
        let mut sum = 0.0;
        for (o, g) in out.iter_mut().zip(&self.gammas) {
            *o = g.sample(rng);
            sum += *o;
        }
        if sum > 0.0 {
            out.iter_mut().for_each(|o| *o /= sum);
        } else {
            // every gamma underflowed; only possible for tiny shapes
            let i = rng.random_range(0..out.len());
            out.iter_mut().for_each(|o| *o = 0.0);
            out[i] = 1.0;
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SimplexPoint {
        let mut out = vec![0.0; self.dim()];
        self.sample_into(rng, &mut out);
        SimplexPoint::from_raw(out)
    }
}

pub fn sample_dirichlet(params: &DirichletParams, rng: &mut RngStream) -> SimplexPoint {
    DirichletSampler::new(params).sample(rng)
}

/// Multinomial counts by sequential conditional binomials.
pub fn sample_multinomial_counts<R: Rng + ?Sized>(n: u64, theta: &[f64], rng: &mut R) -> Vec<u64> {
    let mut counts = vec![0u64; theta.len()];
    let mut remaining_n = n;
    let mut remaining_p = 1.0;
    for (i, &p) in theta.iter().enumerate() {
        if remaining_n == 0 {
            break;
        }
        if i + 1 == theta.len() {
            counts[i] = remaining_n;
            break;
        }
        let q = if remaining_p > 0.0 {
            (p / remaining_p).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let c = if q >= 1.0 {
            remaining_n
        } else if q <= 0.0 {
            0
        } else {
            Binomial::new(remaining_n, q)
                .expect("probability in (0, 1)")
                .sample(rng)
        };
        counts[i] = c;
        remaining_n -= c;
        remaining_p -= p;
    }
    counts
}

pub fn sample_multinomial(n: u64, theta: &SimplexPoint, rng: &mut RngStream) -> Result<CountVector> {
    if n == 0 {
        return Err(Error::InvalidParameter("multinomial needs n >= 1".into()));
    }
    CountVector::new(sample_multinomial_counts(n, theta.probs(), rng))
}

/// A Dirichlet given by its mode `xi` and concentration `tau`,
/// `alpha_i = 1 + tau xi_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeConcentration {
    pub mode: SimplexPoint,
    pub tau: f64,
}

impl ModeConcentration {
    pub fn new(mode: SimplexPoint, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "concentration must be positive, got {tau}"
            )));
        }
        Ok(Self { mode, tau })
    }

    pub fn to_dirichlet(&self) -> DirichletParams {
        DirichletParams::new(self.mode.probs().iter().map(|x| 1.0 + self.tau * x).collect())
            .expect("alphas >= 1")
    }

    /// Mean of coordinate `i`: `(1 + tau xi_i) / (tau + k + 1)`.
    pub fn mean(&self, i: usize) -> f64 {
        (1.0 + self.tau * self.mode.probs()[i]) / (self.tau + self.mode.dim() as f64)
    }
}

/// Law of the radial coordinate `r = Q(theta)` used by [`sample_trine_prior`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrineRadialLaw {
    /// `r ~ beta(3/2, 3/2)` with a uniform angle. Only approximates the
    /// `(1 - Q)^(1/2)` density; kept as the default for trine conflict checks.
    #[default]
    Beta32,
    /// `r ~ beta(1, 3/2)` with a uniform angle: the exact law of `Q` under the
    /// density `(1 - Q)^(1/2)`, since the map `(r, angle) -> theta` has
    /// constant Jacobian.
    SqrtOneMinusQ,
}

impl TrineRadialLaw {
    fn shape(self) -> (f64, f64) {
        match self {
            TrineRadialLaw::Beta32 => (1.5, 1.5),
            TrineRadialLaw::SqrtOneMinusQ => (1.0, 1.5),
        }
    }
}

/// Sampler for the trine prior, `theta = c + C^(-1/2) sqrt(r) (cos w, sin w)`
/// with `w ~ U(0, 2π)`; `theta_3 = 1 - theta_1 - theta_2`.
#[derive(Debug, Clone)]
pub struct TrineSampler {
    geometry: TrineGeometry,
    radial: DirichletSampler,
}

impl TrineSampler {
    pub fn new(a: f64, law: TrineRadialLaw) -> Result<Self> {
        let (p, q) = law.shape();
        Ok(Self {
            geometry: TrineGeometry::new(a)?,
            radial: DirichletSampler::new(&DirichletParams::new(vec![p, q])?),
        })
    }

    pub fn geometry(&self) -> &TrineGeometry {
        &self.geometry
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SimplexPoint {
        let mut rb = [0.0; 2];
        self.radial.sample_into(rng, &mut rb);
        let angle = rng.random::<f64>() * 2.0 * PI;
        self.geometry.point_at(rb[0], angle)
    }
}

pub fn sample_trine_prior(a: f64, rng: &mut RngStream) -> Result<SimplexPoint> {
    Ok(TrineSampler::new(a, TrineRadialLaw::default())?.sample(rng))
}

/// Draws `omega ~ Dirichlet(omega_params)` and returns the ordered point it
/// induces.
pub fn sample_ordered_prior(omega_params: &DirichletParams, rng: &mut RngStream) -> SimplexPoint {
    let omega = DirichletSampler::new(omega_params).sample(rng);
    SimplexPoint::from_raw(ordered_from_weights_slice(omega.probs()))
}
