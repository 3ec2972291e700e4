//! Bayesian checking of constrained multinomial models.
//!
//! The crate is organised around the two checks a constrained multinomial
//! analysis needs, performed in order:
//!
//! 1. **Model checking** ([`model_check`]): under a uniform prior on the full
//!    simplex, compare the prior and posterior belief in the constraint set
//!    via the relative belief ratio. Measure-zero hypotheses (the
//!    Zipf-Mandelbrot family) are checked through the distribution of a
//!    Kullback-Leibler distance to the family.
//! 2. **Prior checking** ([`prior_check`]): locate the observed counts in
//!    their prior predictive distribution, estimated by importance sampling.
//!
//! Supporting modules provide the exact primitives ([`simplex`], [`zm`],
//! [`region`], [`grouping`]), seeded samplers ([`sampling`]), prior
//! elicitation for ordered probabilities ([`elicitation`]), a Gibbs sampler
//! for the ordered posterior ([`posterior`]) and exact, enumeration based
//! checks of the large-sample behaviour of the prior check ([`consistency`]).

pub mod consistency;
pub mod elicitation;
mod error;
pub mod grouping;
pub mod model_check;
pub mod posterior;
pub mod prior_check;
pub mod region;
pub mod sampling;
pub mod simplex;
pub mod special;
pub mod zm;

pub use error::{Error, Result};
pub use grouping::GroupSpec;
pub use region::ConstraintRegion;
pub use sampling::{ModeConcentration, RngStream};
pub use simplex::{CountVector, DirichletParams, SimplexPoint};
pub use zm::ZmParams;

/// Library version embedded in every emitted report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
