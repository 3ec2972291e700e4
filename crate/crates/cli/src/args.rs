use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Bayesian model and prior checks for multinomial data with constrained
/// cell probabilities.
///
/// Every flag can also be set through an environment variable named
/// `CMCHECK_<FLAG>`, e.g. `CMCHECK_SEED=7`.
///
/// Counts files hold either JSON `{"counts": [...]}` or one count per line
/// (an optional header line is skipped). The order of the counts is the
/// order of the categories, which matters for ordered models.
#[derive(Debug, Parser)]
#[command(name = "cmcheck", version)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Random seed; reports are identical for identical flags and seed.
    #[arg(long, global = true, env = "CMCHECK_SEED", default_value_t = 42)]
    pub seed: u64,
    /// Number of worker threads (default: all cores).
    #[arg(long, global = true, env = "CMCHECK_WORKERS")]
    pub workers: Option<usize>,
    /// Directory for reports and plot data.
    #[arg(long, global = true, env = "CMCHECK_OUT", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the constrained model under a uniform prior (run this first).
    CheckModel(CheckModelArgs),
    /// Check the prior for conflict with the data.
    CheckPrior(CheckPriorArgs),
    /// Elicit an ordered Dirichlet prior from bounds on the probabilities.
    Elicit(ElicitArgs),
    /// Sample the posterior of ordered probabilities by Gibbs sampling.
    Posterior(PosteriorArgs),
    /// Exact conflict p-values along a sample-size schedule.
    Consistency(ConsistencyArgs),
}

#[derive(Debug, Args)]
pub struct CheckModelArgs {
    #[arg(long, env = "CMCHECK_COUNTS")]
    pub counts: PathBuf,
    /// Constraint region: trine:A, ordered, tetrahedron, crosshairs or pauli.
    #[arg(long, env = "CMCHECK_REGION", required_unless_present = "zm_delta")]
    pub region: Option<String>,
    /// Grouping for the ordered region: pairs, triples, m=K or stride=K.
    #[arg(long, env = "CMCHECK_GROUP", requires = "region")]
    pub group: Option<String>,
    /// Check the Zipf-Mandelbrot family with distance bins of this width.
    #[arg(long, env = "CMCHECK_ZM_DELTA", conflicts_with = "region")]
    pub zm_delta: Option<f64>,
    /// Monte Carlo draws for each of the prior and posterior.
    #[arg(long, env = "CMCHECK_NDRAWS", default_value_t = 1_000_000)]
    pub ndraws: u64,
    /// Cache for Zipf-Mandelbrot tables (default: OUT/zm-cache).
    #[arg(long, env = "CMCHECK_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Center {
    Boundary,
    Isotonic,
}

#[derive(Debug, Args)]
pub struct CheckPriorArgs {
    #[arg(long, env = "CMCHECK_COUNTS")]
    pub counts: PathBuf,
    /// Prior file (JSON), e.g. as written by `elicit`.
    #[arg(long, env = "CMCHECK_PRIOR")]
    pub prior: PathBuf,
    /// Prior predictive draws.
    #[arg(long, env = "CMCHECK_NPRED", default_value_t = 1000)]
    pub npred: usize,
    /// Importance sampling draws per marginal likelihood.
    #[arg(long, env = "CMCHECK_NIS", default_value_t = 10_000)]
    pub nis: usize,
    /// Fixed proposal concentration.
    #[arg(long, env = "CMCHECK_TAU", conflicts_with_all = ["tau_fraction", "tau_grid"])]
    pub tau: Option<f64>,
    /// Proposal concentration as a multiple of the sample size (default 1).
    #[arg(long, env = "CMCHECK_TAU_FRACTION", conflicts_with = "tau_grid")]
    pub tau_fraction: Option<f64>,
    /// Comma-separated concentrations; the one with the largest effective
    /// sample size is used.
    #[arg(long, env = "CMCHECK_TAU_GRID")]
    pub tau_grid: Option<String>,
    /// Proposal centre for ordered priors.
    #[arg(long, env = "CMCHECK_CENTER", value_enum, default_value_t = Center::Boundary)]
    pub center: Center,
    /// Moment-matching rounds applied to each proposal.
    #[arg(long, env = "CMCHECK_REFINE_ROUNDS", default_value_t = 0)]
    pub refine_rounds: usize,
    /// Pilot draws per moment-matching round.
    #[arg(long, env = "CMCHECK_REFINE_PILOT", default_value_t = 4000)]
    pub refine_pilot: usize,
    /// Report a conflict when the p-value is below this level.
    #[arg(long, env = "CMCHECK_THRESHOLD", default_value_t = 0.05)]
    pub threshold: f64,
    /// Run even without a passing model check in the output directory.
    #[arg(long, env = "CMCHECK_FORCE")]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ElicitArgs {
    /// Number of cells minus one.
    #[arg(long, env = "CMCHECK_K")]
    pub k: usize,
    /// Spacing of the equispaced prior mode.
    #[arg(long, env = "CMCHECK_DELTA", default_value_t = 0.0)]
    pub delta: f64,
    /// Lower bound for the smallest probability.
    #[arg(long, env = "CMCHECK_LOWER")]
    pub lower: f64,
    /// Upper bound for the largest probability.
    #[arg(long, env = "CMCHECK_UPPER")]
    pub upper: f64,
    /// Required prior probability of the bounds.
    #[arg(long, env = "CMCHECK_GAMMA", default_value_t = 0.99)]
    pub gamma: f64,
    /// Draws per probability evaluation.
    #[arg(long, env = "CMCHECK_NDRAWS", default_value_t = 100_000)]
    pub ndraws: usize,
}

#[derive(Debug, Args)]
pub struct PosteriorArgs {
    /// Counts; without them the chain samples the prior.
    #[arg(long, env = "CMCHECK_COUNTS")]
    pub counts: Option<PathBuf>,
    /// Ordered Dirichlet prior file.
    #[arg(long, env = "CMCHECK_PRIOR")]
    pub prior: PathBuf,
    #[arg(long, env = "CMCHECK_SWEEPS", default_value_t = 10_000)]
    pub sweeps: usize,
    #[arg(long, env = "CMCHECK_BURN_IN", default_value_t = 1000)]
    pub burn_in: usize,
    #[arg(long, env = "CMCHECK_CHAINS", default_value_t = 1)]
    pub chains: usize,
}

#[derive(Debug, Args)]
pub struct ConsistencyArgs {
    /// Dirichlet prior parameters, comma-separated.
    #[arg(long, env = "CMCHECK_ALPHAS")]
    pub alphas: String,
    /// True cell probabilities, comma-separated.
    #[arg(long, env = "CMCHECK_THETA")]
    pub theta: String,
    /// Sample sizes, comma-separated.
    #[arg(long, env = "CMCHECK_SCHEDULE", default_value = "10,20,40,80,160,320")]
    pub schedule: String,
    #[arg(long, env = "CMCHECK_REPLICATIONS", default_value_t = 200)]
    pub replications: usize,
}
