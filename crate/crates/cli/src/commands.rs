use std::fs;

use cmcheck::consistency::convergence_experiment;
use cmcheck::elicitation::{elicit, ElicitationInput};
use cmcheck::model_check::{rb_distance_check, rb_grouped_order_check, rb_region_check, BetaGrid, ZmTable};
use cmcheck::posterior::{run_chains, summarize, CoordinateSummary};
use cmcheck::prior_check::{
    conflict_pvalue, ConflictOptions, OrderedCenter, PriorKind, Refinement, TauRule,
};
use cmcheck::{ConstraintRegion, CountVector, DirichletParams, RngStream, SimplexPoint};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{
    Center, CheckModelArgs, CheckPriorArgs, Common, ConsistencyArgs, ElicitArgs, PosteriorArgs,
};
use crate::error::{CliError, Context, EXIT_AGAINST, EXIT_NUMERIC, EXIT_OK};
use crate::input::{parse_group, parse_list, parse_region, read_counts, read_prior};
use crate::report::{display, Envelope, OutDir};

pub const MODEL_REPORT: &str = "model_check.json";

fn positive(value: usize, what: &str) -> Result<(), CliError> {
    if value == 0 {
        Err(CliError::Usage(format!("{what} must be at least 1")))
    } else {
        Ok(())
    }
}

pub fn check_model(common: &Common, args: &CheckModelArgs) -> Result<i32, CliError> {
    let t = read_counts(&args.counts)?;
    positive(args.ndraws as usize, "--ndraws")?;
    let out = OutDir::new(common.out.clone());
    let rng = RngStream::new(common.seed, 0);

    if let Some(delta) = args.zm_delta {
        let grid = BetaGrid::default();
        let config = json!({
            "counts": t.counts(),
            "zm_delta": delta,
            "n_draws": args.ndraws,
            "beta_grid": format!("{:016x}", grid.fingerprint()),
        });
        let cache = args
            .cache_dir
            .clone()
            .unwrap_or_else(|| common.out.join("zm-cache"));
        let table = ZmTable::load_or_build(&cache, t.dim() - 1, delta, &grid)
            .context("Zipf-Mandelbrot table")?;
        let report = rb_distance_check(&t, delta, &table, args.ndraws, &rng).context("distance check")?;
        let (verdict, code) = match (report.rb_zero, report.rb_lower_bound) {
            (Some(rb), _) if rb > 1.0 => ("favor", EXIT_OK),
            (Some(rb), _) if rb < 1.0 => ("against", EXIT_AGAINST),
            (Some(_), _) => ("neutral", EXIT_OK),
            (None, Some(b)) if b > 1.0 => ("favor", EXIT_OK),
            (None, _) => ("undefined", EXIT_NUMERIC),
        };
        let path = out.write_json(MODEL_REPORT, &Envelope::new("check-model", common.seed, &config, verdict, &report))?;
        out.write_text("model_check_distance.csv", &report.histogram_csv())?;
        match (report.rb_zero, report.rb_lower_bound) {
            (Some(rb), _) => println!(
                "RB([0, {delta})) = {rb:.6} with strength {:.6}: evidence {}; report in {}",
                report.strength,
                if rb > 1.0 { "in favor" } else { "against" },
                display(&path)
            ),
            (None, bound) => {
                eprintln!(
                    "warning: no prior draw fell within distance {delta}, so RB([0, {delta})) is not estimable; \
                     increase --ndraws for an estimate"
                );
                if let Some(b) = bound.filter(|b| *b > 1.0) {
                    println!(
                        "RB([0, {delta})) >= {b:.1} (95% bound) with strength {:.6}: evidence in favor; report in {}",
                        report.strength,
                        display(&path)
                    );
                }
            }
        }
        return Ok(code);
    }

    let region_flag = args.region.as_deref().expect("clap requires --region without --zm-delta");
    let region = parse_region(region_flag)?;
    let group = match &args.group {
        Some(g) if matches!(region, ConstraintRegion::OrderedCone) => Some(parse_group(g, t.dim())?),
        Some(_) => return Err(CliError::Usage("--group applies only to --region ordered".into())),
        None => None,
    };
    let config = json!({
        "counts": t.counts(),
        "region": region_flag,
        "group": args.group,
        "n_draws": args.ndraws,
    });
    let report = match &group {
        Some(spec) => rb_grouped_order_check(&t, spec, args.ndraws, &rng),
        None => rb_region_check(&t, &region, args.ndraws, &rng),
    }
    .context("model check")?;
    let (verdict, code) = if report.rb > 1.0 {
        ("favor", EXIT_OK)
    } else if report.rb < 1.0 {
        ("against", EXIT_AGAINST)
    } else {
        ("neutral", EXIT_OK)
    };
    let path = out.write_json(MODEL_REPORT, &Envelope::new("check-model", common.seed, &config, verdict, &report))?;
    println!(
        "RB = {:.6} with strength {:.6}: evidence {}; report in {}",
        report.rb,
        report.strength,
        match verdict {
            "favor" => "in favor",
            "against" => "against",
            _ => "neither for nor against",
        },
        display(&path)
    );
    Ok(code)
}

/// Confirms that the output directory holds a passing model check for the
/// same counts.
fn model_gate(out: &OutDir, t: &CountVector) -> Result<(), CliError> {
    let path = out.path(MODEL_REPORT);
    let text = fs::read_to_string(&path)
        .map_err(|_| CliError::ModelNotChecked(format!("{} not found", display(&path))))?;
    let report: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::ModelNotChecked(format!("{} is unreadable ({e})", display(&path))))?;
    if report["config"]["counts"] != json!(t.counts()) {
        return Err(CliError::ModelNotChecked(format!(
            "{} was computed for different counts",
            display(&path)
        )));
    }
    match report["verdict"].as_str() {
        Some("favor") => Ok(()),
        other => Err(CliError::ModelNotChecked(format!(
            "{} has verdict {}",
            display(&path),
            other.unwrap_or("missing")
        ))),
    }
}

pub fn check_prior(common: &Common, args: &CheckPriorArgs) -> Result<i32, CliError> {
    let t = read_counts(&args.counts)?;
    let prior = read_prior(&args.prior)?;
    positive(args.npred, "--npred")?;
    positive(args.nis, "--nis")?;
    if !(args.threshold > 0.0 && args.threshold < 1.0) {
        return Err(CliError::Usage("--threshold must lie in (0, 1)".into()));
    }
    let out = OutDir::new(common.out.clone());
    let gate = match model_gate(&out, &t) {
        Ok(()) => "passed",
        Err(e) if args.force => {
            eprintln!("warning: {e}");
            "forced"
        }
        Err(e) => return Err(e),
    };

    let tau = match (args.tau, args.tau_fraction, &args.tau_grid) {
        (Some(v), _, _) => TauRule::Fixed(v),
        (_, Some(f), _) => TauRule::SampleSizeFraction(f),
        (_, _, Some(g)) => TauRule::Tuned(parse_list(g, "--tau-grid")?),
        _ => TauRule::default(),
    };
    let options = ConflictOptions {
        n_pred: args.npred,
        n_is: args.nis,
        tau,
        center: match args.center {
            Center::Boundary => OrderedCenter::BoundaryMixture,
            Center::Isotonic => OrderedCenter::Isotonic,
        },
        refinement: if args.refine_rounds == 0 {
            Refinement::None
        } else {
            Refinement::MomentMatched {
                rounds: args.refine_rounds,
                pilot: args.refine_pilot,
            }
        },
    };
    let config = json!({
        "counts": t.counts(),
        "prior": prior,
        "options": options,
        "threshold": args.threshold,
    });
    let report = conflict_pvalue(&t, &prior, &options, &RngStream::new(common.seed, 0))
        .context("prior check")?;
    let conflict = report.pvalue < args.threshold;
    let verdict = if conflict { "conflict" } else { "no_conflict" };
    let mut envelope = Envelope::new("check-prior", common.seed, &config, verdict, &report);
    envelope.model_check = Some(gate);
    let path = out.write_json("prior_check.json", &envelope)?;
    out.write_text("prior_check_points.csv", &report.points_csv())?;
    if report.unreliable {
        eprintln!(
            "warning: {} of {} predictive estimates failed",
            report.n_failed, report.n_predictive
        );
    }
    println!(
        "p-value = {:.4}: {}; report in {}",
        report.pvalue,
        if conflict { "prior-data conflict" } else { "no prior-data conflict" },
        display(&path)
    );
    Ok(if conflict { EXIT_AGAINST } else { EXIT_OK })
}

#[derive(Serialize)]
struct ElicitationReport<'a> {
    prior: &'a cmcheck::elicitation::ElicitedPrior,
    search: &'a cmcheck::elicitation::TauSearch,
}

pub fn elicit_prior(common: &Common, args: &ElicitArgs) -> Result<i32, CliError> {
    positive(args.ndraws, "--ndraws")?;
    let input = ElicitationInput {
        k: args.k,
        delta: args.delta,
        l: args.lower,
        u: args.upper,
        gamma: args.gamma,
    };
    let config = json!({ "input": input, "n_draws": args.ndraws });
    let (prior, search) = elicit(&input, args.ndraws, &RngStream::new(common.seed, 0)).context("elicitation")?;
    let out = OutDir::new(common.out.clone());
    let prior_path = out.write_json("prior.json", &prior)?;
    let report = ElicitationReport {
        prior: &prior,
        search: &search,
    };
    out.write_json("elicitation.json", &Envelope::new("elicit", common.seed, &config, "ok", &report))?;
    println!(
        "tau = {:.4} (achieved probability {:.4} +/- {:.4}); prior in {}",
        search.tau,
        search.prob,
        search.se,
        display(&prior_path)
    );
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct PosteriorReport {
    chains: usize,
    n_sweeps: usize,
    burn_in: usize,
    retained: usize,
    per_chain: Vec<Vec<CoordinateSummary>>,
    pooled: Vec<CoordinateSummary>,
}

pub fn posterior(common: &Common, args: &PosteriorArgs) -> Result<i32, CliError> {
    positive(args.sweeps, "--sweeps")?;
    positive(args.chains, "--chains")?;
    if args.burn_in >= args.sweeps {
        return Err(CliError::Usage("--burn-in must be smaller than --sweeps".into()));
    }
    let prior = read_prior(&args.prior)?;
    let PriorKind::OrderedDirichlet { omega_alphas } = &prior.kind else {
        return Err(CliError::Usage(format!(
            "{} is not an ordered Dirichlet prior",
            display(&args.prior)
        )));
    };
    let t = args.counts.as_deref().map(read_counts).transpose()?;
    let config = json!({
        "counts": t.as_ref().map(|c| c.counts().to_vec()),
        "prior": prior,
        "sweeps": args.sweeps,
        "burn_in": args.burn_in,
        "chains": args.chains,
    });
    let outputs = run_chains(
        t.as_ref(),
        omega_alphas,
        args.sweeps,
        args.burn_in,
        args.chains,
        &RngStream::new(common.seed, 0),
    )
    .context("Gibbs sampler")?;
    let pooled: Vec<Vec<f64>> = outputs.iter().flat_map(|o| o.samples.iter().cloned()).collect();
    let report = PosteriorReport {
        chains: args.chains,
        n_sweeps: args.sweeps,
        burn_in: args.burn_in,
        retained: pooled.len(),
        per_chain: outputs.iter().map(|o| o.summary.clone()).collect(),
        pooled: summarize(&pooled),
    };
    let out = OutDir::new(common.out.clone());
    let dim = omega_alphas.dim();
    let mut csv = String::from("chain,sweep");
    for i in 1..=dim {
        csv.push_str(&format!(",theta_{i}"));
    }
    csv.push('\n');
    for (c, o) in outputs.iter().enumerate() {
        for (s, theta) in o.samples.iter().enumerate() {
            csv.push_str(&format!("{c},{}", s + o.burn_in + 1));
            for x in theta {
                csv.push_str(&format!(",{x}"));
            }
            csv.push('\n');
        }
    }
    let path = out.write_text("posterior_samples.csv", &csv)?;
    out.write_json("posterior_summary.json", &Envelope::new("posterior", common.seed, &config, "ok", &report))?;
    let means: Vec<String> = report.pooled.iter().map(|s| format!("{:.4}", s.mean)).collect();
    println!("posterior means [{}]; samples in {}", means.join(", "), display(&path));
    Ok(EXIT_OK)
}

pub fn consistency(common: &Common, args: &ConsistencyArgs) -> Result<i32, CliError> {
    positive(args.replications, "--replications")?;
    let alphas = DirichletParams::new(parse_list(&args.alphas, "--alphas")?).context("prior")?;
    let theta = SimplexPoint::new(parse_list(&args.theta, "--theta")?).context("--theta")?;
    let schedule: Vec<u64> = parse_list(&args.schedule, "--schedule")?;
    let config = json!({
        "alphas": alphas,
        "theta": theta.probs(),
        "schedule": schedule,
        "replications": args.replications,
    });
    let table = convergence_experiment(
        &alphas,
        &theta,
        &schedule,
        args.replications,
        &RngStream::new(common.seed, 0),
    )
    .context("consistency experiment")?;
    let out = OutDir::new(common.out.clone());
    out.write_json("consistency.json", &Envelope::new("consistency", common.seed, &config, "ok", &table))?;
    let path = out.write_text("convergence.csv", &table.csv())?;
    let mut curve = String::from("n,median_pvalue,median_abs_error,limit_at_most,limit_below,sandwich_holds\n");
    for s in &table.summary {
        curve.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.n, s.median_pvalue, s.median_abs_error, table.limit.at_most, table.limit.below, s.sandwich_holds
        ));
    }
    out.write_text("convergence_summary.csv", &curve)?;
    if let Some(last) = table.summary.last() {
        println!(
            "limit {:.4}; at n = {} median p-value {:.4}, median error {:.4}; rows in {}",
            table.limit.at_most,
            last.n,
            last.median_pvalue,
            last.median_abs_error,
            display(&path)
        );
    }
    Ok(EXIT_OK)
}
