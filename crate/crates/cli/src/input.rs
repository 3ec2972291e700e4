//! Parsing of counts files, prior files and region/grouping flags.

use std::fs;
use std::path::Path;

use cmcheck::prior_check::PriorSpec;
use cmcheck::elicitation::ElicitedPrior;
use cmcheck::{ConstraintRegion, CountVector, DirichletParams, GroupSpec};
use serde::Deserialize;

use crate::error::{CliError, Context};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CountsFile {
    counts: Vec<u64>,
}

/// Reads counts from JSON `{"counts": [...]}` or a single-column CSV with an
/// optional header line. Category order is the order in the file.
pub fn read_counts(path: &Path) -> Result<CountVector, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let counts = parse_counts(path, &text)?;
    CountVector::new(counts).map_err(|e| CliError::BadFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn parse_counts(path: &Path, text: &str) -> Result<Vec<u64>, CliError> {
    if text.trim_start().starts_with('{') {
        return serde_json::from_str::<CountsFile>(text)
            .map(|f| f.counts)
            .map_err(|e| CliError::Parse {
                path: path.to_path_buf(),
                line: e.line(),
                message: e.to_string(),
            });
    }
    let mut counts = Vec::new();
    let mut first = true;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let header_allowed = std::mem::replace(&mut first, false);
        let field = line.trim_end_matches(',').trim();
        if field.contains(',') {
            return Err(CliError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected a single column, found {line:?}"),
            });
        }
        match field.parse::<u64>() {
            Ok(c) => counts.push(c),
            Err(_) if header_allowed && field.starts_with(|c: char| c.is_ascii_alphabetic()) => {}
            Err(_) => {
                return Err(CliError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("expected a non-negative integer count, found {field:?}"),
                })
            }
        }
    }
    if counts.is_empty() {
        return Err(CliError::BadFile {
            path: path.to_path_buf(),
            message: "no counts found".into(),
        });
    }
    Ok(counts)
}

/// Reads a prior file: either a tagged prior specification or the output
/// of `elicit`.
pub fn read_prior(path: &Path) -> Result<PriorSpec, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let parse_err = |e: serde_json::Error| CliError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(parse_err)?;
    let bad = |message: String| CliError::BadFile {
        path: path.to_path_buf(),
        message,
    };
    if value.get("kind").is_some() {
        serde_json::from_value(value).map_err(|e| bad(e.to_string()))
    } else if value.get("omega_alphas").is_some() {
        let e: ElicitedPrior = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
        let alphas = DirichletParams::new(e.omega_alphas).map_err(|e| bad(e.to_string()))?;
        Ok(PriorSpec::ordered(alphas))
    } else {
        Err(bad(
            "expected a prior with a \"kind\" field or an elicited prior with \"omega_alphas\"".into(),
        ))
    }
}

/// `trine:A`, `ordered`, `tetrahedron`, `crosshairs` or `pauli`.
pub fn parse_region(s: &str) -> Result<ConstraintRegion, CliError> {
    let usage = || CliError::Usage(format!(
        "unknown region {s:?}; expected trine:A, ordered, tetrahedron, crosshairs or pauli"
    ));
    match s {
        "ordered" => Ok(ConstraintRegion::OrderedCone),
        "tetrahedron" => Ok(ConstraintRegion::tetrahedron()),
        "crosshairs" => Ok(ConstraintRegion::crosshairs()),
        "pauli" => Ok(ConstraintRegion::pauli()),
        _ => {
            let a = s.strip_prefix("trine:").ok_or_else(usage)?;
            let a: f64 = a
                .parse()
                .map_err(|_| CliError::Usage(format!("trine parameter {a:?} is not a number")))?;
            ConstraintRegion::trine(a).context("trine region")
        }
    }
}

/// `pairs`, `triples`, `m=K` (K consecutive groups) or `stride=K`.
pub fn parse_group(s: &str, dim: usize) -> Result<GroupSpec, CliError> {
    let number = |v: &str| {
        v.parse::<usize>()
            .map_err(|_| CliError::Usage(format!("grouping size {v:?} is not a positive integer")))
    };
    let spec = match s {
        "pairs" => GroupSpec::blocks_of(2, dim),
        "triples" => GroupSpec::blocks_of(3, dim),
        _ => {
            if let Some(v) = s.strip_prefix("m=") {
                GroupSpec::consecutive_groups(number(v)?, dim)
            } else if let Some(v) = s.strip_prefix("stride=") {
                let spec = GroupSpec::Strided(number(v)?);
                spec.validate(dim).map(|_| spec)
            } else {
                return Err(CliError::Usage(format!(
                    "unknown grouping {s:?}; expected pairs, triples, m=K or stride=K"
                )));
            }
        }
    };
    spec.context("grouping")
}

/// Comma-separated list of numbers.
pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{what}: {v:?} is not a valid number")))
        })
        .collect()
}
