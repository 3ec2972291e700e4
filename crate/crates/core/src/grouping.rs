//! Order-preserving groupings of cells.
//!
//! Summing cells in groups reduces the dimension of an ordered-probability
//! problem. Two layouts keep `theta_1 >= ... >= theta_(k+1)` intact after
//! grouping: consecutive blocks of equal size (the last block may be
//! smaller), and stride-`m` interleaving where group `j` collects cells
//! `j, j+m, j+2m, ...`.

use serde::{Deserialize, Serialize};

use crate::simplex::{CountVector, SimplexPoint};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupSpec {
    ConsecutiveBlocks(Vec<usize>),
    Strided(usize),
}

impl GroupSpec {
    /// Every cell in its own group.
    pub fn identity(dim: usize) -> Self {
        GroupSpec::ConsecutiveBlocks(vec![1; dim])
    }

    /// Consecutive blocks of `size`, the final block taking the remainder.
    pub fn blocks_of(size: usize, dim: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidGrouping("block size must be positive".into()));
        }
        let mut sizes = vec![size; dim / size];
        if dim % size != 0 {
            sizes.push(dim % size);
        }
        let spec = GroupSpec::ConsecutiveBlocks(sizes);
        spec.validate(dim)?;
        Ok(spec)
    }

    /// Exactly `m` consecutive blocks of size `ceil(dim / m)` (last smaller).
    pub fn consecutive_groups(m: usize, dim: usize) -> Result<Self> {
        if m == 0 || m > dim {
            return Err(Error::InvalidGrouping(format!(
                "cannot form {m} groups from {dim} cells"
            )));
        }
        let size = dim.div_ceil(m);
        let spec = Self::blocks_of(size, dim)?;
        if spec.num_groups(dim) != m {
            return Err(Error::InvalidGrouping(format!(
                "{dim} cells cannot be split into {m} consecutive blocks of equal size \
                 with a smaller final block"
            )));
        }
        Ok(spec)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            GroupSpec::ConsecutiveBlocks(sizes) => {
                if sizes.is_empty() || sizes.contains(&0) {
                    return Err(Error::InvalidGrouping(
                        "block sizes must be positive".into(),
                    ));
                }
                let total: usize = sizes.iter().sum();
                if total != dim {
                    return Err(Error::InvalidGrouping(format!(
                        "block sizes cover {total} cells, expected {dim}"
                    )));
                }
                let first = sizes[0];
                let (last, body) = sizes.split_last().expect("nonempty");
                if body.iter().any(|&s| s != first) || *last > first {
                    return Err(Error::InvalidGrouping(format!(
                        "blocks {sizes:?} are not order preserving: all blocks must share \
                         one size except a smaller final block"
                    )));
                }
                Ok(())
            }
            GroupSpec::Strided(m) => {
                if *m == 0 || *m > dim {
                    return Err(Error::InvalidGrouping(format!(
                        "stride {m} invalid for {dim} cells"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn num_groups(&self, dim: usize) -> usize {
        match self {
            GroupSpec::ConsecutiveBlocks(sizes) => sizes.len(),
            GroupSpec::Strided(m) => (*m).min(dim),
        }
    }

    /// 0-based cell indices of each group.
    pub fn groups(&self, dim: usize) -> Result<Vec<Vec<usize>>> {
        self.validate(dim)?;
        Ok(match self {
            GroupSpec::ConsecutiveBlocks(sizes) => {
                let mut start = 0;
                sizes
                    .iter()
                    .map(|&s| {
                        let g = (start..start + s).collect();
                        start += s;
                        g
                    })
                    .collect()
            }
            GroupSpec::Strided(m) => (0..*m).map(|j| (j..dim).step_by(*m).collect()).collect(),
        })
    }

    /// True when every group has the same number of cells, which makes the
    /// grouped uniform prior exchangeable.
    pub fn equal_sizes(&self, dim: usize) -> bool {
        match self.groups(dim) {
            Ok(groups) => groups.iter().all(|g| g.len() == groups[0].len()),
            Err(_) => false,
        }
    }

    pub fn is_identity(&self, dim: usize) -> bool {
        self.num_groups(dim) == dim
    }
}

/// Applies precomputed groups to a slice.
pub(crate) fn sum_groups<T: Copy + std::iter::Sum<T>>(values: &[T], groups: &[Vec<usize>]) -> Vec<T> {
    groups
        .iter()
        .map(|g| g.iter().map(|&i| values[i]).sum())
        .collect()
}

/// Sums counts within each group of `spec`.
pub fn group_counts(t: &CountVector, spec: &GroupSpec) -> Result<CountVector> {
    let groups = spec.groups(t.dim())?;
    CountVector::new(sum_groups(t.counts(), &groups))
}

/// Sums probabilities within each group of `spec`.
pub fn group_probs(theta: &SimplexPoint, spec: &GroupSpec) -> Result<SimplexPoint> {
    let groups = spec.groups(theta.dim())?;
    Ok(SimplexPoint::from_raw(sum_groups(theta.probs(), &groups)))
}

/// Sums Dirichlet parameters within each group (the aggregation property).
pub fn group_alphas(alphas: &[f64], spec: &GroupSpec) -> Result<Vec<f64>> {
    let groups = spec.groups(alphas.len())?;
    Ok(sum_groups(alphas, &groups))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example4() -> CountVector {
        CountVector::new(vec![
            145, 96, 35, 29, 20, 11, 4, 4, 4, 3, 3, 2, 2, 1, 1, 1, 1, 1,
        ])
        .unwrap()
    }

    #[test]
    fn identity_grouping_is_noop() {
        let t = example4();
        assert_eq!(group_counts(&t, &GroupSpec::identity(18)).unwrap(), t);
    }

    #[test]
    fn consecutive_pairs_and_triples() {
        let t = example4();
        let pairs = group_counts(&t, &GroupSpec::blocks_of(2, 18).unwrap()).unwrap();
        assert_eq!(pairs.counts(), &[241, 64, 31, 8, 7, 5, 3, 2, 2]);
        let triples = group_counts(&t, &GroupSpec::blocks_of(3, 18).unwrap()).unwrap();
        assert_eq!(triples.counts(), &[276, 60, 12, 8, 4, 3]);
    }

    #[test]
    fn strided_pairs() {
        let t = example4();
        let g = group_counts(&t, &GroupSpec::Strided(9)).unwrap();
        assert_eq!(g.counts(), &[148, 99, 37, 31, 21, 12, 5, 5, 5]);
        let groups = GroupSpec::Strided(5).groups(18).unwrap();
        assert_eq!(groups[0], vec![0, 5, 10, 15]);
        assert_eq!(groups[4], vec![4, 9, 14]);
    }

    #[test]
    fn four_blocks_with_remainder() {
        let spec = GroupSpec::consecutive_groups(5, 18).unwrap();
        assert_eq!(spec, GroupSpec::ConsecutiveBlocks(vec![4, 4, 4, 4, 2]));
        assert!(!spec.equal_sizes(18));
        assert!(GroupSpec::consecutive_groups(9, 18).unwrap().equal_sizes(18));
    }

    #[test]
    fn rejects_non_order_preserving_blocks() {
        assert!(GroupSpec::ConsecutiveBlocks(vec![1, 3]).validate(4).is_err());
        assert!(GroupSpec::ConsecutiveBlocks(vec![2, 1, 2]).validate(5).is_err());
        assert!(GroupSpec::ConsecutiveBlocks(vec![2, 2]).validate(5).is_err());
        assert!(GroupSpec::Strided(0).validate(5).is_err());
        assert!(group_counts(&example4(), &GroupSpec::ConsecutiveBlocks(vec![1, 17])).is_err());
    }

    #[test]
    fn grouping_preserves_order() {
        let theta = crate::simplex::ordered_from_weights(
            &SimplexPoint::normalized((1..=18).map(|i| (i * 7 % 5 + 1) as f64).collect())
                .unwrap(),
        );
        for spec in [
            GroupSpec::blocks_of(2, 18).unwrap(),
            GroupSpec::blocks_of(4, 18).unwrap(),
            GroupSpec::Strided(5),
            GroupSpec::Strided(9),
        ] {
            assert!(group_probs(&theta, &spec).unwrap().is_ordered(), "{spec:?}");
        }
    }
}
