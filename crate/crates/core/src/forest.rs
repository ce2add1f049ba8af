//! Random forest used to score how consistently samples land in violating
//! leaves.
//!
//! The forest is never used for prediction. Each tree is fit on a bootstrap
//! resample with the reference tree's hyperparameters, except that only
//! `ceil(sqrt(d))` features are candidates at each split. All trees are then
//! applied to the original dataset and, per sample, the fraction of trees that
//! put it in a flagged leaf is recorded for every threshold of a grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cart::{fit_tree_on, DecisionTree, Hyperparameters};
use crate::dataset::{bootstrap_indices, Dataset};
use crate::diagnostics::{Mode, ViolationPolicy};
use crate::error::{Error, Result};
use crate::rng::{Purpose, SeedStream};

/// Attempts per tree before a single-group bootstrap becomes a hard error.
pub const MAX_BOOTSTRAP_ATTEMPTS: usize = 10;

/// Default number of trees.
pub const DEFAULT_TREES: usize = 100;

/// `{0.00, 0.05, ..., 0.50}` in impurity units.
pub fn default_threshold_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 20.0).collect()
}

/// Where a tree's bootstrap came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapProvenance {
    /// ChaCha stream id of the generator that produced the accepted resample.
    pub stream_id: u64,
    /// 1 unless earlier resamples held a single treatment group.
    pub attempts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub hyperparameters: Hyperparameters,
    pub bootstrap_seeds: Vec<BootstrapProvenance>,
}

impl RandomForest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

/// Hyperparameters for forest members: the reference settings with the
/// square-root feature rule.
pub fn forest_hyperparameters(reference: &Hyperparameters, n_features: usize) -> Hyperparameters {
    let d = n_features.max(1) as f64;
    Hyperparameters {
        max_features: (d.sqrt() / d).min(1.0),
        ..reference.clone()
    }
}

pub fn fit_forest(dataset: &Dataset, hp: &Hyperparameters, n_trees: usize, seed: u64) -> Result<RandomForest> {
    if n_trees == 0 {
        return Err(Error::InvalidArgument("a forest needs at least one tree".into()));
    }
    let member_hp = forest_hyperparameters(hp, dataset.n_features());
    member_hp.validate()?;
    let seeds = SeedStream::new(seed);
    let n = dataset.n_samples();

    let fitted: Vec<(DecisionTree, BootstrapProvenance)> = (0..n_trees)
        .into_par_iter()
        .map(|t| {
            for attempt in 0..MAX_BOOTSTRAP_ATTEMPTS {
                let index = ((attempt as u64) << 32) | t as u64;
                let mut rng = seeds.substream(Purpose::Forest, index);
                let rows = bootstrap_indices(n, &mut rng);
                match fit_tree_on(dataset, &rows, &member_hp, &mut rng) {
                    Ok(tree) => {
                        let provenance = BootstrapProvenance {
                            stream_id: SeedStream::stream_id(Purpose::Forest, index),
                            attempts: attempt + 1,
                        };
                        return Ok((tree, provenance));
                    }
                    Err(Error::DegenerateCohort { .. }) => continue,
                    Err(other) => return Err(other),
                }
            }
            Err(Error::DegenerateBootstrap {
                tree: t,
                attempts: MAX_BOOTSTRAP_ATTEMPTS,
            })
        })
        .collect::<Result<_>>()?;

    let (trees, bootstrap_seeds) = fitted.into_iter().unzip();
    Ok(RandomForest {
        trees,
        hyperparameters: member_hp,
        bootstrap_seeds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Median,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "median" => Ok(Aggregation::Median),
            other => Err(Error::InvalidArgument(format!("unknown aggregation `{other}`"))),
        }
    }
}

impl Aggregation {
    pub fn apply(self, values: &mut [f64]) -> f64 {
        if values.is_empty() {
            return 0.0;
        }
        match self {
            Aggregation::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregation::Median => {
                values.sort_unstable_by(f64::total_cmp);
                let m = values.len() / 2;
                if values.len() % 2 == 1 {
                    values[m]
                } else {
                    (values[m - 1] + values[m]) / 2.0
                }
            }
        }
    }
}

/// Per-sample violation consistency over a threshold grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyProfile {
    pub thresholds: Vec<f64>,
    pub mode: Mode,
    pub n_trees: usize,
    n_samples: usize,
    /// Row-major `[sample][threshold]` count of trees that flagged the sample.
    flagged: Vec<u32>,
}

impl ConsistencyProfile {
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Fraction of trees that flagged `sample` at grid point `threshold_index`.
    pub fn value(&self, sample: usize, threshold_index: usize) -> f64 {
        self.flagged[sample * self.thresholds.len() + threshold_index] as f64 / self.n_trees as f64
    }

    /// Consistency of `sample` across the whole grid.
    pub fn sample_grid(&self, sample: usize) -> Vec<f64> {
        (0..self.thresholds.len()).map(|g| self.value(sample, g)).collect()
    }

    pub fn flag_count(&self, sample: usize, threshold_index: usize) -> u32 {
        self.flagged[sample * self.thresholds.len() + threshold_index]
    }

    pub fn threshold_index(&self, threshold: f64) -> Option<usize> {
        self.thresholds.iter().position(|&t| t == threshold)
    }
}

/// Applies every tree of `forest` to `dataset` and counts, per sample and
/// threshold, the trees whose leaf for that sample is flagged. Relative mode
/// uses each tree's own root impurity.
pub fn sample_consistency(
    forest: &RandomForest,
    dataset: &Dataset,
    thresholds: &[f64],
    mode: Mode,
) -> Result<ConsistencyProfile> {
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("empty threshold grid".into()));
    }
    if thresholds.iter().any(|t| !(*t >= 0.0 && t.is_finite())) || thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "thresholds must be finite, non-negative and strictly ascending".into(),
        ));
    }
    if let Some(tree) = forest.trees.first() {
        if tree.n_features() != dataset.n_features() {
            return Err(Error::DimensionMismatch {
                expected: tree.n_features(),
                got: dataset.n_features(),
            });
        }
    }
    let n = dataset.n_samples();
    let g = thresholds.len();

    let flagged = forest
        .trees
        .par_iter()
        .map(|tree| {
            let leaf_flags: Vec<Vec<bool>> = tree
                .leaves()
                .iter()
                .map(|leaf| {
                    thresholds
                        .iter()
                        .map(|&t| {
                            ViolationPolicy::new(tree.criterion(), t, mode).flags(leaf.impurity, tree.root_impurity)
                        })
                        .collect()
                })
                .collect();
            let mut counts = vec![0u32; n * g];
            for s in 0..n {
                let leaf = tree.leaf_for(dataset.row(s)).leaf_id;
                for (c, &f) in counts[s * g..(s + 1) * g].iter_mut().zip(&leaf_flags[leaf]) {
                    *c += u32::from(f);
                }
            }
            counts
        })
        .reduce(
            || vec![0u32; n * g],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );

    Ok(ConsistencyProfile {
        thresholds: thresholds.to_vec(),
        mode,
        n_trees: forest.n_trees(),
        n_samples: n,
        flagged,
    })
}

/// Rows of `dataset` grouped by the leaf of `tree` they reach, indexed by
/// leaf id.
pub fn leaf_members(tree: &DecisionTree, dataset: &Dataset) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); tree.n_leaves()];
    for s in 0..dataset.n_samples() {
        members[tree.leaf_for(dataset.row(s)).leaf_id].push(s);
    }
    members
}

/// Aggregated sample consistency per leaf of the reference tree, indexed by
/// leaf id. Leaves with no members score 0.
pub fn leaf_consistency(
    tree: &DecisionTree,
    dataset: &Dataset,
    profile: &ConsistencyProfile,
    threshold_index: usize,
    aggregation: Aggregation,
) -> Result<Vec<f64>> {
    if profile.n_samples() != dataset.n_samples() {
        return Err(Error::Shape(format!(
            "consistency profile covers {} samples, dataset has {}",
            profile.n_samples(),
            dataset.n_samples()
        )));
    }
    if threshold_index >= profile.thresholds.len() {
        return Err(Error::InvalidArgument(format!(
            "threshold index {threshold_index} outside grid of {}",
            profile.thresholds.len()
        )));
    }
    if tree.n_features() != dataset.n_features() {
        return Err(Error::DimensionMismatch {
            expected: tree.n_features(),
            got: dataset.n_features(),
        });
    }
    Ok(leaf_members(tree, dataset)
        .iter()
        .map(|rows| {
            let mut values: Vec<f64> = rows.iter().map(|&s| profile.value(s, threshold_index)).collect();
            aggregation.apply(&mut values)
        })
        .collect())
}
