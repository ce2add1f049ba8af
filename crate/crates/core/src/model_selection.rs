//! Hyperparameter selection for the reference tree.
//!
//! Configurations are drawn at random from a [`SearchSpace`] and scored by
//! mean validation AUC over stratified folds; the best-scoring draw wins.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cart::{fit_tree_on, Criterion, Hyperparameters};
use crate::dataset::{make_folds, Dataset};
use crate::error::{Error, Result};
use crate::rng::{Purpose, Rng, SeedStream};

pub const DEFAULT_TRIALS: usize = 50;
pub const DEFAULT_FOLDS: usize = 5;

/// Area under the ROC curve, as the Mann-Whitney statistic: the probability
/// that a random positive outscores a random negative, counting ties as one
/// half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidArgument(format!("label {bad} is not 0 or 1")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the rank sum of the positives, with tied blocks sharing their
    // mean rank; doubling keeps every quantity an integer.
    let mut doubled_rank_sum: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1 ..= end; their mean times two is start+end+1.
        let doubled_mean_rank = (start + end + 1) as u64;
        let block_positives = order[start..end].iter().filter(|&&i| labels[i] == 1).count() as u64;
        doubled_rank_sum += block_positives * doubled_mean_rank;
        start = end;
    }
    let doubled_u = doubled_rank_sum - positives * (positives + 1);
    Ok(doubled_u as f64 / (2 * positives * negatives) as f64)
}

/// Integer choice for `min_samples_split`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSize {
    /// Uniform integer in `[low, high]`, raised to `2 * min_samples_leaf` if
    /// smaller.
    Range { low: usize, high: usize },
    /// A fixed multiple of the sampled `min_samples_leaf`.
    LeafMultiple(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RealRange {
    Fixed(f64),
    LogUniform { low: f64, high: f64 },
}

/// Sampling ranges for each hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    /// Candidate level limits; `None` is unbounded.
    pub max_depth: Vec<Option<usize>>,
    /// Inclusive integer range.
    pub min_samples_leaf: (usize, usize),
    pub min_samples_split: SplitSize,
    pub min_impurity_decrease: RealRange,
    pub criterion: Vec<Criterion>,
    pub max_features: f64,
}

impl SearchSpace {
    /// The default space for a dataset of `n_samples` rows: depth limits
    /// 2..=10 or unbounded, leaves of 0.5% to 10% of the rows, splits of
    /// twice the leaf size, and a log-uniform impurity-decrease floor in
    /// `[1e-4, 1e-1]`.
    pub fn default_for(n_samples: usize) -> Self {
        let fraction = |f: f64| ((f * n_samples as f64).round() as usize).max(1);
        let low = fraction(0.005);
        let high = fraction(0.10).max(low);
        let mut max_depth: Vec<Option<usize>> = (2..=10).map(Some).collect();
        max_depth.push(None);
        Self {
            max_depth,
            min_samples_leaf: (low, high),
            min_samples_split: SplitSize::LeafMultiple(2),
            min_impurity_decrease: RealRange::LogUniform { low: 1e-4, high: 1e-1 },
            criterion: vec![Criterion::Gini, Criterion::Entropy],
            max_features: 1.0,
        }
    }

    /// A space containing exactly `hp`.
    pub fn singleton(hp: &Hyperparameters) -> Self {
        Self {
            max_depth: vec![hp.max_depth],
            min_samples_leaf: (hp.min_samples_leaf, hp.min_samples_leaf),
            min_samples_split: SplitSize::Range {
                low: hp.min_samples_split,
                high: hp.min_samples_split,
            },
            min_impurity_decrease: RealRange::Fixed(hp.min_impurity_decrease),
            criterion: vec![hp.criterion],
            max_features: hp.max_features,
        }
    }

    pub fn with_criterion(mut self, criterion: Criterion) -> Self {
        self.criterion = vec![criterion];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSearchSpace(msg.to_string()));
        if self.max_depth.is_empty() || self.criterion.is_empty() {
            return bad("max_depth and criterion need at least one choice");
        }
        if self.max_depth.contains(&Some(0)) {
            return bad("max_depth choices must be at least 1");
        }
        let (lo, hi) = self.min_samples_leaf;
        if lo == 0 || lo > hi {
            return bad("min_samples_leaf range must satisfy 1 <= low <= high");
        }
        match self.min_samples_split {
            SplitSize::Range { low, high } if low > high => return bad("min_samples_split range is empty"),
            SplitSize::LeafMultiple(0) => return bad("min_samples_split multiple must be positive"),
            _ => {}
        }
        match self.min_impurity_decrease {
            RealRange::Fixed(v) if !(v >= 0.0 && v.is_finite()) => {
                return bad("min_impurity_decrease must be finite and non-negative")
            }
            RealRange::LogUniform { low, high } if !(low > 0.0 && low <= high && high.is_finite()) => {
                return bad("log-uniform range needs 0 < low <= high")
            }
            _ => {}
        }
        if !(self.max_features > 0.0 && self.max_features <= 1.0) {
            return bad("max_features must lie in (0, 1]");
        }
        Ok(())
    }
}

/// One independent draw per knob. Every draw consumes the generator in the
/// same pattern, whatever the ranges.
pub fn sample_hyperparameters(space: &SearchSpace, rng: &mut Rng) -> Hyperparameters {
    let max_depth = space.max_depth[rng.random_range(0..space.max_depth.len())];
    let (lo, hi) = space.min_samples_leaf;
    let min_samples_leaf = rng.random_range(lo..=hi);
    let split_draw = match space.min_samples_split {
        SplitSize::Range { low, high } => rng.random_range(low..=high),
        SplitSize::LeafMultiple(m) => {
            let _ = rng.random::<u64>();
            m * min_samples_leaf
        }
    };
    let min_samples_split = split_draw.max(2 * min_samples_leaf).max(2);
    let u: f64 = rng.random();
    let min_impurity_decrease = match space.min_impurity_decrease {
        RealRange::Fixed(v) => v,
        RealRange::LogUniform { low, high } => (low.ln() + u * (high.ln() - low.ln())).exp().clamp(low, high),
    };
    let criterion = space.criterion[rng.random_range(0..space.criterion.len())];
    Hyperparameters {
        criterion,
        max_depth,
        min_samples_leaf,
        min_samples_split,
        min_impurity_decrease,
        max_features: space.max_features,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub hyperparameters: Hyperparameters,
    pub mean_validation_auc: f64,
    /// `None` where the fold was skipped (single-class validation fold or
    /// single-group training fold).
    pub fold_aucs: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Hyperparameters,
    pub best_trial: usize,
    pub cv_auc: f64,
    pub k_folds: usize,
    pub trials: Vec<Trial>,
}

/// A single tree fit performed during the search, reported to observers.
#[derive(Debug)]
pub struct FoldFit<'a> {
    pub trial: usize,
    pub fold: usize,
    pub train: &'a [usize],
    pub validation: &'a [usize],
}

pub fn random_search(
    dataset: &Dataset,
    space: &SearchSpace,
    n_trials: usize,
    k_folds: usize,
    seed: u64,
) -> Result<SearchResult> {
    random_search_observed(dataset, space, n_trials, k_folds, seed, &|_| {})
}

/// [`random_search`] that reports every fold fit to `observer` before the
/// tree is trained. Trials run in parallel; the observer may be called from
/// several threads.
pub fn random_search_observed(
    dataset: &Dataset,
    space: &SearchSpace,
    n_trials: usize,
    k_folds: usize,
    seed: u64,
    observer: &(dyn Fn(&FoldFit<'_>) + Sync),
) -> Result<SearchResult> {
    if n_trials == 0 {
        return Err(Error::InvalidArgument("random search needs at least one trial".into()));
    }
    space.validate()?;
    let folds = make_folds(dataset, k_folds, seed)?;
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..k_folds).map(|f| folds.split(f)).collect();
    let seeds = SeedStream::new(seed);

    let trials: Vec<Trial> = (0..n_trials)
        .into_par_iter()
        .map(|index| {
            let hp = sample_hyperparameters(space, &mut seeds.substream(Purpose::Hyperparameters, index as u64));
            let mut fold_aucs = Vec::with_capacity(k_folds);
            for (fold, (train, validation)) in splits.iter().enumerate() {
                observer(&FoldFit {
                    trial: index,
                    fold,
                    train,
                    validation,
                });
                let mut rng = seeds.substream(Purpose::CrossValidationFit, (index * k_folds + fold) as u64);
                let tree = match fit_tree_on(dataset, train, &hp, &mut rng) {
                    Ok(tree) => tree,
                    Err(Error::DegenerateCohort { .. }) => {
                        fold_aucs.push(None);
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let scores: Vec<f64> = validation
                    .iter()
                    .map(|&s| tree.leaf_for(dataset.row(s)).proportion_treated())
                    .collect();
                let labels: Vec<u8> = validation.iter().map(|&s| dataset.treatment()[s]).collect();
                match auc(&scores, &labels) {
                    Ok(a) => fold_aucs.push(Some(a)),
                    Err(Error::UndefinedAuc) => fold_aucs.push(None),
                    Err(e) => return Err(e),
                }
            }
            let scored: Vec<f64> = fold_aucs.iter().flatten().copied().collect();
            let mean_validation_auc = if scored.is_empty() {
                0.5
            } else {
                scored.iter().sum::<f64>() / scored.len() as f64
            };
            Ok(Trial {
                index,
                hyperparameters: hp,
                mean_validation_auc,
                fold_aucs,
            })
        })
        .collect::<Result<_>>()?;

    // Strict comparison keeps the earliest trial on ties.
    let mut best = 0;
    for (i, trial) in trials.iter().enumerate() {
        if trial.mean_validation_auc > trials[best].mean_validation_auc {
            best = i;
        }
    }
    Ok(SearchResult {
        best: trials[best].hyperparameters.clone(),
        best_trial: best,
        cv_auc: trials[best].mean_validation_auc,
        k_folds,
        trials,
    })
}
