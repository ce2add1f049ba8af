//! Binary classification trees over the treatment label.
//!
//! Splits are exact CART-style: every midpoint between consecutive distinct
//! values of every candidate feature is scored, and the one with the largest
//! impurity decrease wins. A sample goes left iff `value <= cutoff`.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Gini,
    /// Shannon entropy in bits.
    Entropy,
}

impl Criterion {
    /// Impurity of a perfectly balanced node.
    pub fn max_impurity(self) -> f64 {
        match self {
            Criterion::Gini => 0.5,
            Criterion::Entropy => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Gini => "gini",
            Criterion::Entropy => "entropy",
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gini" => Ok(Criterion::Gini),
            "entropy" => Ok(Criterion::Entropy),
            other => Err(Error::InvalidArgument(format!("unknown criterion `{other}`"))),
        }
    }
}

/// Impurity of a node holding `n0` group-0 and `n1` group-1 samples.
pub fn impurity(criterion: Criterion, n0: usize, n1: usize) -> Result<f64> {
    if n0 + n1 == 0 {
        return Err(Error::EmptyNode);
    }
    Ok(node_impurity(criterion, n0, n1))
}

#[inline]
fn node_impurity(criterion: Criterion, n0: usize, n1: usize) -> f64 {
    let n = (n0 + n1) as f64;
    // Both proportions come straight from the counts, so swapping the groups
    // gives a bit-identical result.
    let p0 = n0 as f64 / n;
    let p1 = n1 as f64 / n;
    match criterion {
        Criterion::Gini => 1.0 - (p0 * p0 + p1 * p1),
        Criterion::Entropy => {
            let term = |p: f64| if p > 0.0 { -p * p.log2() } else { 0.0 };
            term(p0) + term(p1)
        }
    }
}

/// Regularization knobs for a single tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub criterion: Criterion,
    /// Maximum number of levels, counting the root as one level: `Some(1)`
    /// allows only the root, `Some(2)` a single split. `None` is unbounded.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    pub min_impurity_decrease: f64,
    /// Fraction of features drawn as split candidates at every node.
    pub max_features: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            criterion: Criterion::Entropy,
            max_depth: None,
            min_samples_leaf: 1,
            min_samples_split: 2,
            min_impurity_decrease: 0.0,
            max_features: 1.0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyperparameters(msg));
        if self.min_samples_split < 2 {
            return bad(format!("min_samples_split = {} < 2", self.min_samples_split));
        }
        if self.min_samples_leaf < 1 {
            return bad("min_samples_leaf must be at least 1".into());
        }
        if self.max_depth == Some(0) {
            return bad("max_depth must be at least 1".into());
        }
        if !(self.min_impurity_decrease >= 0.0 && self.min_impurity_decrease.is_finite()) {
            return bad(format!("min_impurity_decrease = {}", self.min_impurity_decrease));
        }
        if !(self.max_features > 0.0 && self.max_features <= 1.0) {
            return bad(format!("max_features = {} outside (0, 1]", self.max_features));
        }
        Ok(())
    }

    /// Number of candidate features per split out of `d`.
    pub fn features_per_split(&self, d: usize) -> usize {
        // The small slack keeps e.g. sqrt(4)/4 * 4 from rounding up to 3.
        let k = (self.max_features * d as f64 - 1e-9).ceil() as usize;
        k.clamp(1, d.max(1))
    }

    fn may_split_at(&self, depth: usize) -> bool {
        self.max_depth.is_none_or(|levels| depth + 1 < levels)
    }
}

/// A terminal region of the partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafNode {
    pub leaf_id: usize,
    pub n0: usize,
    pub n1: usize,
    pub depth: usize,
    pub impurity: f64,
}

impl LeafNode {
    pub fn n_samples(&self) -> usize {
        self.n0 + self.n1
    }

    /// Fraction of the leaf's samples in group 1.
    pub fn proportion_treated(&self) -> f64 {
        self.n1 as f64 / self.n_samples() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Internal {
        #[serde(rename = "feature")]
        feature_index: usize,
        cutoff: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf(LeafNode),
}

/// One step on a root-to-leaf path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathStep {
    pub feature_index: usize,
    pub cutoff: f64,
    pub went_left: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub hyperparameters: Hyperparameters,
    pub feature_names: Vec<String>,
    pub root_counts: (usize, usize),
    pub root_impurity: f64,
    pub root: TreeNode,
}

/// A candidate split chosen by [`best_split`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature_index: usize,
    pub cutoff: f64,
    pub impurity_decrease: f64,
}

fn group_counts(dataset: &Dataset, rows: &[usize]) -> (usize, usize) {
    let n1 = rows.iter().filter(|&&i| dataset.treatment()[i] == 1).count();
    (rows.len() - n1, n1)
}

/// Exhaustive search for the best split of `rows`.
///
/// Returns `None` when fewer than `min_samples_split` rows are given or when
/// no split leaves `min_samples_leaf` rows on both sides with a positive
/// decrease of at least `min_impurity_decrease`. Ties go to the lowest
/// feature index, then the lowest cutoff.
pub fn best_split(rows: &[usize], dataset: &Dataset, hp: &Hyperparameters, rng: &mut Rng) -> Option<Split> {
    let mut scratch = Vec::with_capacity(rows.len());
    best_split_with(rows, dataset, hp, rng, &mut scratch)
}

fn best_split_with(
    rows: &[usize],
    dataset: &Dataset,
    hp: &Hyperparameters,
    rng: &mut Rng,
    scratch: &mut Vec<(f64, u8)>,
) -> Option<Split> {
    let n = rows.len();
    if n < hp.min_samples_split || n < 2 * hp.min_samples_leaf {
        return None;
    }
    let d = dataset.n_features();
    let k = hp.features_per_split(d);
    let candidates: Vec<usize> = if k >= d {
        (0..d).collect()
    } else {
        let mut picked = index::sample(rng, d, k).into_vec();
        picked.sort_unstable();
        picked
    };

    let (p0, p1) = group_counts(dataset, rows);
    let parent = node_impurity(hp.criterion, p0, p1);
    let labels = dataset.treatment();
    let nf = n as f64;
    let mut best: Option<Split> = None;

    for feature in candidates {
        scratch.clear();
        scratch.extend(rows.iter().map(|&i| (dataset.value(i, feature), labels[i])));
        scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

        let (mut l0, mut l1) = (0usize, 0usize);
        for i in 0..n - 1 {
            if scratch[i].1 == 0 {
                l0 += 1;
            } else {
                l1 += 1;
            }
            let (lo, hi) = (scratch[i].0, scratch[i + 1].0);
            if lo >= hi {
                continue;
            }
            let n_left = i + 1;
            let n_right = n - n_left;
            if n_left < hp.min_samples_leaf || n_right < hp.min_samples_leaf {
                continue;
            }
            let left = node_impurity(hp.criterion, l0, l1);
            let right = node_impurity(hp.criterion, p0 - l0, p1 - l1);
            let decrease = parent - (n_left as f64 / nf) * left - (n_right as f64 / nf) * right;
            if decrease <= 0.0 || decrease < hp.min_impurity_decrease {
                continue;
            }
            if best.is_none_or(|b| decrease > b.impurity_decrease) {
                let mut cutoff = lo + (hi - lo) / 2.0;
                // Adjacent floats: the midpoint may round onto `hi`.
                if cutoff >= hi {
                    cutoff = lo;
                }
                best = Some(Split {
                    feature_index: feature,
                    cutoff,
                    impurity_decrease: decrease,
                });
            }
        }
    }
    best
}

/// Fits a tree on every row of `dataset`.
pub fn fit_tree(dataset: &Dataset, hp: &Hyperparameters, rng: &mut Rng) -> Result<DecisionTree> {
    let rows: Vec<usize> = (0..dataset.n_samples()).collect();
    fit_tree_on(dataset, &rows, hp, rng)
}

/// Fits a tree on the given rows. Rows may repeat (bootstrap resamples).
pub fn fit_tree_on(dataset: &Dataset, rows: &[usize], hp: &Hyperparameters, rng: &mut Rng) -> Result<DecisionTree> {
    hp.validate()?;
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (n0, n1) = group_counts(dataset, rows);
    if n0 == 0 || n1 == 0 {
        let group = u8::from(n0 == 0);
        return Err(Error::DegenerateCohort {
            group,
            count: rows.len(),
        });
    }
    let mut builder = Builder {
        dataset,
        hp,
        rng,
        next_leaf: 0,
        scratch: Vec::with_capacity(rows.len()),
    };
    let root = builder.grow(rows.to_vec(), 0);
    Ok(DecisionTree {
        hyperparameters: hp.clone(),
        feature_names: dataset.feature_names().to_vec(),
        root_counts: (n0, n1),
        root_impurity: node_impurity(hp.criterion, n0, n1),
        root,
    })
}

struct Builder<'a> {
    dataset: &'a Dataset,
    hp: &'a Hyperparameters,
    rng: &'a mut Rng,
    next_leaf: usize,
    scratch: Vec<(f64, u8)>,
}

impl Builder<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> TreeNode {
        let (n0, n1) = group_counts(self.dataset, &rows);
        let split = if n0 > 0 && n1 > 0 && self.hp.may_split_at(depth) {
            best_split_with(&rows, self.dataset, self.hp, self.rng, &mut self.scratch)
        } else {
            None
        };
        match split {
            None => {
                let leaf = LeafNode {
                    leaf_id: self.next_leaf,
                    n0,
                    n1,
                    depth,
                    impurity: node_impurity(self.hp.criterion, n0, n1),
                };
                self.next_leaf += 1;
                TreeNode::Leaf(leaf)
            }
            Some(split) => {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                    .into_iter()
                    .partition(|&i| self.dataset.value(i, split.feature_index) <= split.cutoff);
                let left = self.grow(left_rows, depth + 1);
                let right = self.grow(right_rows, depth + 1);
                TreeNode::Internal {
                    feature_index: split.feature_index,
                    cutoff: split.cutoff,
                    left: Box::new(left),
                    right: Box::new(right),
                }
            }
        }
    }
}

impl DecisionTree {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn criterion(&self) -> Criterion {
        self.hyperparameters.criterion
    }

    /// Leaf reached by `sample`.
    pub fn apply(&self, sample: &[f64]) -> Result<usize> {
        if sample.len() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: sample.len(),
            });
        }
        if let Some(j) = sample.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample(j));
        }
        Ok(self.leaf_for(sample).leaf_id)
    }

    /// `n1 / (n0 + n1)` of the leaf reached by `sample`.
    pub fn predict_proba(&self, sample: &[f64]) -> Result<f64> {
        self.apply(sample)?;
        Ok(self.leaf_for(sample).proportion_treated())
    }

    /// Routes without validation; `sample` must have the tree's width.
    pub(crate) fn leaf_for(&self, sample: &[f64]) -> &LeafNode {
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf(leaf) => return leaf,
                TreeNode::Internal {
                    feature_index,
                    cutoff,
                    left,
                    right,
                } => {
                    node = if sample[*feature_index] <= *cutoff { left } else { right };
                }
            }
        }
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<LeafNode> {
        let mut out = Vec::new();
        let mut stack = vec![&self.root];
        while let Some(node) = stack.pop() {
            match node {
                TreeNode::Leaf(leaf) => out.push(*leaf),
                TreeNode::Internal { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().len()
    }

    pub fn max_leaf_depth(&self) -> usize {
        self.leaves().iter().map(|l| l.depth).max().unwrap_or(0)
    }

    /// Root-to-leaf decisions leading to `leaf_id`.
    pub fn path_to(&self, leaf_id: usize) -> Result<Vec<PathStep>> {
        fn walk(node: &TreeNode, target: usize, path: &mut Vec<PathStep>) -> bool {
            match node {
                TreeNode::Leaf(leaf) => leaf.leaf_id == target,
                TreeNode::Internal {
                    feature_index,
                    cutoff,
                    left,
                    right,
                } => {
                    for (child, went_left) in [(left, true), (right, false)] {
                        path.push(PathStep {
                            feature_index: *feature_index,
                            cutoff: *cutoff,
                            went_left,
                        });
                        if walk(child, target, path) {
                            return true;
                        }
                        path.pop();
                    }
                    false
                }
            }
        }
        let mut path = Vec::new();
        if walk(&self.root, leaf_id, &mut path) {
            Ok(path)
        } else {
            Err(Error::UnknownLeaf(leaf_id))
        }
    }
}
