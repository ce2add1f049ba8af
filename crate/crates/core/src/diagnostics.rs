//! Violation flags, leaf probabilities and subspace queries.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::cart::{impurity, Criterion, DecisionTree, LeafNode};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::forest::{leaf_members, Aggregation, ConsistencyProfile};
use crate::model_selection::SearchResult;
use crate::render::{self, ConsistencySummary, Metadata, PolicySummary, PositivityReport, SampleRecord};

/// How a leaf's impurity is compared against the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Flag iff `H(leaf) <= t`.
    #[default]
    Absolute,
    /// Flag iff `H(root) - H(leaf) > max(H(root) - t, 0)`.
    Relative,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absolute" => Ok(Mode::Absolute),
            "relative" => Ok(Mode::Relative),
            other => Err(Error::InvalidArgument(format!("unknown mode `{other}`"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Absolute => "absolute",
            Mode::Relative => "relative",
        })
    }
}

/// What counts as a violation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationPolicy {
    pub criterion: Criterion,
    pub threshold: f64,
    pub mode: Mode,
}

impl ViolationPolicy {
    pub fn new(criterion: Criterion, threshold: f64, mode: Mode) -> Self {
        Self {
            criterion,
            threshold,
            mode,
        }
    }

    /// Strict positivity: only single-group leaves are flagged.
    pub fn strict(criterion: Criterion) -> Self {
        Self::new(criterion, 0.0, Mode::Absolute)
    }

    pub fn validate(&self) -> Result<()> {
        if self.threshold >= 0.0 && self.threshold.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "threshold must be finite and non-negative, got {}",
                self.threshold
            )))
        }
    }

    /// The relative-mode margin `t' = max(H(root) - t, 0)`.
    pub fn relative_margin(&self, root_impurity: f64) -> f64 {
        (root_impurity - self.threshold).max(0.0)
    }

    /// Applies the flag rule to impurities measured with `self.criterion`.
    pub fn flags(&self, leaf_impurity: f64, root_impurity: f64) -> bool {
        match self.mode {
            Mode::Absolute => leaf_impurity <= self.threshold,
            Mode::Relative => root_impurity - leaf_impurity > self.relative_margin(root_impurity),
        }
    }

    /// Applies the flag rule to raw group counts.
    pub fn flags_counts(&self, leaf: (usize, usize), root: (usize, usize)) -> Result<bool> {
        let leaf_h = impurity(self.criterion, leaf.0, leaf.1)?;
        let root_h = impurity(self.criterion, root.0, root.1)?;
        Ok(self.flags(leaf_h, root_h))
    }
}

/// Whether a leaf violates positivity under `policy`.
pub fn flag_leaf(leaf_impurity: f64, root_impurity: f64, policy: &ViolationPolicy) -> bool {
    policy.flags(leaf_impurity, root_impurity)
}

fn ln_binomial(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Hypergeometric probability of drawing exactly `k` successes in `n` draws
/// without replacement from a population of `N` holding `K` successes.
///
/// Evaluated in log space. Values of `k` outside the support give 0.
#[allow(non_snake_case)]
pub fn hypergeometric_pmf(N: u64, K: u64, n: u64, k: u64) -> Result<f64> {
    if K > N || n > N {
        return Err(Error::InvalidParameters {
            population: N,
            successes: K,
            draws: n,
        });
    }
    if k > n || k > K || n - k > N - K {
        return Ok(0.0);
    }
    let ln_p = ln_binomial(K, k) + ln_binomial(N - K, n - k) - ln_binomial(N, n);
    Ok(ln_p.exp().clamp(0.0, 1.0))
}

/// Probability of a leaf's group composition given the root population.
pub fn leaf_probability(leaf: (usize, usize), root: (usize, usize)) -> Result<f64> {
    let population = (root.0 + root.1) as u64;
    hypergeometric_pmf(population, root.1 as u64, (leaf.0 + leaf.1) as u64, leaf.1 as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "<=")]
    LessEqual,
    #[serde(rename = ">")]
    Greater,
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::LessEqual => "<=",
            Sign::Greater => ">",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicRule {
    pub feature: String,
    pub sign: Sign,
    pub cutoff: f64,
}

impl AtomicRule {
    pub fn holds(&self, value: f64) -> bool {
        match self.sign {
            Sign::LessEqual => value <= self.cutoff,
            Sign::Greater => value > self.cutoff,
        }
    }
}

impl fmt::Display for AtomicRule {
    /// Cutoffs print in shortest round-trip form.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.feature, self.sign, self.cutoff)
    }
}

/// A conjunction of atomic rules; the empty query matches everything.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubspaceQuery {
    pub rules: Vec<AtomicRule>,
}

impl SubspaceQuery {
    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Whether `sample`, laid out as `feature_names`, satisfies every rule.
    /// Rules naming an unknown feature never hold.
    pub fn matches(&self, feature_names: &[String], sample: &[f64]) -> bool {
        self.rules.iter().all(|rule| {
            feature_names
                .iter()
                .position(|n| *n == rule.feature)
                .is_some_and(|j| rule.holds(sample[j]))
        })
    }
}

impl fmt::Display for SubspaceQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, rule) in self.rules.iter().enumerate() {
            if i > 0 {
                f.write_str(" AND ")?;
            }
            write!(f, "{rule}")?;
        }
        Ok(())
    }
}

/// The unpruned root-to-leaf conjunction for `leaf_id`.
pub fn path_query(tree: &DecisionTree, leaf_id: usize) -> Result<SubspaceQuery> {
    let rules = tree
        .path_to(leaf_id)?
        .into_iter()
        .map(|step| AtomicRule {
            feature: tree.feature_names[step.feature_index].clone(),
            sign: if step.went_left { Sign::LessEqual } else { Sign::Greater },
            cutoff: step.cutoff,
        })
        .collect();
    Ok(SubspaceQuery { rules })
}

/// The pruned query characterizing `leaf_id`.
pub fn extract_query(tree: &DecisionTree, leaf_id: usize) -> Result<SubspaceQuery> {
    Ok(prune_query(&path_query(tree, leaf_id)?))
}

/// Keeps, for each `(feature, sign)` pair, only the rule closest to the leaf
/// (the last one on the path). Survivors keep their relative order.
pub fn prune_query(query: &SubspaceQuery) -> SubspaceQuery {
    let mut seen = HashSet::new();
    let mut kept: Vec<AtomicRule> = query
        .rules
        .iter()
        .rev()
        .filter(|r| seen.insert((r.feature.as_str(), r.sign)))
        .cloned()
        .collect();
    kept.reverse();
    SubspaceQuery { rules: kept }
}

/// Diagnostics for one leaf of the reference tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafReport {
    pub leaf_id: usize,
    pub depth: usize,
    pub n0: usize,
    pub n1: usize,
    pub impurity: f64,
    pub is_violating: bool,
    pub probability: f64,
    /// Aggregated consistency at the policy threshold.
    pub consistency: f64,
    /// Aggregated consistency at every grid threshold.
    pub consistency_grid: Vec<f64>,
    /// Whether the leaf is flagged at every grid threshold.
    pub flag_grid: Vec<bool>,
    /// Larger group; ties go to group 0.
    pub majority_group: u8,
    pub query: SubspaceQuery,
    pub query_text: String,
}

impl LeafReport {
    pub fn n_samples(&self) -> usize {
        self.n0 + self.n1
    }
}

pub fn majority_group(n0: usize, n1: usize) -> u8 {
    u8::from(n1 > n0)
}

/// Knobs for report assembly that are not part of any fitted artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub seed: u64,
    pub aggregation: Aggregation,
    pub canvas_width: f64,
    pub emit_samples: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            aggregation: Aggregation::Mean,
            canvas_width: render::DEFAULT_CANVAS_WIDTH,
            emit_samples: false,
        }
    }
}

/// Assembles the report for a fitted reference tree and forest profile.
///
/// The policy threshold must be a point of the profile's grid and the
/// policy's criterion must be the tree's.
pub fn build_report(
    tree: &DecisionTree,
    profile: &ConsistencyProfile,
    dataset: &Dataset,
    policy: &ViolationPolicy,
    search: &SearchResult,
    options: &ReportOptions,
) -> Result<PositivityReport> {
    policy.validate()?;
    if policy.criterion != tree.criterion() {
        return Err(Error::InvalidArgument(format!(
            "policy criterion {} differs from the tree's {}",
            policy.criterion,
            tree.criterion()
        )));
    }
    if profile.mode != policy.mode {
        return Err(Error::InvalidArgument("consistency profile was computed in another mode".into()));
    }
    let default_index = profile.threshold_index(policy.threshold).ok_or_else(|| {
        Error::InvalidArgument(format!("threshold {} is not on the consistency grid", policy.threshold))
    })?;
    if tree.n_features() != dataset.n_features() || profile.n_samples() != dataset.n_samples() {
        return Err(Error::Shape("tree, profile and dataset disagree".into()));
    }

    let members = leaf_members(tree, dataset);
    let root = dataset.group_counts();
    let root_h = impurity(policy.criterion, root.0, root.1)?;
    let grid = &profile.thresholds;

    let mut leaves = Vec::new();
    for leaf in tree.leaves() {
        let LeafNode { leaf_id, depth, .. } = leaf;
        // Counts come from the dataset so they match the reported population
        // even when the tree was fit on a subset.
        let n1 = members[leaf_id].iter().filter(|&&s| dataset.treatment()[s] == 1).count();
        let n0 = members[leaf_id].len() - n1;
        let (leaf_h, flag_grid) = if n0 + n1 == 0 {
            (0.0, vec![false; grid.len()])
        } else {
            let h = impurity(policy.criterion, n0, n1)?;
            let flags = grid
                .iter()
                .map(|&t| ViolationPolicy::new(policy.criterion, t, policy.mode).flags(h, root_h))
                .collect();
            (h, flags)
        };
        let consistency_grid: Vec<f64> = (0..grid.len())
            .map(|g| {
                let mut values: Vec<f64> = members[leaf_id].iter().map(|&s| profile.value(s, g)).collect();
                options.aggregation.apply(&mut values)
            })
            .collect();
        let query = extract_query(tree, leaf_id)?;
        leaves.push(LeafReport {
            leaf_id,
            depth,
            n0,
            n1,
            impurity: leaf_h,
            is_violating: flag_grid[default_index],
            probability: leaf_probability((n0, n1), root)?,
            consistency: consistency_grid[default_index],
            consistency_grid,
            flag_grid,
            majority_group: majority_group(n0, n1),
            query_text: query.to_string(),
            query,
        });
    }

    let flagged_samples: usize = leaves.iter().filter(|l| l.is_violating).map(LeafReport::n_samples).sum();
    let layout = render::layout(&leaves, options.canvas_width)?;
    let per_leaf: BTreeMap<usize, Vec<f64>> =
        leaves.iter().map(|l| (l.leaf_id, l.consistency_grid.clone())).collect();

    let samples = options.emit_samples.then(|| {
        (0..dataset.n_samples())
            .map(|s| SampleRecord {
                leaf_id: tree.leaf_for(dataset.row(s)).leaf_id,
                treatment: dataset.treatment()[s],
                consistency_grid: profile.sample_grid(s),
            })
            .collect()
    });

    Ok(PositivityReport {
        version: render::REPORT_VERSION,
        metadata: Metadata {
            seed: options.seed,
            n_samples: dataset.n_samples(),
            n_features: dataset.n_features(),
            feature_names: dataset.feature_names().to_vec(),
            group_counts: root,
            n_trees: profile.n_trees,
            policy: PolicySummary {
                criterion: policy.criterion,
                threshold: policy.threshold,
                mode: policy.mode,
            },
            root_impurity: root_h,
            flagged_sample_fraction: flagged_samples as f64 / dataset.n_samples() as f64,
        },
        model_selection: search.clone(),
        tree: tree.clone(),
        leaves,
        consistency_thresholds: grid.clone(),
        consistency: ConsistencySummary {
            thresholds: grid.clone(),
            aggregation: options.aggregation,
            default_index,
            per_leaf,
        },
        layout,
        samples,
    })
}
