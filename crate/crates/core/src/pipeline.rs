//! End-to-end detection: model selection, reference tree, forest, report.

use serde::{Deserialize, Serialize};

use crate::cart::{fit_tree, Criterion, DecisionTree};
use crate::dataset::Dataset;
use crate::diagnostics::{build_report, Mode, ReportOptions, ViolationPolicy};
use crate::error::{Error, Result};
use crate::forest::{
    default_threshold_grid, fit_forest, sample_consistency, Aggregation, ConsistencyProfile, RandomForest,
    DEFAULT_TREES,
};
use crate::model_selection::{random_search, SearchResult, SearchSpace, DEFAULT_FOLDS, DEFAULT_TRIALS};
use crate::render::{PositivityReport, DEFAULT_CANVAS_WIDTH};
use crate::rng::{Purpose, SeedStream};

/// Leaves at or above this aggregated consistency count as findings.
pub const FINDING_CONSISTENCY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectOptions {
    /// Restricts the search to one impurity criterion. When unset, the search
    /// chooses, and thresholds are read in the chosen criterion's units.
    pub criterion: Option<Criterion>,
    pub threshold: f64,
    pub mode: Mode,
    pub n_trees: usize,
    pub n_trials: usize,
    pub k_folds: usize,
    pub seed: u64,
    pub aggregation: Aggregation,
    pub canvas_width: f64,
    pub emit_samples: bool,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            criterion: None,
            threshold: 0.0,
            mode: Mode::Absolute,
            n_trees: DEFAULT_TREES,
            n_trials: DEFAULT_TRIALS,
            k_folds: DEFAULT_FOLDS,
            seed: 42,
            aggregation: Aggregation::Mean,
            canvas_width: DEFAULT_CANVAS_WIDTH,
            emit_samples: false,
        }
    }
}

/// Everything fitted during a run, kept for callers that need more than the
/// report.
#[derive(Debug, Clone)]
pub struct Detection {
    pub search: SearchResult,
    pub tree: DecisionTree,
    pub forest: RandomForest,
    pub profile: ConsistencyProfile,
    pub report: PositivityReport,
}

/// The default grid with `threshold` inserted if it is not already on it.
pub fn threshold_grid_with(threshold: f64) -> Vec<f64> {
    let mut grid = default_threshold_grid();
    if !grid.contains(&threshold) {
        grid.push(threshold);
        grid.sort_by(f64::total_cmp);
    }
    grid
}

pub fn detect(dataset: &Dataset, options: &DetectOptions) -> Result<PositivityReport> {
    Ok(detect_full(dataset, options)?.report)
}

pub fn detect_full(dataset: &Dataset, options: &DetectOptions) -> Result<Detection> {
    if !(options.threshold >= 0.0 && options.threshold.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be finite and non-negative, got {}",
            options.threshold
        )));
    }
    let (n0, n1) = dataset.group_counts();
    if n0 == 0 || n1 == 0 {
        return Err(Error::DegenerateCohort {
            group: u8::from(n0 == 0),
            count: dataset.n_samples(),
        });
    }

    let mut space = SearchSpace::default_for(dataset.n_samples());
    if let Some(criterion) = options.criterion {
        space = space.with_criterion(criterion);
    }
    let search = random_search(dataset, &space, options.n_trials, options.k_folds, options.seed)?;

    let seeds = SeedStream::new(options.seed);
    let tree = fit_tree(dataset, &search.best, &mut seeds.substream(Purpose::ReferenceTree, 0))?;
    let forest = fit_forest(dataset, &search.best, options.n_trees, options.seed)?;

    let policy = ViolationPolicy::new(tree.criterion(), options.threshold, options.mode);
    let grid = threshold_grid_with(options.threshold);
    let profile = sample_consistency(&forest, dataset, &grid, options.mode)?;

    let report = build_report(
        &tree,
        &profile,
        dataset,
        &policy,
        &search,
        &ReportOptions {
            seed: options.seed,
            aggregation: options.aggregation,
            canvas_width: options.canvas_width,
            emit_samples: options.emit_samples,
        },
    )?;
    Ok(Detection {
        search,
        tree,
        forest,
        profile,
        report,
    })
}
