//! `overlapscan` command line: detect positivity violations, or write the
//! synthetic datasets used to exercise the detector.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use overlapscan::cart::Criterion;
use overlapscan::dataset::{load_csv, synth_null_overlap, synth_rotated_square, Dataset};
use overlapscan::diagnostics::Mode;
use overlapscan::forest::Aggregation;
use overlapscan::pipeline::{detect, FINDING_CONSISTENCY};
use overlapscan::render::{svg_document, Palette, PositivityReport};

use config::{FileConfig, FlagConfig, RunConfig, SynthKind, SynthSpec};

const EXIT_CLEAN: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_VIOLATIONS: u8 = 3;

/// Default feature count for null-overlap data.
const DEFAULT_NULL_FEATURES: usize = 5;

#[derive(Parser)]
#[command(name = "overlapscan", version, about = "Find covariate regions where treatment groups do not overlap")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the detector and write a JSON report and an SVG plot.
    Detect(Box<DetectArgs>),
    /// Write a synthetic dataset as CSV with treatment column "A".
    Synth(SynthArgs),
}

#[derive(Args)]
struct DetectArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Use a generated dataset instead of --data.
    #[arg(long, value_enum, conflicts_with = "data")]
    synth: Option<SynthKind>,
    /// Sample count for --synth.
    #[arg(long, requires = "synth", default_value_t = 2000)]
    synth_n: usize,
    /// Feature count for --synth null-overlap.
    #[arg(long, requires = "synth")]
    synth_d: Option<usize>,
    #[arg(long)]
    treatment_col: Option<String>,
    /// Comma-separated columns to one-hot encode.
    #[arg(long, value_delimiter = ',')]
    categorical: Option<Vec<String>>,
    #[arg(long)]
    criterion: Option<Criterion>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    n_trials: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// How tree-level flags are combined over a leaf's samples.
    #[arg(long)]
    aggregation: Option<Aggregation>,
    /// Report JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// SVG path.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Include per-sample consistency in the report.
    #[arg(long)]
    emit_samples: bool,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// TOML file with any of the settings above.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(value_enum)]
    kind: SynthKind,
    #[arg(long)]
    n: usize,
    /// Feature count (null-overlap only).
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// An error tagged with the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: anyhow::Error) -> Failure {
    Failure { code: EXIT_USAGE, error }
}

fn runtime(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_RUNTIME,
        error: error.into(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_CLEAN });
        }
    };
    let outcome = match cli.command {
        Command::Detect(args) => cmd_detect(*args),
        Command::Synth(args) => cmd_synth(&args).map(|()| EXIT_CLEAN),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}

fn cmd_detect(args: DetectArgs) -> Result<u8, Failure> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path).map_err(usage)?,
        None => FileConfig::default(),
    };
    let flags = FlagConfig {
        data: args.data,
        synth: args.synth.map(|kind| SynthSpec {
            kind,
            n: args.synth_n,
            d: args.synth_d,
            seed: None,
        }),
        treatment_col: args.treatment_col,
        categorical: args.categorical,
        criterion: args.criterion,
        threshold: args.threshold,
        mode: args.mode,
        n_trees: args.n_trees,
        n_trials: args.n_trials,
        folds: args.folds,
        seed: args.seed,
        aggregation: args.aggregation,
        out: args.out,
        svg: args.svg,
        emit_samples: args.emit_samples.then_some(true),
        threads: args.threads,
    };
    let config = RunConfig::resolve(flags, file).map_err(usage)?;
    if args.print_config {
        print!("{}", config.to_toml().map_err(runtime)?);
        return Ok(EXIT_CLEAN);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(runtime)?;
    let report = pool.install(|| run(&config))?;

    print_summary(&config, &report);
    let found = report.violations(FINDING_CONSISTENCY).next().is_some();
    Ok(if found { EXIT_VIOLATIONS } else { EXIT_CLEAN })
}

fn run(config: &RunConfig) -> Result<PositivityReport, Failure> {
    let dataset = load_input(config)?;
    let report = detect(&dataset, &config.detect_options()).map_err(runtime)?;
    write_file(&config.out, &report.to_json().map_err(runtime)?)?;
    write_file(&config.svg, &svg_document(&report.layout, &Palette::default()))?;
    Ok(report)
}

fn load_input(config: &RunConfig) -> Result<Dataset, Failure> {
    if let Some(spec) = &config.synth {
        return synthesize(spec.kind, spec.n, spec.d, spec.seed.unwrap_or(config.seed)).map_err(runtime);
    }
    let path = config.data.as_deref().expect("resolved config has an input");
    load_csv(path, &config.treatment_col, &config.categorical)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(runtime)
}

fn synthesize(kind: SynthKind, n: usize, d: Option<usize>, seed: u64) -> overlapscan::Result<Dataset> {
    match kind {
        SynthKind::RotatedSquare => synth_rotated_square(n, seed),
        SynthKind::NullOverlap => synth_null_overlap(n, d.unwrap_or(DEFAULT_NULL_FEATURES), seed),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)
}

fn print_summary(config: &RunConfig, report: &PositivityReport) {
    let meta = &report.metadata;
    let (n0, n1) = meta.group_counts;
    let best = &report.model_selection.best;
    println!(
        "samples: {} ({n0} in group 0, {n1} in group 1), features: {}",
        meta.n_samples, meta.n_features
    );
    println!(
        "model selection: cv_auc {:.4} over {} trials, {} folds; {} tree, max_depth {}, min_samples_leaf {}",
        report.cv_auc(),
        report.model_selection.trials.len(),
        report.model_selection.k_folds,
        best.criterion,
        best.max_depth.map_or("none".to_string(), |d| d.to_string()),
        best.min_samples_leaf,
    );
    println!(
        "policy: {} t={} ({}), {} forest trees",
        meta.policy.mode, meta.policy.threshold, meta.policy.criterion, meta.n_trees
    );
    println!("flagged samples: {:.1}%", 100.0 * meta.flagged_sample_fraction);

    let ranked = report.ranked_violations();
    let findings: Vec<_> = ranked
        .into_iter()
        .filter(|l| l.consistency >= FINDING_CONSISTENCY)
        .collect();
    if findings.is_empty() {
        println!("no violations at consistency >= {FINDING_CONSISTENCY}");
    } else {
        println!("violations at consistency >= {FINDING_CONSISTENCY}: {}", findings.len());
        for leaf in findings.iter().take(3) {
            let query = if leaf.query.is_empty() { "(all samples)" } else { leaf.query_text.as_str() };
            println!(
                "  leaf {}: n0={} n1={} consistency {:.2} probability {:.3e}  {query}",
                leaf.leaf_id, leaf.n0, leaf.n1, leaf.consistency, leaf.probability
            );
        }
    }
    println!("report: {}  plot: {}", config.out.display(), config.svg.display());
}

fn cmd_synth(args: &SynthArgs) -> Result<(), Failure> {
    if args.kind == SynthKind::RotatedSquare && args.d.is_some() {
        return Err(usage(anyhow::anyhow!("--d applies to null-overlap only")));
    }
    let dataset = synthesize(args.kind, args.n, args.d, args.seed).map_err(runtime)?;
    dataset
        .save_csv(&args.out, "A")
        .with_context(|| format!("writing {}", args.out.display()))
        .map_err(runtime)
}
