//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! cargo test -p overlapscan --test acceptance

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng as _;

use overlapscan::cart::{fit_tree, impurity, Criterion, DecisionTree, Hyperparameters, TreeNode};
use overlapscan::dataset::{synth_rotated_square, Dataset};
use overlapscan::diagnostics::{extract_query, flag_leaf, hypergeometric_pmf, Mode, Sign, ViolationPolicy};
use overlapscan::forest::fit_forest;
use overlapscan::model_selection::auc;
use overlapscan::render::{read_report_json, PositivityReport};
use overlapscan::rng::{Purpose, Rng, SeedStream};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn rng(tag: u64) -> Rng {
    SeedStream::new(0xACCE_97A0 ^ tag).substream(Purpose::Synthesis, tag)
}

fn overlapscan(args: &[&str], dir: &Path) -> (i32, Duration) {
    let start = Instant::now();
    let output = Command::new(env!("CARGO_BIN_EXE_overlapscan"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    let elapsed = start.elapsed();
    if !matches!(output.status.code(), Some(0 | 3)) {
        panic!("{args:?} failed: {}", String::from_utf8_lossy(&output.stderr));
    }
    (output.status.code().unwrap(), elapsed)
}

fn detect_synth(kind: &str, seed: u64, dir: &Path, extra: &[&str]) -> (i32, Duration, PositivityReport) {
    let seed = seed.to_string();
    let mut args = vec!["detect", "--synth", kind, "--synth-n", "2000", "--seed", &seed];
    args.extend_from_slice(extra);
    let (code, elapsed) = overlapscan(&args, dir);
    (code, elapsed, read_report_json(dir.join("report.json")).unwrap())
}

/// Reference-tree leaf consistency received by every sample.
fn sample_consistency(report: &PositivityReport) -> Vec<f64> {
    let samples = report.samples.as_ref().expect("run with --emit-samples");
    samples
        .iter()
        .map(|s| report.leaves.iter().find(|l| l.leaf_id == s.leaf_id).unwrap().consistency)
        .collect()
}

fn rotated_square_detection() -> Outcome {
    let mut passes = 0;
    let mut details = Vec::new();
    for seed in SEEDS {
        let dir = tempfile::tempdir().unwrap();
        let (code, elapsed, report) = detect_synth("rotated-square", seed, dir.path(), &["--emit-samples"]);
        let data = synth_rotated_square(2000, seed).unwrap();
        let consistency = sample_consistency(&report);

        let (mut inside, mut inside_hit, mut outside, mut outside_hit) = (0usize, 0usize, 0usize, 0usize);
        for (s, c) in consistency.iter().enumerate() {
            let (x1, x2) = (data.value(s, 0), data.value(s, 1));
            if x1 > 0.0 && x2 > 0.0 && data.treatment()[s] == 1 {
                inside += 1;
                inside_hit += usize::from(*c >= 0.8);
            }
            if x1 < 0.0 || x2 < 0.0 {
                outside += 1;
                outside_hit += usize::from(*c >= 0.8);
            }
        }
        let inside_rate = inside_hit as f64 / inside as f64;
        let outside_rate = outside_hit as f64 / outside as f64;
        let near_zero = |c: f64| c > -0.15 && c < 0.15;
        let query_ok = report.leaves.iter().filter(|l| l.is_violating).any(|l| {
            let bounds = |name: &str| {
                l.query
                    .rules
                    .iter()
                    .any(|r| r.feature == name && r.sign == Sign::Greater && near_zero(r.cutoff))
            };
            bounds("x1") && bounds("x2")
        });
        let ok = inside_rate >= 0.9 && outside_rate <= 0.05 && query_ok && elapsed < Duration::from_secs(120);
        passes += usize::from(ok);
        details.push(format!(
            "seed {seed}: {} inside {inside_rate:.3} outside {outside_rate:.3} query {} exit {code} {:.1}s",
            if ok { "ok" } else { "miss" },
            if query_ok { "ok" } else { "missing" },
            elapsed.as_secs_f64()
        ));
    }
    let summary = format!("{passes}/5 seeds [{}]", details.join("; "));
    if passes >= 4 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn null_overlap_blank_plot() -> Outcome {
    let mut failures = Vec::new();
    let mut details = Vec::new();
    for seed in SEEDS {
        let dir = tempfile::tempdir().unwrap();
        let (code, _, report) = detect_synth("null-overlap", seed, dir.path(), &["--synth-d", "5"]);
        let n = report.metadata.n_samples as f64;
        let big_flagged = report
            .leaves
            .iter()
            .filter(|l| l.is_violating && l.consistency >= 0.5 && (l.n0 + l.n1) as f64 >= 0.05 * n)
            .count();
        let cv = report.cv_auc();
        details.push(format!("seed {seed}: cv_auc {cv:.3} exit {code}"));
        if !(0.45..=0.60).contains(&cv) || big_flagged > 0 || code != 0 {
            failures.push(seed);
        }
    }
    let summary = details.join("; ");
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(format!("failing seeds {failures:?}: {summary}"))
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

fn hypergeometric_oracle() -> Outcome {
    let start = Instant::now();
    let (mut worst, mut worst_sum, mut cases) = (0.0f64, 0.0f64, 0usize);
    for big_n in 0..=25u64 {
        for big_k in 0..=big_n {
            for n in 0..=big_n {
                // Both products are exact integers below 2^53, so the
                // quotient is the correctly rounded pmf.
                let denominator = binomial(big_n, n) as f64;
                let mut total = 0.0;
                for k in n.saturating_sub(big_n - big_k)..=n.min(big_k) {
                    let exact = (binomial(big_k, k) * binomial(big_n - big_k, n - k)) as f64 / denominator;
                    let got = hypergeometric_pmf(big_n, big_k, n, k).unwrap();
                    worst = worst.max((got - exact).abs());
                    total += got;
                    cases += 1;
                }
                worst_sum = worst_sum.max((total - 1.0).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    let summary = format!(
        "{cases} points, max |err| {worst:.2e}, max |sum-1| {worst_sum:.2e}, {:.2}s",
        elapsed.as_secs_f64()
    );
    if worst <= 1e-12 && worst_sum <= 1e-12 && elapsed < Duration::from_secs(10) {
        Ok(summary)
    } else {
        Err(summary)
    }
}

/// Random dataset mixing continuous and heavily tied features, with a
/// treatment that depends on the first feature.
fn random_dataset(rng: &mut Rng) -> Dataset {
    let n = rng.random_range(20..=500);
    let d = rng.random_range(1..=8);
    let mut features = Vec::with_capacity(n * d);
    for _ in 0..n {
        for j in 0..d {
            features.push(if j % 2 == 0 {
                rng.random_range(-3.0..3.0)
            } else {
                f64::from(rng.random_range(0u8..5))
            });
        }
    }
    let treatment = (0..n)
        .map(|i| {
            let p = if features[i * d] > 0.0 { 0.8 } else { 0.3 };
            u8::from(i == 0 || (i != 1 && rng.random_bool(p)))
        })
        .collect();
    let names = (1..=d).map(|j| format!("x{j}")).collect();
    Dataset::new(features, treatment, names).unwrap()
}

fn random_tree(rng: &mut Rng, data: &Dataset) -> DecisionTree {
    let leaf = rng.random_range(1..=15);
    let hp = Hyperparameters {
        criterion: if rng.random_bool(0.5) { Criterion::Gini } else { Criterion::Entropy },
        max_depth: if rng.random_bool(0.3) { None } else { Some(rng.random_range(1..=12)) },
        min_samples_leaf: leaf,
        min_samples_split: 2 * leaf,
        min_impurity_decrease: if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..0.02) },
        max_features: rng.random_range(0.3..=1.0),
    };
    fit_tree(data, &hp, rng).unwrap()
}

fn query_round_trip() -> Outcome {
    let mut rng = rng(4);
    let (mut counterexamples, mut checks, mut leaves) = (0usize, 0usize, 0usize);
    for _ in 0..200 {
        let data = random_dataset(&mut rng);
        let tree = random_tree(&mut rng, &data);
        let queries: Vec<_> = tree
            .leaves()
            .iter()
            .map(|l| (l.leaf_id, extract_query(&tree, l.leaf_id).unwrap()))
            .collect();
        leaves += queries.len();
        for s in 0..data.n_samples() {
            let routed = tree.apply(data.row(s)).unwrap();
            for (leaf_id, query) in &queries {
                checks += 1;
                if query.matches(data.feature_names(), data.row(s)) != (routed == *leaf_id) {
                    counterexamples += 1;
                }
            }
        }
    }
    let summary = format!("200 trees, {leaves} leaves, {checks} checks, {counterexamples} counterexamples");
    if counterexamples == 0 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn auc_oracle() -> Outcome {
    let mut rng = rng(5);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=50);
        let levels = rng.random_range(1..=n as u32);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..levels)) * 0.37).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
        labels[0] = 0;
        labels[1] = 1;
        let (mut concordant, mut tied, mut pairs) = (0u64, 0u64, 0u64);
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == 1 && lj == 0 {
                    pairs += 1;
                    if scores[i] > scores[j] {
                        concordant += 1;
                    } else if scores[i] == scores[j] {
                        tied += 1;
                    }
                }
            }
        }
        let expected = (2 * concordant + tied) as f64 / (2 * pairs) as f64;
        if auc(&scores, &labels).unwrap() != expected {
            mismatches += 1;
        }
    }
    let summary = format!("1000 instances, {mismatches} mismatches");
    if mismatches == 0 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

/// Returns the subtree's (n0, n1) and counts internal nodes whose weighted
/// impurity decrease is negative.
fn negative_splits(node: &TreeNode, criterion: Criterion, checked: &mut usize, bad: &mut usize) -> (usize, usize) {
    match node {
        TreeNode::Leaf(leaf) => (leaf.n0, leaf.n1),
        TreeNode::Internal { left, right, .. } => {
            let l = negative_splits(left, criterion, checked, bad);
            let r = negative_splits(right, criterion, checked, bad);
            let (n0, n1) = (l.0 + r.0, l.1 + r.1);
            let n = (n0 + n1) as f64;
            let delta = impurity(criterion, n0, n1).unwrap()
                - (l.0 + l.1) as f64 / n * impurity(criterion, l.0, l.1).unwrap()
                - (r.0 + r.1) as f64 / n * impurity(criterion, r.0, r.1).unwrap();
            *checked += 1;
            *bad += usize::from(delta < 0.0);
            (n0, n1)
        }
    }
}

fn impurity_suite() -> Outcome {
    let mut problems = Vec::new();
    for c in [Criterion::Gini, Criterion::Entropy] {
        for a in 0..=300usize {
            for b in 0..=300usize {
                if a + b == 0 {
                    continue;
                }
                let h = impurity(c, a, b).unwrap();
                if h != impurity(c, b, a).unwrap() {
                    problems.push(format!("{c} asymmetric at ({a}, {b})"));
                }
                if (h == 0.0) != (a == 0 || b == 0) {
                    problems.push(format!("{c} zero-iff-pure broken at ({a}, {b})"));
                }
            }
        }
    }
    for n in 1..=100_000usize {
        if impurity(Criterion::Entropy, n, n).unwrap() != 1.0 || impurity(Criterion::Gini, n, n).unwrap() != 0.5 {
            problems.push(format!("balanced node {n}"));
        }
    }

    let mut rng = rng(6);
    let (mut checked, mut bad) = (0, 0);
    for _ in 0..100 {
        let data = random_dataset(&mut rng);
        let tree = random_tree(&mut rng, &data);
        negative_splits(&tree.root, tree.criterion(), &mut checked, &mut bad);
    }
    let square = synth_rotated_square(1000, 6).unwrap();
    let hp = Hyperparameters {
        min_samples_leaf: 3,
        min_samples_split: 6,
        ..Hyperparameters::default()
    };
    for tree in fit_forest(&square, &hp, 20, 6).unwrap().trees {
        negative_splits(&tree.root, tree.criterion(), &mut checked, &mut bad);
    }
    if bad > 0 {
        problems.push(format!("{bad} splits with negative decrease"));
    }
    problems.truncate(5);
    if problems.is_empty() {
        Ok(format!("symmetry, purity and balance exact; {checked} executed splits non-negative"))
    } else {
        Err(problems.join("; "))
    }
}

fn determinism() -> Outcome {
    let mut outputs = Vec::new();
    for threads in ["1", "2", "4", "0", "1"] {
        let dir = tempfile::tempdir().unwrap();
        let args = ["detect", "--synth", "rotated-square", "--seed", "7", "--emit-samples", "--threads", threads];
        overlapscan(&args, dir.path());
        let json = std::fs::read(dir.path().join("report.json")).unwrap();
        let svg = std::fs::read(dir.path().join("report.svg")).unwrap();
        outputs.push((threads, json, svg));
    }
    let (_, json, svg) = &outputs[0];
    let differing: Vec<&str> = outputs
        .iter()
        .filter(|(_, j, s)| j != json || s != svg)
        .map(|(t, _, _)| *t)
        .collect();
    let summary = format!(
        "5 runs over --threads 1,2,4,0,1: JSON {} bytes, SVG {} bytes",
        json.len(),
        svg.len()
    );
    if differing.is_empty() {
        Ok(format!("{summary}, all identical"))
    } else {
        Err(format!("{summary}, differing thread counts {differing:?}"))
    }
}

fn relative_mode_rule() -> Outcome {
    let mut rng = rng(8);
    let special = [0.0, 0.25, 0.5, 1.0];
    let draw = |rng: &mut Rng| {
        if rng.random_bool(0.15) {
            special[rng.random_range(0..special.len())]
        } else {
            rng.random_range(0.0..=1.0)
        }
    };
    let mut disagreements = 0;
    let mut flagged = 0;
    for _ in 0..10_000 {
        let (root, leaf, t) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let policy = ViolationPolicy::new(Criterion::Entropy, t, Mode::Relative);
        let direct = root - leaf > f64::max(root - t, 0.0);
        let got = flag_leaf(leaf, root, &policy);
        flagged += usize::from(got);
        disagreements += usize::from(got != direct);
    }
    let summary = format!("10000 triples, {flagged} flagged, {disagreements} disagreements");
    if disagreements == 0 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn main() {
    let criteria: [Check; 8] = [
        ("rotated-square detection", rotated_square_detection),
        ("null-overlap blank plot", null_overlap_blank_plot),
        ("hypergeometric oracle", hypergeometric_oracle),
        ("query round-trip", query_round_trip),
        ("AUC oracle", auc_oracle),
        ("impurity suite", impurity_suite),
        ("determinism", determinism),
        ("relative-mode rule", relative_mode_rule),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let message = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {message}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
