use overlapscan::cart::{fit_tree, impurity, Criterion, Hyperparameters, TreeNode};
use overlapscan::dataset::{make_folds, Dataset};
use overlapscan::diagnostics::{flag_leaf, prune_query, AtomicRule, Mode, Sign, SubspaceQuery, ViolationPolicy};
use overlapscan::model_selection::auc;
use overlapscan::rng::{Purpose, SeedStream};
use proptest::prelude::*;

fn criterion() -> impl Strategy<Value = Criterion> {
    prop_oneof![Just(Criterion::Gini), Just(Criterion::Entropy)]
}

/// Scores drawn from a small set so ties are common.
fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec((0u8..8).prop_map(|v| f64::from(v) / 4.0 - 1.0), n),
            prop::collection::vec(0u8..2, n),
        )
    })
}

fn dataset(n: usize, d: usize, seed: u64) -> Dataset {
    use rand::Rng;
    let mut rng = SeedStream::new(seed).substream(Purpose::Synthesis, 77);
    let features: Vec<f64> = (0..n * d).map(|_| f64::from(rng.random_range(0u8..6))).collect();
    let mut treatment: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
    treatment[0] = 0;
    treatment[1] = 1;
    let names = (0..d).map(|j| format!("f{j}")).collect();
    Dataset::new(features, treatment, names).unwrap()
}

/// Walks the tree bottom-up, returning (n0, n1) of the subtree and checking
/// the weighted decrease at every internal node.
fn check_decreases(node: &TreeNode, criterion: Criterion) -> (usize, usize) {
    match node {
        TreeNode::Leaf(leaf) => (leaf.n0, leaf.n1),
        TreeNode::Internal { left, right, .. } => {
            let l = check_decreases(left, criterion);
            let r = check_decreases(right, criterion);
            let (n0, n1) = (l.0 + r.0, l.1 + r.1);
            let n = (n0 + n1) as f64;
            let wl = (l.0 + l.1) as f64 / n;
            let wr = (r.0 + r.1) as f64 / n;
            let delta = impurity(criterion, n0, n1).unwrap()
                - wl * impurity(criterion, l.0, l.1).unwrap()
                - wr * impurity(criterion, r.0, r.1).unwrap();
            assert!(delta >= 0.0, "negative decrease {delta} at ({n0}, {n1})");
            (n0, n1)
        }
    }
}

proptest! {
    #[test]
    fn impurity_symmetric_and_zero_iff_pure(c in criterion(), a in 0usize..200, b in 0usize..200) {
        prop_assume!(a + b > 0);
        let h = impurity(c, a, b).unwrap();
        prop_assert_eq!(h, impurity(c, b, a).unwrap());
        prop_assert_eq!(h == 0.0, a == 0 || b == 0);
        prop_assert!((0.0..=c.max_impurity()).contains(&h));
    }

    #[test]
    fn balanced_node_is_maximal(n in 1usize..10_000) {
        prop_assert_eq!(impurity(Criterion::Entropy, n, n).unwrap(), 1.0);
        prop_assert_eq!(impurity(Criterion::Gini, n, n).unwrap(), 0.5);
    }

    #[test]
    fn auc_complement((scores, labels) in scored_labels()) {
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        let sum = auc(&scores, &labels).unwrap() + auc(&scores, &flipped).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_under_increasing_maps((scores, labels) in scored_labels()) {
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 7.0).collect();
        prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&mapped, &labels).unwrap());
    }

    #[test]
    fn prune_is_idempotent(rules in prop::collection::vec((0usize..3, any::<bool>(), -4i32..4), 0..12)) {
        let query = SubspaceQuery {
            rules: rules
                .into_iter()
                .map(|(f, le, c)| AtomicRule {
                    feature: format!("x{f}"),
                    sign: if le { Sign::LessEqual } else { Sign::Greater },
                    cutoff: f64::from(c) / 2.0,
                })
                .collect(),
        };
        let once = prune_query(&query);
        prop_assert_eq!(prune_query(&once), once.clone());
        prop_assert!(once.rules.len() <= 6);
        // Pruning only removes rules, so it never excludes a matching sample.
        let names = ["x0".to_string(), "x1".to_string(), "x2".to_string()];
        for a in -5..5 {
            for b in -5..5 {
                let sample = [f64::from(a) / 2.0 + 0.25, f64::from(b) / 2.0 + 0.25, 0.25];
                if query.matches(&names, &sample) {
                    prop_assert!(once.matches(&names, &sample));
                }
            }
        }
    }

    #[test]
    fn folds_partition_samples(n in 10usize..120, k in 2usize..6, seed in any::<u64>()) {
        let ds = dataset(n, 2, seed);
        let folds = make_folds(&ds, k, seed).unwrap();
        let mut seen = vec![0usize; n];
        for f in 0..k {
            let (train, validation) = folds.split(f);
            prop_assert_eq!(train.len() + validation.len(), n);
            for &i in &validation {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes = folds.fold_sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 2);
    }

    #[test]
    fn absolute_flags_are_monotone_in_threshold(leaf in 0.0f64..1.0, root in 0.0f64..1.0, t in 0.0f64..1.0, dt in 0.0f64..0.5) {
        let lo = ViolationPolicy::new(Criterion::Entropy, t, Mode::Absolute);
        let hi = ViolationPolicy::new(Criterion::Entropy, t + dt, Mode::Absolute);
        if flag_leaf(leaf, root, &lo) {
            prop_assert!(flag_leaf(leaf, root, &hi));
        }
    }

    #[test]
    fn executed_splits_never_increase_impurity(
        n in 8usize..150,
        d in 1usize..5,
        seed in any::<u64>(),
        c in criterion(),
        leaf in 1usize..6,
    ) {
        let ds = dataset(n, d, seed);
        let hp = Hyperparameters {
            criterion: c,
            max_depth: None,
            min_samples_leaf: leaf,
            min_samples_split: 2 * leaf,
            min_impurity_decrease: 0.0,
            max_features: 1.0,
        };
        let tree = fit_tree(&ds, &hp, &mut SeedStream::new(seed).substream(Purpose::ReferenceTree, 0)).unwrap();
        let counts = check_decreases(&tree.root, c);
        prop_assert_eq!(counts, ds.group_counts());
    }
}
