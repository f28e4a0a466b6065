use std::collections::HashSet;

use scal_core::active_loop::{run_trial, EvalSets, LoopConfig, ModelSpec};
use scal_core::data::{generate_synthetic, MeanLayout, RandomMeans, SyntheticSpec};
use scal_core::nn::TrainConfig;
use scal_core::strategies::{AcquisitionOptions, StrategyKind};
use scal_core::FeatureDataset;

fn spec(counts: Vec<usize>, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        num_classes: 3,
        dim: 5,
        means: MeanLayout::Random {
            random: RandomMeans {
                scale: 2.5,
                offset: 0.0,
                seed: 17,
            },
        },
        stddevs: vec![1.0; 3],
        counts,
        seed,
    }
}

fn config(strategy: StrategyKind) -> LoopConfig {
    LoopConfig {
        acquisition_size: 6,
        cycles: 4,
        subset_size: 25,
        strategy,
        model: ModelSpec {
            hidden: vec![12],
            embedding_dim: 6,
            ..ModelSpec::default()
        },
        train: TrainConfig {
            epochs: 6,
            lr_decay_epoch: 4,
            batch_size: 8,
            ..TrainConfig::default()
        },
        acquisition: AcquisitionOptions {
            mc_passes: 4,
            ..AcquisitionOptions::default()
        },
        stratified_seed: false,
        ece_bins: 15,
        trials: 1,
        base_seed: 0,
    }
}

fn eval_sets() -> EvalSets {
    EvalSets {
        test: generate_synthetic(&spec(vec![15, 15, 15], 99)).unwrap(),
        shifted: None,
        ood: None,
    }
}

#[test]
fn labeled_set_algebra_holds_for_every_strategy() {
    let pool = generate_synthetic(&spec(vec![20, 25, 30], 5)).unwrap();
    let eval = eval_sets();
    for kind in StrategyKind::ALL {
        let out = run_trial(&config(kind), &pool, &eval, 0, 21).unwrap();
        assert!(!out.truncated);
        assert_eq!(out.labeled_order.len(), 24);
        let unique: HashSet<usize> = out.labeled_order.iter().copied().collect();
        assert_eq!(unique.len(), out.labeled_order.len(), "{kind}: index acquired twice");
        assert!(out.labeled_order.iter().all(|&i| i < pool.len()));
        for (n, rec) in out.records.iter().enumerate() {
            assert_eq!(rec.cycle, n);
            assert_eq!(rec.labeled_count, 6 * (n + 1));
            let prefix = &out.labeled_order[..rec.labeled_count];
            let mut counts = vec![0; 3];
            for &i in prefix {
                counts[pool.labels()[i]] += 1;
            }
            assert_eq!(rec.class_counts, counts);
            assert!((0.0..=1.0).contains(&rec.accuracy));
            assert!((0.0..=1.0).contains(&rec.ece));
            assert!((0.0..=2.0).contains(&rec.brier));
        }
    }
}

#[test]
fn test_labels_never_influence_acquisition() {
    let pool = generate_synthetic(&spec(vec![20, 25, 30], 5)).unwrap();
    let eval = eval_sets();
    let scrambled = EvalSets {
        test: FeatureDataset::new(
            eval.test.features().to_owned(),
            eval.test.labels().iter().map(|&l| (l + 1) % 3).collect(),
            3,
        )
        .unwrap(),
        shifted: None,
        ood: None,
    };
    for kind in [
        StrategyKind::Entropy,
        StrategyKind::Scal,
        StrategyKind::Dfm,
        StrategyKind::Coreset,
    ] {
        let a = run_trial(&config(kind), &pool, &eval, 0, 8).unwrap();
        let b = run_trial(&config(kind), &pool, &scrambled, 0, 8).unwrap();
        assert_eq!(a.labeled_order, b.labeled_order, "{kind}");
    }
}

#[test]
fn unacquired_labels_never_influence_acquisition() {
    let pool = generate_synthetic(&spec(vec![20, 25, 30], 5)).unwrap();
    let eval = eval_sets();
    for kind in [StrategyKind::FeatureSim, StrategyKind::Bald, StrategyKind::Dfm] {
        let cfg = config(kind);
        let a = run_trial(&cfg, &pool, &eval, 0, 13).unwrap();
        // Relabel every sample that was never acquired; the run must not notice.
        let acquired: HashSet<usize> = a.labeled_order.iter().copied().collect();
        let labels: Vec<usize> = pool
            .labels()
            .iter()
            .enumerate()
            .map(|(i, &l)| if acquired.contains(&i) { l } else { (l + 1) % 3 })
            .collect();
        let relabeled = FeatureDataset::new(pool.features().to_owned(), labels, 3).unwrap();
        let b = run_trial(&cfg, &relabeled, &eval, 0, 13).unwrap();
        assert_eq!(a.labeled_order, b.labeled_order, "{kind}");
    }
}

#[test]
fn subset_larger_than_pool_uses_all_unlabeled() {
    let pool = generate_synthetic(&spec(vec![5, 5, 5], 2)).unwrap();
    let cfg = LoopConfig {
        subset_size: 1000,
        acquisition_size: 5,
        cycles: 3,
        ..config(StrategyKind::Coreset)
    };
    let out = run_trial(&cfg, &pool, &eval_sets(), 0, 4).unwrap();
    assert!(!out.truncated);
    let mut all = out.labeled_order.clone();
    all.sort_unstable();
    assert_eq!(all, (0..15).collect::<Vec<_>>());
}
