use sshpool::graph::{Dataset, FeatureMode, Graph};
use sshpool::model::ModelConfig;
use sshpool::synthetic::{protein_like_dataset, triangle_density_dataset};
use sshpool::tensor::Tensor;
use sshpool::trainer::{
    cross_validate, curves_csv, sweep_csv, sweep_depth, sweep_ratio, train_fold, TrainConfig,
};

fn tiny_model(feature_dim: usize) -> ModelConfig {
    let mut m = ModelConfig::new(feature_dim, 2);
    m.hidden_dim = 8;
    m.mlp_hidden_dim = 8;
    m.layer_sizes = vec![8, 4];
    m.assignment_ratio = 0.5;
    m
}

fn quick(epochs: usize, folds: usize, repeats: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        folds,
        repeats,
        batch_size: 8,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn overfits_separable_set_at_defaults() {
    let ds = triangle_density_dataset(20, 1);
    let model = ModelConfig::new(ds.feature_dim, 2);
    let cfg = TrainConfig {
        epochs: 200,
        ..TrainConfig::default()
    };
    let all: Vec<usize> = (0..20).collect();
    let (res, _) = train_fold(&ds, &all, &[], &model, &cfg, 5).unwrap();
    let best = res.curve.iter().map(|m| m.train_accuracy).fold(0.0, f64::max);
    assert!(best >= 0.95, "best train accuracy {best}");
    assert!(res.curve[199].train_loss < res.curve[0].train_loss);
}

#[test]
fn single_class_is_trivially_perfect() {
    let graphs = (0..6)
        .map(|i| Graph::from_edges(3, &[(0, 1), (1, 2)], Tensor::filled(3, 2, i as f64), 0).unwrap())
        .collect();
    let ds = Dataset {
        name: "one".into(),
        graphs,
        num_classes: 1,
        feature_dim: 2,
        feature_mode: FeatureMode::Constant,
    };
    let mut m = tiny_model(2);
    m.num_classes = 1;
    let (report, _) = cross_validate(&ds, &m, &quick(2, 2, 1)).unwrap();
    assert!(report.runs.iter().all(|r| r.final_test_accuracy == 1.0));
}

#[test]
fn runs_are_bit_identical_and_worker_independent() {
    let ds = protein_like_dataset(30, 2);
    let m = tiny_model(3);
    let cfg = quick(3, 3, 1);
    let (a, _) = cross_validate(&ds, &m, &cfg).unwrap();
    let (b, _) = cross_validate(&ds, &m, &cfg).unwrap();
    let (c, _) = cross_validate(&ds, &m, &TrainConfig { workers: 3, ..cfg }).unwrap();
    let bits = |r: &sshpool::trainer::RunReport| {
        r.runs
            .iter()
            .flat_map(|f| f.curve.iter())
            .flat_map(|e| [e.train_loss, e.train_accuracy, e.test_loss, e.test_accuracy])
            .map(f64::to_bits)
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(bits(&a), bits(&c));
    assert_eq!(curves_csv(&a.mean_curve), curves_csv(&c.mean_curve));
}

#[test]
fn only_training_graphs_reach_backward() {
    let ds = protein_like_dataset(24, 4);
    let train: Vec<usize> = (0..24).filter(|i| i % 3 != 0).collect();
    let test: Vec<usize> = (0..24).filter(|i| i % 3 == 0).collect();
    let (res, _) = train_fold(&ds, &train, &test, &tiny_model(3), &quick(2, 3, 1), 1).unwrap();
    assert_eq!(res.backward_graphs, train);
}

#[test]
fn report_has_folds_times_repeats_entries() {
    let ds = protein_like_dataset(4, 5);
    let (report, _) = cross_validate(&ds, &tiny_model(3), &quick(1, 2, 3)).unwrap();
    assert_eq!(report.runs.len(), 6);
    assert!(report.runs.iter().all(|r| (0.0..=1.0).contains(&r.final_test_accuracy)));
    assert_eq!(report.accuracy.runs, 6);
    let csv = curves_csv(&report.mean_curve);
    assert!(csv.starts_with("epoch,split,loss,accuracy\n1,train,"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn sweeps() {
    let ds = protein_like_dataset(12, 6);
    let base = tiny_model(3);
    let cfg = quick(1, 2, 1);
    let one = sweep_depth(&ds, &[1], &base, &cfg).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].layer_sizes, vec![8]);
    assert_eq!(one, sweep_depth(&ds, &[1], &base, &cfg).unwrap());

    let rows = sweep_depth(&ds, &[1, 2, 3], &base, &cfg).unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        for s in [r.sshpool, r.sshpool_non, r.diffpool] {
            assert!((0.0..=1.0).contains(&s.mean));
        }
    }

    let rows = sweep_ratio(&ds, &[0.5, 0.25], &base, &cfg).unwrap();
    assert_eq!(rows.iter().map(|r| r.layer_sizes.clone()).collect::<Vec<_>>(), vec![vec![8, 4], vec![8, 2]]);
    assert_eq!(sweep_csv(&rows).lines().count(), 3);
    assert!(sweep_ratio(&ds, &[0.05], &base, &cfg).is_err());
}
