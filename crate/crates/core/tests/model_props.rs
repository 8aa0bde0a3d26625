use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sshpool::gradcheck::{gradcheck, DEFAULT_STEP, DEFAULT_TOLERANCE};
use sshpool::graph::Graph;
use sshpool::model::{Architecture, ForwardOptions, Model, ModelConfig};
use sshpool::params::Binder;
use sshpool::synthetic::{random_graph, two_triangles};
use sshpool::tensor::{Tape, Tensor};

fn small(arch: Architecture) -> ModelConfig {
    let mut cfg = ModelConfig::new(3, 2);
    cfg.architecture = arch;
    cfg.hidden_dim = 8;
    cfg.mlp_hidden_dim = 8;
    cfg.layer_sizes = vec![4, 2, 1];
    cfg.assignment_ratio = 0.5;
    cfg
}

#[test]
fn gradcheck_full_model_on_fixture() {
    let g = two_triangles();
    for seed in 0..3 {
        let model = Model::new(small(Architecture::Sshpool), seed).unwrap();
        let report = gradcheck(&model, &g, DEFAULT_STEP, DEFAULT_TOLERANCE).unwrap();
        assert!(report.passed, "{:#?}", report.offenders().collect::<Vec<_>>());
        assert_eq!(report.params.len(), model.params.len());
        // The assignment projections sit behind the argmax.
        for p in report.params.iter().filter(|p| p.name.ends_with(".assign")) {
            assert_eq!(p.analytic, 0.0);
        }
    }
}

#[test]
fn gradcheck_baselines_and_ablation() {
    let g = two_triangles();
    for arch in [Architecture::DiffPool, Architecture::GlobalSum, Architecture::GlobalMean] {
        let model = Model::new(small(arch), 1).unwrap();
        let report = gradcheck(&model, &g, DEFAULT_STEP, DEFAULT_TOLERANCE).unwrap();
        assert!(report.passed, "{arch:?}: {:#?}", report.offenders().collect::<Vec<_>>());
    }
    let mut cfg = small(Architecture::Sshpool);
    cfg.attention_enabled = false;
    let model = Model::new(cfg, 1).unwrap();
    let report = gradcheck(&model, &g, DEFAULT_STEP, DEFAULT_TOLERANCE).unwrap();
    assert!(report.passed);
}

#[test]
fn ablation_leaves_attention_weights_without_gradient() {
    let g = two_triangles();
    let mut cfg = small(Architecture::Sshpool);
    cfg.attention_enabled = false;
    let model = Model::new(cfg, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pass = model.graph_pass(&g, true, None, &mut rng).unwrap();
    for id in model.attention_ids().unwrap() {
        assert!(pass.grads.get(id).is_none());
    }
}

#[test]
fn attention_toggle_only_changes_the_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let n = rng.gen_range(1..12);
        let g = random_graph(n, 0.4, 3, &mut rng);
        let on = Model::new(small(Architecture::Sshpool), 5).unwrap();
        let mut off = on.clone();
        off.config.attention_enabled = false;
        let (_, t_on) = on.predict(&g).unwrap();
        let (_, t_off) = off.predict(&g).unwrap();
        assert_eq!(t_on, t_off);
    }
}

#[test]
fn single_node_graph() {
    let g = Graph {
        adjacency: Tensor::zeros(1, 1),
        features: Tensor::from_rows(&[[1.0, 2.0, 3.0]]),
        label: 1,
    };
    for arch in [
        Architecture::Sshpool,
        Architecture::DiffPool,
        Architecture::GlobalSum,
        Architecture::GlobalMean,
    ] {
        let model = Model::new(ModelConfig { architecture: arch, ..ModelConfig::new(3, 4) }, 0).unwrap();
        let (logits, trace) = model.predict(&g).unwrap();
        assert_eq!(logits.shape(), (1, 4));
        assert!(logits.is_finite());
        if arch == Architecture::Sshpool {
            assert_eq!(trace.node_counts(), vec![1, 1, 1, 1]);
        }
    }
}

fn x0(model: &Model, g: &Graph) -> Tensor {
    let mut tape = Tape::new();
    let mut binder = Binder::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model
        .forward(&mut tape, &mut binder, g, ForwardOptions::default(), &mut rng)
        .unwrap();
    tape.value(out.initial).clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shape_contract(n in 1usize..16, p in 0.0f64..1.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(n, p, 3, &mut rng);
        let mut cfg = small(Architecture::Sshpool);
        cfg.num_classes = 3;
        let model = Model::new(cfg.clone(), seed).unwrap();
        let (logits, trace) = model.predict(&g).unwrap();
        prop_assert_eq!(logits.shape(), (1, 3));
        prop_assert!(logits.is_finite());
        let counts = trace.node_counts();
        prop_assert_eq!(counts.len(), cfg.layer_sizes.len() + 1);
        prop_assert_eq!(counts[0], n);
        prop_assert!(counts.windows(2).all(|w| w[1] <= w[0]));
        for (c, s) in counts[1..].iter().zip(&cfg.layer_sizes) {
            prop_assert!(c <= s);
        }
    }

    #[test]
    fn permutation_behaviour(n in 2usize..12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(n, 0.4, 3, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let h = g.permuted(&perm);
        let model = Model::new(small(Architecture::Sshpool), seed).unwrap();

        let a0 = x0(&model, &g);
        let b0 = x0(&model, &h);
        let expect = Tensor::from_fn(n, a0.cols(), |i, j| a0.get(perm[i], j));
        prop_assert!(b0.max_abs_diff(&expect) <= 1e-12);

        let mut rng0 = ChaCha8Rng::seed_from_u64(0);
        let pass = model.graph_pass(&g, false, None, &mut rng0).unwrap();
        let mut frozen = pass.assignments.clone();
        frozen[0] = (0..n).map(|i| pass.assignments[0][perm[i]]).collect();
        let (_, permuted_logits) = model.eval_pass(&h, Some(&frozen)).unwrap();
        prop_assert!(permuted_logits.max_abs_diff(&pass.logits) <= 1e-10);
    }
}
