use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sshpool::diagnostics::{
    certify_locality, certify_locality_with, compare_smoothing, smoothing_csv, StackedGcn,
};
use sshpool::graph::Graph;
use sshpool::model::{Model, ModelConfig, ModelError};
use sshpool::synthetic::{random_graph, two_triangles};
use sshpool::tensor::Tensor;

fn config(hidden: usize, sizes: Vec<usize>, ratio: f64) -> ModelConfig {
    let mut cfg = ModelConfig::new(3, 2);
    cfg.hidden_dim = hidden;
    cfg.mlp_hidden_dim = hidden;
    cfg.layer_sizes = sizes;
    cfg.assignment_ratio = ratio;
    cfg
}

#[test]
fn fixture_two_clusters_passes_100_trials() {
    let model = Model::new(config(6, vec![2, 1], 0.5), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let report = certify_locality(&two_triangles(), &model, 100, &mut rng).unwrap();
    assert!(report.passed(), "{report:?}");
    assert_eq!(report.passed_trials, 100);
}

#[test]
fn single_cluster_is_vacuous() {
    let model = Model::new(config(4, vec![1], 0.5), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    assert!(certify_locality(&two_triangles(), &model, 10, &mut rng).unwrap().passed());
}

#[test]
fn random_graphs_and_configs_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..40 {
        let n = rng.gen_range(1..=20);
        let g = random_graph(n, rng.gen_range(0.1..0.7), 3, &mut rng);
        let base = rng.gen_range(2..=10);
        let ratio = [0.5, 0.25][i % 2];
        let depth = rng.gen_range(1..=3);
        let Ok(sizes) = sshpool::model::layer_schedule(base, ratio, depth) else {
            continue;
        };
        let model = Model::new(config(rng.gen_range(2..=8), sizes, ratio), i as u64).unwrap();
        let report = certify_locality(&g, &model, 5, &mut rng).unwrap();
        assert!(report.passed(), "{report:?}");
    }
}

/// A broken layer that convolves over the whole graph before splitting, so
/// neighbours in other clusters leak into each slice.
fn leaky_probe(
    model: &Model,
    l: usize,
    a: &Tensor,
    x: &Tensor,
    clusters: &[usize],
) -> Result<(Vec<Tensor>, Tensor), ModelError> {
    let (_, local) = model.sshpool_layer_ids(l).unwrap();
    let n = a.rows();
    let c = model.config.layer_sizes[l].min(n);
    let a_tilde = Tensor::from_fn(n, n, |i, j| a.get(i, j) + f64::from(u8::from(i == j)));
    let mut zs = Vec::new();
    let mut x_next = Tensor::zeros(c, model.config.hidden_dim);
    for (j, &id) in local.iter().enumerate().take(c) {
        let full = a_tilde.matmul(&x.matmul(model.params.get(id))?)?;
        let rows: Vec<usize> = (0..n).filter(|&u| clusters[u] == j).collect();
        let z = Tensor::from_fn(rows.len(), full.cols(), |r, k| full.get(rows[r], k));
        for &u in &rows {
            for k in 0..full.cols() {
                x_next.set(j, k, x_next.get(j, k) + full.get(u, k));
            }
        }
        zs.push(z);
    }
    Ok((zs, x_next))
}

#[test]
fn leaky_layer_is_caught_and_located() {
    let g = two_triangles();
    // A model whose first layer cuts at least one edge, so leakage is possible.
    let model = (0..)
        .map(|seed| Model::new(config(6, vec![2, 1], 0.5), seed).unwrap())
        .find(|m| m.predict(&g).unwrap().1.layers[0].dropped_edges > 0)
        .unwrap();
    let clusters = model.graph_pass(&g, false, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().assignments;
    let probe = |l: usize, a: &Tensor, x: &Tensor, c: &[usize]| leaky_probe(&model, l, a, x, c);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let report = certify_locality_with(&g, &model, 100, &mut rng, &probe).unwrap();
    assert!(!report.passed());
    for v in &report.violations {
        assert_eq!(v.layer, 0);
        assert_ne!(v.slice, v.cluster);
        // The perturbed node has a neighbour in the slice that changed.
        let leaks = (0..6).any(|w| g.adjacency.get(v.node, w) != 0.0 && clusters[0][w] == v.slice);
        assert!(leaks, "{v:?}");
    }
}

#[test]
fn smoothing_comparison() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let graphs: Vec<Graph> = (0..20)
        .map(|_| {
            let n = rng.gen_range(4..=15);
            random_graph(n, 0.3, 3, &mut rng)
        })
        .collect();
    let model = Model::new(config(8, vec![8, 4, 2], 0.5), 1).unwrap();
    let gcn = StackedGcn::new(3, 8, 3, 1);
    let cmp = compare_smoothing(&graphs, &model, &gcn).unwrap();
    for p in [&cmp.model, &cmp.reference] {
        assert!(!p.layers.is_empty());
        for l in &p.layers {
            if let Some(c) = l.mean_cosine {
                assert!((-1.0..=1.0).contains(&c));
            }
        }
    }
    assert_eq!(cmp.reference.layers.len(), 4);
    let same = compare_smoothing(&graphs, &model, &model).unwrap();
    assert_eq!(same.model, same.reference);
    assert_eq!(smoothing_csv(&same.model), smoothing_csv(&same.reference));

    let single = Graph {
        adjacency: Tensor::zeros(1, 1),
        features: Tensor::filled(1, 3, 1.0),
        label: 0,
    };
    let empty = compare_smoothing(&[single.clone(), single], &model, &gcn).unwrap();
    assert!(empty.model.layers.is_empty());
    assert!(empty.reference.layers.is_empty());
}
