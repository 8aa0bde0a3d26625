//! Seeded synthetic graphs for tests, smoke runs and benchmarks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{degree_one_hot, Dataset, FeatureMode, Graph, MAX_DEGREE_BUCKET};
use crate::tensor::Tensor;

/// Six nodes, triangles `{0,1,2}` and `{3,4,5}` joined by the edge `2–3`.
/// Features are `[1, degree, node index / 5]`.
pub fn two_triangles() -> Graph {
    let edges = [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)];
    let mut a = Tensor::zeros(6, 6);
    for &(u, v) in &edges {
        a.set(u, v, 1.0);
        a.set(v, u, 1.0);
    }
    let deg: Vec<f64> = (0..6).map(|i| a.row(i).iter().sum()).collect();
    let x = Tensor::from_fn(6, 3, |i, j| match j {
        0 => 1.0,
        1 => deg[i],
        _ => i as f64 / 5.0,
    });
    Graph {
        adjacency: a,
        features: x,
        label: 0,
    }
}

/// Path `i – i+1` plus chords `i – i+2`: every consecutive triple is a triangle.
pub fn triangle_strip(n: usize) -> Vec<(usize, usize)> {
    let mut e: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
    e.extend((2..n).map(|i| (i - 2, i)));
    e
}

/// Uniform random recursive tree, which has no triangles.
pub fn random_tree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    (1..n).map(|i| (rng.gen_range(0..i), i)).collect()
}

/// Erdős–Rényi `G(n, p)` edge list.
pub fn gnp_edges<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                e.push((u, v));
            }
        }
    }
    e
}

fn adjacency_of(n: usize, edges: &[(usize, usize)]) -> Tensor {
    let mut a = Tensor::zeros(n, n);
    for &(u, v) in edges {
        a.set(u, v, 1.0);
        a.set(v, u, 1.0);
    }
    a
}

/// `G(n, p)` with features uniform in `[-1, 1]`.
pub fn random_graph<R: Rng + ?Sized>(n: usize, p: f64, feature_dim: usize, rng: &mut R) -> Graph {
    let edges = gnp_edges(n, p, rng);
    let features = Tensor::from_fn(n, feature_dim, |_, _| rng.gen_range(-1.0..=1.0));
    Graph {
        adjacency: adjacency_of(n, &edges),
        features,
        label: 0,
    }
}

/// `count` graphs alternating between triangle strips (class 0) and random
/// trees (class 1), 8 to 14 nodes each, degree one-hot features.
pub fn triangle_density_dataset(count: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graphs = (0..count)
        .map(|i| {
            let n = rng.gen_range(8..=14);
            let label = i % 2;
            let edges = if label == 0 {
                triangle_strip(n)
            } else {
                random_tree(n, &mut rng)
            };
            let adjacency = adjacency_of(n, &edges);
            Graph {
                features: degree_one_hot(&adjacency),
                adjacency,
                label,
            }
        })
        .collect();
    Dataset {
        name: "triangle-density".into(),
        graphs,
        num_classes: 2,
        feature_dim: MAX_DEGREE_BUCKET + 1,
        feature_mode: FeatureMode::DegreeOneHot,
    }
}

/// A noisy two-class protein-contact-like stand-in with three node labels.
///
/// Both classes are chains of secondary-structure segments with local
/// contacts and a few long-range contacts; class 1 graphs are larger on
/// average, denser, and richer in node label 2. The classes overlap, so the
/// task is learnable but not trivially separable.
pub fn protein_like_dataset(count: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..count).map(|i| usize::from(i % 5 >= 3)).collect();
    labels.shuffle(&mut rng);
    let graphs = labels
        .into_iter()
        .map(|label| {
            let (lo, hi, chord, long, rich) = if label == 0 {
                (8, 36, 0.35, 0.015, 0.2)
            } else {
                (12, 48, 0.45, 0.03, 0.35)
            };
            let n = rng.gen_range(lo..=hi);
            let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
            for i in 2..n {
                if rng.gen_bool(chord) {
                    edges.push((i - 2, i));
                }
            }
            for u in 0..n {
                for v in u + 3..n {
                    if rng.gen_bool(long) {
                        edges.push((u, v));
                    }
                }
            }
            let mut features = Tensor::zeros(n, 3);
            for i in 0..n {
                let r: f64 = rng.gen();
                let k = if r < rich {
                    2
                } else if r < 0.5 + rich / 2.0 {
                    1
                } else {
                    0
                };
                features.set(i, k, 1.0);
            }
            Graph {
                adjacency: adjacency_of(n, &edges),
                features,
                label,
            }
        })
        .collect();
    Dataset {
        name: "protein-like".into(),
        graphs,
        num_classes: 2,
        feature_dim: 3,
        feature_mode: FeatureMode::NodeLabelOneHot,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangles(g: &Graph) -> usize {
        let n = g.num_nodes();
        let a = &g.adjacency;
        let mut t = 0;
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    if a.get(i, j) * a.get(j, k) * a.get(i, k) != 0.0 {
                        t += 1;
                    }
                }
            }
        }
        t
    }

    #[test]
    fn fixture_shape() {
        let g = two_triangles();
        assert_eq!(g.num_nodes(), 6);
        assert_eq!(g.num_edges(), 7);
        assert_eq!(triangles(&g), 2);
    }

    #[test]
    fn triangle_classes_separate() {
        let ds = triangle_density_dataset(20, 3);
        ds.validate().unwrap();
        for g in &ds.graphs {
            let t = triangles(g);
            if g.label == 0 {
                assert_eq!(t, g.num_nodes() - 2);
            } else {
                assert_eq!(t, 0);
                assert_eq!(g.num_edges(), g.num_nodes() - 1);
            }
        }
    }

    #[test]
    fn protein_like_is_valid_and_seeded() {
        let a = protein_like_dataset(50, 9);
        a.validate().unwrap();
        assert_eq!(a, protein_like_dataset(50, 9));
        assert_eq!(a.labels().iter().filter(|&&l| l == 1).count(), 20);
    }
}
