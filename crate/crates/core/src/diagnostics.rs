//! Probes for over-smoothing and for the separation property of pooling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::graph::Graph;
use crate::model::{normalized_adjacency, Architecture, ForwardOptions, Model, ModelError};
use crate::params::{glorot, Binder};
use crate::pooling::{sshpool_layer, LayerOptions};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmoothingLayer {
    pub layer: usize,
    /// Mean pairwise cosine similarity; `None` when every pair was skipped.
    pub mean_cosine: Option<f64>,
    pub nodes: usize,
    pub pairs: usize,
    pub skipped_pairs: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SmoothingProfile {
    pub layers: Vec<SmoothingLayer>,
}

#[derive(Clone, Copy, Default)]
struct Acc {
    sum: f64,
    nodes: usize,
    pairs: usize,
    skipped: usize,
}

fn accumulate_layer(acc: &mut Acc, x: &Tensor) {
    let n = x.rows();
    // Squared norms; `sqrt(s * s) == s` keeps identical rows at exactly 1.
    let sq: Vec<f64> = (0..n)
        .map(|i| x.row(i).iter().map(|v| v * v).sum::<f64>())
        .collect();
    acc.nodes += n;
    for i in 0..n {
        for j in i + 1..n {
            if sq[i] == 0.0 || sq[j] == 0.0 {
                acc.skipped += 1;
                continue;
            }
            let dot: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| a * b).sum();
            acc.sum += (dot / (sq[i] * sq[j]).sqrt()).clamp(-1.0, 1.0);
            acc.pairs += 1;
        }
    }
}

fn finish(accs: Vec<Option<Acc>>) -> SmoothingProfile {
    SmoothingProfile {
        layers: accs
            .into_iter()
            .enumerate()
            .filter_map(|(layer, a)| {
                let a = a?;
                Some(SmoothingLayer {
                    layer,
                    mean_cosine: (a.pairs > 0).then(|| a.sum / a.pairs as f64),
                    nodes: a.nodes,
                    pairs: a.pairs,
                    skipped_pairs: a.skipped,
                })
            })
            .collect(),
    }
}

/// Mean cosine similarity over all unordered row pairs, per layer. Layers
/// with fewer than two rows are left out; pairs with a zero-norm row are
/// skipped and counted.
pub fn smoothing_profile(embeddings: &[Tensor]) -> SmoothingProfile {
    smoothing_profile_many(std::slice::from_ref(&embeddings.to_vec()))
}

/// Pools pairs across several graphs: layer `l` averages every valid pair
/// of every graph's `l`-th embedding.
pub fn smoothing_profile_many(sequences: &[Vec<Tensor>]) -> SmoothingProfile {
    let depth = sequences.iter().map(Vec::len).max().unwrap_or(0);
    let mut accs: Vec<Option<Acc>> = vec![None; depth];
    for seq in sequences {
        for (l, x) in seq.iter().enumerate() {
            if x.rows() >= 2 {
                accumulate_layer(accs[l].get_or_insert_with(Acc::default), x);
            }
        }
    }
    finish(accs)
}

pub fn smoothing_csv(profile: &SmoothingProfile) -> String {
    let mut out = String::from("layer,mean_cosine,nodes,skipped_pairs\n");
    for l in &profile.layers {
        let c = l.mean_cosine.map(|c| c.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", l.layer, c, l.nodes, l.skipped_pairs));
    }
    out
}

/// Something that maps a graph to a sequence of node-embedding matrices,
/// one per depth.
pub trait EmbeddingSequence {
    fn embeddings(&self, graph: &Graph) -> Result<Vec<Tensor>, ModelError>;
}

impl EmbeddingSequence for Model {
    fn embeddings(&self, graph: &Graph) -> Result<Vec<Tensor>, ModelError> {
        self.layer_embeddings(graph)
    }
}

/// Plain stack of normalised graph convolutions with ReLU, the usual
/// over-smoothing reference.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedGcn {
    pub weights: Vec<Tensor>,
}

impl StackedGcn {
    /// `depth + 1` layers so that its sequence is as long as that of a
    /// pooling model with `depth` pooling layers.
    pub fn new(in_dim: usize, hidden: usize, depth: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..=depth)
            .map(|l| glorot(if l == 0 { in_dim } else { hidden }, hidden, &mut rng))
            .collect();
        Self { weights }
    }
}

impl EmbeddingSequence for StackedGcn {
    fn embeddings(&self, graph: &Graph) -> Result<Vec<Tensor>, ModelError> {
        let a_hat = normalized_adjacency(&graph.adjacency);
        let mut h = graph.features.clone();
        let mut out = Vec::with_capacity(self.weights.len());
        for w in &self.weights {
            let mut z = a_hat.matmul(&h.matmul(w)?)?;
            z.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            out.push(z.clone());
            h = z;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmoothingComparison {
    pub model: SmoothingProfile,
    pub reference: SmoothingProfile,
}

pub fn compare_smoothing(
    graphs: &[Graph],
    model: &dyn EmbeddingSequence,
    reference: &dyn EmbeddingSequence,
) -> Result<SmoothingComparison, ModelError> {
    let collect = |m: &dyn EmbeddingSequence| -> Result<SmoothingProfile, ModelError> {
        let seqs = graphs
            .iter()
            .map(|g| m.embeddings(g))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(smoothing_profile_many(&seqs))
    };
    Ok(SmoothingComparison {
        model: collect(model)?,
        reference: collect(reference)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub trial: usize,
    pub layer: usize,
    pub node: usize,
    pub cluster: usize,
    /// Foreign slice (or coarsened row) that changed.
    pub slice: usize,
    pub kind: &'static str,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LocalityReport {
    pub trials: usize,
    pub passed_trials: usize,
    pub violations: Vec<Violation>,
}

impl LocalityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.passed_trials == self.trials
    }

    pub fn merge(&mut self, other: LocalityReport) {
        let offset = self.trials;
        self.trials += other.trials;
        self.passed_trials += other.passed_trials;
        self.violations.extend(other.violations.into_iter().map(|mut v| {
            v.trial += offset;
            v
        }));
    }
}

/// Per-slice local embeddings and coarsened features of one layer given its
/// input `(a, x)` and a fixed cluster per node.
pub type LayerProbe<'m> =
    dyn Fn(usize, &Tensor, &Tensor, &[usize]) -> Result<(Vec<Tensor>, Tensor), ModelError> + 'm;

/// Runs pooling layer `l` of `model` with a frozen assignment.
pub fn model_layer_probe(
    model: &Model,
    l: usize,
    a: &Tensor,
    x: &Tensor,
    clusters: &[usize],
) -> Result<(Vec<Tensor>, Tensor), ModelError> {
    let (assign, local) = model
        .sshpool_layer_ids(l)
        .ok_or_else(|| ModelError::Config(format!("model has no pooling layer {l}")))?;
    let mut tape = Tape::new();
    let mut binder = Binder::new(&model.params);
    let xv = tape.constant_ref(x);
    let wa = binder.bind(&mut tape, assign);
    let wl: Vec<_> = local.iter().map(|&id| binder.bind(&mut tape, id)).collect();
    let out = sshpool_layer(
        &mut tape,
        a,
        xv,
        wa,
        &wl,
        model.config.layer_sizes[l],
        LayerOptions {
            frozen: Some(clusters),
            keep_self_loops: model.config.keep_coarsened_self_loops,
            record: true,
        },
    )?;
    let trace = out.trace.expect("recorded");
    Ok((trace.local_embeddings, trace.features))
}

fn bit_equal(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Perturbs one node's features at a random pooling layer and checks that
/// every foreign slice embedding and every other coarsened row is
/// bit-identical, with the assignment frozen at its unperturbed value.
pub fn certify_locality<R: Rng + ?Sized>(
    graph: &Graph,
    model: &Model,
    trials: usize,
    rng: &mut R,
) -> Result<LocalityReport, ModelError> {
    certify_locality_with(graph, model, trials, rng, &|l, a, x, c| {
        model_layer_probe(model, l, a, x, c)
    })
}

/// [`certify_locality`] with a substitute layer implementation.
pub fn certify_locality_with<R: Rng + ?Sized>(
    graph: &Graph,
    model: &Model,
    trials: usize,
    rng: &mut R,
    probe: &LayerProbe<'_>,
) -> Result<LocalityReport, ModelError> {
    if model.config.architecture != Architecture::Sshpool {
        return Err(ModelError::Config("locality applies to the pooling model only".into()));
    }
    if trials == 0 {
        return Err(ModelError::Config("trials must be at least 1".into()));
    }
    let mut tape = Tape::new();
    let mut binder = Binder::new(&model.params);
    let mut dummy = ChaCha8Rng::seed_from_u64(0);
    let out = model.forward(
        &mut tape,
        &mut binder,
        graph,
        ForwardOptions {
            training: false,
            frozen: None,
            record: true,
        },
        &mut dummy,
    )?;
    let trace = out.trace.expect("recorded");
    let mut inputs = vec![(graph.adjacency.clone(), tape.value(out.initial).clone())];
    for t in &trace.layers {
        inputs.push((t.adjacency.clone(), t.features.clone()));
    }

    let mut report = LocalityReport {
        trials,
        ..Default::default()
    };
    for trial in 0..trials {
        let layer = rng.gen_range(0..trace.layers.len());
        let (a, x) = &inputs[layer];
        let clusters = &out.assignments[layer];
        let node = rng.gen_range(0..x.rows());
        let mut perturbed = x.clone();
        for v in perturbed.row_mut(node) {
            *v += rng.gen_range(0.5..=1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        }
        let (z0, x0) = probe(layer, a, x, clusters)?;
        let (z1, x1) = probe(layer, a, &perturbed, clusters)?;
        let home = clusters[node];
        let mut ok = true;
        for (k, (p, q)) in z0.iter().zip(&z1).enumerate() {
            if k != home && !bit_equal(p, q) {
                ok = false;
                report.violations.push(Violation {
                    trial,
                    layer,
                    node,
                    cluster: home,
                    slice: k,
                    kind: "local",
                });
            }
        }
        for v in 0..x0.rows().min(x1.rows()) {
            let same = x0.row(v).iter().zip(x1.row(v)).all(|(p, q)| p.to_bits() == q.to_bits());
            if v != home && !same {
                ok = false;
                report.violations.push(Violation {
                    trial,
                    layer,
                    node,
                    cluster: home,
                    slice: v,
                    kind: "coarsened",
                });
            }
        }
        if z0.len() != z1.len() || x0.shape() != x1.shape() {
            ok = false;
        }
        report.passed_trials += usize::from(ok);
    }
    Ok(report)
}
