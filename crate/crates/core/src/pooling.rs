//! Separated-subgraph hierarchical pooling.
//!
//! One pooling layer runs five steps:
//!
//! 1. soft assignment `S_soft = softmax(X · W_a)` (row-wise),
//! 2. hardening to a one-hot `S` at each row's argmax,
//! 3. splitting the graph into one induced subgraph per cluster, dropping
//!    every edge that crosses clusters,
//! 4. a local convolution `Z_j = (A_j + I) X_j W_j` inside each subgraph,
//!    with a weight matrix that belongs to cluster `j` alone,
//! 5. coarsening: cluster `j` becomes node `j` with feature `1ᵀ Z_j`, and the
//!    coarsened adjacency is `Sᵀ A S` with its diagonal cleared.
//!
//! The hard assignment is a constant on the tape: gradients reach the input
//! features and the local weights through `Z_j`, never through the argmax.
//! `W_a` therefore receives no gradient from the loss.
//!
//! Node information cannot cross a cluster boundary inside a layer, which is
//! what [`crate::diagnostics::certify_locality`] checks.

use serde::{Deserialize, Serialize};

use crate::tensor::{Result, Tape, Tensor, TensorError, Var};

/// Soft and hard assignment matrices of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentPair {
    pub soft: Tensor,
    pub hard: Tensor,
}

/// Induced subgraph of one cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct SubgraphSlice {
    pub cluster: usize,
    /// Original node indices, ascending.
    pub node_ids: Vec<usize>,
    pub sub_adjacency: Tensor,
    pub sub_features: Tensor,
}

impl SubgraphSlice {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    /// The compressed mapping vector: an all-ones column over the slice.
    pub fn mapping(&self) -> Tensor {
        Tensor::filled(self.len(), 1, 1.0)
    }

    pub fn num_edges(&self) -> usize {
        (self.sub_adjacency.sum() / 2.0).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace {
    pub input_nodes: usize,
    pub assignment: AssignmentPair,
    pub slices: Vec<SubgraphSlice>,
    pub local_embeddings: Vec<Tensor>,
    pub features: Tensor,
    pub adjacency: Tensor,
    /// Input edges whose endpoints fell into different clusters.
    pub dropped_edges: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CoarseningTrace {
    pub layers: Vec<LayerTrace>,
}

impl CoarseningTrace {
    /// Node count entering each layer followed by the final count.
    pub fn node_counts(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.layers.iter().map(|l| l.input_nodes).collect();
        if let Some(last) = self.layers.last() {
            out.push(last.features.rows());
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlobalPoolMode {
    Sum,
    Mean,
}

/// `row_softmax(X · W_a)`.
pub fn soft_assign(tape: &mut Tape<'_>, x: Var, w_assign: Var) -> Result<Var> {
    let logits = tape.matmul(x, w_assign)?;
    Ok(tape.row_softmax(logits))
}

/// One-hot at each row's maximum; ties go to the lowest column.
pub fn harden(soft: &Tensor) -> Tensor {
    hard_from_clusters(&argmax_rows(soft), soft.cols())
}

/// Column index of each row's maximum, lowest index on ties.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn hard_from_clusters(clusters: &[usize], c: usize) -> Tensor {
    let mut hard = Tensor::zeros(clusters.len(), c);
    for (i, &j) in clusters.iter().enumerate() {
        hard.set(i, j, 1.0);
    }
    hard
}

/// Cluster index of each row of a one-hot matrix.
pub fn clusters_of(hard: &Tensor) -> Vec<usize> {
    argmax_rows(hard)
}

/// Splits a graph into one induced subgraph per column of `hard`. Clusters
/// that receive no node yield empty slices.
pub fn extract_subgraphs(a: &Tensor, x: &Tensor, hard: &Tensor) -> Vec<SubgraphSlice> {
    let clusters = clusters_of(hard);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); hard.cols()];
    for (i, &j) in clusters.iter().enumerate() {
        members[j].push(i);
    }
    members
        .into_iter()
        .enumerate()
        .map(|(cluster, node_ids)| {
            let m = node_ids.len();
            let sub_adjacency =
                Tensor::from_fn(m, m, |p, q| a.get(node_ids[p], node_ids[q]));
            let sub_features = Tensor::from_fn(m, x.cols(), |p, k| x.get(node_ids[p], k));
            SubgraphSlice {
                cluster,
                node_ids,
                sub_adjacency,
                sub_features,
            }
        })
        .collect()
}

/// `Z_j = (A_j + I) X_j W_j`, no normalisation and no activation. `x` is the
/// full feature matrix of the layer; the slice's rows are gathered from it so
/// gradients flow back to the layer input. An empty slice gives a `0×d`
/// embedding.
pub fn local_conv(tape: &mut Tape<'_>, slice: &SubgraphSlice, x: Var, w: Var) -> Result<Var> {
    let m = slice.len();
    let mut a_tilde = slice.sub_adjacency.clone();
    for i in 0..m {
        a_tilde.set(i, i, a_tilde.get(i, i) + 1.0);
    }
    let a_tilde = tape.constant(a_tilde);
    let x_j = tape.gather_rows(x, &slice.node_ids)?;
    let xw = tape.matmul(x_j, w)?;
    tape.matmul(a_tilde, xw)
}

/// Builds the coarsened graph: row `j` of the features is the column sum of
/// `Z_j` (zero for an empty cluster) and the adjacency is `Sᵀ A S`, diagonal
/// cleared unless `keep_self_loops`.
pub fn coarsen(
    tape: &mut Tape<'_>,
    slices: &[SubgraphSlice],
    z: &[Var],
    hard: &Tensor,
    a: &Tensor,
    keep_self_loops: bool,
) -> Result<(Var, Tensor)> {
    if slices.len() != z.len() || hard.cols() != z.len() {
        return Err(TensorError::Contract(format!(
            "coarsen got {} slices, {} embeddings and {} clusters",
            slices.len(),
            z.len(),
            hard.cols()
        )));
    }
    for (s, &zj) in slices.iter().zip(z) {
        if tape.shape(zj).0 != s.len() {
            return Err(TensorError::Shape {
                op: "coarsen",
                left: (s.len(), 0),
                right: tape.shape(zj),
            });
        }
    }
    let rows: Vec<Var> = z.iter().map(|&zj| tape.sum_rows(zj)).collect();
    let x_next = tape.concat_rows(&rows)?;
    let mut a_next = hard.transpose().matmul(a)?.matmul(hard)?;
    if !keep_self_loops {
        for j in 0..a_next.rows() {
            a_next.set(j, j, 0.0);
        }
    }
    Ok((x_next, a_next))
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LayerOptions<'f> {
    /// Cluster index per input node, replacing the argmax assignment.
    pub frozen: Option<&'f [usize]>,
    pub keep_self_loops: bool,
    pub record: bool,
}

#[derive(Debug)]
pub struct LayerOutput {
    pub features: Var,
    pub adjacency: Tensor,
    /// Cluster index per input node.
    pub clusters: Vec<usize>,
    pub trace: Option<LayerTrace>,
}

/// One pooling layer over `(a, x)` into at most `clusters` coarsened nodes.
/// The effective cluster count is `min(clusters, n)`; `w_local` must hold at
/// least that many weights, and `w_assign` at least that many columns.
pub fn sshpool_layer(
    tape: &mut Tape<'_>,
    a: &Tensor,
    x: Var,
    w_assign: Var,
    w_local: &[Var],
    clusters: usize,
    opts: LayerOptions<'_>,
) -> Result<LayerOutput> {
    let n = tape.shape(x).0;
    if clusters == 0 {
        return Err(TensorError::Contract("cluster count must be at least 1".into()));
    }
    if a.shape() != (n, n) {
        return Err(TensorError::Shape {
            op: "sshpool_layer",
            left: a.shape(),
            right: tape.shape(x),
        });
    }
    let c = clusters.min(n);
    if w_local.len() < c {
        return Err(TensorError::Contract(format!(
            "{} local weights for {c} clusters",
            w_local.len()
        )));
    }
    let w_a = tape.slice_cols(w_assign, c)?;
    let soft = soft_assign(tape, x, w_a)?;
    let assignment = match opts.frozen {
        Some(f) => {
            if f.len() != n || f.iter().any(|&j| j >= c) {
                return Err(TensorError::Contract(format!(
                    "frozen assignment of length {} does not fit {n} nodes and {c} clusters",
                    f.len()
                )));
            }
            f.to_vec()
        }
        None => argmax_rows(tape.value(soft)),
    };
    let hard = hard_from_clusters(&assignment, c);
    let slices = extract_subgraphs(a, tape.value(x), &hard);
    let z = slices
        .iter()
        .zip(w_local)
        .map(|(s, &w)| local_conv(tape, s, x, w))
        .collect::<Result<Vec<Var>>>()?;
    let (x_next, a_next) = coarsen(tape, &slices, &z, &hard, a, opts.keep_self_loops)?;

    let trace = opts.record.then(|| {
        let intra: usize = slices.iter().map(SubgraphSlice::num_edges).sum();
        let total = (a.sum() / 2.0).round() as usize;
        LayerTrace {
            input_nodes: n,
            assignment: AssignmentPair {
                soft: tape.value(soft).clone(),
                hard,
            },
            local_embeddings: z.iter().map(|&v| tape.value(v).clone()).collect(),
            slices,
            features: tape.value(x_next).clone(),
            adjacency: a_next.clone(),
            dropped_edges: total - intra,
        }
    });
    Ok(LayerOutput {
        features: x_next,
        adjacency: a_next,
        clusters: assignment,
        trace,
    })
}

/// Weights of one pooling layer as bound on a tape.
#[derive(Clone, Debug)]
pub struct LayerVars {
    pub assign: Var,
    pub local: Vec<Var>,
}

#[derive(Debug)]
pub struct StackOutput {
    pub features: Var,
    pub adjacency: Tensor,
    /// Cluster index per node, for each layer.
    pub assignments: Vec<Vec<usize>>,
    pub trace: Option<CoarseningTrace>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct StackOptions<'f> {
    pub frozen: Option<&'f [Vec<usize>]>,
    pub keep_self_loops: bool,
    pub record: bool,
}

/// Applies `layer_sizes.len()` pooling layers in sequence.
pub fn sshpool_stack(
    tape: &mut Tape<'_>,
    a: &Tensor,
    x: Var,
    layers: &[LayerVars],
    layer_sizes: &[usize],
    opts: StackOptions<'_>,
) -> Result<StackOutput> {
    if layer_sizes.is_empty() || layers.len() != layer_sizes.len() {
        return Err(TensorError::Contract(format!(
            "{} layer weight sets for {} layer sizes",
            layers.len(),
            layer_sizes.len()
        )));
    }
    if layer_sizes.windows(2).any(|w| w[1] >= w[0]) {
        return Err(TensorError::Contract(format!(
            "layer sizes {layer_sizes:?} are not strictly decreasing"
        )));
    }
    if let Some(f) = opts.frozen {
        if f.len() != layer_sizes.len() {
            return Err(TensorError::Contract(format!(
                "{} frozen assignments for {} layers",
                f.len(),
                layer_sizes.len()
            )));
        }
    }
    let mut a_cur = a.clone();
    let mut x_cur = x;
    let mut assignments = Vec::with_capacity(layers.len());
    let mut trace = opts.record.then(CoarseningTrace::default);
    for (l, (vars, &size)) in layers.iter().zip(layer_sizes).enumerate() {
        let out = sshpool_layer(
            tape,
            &a_cur,
            x_cur,
            vars.assign,
            &vars.local,
            size,
            LayerOptions {
                frozen: opts.frozen.map(|f| f[l].as_slice()),
                keep_self_loops: opts.keep_self_loops,
                record: opts.record,
            },
        )?;
        if let (Some(t), Some(entry)) = (trace.as_mut(), out.trace) {
            t.layers.push(entry);
        }
        assignments.push(out.clusters);
        a_cur = out.adjacency;
        x_cur = out.features;
    }
    Ok(StackOutput {
        features: x_cur,
        adjacency: a_cur,
        assignments,
        trace,
    })
}

/// Column sum or column mean over all nodes: `1×d`.
pub fn baseline_global_pool(tape: &mut Tape<'_>, x: Var, mode: GlobalPoolMode) -> Var {
    match mode {
        GlobalPoolMode::Sum => tape.sum_rows(x),
        GlobalPoolMode::Mean => tape.mean_rows(x),
    }
}

/// Soft-assignment coarsening used as a comparison baseline:
/// `S = softmax(X W_a)`, `X' = Sᵀ (A + I) X W_e`, `A' = Sᵀ A S`.
/// Returns `(A', X')`; both stay on the tape because `S` is differentiable.
pub fn baseline_diffpool_layer(
    tape: &mut Tape<'_>,
    a: Var,
    x: Var,
    w_assign: Var,
    w_embed: Var,
) -> Result<(Var, Var)> {
    let (n, m) = tape.shape(a);
    if n != m || n != tape.shape(x).0 {
        return Err(TensorError::Shape {
            op: "baseline_diffpool_layer",
            left: (n, m),
            right: tape.shape(x),
        });
    }
    let s = soft_assign(tape, x, w_assign)?;
    let st = tape.transpose(s);
    let eye = tape.constant(Tensor::identity(n));
    let a_tilde = tape.add(a, eye)?;
    let xw = tape.matmul(x, w_embed)?;
    let h = tape.matmul(a_tilde, xw)?;
    let x_next = tape.matmul(st, h)?;
    let as_ = tape.matmul(a, s)?;
    let a_next = tape.matmul(st, as_)?;
    Ok((a_next, x_next))
}
