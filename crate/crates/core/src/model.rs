//! End-to-end graph classifier.
//!
//! Pipeline: one (configurable) normalised global graph convolution, then the
//! pooling stack, then an attention layer in which the pooled nodes query the
//! initial node embedding, then a mean readout and a two-layer MLP. Two
//! baselines share the convolution and the head: global sum/mean pooling and a
//! soft-assignment pooling stack.
//!
//! Parameter enumeration order, used by the optimizer and by checkpoints:
//!
//! 1. `global_conv.{i}.weight` for each global convolution layer
//! 2. per pooling layer `l`: `sshpool.{l}.assign` then `sshpool.{l}.local.{j}`
//!    for every cluster `j` (or `diffpool.{l}.assign`, `diffpool.{l}.embed`)
//! 3. `attention.query`, `attention.key`, `attention.value` (pooling model only)
//! 4. `mlp.hidden.weight`, `mlp.hidden.bias`, `mlp.out.weight`, `mlp.out.bias`

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;
use crate::params::{glorot, Binder, Gradients, ParamId, ParamStore};
use crate::pooling::{
    baseline_diffpool_layer, baseline_global_pool, sshpool_stack, CoarseningTrace,
    GlobalPoolMode, LayerVars, StackOptions,
};
use crate::tensor::{Tape, Tensor, TensorError, Var};

pub const CHECKPOINT_VERSION: &str = "sshpool-ckpt-v1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Sshpool,
    GlobalSum,
    GlobalMean,
    DiffPool,
}

impl Architecture {
    pub fn uses_layers(self) -> bool {
        matches!(self, Architecture::Sshpool | Architecture::DiffPool)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub feature_dim_in: usize,
    pub hidden_dim: usize,
    pub layer_sizes: Vec<usize>,
    pub assignment_ratio: f64,
    pub dropout: f64,
    pub num_classes: usize,
    pub attention_enabled: bool,
    pub global_conv_layers: usize,
    pub mlp_hidden_dim: usize,
    pub keep_coarsened_self_loops: bool,
}

impl ModelConfig {
    /// Defaults: hidden 128, layers {128, 32, 8} at ratio 0.25, dropout 0.5,
    /// attention on, one global convolution, MLP hidden width 128.
    pub fn new(feature_dim_in: usize, num_classes: usize) -> Self {
        Self {
            architecture: Architecture::Sshpool,
            feature_dim_in,
            hidden_dim: 128,
            layer_sizes: vec![128, 32, 8],
            assignment_ratio: 0.25,
            dropout: 0.5,
            num_classes,
            attention_enabled: true,
            global_conv_layers: 1,
            mlp_hidden_dim: 128,
            keep_coarsened_self_loops: false,
        }
    }

    pub fn depth(&self) -> usize {
        self.layer_sizes.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.feature_dim_in == 0 || self.hidden_dim == 0 || self.mlp_hidden_dim == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.num_classes == 0 {
            return bad("num_classes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.global_conv_layers == 0 {
            return bad("at least one global convolution layer is required".into());
        }
        if self.architecture.uses_layers() {
            if self.layer_sizes.is_empty() {
                return bad("layer_sizes must not be empty".into());
            }
            if self.layer_sizes.contains(&0) {
                return bad(format!("layer sizes {:?} contain 0", self.layer_sizes));
            }
            if self.layer_sizes.windows(2).any(|w| w[1] >= w[0]) {
                return bad(format!(
                    "layer sizes {:?} are not strictly decreasing",
                    self.layer_sizes
                ));
            }
            for w in self.layer_sizes.windows(2) {
                let expect = (self.assignment_ratio * w[0] as f64).round() as usize;
                if w[1] != expect {
                    return bad(format!(
                        "layer sizes {:?} do not follow ratio {}",
                        self.layer_sizes, self.assignment_ratio
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Geometric layer-size schedule `base, round(ratio·base), ...` of length
/// `depth`. A size that rounds to 0 or fails to shrink is a config error.
pub fn layer_schedule(base: usize, ratio: f64, depth: usize) -> Result<Vec<usize>, ModelError> {
    if depth == 0 || base == 0 {
        return Err(ModelError::Config("depth and base size must be positive".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(ModelError::Config(format!("ratio {ratio} outside (0, 1)")));
    }
    let mut sizes = vec![base];
    while sizes.len() < depth {
        let prev = *sizes.last().unwrap();
        let next = (ratio * prev as f64).round() as usize;
        if next == 0 || next >= prev {
            return Err(ModelError::Config(format!(
                "ratio {ratio} from base {base} degenerates at layer {} (size {next})",
                sizes.len() + 1
            )));
        }
        sizes.push(next);
    }
    Ok(sizes)
}

#[derive(Clone, Debug, PartialEq)]
enum PoolIds {
    Ssh { assign: ParamId, local: Vec<ParamId> },
    Diff { assign: ParamId, embed: ParamId },
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    global: Vec<ParamId>,
    pool: Vec<PoolIds>,
    attention: Option<[ParamId; 3]>,
    mlp: [ParamId; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    layout: Layout,
}

/// Training-mode switch plus optional frozen assignments and trace capture.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions<'f> {
    pub training: bool,
    pub frozen: Option<&'f [Vec<usize>]>,
    pub record: bool,
}

#[derive(Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    /// Initial node embedding from the global convolution.
    pub initial: Var,
    /// Output of the pooling stage (before attention).
    pub pooled: Var,
    pub assignments: Vec<Vec<usize>>,
    pub trace: Option<CoarseningTrace>,
}

/// Loss, gradients and logits of one graph.
#[derive(Clone, Debug)]
pub struct GraphPass {
    pub loss: f64,
    pub logits: Tensor,
    pub grads: Gradients,
    pub assignments: Vec<Vec<usize>>,
}

impl Model {
    /// Glorot-initialised weights and zero biases from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let d = config.hidden_dim;

        let mut global = Vec::new();
        for i in 0..config.global_conv_layers {
            let fan_in = if i == 0 { config.feature_dim_in } else { d };
            global.push(params.push(format!("global_conv.{i}.weight"), glorot(fan_in, d, &mut rng)));
        }

        let mut pool = Vec::new();
        match config.architecture {
            Architecture::Sshpool => {
                for (l, &c) in config.layer_sizes.iter().enumerate() {
                    let assign = params.push(format!("sshpool.{l}.assign"), glorot(d, c, &mut rng));
                    let local = (0..c)
                        .map(|j| params.push(format!("sshpool.{l}.local.{j}"), glorot(d, d, &mut rng)))
                        .collect();
                    pool.push(PoolIds::Ssh { assign, local });
                }
            }
            Architecture::DiffPool => {
                for (l, &c) in config.layer_sizes.iter().enumerate() {
                    let assign = params.push(format!("diffpool.{l}.assign"), glorot(d, c, &mut rng));
                    let embed = params.push(format!("diffpool.{l}.embed"), glorot(d, d, &mut rng));
                    pool.push(PoolIds::Diff { assign, embed });
                }
            }
            Architecture::GlobalSum | Architecture::GlobalMean => {}
        }

        let attention = (config.architecture == Architecture::Sshpool).then(|| {
            let mut next = |name: &str| params.push(name, glorot(d, d, &mut rng));
            [
                next("attention.query"),
                next("attention.key"),
                next("attention.value"),
            ]
        });

        let h = config.mlp_hidden_dim;
        let mlp = [
            params.push("mlp.hidden.weight", glorot(d, h, &mut rng)),
            params.push("mlp.hidden.bias", Tensor::zeros(1, h)),
            params.push("mlp.out.weight", glorot(h, config.num_classes, &mut rng)),
            params.push("mlp.out.bias", Tensor::zeros(1, config.num_classes)),
        ];

        Ok(Self {
            config,
            params,
            layout: Layout {
                global,
                pool,
                attention,
                mlp,
            },
        })
    }

    /// Ids of the attention matrices `(query, key, value)`, if present.
    pub fn attention_ids(&self) -> Option<[ParamId; 3]> {
        self.layout.attention
    }

    /// Assignment and local weight ids of pooling layer `l`.
    pub fn sshpool_layer_ids(&self, l: usize) -> Option<(ParamId, &[ParamId])> {
        match self.layout.pool.get(l)? {
            PoolIds::Ssh { assign, local } => Some((*assign, local.as_slice())),
            PoolIds::Diff { .. } => None,
        }
    }

    /// Records the forward pass of `graph` on `tape`.
    pub fn forward<'a, R: Rng + ?Sized>(
        &'a self,
        tape: &mut Tape<'a>,
        binder: &mut Binder<'a>,
        graph: &'a Graph,
        opts: ForwardOptions<'_>,
        rng: &mut R,
    ) -> Result<ForwardOutput, ModelError> {
        let cfg = &self.config;
        if graph.features.cols() != cfg.feature_dim_in {
            return Err(ModelError::Config(format!(
                "graph has {} feature columns, model expects {}",
                graph.features.cols(),
                cfg.feature_dim_in
            )));
        }
        let n = graph.num_nodes();
        if n == 0 {
            return Err(ModelError::Config("graph has no nodes".into()));
        }

        let a_hat = tape.constant(normalized_adjacency(&graph.adjacency));
        let mut x = tape.constant_ref(&graph.features);
        for &id in &self.layout.global {
            let w = binder.bind(tape, id);
            x = global_conv_with(tape, a_hat, x, w)?;
        }
        let initial = x;

        let mut assignments = Vec::new();
        let mut trace = None;
        let pooled = match cfg.architecture {
            Architecture::GlobalSum => baseline_global_pool(tape, initial, GlobalPoolMode::Sum),
            Architecture::GlobalMean => baseline_global_pool(tape, initial, GlobalPoolMode::Mean),
            Architecture::Sshpool => {
                let layers: Vec<LayerVars> = self
                    .layout
                    .pool
                    .iter()
                    .map(|p| match p {
                        PoolIds::Ssh { assign, local } => LayerVars {
                            assign: binder.bind(tape, *assign),
                            local: local.iter().map(|&id| binder.bind(tape, id)).collect(),
                        },
                        PoolIds::Diff { .. } => unreachable!("layout matches architecture"),
                    })
                    .collect();
                let out = sshpool_stack(
                    tape,
                    &graph.adjacency,
                    initial,
                    &layers,
                    &cfg.layer_sizes,
                    StackOptions {
                        frozen: opts.frozen,
                        keep_self_loops: cfg.keep_coarsened_self_loops,
                        record: opts.record,
                    },
                )?;
                assignments = out.assignments;
                trace = out.trace;
                out.features
            }
            Architecture::DiffPool => {
                let mut a = tape.constant_ref(&graph.adjacency);
                let mut h = initial;
                for (p, &size) in self.layout.pool.iter().zip(&cfg.layer_sizes) {
                    let PoolIds::Diff { assign, embed } = p else {
                        unreachable!("layout matches architecture")
                    };
                    let c = size.min(tape.shape(h).0);
                    let wa = binder.bind(tape, *assign);
                    let wa = tape.slice_cols(wa, c)?;
                    let we = binder.bind(tape, *embed);
                    (a, h) = baseline_diffpool_layer(tape, a, h, wa, we)?;
                }
                h
            }
        };

        let fused = match self.layout.attention {
            Some([q, k, v]) if cfg.attention_enabled => {
                let (wq, wk, wv) = (binder.bind(tape, q), binder.bind(tape, k), binder.bind(tape, v));
                attention_fuse(tape, initial, pooled, wq, wk, wv)?
            }
            _ => pooled,
        };

        let [w1, b1, w2, b2] = self.layout.mlp.map(|id| binder.bind(tape, id));
        let logits = classify(
            tape,
            fused,
            MlpVars { w1, b1, w2, b2 },
            cfg.dropout,
            opts.training,
            rng,
        )?;
        Ok(ForwardOutput {
            logits,
            initial,
            pooled,
            assignments,
            trace,
        })
    }

    /// Forward + backward on one graph.
    pub fn graph_pass<R: Rng + ?Sized>(
        &self,
        graph: &Graph,
        training: bool,
        frozen: Option<&[Vec<usize>]>,
        rng: &mut R,
    ) -> Result<GraphPass, ModelError> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(&self.params);
        let out = self.forward(
            &mut tape,
            &mut binder,
            graph,
            ForwardOptions {
                training,
                frozen,
                record: false,
            },
            rng,
        )?;
        let loss = tape.cross_entropy(out.logits, graph.label)?;
        tape.backward(loss)?;
        Ok(GraphPass {
            loss: tape.value(loss).get(0, 0),
            logits: tape.value(out.logits).clone(),
            grads: binder.gradients(&mut tape),
            assignments: out.assignments,
        })
    }

    /// Evaluation-mode loss, optionally with frozen assignments.
    pub fn loss_value(&self, graph: &Graph, frozen: Option<&[Vec<usize>]>) -> Result<f64, ModelError> {
        Ok(self.eval_pass(graph, frozen)?.0)
    }

    /// Evaluation-mode loss and logits.
    pub fn eval_pass(
        &self,
        graph: &Graph,
        frozen: Option<&[Vec<usize>]>,
    ) -> Result<(f64, Tensor), ModelError> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(&self.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(
            &mut tape,
            &mut binder,
            graph,
            ForwardOptions {
                training: false,
                frozen,
                record: false,
            },
            &mut rng,
        )?;
        let loss = tape.cross_entropy(out.logits, graph.label)?;
        Ok((tape.value(loss).get(0, 0), tape.value(out.logits).clone()))
    }

    /// Evaluation-mode logits and trace.
    pub fn predict(&self, graph: &Graph) -> Result<(Tensor, CoarseningTrace), ModelError> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(&self.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(
            &mut tape,
            &mut binder,
            graph,
            ForwardOptions {
                training: false,
                frozen: None,
                record: true,
            },
            &mut rng,
        )?;
        Ok((tape.value(out.logits).clone(), out.trace.unwrap_or_default()))
    }

    /// Initial embedding followed by each pooled feature matrix.
    pub fn layer_embeddings(&self, graph: &Graph) -> Result<Vec<Tensor>, ModelError> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(&self.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(
            &mut tape,
            &mut binder,
            graph,
            ForwardOptions {
                training: false,
                frozen: None,
                record: true,
            },
            &mut rng,
        )?;
        let mut seq = vec![tape.value(out.initial).clone()];
        if let Some(trace) = out.trace {
            seq.extend(trace.layers.into_iter().map(|l| l.features));
        } else if out.pooled != out.initial {
            seq.push(tape.value(out.pooled).clone());
        }
        Ok(seq)
    }

    /// Writes the `sshpool-ckpt-v1` binary checkpoint: a magic line, a
    /// little-endian `u64` header length, a JSON header with the config and
    /// parameter names and shapes, then every parameter as row-major
    /// little-endian `f64` in enumeration order.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let err = |message: String| ModelError::Checkpoint {
            path: path.display().to_string(),
            message,
        };
        let header = CheckpointHeader {
            version: CHECKPOINT_VERSION.to_string(),
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|(_, name, t)| ParamEntry {
                    name: name.to_string(),
                    rows: t.rows(),
                    cols: t.cols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| err(e.to_string()))?;
        let mut buf = Vec::with_capacity(32 + json.len() + 8 * self.params.num_scalars());
        buf.extend_from_slice(CHECKPOINT_VERSION.as_bytes());
        buf.push(b'\n');
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for (_, _, t) in self.params.iter() {
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = fs::File::create(path).map_err(|e| err(e.to_string()))?;
        f.write_all(&buf).map_err(|e| err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let err = |message: String| ModelError::Checkpoint {
            path: path.display().to_string(),
            message,
        };
        let bytes = fs::read(path).map_err(|e| err(e.to_string()))?;
        let magic = format!("{CHECKPOINT_VERSION}\n");
        let rest = bytes
            .strip_prefix(magic.as_bytes())
            .ok_or_else(|| err(format!("not a {CHECKPOINT_VERSION} checkpoint")))?;
        if rest.len() < 8 {
            return Err(err("truncated header".into()));
        }
        let hlen = u64::from_le_bytes(rest[..8].try_into().unwrap()) as usize;
        let rest = &rest[8..];
        if rest.len() < hlen {
            return Err(err("truncated header".into()));
        }
        let header: CheckpointHeader =
            serde_json::from_slice(&rest[..hlen]).map_err(|e| err(e.to_string()))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported version {}", header.version)));
        }
        let mut model = Model::new(header.config, 0)?;
        if model.params.len() != header.params.len() {
            return Err(err("parameter count does not match config".into()));
        }
        let mut data = &rest[hlen..];
        for (id, entry) in model.params.ids().zip(&header.params) {
            let t = model.params.get(id);
            if model.params.name(id) != entry.name || t.shape() != (entry.rows, entry.cols) {
                return Err(err(format!("unexpected parameter {}", entry.name)));
            }
            let len = entry.rows * entry.cols;
            if data.len() < 8 * len {
                return Err(err("truncated parameter data".into()));
            }
            let values = data[..8 * len]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            data = &data[8 * len..];
            *model.params.get_mut(id) = Tensor::new(entry.rows, entry.cols, values)?;
        }
        if !data.is_empty() {
            return Err(err("trailing bytes".into()));
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: String,
    config: ModelConfig,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}`.
pub fn normalized_adjacency(a: &Tensor) -> Tensor {
    let n = a.rows();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / (a.row(i).iter().sum::<f64>() + 1.0).sqrt())
        .collect();
    Tensor::from_fn(n, n, |i, j| {
        let v = a.get(i, j) + if i == j { 1.0 } else { 0.0 };
        inv_sqrt[i] * v * inv_sqrt[j]
    })
}

/// `ReLU(D̃^{-1/2} Ã D̃^{-1/2} X W)`.
pub fn global_conv(tape: &mut Tape<'_>, a: &Tensor, x: Var, w: Var) -> Result<Var, TensorError> {
    let a_hat = tape.constant(normalized_adjacency(a));
    global_conv_with(tape, a_hat, x, w)
}

fn global_conv_with(tape: &mut Tape<'_>, a_hat: Var, x: Var, w: Var) -> Result<Var, TensorError> {
    let xw = tape.matmul(x, w)?;
    let h = tape.matmul(a_hat, xw)?;
    Ok(tape.relu(h))
}

/// `softmax((P W_q)(X0 W_k)ᵀ / √d) (X0 W_v)` with pooled nodes `P` as
/// queries and initial nodes `X0` as keys and values.
pub fn attention_fuse(
    tape: &mut Tape<'_>,
    initial: Var,
    pooled: Var,
    wq: Var,
    wk: Var,
    wv: Var,
) -> Result<Var, TensorError> {
    let d = tape.shape(initial).1;
    if tape.shape(pooled).1 != d {
        return Err(TensorError::Shape {
            op: "attention_fuse",
            left: tape.shape(initial),
            right: tape.shape(pooled),
        });
    }
    let q = tape.matmul(pooled, wq)?;
    let k = tape.matmul(initial, wk)?;
    let v = tape.matmul(initial, wv)?;
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let weights = tape.row_softmax(scores);
    tape.matmul(weights, v)
}

#[derive(Clone, Copy, Debug)]
pub struct MlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Mean readout over rows, then `Linear → ReLU → dropout → Linear`.
pub fn classify<R: Rng + ?Sized>(
    tape: &mut Tape<'_>,
    input: Var,
    mlp: MlpVars,
    dropout: f64,
    training: bool,
    rng: &mut R,
) -> Result<Var, TensorError> {
    if tape.shape(input).0 == 0 {
        return Err(TensorError::Contract("classify needs at least one row".into()));
    }
    let r = tape.mean_rows(input);
    let h = tape.matmul(r, mlp.w1)?;
    let h = tape.add_row(h, mlp.b1)?;
    let h = tape.relu(h);
    let h = tape.dropout(h, dropout, training, rng)?;
    let o = tape.matmul(h, mlp.w2)?;
    tape.add_row(o, mlp.b2)
}

/// Index of the largest logit, lowest index on ties.
pub fn predicted_class(logits: &Tensor) -> usize {
    crate::pooling::argmax_rows(logits)[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules() {
        assert_eq!(layer_schedule(8, 0.5, 3).unwrap(), vec![8, 4, 2]);
        assert_eq!(layer_schedule(128, 0.125, 3).unwrap(), vec![128, 16, 2]);
        assert_eq!(layer_schedule(128, 0.25, 3).unwrap(), vec![128, 32, 8]);
        assert_eq!(layer_schedule(128, 0.25, 1).unwrap(), vec![128]);
        assert!(layer_schedule(8, 0.125, 3).is_err());
        assert!(layer_schedule(8, 1.5, 2).is_err());
    }

    #[test]
    fn config_validation() {
        let cfg = ModelConfig::new(4, 2);
        cfg.validate().unwrap();
        let mut bad = cfg.clone();
        bad.layer_sizes = vec![128, 30, 8];
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.dropout = 1.0;
        assert!(bad.validate().is_err());
        let mut ok = cfg;
        ok.architecture = Architecture::GlobalSum;
        ok.layer_sizes.clear();
        ok.validate().unwrap();
    }

    #[test]
    fn predicted_class_is_argmax() {
        assert_eq!(predicted_class(&Tensor::from_rows(&[[2.0, -1.0]])), 0);
        assert_eq!(predicted_class(&Tensor::from_rows(&[[0.0, 3.0, 1.0]])), 1);
    }

    #[test]
    fn zero_mlp_gives_uniform_logits() {
        let (w1, b1) = (Tensor::zeros(3, 4), Tensor::zeros(1, 4));
        let (w2, b2) = (Tensor::zeros(4, 2), Tensor::zeros(1, 2));
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(5, 3, |i, j| (i * j) as f64));
        let mlp = MlpVars {
            w1: tape.param(&w1),
            b1: tape.param(&b1),
            w2: tape.param(&w2),
            b2: tape.param(&b2),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = classify(&mut tape, x, mlp, 0.5, false, &mut rng).unwrap();
        assert_eq!(tape.value(logits).data(), &[0.0, 0.0]);
    }

    #[test]
    fn checkpoint_round_trip_and_version_check() {
        let mut cfg = ModelConfig::new(3, 2);
        cfg.hidden_dim = 4;
        cfg.mlp_hidden_dim = 4;
        cfg.layer_sizes = vec![4, 2];
        cfg.assignment_ratio = 0.5;
        let model = Model::new(cfg, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        model.save(&path).unwrap();
        assert_eq!(Model::load(&path).unwrap(), model);
        fs::write(&path, b"garbage").unwrap();
        assert!(matches!(Model::load(&path), Err(ModelError::Checkpoint { .. })));
    }
}
