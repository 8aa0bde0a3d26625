//! Adam, the epoch loop, repeated k-fold cross-validation and the two
//! sensitivity sweeps.
//!
//! A mini-batch is a list of graph indices. Each graph gets its own forward
//! and backward pass, optionally on a worker thread, with dropout driven by
//! an RNG derived from `(run seed, epoch, graph index)`. Gradients are summed
//! in ascending graph-index order and averaged, so every number is
//! independent of the worker count.

use std::thread;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{make_folds, DataError, Dataset};
use crate::model::{layer_schedule, predicted_class, Architecture, Model, ModelConfig, ModelError};
use crate::params::{Gradients, ParamStore};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub folds: usize,
    pub repeats: usize,
    /// Threads used for per-graph passes. Results do not depend on it.
    #[serde(skip)]
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 100,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            folds: 10,
            repeats: 10,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.eps <= 0.0 {
            return bad("adam eps must be positive");
        }
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        Ok(())
    }
}

/// Mixes a master seed with a path of integers (SplitMix64 finaliser per
/// step), giving independent streams for init, shuffling, folds and dropout.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(seed), |h, &p| mix(h ^ mix(p)))
}

const STREAM_REPEAT: u64 = 1;
const STREAM_FOLDS: u64 = 2;
const STREAM_FOLD: u64 = 3;
const STREAM_INIT: u64 = 4;
const STREAM_SHUFFLE: u64 = 5;
const STREAM_DROPOUT: u64 = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, _, p)| Tensor::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Every parameter needs a gradient; pass
/// explicit zeros for parameters the loss did not touch.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(TensorError::Contract(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        ))
        .into());
    }
    for id in params.ids() {
        let g = grads.get(id).ok_or_else(|| {
            TensorError::Contract(format!("missing gradient for parameter {}", params.name(id)))
        })?;
        if g.shape() != params.get(id).shape() {
            return Err(TensorError::Shape {
                op: "adam_step",
                left: params.get(id).shape(),
                right: g.shape(),
            }
            .into());
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for id in params.ids() {
        let g = grads.get(id).unwrap().data();
        let m = state.m[id.0].data_mut();
        let v = state.v[id.0].data_mut();
        let p = params.get_mut(id).data_mut();
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub repeat: usize,
    pub fold: usize,
    pub final_test_accuracy: f64,
    /// Reported for reference only; the fold result is the final epoch.
    pub best_test_accuracy: f64,
    pub final_train_accuracy: f64,
    pub curve: Vec<EpochMetrics>,
    /// Sorted graph indices that reached a backward pass.
    #[serde(skip)]
    pub backward_graphs: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std_error: f64,
    pub runs: usize,
}

/// Mean and standard error (sample standard deviation over `√runs`).
pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            mean: f64::NAN,
            std_error: f64::NAN,
            runs: 0,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std_error = if n < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        var.sqrt() / (n as f64).sqrt()
    };
    Summary {
        mean,
        std_error,
        runs: n,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub runs: Vec<FoldResult>,
    pub accuracy: Summary,
    /// Per-epoch metrics averaged over all runs.
    pub mean_curve: Vec<EpochMetrics>,
}

/// Runs `f` over `items` on up to `workers` threads, returning results in
/// input order.
fn par_map<T: Sync, U: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> U + Sync,
) -> Vec<U> {
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| {
                let f = &f;
                s.spawn(move || c.iter().map(f).collect::<Vec<U>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// Evaluation-mode mean loss and accuracy over `indices`.
pub fn evaluate(
    model: &Model,
    dataset: &Dataset,
    indices: &[usize],
    workers: usize,
) -> Result<(f64, f64), TrainError> {
    if indices.is_empty() {
        return Ok((0.0, 0.0));
    }
    let results = par_map(indices, workers, |&i| -> Result<(f64, bool), ModelError> {
        let g = &dataset.graphs[i];
        let (loss, logits) = model.eval_pass(g, None)?;
        Ok((loss, predicted_class(&logits) == g.label))
    });
    let mut loss = 0.0;
    let mut correct = 0usize;
    for r in results {
        let (l, ok) = r?;
        loss += l;
        correct += usize::from(ok);
    }
    let n = indices.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains one model on `train` and evaluates it on `test` after every epoch.
/// Train-split metrics are running averages of the training-mode passes
/// (dropout active, parameters changing within the epoch).
pub fn train_fold(
    dataset: &Dataset,
    train: &[usize],
    test: &[usize],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    run_seed: u64,
) -> Result<(FoldResult, Model), TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::Config("empty training split".into()));
    }
    let mut model = Model::new(model_cfg.clone(), derive_seed(run_seed, &[STREAM_INIT]))?;
    let mut adam = AdamState::new(&model.params);
    let mut shuffle = ChaCha8Rng::seed_from_u64(derive_seed(run_seed, &[STREAM_SHUFFLE]));
    let mut order = train.to_vec();
    let mut touched = vec![false; dataset.graphs.len()];
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut train_loss = 0.0;
        let mut train_correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut batch = batch.to_vec();
            batch.sort_unstable();
            let passes = par_map(&batch, cfg.workers, |&i| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    run_seed,
                    &[STREAM_DROPOUT, epoch as u64, i as u64],
                ));
                model.graph_pass(&dataset.graphs[i], true, None, &mut rng)
            });
            let mut grads = Gradients::empty(model.params.len());
            for (pass, &i) in passes.into_iter().zip(&batch) {
                let pass = pass?;
                grads.accumulate(&pass.grads)?;
                train_loss += pass.loss;
                train_correct += usize::from(predicted_class(&pass.logits) == dataset.graphs[i].label);
                touched[i] = true;
            }
            grads.scale(1.0 / batch.len() as f64);
            grads.fill_missing(&model.params);
            adam_step(&mut model.params, &grads, &mut adam, cfg)?;
        }
        let train_loss = train_loss / train.len() as f64;
        let train_accuracy = train_correct as f64 / train.len() as f64;
        let (test_loss, test_accuracy) = evaluate(&model, dataset, test, cfg.workers)?;
        curve.push(EpochMetrics {
            epoch,
            train_loss,
            train_accuracy,
            test_loss,
            test_accuracy,
        });
    }

    let last = curve.last().unwrap();
    let result = FoldResult {
        repeat: 0,
        fold: 0,
        final_test_accuracy: last.test_accuracy,
        best_test_accuracy: curve.iter().map(|m| m.test_accuracy).fold(0.0, f64::max),
        final_train_accuracy: last.train_accuracy,
        backward_graphs: (0..touched.len()).filter(|&i| touched[i]).collect(),
        curve,
    };
    Ok((result, model))
}

/// `repeats` × `folds`-fold stratified cross-validation. Returns the report
/// and the model trained on the first fold of the first repeat.
pub fn cross_validate(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(RunReport, Model), TrainError> {
    cfg.validate()?;
    model_cfg.validate()?;
    let mut runs = Vec::new();
    let mut first = None;
    for repeat in 0..cfg.repeats {
        let repeat_seed = derive_seed(cfg.seed, &[STREAM_REPEAT, repeat as u64]);
        let plan = make_folds(dataset, cfg.folds, derive_seed(repeat_seed, &[STREAM_FOLDS]))?;
        for fold in 0..cfg.folds {
            let (mut result, model) = train_fold(
                dataset,
                &plan.train_indices(fold),
                &plan.test_indices(fold),
                model_cfg,
                cfg,
                derive_seed(repeat_seed, &[STREAM_FOLD, fold as u64]),
            )?;
            result.repeat = repeat;
            result.fold = fold;
            runs.push(result);
            first.get_or_insert(model);
        }
    }
    let accuracy = summarize(&runs.iter().map(|r| r.final_test_accuracy).collect::<Vec<_>>());
    let mean_curve = average_curves(&runs);
    let report = RunReport {
        dataset: dataset.name.clone(),
        model: model_cfg.clone(),
        train: cfg.clone(),
        runs,
        accuracy,
        mean_curve,
    };
    Ok((report, first.expect("at least one run")))
}

fn average_curves(runs: &[FoldResult]) -> Vec<EpochMetrics> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    let n = runs.len() as f64;
    (0..first.curve.len())
        .map(|e| {
            let mut m = EpochMetrics {
                epoch: e + 1,
                train_loss: 0.0,
                train_accuracy: 0.0,
                test_loss: 0.0,
                test_accuracy: 0.0,
            };
            for r in runs {
                let c = &r.curve[e];
                m.train_loss += c.train_loss;
                m.train_accuracy += c.train_accuracy;
                m.test_loss += c.test_loss;
                m.test_accuracy += c.test_accuracy;
            }
            m.train_loss /= n;
            m.train_accuracy /= n;
            m.test_loss /= n;
            m.test_accuracy /= n;
            m
        })
        .collect()
}

/// `epoch,split,loss,accuracy` rows, train then test for each epoch.
pub fn curves_csv(curve: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,split,loss,accuracy\n");
    for m in curve {
        out.push_str(&format!("{},train,{},{}\n", m.epoch, m.train_loss, m.train_accuracy));
        out.push_str(&format!("{},test,{},{}\n", m.epoch, m.test_loss, m.test_accuracy));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Depth or assignment ratio of this row.
    pub parameter: f64,
    pub layer_sizes: Vec<usize>,
    pub sshpool: Summary,
    pub sshpool_non: Summary,
    pub diffpool: Summary,
}

fn sweep_row(
    dataset: &Dataset,
    parameter: f64,
    layer_sizes: Vec<usize>,
    ratio: f64,
    base: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<SweepRow, TrainError> {
    let variant = |arch: Architecture, attention: bool| -> Result<Summary, TrainError> {
        let mut m = base.clone();
        m.architecture = arch;
        m.attention_enabled = attention;
        m.layer_sizes = layer_sizes.clone();
        m.assignment_ratio = ratio;
        Ok(cross_validate(dataset, &m, cfg)?.0.accuracy)
    };
    Ok(SweepRow {
        parameter,
        sshpool: variant(Architecture::Sshpool, true)?,
        sshpool_non: variant(Architecture::Sshpool, false)?,
        diffpool: variant(Architecture::DiffPool, true)?,
        layer_sizes,
    })
}

/// Cross-validated accuracy of SSHPool, SSHPool without attention and the
/// soft-assignment baseline for each depth, with sizes following the base
/// config's first size and ratio.
pub fn sweep_depth(
    dataset: &Dataset,
    depths: &[usize],
    base: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<Vec<SweepRow>, TrainError> {
    let first = base.layer_sizes.first().copied().unwrap_or(128);
    depths
        .iter()
        .map(|&d| {
            let sizes = layer_schedule(first, base.assignment_ratio, d)?;
            sweep_row(dataset, d as f64, sizes, base.assignment_ratio, base, cfg)
        })
        .collect()
}

/// As [`sweep_depth`] but varying the ratio at the base config's depth.
pub fn sweep_ratio(
    dataset: &Dataset,
    ratios: &[f64],
    base: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<Vec<SweepRow>, TrainError> {
    let first = base.layer_sizes.first().copied().unwrap_or(128);
    ratios
        .iter()
        .map(|&r| {
            let sizes = layer_schedule(first, r, base.depth().max(1))?;
            sweep_row(dataset, r, sizes, r, base, cfg)
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "parameter,layer_sizes,sshpool_mean,sshpool_se,sshpool_non_mean,sshpool_non_se,diffpool_mean,diffpool_se\n",
    );
    for r in rows {
        let sizes: Vec<String> = r.layer_sizes.iter().map(|s| s.to_string()).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.parameter,
            sizes.join(";"),
            r.sshpool.mean,
            r.sshpool.std_error,
            r.sshpool_non.mean,
            r.sshpool_non.std_error,
            r.diffpool.mean,
            r.diffpool.std_error
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamId;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.push("w", Tensor::filled(1, 1, v));
        s
    }

    #[test]
    fn zero_grads_leave_params_and_advance_t() {
        let mut p = scalar_store(0.5);
        let mut st = AdamState::new(&p);
        let g = Gradients::dense(&p);
        adam_step(&mut p, &g, &mut st, &TrainConfig::default()).unwrap();
        assert_eq!(p.get(ParamId(0)).get(0, 0), 0.5);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let cfg = TrainConfig::default();
        for g in [3.0, -0.02] {
            let mut p = scalar_store(0.0);
            let mut st = AdamState::new(&p);
            let mut grads = Gradients::empty(1);
            grads.set(ParamId(0), Tensor::filled(1, 1, g));
            adam_step(&mut p, &grads, &mut st, &cfg).unwrap();
            let step = p.get(ParamId(0)).get(0, 0);
            assert!((step + cfg.lr * f64::signum(g)).abs() < 1e-9);
        }
    }

    #[test]
    fn missing_grad_names_parameter() {
        let mut p = scalar_store(0.0);
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &Gradients::empty(1), &mut st, &TrainConfig::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("w"), "{err}");
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&[0.8, 0.8]);
        assert!((s.mean - 0.8).abs() < 1e-15);
        assert_eq!(s.std_error, 0.0);
        let s = summarize(&[0.7, 0.9]);
        assert!((s.mean - 0.8).abs() < 1e-12);
        assert!((s.std_error - 0.1).abs() < 1e-12);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
        assert_ne!(derive_seed(1, &[]), derive_seed(2, &[]));
        assert_eq!(derive_seed(7, &[1]), derive_seed(7, &[1]));
    }

    #[test]
    fn par_map_keeps_order() {
        let v: Vec<usize> = (0..37).collect();
        assert_eq!(par_map(&v, 4, |x| x * 2), v.iter().map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
