//! `sshpool` command-line driver.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage or configuration error,
//! 3 I/O or dataset ingest error.

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sshpool::diagnostics::{certify_locality, compare_smoothing, smoothing_csv, LocalityReport, StackedGcn};
use sshpool::gradcheck::{gradcheck, DEFAULT_STEP, DEFAULT_TOLERANCE};
use sshpool::graph::{graph_stats, load_tu_dataset_with, DataError, Dataset, Graph};
use sshpool::model::{layer_schedule, Architecture, Model, ModelConfig, ModelError};
use sshpool::pooling::clusters_of;
use sshpool::synthetic::{protein_like_dataset, random_graph, triangle_density_dataset, two_triangles};
use sshpool::trainer::{cross_validate, curves_csv, derive_seed, evaluate, sweep_csv, sweep_depth, sweep_ratio, TrainError};

use config::{parse_f64_list, parse_usize_list, write_file, Common, Defaults, Settings};

#[derive(Debug)]
pub enum CliError {
    Check(String),
    Usage(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Check(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Check(m) | CliError::Usage(m) | CliError::Io(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Folds(_) => CliError::Usage(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Usage(e.to_string()),
            ModelError::Checkpoint { .. } => CliError::Io(e.to_string()),
            ModelError::Tensor(_) => CliError::Check(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Data(d) => d.into(),
            TrainError::Tensor(_) => CliError::Check(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "sshpool", version, args_override_self = true)]
#[command(about = "Graph classification with hard-assignment subgraph pooling")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-validated training; writes report.json, curves.csv and model.ckpt.
    Train,
    /// Loss and accuracy of a checkpoint over a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Per-layer coarsening of one graph as JSON lines.
    PoolTrace {
        /// Model to trace; a freshly initialised one when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Graph within the dataset; the two-triangle fixture is used when no
        /// dataset is given.
        #[arg(long, default_value_t = 0)]
        graph_index: usize,
    },
    /// Finite-difference check of every parameter gradient.
    Gradcheck {
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        graph_index: usize,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Accuracy over depth or assignment ratio for SSHPool, SSHPool without
    /// attention and the soft-assignment baseline.
    Sweep {
        #[command(subcommand)]
        kind: SweepKind,
    },
    /// Dataset statistics as JSON.
    Stats,
    #[command(subcommand)]
    Diagnose(Diagnose),
}

#[derive(Subcommand)]
enum SweepKind {
    Depth {
        #[arg(long, default_value = "1,2,3")]
        values: String,
    },
    Ratio {
        #[arg(long, default_value = "0.5,0.25,0.125")]
        values: String,
    },
}

#[derive(Subcommand)]
enum Diagnose {
    /// Mean pairwise cosine per depth against a plain GCN stack.
    Smoothing {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Random graphs to use when no dataset is given.
        #[arg(long, default_value_t = 50)]
        graphs: usize,
    },
    /// Perturbation test that slices never read outside their cluster.
    Locality {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Random graphs (each with its own random configuration) when no
        /// dataset is given.
        #[arg(long, default_value_t = 50)]
        graphs: usize,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train => cmd_train(&cli.common.resolve(&Defaults::default())?),
        Command::Eval { checkpoint } => cmd_eval(&cli.common.resolve(&Defaults::default())?, &checkpoint),
        Command::PoolTrace { checkpoint, graph_index } => {
            cmd_pool_trace(&cli.common.resolve(&Defaults::default())?, checkpoint, graph_index)
        }
        Command::Gradcheck {
            step,
            tolerance,
            graph_index,
            json,
        } => {
            let small = Defaults {
                hidden: 8,
                mlp_hidden: Some(8),
                base_size: 4,
                depth: 3,
                ratio: 0.5,
            };
            cmd_gradcheck(&cli.common.resolve(&small)?, step, tolerance, graph_index, json)
        }
        Command::Sweep { kind } => cmd_sweep(&cli.common.resolve(&Defaults::default())?, kind),
        Command::Stats => {
            let s = cli.common.resolve(&Defaults::default())?;
            let ds = load_dataset(&s)?.ok_or_else(no_dataset)?;
            println!("{}", pretty(&graph_stats(&ds))?);
            Ok(())
        }
        Command::Diagnose(Diagnose::Smoothing { checkpoint, graphs }) => {
            cmd_smoothing(&cli.common.resolve(&Defaults::default())?, checkpoint, graphs)
        }
        Command::Diagnose(Diagnose::Locality {
            trials,
            graphs,
            checkpoint,
        }) => cmd_locality(&cli.common.resolve(&Defaults::default())?, trials, graphs, checkpoint),
    }
}

fn no_dataset() -> CliError {
    CliError::Usage("no dataset: pass --data and --name, or --synthetic".into())
}

/// JSON with keys sorted at every level.
fn pretty<T: serde::Serialize>(value: &T) -> Result<String> {
    let v: Value = serde_json::to_value(value).map_err(|e| CliError::Check(e.to_string()))?;
    serde_json::to_string_pretty(&v).map_err(|e| CliError::Check(e.to_string()))
}

fn load_dataset(s: &Settings) -> Result<Option<Dataset>> {
    let ds = match (&s.synthetic, &s.data) {
        (Some(kind), _) => match kind.as_str() {
            "triangles" => triangle_density_dataset(s.synthetic_graphs, s.seed),
            "protein-like" => protein_like_dataset(s.synthetic_graphs, s.seed),
            other => return Err(CliError::Usage(format!("unknown synthetic dataset `{other}`"))),
        },
        (None, Some(dir)) => {
            let name = s
                .name
                .as_deref()
                .ok_or_else(|| CliError::Usage("--data needs --name".into()))?;
            load_tu_dataset_with(dir, name, s.features)?
        }
        (None, None) => return Ok(None),
    };
    Ok(Some(match s.subset {
        Some(n) => ds.stratified_subset(n, derive_seed(s.seed, &[0x5b5e7])),
        None => ds,
    }))
}

fn load_model(path: &Path) -> Result<Model> {
    Ok(Model::load(path)?)
}

fn check_compatible(model: &Model, feature_dim: usize) -> Result<()> {
    if model.config.feature_dim_in != feature_dim {
        return Err(CliError::Usage(format!(
            "model expects {} input features, data has {feature_dim}",
            model.config.feature_dim_in
        )));
    }
    Ok(())
}

fn cmd_train(s: &Settings) -> Result<()> {
    let ds = load_dataset(s)?.ok_or_else(no_dataset)?;
    let model_cfg = s.model_config(ds.feature_dim, ds.num_classes)?;
    let (report, model) = cross_validate(&ds, &model_cfg, &s.train)?;
    let report_path = s.out_file("report.json")?;
    write_file(&report_path, &(pretty(&report)? + "\n"))?;
    write_file(&s.out_file("curves.csv")?, &curves_csv(&report.mean_curve))?;
    model.save(&s.out_file("model.ckpt")?)?;
    println!(
        "{}: accuracy {:.4} ± {:.4} over {} runs; artifacts in {}",
        report.dataset,
        report.accuracy.mean,
        report.accuracy.std_error,
        report.accuracy.runs,
        report_path.parent().map(|p| p.display().to_string()).unwrap_or_default()
    );
    Ok(())
}

fn cmd_eval(s: &Settings, checkpoint: &Path) -> Result<()> {
    let model = load_model(checkpoint)?;
    let ds = load_dataset(s)?.ok_or_else(no_dataset)?;
    check_compatible(&model, ds.feature_dim)?;
    let all: Vec<usize> = (0..ds.graphs.len()).collect();
    let (loss, accuracy) = evaluate(&model, &ds, &all, s.workers)?;
    let out = json!({ "dataset": ds.name, "graphs": all.len(), "loss": loss, "accuracy": accuracy });
    println!("{}", pretty(&out)?);
    Ok(())
}

/// The chosen dataset graph, or the fixture when no dataset was given.
fn pick_graph(s: &Settings, index: usize) -> Result<(Graph, usize, usize)> {
    match load_dataset(s)? {
        None => Ok((two_triangles(), 3, 2)),
        Some(ds) => {
            let g = ds.graphs.get(index).cloned().ok_or_else(|| {
                CliError::Usage(format!("graph index {index} out of range (dataset has {})", ds.graphs.len()))
            })?;
            Ok((g, ds.feature_dim, ds.num_classes))
        }
    }
}

fn model_for(s: &Settings, checkpoint: Option<PathBuf>, feature_dim: usize, classes: usize) -> Result<Model> {
    let model = match checkpoint {
        Some(p) => load_model(&p)?,
        None => Model::new(s.model_config(feature_dim, classes)?, s.seed)?,
    };
    check_compatible(&model, feature_dim)?;
    Ok(model)
}

fn cmd_pool_trace(s: &Settings, checkpoint: Option<PathBuf>, index: usize) -> Result<()> {
    let (graph, fdim, classes) = pick_graph(s, index)?;
    let model = model_for(s, checkpoint, fdim, classes)?;
    if model.config.architecture != Architecture::Sshpool {
        return Err(CliError::Usage("pool-trace needs an sshpool model".into()));
    }
    let (_, trace) = model.predict(&graph)?;
    for (l, t) in trace.layers.iter().enumerate() {
        let clusters = clusters_of(&t.assignment.hard);
        let c = t.adjacency.rows();
        let mut members = vec![Vec::new(); c];
        for (node, &k) in clusters.iter().enumerate() {
            members[k].push(node);
        }
        let adjacency: Vec<Vec<f64>> = (0..c).map(|i| t.adjacency.row(i).to_vec()).collect();
        let line = json!({
            "layer": l,
            "input_nodes": t.input_nodes,
            "clusters": c,
            "cluster_sizes": members.iter().map(Vec::len).collect::<Vec<_>>(),
            "members": members,
            "dropped_edges": t.dropped_edges,
            "adjacency": adjacency,
        });
        println!("{line}");
    }
    Ok(())
}

/// `sshpool.0.local.3` and its siblings report as `sshpool.0.local`.
fn param_group(name: &str) -> &str {
    match name.find(".local.") {
        Some(i) => &name[..i + ".local".len()],
        None => name,
    }
}

fn cmd_gradcheck(s: &Settings, step: f64, tolerance: f64, index: usize, as_json: bool) -> Result<()> {
    if !(step > 0.0 && tolerance > 0.0) {
        return Err(CliError::Usage("step and tolerance must be positive".into()));
    }
    let (graph, fdim, classes) = pick_graph(s, index)?;
    let model = model_for(s, None, fdim, classes)?;
    let report = gradcheck(&model, &graph, step, tolerance)?;
    if as_json {
        println!("{}", pretty(&report)?);
    } else {
        let mut groups: BTreeMap<&str, f64> = BTreeMap::new();
        let mut order = Vec::new();
        for p in &report.params {
            let g = param_group(&p.name);
            let e = groups.entry(g).or_insert_with(|| {
                order.push(g);
                0.0
            });
            *e = e.max(p.max_rel_error);
        }
        for g in order {
            let e = groups[g];
            println!("{g:<24} {e:.3e} {}", if e <= tolerance { "ok" } else { "FAIL" });
        }
        println!("max relative error {:.3e} (tolerance {tolerance:.0e})", report.max_rel_error);
    }
    let offenders: Vec<&str> = report.offenders().map(|p| p.name.as_str()).collect();
    if offenders.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("gradient mismatch in: {}", offenders.join(", "))))
    }
}

fn cmd_sweep(s: &Settings, kind: SweepKind) -> Result<()> {
    let ds = load_dataset(s)?.ok_or_else(no_dataset)?;
    let base = s.model_config(ds.feature_dim, ds.num_classes)?;
    let (rows, file) = match kind {
        SweepKind::Depth { values } => (
            sweep_depth(&ds, &parse_usize_list(&values, "depths")?, &base, &s.train)?,
            "sweep_depth.csv",
        ),
        SweepKind::Ratio { values } => (
            sweep_ratio(&ds, &parse_f64_list(&values, "ratios")?, &base, &s.train)?,
            "sweep_ratio.csv",
        ),
    };
    let csv = sweep_csv(&rows);
    print!("{csv}");
    if s.out.is_some() {
        write_file(&s.out_file(file)?, &csv)?;
    }
    Ok(())
}

fn random_graphs(count: usize, seed: u64) -> Vec<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(4..=30);
            random_graph(n, rng.gen_range(0.05..0.5), 3, &mut rng)
        })
        .collect()
}

fn cmd_smoothing(s: &Settings, checkpoint: Option<PathBuf>, count: usize) -> Result<()> {
    let (graphs, fdim, classes) = match load_dataset(s)? {
        Some(ds) => (ds.graphs, ds.feature_dim, ds.num_classes),
        None => (random_graphs(count, s.seed), 3, 2),
    };
    let model = model_for(s, checkpoint, fdim, classes)?;
    let reference = StackedGcn::new(fdim, model.config.hidden_dim, model.config.depth(), s.seed);
    let cmp = compare_smoothing(&graphs, &model, &reference)?;
    println!("{}", pretty(&cmp)?);
    if s.out.is_some() {
        write_file(&s.out_file("smoothing_model.csv")?, &smoothing_csv(&cmp.model))?;
        write_file(&s.out_file("smoothing_reference.csv")?, &smoothing_csv(&cmp.reference))?;
    }
    Ok(())
}

/// Random pooling configuration with small widths.
fn random_config<R: Rng>(rng: &mut R, feature_dim: usize) -> ModelConfig {
    let ratio = [0.5, 0.25][rng.gen_range(0..2)];
    let base = rng.gen_range(2..=16);
    let sizes = layer_schedule(base, ratio, rng.gen_range(1..=3))
        .or_else(|_| layer_schedule(base, ratio, 1))
        .expect("single layer schedule");
    let hidden = rng.gen_range(2..=12);
    ModelConfig {
        hidden_dim: hidden,
        mlp_hidden_dim: hidden,
        layer_sizes: sizes,
        assignment_ratio: ratio,
        keep_coarsened_self_loops: rng.gen_bool(0.5),
        ..ModelConfig::new(feature_dim, 2)
    }
}

fn cmd_locality(s: &Settings, trials: usize, count: usize, checkpoint: Option<PathBuf>) -> Result<()> {
    if trials == 0 || count == 0 {
        return Err(CliError::Usage("--trials and --graphs must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(s.seed, &[0x10ca1]));
    let cases: Vec<(Graph, Model)> = match load_dataset(s)? {
        Some(ds) => {
            let model = model_for(s, checkpoint, ds.feature_dim, ds.num_classes)?;
            ds.graphs.into_iter().map(|g| (g, model.clone())).collect()
        }
        None => (0..count)
            .map(|i| {
                let n = rng.gen_range(1..=30);
                let g = random_graph(n, rng.gen_range(0.05..0.6), 3, &mut rng);
                let m = Model::new(random_config(&mut rng, 3), i as u64)?;
                Ok((g, m))
            })
            .collect::<Result<_>>()?,
    };
    if cases.first().is_some_and(|(_, m)| m.config.architecture != Architecture::Sshpool) {
        return Err(CliError::Usage("locality applies to sshpool models only".into()));
    }
    let mut report = LocalityReport::default();
    let k = cases.len().min(trials);
    for (i, (g, m)) in cases.iter().take(k).enumerate() {
        let share = trials / k + usize::from(i < trials % k);
        report.merge(certify_locality(g, m, share, &mut rng)?);
    }
    println!("{}", pretty(&report)?);
    eprintln!("locality: {}/{} trials passed on {k} graphs", report.passed_trials, report.trials);
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Check(format!("{} locality violations", report.violations.len())))
    }
}
