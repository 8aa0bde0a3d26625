//! Settings shared by all commands: flags, a flat `key = value` file, and
//! defaults, merged in that order of precedence.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use sshpool::graph::FeatureMode;
use sshpool::model::{layer_schedule, Architecture, ModelConfig};
use sshpool::trainer::TrainConfig;

use crate::CliError;

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// Flat `key = value` settings file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory holding `<NAME>_A.txt` and friends.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Dataset name (file prefix).
    #[arg(long, global = true)]
    pub name: Option<String>,
    /// Node feature construction: node-label-one-hot, degree-one-hot or constant.
    #[arg(long, global = true)]
    pub features: Option<String>,
    /// Generated dataset instead of files: triangles or protein-like.
    #[arg(long, global = true)]
    pub synthetic: Option<String>,
    /// Number of generated graphs.
    #[arg(long, global = true)]
    pub synthetic_graphs: Option<usize>,
    /// Use a stratified subset of this many graphs.
    #[arg(long, global = true)]
    pub subset: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed; every other seed is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// sshpool, global-sum, global-mean or diff-pool.
    #[arg(long, global = true)]
    pub arch: Option<String>,
    #[arg(long, global = true)]
    pub hidden: Option<usize>,
    /// Explicit comma-separated layer sizes, e.g. 128,32,8.
    #[arg(long, global = true)]
    pub layer_sizes: Option<String>,
    /// First layer size when sizes come from the ratio.
    #[arg(long, global = true)]
    pub base_size: Option<usize>,
    #[arg(long, global = true)]
    pub depth: Option<usize>,
    #[arg(long, global = true)]
    pub ratio: Option<f64>,
    #[arg(long, global = true)]
    pub dropout: Option<f64>,
    /// Enable or disable the attention layer (true/false).
    #[arg(long, global = true)]
    pub attention: Option<bool>,
    #[arg(long, global = true)]
    pub global_conv_layers: Option<usize>,
    #[arg(long, global = true)]
    pub mlp_hidden: Option<usize>,
    #[arg(long, global = true)]
    pub keep_self_loops: Option<bool>,

    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub folds: Option<usize>,
    #[arg(long, global = true)]
    pub repeats: Option<usize>,
}

pub const KEYS: &[&str] = &[
    "data",
    "name",
    "features",
    "synthetic",
    "synthetic_graphs",
    "subset",
    "out",
    "seed",
    "workers",
    "arch",
    "hidden",
    "layer_sizes",
    "base_size",
    "depth",
    "ratio",
    "dropout",
    "attention",
    "global_conv_layers",
    "mlp_hidden",
    "keep_self_loops",
    "lr",
    "epochs",
    "batch_size",
    "folds",
    "repeats",
];

/// Parses `key = value` lines; `#` starts a comment, blank lines are
/// ignored, `-` in keys is read as `_`.
pub fn parse_config(text: &str, origin: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "{origin}:{}: expected `key = value`",
                no + 1
            )));
        };
        let key = k.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::Usage(format!("{origin}:{}: unknown key `{key}`", no + 1)));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

/// Flag, then file entry, then nothing.
fn pick<T: FromStr>(
    flag: Option<T>,
    file: &BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match file.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("config key `{key}`: cannot parse `{v}`"))),
    }
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{what}: cannot parse `{p}`")))
        })
        .collect()
}

pub fn parse_usize_list(s: &str, what: &str) -> Result<Vec<usize>, CliError> {
    parse_list(s, what)
}

pub fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    parse_list(s, what)
}

/// Fully resolved settings.
#[derive(Clone, Debug)]
pub struct Settings {
    pub data: Option<PathBuf>,
    pub name: Option<String>,
    pub features: Option<FeatureMode>,
    pub synthetic: Option<String>,
    pub synthetic_graphs: usize,
    pub subset: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub workers: usize,
    pub arch: Architecture,
    pub hidden: usize,
    pub layer_sizes: Vec<usize>,
    pub ratio: f64,
    pub dropout: f64,
    pub attention: bool,
    pub global_conv_layers: usize,
    pub mlp_hidden: usize,
    pub keep_self_loops: bool,
    pub train: TrainConfig,
}

pub fn parse_arch(s: &str) -> Result<Architecture, CliError> {
    match s {
        "sshpool" => Ok(Architecture::Sshpool),
        "global-sum" => Ok(Architecture::GlobalSum),
        "global-mean" => Ok(Architecture::GlobalMean),
        "diff-pool" | "diffpool" => Ok(Architecture::DiffPool),
        _ => Err(CliError::Usage(format!("unknown architecture `{s}`"))),
    }
}

pub fn parse_features(s: &str) -> Result<FeatureMode, CliError> {
    match s {
        "node-label-one-hot" => Ok(FeatureMode::NodeLabelOneHot),
        "degree-one-hot" => Ok(FeatureMode::DegreeOneHot),
        "constant" => Ok(FeatureMode::Constant),
        _ => Err(CliError::Usage(format!("unknown feature mode `{s}`"))),
    }
}

/// Defaults that a command may replace before flags and file are applied.
#[derive(Clone, Debug)]
pub struct Defaults {
    pub hidden: usize,
    pub mlp_hidden: Option<usize>,
    pub base_size: usize,
    pub depth: usize,
    pub ratio: f64,
}

impl Default for Defaults {
    fn default() -> Self {
        Self {
            hidden: 128,
            mlp_hidden: None,
            base_size: 128,
            depth: 3,
            ratio: 0.25,
        }
    }
}

impl Common {
    pub fn resolve(&self, defaults: &Defaults) -> Result<Settings, CliError> {
        let file = match &self.config {
            None => BTreeMap::new(),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                parse_config(&text, &p.display().to_string())?
            }
        };
        let path = |flag: &Option<PathBuf>, key: &str| -> Option<PathBuf> {
            flag.clone().or_else(|| file.get(key).map(PathBuf::from))
        };
        let string = |flag: &Option<String>, key: &str| -> Option<String> {
            flag.clone().or_else(|| file.get(key).cloned())
        };

        let hidden = pick(self.hidden, &file, "hidden")?.unwrap_or(defaults.hidden);
        let ratio = pick(self.ratio, &file, "ratio")?.unwrap_or(defaults.ratio);
        let layer_sizes = match string(&self.layer_sizes, "layer_sizes") {
            Some(s) => parse_usize_list(&s, "layer_sizes")?,
            None => {
                let base = pick(self.base_size, &file, "base_size")?.unwrap_or(defaults.base_size);
                let depth = pick(self.depth, &file, "depth")?.unwrap_or(defaults.depth);
                layer_schedule(base, ratio, depth).map_err(|e| CliError::Usage(e.to_string()))?
            }
        };
        let base_train = TrainConfig::default();
        let train = TrainConfig {
            lr: pick(self.lr, &file, "lr")?.unwrap_or(base_train.lr),
            epochs: pick(self.epochs, &file, "epochs")?.unwrap_or(base_train.epochs),
            batch_size: pick(self.batch_size, &file, "batch_size")?.unwrap_or(base_train.batch_size),
            seed: pick(self.seed, &file, "seed")?.unwrap_or(0),
            folds: pick(self.folds, &file, "folds")?.unwrap_or(base_train.folds),
            repeats: pick(self.repeats, &file, "repeats")?.unwrap_or(base_train.repeats),
            workers: pick(self.workers, &file, "workers")?.unwrap_or(1),
            ..base_train
        };
        train.validate().map_err(|e| CliError::Usage(e.to_string()))?;

        Ok(Settings {
            data: path(&self.data, "data"),
            name: string(&self.name, "name"),
            features: string(&self.features, "features")
                .map(|s| parse_features(&s))
                .transpose()?,
            synthetic: string(&self.synthetic, "synthetic"),
            synthetic_graphs: pick(self.synthetic_graphs, &file, "synthetic_graphs")?.unwrap_or(200),
            subset: pick(self.subset, &file, "subset")?,
            out: path(&self.out, "out"),
            seed: train.seed,
            workers: train.workers,
            arch: parse_arch(&string(&self.arch, "arch").unwrap_or_else(|| "sshpool".into()))?,
            hidden,
            layer_sizes,
            ratio,
            dropout: pick(self.dropout, &file, "dropout")?.unwrap_or(0.5),
            attention: pick(self.attention, &file, "attention")?.unwrap_or(true),
            global_conv_layers: pick(self.global_conv_layers, &file, "global_conv_layers")?
                .unwrap_or(1),
            mlp_hidden: pick(self.mlp_hidden, &file, "mlp_hidden")?
                .or(defaults.mlp_hidden)
                .unwrap_or(hidden),
            keep_self_loops: pick(self.keep_self_loops, &file, "keep_self_loops")?.unwrap_or(false),
            train,
        })
    }
}

impl Settings {
    pub fn model_config(&self, feature_dim: usize, num_classes: usize) -> Result<ModelConfig, CliError> {
        let cfg = ModelConfig {
            architecture: self.arch,
            feature_dim_in: feature_dim,
            hidden_dim: self.hidden,
            layer_sizes: self.layer_sizes.clone(),
            assignment_ratio: self.ratio,
            dropout: self.dropout,
            num_classes,
            attention_enabled: self.attention,
            global_conv_layers: self.global_conv_layers,
            mlp_hidden_dim: self.mlp_hidden,
            keep_coarsened_self_loops: self.keep_self_loops,
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    /// `name` inside the output directory (created on demand), defaulting
    /// to the working directory.
    pub fn out_file(&self, name: &str) -> Result<PathBuf, CliError> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(dir.join(name))
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_file() {
        let m = parse_config("# comment\nepochs = 5\n\nlayer-sizes = 8,4 # trailing\n", "f").unwrap();
        assert_eq!(m["epochs"], "5");
        assert_eq!(m["layer_sizes"], "8,4");
        assert!(parse_config("nonsense", "f").is_err());
        assert!(parse_config("colour = red", "f").is_err());
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.conf");
        fs::write(&p, "epochs = 7\nlr = 0.01\n").unwrap();
        let common = Common {
            config: Some(p),
            epochs: Some(3),
            ..Default::default()
        };
        let s = common.resolve(&Defaults::default()).unwrap();
        assert_eq!(s.train.epochs, 3);
        assert_eq!(s.train.lr, 0.01);
        assert_eq!(s.train.batch_size, 32);
        assert_eq!(s.layer_sizes, vec![128, 32, 8]);
    }

    #[test]
    fn ratio_drives_default_sizes() {
        let common = Common {
            ratio: Some(0.125),
            ..Default::default()
        };
        assert_eq!(common.resolve(&Defaults::default()).unwrap().layer_sizes, vec![128, 16, 2]);
    }
}
