//! Graphs, TU-format ingestion, node features and fold planning.
//!
//! The TU layout is a set of text files sharing a dataset prefix:
//! `{name}_A.txt` (1-based `i, j` edges over all nodes),
//! `{name}_graph_indicator.txt` (1-based graph id per node),
//! `{name}_graph_labels.txt` (one label per graph) and optionally
//! `{name}_node_labels.txt`. Edge labels and weights are ignored.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

/// Degree buckets for unlabeled datasets: `min(degree, 63)`.
pub const MAX_DEGREE_BUCKET: usize = 63;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file}:{line}: {message}")]
    Integrity {
        file: String,
        line: usize,
        message: String,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("invalid fold request: {0}")]
    Folds(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    NodeLabelOneHot,
    DegreeOneHot,
    Constant,
}

/// Undirected graph with dense 0/1 adjacency and node features.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub adjacency: Tensor,
    pub features: Tensor,
    pub label: usize,
}

impl Graph {
    /// Builds a graph from an undirected edge list. Duplicate and reversed
    /// edges collapse; self-loops are rejected.
    pub fn from_edges(
        n: usize,
        edges: &[(usize, usize)],
        features: Tensor,
        label: usize,
    ) -> Result<Self, DataError> {
        if features.rows() != n {
            return Err(DataError::Invalid(format!(
                "{} feature rows for {n} nodes",
                features.rows()
            )));
        }
        let mut adjacency = Tensor::zeros(n, n);
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(DataError::Invalid(format!("edge ({u}, {v}) outside {n} nodes")));
            }
            if u == v {
                return Err(DataError::Invalid(format!("self-loop on node {u}")));
            }
            adjacency.set(u, v, 1.0);
            adjacency.set(v, u, 1.0);
        }
        Ok(Self {
            adjacency,
            features,
            label,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn num_edges(&self) -> usize {
        (self.adjacency.sum() / 2.0).round() as usize
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes())
            .map(|i| self.adjacency.row(i).iter().filter(|&&v| v != 0.0).count())
            .collect()
    }

    /// Undirected edges `(u, v)` with `u < v`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.num_nodes();
        let mut out = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if self.adjacency.get(u, v) != 0.0 {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Relabels nodes so that new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Graph {
        let n = self.num_nodes();
        let adjacency = Tensor::from_fn(n, n, |i, j| self.adjacency.get(perm[i], perm[j]));
        let features = Tensor::from_fn(n, self.features.cols(), |i, j| {
            self.features.get(perm[i], j)
        });
        Graph {
            adjacency,
            features,
            label: self.label,
        }
    }
}

/// One-hot degree features with buckets `0..=MAX_DEGREE_BUCKET`.
pub fn degree_one_hot(adjacency: &Tensor) -> Tensor {
    let n = adjacency.rows();
    let mut x = Tensor::zeros(n, MAX_DEGREE_BUCKET + 1);
    for i in 0..n {
        let d = adjacency.row(i).iter().filter(|&&v| v != 0.0).count();
        x.set(i, d.min(MAX_DEGREE_BUCKET), 1.0);
    }
    x
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub feature_mode: FeatureMode,
}

impl Dataset {
    /// Checks the dataset invariants: non-empty, labels in range, every graph
    /// non-empty with symmetric zero-diagonal 0/1 adjacency and `feature_dim`
    /// columns.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.graphs.is_empty() {
            return Err(DataError::Invalid("dataset has no graphs".into()));
        }
        for (gi, g) in self.graphs.iter().enumerate() {
            let n = g.num_nodes();
            if n == 0 {
                return Err(DataError::Invalid(format!("graph {gi} has no nodes")));
            }
            if g.label >= self.num_classes {
                return Err(DataError::Invalid(format!(
                    "graph {gi} label {} >= {} classes",
                    g.label, self.num_classes
                )));
            }
            if g.features.shape() != (n, self.feature_dim) {
                return Err(DataError::Invalid(format!(
                    "graph {gi} features {:?}, expected ({n}, {})",
                    g.features.shape(),
                    self.feature_dim
                )));
            }
            for i in 0..n {
                if g.adjacency.get(i, i) != 0.0 {
                    return Err(DataError::Invalid(format!("graph {gi} has a self-loop at {i}")));
                }
                for j in 0..n {
                    let v = g.adjacency.get(i, j);
                    if (v != 0.0 && v != 1.0) || v != g.adjacency.get(j, i) {
                        return Err(DataError::Invalid(format!(
                            "graph {gi} adjacency not symmetric 0/1 at ({i}, {j})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.label).collect()
    }

    /// Subset by graph index, preserving the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            graphs: indices.iter().map(|&i| self.graphs[i].clone()).collect(),
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
            feature_mode: self.feature_mode,
        }
    }

    /// Seeded class-stratified sample of `size` graphs, in ascending original
    /// index order.
    pub fn stratified_subset(&self, size: usize, seed: u64) -> Dataset {
        if size >= self.graphs.len() {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.num_classes];
        for (i, g) in self.graphs.iter().enumerate() {
            by_class[g.label].push(i);
        }
        for c in &mut by_class {
            c.shuffle(&mut rng);
        }
        // largest-remainder allocation keeps class proportions
        let total = self.graphs.len() as f64;
        let mut quota: Vec<(usize, f64)> = by_class
            .iter()
            .map(|c| {
                let exact = c.len() as f64 * size as f64 / total;
                (exact.floor() as usize, exact - exact.floor())
            })
            .collect();
        let mut assigned: usize = quota.iter().map(|q| q.0).sum();
        let mut order: Vec<usize> = (0..quota.len()).collect();
        order.sort_by(|&a, &b| quota[b].1.total_cmp(&quota[a].1).then(a.cmp(&b)));
        for &c in order.iter().cycle() {
            if assigned >= size {
                break;
            }
            if quota[c].0 < by_class[c].len() {
                quota[c].0 += 1;
                assigned += 1;
            }
        }
        let mut picked: Vec<usize> = by_class
            .iter()
            .zip(&quota)
            .flat_map(|(c, q)| c[..q.0].iter().copied())
            .collect();
        picked.sort_unstable();
        self.subset(&picked)
    }
}

/// Reads a TU dataset from `dir`, choosing node-label one-hot features when
/// node labels exist and degree one-hot features otherwise.
pub fn load_tu_dataset(dir: &Path, name: &str) -> Result<Dataset, DataError> {
    load_tu_dataset_with(dir, name, None)
}

pub fn load_tu_dataset_with(
    dir: &Path,
    name: &str,
    mode: Option<FeatureMode>,
) -> Result<Dataset, DataError> {
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));

    let indicator_path = file("graph_indicator");
    let indicator = parse_ints(&indicator_path, 1)?;
    let labels_path = file("graph_labels");
    let raw_labels = parse_ints(&labels_path, 1)?;
    let edges_path = file("A");
    let edges = parse_ints(&edges_path, 2)?;
    let node_labels_path = file("node_labels");
    let node_labels = if node_labels_path.exists() {
        Some(parse_ints(&node_labels_path, 1)?)
    } else {
        None
    };

    let num_nodes = indicator.len();
    let num_graphs = raw_labels.len();
    if num_graphs == 0 {
        return Err(DataError::Invalid(format!("{} is empty", labels_path.display())));
    }

    // node -> (graph, local index)
    let mut sizes = vec![0usize; num_graphs];
    let mut local = Vec::with_capacity(num_nodes);
    let fname = |p: &Path| p.file_name().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    for (line, row) in indicator.iter().enumerate() {
        let gid = row[0];
        if gid < 1 || gid as usize > num_graphs {
            return Err(DataError::Integrity {
                file: fname(&indicator_path),
                line: line + 1,
                message: format!("graph id {gid} outside 1..={num_graphs}"),
            });
        }
        let g = gid as usize - 1;
        local.push((g, sizes[g]));
        sizes[g] += 1;
    }
    if let Some(g) = sizes.iter().position(|&s| s == 0) {
        return Err(DataError::Invalid(format!("graph {} has no nodes", g + 1)));
    }

    let mut adjacency: Vec<Tensor> = sizes.iter().map(|&n| Tensor::zeros(n, n)).collect();
    for (line, row) in edges.iter().enumerate() {
        let integrity = |message: String| DataError::Integrity {
            file: fname(&edges_path),
            line: line + 1,
            message,
        };
        let (u, v) = (row[0], row[1]);
        for node in [u, v] {
            if node < 1 || node as usize > num_nodes {
                return Err(integrity(format!("node {node} outside 1..={num_nodes}")));
            }
        }
        let (gu, iu) = local[u as usize - 1];
        let (gv, iv) = local[v as usize - 1];
        if gu != gv {
            return Err(integrity(format!(
                "edge ({u}, {v}) joins graph {} and graph {}",
                gu + 1,
                gv + 1
            )));
        }
        if iu != iv {
            adjacency[gu].set(iu, iv, 1.0);
            adjacency[gu].set(iv, iu, 1.0);
        }
    }

    // first-seen order for graph labels
    let mut label_map: Vec<i64> = Vec::new();
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|r| match label_map.iter().position(|&l| l == r[0]) {
            Some(i) => i,
            None => {
                label_map.push(r[0]);
                label_map.len() - 1
            }
        })
        .collect();

    let mode = mode.unwrap_or(if node_labels.is_some() {
        FeatureMode::NodeLabelOneHot
    } else {
        FeatureMode::DegreeOneHot
    });

    let features: Vec<Tensor> = match mode {
        FeatureMode::NodeLabelOneHot => {
            let Some(node_labels) = &node_labels else {
                return Err(DataError::Invalid(format!(
                    "node-label features requested but {} is missing",
                    node_labels_path.display()
                )));
            };
            if node_labels.len() != num_nodes {
                return Err(DataError::Invalid(format!(
                    "{} has {} lines, expected {num_nodes}",
                    node_labels_path.display(),
                    node_labels.len()
                )));
            }
            let distinct: BTreeMap<i64, usize> = {
                let mut vals: Vec<i64> = node_labels.iter().map(|r| r[0]).collect();
                vals.sort_unstable();
                vals.dedup();
                vals.into_iter().enumerate().map(|(i, v)| (v, i)).collect()
            };
            let d = distinct.len();
            let mut feats: Vec<Tensor> = sizes.iter().map(|&n| Tensor::zeros(n, d)).collect();
            for (node, row) in node_labels.iter().enumerate() {
                let (g, i) = local[node];
                feats[g].set(i, distinct[&row[0]], 1.0);
            }
            feats
        }
        FeatureMode::DegreeOneHot => adjacency.iter().map(degree_one_hot).collect(),
        FeatureMode::Constant => sizes.iter().map(|&n| Tensor::filled(n, 1, 1.0)).collect(),
    };
    let feature_dim = features[0].cols();

    let graphs = adjacency
        .into_iter()
        .zip(features)
        .zip(labels)
        .map(|((adjacency, features), label)| Graph {
            adjacency,
            features,
            label,
        })
        .collect();
    let ds = Dataset {
        name: name.to_string(),
        graphs,
        num_classes: label_map.len(),
        feature_dim,
        feature_mode: mode,
    };
    ds.validate()?;
    Ok(ds)
}

/// Parses lines of `width` comma/whitespace separated integers. Blank lines
/// are skipped.
fn parse_ints(path: &Path, width: usize) -> Result<Vec<Vec<i64>>, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file = path
        .file_name()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .collect();
        if toks.len() < width {
            return Err(DataError::Parse {
                file: file.clone(),
                line: i + 1,
                message: format!("expected {width} values, found {}", toks.len()),
            });
        }
        let mut row = Vec::with_capacity(width);
        for tok in &toks[..width] {
            let v = tok.parse::<i64>().map_err(|_| DataError::Parse {
                file: file.clone(),
                line: i + 1,
                message: format!("not an integer: {tok:?}"),
            })?;
            row.push(v);
        }
        out.push(row);
    }
    Ok(out)
}

/// Per-graph fold index for k-fold cross-validation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Class-stratified k-fold plan: graphs are shuffled with `seed`, grouped by
/// class, and dealt round-robin over the folds with one running counter so
/// fold sizes differ by at most one.
pub fn make_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldPlan, DataError> {
    let n = dataset.graphs.len();
    if k < 2 || k > n {
        return Err(DataError::Folds(format!("k = {k} must be in 2..={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by_key(|&i| dataset.graphs[i].label);
    let mut assignments = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignments[i] = pos % k;
    }
    Ok(FoldPlan {
        k,
        assignments,
        seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub name: String,
    pub graphs: usize,
    pub max_nodes: usize,
    pub mean_nodes: f64,
    pub total_nodes: usize,
    pub total_edges: usize,
    pub mean_degree: f64,
    pub num_classes: usize,
    pub class_histogram: Vec<usize>,
    pub feature_dim: usize,
    pub feature_mode: FeatureMode,
}

pub fn graph_stats(dataset: &Dataset) -> GraphStats {
    let total_nodes: usize = dataset.graphs.iter().map(Graph::num_nodes).sum();
    let total_edges: usize = dataset.graphs.iter().map(Graph::num_edges).sum();
    let mut class_histogram = vec![0; dataset.num_classes];
    for g in &dataset.graphs {
        class_histogram[g.label] += 1;
    }
    let graphs = dataset.graphs.len();
    GraphStats {
        name: dataset.name.clone(),
        graphs,
        max_nodes: dataset.graphs.iter().map(Graph::num_nodes).max().unwrap_or(0),
        mean_nodes: if graphs == 0 {
            0.0
        } else {
            total_nodes as f64 / graphs as f64
        },
        total_nodes,
        total_edges,
        mean_degree: if total_nodes == 0 {
            0.0
        } else {
            2.0 * total_edges as f64 / total_nodes as f64
        },
        num_classes: dataset.num_classes,
        class_histogram,
        feature_dim: dataset.feature_dim,
        feature_mode: dataset.feature_mode,
    }
}
