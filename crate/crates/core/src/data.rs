//! TU-format datasets, node features, batching and cross-validation folds.
//!
//! A TU dataset `<name>` lives in a directory holding
//!
//! - `<name>_A.txt`: one `i, j` pair per line, 1-indexed global node ids
//! - `<name>_graph_indicator.txt`: the 1-indexed graph id of every node
//! - `<name>_graph_labels.txt`: one integer label per graph
//! - `<name>_node_labels.txt` (optional): one integer label per node
//!
//! Lines may end in LF or CRLF; trailing blank lines are ignored.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EigenDecomposition, Graph};
use crate::scalar::Real;
use crate::sparse::CsrMatrix;
use crate::tensor::Tensor;

/// Degree one-hot width is `cap + 1`.
pub const DEFAULT_DEGREE_CAP: usize = 64;
pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// Node-labelled graphs (molecules, proteins).
    Bioinformatic,
    /// Unlabelled graphs; node features come from degrees.
    Social,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DegreeEncoding {
    /// One-hot of `min(degree, cap)`, width `cap + 1`.
    OneHot,
    /// A single column holding the raw degree.
    Raw,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub provenance: Provenance,
    /// Raw integer node labels per graph, when the dataset has them.
    pub node_labels: Option<Vec<Vec<i64>>>,
    /// Original graph-label values; class `c` is `label_values[c]`.
    pub label_values: Vec<i64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(Graph::label).collect()
    }

    pub fn mean_nodes(&self) -> f64 {
        self.graphs
            .iter()
            .map(|g| g.num_nodes() as f64)
            .sum::<f64>()
            / self.len().max(1) as f64
    }

    pub fn mean_edges(&self) -> f64 {
        self.graphs
            .iter()
            .map(|g| g.num_edges() as f64)
            .sum::<f64>()
            / self.len().max(1) as f64
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for g in &self.graphs {
            c[g.label()] += 1;
        }
        c
    }

    /// Number of distinct raw node labels (0 if the dataset has none).
    pub fn node_label_alphabet(&self) -> Vec<i64> {
        let mut alphabet: Vec<i64> = self
            .node_labels
            .iter()
            .flatten()
            .flatten()
            .copied()
            .collect();
        alphabet.sort_unstable();
        alphabet.dedup();
        alphabet
    }

    pub fn subset(&self, idx: &[usize]) -> Vec<&Graph> {
        idx.iter().map(|&i| &self.graphs[i]).collect()
    }
}

/// Published statistics of a benchmark dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkInfo {
    pub name: &'static str,
    /// Directory and file prefix in the public TU distribution.
    pub tu_name: &'static str,
    pub graphs: usize,
    pub classes: usize,
    /// Node-label alphabet size; `None` for degree-featured datasets.
    pub node_labels: Option<usize>,
    pub avg_nodes: f64,
    pub avg_edges: f64,
}

pub const BENCHMARKS: [BenchmarkInfo; 7] = [
    BenchmarkInfo {
        name: "MUTAG",
        tu_name: "MUTAG",
        graphs: 188,
        classes: 2,
        node_labels: Some(7),
        avg_nodes: 17.93,
        avg_edges: 19.79,
    },
    BenchmarkInfo {
        name: "PTC",
        tu_name: "PTC_MR",
        graphs: 344,
        classes: 2,
        node_labels: Some(19),
        avg_nodes: 14.29,
        avg_edges: 14.69,
    },
    BenchmarkInfo {
        name: "NCI109",
        tu_name: "NCI109",
        graphs: 4127,
        classes: 2,
        node_labels: Some(38),
        avg_nodes: 29.68,
        avg_edges: 32.13,
    },
    BenchmarkInfo {
        name: "ENZYMES",
        tu_name: "ENZYMES",
        graphs: 600,
        classes: 6,
        node_labels: Some(3),
        avg_nodes: 32.63,
        avg_edges: 62.14,
    },
    BenchmarkInfo {
        name: "COLLAB",
        tu_name: "COLLAB",
        graphs: 5000,
        classes: 3,
        node_labels: None,
        avg_nodes: 74.49,
        avg_edges: 2457.78,
    },
    BenchmarkInfo {
        name: "IMDB-BINARY",
        tu_name: "IMDB-BINARY",
        graphs: 1000,
        classes: 2,
        node_labels: None,
        avg_nodes: 19.77,
        avg_edges: 96.53,
    },
    BenchmarkInfo {
        name: "IMDB-MULTI",
        tu_name: "IMDB-MULTI",
        graphs: 1500,
        classes: 3,
        node_labels: None,
        avg_nodes: 13.0,
        avg_edges: 65.94,
    },
];

/// Looks a benchmark up by its short name, TU name or a common alias
/// (`PTC_MR`, `IMDB-B`, `IMDB-M`), ignoring case.
pub fn benchmark(name: &str) -> Option<&'static BenchmarkInfo> {
    let n = name.to_ascii_uppercase();
    let n = match n.as_str() {
        "IMDB-B" | "IMDBBINARY" => "IMDB-BINARY",
        "IMDB-M" | "IMDBMULTI" => "IMDB-MULTI",
        other => other,
    };
    BENCHMARKS.iter().find(|b| b.name == n || b.tu_name == n)
}

/// Finds `name` under `root`, also trying the TU name of a known benchmark.
pub fn locate_dataset(root: &Path, name: &str) -> Option<(PathBuf, String)> {
    let mut candidates = vec![name.to_string()];
    if let Some(b) = benchmark(name) {
        candidates.push(b.tu_name.to_string());
        candidates.push(b.name.to_string());
    }
    candidates.into_iter().find_map(|c| {
        let dir = dataset_dir(root, &c);
        dir.join(format!("{c}_A.txt")).is_file().then_some((dir, c))
    })
}

/// Resolves `<root>/<name>/` when present, else `<root>/`.
pub fn dataset_dir(root: &Path, name: &str) -> PathBuf {
    let nested = root.join(name);
    if nested.join(format!("{name}_A.txt")).is_file() {
        nested
    } else {
        root.to_path_buf()
    }
}

/// Loads a TU dataset; node features are one-hot node labels when
/// available, otherwise one-hot degrees capped at [`DEFAULT_DEGREE_CAP`].
pub fn load_tu_dataset(root: &Path, name: &str) -> Result<Dataset> {
    let dir = dataset_dir(root, name);
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));

    let indicator_path = file("graph_indicator");
    let indicator = parse_lines(&indicator_path, parse_one)?;
    let labels_path = file("graph_labels");
    let graph_labels = parse_lines(&labels_path, parse_one)?;
    let edges_path = file("A");
    let edges = parse_lines(&edges_path, parse_pair)?;
    let node_labels_path = file("node_labels");
    let node_labels = if node_labels_path.is_file() {
        Some(parse_lines(&node_labels_path, |s| {
            // some TU files carry extra comma-separated columns; the first is the label
            parse_one(s.split(',').next().unwrap_or(s))
        })?)
    } else {
        None
    };

    let num_nodes = indicator.len();
    let num_graphs = indicator.iter().map(|(_, g)| *g).max().unwrap_or(0);
    if num_graphs <= 0 {
        return Err(Error::Format {
            file: indicator_path,
            line: 1,
            msg: "no graphs".into(),
        });
    }
    let num_graphs = num_graphs as usize;
    if graph_labels.len() != num_graphs {
        return Err(Error::Format {
            file: labels_path,
            line: graph_labels.len() + 1,
            msg: format!(
                "{} graph labels for {num_graphs} graphs",
                graph_labels.len()
            ),
        });
    }
    if let Some(nl) = &node_labels {
        if nl.len() != num_nodes {
            return Err(Error::Format {
                file: node_labels_path.clone(),
                line: nl.len() + 1,
                msg: format!("{} node labels for {num_nodes} nodes", nl.len()),
            });
        }
    }

    // graph of each node and its index inside that graph
    let mut graph_of = Vec::with_capacity(num_nodes);
    let mut local = Vec::with_capacity(num_nodes);
    let mut sizes = vec![0usize; num_graphs];
    for (line, g) in &indicator {
        if *g < 1 {
            return Err(Error::Format {
                file: indicator_path.clone(),
                line: *line,
                msg: format!("graph id {g} is not 1-indexed"),
            });
        }
        let g = *g as usize - 1;
        graph_of.push(g);
        local.push(sizes[g]);
        sizes[g] += 1;
    }
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Format {
            file: indicator_path,
            line: 0,
            msg: format!("graph {} has no nodes", empty + 1),
        });
    }

    let mut per_graph_edges = vec![Vec::new(); num_graphs];
    for (line, (a, b)) in &edges {
        let check = |v: i64| -> Result<usize> {
            if v < 1 || v as usize > num_nodes {
                return Err(Error::Format {
                    file: edges_path.clone(),
                    line: *line,
                    msg: format!("node id {v} outside 1..={num_nodes}"),
                });
            }
            Ok(v as usize - 1)
        };
        let (a, b) = (check(*a)?, check(*b)?);
        if graph_of[a] != graph_of[b] {
            return Err(Error::Format {
                file: edges_path.clone(),
                line: *line,
                msg: format!(
                    "edge joins graph {} and graph {}",
                    graph_of[a] + 1,
                    graph_of[b] + 1
                ),
            });
        }
        per_graph_edges[graph_of[a]].push((local[a], local[b]));
    }

    let mut label_values: Vec<i64> = graph_labels.iter().map(|(_, l)| *l).collect();
    label_values.sort_unstable();
    label_values.dedup();
    let class_of: BTreeMap<i64, usize> = label_values
        .iter()
        .enumerate()
        .map(|(i, v)| (*v, i))
        .collect();

    let mut graphs = Vec::with_capacity(num_graphs);
    for (g, edges) in per_graph_edges.iter().enumerate() {
        let n = sizes[g];
        let graph = Graph::new(n, edges, Tensor::ones(n, 1), class_of[&graph_labels[g].1])?;
        graphs.push(graph);
    }

    let node_labels = node_labels.map(|nl| {
        let mut per = vec![Vec::new(); num_graphs];
        for (i, (_, v)) in nl.into_iter().enumerate() {
            per[graph_of[i]].push(v);
        }
        per
    });
    let provenance = if node_labels.is_some() {
        Provenance::Bioinformatic
    } else {
        Provenance::Social
    };
    let ds = Dataset {
        name: name.to_string(),
        graphs,
        num_classes: label_values.len(),
        feature_dim: 1,
        provenance,
        node_labels,
        label_values,
    };
    one_hot_node_features(&ds)
}

fn parse_one(s: &str) -> std::result::Result<i64, String> {
    let t = s.trim();
    t.parse::<i64>()
        .or_else(|_| {
            // tolerate integral floats such as "1.0"
            t.parse::<f64>()
                .ok()
                .filter(|f| f.fract() == 0.0)
                .map(|f| f as i64)
                .ok_or(())
        })
        .map_err(|_| format!("expected an integer, found {t:?}"))
}

fn parse_pair(s: &str) -> std::result::Result<(i64, i64), String> {
    let mut it = s.split(',');
    match (it.next(), it.next(), it.next()) {
        (Some(a), Some(b), None) => Ok((parse_one(a)?, parse_one(b)?)),
        _ => Err(format!("expected \"i, j\", found {:?}", s.trim())),
    }
}

/// Parses every non-blank line; returns `(line_number, value)` pairs.
/// Blank lines are only allowed at the end of the file.
fn parse_lines<V>(
    path: &Path,
    parse: impl Fn(&str) -> std::result::Result<V, String>,
) -> Result<Vec<(usize, V)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
    let last = lines
        .iter()
        .rposition(|l| !l.trim().is_empty())
        .map_or(0, |i| i + 1);
    let mut out = Vec::with_capacity(last);
    for (i, line) in lines[..last].iter().enumerate() {
        let v = parse(line).map_err(|msg| Error::Format {
            file: path.to_path_buf(),
            line: i + 1,
            msg,
        })?;
        out.push((i + 1, v));
    }
    Ok(out)
}

/// Writes a dataset back in TU layout under `dir` (created if missing).
pub fn write_tu_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut a = String::new();
    let mut ind = String::new();
    let mut labels = String::new();
    let mut nl = String::new();
    let mut offset = 0;
    for (gi, g) in ds.graphs.iter().enumerate() {
        for _ in 0..g.num_nodes() {
            ind.push_str(&format!("{}\n", gi + 1));
        }
        for &(i, j) in g.edges() {
            a.push_str(&format!("{}, {}\n", offset + i + 1, offset + j + 1));
            a.push_str(&format!("{}, {}\n", offset + j + 1, offset + i + 1));
        }
        labels.push_str(&format!("{}\n", ds.label_values[g.label()]));
        if let Some(node_labels) = &ds.node_labels {
            for v in &node_labels[gi] {
                nl.push_str(&format!("{v}\n"));
            }
        }
        offset += g.num_nodes();
    }
    let name = &ds.name;
    let write = |suffix: &str, body: &str| {
        let p = dir.join(format!("{name}_{suffix}.txt"));
        fs::write(&p, body).map_err(|e| Error::io(p, e))
    };
    write("A", &a)?;
    write("graph_indicator", &ind)?;
    write("graph_labels", &labels)?;
    if ds.node_labels.is_some() {
        write("node_labels", &nl)?;
    }
    Ok(())
}

/// One-hot node-label features over the dataset-wide label alphabet.
/// Datasets without node labels fall through to degree features.
pub fn one_hot_node_features(ds: &Dataset) -> Result<Dataset> {
    let Some(node_labels) = &ds.node_labels else {
        return degree_node_features(ds, DEFAULT_DEGREE_CAP);
    };
    let alphabet = ds.node_label_alphabet();
    let pos: BTreeMap<i64, usize> = alphabet.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let d = alphabet.len().max(1);
    let graphs = ds
        .graphs
        .iter()
        .zip(node_labels)
        .map(|(g, labels)| {
            let mut x = Tensor::zeros(g.num_nodes(), d);
            for (r, v) in labels.iter().enumerate() {
                x.set(r, pos[v], 1.0);
            }
            g.with_features(x)
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        graphs,
        feature_dim: d,
        ..ds.clone()
    })
}

/// One-hot of `min(degree, cap)`; width `cap + 1`.
pub fn degree_node_features(ds: &Dataset, cap: usize) -> Result<Dataset> {
    degree_node_features_with(ds, cap, DegreeEncoding::OneHot)
}

pub fn degree_node_features_with(
    ds: &Dataset,
    cap: usize,
    encoding: DegreeEncoding,
) -> Result<Dataset> {
    let d = match encoding {
        DegreeEncoding::OneHot => cap + 1,
        DegreeEncoding::Raw => 1,
    };
    let graphs = ds
        .graphs
        .iter()
        .map(|g| g.with_features(degree_features(g, cap, encoding)))
        .collect::<Result<_>>()?;
    Ok(Dataset {
        graphs,
        feature_dim: d,
        ..ds.clone()
    })
}

pub fn degree_features(g: &Graph, cap: usize, encoding: DegreeEncoding) -> Tensor<f64> {
    let deg = g.degrees();
    match encoding {
        DegreeEncoding::OneHot => {
            let mut x = Tensor::zeros(g.num_nodes(), cap + 1);
            for (r, d) in deg.iter().enumerate() {
                x.set(r, (*d).min(cap), 1.0);
            }
            x
        }
        DegreeEncoding::Raw => {
            Tensor::new(g.num_nodes(), 1, deg.iter().map(|&d| d as f64).collect())
                .expect("one column per node")
        }
    }
}

/// Disjoint covering index sets for k-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Sorted dataset indices of each fold.
    pub folds: Vec<Vec<usize>>,
    /// False when some class was too small and plain shuffled folds were used.
    pub stratified: bool,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        idx.sort_unstable();
        idx
    }
}

pub fn stratified_folds(ds: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    stratified_folds_for_labels(&ds.labels(), k, seed)
}

/// Seeded shuffle within each class, then round-robin assignment that
/// carries over between classes so fold sizes differ by at most one.
pub fn stratified_folds_for_labels(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::param(format!("need at least 2 folds, got {k}")));
    }
    if labels.len() < k {
        return Err(Error::param(format!(
            "{} items cannot fill {k} folds",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let stratified = by_class.iter().all(|c| c.is_empty() || c.len() >= k);
    let order: Vec<usize> = if stratified {
        by_class
            .into_iter()
            .flat_map(|mut c| {
                c.shuffle(&mut rng);
                c
            })
            .collect()
    } else {
        log::warn!("a class has fewer than {k} members; using unstratified folds");
        let mut all: Vec<usize> = (0..labels.len()).collect();
        all.shuffle(&mut rng);
        all
    };
    let mut folds = vec![Vec::new(); k];
    for (pos, idx) in order.into_iter().enumerate() {
        folds[pos % k].push(idx);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(FoldPlan {
        k,
        seed,
        folds,
        stratified,
    })
}

/// How each graph's Laplacian is scaled before batching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LambdaMode {
    Fixed(f64),
    /// Per-graph largest eigenvalue.
    Exact,
}

impl Default for LambdaMode {
    fn default() -> Self {
        LambdaMode::Fixed(2.0)
    }
}

/// Several graphs packed as one disconnected graph.
#[derive(Debug, Clone)]
pub struct GraphBatch<T> {
    /// Block-diagonal scaled Laplacian over all nodes.
    pub laplacian: Arc<CsrMatrix<T>>,
    /// Stacked node features.
    pub features: Tensor<T>,
    /// Graph index of every node; contiguous runs.
    pub segment_ids: Arc<[usize]>,
    pub labels: Vec<usize>,
    pub num_graphs: usize,
}

impl<T: Real> GraphBatch<T> {
    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    /// Node range of graph `g`.
    pub fn node_range(&self, g: usize) -> std::ops::Range<usize> {
        let start = self.segment_ids.partition_point(|&s| s < g);
        let end = self.segment_ids.partition_point(|&s| s <= g);
        start..end
    }

    /// Eigenvalues of the batch operator (dense; small batches only).
    pub fn spectrum(&self) -> Result<Vec<f64>> {
        let n = self.laplacian.rows();
        let dense = self
            .laplacian
            .to_dense()
            .into_iter()
            .map(|v| v.to_f64_lossy())
            .collect();
        Ok(EigenDecomposition::of_symmetric(&Tensor::new(n, n, dense)?)?.eigenvalues)
    }
}

pub fn make_batch<T: Real>(graphs: &[&Graph]) -> Result<GraphBatch<T>> {
    make_batch_with(graphs, LambdaMode::default())
}

pub fn make_batch_with<T: Real>(graphs: &[&Graph], lambda: LambdaMode) -> Result<GraphBatch<T>> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::shape("cannot batch zero graphs"))?;
    let d = first.feature_dim();
    let mut ops = Vec::with_capacity(graphs.len());
    let mut segment_ids = Vec::new();
    let mut rows = Vec::new();
    for (i, g) in graphs.iter().enumerate() {
        if g.feature_dim() != d {
            return Err(Error::shape(format!(
                "graph {i} has {} feature columns, expected {d}",
                g.feature_dim()
            )));
        }
        let l = g.normalized_laplacian();
        let scaled = match lambda {
            LambdaMode::Fixed(lm) => l.scale(lm)?,
            LambdaMode::Exact => l.scale_exact()?,
        };
        ops.push(scaled.matrix().cast::<T>());
        segment_ids.extend(std::iter::repeat_n(i, g.num_nodes()));
        rows.extend(g.features().data().iter().map(|v| T::from_f64_lossy(*v)));
    }
    let refs: Vec<&CsrMatrix<T>> = ops.iter().collect();
    let n = segment_ids.len();
    Ok(GraphBatch {
        laplacian: Arc::new(CsrMatrix::block_diag(&refs)),
        features: Tensor::new(n, d, rows)?,
        segment_ids: segment_ids.into(),
        labels: graphs.iter().map(|g| g.label()).collect(),
        num_graphs: graphs.len(),
    })
}
