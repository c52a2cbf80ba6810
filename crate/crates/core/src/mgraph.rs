//! Multiplex graph data model.
//!
//! A [`MultiplexGraph`] is one node set with `r` undirected edge sets (views),
//! each stored as a symmetric CSR without self-loops, plus a shared feature
//! matrix and one class label per node. This module also owns the on-disk
//! dataset format, the synthetic generators, the split machinery of the
//! production protocol and the neighbor-fetch accounting used by benchmarks.

use std::collections::{BTreeSet, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numkit::Matrix;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("missing dataset file {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}:{line}: parse error: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("{file}:{line}: node index {index} out of range for {n} nodes")]
    IndexOutOfRange {
        file: String,
        line: usize,
        index: usize,
        n: usize,
    },
    #[error("features.csv has {found} rows, expected {expected}")]
    FeatureRows { expected: usize, found: usize },
    #[error("features.csv line {line} has {found} columns, expected {expected}")]
    FeatureCols {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("label {label} of node {node} outside [0, {k})")]
    LabelOutOfRange { node: usize, label: usize, k: usize },
    #[error("labels.csv has {found} rows, expected {expected}")]
    LabelRows { expected: usize, found: usize },
    #[error("invalid split: {0}")]
    Split(String),
    #[error("invalid generator spec: {0}")]
    Spec(String),
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("json error in {file}: {source}")]
    Json {
        file: String,
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Compressed sparse row adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Csr {
    pub fn empty(n: usize) -> Self {
        Self {
            offsets: vec![0; n + 1],
            indices: Vec::new(),
        }
    }

    /// Undirected adjacency from an edge list: symmetrized, deduplicated,
    /// self-loops dropped, neighbor lists sorted.
    pub fn from_undirected_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut lists = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(GraphError::Invalid(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u != v {
                lists[u].push(v);
                lists[v].push(u);
            }
        }
        Ok(Self::from_lists(lists))
    }

    /// Adjacency from per-node neighbor lists, taken as given apart from
    /// sorting and deduplication. Used for sampled (directed) computation graphs.
    pub fn from_lists(mut lists: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for l in lists.iter_mut() {
            l.sort_unstable();
            l.dedup();
            indices.extend_from_slice(l);
            offsets.push(indices.len());
        }
        Self { offsets, indices }
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.indices[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Number of stored (directed) entries.
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Undirected edge count of a symmetric adjacency.
    pub fn num_edges(&self) -> usize {
        self.indices.len() / 2
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.num_nodes()).all(|u| self.neighbors(u).iter().all(|&v| self.has_edge(v, u)))
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in CSR order.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        (0..self.num_nodes())
            .flat_map(|u| {
                self.neighbors(u)
                    .iter()
                    .filter(move |&&v| u < v)
                    .map(move |&v| (u, v))
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if self.offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(GraphError::Invalid("CSR offsets not monotone".into()));
        }
        for u in 0..n {
            for &v in self.neighbors(u) {
                if v >= n {
                    return Err(GraphError::Invalid(format!("column index {v} >= {n}")));
                }
                if v == u {
                    return Err(GraphError::Invalid(format!("self-loop at {u}")));
                }
            }
        }
        if !self.is_symmetric() {
            return Err(GraphError::Invalid("adjacency is not symmetric".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiplexGraph {
    views: Vec<Csr>,
    view_names: Vec<String>,
    features: Matrix,
    labels: Vec<usize>,
    k: usize,
}

impl MultiplexGraph {
    pub fn new(
        views: Vec<Csr>,
        view_names: Vec<String>,
        features: Matrix,
        labels: Vec<usize>,
        k: usize,
    ) -> Result<Self> {
        let n = features.rows();
        if views.is_empty() {
            return Err(GraphError::Invalid("a multiplex graph needs at least one view".into()));
        }
        if view_names.len() != views.len() {
            return Err(GraphError::Invalid("one name per view required".into()));
        }
        if labels.len() != n {
            return Err(GraphError::LabelRows {
                expected: n,
                found: labels.len(),
            });
        }
        if let Some((node, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(GraphError::LabelOutOfRange { node, label, k });
        }
        for v in &views {
            if v.num_nodes() != n {
                return Err(GraphError::Invalid(format!(
                    "view has {} nodes, features have {n} rows",
                    v.num_nodes()
                )));
            }
            v.validate()?;
        }
        Ok(Self {
            views,
            view_names,
            features,
            labels,
            k,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn views(&self) -> &[Csr] {
        &self.views
    }

    pub fn view(&self, i: usize) -> &Csr {
        &self.views[i]
    }

    pub fn view_names(&self) -> &[String] {
        &self.view_names
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn edge_counts(&self) -> Vec<usize> {
        self.views.iter().map(Csr::num_edges).collect()
    }

    /// Same nodes, features and labels with every view replaced.
    pub fn with_views(&self, views: Vec<Csr>) -> Result<Self> {
        Self::new(
            views,
            self.view_names.clone(),
            self.features.clone(),
            self.labels.clone(),
            self.k,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (name, set) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if set.is_empty() {
                return Err(GraphError::Split(format!("{name} set is empty")));
            }
            for &v in set {
                if v >= n {
                    return Err(GraphError::Split(format!("{name} index {v} >= {n}")));
                }
                if seen[v] {
                    return Err(GraphError::Split(format!("node {v} appears twice")));
                }
                seen[v] = true;
            }
        }
        Ok(())
    }
}

/// The test set partitioned into observed (transductive) and inductive nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductionSplit {
    pub base: SplitSpec,
    pub obs: Vec<usize>,
    pub ind: Vec<usize>,
    pub ind_fraction: f64,
}

impl ProductionSplit {
    /// Draws `round(ind_fraction · |test|)` inductive nodes uniformly from the
    /// test set. Both halves come back sorted.
    pub fn new(base: SplitSpec, ind_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&ind_fraction) {
            return Err(GraphError::Split(format!(
                "ind_fraction {ind_fraction} outside [0, 1]"
            )));
        }
        let mut test = base.test.clone();
        test.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        test.shuffle(&mut rng);
        let n_ind = (ind_fraction * test.len() as f64).round() as usize;
        let mut ind = test[..n_ind].to_vec();
        let mut obs = test[n_ind..].to_vec();
        ind.sort_unstable();
        obs.sort_unstable();
        Ok(Self {
            base,
            obs,
            ind,
            ind_fraction,
        })
    }

    /// Every node outside the inductive set: labeled, validation, observed
    /// test nodes and any node not assigned to a split.
    pub fn visible_nodes(&self, n: usize) -> Vec<usize> {
        let ind: BTreeSet<usize> = self.ind.iter().copied().collect();
        (0..n).filter(|v| !ind.contains(v)).collect()
    }
}

fn membership(n: usize, set: &[usize]) -> Vec<bool> {
    let mut mask = vec![false; n];
    for &v in set {
        if v < n {
            mask[v] = true;
        }
    }
    mask
}

/// Deletes, in every view, each edge with exactly one endpoint in `ind`.
pub fn remove_cross_edges(g: &MultiplexGraph, ind: &[usize]) -> MultiplexGraph {
    let mask = membership(g.num_nodes(), ind);
    let views = g
        .views
        .iter()
        .map(|csr| {
            let lists = (0..csr.num_nodes())
                .map(|u| {
                    csr.neighbors(u)
                        .iter()
                        .copied()
                        .filter(|&v| mask[u] == mask[v])
                        .collect()
                })
                .collect();
            Csr::from_lists(lists)
        })
        .collect();
    MultiplexGraph {
        views,
        view_names: g.view_names.clone(),
        features: g.features.clone(),
        labels: g.labels.clone(),
        k: g.k,
    }
}

/// Undirected edges, summed over views, with exactly one endpoint in `ind`.
pub fn count_cross_edges(g: &MultiplexGraph, ind: &[usize]) -> usize {
    let mask = membership(g.num_nodes(), ind);
    g.views
        .iter()
        .map(|csr| {
            csr.edge_list()
                .into_iter()
                .filter(|&(u, v)| mask[u] != mask[v])
                .count()
        })
        .sum()
}

/// Per-view neighbor lists of `node`: everything when `degree ≤ fanout`,
/// otherwise a uniform sample without replacement of size `fanout`. The
/// sample is a pure function of `(seed, node)`.
pub fn neighbor_sample(
    g: &MultiplexGraph,
    node: usize,
    fanout: usize,
    seed: u64,
) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(node as u64);
    g.views
        .iter()
        .map(|csr| sample_from(csr.neighbors(node), fanout, &mut rng))
        .collect()
}

pub(crate) fn sample_from(nbrs: &[usize], fanout: usize, rng: &mut impl Rng) -> Vec<usize> {
    let fanout = fanout.max(1);
    if nbrs.len() <= fanout {
        return nbrs.to_vec();
    }
    let mut picked: Vec<usize> = index::sample(rng, nbrs.len(), fanout)
        .into_iter()
        .map(|i| nbrs[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// The sorted node set an `layers`-layer multiplex GNN must read to infer
/// `targets`: one hop expands a node to itself plus its neighbors in every view.
pub fn fetched_nodes(g: &MultiplexGraph, targets: &[usize], layers: usize) -> Vec<usize> {
    let n = g.num_nodes();
    let mut seen = vec![false; n];
    let mut frontier = Vec::new();
    for &t in targets {
        if !seen[t] {
            seen[t] = true;
            frontier.push(t);
        }
    }
    for _ in 0..layers {
        let mut next = Vec::new();
        for &u in &frontier {
            for csr in &g.views {
                for &v in csr.neighbors(u) {
                    if !seen[v] {
                        seen[v] = true;
                        next.push(v);
                    }
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    (0..n).filter(|&v| seen[v]).collect()
}

pub fn count_fetched_nodes(g: &MultiplexGraph, targets: &[usize], layers: usize) -> usize {
    fetched_nodes(g, targets, layers.max(1)).len()
}

/// Views restricted to `nodes` (sorted, unique), re-indexed by position.
pub fn induced_views(g: &MultiplexGraph, nodes: &[usize]) -> Vec<Csr> {
    let mut local = vec![usize::MAX; g.num_nodes()];
    for (i, &v) in nodes.iter().enumerate() {
        local[v] = i;
    }
    g.views
        .iter()
        .map(|csr| {
            let lists = nodes
                .iter()
                .map(|&u| {
                    csr.neighbors(u)
                        .iter()
                        .filter_map(|&v| (local[v] != usize::MAX).then_some(local[v]))
                        .collect()
                })
                .collect();
            Csr::from_lists(lists)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// On-disk format

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub r: usize,
    pub d: usize,
    pub k: usize,
    pub view_names: Vec<String>,
}

fn read_file(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(GraphError::MissingFile(path));
    }
    fs::read_to_string(&path).map_err(|source| GraphError::Io { path, source })
}

fn write_file(path: PathBuf, contents: &str) -> Result<()> {
    fs::write(&path, contents).map_err(|source| GraphError::Io { path, source })
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, file: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|source| GraphError::Json {
        file: file.to_string(),
        source,
    })
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(MultiplexGraph, SplitSpec)> {
    let dir = dir.as_ref();
    let meta: DatasetMeta = parse_json(&read_file(dir, "meta.json")?, "meta.json")?;
    if meta.view_names.len() != meta.r {
        return Err(GraphError::Invalid(format!(
            "meta.json declares r = {} but {} view names",
            meta.r,
            meta.view_names.len()
        )));
    }
    let n = meta.n;

    let mut views = Vec::with_capacity(meta.r);
    for i in 0..meta.r {
        let file = format!("view_{i}.edges");
        let text = read_file(dir, &file)?;
        let mut edges = Vec::new();
        for (line, l) in data_lines(&text) {
            let mut parts = l.split_whitespace();
            let mut next = || -> Result<usize> {
                let tok = parts.next().ok_or_else(|| GraphError::Parse {
                    file: file.clone(),
                    line,
                    msg: "expected two node ids".into(),
                })?;
                let idx: usize = tok.parse().map_err(|_| GraphError::Parse {
                    file: file.clone(),
                    line,
                    msg: format!("bad node id {tok:?}"),
                })?;
                if idx >= n {
                    return Err(GraphError::IndexOutOfRange {
                        file: file.clone(),
                        line,
                        index: idx,
                        n,
                    });
                }
                Ok(idx)
            };
            let u = next()?;
            let v = next()?;
            edges.push((u, v));
        }
        views.push(Csr::from_undirected_edges(n, &edges)?);
    }

    let text = read_file(dir, "features.csv")?;
    let mut data = Vec::with_capacity(n * meta.d);
    let mut rows = 0;
    for (line, l) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if l.is_empty() && meta.d > 0 {
            continue;
        }
        let vals: Vec<&str> = if meta.d == 0 { Vec::new() } else { l.split(',').collect() };
        if vals.len() != meta.d {
            return Err(GraphError::FeatureCols {
                line,
                expected: meta.d,
                found: vals.len(),
            });
        }
        for tok in vals {
            data.push(tok.trim().parse::<f64>().map_err(|_| GraphError::Parse {
                file: "features.csv".into(),
                line,
                msg: format!("bad number {tok:?}"),
            })?);
        }
        rows += 1;
    }
    if rows != n {
        return Err(GraphError::FeatureRows {
            expected: n,
            found: rows,
        });
    }
    let features = Matrix::from_vec(n, meta.d, data).expect("row count checked");

    let text = read_file(dir, "labels.csv")?;
    let mut labels = Vec::with_capacity(n);
    for (line, l) in data_lines(&text) {
        let label: usize = l.parse().map_err(|_| GraphError::Parse {
            file: "labels.csv".into(),
            line,
            msg: format!("bad label {l:?}"),
        })?;
        if label >= meta.k {
            return Err(GraphError::LabelOutOfRange {
                node: labels.len(),
                label,
                k: meta.k,
            });
        }
        labels.push(label);
    }
    if labels.len() != n {
        return Err(GraphError::LabelRows {
            expected: n,
            found: labels.len(),
        });
    }

    let split: SplitSpec = parse_json(&read_file(dir, "splits.json")?, "splits.json")?;
    split.validate(n)?;
    let g = MultiplexGraph::new(views, meta.view_names, features, labels, meta.k)?;
    Ok((g, split))
}

/// Writes the dataset directory. Output is a pure function of the inputs.
pub fn save_dataset(g: &MultiplexGraph, split: &SplitSpec, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| GraphError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let meta = DatasetMeta {
        n: g.num_nodes(),
        r: g.num_views(),
        d: g.feature_dim(),
        k: g.k,
        view_names: g.view_names.clone(),
    };
    write_file(dir.join("meta.json"), &to_pretty_json(&meta))?;
    for (i, csr) in g.views.iter().enumerate() {
        let mut s = String::new();
        for (u, v) in csr.edge_list() {
            s.push_str(&format!("{u} {v}\n"));
        }
        write_file(dir.join(format!("view_{i}.edges")), &s)?;
    }
    let mut s = String::new();
    for v in 0..g.num_nodes() {
        let row: Vec<String> = g.features.row(v).iter().map(|x| format!("{x}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    write_file(dir.join("features.csv"), &s)?;
    let s: String = g.labels.iter().map(|l| format!("{l}\n")).collect();
    write_file(dir.join("labels.csv"), &s)?;
    write_file(dir.join("splits.json"), &to_pretty_json(split))?;
    Ok(())
}

pub(crate) fn to_pretty_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// Synthetic generators

fn default_train() -> f64 {
    0.1
}
fn default_val() -> f64 {
    0.1
}

/// Multiplex stochastic block model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmSpec {
    pub n: usize,
    pub k: usize,
    /// One k×k block-probability matrix per view.
    pub block_probs: Vec<Vec<Vec<f64>>>,
    pub d: usize,
    /// Distance between class means in feature space.
    pub signal: f64,
    pub seed: u64,
    #[serde(default = "default_train")]
    pub train_frac: f64,
    #[serde(default = "default_val")]
    pub val_frac: f64,
}

impl SbmSpec {
    pub fn r(&self) -> usize {
        self.block_probs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 {
            return Err(GraphError::Spec("n and k must be positive".into()));
        }
        if self.block_probs.is_empty() {
            return Err(GraphError::Spec("at least one view required".into()));
        }
        for (i, m) in self.block_probs.iter().enumerate() {
            if m.len() != self.k || m.iter().any(|row| row.len() != self.k) {
                return Err(GraphError::Spec(format!("view {i}: block matrix must be k×k")));
            }
            for row in m {
                check_probs(row)?;
            }
            for a in 0..self.k {
                for b in 0..self.k {
                    if m[a][b] != m[b][a] {
                        return Err(GraphError::Spec(format!(
                            "view {i}: block matrix must be symmetric"
                        )));
                    }
                }
            }
        }
        check_fractions(self.train_frac, self.val_frac)?;
        if !self.signal.is_finite() || self.signal < 0.0 {
            return Err(GraphError::Spec("signal must be finite and non-negative".into()));
        }
        Ok(())
    }
}

fn check_probs(ps: &[f64]) -> Result<()> {
    match ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        Some(p) => Err(GraphError::Spec(format!("probability {p} outside [0, 1]"))),
        None => Ok(()),
    }
}

fn check_fractions(train: f64, val: f64) -> Result<()> {
    if !(train > 0.0 && val > 0.0 && train + val < 1.0) {
        return Err(GraphError::Spec(format!(
            "train/val fractions ({train}, {val}) must be positive and leave room for test"
        )));
    }
    Ok(())
}

/// Two-view graph whose informative view depends on the node: view 0 is
/// assortative among group-A nodes and class-blind elsewhere; view 1 is the
/// mirror image for group B. One feature coordinate carries a noisy group
/// indicator so the right view can be inferred from features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroSpec {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub signal: f64,
    /// Same-class edge probability inside the informative group.
    pub p_in: f64,
    /// Cross-class edge probability inside the informative group.
    pub p_out: f64,
    /// Class-blind edge probability for every pair touching the other group.
    pub p_rand: f64,
    /// Fraction of nodes in group A.
    pub group_a_frac: f64,
    /// Mean of the group coordinate: `+group_signal` for A, `-group_signal` for B.
    pub group_signal: f64,
    pub seed: u64,
    #[serde(default = "default_train")]
    pub train_frac: f64,
    #[serde(default = "default_val")]
    pub val_frac: f64,
}

impl HeteroSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 {
            return Err(GraphError::Spec("n and k must be positive".into()));
        }
        check_probs(&[self.p_in, self.p_out, self.p_rand, self.group_a_frac])?;
        check_fractions(self.train_frac, self.val_frac)?;
        if self.d == 0 {
            return Err(GraphError::Spec("d must be positive".into()));
        }
        Ok(())
    }
}

/// Generator spec as stored in a JSON spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GeneratorSpec {
    Sbm(SbmSpec),
    Heterophilous(HeteroSpec),
}

impl GeneratorSpec {
    pub fn generate(&self) -> Result<(MultiplexGraph, SplitSpec)> {
        match self {
            GeneratorSpec::Sbm(s) => synth_multiplex_sbm(s),
            GeneratorSpec::Heterophilous(s) => make_heterophilous_views(s),
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            GeneratorSpec::Sbm(s) => s.seed,
            GeneratorSpec::Heterophilous(s) => s.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            GeneratorSpec::Sbm(s) => s.seed = seed,
            GeneratorSpec::Heterophilous(s) => s.seed = seed,
        }
    }
}

/// Stream ids keep the generator's random draws independent per purpose.
const STREAM_LABELS: u64 = 0;
const STREAM_FEATURES: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_GROUPS: u64 = 3;
const STREAM_VIEW0: u64 = 16;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn balanced_labels(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|v| v % k).collect();
    labels.shuffle(&mut rng_for(seed, STREAM_LABELS));
    labels
}

/// Class means one-hot scaled by `signal/√2` when `d ≥ k` (pairwise distance
/// exactly `signal`), random directions of the same norm otherwise.
fn class_means(k: usize, d: usize, signal: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let scale = signal / std::f64::consts::SQRT_2;
    (0..k)
        .map(|c| {
            if d >= k {
                (0..d).map(|j| if j == c { scale } else { 0.0 }).collect()
            } else {
                let raw: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                raw.iter().map(|x| x * scale / norm).collect()
            }
        })
        .collect()
}

fn gaussian_features(labels: &[usize], means: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Matrix {
    let d = means.first().map_or(0, Vec::len);
    Matrix::from_fn(labels.len(), d, |v, j| {
        let z: f64 = StandardNormal.sample(rng);
        means[labels[v]][j] + z
    })
}

/// Independent Bernoulli draws over every unordered node pair, grouped into
/// cells. Geometric skipping makes the cost proportional to the edges drawn.
fn sample_cell_edges(
    cells: &[Vec<usize>],
    prob: impl Fn(usize, usize) -> f64,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for a in 0..cells.len() {
        for b in a..cells.len() {
            let p = prob(a, b);
            if p <= 0.0 {
                continue;
            }
            let log_q = (1.0 - p).ln();
            let skip = |rng: &mut ChaCha8Rng| -> usize {
                if p >= 1.0 {
                    return 0;
                }
                let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
                (u.ln() / log_q).floor() as usize
            };
            let (ca, cb) = (&cells[a], &cells[b]);
            for (i, &u) in ca.iter().enumerate() {
                let start = if a == b { i + 1 } else { 0 };
                let mut j = start + skip(rng);
                while j < cb.len() {
                    edges.push((u, cb[j]));
                    j += 1 + skip(rng);
                }
            }
        }
    }
    edges
}

fn stratified_split(
    labels: &[usize],
    k: usize,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<SplitSpec> {
    let mut rng = rng_for(seed, STREAM_SPLIT);
    let mut split = SplitSpec {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for c in 0..k {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&v| labels[v] == c).collect();
        members.shuffle(&mut rng);
        let m = members.len();
        let n_train = ((train_frac * m as f64).round() as usize).min(m);
        let n_val = ((val_frac * m as f64).round() as usize).min(m - n_train);
        split.train.extend_from_slice(&members[..n_train]);
        split.val.extend_from_slice(&members[n_train..n_train + n_val]);
        split.test.extend_from_slice(&members[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    split.validate(labels.len())?;
    Ok(split)
}

pub fn synth_multiplex_sbm(spec: &SbmSpec) -> Result<(MultiplexGraph, SplitSpec)> {
    spec.validate()?;
    let labels = balanced_labels(spec.n, spec.k, spec.seed);
    let mut frng = rng_for(spec.seed, STREAM_FEATURES);
    let means = class_means(spec.k, spec.d, spec.signal, &mut frng);
    let features = gaussian_features(&labels, &means, &mut frng);
    let cells: Vec<Vec<usize>> = (0..spec.k)
        .map(|c| (0..spec.n).filter(|&v| labels[v] == c).collect())
        .collect();
    let mut views = Vec::with_capacity(spec.r());
    for (i, probs) in spec.block_probs.iter().enumerate() {
        let mut rng = rng_for(spec.seed, STREAM_VIEW0 + i as u64);
        let edges = sample_cell_edges(&cells, |a, b| probs[a][b], &mut rng);
        views.push(Csr::from_undirected_edges(spec.n, &edges)?);
    }
    let names = (0..spec.r()).map(|i| format!("view{i}")).collect();
    let split = stratified_split(&labels, spec.k, spec.train_frac, spec.val_frac, spec.seed)?;
    Ok((MultiplexGraph::new(views, names, features, labels, spec.k)?, split))
}

/// Group membership drawn by the heterophilous generator, `true` for group A.
pub fn hetero_groups(spec: &HeteroSpec) -> Vec<bool> {
    let mut rng = rng_for(spec.seed, STREAM_GROUPS);
    let n_a = (spec.group_a_frac * spec.n as f64).round() as usize;
    let mut groups: Vec<bool> = (0..spec.n).map(|v| v < n_a).collect();
    groups.shuffle(&mut rng);
    groups
}

pub fn make_heterophilous_views(spec: &HeteroSpec) -> Result<(MultiplexGraph, SplitSpec)> {
    spec.validate()?;
    let labels = balanced_labels(spec.n, spec.k, spec.seed);
    let groups = hetero_groups(spec);
    let mut frng = rng_for(spec.seed, STREAM_FEATURES);
    let class_dims = spec.d - 1;
    let means = class_means(spec.k, class_dims, spec.signal, &mut frng);
    let mut features = Matrix::zeros(spec.n, spec.d);
    for v in 0..spec.n {
        let row = features.row_mut(v);
        for j in 0..class_dims {
            let z: f64 = StandardNormal.sample(&mut frng);
            row[j] = means[labels[v]][j] + z;
        }
        let z: f64 = StandardNormal.sample(&mut frng);
        let sign = if groups[v] { 1.0 } else { -1.0 };
        row[class_dims] = sign * spec.group_signal + z;
    }

    // cell index = group * k + class, group 0 = A
    let k = spec.k;
    let mut cells = vec![Vec::new(); 2 * k];
    for v in 0..spec.n {
        let g = usize::from(!groups[v]);
        cells[g * k + labels[v]].push(v);
    }
    let mut views = Vec::with_capacity(2);
    for informative_group in 0..2 {
        let mut rng = rng_for(spec.seed, STREAM_VIEW0 + informative_group as u64);
        let prob = |a: usize, b: usize| {
            let (ga, ca) = (a / k, a % k);
            let (gb, cb) = (b / k, b % k);
            if ga == informative_group && gb == informative_group {
                if ca == cb {
                    spec.p_in
                } else {
                    spec.p_out
                }
            } else {
                spec.p_rand
            }
        };
        let edges = sample_cell_edges(&cells, prob, &mut rng);
        views.push(Csr::from_undirected_edges(spec.n, &edges)?);
    }
    let names = vec!["informative_a".to_string(), "informative_b".to_string()];
    let split = stratified_split(&labels, k, spec.train_frac, spec.val_frac, spec.seed)?;
    Ok((MultiplexGraph::new(views, names, features, labels, k)?, split))
}

/// Plain BFS over the union of views, independent of [`fetched_nodes`].
#[doc(hidden)]
pub fn bfs_fetch_count(g: &MultiplexGraph, targets: &[usize], layers: usize) -> usize {
    let mut dist = vec![usize::MAX; g.num_nodes()];
    let mut queue = VecDeque::new();
    for &t in targets {
        if dist[t] == usize::MAX {
            dist[t] = 0;
            queue.push_back(t);
        }
    }
    while let Some(u) = queue.pop_front() {
        if dist[u] == layers {
            continue;
        }
        for view in g.views() {
            for &v in view.neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    dist.iter().filter(|&&d| d != usize::MAX).count()
}
