//! Accuracy metrics, the production evaluation protocol and the inference
//! latency benchmark.

use std::time::{Duration, Instant};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distill::{train_student, DistillConfig, Student};
use crate::error::{Error, Result};
use crate::mgraph::{
    count_cross_edges, fetched_nodes, induced_views, neighbor_sample, remove_cross_edges, Csr,
    MultiplexGraph, ProductionSplit, SplitSpec,
};
use crate::teacher::{
    soft_labels_from_output, teacher_forward, train_teacher, TeacherConfig, TeacherModel,
    ViewOperator,
};

/// Fraction of `idx` whose prediction equals the label.
pub fn accuracy(pred: &[usize], truth: &[usize], idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::Config("accuracy over an empty node set".into()));
    }
    let mut hits = 0usize;
    for &v in idx {
        if v >= pred.len() || v >= truth.len() {
            return Err(Error::Config(format!("node {v} outside prediction range")));
        }
        hits += usize::from(pred[v] == truth[v]);
    }
    Ok(hits as f64 / idx.len() as f64)
}

/// `ind_weight·ind + (1 − ind_weight)·tran`.
pub fn prod_interpolate(ind_acc: f64, tran_acc: f64, ind_weight: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&ind_weight) {
        return Err(Error::Config(format!("ind_weight {ind_weight} outside [0, 1]")));
    }
    Ok(ind_weight * ind_acc + (1.0 - ind_weight) * tran_acc)
}

/// A node counts as correct when any of the given teachers gets it right.
pub fn ideal_ensemble_accuracy(preds: &[Vec<usize>], truth: &[usize], idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::Config("accuracy over an empty node set".into()));
    }
    if preds.is_empty() {
        return Err(Error::Config("ideal ensemble without teachers".into()));
    }
    let mut hits = 0usize;
    for &v in idx {
        if v >= truth.len() || preds.iter().any(|p| v >= p.len()) {
            return Err(Error::Config(format!("node {v} outside prediction range")));
        }
        hits += usize::from(preds.iter().any(|p| p[v] == truth[v]));
    }
    Ok(hits as f64 / idx.len() as f64)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One method evaluated under one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub seed: u64,
    pub method: String,
    pub tran_acc: f64,
    /// `None` when the inductive set is empty.
    pub ind_acc: Option<f64>,
    pub prod_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub tran: MeanStd,
    pub ind: Option<MeanStd>,
    pub prod: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ind_fraction: f64,
    pub ind_weight: f64,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    pub fn rows_for<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a EvalRow> + 'a {
        self.rows.iter().filter(move |r| r.method == method)
    }

    /// Sample mean and standard deviation over seeds, per method.
    pub fn summary(&self) -> Vec<MethodSummary> {
        self.methods()
            .into_iter()
            .map(|m| {
                let rows: Vec<&EvalRow> = self.rows_for(&m).collect();
                let stat = |xs: Vec<f64>| {
                    let (mean, std) = mean_std(&xs);
                    MeanStd { mean, std }
                };
                let ind: Option<Vec<f64>> = rows.iter().map(|r| r.ind_acc).collect();
                MethodSummary {
                    tran: stat(rows.iter().map(|r| r.tran_acc).collect()),
                    ind: ind.map(stat),
                    prod: stat(rows.iter().map(|r| r.prod_acc).collect()),
                    method: m,
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("seed,method,tran_acc,ind_acc,prod_acc\n");
        for r in &self.rows {
            let ind = r.ind_acc.map_or(String::new(), |x| x.to_string());
            s.push_str(&format!("{},{},{},{},{}\n", r.seed, r.method, r.tran_acc, ind, r.prod_acc));
        }
        s
    }

    pub fn summary_json(&self) -> String {
        let v = serde_json::json!({
            "ind_fraction": self.ind_fraction,
            "ind_weight": self.ind_weight,
            "methods": self.summary(),
        });
        let mut s = serde_json::to_string_pretty(&v).expect("plain data");
        s.push('\n');
        s
    }
}

/// Accuracy of one method on the observed and inductive test nodes.
fn eval_row(
    seed: u64,
    method: &str,
    pred: &[usize],
    truth: &[usize],
    split: &ProductionSplit,
    ind_weight: f64,
) -> Result<EvalRow> {
    ideal_row(seed, method, &[pred.to_vec()], truth, split, ind_weight)
}

fn ideal_row(
    seed: u64,
    method: &str,
    preds: &[Vec<usize>],
    truth: &[usize],
    split: &ProductionSplit,
    ind_weight: f64,
) -> Result<EvalRow> {
    let tran_acc = ideal_ensemble_accuracy(preds, truth, &split.obs)?;
    let ind_acc = if split.ind.is_empty() {
        None
    } else {
        Some(ideal_ensemble_accuracy(preds, truth, &split.ind)?)
    };
    let prod_acc = match ind_acc {
        Some(ind) => prod_interpolate(ind, tran_acc, ind_weight)?,
        None => tran_acc,
    };
    Ok(EvalRow {
        seed,
        method: method.to_string(),
        tran_acc,
        ind_acc,
        prod_acc,
    })
}

/// Everything one seed of the production protocol produced.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub split: ProductionSplit,
    pub teacher: TeacherModel,
    pub students: Vec<(String, Student)>,
    pub rows: Vec<EvalRow>,
    /// Wall-clock training time of the teacher, in seconds.
    pub teacher_seconds: f64,
    /// Wall-clock training time per student, aligned with `students`.
    pub student_seconds: Vec<f64>,
}

/// Production protocol for one seed. The teacher is trained on the graph with
/// every observed↔inductive edge removed; students distill from soft labels on
/// all non-inductive nodes. At test time the teacher sees the full graph and
/// students see features only.
///
/// Rows: one per view teacher (`teacher-view-<i>`), the integrated teacher
/// (`teacher`), the ideal ensemble over all of them (`ideal-ensemble`), then
/// one per named student.
pub fn production_run(
    g: &MultiplexGraph,
    base: &SplitSpec,
    ind_fraction: f64,
    teacher_cfg: &TeacherConfig,
    students: &[(String, DistillConfig)],
    seed: u64,
) -> Result<SeedRun> {
    let split = ProductionSplit::new(base.clone(), ind_fraction, seed)?;
    let ind_weight = ind_fraction;
    let train_graph = remove_cross_edges(g, &split.ind);
    let cross = count_cross_edges(&train_graph, &split.ind);
    assert_eq!(cross, 0, "training graph still holds {cross} observed-inductive edges");

    let tcfg = TeacherConfig {
        seed,
        ..teacher_cfg.clone()
    };
    let t0 = Instant::now();
    let (teacher, _) = train_teacher(&train_graph, base, &tcfg)?;
    let teacher_seconds = t0.elapsed().as_secs_f64();
    let scope = split.visible_nodes(g.num_nodes());
    let bundle = soft_labels_from_output(&teacher_forward(&teacher, &train_graph)?, &scope)?;

    let truth = g.labels();
    let full = teacher_forward(&teacher, g)?;
    let preds = full.predictions();
    let mut rows = Vec::new();
    for (i, p) in preds[..g.num_views()].iter().enumerate() {
        rows.push(eval_row(seed, &format!("teacher-view-{i}"), p, truth, &split, ind_weight)?);
    }
    rows.push(eval_row(seed, "teacher", &preds[g.num_views()], truth, &split, ind_weight)?);
    rows.push(ideal_row(seed, "ideal-ensemble", &preds, truth, &split, ind_weight)?);

    let mut trained = Vec::with_capacity(students.len());
    let mut student_seconds = Vec::with_capacity(students.len());
    for (name, cfg) in students {
        let scfg = DistillConfig {
            seed,
            ..cfg.clone()
        };
        let t0 = Instant::now();
        let (student, _) =
            train_student(g.features(), truth, g.num_classes(), base, &bundle, &scfg)?;
        student_seconds.push(t0.elapsed().as_secs_f64());
        let pred = student.predict(g.features())?.argmax_rows();
        rows.push(eval_row(seed, name, &pred, truth, &split, ind_weight)?);
        trained.push((name.clone(), student));
    }
    Ok(SeedRun {
        seed,
        split,
        teacher,
        students: trained,
        rows,
        teacher_seconds,
        student_seconds,
    })
}

/// Runs [`production_run`] for every seed in order and collects the rows.
pub fn run_production_eval(
    g: &MultiplexGraph,
    base: &SplitSpec,
    ind_fraction: f64,
    teacher_cfg: &TeacherConfig,
    students: &[(String, DistillConfig)],
    seeds: &[u64],
) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let mut rows = Vec::new();
    for &seed in seeds {
        rows.extend(production_run(g, base, ind_fraction, teacher_cfg, students, seed)?.rows);
    }
    Ok(EvalReport {
        ind_fraction,
        ind_weight: ind_fraction,
        rows,
    })
}

/// `count` distinct nodes drawn uniformly, sorted.
pub fn random_targets(n: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = index::sample(&mut rng, n, count.min(n)).into_vec();
    t.sort_unstable();
    t
}

/// Per-node `1/sqrt(deg+1)` taken from the full graph, so GCN layers computed
/// on a subgraph use the same normalization as full-graph inference.
fn full_norms(g: &MultiplexGraph, nodes: &[usize]) -> Vec<Vec<f64>> {
    g.views()
        .iter()
        .map(|csr| nodes.iter().map(|&v| 1.0 / ((csr.degree(v) + 1) as f64).sqrt()).collect())
        .collect()
}

fn local_positions(nodes: &[usize], targets: &[usize]) -> Vec<usize> {
    targets
        .iter()
        .map(|t| nodes.binary_search(t).expect("targets are fetched"))
        .collect()
}

/// Teacher logits for `targets` computed on their induced L-hop subgraph.
/// Returns the logits and the number of fetched nodes.
pub fn teacher_infer_full(
    g: &MultiplexGraph,
    teacher: &TeacherModel,
    targets: &[usize],
) -> Result<(crate::numkit::Matrix, usize)> {
    let nodes = fetched_nodes(g, targets, teacher.num_layers());
    let views = induced_views(g, &nodes);
    let ops: Vec<ViewOperator> = views
        .iter()
        .zip(full_norms(g, &nodes))
        .map(|(csr, norm)| ViewOperator::with_norm(csr, norm))
        .collect();
    let x = g.features().gather_rows(&nodes)?;
    let out = teacher.forward_with(&ops, &x)?;
    let logits = out.integrated_logits.gather_rows(&local_positions(&nodes, targets))?;
    Ok((logits, nodes.len()))
}

/// Sampled computation graph: per hop, every frontier node keeps at most
/// `fanout` neighbors per view. Returns the sorted node set and per-view
/// directed adjacency over local indices.
pub fn sampled_computation_graph(
    g: &MultiplexGraph,
    targets: &[usize],
    layers: usize,
    fanout: usize,
    seed: u64,
) -> (Vec<usize>, Vec<Vec<Vec<usize>>>) {
    let n = g.num_nodes();
    let r = g.num_views();
    let mut seen = vec![false; n];
    let mut sampled: Vec<Option<Vec<Vec<usize>>>> = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut slot = std::collections::HashMap::new();
    let mut frontier: Vec<usize> = Vec::new();
    for &t in targets {
        if !seen[t] {
            seen[t] = true;
            frontier.push(t);
        }
    }
    for &t in &frontier {
        slot.insert(t, order.len());
        order.push(t);
        sampled.push(None);
    }
    for _ in 0..layers {
        let mut next = Vec::new();
        for &u in &frontier {
            let lists = neighbor_sample(g, u, fanout, seed);
            for l in &lists {
                for &v in l {
                    if !seen[v] {
                        seen[v] = true;
                        slot.insert(v, order.len());
                        order.push(v);
                        sampled.push(None);
                        next.push(v);
                    }
                }
            }
            sampled[slot[&u]] = Some(lists);
        }
        frontier = next;
    }
    let mut nodes = order.clone();
    nodes.sort_unstable();
    let mut adj = vec![vec![Vec::new(); nodes.len()]; r];
    for (i, &u) in order.iter().enumerate() {
        if let Some(lists) = &sampled[i] {
            let lu = nodes.binary_search(&u).expect("present");
            for (view, l) in lists.iter().enumerate() {
                adj[view][lu] = l
                    .iter()
                    .map(|v| nodes.binary_search(v).expect("present"))
                    .collect();
            }
        }
    }
    (nodes, adj)
}

/// Teacher logits for `targets` using neighbor sampling with the given fan-out.
pub fn teacher_infer_sampled(
    g: &MultiplexGraph,
    teacher: &TeacherModel,
    targets: &[usize],
    fanout: usize,
    seed: u64,
) -> Result<(crate::numkit::Matrix, usize)> {
    let (nodes, adj) = sampled_computation_graph(g, targets, teacher.num_layers(), fanout, seed);
    let views: Vec<Csr> = adj.into_iter().map(Csr::from_lists).collect();
    let ops: Vec<ViewOperator> = views
        .iter()
        .zip(full_norms(g, &nodes))
        .map(|(csr, norm)| ViewOperator::with_norm(csr, norm))
        .collect();
    let x = g.features().gather_rows(&nodes)?;
    let out = teacher.forward_with(&ops, &x)?;
    let logits = out.integrated_logits.gather_rows(&local_positions(&nodes, targets))?;
    Ok((logits, nodes.len()))
}

/// Student logits for `targets`: only their feature rows are read.
pub fn student_infer(
    g: &MultiplexGraph,
    student: &Student,
    targets: &[usize],
) -> Result<(crate::numkit::Matrix, usize)> {
    let x = g.features().gather_rows(targets)?;
    Ok((student.predict(&x)?, targets.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub fetched_nodes: usize,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub speedup_vs_teacher: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub targets: Vec<usize>,
    pub repeats: usize,
    pub threads: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, method: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("method,fetched_nodes,median_ms,min_ms,max_ms,speedup_vs_teacher\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.method, r.fetched_nodes, r.median_ms, r.min_ms, r.max_ms, r.speedup_vs_teacher
            ));
        }
        s
    }

    pub fn summary_json(&self) -> String {
        let speedups: serde_json::Map<String, serde_json::Value> = self
            .rows
            .iter()
            .map(|r| (r.method.clone(), serde_json::json!(r.speedup_vs_teacher)))
            .collect();
        let v = serde_json::json!({
            "targets": self.targets,
            "repeats": self.repeats,
            "threads": self.threads,
            "methods": self.rows,
            "speedups": speedups,
        });
        let mut s = serde_json::to_string_pretty(&v).expect("plain data");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub num_targets: usize,
    pub fanout: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Reported only; every method runs on the calling thread.
    pub threads: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            num_targets: 10,
            fanout: 10,
            repeats: 20,
            warmup: 3,
            seed: 0,
            threads: 1,
        }
    }
}

struct Timing {
    median: Duration,
    min: Duration,
    max: Duration,
}

fn time_it<F: FnMut() -> Result<usize>>(warmup: usize, repeats: usize, mut f: F) -> Result<(Timing, usize)> {
    let mut fetched = 0;
    for _ in 0..warmup {
        fetched = f()?;
    }
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        fetched = std::hint::black_box(f()?);
        samples.push(start.elapsed());
    }
    samples.sort_unstable();
    let median = if samples.len() % 2 == 1 {
        samples[samples.len() / 2]
    } else {
        (samples[samples.len() / 2 - 1] + samples[samples.len() / 2]) / 2
    };
    Ok((
        Timing {
            median,
            min: samples[0],
            max: *samples.last().expect("repeats >= 1"),
        },
        fetched,
    ))
}

/// Times full-teacher, NS-k teacher and student inference on random targets.
/// Each timed call includes neighborhood expansion, feature gathering and the
/// forward pass, all in memory.
pub fn bench_inference(
    g: &MultiplexGraph,
    teacher: &TeacherModel,
    student: &Student,
    cfg: &BenchConfig,
) -> Result<BenchReport> {
    if cfg.repeats == 0 || cfg.fanout == 0 || cfg.num_targets == 0 {
        return Err(Error::Config("repeats, fanout and num_targets must be >= 1".into()));
    }
    let targets = random_targets(g.num_nodes(), cfg.num_targets, cfg.seed);
    let (full, full_fetch) = time_it(cfg.warmup, cfg.repeats, || {
        let (logits, fetched) = teacher_infer_full(g, teacher, &targets)?;
        std::hint::black_box(logits);
        Ok(fetched)
    })?;
    let (ns, ns_fetch) = time_it(cfg.warmup, cfg.repeats, || {
        let (logits, fetched) = teacher_infer_sampled(g, teacher, &targets, cfg.fanout, cfg.seed)?;
        std::hint::black_box(logits);
        Ok(fetched)
    })?;
    let (st, st_fetch) = time_it(cfg.warmup, cfg.repeats, || {
        let (logits, fetched) = student_infer(g, student, &targets)?;
        std::hint::black_box(logits);
        Ok(fetched)
    })?;
    let ms = |d: Duration| d.as_secs_f64() * 1e3;
    let base = full.median.as_secs_f64();
    let row = |method: String, t: &Timing, fetched: usize| BenchRow {
        method,
        fetched_nodes: fetched,
        median_ms: ms(t.median),
        min_ms: ms(t.min),
        max_ms: ms(t.max),
        speedup_vs_teacher: base / t.median.as_secs_f64().max(1e-12),
    };
    Ok(BenchReport {
        rows: vec![
            row("teacher".into(), &full, full_fetch),
            row(format!("teacher-ns{}", cfg.fanout), &ns, ns_fetch),
            row("student".into(), &st, st_fetch),
        ],
        targets,
        repeats: cfg.repeats,
        threads: cfg.threads,
    })
}
