//! Command-line front end. Every subcommand reads one JSON run config (or a
//! generator spec for `gen-data`), applies flag overrides and writes its
//! artifacts under the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::distill::{coefficients_csv, export_coefficients, mlp_forward, train_student, DistillConfig, DistillMode, Student};
use crate::error::{io_err, Error, Result};
use crate::evalbench::{bench_inference, run_production_eval, BenchConfig, EvalReport, EvalRow, ideal_ensemble_accuracy, prod_interpolate};
use crate::mgraph::{
    count_cross_edges, load_dataset, remove_cross_edges, save_dataset, GeneratorSpec,
    MultiplexGraph, ProductionSplit, SplitSpec,
};
use crate::teacher::{log_to_csv, soft_labels_from_output, teacher_forward, train_teacher, TeacherConfig, TeacherModel};

#[derive(Debug, Parser)]
#[command(name = "mgfd", version, about = "Distill multiplex GNN teachers into graph-free MLP students")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a generator spec.
    GenData(CommonArgs),
    /// Train a multiplex GNN teacher on the training graph.
    TrainTeacher(CommonArgs),
    /// Distill a teacher checkpoint into a student MLP.
    Distill(ModelArgs),
    /// Evaluate under the production protocol (tran, ind, prod).
    Eval(ModelArgs),
    /// Time teacher, NS-k teacher and student inference on random targets.
    Bench(ModelArgs),
    /// Write node-wise ensemble coefficients of an mgfnn-plus student.
    ExportCoefs(ExportArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run config (generator spec for gen-data).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<DistillMode>,
    #[arg(long)]
    pub ind_fraction: Option<f64>,
    #[arg(long)]
    pub fanout: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Teacher checkpoint.
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Student checkpoint.
    #[arg(long)]
    pub student: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub student: PathBuf,
    /// Comma-separated node ids.
    #[arg(long, value_delimiter = ',')]
    pub nodes: Vec<usize>,
}

impl clap::ValueEnum for DistillMode {
    fn value_variants<'a>() -> &'a [Self] {
        &[Self::Mgfnn, Self::MgfnnPlus, Self::Mean, Self::Para]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            Self::Mgfnn => "mgfnn",
            Self::MgfnnPlus => "mgfnn-plus",
            Self::Mean => "mean",
            Self::Para => "para",
        }))
    }
}

fn default_ind_fraction() -> f64 {
    0.2
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// One declarative run. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub generator: Option<GeneratorSpec>,
    #[serde(default)]
    pub teacher: TeacherConfig,
    #[serde(default)]
    pub distill: DistillConfig,
    /// Extra named students for `eval`; defaults to the `distill` config alone.
    #[serde(default)]
    pub students: Vec<NamedStudent>,
    #[serde(default = "default_ind_fraction")]
    pub ind_fraction: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub bench: BenchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedStudent {
    pub name: String,
    pub config: DistillConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(d) = cfg.dataset.as_mut() {
            if d.is_relative() {
                *d = base.join(&*d);
            }
        }
        if cfg.out.is_relative() {
            cfg.out = base.join(&cfg.out);
        }
        Ok(cfg)
    }

    fn apply(&mut self, args: &CommonArgs) {
        if let Some(seed) = args.seed {
            self.seeds = vec![seed];
        }
        if let Some(out) = &args.out {
            self.out = out.clone();
        }
        if let Some(mode) = args.mode {
            self.distill.mode = mode;
            self.students.clear();
        }
        if let Some(f) = args.ind_fraction {
            self.ind_fraction = f;
        }
        if let Some(k) = args.fanout {
            self.bench.fanout = k;
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset, &self.generator) {
            (Some(d), None) => {
                if !d.is_dir() {
                    return Err(Error::Config(format!("dataset directory {} does not exist", d.display())));
                }
            }
            (None, Some(_)) => {}
            _ => return Err(Error::Config("exactly one of dataset and generator must be set".into())),
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        if !(0.0..=1.0).contains(&self.ind_fraction) {
            return Err(Error::Config(format!("ind_fraction {} outside [0, 1]", self.ind_fraction)));
        }
        self.teacher.validate()?;
        self.distill.validate()?;
        for s in &self.students {
            s.config.validate()?;
        }
        Ok(())
    }

    fn seed(&self) -> u64 {
        self.seeds[0]
    }

    fn dataset(&self) -> Result<(MultiplexGraph, SplitSpec)> {
        match (&self.dataset, &self.generator) {
            (Some(d), _) => Ok(load_dataset(d)?),
            (None, Some(g)) => Ok(g.generate()?),
            (None, None) => Err(Error::Config("no dataset or generator".into())),
        }
    }

    fn student_list(&self) -> Vec<(String, DistillConfig)> {
        if self.students.is_empty() {
            let name = serde_json::to_value(self.distill.mode)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_else(|| "student".into());
            vec![(name, self.distill.clone())]
        } else {
            self.students.iter().map(|s| (s.name.clone(), s.config.clone())).collect()
        }
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(io_err(&path))?;
    Ok(path)
}

fn load_run(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.apply(args);
    cfg.validate()?;
    Ok(cfg)
}

/// The seed's production split and the graph with observed↔inductive edges removed.
fn training_graph(cfg: &RunConfig, g: &MultiplexGraph, base: &SplitSpec) -> Result<(ProductionSplit, MultiplexGraph)> {
    let split = ProductionSplit::new(base.clone(), cfg.ind_fraction, cfg.seed())?;
    let train = remove_cross_edges(g, &split.ind);
    assert_eq!(count_cross_edges(&train, &split.ind), 0);
    Ok((split, train))
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| Error::Config(format!("--{what} <checkpoint> is required")))
}

pub fn cmd_gen_data(args: &CommonArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config).map_err(io_err(&args.config))?;
    let mut spec: GeneratorSpec = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", args.config.display())))?;
    if let Some(seed) = args.seed {
        spec.set_seed(seed);
    }
    let out = required(&args.out, "out")?;
    let (g, split) = spec.generate()?;
    save_dataset(&g, &split, out)?;
    println!(
        "n={} r={} d={} k={} edges={:?} -> {}",
        g.num_nodes(),
        g.num_views(),
        g.feature_dim(),
        g.num_classes(),
        g.edge_counts(),
        out.display()
    );
    Ok(())
}

pub fn cmd_train_teacher(args: &CommonArgs) -> Result<()> {
    let cfg = load_run(args)?;
    let (g, base) = cfg.dataset()?;
    let (split, train) = training_graph(&cfg, &g, &base)?;
    let tcfg = TeacherConfig {
        seed: cfg.seed(),
        ..cfg.teacher.clone()
    };
    let (model, log) = train_teacher(&train, &base, &tcfg)?;
    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    model.to_checkpoint().save(cfg.out.join("teacher.json"))?;
    write(&cfg.out, "teacher_log.csv", &log_to_csv(&log))?;
    write(&cfg.out, "split.json", &(serde_json::to_string_pretty(&split)? + "\n"))?;
    let best = log.iter().map(|e| e.val_acc).fold(f64::NAN, f64::max);
    println!("teacher trained: {} epochs, best val acc {best:.4} -> {}", log.len(), cfg.out.display());
    Ok(())
}

pub fn cmd_distill(args: &ModelArgs) -> Result<()> {
    let cfg = load_run(&args.common)?;
    let (g, base) = cfg.dataset()?;
    let teacher = TeacherModel::from_checkpoint(&Checkpoint::load(required(&args.teacher, "teacher")?)?)?;
    let (split, train) = training_graph(&cfg, &g, &base)?;
    let scope = split.visible_nodes(g.num_nodes());
    let bundle = soft_labels_from_output(&teacher_forward(&teacher, &train)?, &scope)?;
    let dcfg = DistillConfig {
        seed: cfg.seed(),
        ..cfg.distill.clone()
    };
    let (student, log) = train_student(g.features(), g.labels(), g.num_classes(), &base, &bundle, &dcfg)?;
    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    student.to_checkpoint().save(cfg.out.join("student.json"))?;
    write(&cfg.out, "student_log.csv", &log_to_csv(&log))?;
    let best = log.iter().map(|e| e.val_acc).fold(f64::NAN, f64::max);
    println!("student ({:?}) trained: best val acc {best:.4} -> {}", dcfg.mode, cfg.out.display());
    Ok(())
}

/// Scores the given checkpoints on the seed's production split: the teacher on
/// the full graph, the student on features only.
fn eval_checkpoints(cfg: &RunConfig, teacher: Option<&TeacherModel>, student: Option<&Student>) -> Result<EvalReport> {
    let (g, base) = cfg.dataset()?;
    let split = ProductionSplit::new(base, cfg.ind_fraction, cfg.seed())?;
    let truth = g.labels();
    let row = |method: &str, preds: &[Vec<usize>]| -> Result<EvalRow> {
        let tran = ideal_ensemble_accuracy(preds, truth, &split.obs)?;
        let ind = if split.ind.is_empty() {
            None
        } else {
            Some(ideal_ensemble_accuracy(preds, truth, &split.ind)?)
        };
        Ok(EvalRow {
            seed: cfg.seed(),
            method: method.into(),
            tran_acc: tran,
            ind_acc: ind,
            prod_acc: match ind {
                Some(i) => prod_interpolate(i, tran, cfg.ind_fraction)?,
                None => tran,
            },
        })
    };
    let mut rows = Vec::new();
    if let Some(t) = teacher {
        let preds = teacher_forward(t, &g)?.predictions();
        rows.push(row("teacher", &preds[g.num_views()..])?);
        rows.push(row("ideal-ensemble", &preds)?);
    }
    if let Some(s) = student {
        rows.push(row("student", &[s.predict(g.features())?.argmax_rows()])?);
    }
    Ok(EvalReport {
        ind_fraction: cfg.ind_fraction,
        ind_weight: cfg.ind_fraction,
        rows,
    })
}

pub fn cmd_eval(args: &ModelArgs) -> Result<()> {
    let cfg = load_run(&args.common)?;
    let report = if args.teacher.is_some() || args.student.is_some() {
        let teacher = args
            .teacher
            .as_ref()
            .map(|p| Checkpoint::load(p).and_then(|c| TeacherModel::from_checkpoint(&c)))
            .transpose()?;
        let student = args
            .student
            .as_ref()
            .map(|p| Checkpoint::load(p).and_then(|c| Student::from_checkpoint(&c)))
            .transpose()?;
        eval_checkpoints(&cfg, teacher.as_ref(), student.as_ref())?
    } else {
        let (g, base) = cfg.dataset()?;
        run_production_eval(&g, &base, cfg.ind_fraction, &cfg.teacher, &cfg.student_list(), &cfg.seeds)?
    };
    write(&cfg.out, "eval.csv", &report.to_csv())?;
    write(&cfg.out, "eval_summary.json", &report.summary_json())?;
    for s in report.summary() {
        println!("{:16} prod {:.4} ± {:.4}", s.method, s.prod.mean, s.prod.std);
    }
    Ok(())
}

/// Thread count requested through `MGFD_THREADS`; the benchmark itself always
/// runs on the calling thread.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var("MGFD_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t >= 1)
            .ok_or_else(|| Error::Config(format!("MGFD_THREADS={v:?} is not a positive integer"))),
        Err(_) => Ok(1),
    }
}

pub fn cmd_bench(args: &ModelArgs) -> Result<()> {
    let cfg = load_run(&args.common)?;
    let (g, _) = cfg.dataset()?;
    let teacher = TeacherModel::from_checkpoint(&Checkpoint::load(required(&args.teacher, "teacher")?)?)?;
    let student = Student::from_checkpoint(&Checkpoint::load(required(&args.student, "student")?)?)?;
    let bcfg = BenchConfig {
        seed: cfg.seed(),
        threads: threads_from_env()?,
        ..cfg.bench.clone()
    };
    let report = bench_inference(&g, &teacher, &student, &bcfg)?;
    write(&cfg.out, "bench.csv", &report.to_csv())?;
    write(&cfg.out, "bench.json", &report.summary_json())?;
    for r in &report.rows {
        println!(
            "{:14} fetched {:8} median {:10.4} ms  speedup {:8.2}x",
            r.method, r.fetched_nodes, r.median_ms, r.speedup_vs_teacher
        );
    }
    Ok(())
}

pub fn cmd_export_coefs(args: &ExportArgs) -> Result<()> {
    let cfg = load_run(&args.common)?;
    let (g, _) = cfg.dataset()?;
    let student = Student::from_checkpoint(&Checkpoint::load(&args.student)?)?;
    let factors = student
        .factors
        .as_ref()
        .ok_or_else(|| Error::Config("student checkpoint has no coefficient factors (not mgfnn-plus)".into()))?;
    if args.nodes.is_empty() {
        return Err(Error::Config("--nodes must list at least one node id".into()));
    }
    let (h, _) = mlp_forward(&student.mlp, g.features())?;
    let rows = export_coefficients(&h, factors, &args.nodes)?;
    let path = write(&cfg.out, "coefficients.csv", &coefficients_csv(&rows, factors.num_teachers()))?;
    println!("{} coefficient rows -> {}", rows.len(), path.display());
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::TrainTeacher(a) => cmd_train_teacher(a),
        Command::Distill(a) => cmd_distill(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::ExportCoefs(a) => cmd_export_coefs(a),
    }
}

/// 0 on success, 2 for validation failures, 1 otherwise.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_validation() => 2,
        Err(_) => 1,
    }
}
