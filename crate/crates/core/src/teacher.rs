//! Multiplex GNN teachers.
//!
//! Each view runs its own stack of message-passing layers (GraphSAGE-mean or
//! GCN) on its own adjacency. The final per-view embeddings go through one
//! classifier shared by all views, giving per-view logits `Z^i`; the teacher's
//! integrated prediction is `Σ α_i Z^i` with `α` either uniform or the softmax
//! of learned logits. Integrating once at the logit level keeps every per-view
//! prediction well defined, which ensemble distillation needs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::evalbench::accuracy;
use crate::mgraph::{Csr, MultiplexGraph, SplitSpec};
use crate::numkit::{
    adam_step, cross_entropy_masked, matmul, matmul_nt, matmul_tn, one_hot, relu_backward,
    relu_map, row_softmax, AdamConfig, Matrix, NumError, ParamTensor, SIMPLEX_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    SageMean,
    Gcn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integration {
    Mean,
    Learned,
}

/// One view's adjacency prepared for propagation. `gcn_norm[v]` holds
/// `1/√(deg(v)+1)`; on an extracted subgraph it carries the degrees of the
/// full graph so the normalization matches whole-graph inference.
#[derive(Debug, Clone)]
pub struct ViewOperator<'a> {
    csr: &'a Csr,
    gcn_norm: Vec<f64>,
}

impl<'a> ViewOperator<'a> {
    pub fn new(csr: &'a Csr) -> Self {
        let gcn_norm = (0..csr.num_nodes())
            .map(|v| 1.0 / ((csr.degree(v) + 1) as f64).sqrt())
            .collect();
        Self { csr, gcn_norm }
    }

    pub fn with_norm(csr: &'a Csr, gcn_norm: Vec<f64>) -> Self {
        assert_eq!(csr.num_nodes(), gcn_norm.len());
        Self { csr, gcn_norm }
    }

    pub fn csr(&self) -> &Csr {
        self.csr
    }

    pub fn gcn_norm(&self) -> &[f64] {
        &self.gcn_norm
    }
}

pub fn view_operators(g: &MultiplexGraph) -> Vec<ViewOperator<'_>> {
    g.views().iter().map(ViewOperator::new).collect()
}

/// Row `v` = mean of `h` over the neighbors of `v`; zero for isolated nodes.
pub fn mean_aggregate(csr: &Csr, h: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(csr.num_nodes(), h.cols());
    for v in 0..csr.num_nodes() {
        let nbrs = csr.neighbors(v);
        if nbrs.is_empty() {
            continue;
        }
        let inv = 1.0 / nbrs.len() as f64;
        let row = out.row_mut(v);
        for &u in nbrs {
            for (o, &x) in row.iter_mut().zip(h.row(u)) {
                *o += x;
            }
        }
        row.iter_mut().for_each(|o| *o *= inv);
    }
    out
}

fn mean_aggregate_backward(csr: &Csr, dout: &Matrix) -> Matrix {
    let mut dh = Matrix::zeros(csr.num_nodes(), dout.cols());
    for v in 0..csr.num_nodes() {
        let nbrs = csr.neighbors(v);
        if nbrs.is_empty() {
            continue;
        }
        let inv = 1.0 / nbrs.len() as f64;
        for &u in nbrs {
            let (src, dst) = (dout.row(v), dh.row_mut(u));
            for (o, &g) in dst.iter_mut().zip(src) {
                *o += inv * g;
            }
        }
    }
    dh
}

/// `Â·h` with `Â = D̃^{-1/2}(A+I)D̃^{-1/2}`.
pub fn gcn_propagate(op: &ViewOperator, h: &Matrix) -> Matrix {
    let norm = &op.gcn_norm;
    let mut out = Matrix::zeros(op.csr.num_nodes(), h.cols());
    for v in 0..op.csr.num_nodes() {
        let row = out.row_mut(v);
        let self_w = norm[v] * norm[v];
        for (o, &x) in row.iter_mut().zip(h.row(v)) {
            *o = self_w * x;
        }
        for &u in op.csr.neighbors(v) {
            let w = norm[v] * norm[u];
            for (o, &x) in row.iter_mut().zip(h.row(u)) {
                *o += w * x;
            }
        }
    }
    out
}

fn gcn_propagate_backward(op: &ViewOperator, dout: &Matrix) -> Matrix {
    let norm = &op.gcn_norm;
    let mut dh = Matrix::zeros(op.csr.num_nodes(), dout.cols());
    for v in 0..op.csr.num_nodes() {
        let self_w = norm[v] * norm[v];
        for (o, &g) in dh.row_mut(v).iter_mut().zip(dout.row(v)) {
            *o += self_w * g;
        }
        for &u in op.csr.neighbors(v) {
            let w = norm[v] * norm[u];
            let (src, dst) = (dout.row(v), dh.row_mut(u));
            for (o, &g) in dst.iter_mut().zip(src) {
                *o += w * g;
            }
        }
    }
    dh
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnLayerParams {
    pub kind: LayerKind,
    /// Present for sage-mean layers only.
    pub w_self: Option<ParamTensor>,
    pub w_neigh: ParamTensor,
    pub bias: ParamTensor,
}

fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ParamTensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    ParamTensor::new(Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound)))
}

impl GnnLayerParams {
    pub fn init(kind: LayerKind, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let w_self = (kind == LayerKind::SageMean).then(|| xavier(d_in, d_out, rng));
        Self {
            kind,
            w_self,
            w_neigh: xavier(d_in, d_out, rng),
            bias: ParamTensor::zeros(1, d_out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w_neigh.shape().0
    }

    pub fn out_dim(&self) -> usize {
        self.w_neigh.shape().1
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v: Vec<&mut ParamTensor> = Vec::with_capacity(3);
        if let Some(w) = self.w_self.as_mut() {
            v.push(w);
        }
        v.push(&mut self.w_neigh);
        v.push(&mut self.bias);
        v
    }

    /// Returns the layer output and the aggregated input (cached for backward).
    fn forward(&self, op: &ViewOperator, h_in: &Matrix) -> Result<(Matrix, Matrix)> {
        if h_in.rows() != op.csr.num_nodes() || h_in.cols() != self.in_dim() {
            return Err(NumError::Shape {
                op: "gnn_layer_forward",
                lhs: h_in.shape(),
                rhs: (op.csr.num_nodes(), self.in_dim()),
            }
            .into());
        }
        let agg = match self.kind {
            LayerKind::SageMean => mean_aggregate(op.csr, h_in),
            LayerKind::Gcn => gcn_propagate(op, h_in),
        };
        let mut out = matmul(&agg, &self.w_neigh.value)?;
        if let Some(w_self) = &self.w_self {
            out.axpy(1.0, &matmul(h_in, &w_self.value)?)?;
        }
        out.add_row_broadcast(&self.bias.value)?;
        Ok((out, agg))
    }

    /// Accumulates parameter gradients; returns `dH_in` when requested.
    fn backward(
        &mut self,
        op: &ViewOperator,
        h_in: &Matrix,
        agg: &Matrix,
        dout: &Matrix,
        want_input_grad: bool,
    ) -> Result<Option<Matrix>> {
        self.w_neigh.accumulate(&matmul_tn(agg, dout)?)?;
        self.bias.accumulate(&dout.sum_rows())?;
        if let Some(w_self) = self.w_self.as_mut() {
            w_self.accumulate(&matmul_tn(h_in, dout)?)?;
        }
        if !want_input_grad {
            return Ok(None);
        }
        let dagg = matmul_nt(dout, &self.w_neigh.value)?;
        let mut dh = match self.kind {
            LayerKind::SageMean => mean_aggregate_backward(op.csr, &dagg),
            LayerKind::Gcn => gcn_propagate_backward(op, &dagg),
        };
        if let Some(w_self) = &self.w_self {
            dh.axpy(1.0, &matmul_nt(dout, &w_self.value)?)?;
        }
        Ok(Some(dh))
    }
}

/// `H_out[v] = H_in[v]·W_self + mean_{u∈N(v)} H_in[u]·W_neigh + bias`.
pub fn sage_layer_forward(csr: &Csr, h_in: &Matrix, params: &GnnLayerParams) -> Result<Matrix> {
    if params.kind != LayerKind::SageMean {
        return Err(Error::Config("sage_layer_forward needs sage-mean parameters".into()));
    }
    Ok(params.forward(&ViewOperator::new(csr), h_in)?.0)
}

/// `H_out = Â·H_in·W_neigh + bias`.
pub fn gcn_layer_forward(op: &ViewOperator, h_in: &Matrix, params: &GnnLayerParams) -> Result<Matrix> {
    if params.kind != LayerKind::Gcn {
        return Err(Error::Config("gcn_layer_forward needs gcn parameters".into()));
    }
    Ok(params.forward(op, h_in)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    pub kind: LayerKind,
    pub integration: Integration,
    pub layers: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TeacherConfig {
    /// RSAGE: sage-mean per view, mean integration, 2 layers, hidden 128.
    fn default() -> Self {
        Self {
            kind: LayerKind::SageMean,
            integration: Integration::Mean,
            layers: 2,
            hidden: 128,
            dropout: 0.0,
            epochs: 200,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::Config("teacher needs at least one layer and hidden > 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        self.adam.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TeacherArch {
    kind: LayerKind,
    integration: Integration,
    in_dim: usize,
    hidden: usize,
    num_classes: usize,
    num_views: usize,
    layers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherModel {
    pub kind: LayerKind,
    pub integration: Integration,
    pub in_dim: usize,
    pub hidden: usize,
    pub num_classes: usize,
    /// `stacks[i][l]` is layer `l` of view `i`.
    pub stacks: Vec<Vec<GnnLayerParams>>,
    /// Learned-mode integration logits `a`, `α = softmax(a)`. Unused in mean mode.
    pub alpha_logits: ParamTensor,
    /// Shared `hidden × k` head.
    pub classifier: ParamTensor,
}

/// Per-view logits `Z^1..Z^r`, the integrated logits `Z^{r+1}`, and the
/// row-softmax of each.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherOutput {
    pub view_logits: Vec<Matrix>,
    pub integrated_logits: Matrix,
    pub view_probs: Vec<Matrix>,
    pub integrated_probs: Matrix,
}

impl TeacherOutput {
    /// Argmax predictions of the `r` view teachers followed by the integrated one.
    pub fn predictions(&self) -> Vec<Vec<usize>> {
        self.view_logits
            .iter()
            .chain(std::iter::once(&self.integrated_logits))
            .map(Matrix::argmax_rows)
            .collect()
    }
}

struct ViewCache {
    /// Inputs of each layer (after ReLU and dropout).
    inputs: Vec<Matrix>,
    aggs: Vec<Matrix>,
    /// Pre-activation outputs of each layer.
    outputs: Vec<Matrix>,
    masks: Vec<Option<Matrix>>,
}

impl TeacherModel {
    pub fn init(in_dim: usize, num_views: usize, num_classes: usize, cfg: &TeacherConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let stacks = (0..num_views)
            .map(|_| {
                (0..cfg.layers)
                    .map(|l| {
                        let d_in = if l == 0 { in_dim } else { cfg.hidden };
                        GnnLayerParams::init(cfg.kind, d_in, cfg.hidden, &mut rng)
                    })
                    .collect()
            })
            .collect();
        let classifier = xavier(cfg.hidden, num_classes, &mut rng);
        Self {
            kind: cfg.kind,
            integration: cfg.integration,
            in_dim,
            hidden: cfg.hidden,
            num_classes,
            stacks,
            alpha_logits: ParamTensor::zeros(1, num_views),
            classifier,
        }
    }

    pub fn num_views(&self) -> usize {
        self.stacks.len()
    }

    pub fn num_layers(&self) -> usize {
        self.stacks.first().map_or(0, Vec::len)
    }

    /// Integration weights; exactly `1/r` each in mean mode.
    pub fn alpha(&self) -> Vec<f64> {
        let r = self.num_views();
        match self.integration {
            Integration::Mean => vec![1.0 / r as f64; r],
            Integration::Learned => row_softmax(&self.alpha_logits.value).data().to_vec(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out: Vec<&mut ParamTensor> = self
            .stacks
            .iter_mut()
            .flat_map(|s| s.iter_mut().flat_map(GnnLayerParams::params_mut))
            .collect();
        if self.integration == Integration::Learned {
            out.push(&mut self.alpha_logits);
        }
        out.push(&mut self.classifier);
        out
    }

    fn check_views(&self, ops: &[ViewOperator], x: &Matrix) -> Result<()> {
        if ops.len() != self.num_views() {
            return Err(Error::Config(format!(
                "model has {} views, graph has {}",
                self.num_views(),
                ops.len()
            )));
        }
        if x.cols() != self.in_dim {
            return Err(NumError::Shape {
                op: "teacher_forward",
                lhs: x.shape(),
                rhs: (x.rows(), self.in_dim),
            }
            .into());
        }
        Ok(())
    }

    fn view_embedding(
        &self,
        view: usize,
        op: &ViewOperator,
        x: &Matrix,
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<(Matrix, ViewCache)> {
        let stack = &self.stacks[view];
        let mut cache = ViewCache {
            inputs: Vec::with_capacity(stack.len()),
            aggs: Vec::with_capacity(stack.len()),
            outputs: Vec::with_capacity(stack.len()),
            masks: Vec::with_capacity(stack.len()),
        };
        let mut h = x.clone();
        let mut dropout = dropout;
        for (l, layer) in stack.iter().enumerate() {
            let mut mask = None;
            if l > 0 {
                h = relu_map(&h);
                if let Some((p, rng)) = dropout.as_mut() {
                    if *p > 0.0 {
                        let keep = 1.0 / (1.0 - *p);
                        let m = Matrix::from_fn(h.rows(), h.cols(), |_, _| {
                            if rng.random::<f64>() < *p {
                                0.0
                            } else {
                                keep
                            }
                        });
                        h = h.hadamard(&m)?;
                        mask = Some(m);
                    }
                }
            }
            let (out, agg) = layer.forward(op, &h)?;
            cache.inputs.push(h);
            cache.aggs.push(agg);
            cache.masks.push(mask);
            h = out.clone();
            cache.outputs.push(out);
        }
        Ok((h, cache))
    }

    fn integrate(&self, view_logits: &[Matrix]) -> Result<Matrix> {
        let alpha = self.alpha();
        let mut z = Matrix::zeros(view_logits[0].rows(), self.num_classes);
        for (a, zi) in alpha.iter().zip(view_logits) {
            z.axpy(*a, zi)?;
        }
        Ok(z)
    }

    /// Inference over prepared view operators and the matching feature rows.
    pub fn forward_with(&self, ops: &[ViewOperator], x: &Matrix) -> Result<TeacherOutput> {
        self.check_views(ops, x)?;
        let mut view_logits = Vec::with_capacity(ops.len());
        for (i, op) in ops.iter().enumerate() {
            let (h, _) = self.view_embedding(i, op, x, None)?;
            view_logits.push(matmul(&h, &self.classifier.value)?);
        }
        let integrated_logits = self.integrate(&view_logits)?;
        Ok(TeacherOutput {
            view_probs: view_logits.iter().map(row_softmax).collect(),
            integrated_probs: row_softmax(&integrated_logits),
            view_logits,
            integrated_logits,
        })
    }

    /// Mean cross entropy of the integrated logits over `mask` without
    /// dropout; adds its gradient to every parameter's `grad`.
    pub fn objective(&mut self, ops: &[ViewOperator], x: &Matrix, labels: &Matrix, mask: &[usize]) -> Result<f64> {
        self.loss_and_backward(ops, x, labels, mask, None, 0.0)
    }

    /// Mean cross entropy of the integrated logits over `mask`, accumulating
    /// gradients into every parameter.
    fn loss_and_backward(
        &mut self,
        ops: &[ViewOperator],
        x: &Matrix,
        labels: &Matrix,
        mask: &[usize],
        dropout_rng: Option<&mut ChaCha8Rng>,
        dropout: f64,
    ) -> Result<f64> {
        self.check_views(ops, x)?;
        let mut rng = dropout_rng;
        let mut embeddings = Vec::with_capacity(ops.len());
        let mut caches = Vec::with_capacity(ops.len());
        for (i, op) in ops.iter().enumerate() {
            let drop = rng.as_deref_mut().map(|r| (dropout, r));
            let (h, cache) = self.view_embedding(i, op, x, drop)?;
            embeddings.push(h);
            caches.push(cache);
        }
        let view_logits: Vec<Matrix> = embeddings
            .iter()
            .map(|h| matmul(h, &self.classifier.value))
            .collect::<std::result::Result<_, _>>()?;
        let z = self.integrate(&view_logits)?;
        let (loss, dz) = cross_entropy_masked(&z, labels, mask)?;

        let alpha = self.alpha();
        if self.integration == Integration::Learned {
            // dL/dα_i = <dZ, Z^i>, then through α = softmax(a)
            let dalpha: Vec<f64> = view_logits
                .iter()
                .map(|zi| dz.frobenius_dot(zi))
                .collect::<std::result::Result<_, _>>()?;
            let inner: f64 = alpha.iter().zip(&dalpha).map(|(a, g)| a * g).sum();
            let da = Matrix::from_fn(1, alpha.len(), |_, i| alpha[i] * (dalpha[i] - inner));
            self.alpha_logits.accumulate(&da)?;
        }
        for (i, (h, cache)) in embeddings.iter().zip(caches).enumerate() {
            let dzi = dz.scale(alpha[i]);
            self.classifier.accumulate(&matmul_tn(h, &dzi)?)?;
            let mut grad = matmul_nt(&dzi, &self.classifier.value)?;
            for l in (0..self.stacks[i].len()).rev() {
                let want = l > 0;
                let dh = self.stacks[i][l].backward(
                    &ops[i],
                    &cache.inputs[l],
                    &cache.aggs[l],
                    &grad,
                    want,
                )?;
                if let Some(mut dh) = dh {
                    if let Some(m) = &cache.masks[l] {
                        dh = dh.hadamard(m)?;
                    }
                    grad = relu_backward(&cache.outputs[l - 1], &dh)?;
                }
            }
        }
        Ok(loss)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let arch = TeacherArch {
            kind: self.kind,
            integration: self.integration,
            in_dim: self.in_dim,
            hidden: self.hidden,
            num_classes: self.num_classes,
            num_views: self.num_views(),
            layers: self.num_layers(),
        };
        let mut ck = Checkpoint::new("teacher", serde_json::to_value(arch).expect("plain data"));
        for (i, stack) in self.stacks.iter().enumerate() {
            for (l, layer) in stack.iter().enumerate() {
                if let Some(w) = &layer.w_self {
                    ck.push(format!("view{i}.layer{l}.w_self"), &w.value);
                }
                ck.push(format!("view{i}.layer{l}.w_neigh"), &layer.w_neigh.value);
                ck.push(format!("view{i}.layer{l}.bias"), &layer.bias.value);
            }
        }
        ck.push("alpha_logits", &self.alpha_logits.value);
        ck.push("classifier", &self.classifier.value);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_model("teacher")?;
        let arch: TeacherArch = ck.arch()?;
        let cfg = TeacherConfig {
            kind: arch.kind,
            integration: arch.integration,
            layers: arch.layers,
            hidden: arch.hidden,
            ..TeacherConfig::default()
        };
        cfg.validate()?;
        let mut model = Self::init(arch.in_dim, arch.num_views, arch.num_classes, &cfg);
        for (i, stack) in model.stacks.iter_mut().enumerate() {
            for (l, layer) in stack.iter_mut().enumerate() {
                if let Some(w) = layer.w_self.as_mut() {
                    ck.restore(&format!("view{i}.layer{l}.w_self"), w)?;
                }
                ck.restore(&format!("view{i}.layer{l}.w_neigh"), &mut layer.w_neigh)?;
                ck.restore(&format!("view{i}.layer{l}.bias"), &mut layer.bias)?;
            }
        }
        ck.restore("alpha_logits", &mut model.alpha_logits)?;
        ck.restore("classifier", &mut model.classifier)?;
        Ok(model)
    }
}

/// Runs the teacher on the whole graph.
pub fn teacher_forward(model: &TeacherModel, g: &MultiplexGraph) -> Result<TeacherOutput> {
    model.forward_with(&view_operators(g), g.features())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_loss,val_acc\n");
    for e in log {
        s.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_acc));
    }
    s
}

/// Full-batch training on the integrated logits; the parameters with the best
/// validation accuracy are returned.
pub fn train_teacher(
    g: &MultiplexGraph,
    splits: &SplitSpec,
    cfg: &TeacherConfig,
) -> Result<(TeacherModel, Vec<EpochLog>)> {
    cfg.validate()?;
    if splits.train.is_empty() || splits.val.is_empty() {
        return Err(Error::Config("teacher training needs non-empty train and val sets".into()));
    }
    let ops = view_operators(g);
    let labels = one_hot(g.labels(), g.num_classes());
    let mut model = TeacherModel::init(g.feature_dim(), g.num_views(), g.num_classes(), cfg);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d0d0);
    let mut best: Option<(f64, TeacherModel)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut params = model.params_mut();
        params.iter_mut().for_each(|p| p.zero_grad());
        drop(params);
        let rng = (cfg.dropout > 0.0).then_some(&mut dropout_rng);
        let loss = model.loss_and_backward(&ops, g.features(), &labels, &splits.train, rng, cfg.dropout)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("teacher loss {loss} at epoch {epoch}")));
        }
        adam_step(&mut model.params_mut(), &cfg.adam);
        let out = model.forward_with(&ops, g.features())?;
        let val_acc = accuracy(&out.integrated_logits.argmax_rows(), g.labels(), &splits.val)?;
        log.push(EpochLog {
            epoch,
            train_loss: loss,
            val_acc,
        });
        if best.as_ref().is_none_or(|(b, _)| val_acc > *b) {
            best = Some((val_acc, model.clone()));
        }
    }
    Ok((best.map_or(model, |(_, m)| m), log))
}

/// Per-node soft labels from the `r` view teachers and the integrated one,
/// restricted to `scope`. Index `r` (0-based) holds the integrated teacher.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelBundle {
    pub scope: Vec<usize>,
    pub teachers: Vec<Matrix>,
}

impl SoftLabelBundle {
    pub fn num_teachers(&self) -> usize {
        self.teachers.len()
    }

    pub fn integrated(&self) -> &Matrix {
        self.teachers.last().expect("bundle holds at least one teacher")
    }

    pub fn validate(&self) -> Result<()> {
        if self.teachers.is_empty() {
            return Err(Error::Config("soft-label bundle without teachers".into()));
        }
        for t in &self.teachers {
            if t.rows() != self.scope.len() {
                return Err(Error::Config(format!(
                    "soft-label matrix has {} rows for a scope of {}",
                    t.rows(),
                    self.scope.len()
                )));
            }
            crate::numkit::check_simplex_rows(t, SIMPLEX_TOL)?;
        }
        Ok(())
    }
}

pub fn soft_labels_from_output(out: &TeacherOutput, scope: &[usize]) -> Result<SoftLabelBundle> {
    let teachers = out
        .view_probs
        .iter()
        .chain(std::iter::once(&out.integrated_probs))
        .map(|p| p.gather_rows(scope))
        .collect::<std::result::Result<_, _>>()?;
    Ok(SoftLabelBundle {
        scope: scope.to_vec(),
        teachers,
    })
}

/// Soft labels over `scope`, computed on `g` (the training-time graph).
pub fn export_soft_labels(
    model: &TeacherModel,
    g: &MultiplexGraph,
    scope: &[usize],
) -> Result<SoftLabelBundle> {
    let out = teacher_forward(model, g)?;
    soft_labels_from_output(&out, scope)
}
