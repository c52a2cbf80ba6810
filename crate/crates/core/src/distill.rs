//! Graph-free students.
//!
//! A student is a plain MLP over node features. It is trained against soft
//! labels exported by a teacher in one of four modes:
//!
//! - `mgfnn`: cross entropy on labeled nodes plus KL to the integrated teacher;
//! - `mean` / `para`: KL to all `r+1` teachers with one global weight vector,
//!   uniform or learned;
//! - `mgfnn-plus`: KL to all `r+1` teachers weighted per node by
//!   `C = row_softmax(tanh(H·W)·T)`, where `H` is the student's last hidden
//!   representation, `W` is `h×m` and `T` is `m×(r+1)`, minus `γ` times the
//!   entropy of the mean coefficient row.
//!
//! KL terms are `KL(teacher ‖ student)` averaged over the bundle scope so `λ`
//! trades off against the mean cross entropy on a comparable scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::evalbench::accuracy;
use crate::mgraph::SplitSpec;
use crate::numkit::{
    adam_step, cross_entropy_masked, entropy_of_mean, kl_divergence_rows, kl_rows, matmul,
    matmul_nt, matmul_tn, one_hot, relu_backward, relu_map, row_softmax, row_softmax_backward,
    tanh_backward, tanh_map, AdamConfig, Matrix, NumError, ParamTensor, SIMPLEX_TOL,
};
use crate::teacher::{EpochLog, SoftLabelBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistillMode {
    Mgfnn,
    MgfnnPlus,
    Mean,
    Para,
}

impl std::str::FromStr for DistillMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mgfnn" => Ok(Self::Mgfnn),
            "mgfnn-plus" => Ok(Self::MgfnnPlus),
            "mean" => Ok(Self::Mean),
            "para" => Ok(Self::Para),
            other => Err(Error::Config(format!("unknown distillation mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub mode: DistillMode,
    /// Weight of the cross-entropy term.
    pub lambda: f64,
    /// Weight of the mean-entropy regularizer (mgfnn-plus only).
    pub gamma: f64,
    /// Rank `m` of the coefficient factorization.
    pub rank: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            mode: DistillMode::MgfnnPlus,
            lambda: 0.0,
            gamma: 0.01,
            rank: 2,
            epochs: 200,
            seed: 0,
            adam: AdamConfig::default(),
            hidden: 128,
            layers: 2,
            dropout: 0.0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma {} must be >= 0", self.gamma)));
        }
        if self.rank == 0 {
            return Err(Error::Config("rank m must be >= 1".into()));
        }
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::Config("student needs at least one layer and hidden > 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        self.adam.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
}

/// Chain `d → h → … → h → k`. With one layer the network is linear and its
/// "last hidden representation" is the input itself.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
}

/// Activations kept for backward: `inputs[l]` feeds layer `l`, `pre[l]` is
/// its affine output.
struct MlpCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    masks: Vec<Option<Matrix>>,
}

impl MlpParams {
    pub fn init(in_dim: usize, hidden: usize, out_dim: usize, layers: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..layers)
            .map(|l| {
                let d_in = if l == 0 { in_dim } else { hidden };
                let d_out = if l + 1 == layers { out_dim } else { hidden };
                let bound = (6.0 / (d_in + d_out) as f64).sqrt();
                DenseLayer {
                    weight: ParamTensor::new(Matrix::from_fn(d_in, d_out, |_, _| {
                        rng.random_range(-bound..bound)
                    })),
                    bias: ParamTensor::zeros(1, d_out),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].weight.shape().0
    }

    /// Width of `H`, the input of the output layer.
    pub fn hidden_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.shape().0
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.shape().1
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    fn forward_cached(
        &self,
        x: &Matrix,
        mut dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<(Matrix, Matrix, MlpCache)> {
        if x.cols() != self.in_dim() {
            return Err(NumError::Shape {
                op: "mlp_forward",
                lhs: x.shape(),
                rhs: (x.rows(), self.in_dim()),
            }
            .into());
        }
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            masks: Vec::with_capacity(self.layers.len()),
        };
        let mut a = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut mask = None;
            if l > 0 {
                a = relu_map(&a);
                if let Some((p, rng)) = dropout.as_mut() {
                    if *p > 0.0 {
                        let keep = 1.0 / (1.0 - *p);
                        let m = Matrix::from_fn(a.rows(), a.cols(), |_, _| {
                            if rng.random::<f64>() < *p {
                                0.0
                            } else {
                                keep
                            }
                        });
                        a = a.hadamard(&m)?;
                        mask = Some(m);
                    }
                }
            }
            let mut z = matmul(&a, &layer.weight.value)?;
            z.add_row_broadcast(&layer.bias.value)?;
            cache.inputs.push(a);
            cache.pre.push(z.clone());
            cache.masks.push(mask);
            a = z;
        }
        let hidden = cache.inputs.last().expect("non-empty").clone();
        Ok((hidden, a, cache))
    }

    /// Accumulates gradients given `dlogits` and an extra gradient on `H`.
    fn backward(&mut self, cache: &MlpCache, dlogits: &Matrix, dhidden: Option<&Matrix>) -> Result<()> {
        let mut grad = dlogits.clone();
        let last = self.layers.len() - 1;
        for l in (0..self.layers.len()).rev() {
            let layer = &mut self.layers[l];
            layer.weight.accumulate(&matmul_tn(&cache.inputs[l], &grad)?)?;
            layer.bias.accumulate(&grad.sum_rows())?;
            if l == 0 {
                break;
            }
            let mut da = matmul_nt(&grad, &layer.weight.value)?;
            if l == last {
                if let Some(dh) = dhidden {
                    da.axpy(1.0, dh)?;
                }
            }
            if let Some(m) = &cache.masks[l] {
                da = da.hadamard(m)?;
            }
            grad = relu_backward(&cache.pre[l - 1], &da)?;
        }
        Ok(())
    }
}

/// Returns `(H, logits)`. Reads features only.
pub fn mlp_forward(params: &MlpParams, x: &Matrix) -> Result<(Matrix, Matrix)> {
    let (h, logits, _) = params.forward_cached(x, None)?;
    Ok((h, logits))
}

/// Low-rank factors of the node-wise coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffFactors {
    /// `h × m`
    pub w: ParamTensor,
    /// `m × (r+1)`
    pub t: ParamTensor,
}

impl CoeffFactors {
    /// Uniform in ±0.01, so training starts near uniform coefficients.
    pub fn init(hidden: usize, rank: usize, num_teachers: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r, c| {
            ParamTensor::new(Matrix::from_fn(r, c, |_, _| rng.random_range(-0.01..0.01)))
        };
        let w = draw(hidden, rank);
        let t = draw(rank, num_teachers);
        Self { w, t }
    }

    pub fn rank(&self) -> usize {
        self.w.shape().1
    }

    pub fn num_teachers(&self) -> usize {
        self.t.shape().1
    }
}

struct CoeffCache {
    s: Matrix,
    c: Matrix,
}

fn coefficients_cached(h: &Matrix, f: &CoeffFactors) -> Result<CoeffCache> {
    let s = tanh_map(&matmul(h, &f.w.value)?);
    let c = row_softmax(&matmul(&s, &f.t.value)?);
    Ok(CoeffCache { s, c })
}

/// `C = row_softmax(tanh(H·W)·T)`, one row per row of `H`.
pub fn coefficients(h: &Matrix, factors: &CoeffFactors) -> Result<Matrix> {
    Ok(coefficients_cached(h, factors)?.c)
}

fn check_bundle(logits: &Matrix, bundle: &SoftLabelBundle) -> Result<()> {
    bundle.validate()?;
    if bundle.scope.is_empty() {
        return Err(Error::Config("soft-label scope is empty".into()));
    }
    if let Some(&v) = bundle.scope.iter().find(|&&v| v >= logits.rows()) {
        return Err(Error::Config(format!(
            "soft-label scope node {v} outside {} feature rows",
            logits.rows()
        )));
    }
    if bundle.integrated().cols() != logits.cols() {
        return Err(NumError::Shape {
            op: "distill",
            lhs: logits.shape(),
            rhs: bundle.integrated().shape(),
        }
        .into());
    }
    Ok(())
}

fn scatter_rows(target: &mut Matrix, rows: &[usize], src: &Matrix, scale: f64) {
    for (i, &v) in rows.iter().enumerate() {
        for (o, &g) in target.row_mut(v).iter_mut().zip(src.row(i)) {
            *o += scale * g;
        }
    }
}

/// Mean KL of each teacher over the scope: returns per-teacher values and the
/// per-teacher gradients on the scoped logit rows.
fn per_teacher_kl(scoped_logits: &Matrix, bundle: &SoftLabelBundle) -> Result<Vec<(f64, Matrix)>> {
    let inv = 1.0 / bundle.scope.len() as f64;
    let weights = vec![inv; bundle.scope.len()];
    bundle
        .teachers
        .iter()
        .map(|t| Ok(kl_divergence_rows(t, scoped_logits, &weights)?))
        .collect()
}

fn ce_term(logits: &Matrix, labels: &Matrix, labeled: &[usize], lambda: f64) -> Result<(f64, Matrix)> {
    if lambda == 0.0 {
        return Ok((0.0, Matrix::zeros(logits.rows(), logits.cols())));
    }
    if labeled.is_empty() {
        return Err(Error::Config("cross-entropy weight > 0 but no labeled nodes".into()));
    }
    let (ce, g) = cross_entropy_masked(logits, labels, labeled)?;
    Ok((lambda * ce, g.scale(lambda)))
}

/// `λ·CE(labeled) + (1−λ)·mean KL(z^{r+1} ‖ ŷ)` over the bundle scope.
pub fn mgfnn_loss(
    logits: &Matrix,
    labels: &Matrix,
    labeled: &[usize],
    bundle: &SoftLabelBundle,
    lambda: f64,
) -> Result<(f64, Matrix)> {
    let (mut loss, mut grad) = ce_term(logits, labels, labeled, lambda)?;
    if lambda < 1.0 {
        check_bundle(logits, bundle)?;
        let scoped = logits.gather_rows(&bundle.scope)?;
        let inv = 1.0 / bundle.scope.len() as f64;
        let (kl, g) = kl_divergence_rows(bundle.integrated(), &scoped, &vec![inv; bundle.scope.len()])?;
        loss += (1.0 - lambda) * kl;
        scatter_rows(&mut grad, &bundle.scope, &g, 1.0 - lambda);
    }
    Ok((loss, grad))
}

/// `Σ_i c^i · mean KL(z^i ‖ ŷ)` over the scope, with gradients w.r.t. the
/// logits and w.r.t. each `c^i` (the per-teacher mean KL).
pub fn viewwise_loss(
    logits: &Matrix,
    bundle: &SoftLabelBundle,
    c: &[f64],
) -> Result<(f64, Matrix, Vec<f64>)> {
    check_bundle(logits, bundle)?;
    if c.len() != bundle.num_teachers() {
        return Err(Error::Config(format!(
            "{} view weights for {} teachers",
            c.len(),
            bundle.num_teachers()
        )));
    }
    let sum: f64 = c.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL || c.iter().any(|&x| x < 0.0) {
        return Err(NumError::Invalid(format!("view weights {c:?} not on the simplex")).into());
    }
    let scoped = logits.gather_rows(&bundle.scope)?;
    let parts = per_teacher_kl(&scoped, bundle)?;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut dc = Vec::with_capacity(c.len());
    for (&ci, (kl, g)) in c.iter().zip(&parts) {
        loss += ci * kl;
        scatter_rows(&mut grad, &bundle.scope, g, ci);
        dc.push(*kl);
    }
    Ok((loss, grad, dc))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlusLoss {
    pub loss: f64,
    /// `(1/|scope|) Σ_v Σ_i c_v^i KL(z_v^i ‖ ŷ_v)`
    pub kl_term: f64,
    /// `H(c̄)`
    pub entropy: f64,
    pub dlogits: Matrix,
    pub dhidden: Matrix,
    pub dw: Matrix,
    pub dt: Matrix,
}

/// Node-wise ensemble distillation loss:
/// `λ·CE + (1−λ)·(node-wise KL − γ·H(c̄))`, with gradients into the logits,
/// the hidden representation and both coefficient factors.
#[allow(clippy::too_many_arguments)]
pub fn mgfnn_plus_loss(
    logits: &Matrix,
    hidden: &Matrix,
    factors: &CoeffFactors,
    bundle: &SoftLabelBundle,
    lambda: f64,
    gamma: f64,
    labels: &Matrix,
    labeled: &[usize],
) -> Result<PlusLoss> {
    let (ce, mut dlogits) = ce_term(logits, labels, labeled, lambda)?;
    let mut out = PlusLoss {
        loss: ce,
        kl_term: 0.0,
        entropy: 0.0,
        dlogits: Matrix::zeros(0, 0),
        dhidden: Matrix::zeros(hidden.rows(), hidden.cols()),
        dw: Matrix::zeros(factors.w.shape().0, factors.w.shape().1),
        dt: Matrix::zeros(factors.t.shape().0, factors.t.shape().1),
    };
    if lambda < 1.0 {
        check_bundle(logits, bundle)?;
        if factors.num_teachers() != bundle.num_teachers() {
            return Err(Error::Config(format!(
                "coefficient factors cover {} teachers, bundle has {}",
                factors.num_teachers(),
                bundle.num_teachers()
            )));
        }
        let scope = &bundle.scope;
        let n = scope.len();
        let inv = 1.0 / n as f64;
        let scale = 1.0 - lambda;
        let scoped_logits = logits.gather_rows(scope)?;
        let h_s = hidden.gather_rows(scope)?;
        let cc = coefficients_cached(&h_s, factors)?;
        let c = &cc.c;

        // KL part and its gradient on logits; dC_vi = KL_vi / n
        let mut dc = Matrix::zeros(n, bundle.num_teachers());
        let mut kl_term = 0.0;
        for (i, t) in bundle.teachers.iter().enumerate() {
            let per_row = kl_rows(t, &scoped_logits)?;
            let weights: Vec<f64> = (0..n).map(|v| c.get(v, i) * inv).collect();
            let (kl, g) = kl_divergence_rows(t, &scoped_logits, &weights)?;
            kl_term += kl;
            scatter_rows(&mut dlogits, scope, &g, scale);
            for (v, k) in per_row.iter().enumerate() {
                dc.set(v, i, k * inv);
            }
        }
        let (entropy, dent) = entropy_of_mean(c)?;
        dc.axpy(-gamma, &dent)?;
        let dc = dc.scale(scale);

        let du = row_softmax_backward(c, &dc)?;
        out.dt = matmul_tn(&cc.s, &du)?;
        let ds = matmul_nt(&du, &factors.t.value)?;
        let da = tanh_backward(&cc.s, &ds)?;
        out.dw = matmul_tn(&h_s, &da)?;
        let dh_s = matmul_nt(&da, &factors.w.value)?;
        scatter_rows(&mut out.dhidden, scope, &dh_s, 1.0);

        out.kl_term = kl_term;
        out.entropy = entropy;
        out.loss += scale * (kl_term - gamma * entropy);
    }
    out.dlogits = dlogits;
    Ok(out)
}

/// A trained student: the MLP plus, depending on the mode, the coefficient
/// factors (mgfnn-plus) or learned view-weight logits (para).
#[derive(Debug, Clone, PartialEq)]
pub struct Student {
    pub mode: DistillMode,
    pub mlp: MlpParams,
    pub factors: Option<CoeffFactors>,
    pub view_logits: Option<ParamTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StudentArch {
    mode: DistillMode,
    in_dim: usize,
    hidden: usize,
    num_classes: usize,
    layers: usize,
    rank: Option<usize>,
    num_teachers: Option<usize>,
}

impl Student {
    pub fn init(in_dim: usize, num_classes: usize, num_teachers: usize, cfg: &DistillConfig) -> Self {
        let mlp = MlpParams::init(in_dim, cfg.hidden, num_classes, cfg.layers, cfg.seed);
        let factors = (cfg.mode == DistillMode::MgfnnPlus).then(|| {
            CoeffFactors::init(mlp.hidden_dim(), cfg.rank, num_teachers, cfg.seed ^ 0xc0ef)
        });
        let view_logits =
            (cfg.mode == DistillMode::Para).then(|| ParamTensor::zeros(1, num_teachers));
        Self {
            mode: cfg.mode,
            mlp,
            factors,
            view_logits,
        }
    }

    /// Graph-free inference: logits from features alone.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        Ok(mlp_forward(&self.mlp, x)?.1)
    }

    /// Node-wise coefficients for the given feature rows (mgfnn-plus only).
    pub fn coefficients_for(&self, x: &Matrix) -> Result<Matrix> {
        let factors = self
            .factors
            .as_ref()
            .ok_or_else(|| Error::Config("student has no coefficient factors".into()))?;
        let (h, _) = mlp_forward(&self.mlp, x)?;
        coefficients(&h, factors)
    }

    /// Learned view weights of a para student.
    pub fn view_weights(&self) -> Option<Vec<f64>> {
        self.view_logits
            .as_ref()
            .map(|q| row_softmax(&q.value).data().to_vec())
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = self.mlp.params_mut();
        if let Some(f) = self.factors.as_mut() {
            out.push(&mut f.w);
            out.push(&mut f.t);
        }
        if let Some(q) = self.view_logits.as_mut() {
            out.push(q);
        }
        out
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let arch = StudentArch {
            mode: self.mode,
            in_dim: self.mlp.in_dim(),
            hidden: self.mlp.hidden_dim(),
            num_classes: self.mlp.out_dim(),
            layers: self.mlp.layers.len(),
            rank: self.factors.as_ref().map(CoeffFactors::rank),
            num_teachers: self
                .factors
                .as_ref()
                .map(CoeffFactors::num_teachers)
                .or_else(|| self.view_logits.as_ref().map(|q| q.shape().1)),
        };
        let mut ck = Checkpoint::new("student", serde_json::to_value(arch).expect("plain data"));
        for (l, layer) in self.mlp.layers.iter().enumerate() {
            ck.push(format!("mlp.layer{l}.weight"), &layer.weight.value);
            ck.push(format!("mlp.layer{l}.bias"), &layer.bias.value);
        }
        if let Some(f) = &self.factors {
            ck.push("coeff.w", &f.w.value);
            ck.push("coeff.t", &f.t.value);
        }
        if let Some(q) = &self.view_logits {
            ck.push("view_logits", &q.value);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_model("student")?;
        let arch: StudentArch = ck.arch()?;
        if arch.layers == 0 {
            return Err(Error::Checkpoint("student without layers".into()));
        }
        // For a 1-layer student the stored "hidden" is the input width.
        let hidden = if arch.layers == 1 { 1 } else { arch.hidden };
        let mut mlp = MlpParams::init(arch.in_dim, hidden, arch.num_classes, arch.layers, 0);
        for (l, layer) in mlp.layers.iter_mut().enumerate() {
            ck.restore(&format!("mlp.layer{l}.weight"), &mut layer.weight)?;
            ck.restore(&format!("mlp.layer{l}.bias"), &mut layer.bias)?;
        }
        let teachers = arch.num_teachers.unwrap_or(0);
        let factors = match arch.mode {
            DistillMode::MgfnnPlus => {
                let rank = arch
                    .rank
                    .ok_or_else(|| Error::Checkpoint("mgfnn-plus student without rank".into()))?;
                let mut f = CoeffFactors::init(mlp.hidden_dim(), rank, teachers, 0);
                ck.restore("coeff.w", &mut f.w)?;
                ck.restore("coeff.t", &mut f.t)?;
                Some(f)
            }
            _ => None,
        };
        let view_logits = match arch.mode {
            DistillMode::Para => {
                let mut q = ParamTensor::zeros(1, teachers);
                ck.restore("view_logits", &mut q)?;
                Some(q)
            }
            _ => None,
        };
        Ok(Self {
            mode: arch.mode,
            mlp,
            factors,
            view_logits,
        })
    }
}

/// One optimization objective evaluated at the current student parameters,
/// accumulating gradients. Returns the loss.
fn student_loss_and_backward(
    student: &mut Student,
    x: &Matrix,
    labels: &Matrix,
    labeled: &[usize],
    bundle: &SoftLabelBundle,
    cfg: &DistillConfig,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<f64> {
    let drop = dropout.map(|r| (cfg.dropout, r));
    let (hidden, logits, cache) = student.mlp.forward_cached(x, drop)?;
    let lambda = cfg.lambda;
    let (loss, dlogits, dhidden) = match cfg.mode {
        DistillMode::Mgfnn => {
            let (l, g) = mgfnn_loss(&logits, labels, labeled, bundle, lambda)?;
            (l, g, None)
        }
        DistillMode::Mean | DistillMode::Para => {
            let (ce, mut g) = ce_term(&logits, labels, labeled, lambda)?;
            let mut loss = ce;
            if lambda < 1.0 {
                let r1 = bundle.num_teachers();
                let c = match &student.view_logits {
                    Some(q) => row_softmax(&q.value).data().to_vec(),
                    None => vec![1.0 / r1 as f64; r1],
                };
                let (vl, vg, dc) = viewwise_loss(&logits, bundle, &c)?;
                loss += (1.0 - lambda) * vl;
                g.axpy(1.0 - lambda, &vg)?;
                if let Some(q) = student.view_logits.as_mut() {
                    let pc = Matrix::from_vec(1, r1, c)?;
                    let dcm = Matrix::from_vec(1, r1, dc)?.scale(1.0 - lambda);
                    q.accumulate(&row_softmax_backward(&pc, &dcm)?)?;
                }
            }
            (loss, g, None)
        }
        DistillMode::MgfnnPlus => {
            let factors = student
                .factors
                .as_mut()
                .ok_or_else(|| Error::Config("mgfnn-plus student without factors".into()))?;
            let out = mgfnn_plus_loss(
                &logits, &hidden, factors, bundle, lambda, cfg.gamma, labels, labeled,
            )?;
            factors.w.accumulate(&out.dw)?;
            factors.t.accumulate(&out.dt)?;
            (out.loss, out.dlogits, Some(out.dhidden))
        }
    };
    student.mlp.backward(&cache, &dlogits, dhidden.as_ref())?;
    Ok(loss)
}

impl Student {
    /// Training objective at the current parameters without dropout; adds its
    /// gradient to every parameter's `grad`.
    pub fn objective(
        &mut self,
        x: &Matrix,
        labels: &Matrix,
        labeled: &[usize],
        bundle: &SoftLabelBundle,
        cfg: &DistillConfig,
    ) -> Result<f64> {
        student_loss_and_backward(self, x, labels, labeled, bundle, cfg, None)
    }
}

/// Trains a student from node features, labels and a soft-label bundle. No
/// adjacency is read. The parameters with the best validation accuracy win.
pub fn train_student(
    x: &Matrix,
    labels: &[usize],
    num_classes: usize,
    splits: &SplitSpec,
    bundle: &SoftLabelBundle,
    cfg: &DistillConfig,
) -> Result<(Student, Vec<EpochLog>)> {
    cfg.validate()?;
    if labels.len() != x.rows() {
        return Err(Error::Config(format!(
            "{} labels for {} feature rows",
            labels.len(),
            x.rows()
        )));
    }
    if splits.val.is_empty() {
        return Err(Error::Config("student training needs a validation set".into()));
    }
    if cfg.lambda < 1.0 {
        bundle.validate()?;
        if let Some(&v) = bundle.scope.iter().find(|&&v| v >= x.rows()) {
            return Err(Error::Config(format!(
                "soft-label scope node {v} outside {} feature rows",
                x.rows()
            )));
        }
    }
    let num_teachers = bundle.num_teachers().max(1);
    let onehot = one_hot(labels, num_classes);
    let mut student = Student::init(x.cols(), num_classes, num_teachers, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd15_7111);
    let mut best: Option<(f64, Student)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        student.params_mut().iter_mut().for_each(|p| p.zero_grad());
        let drop = (cfg.dropout > 0.0).then_some(&mut rng);
        let loss =
            student_loss_and_backward(&mut student, x, &onehot, &splits.train, bundle, cfg, drop)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("student loss {loss} at epoch {epoch}")));
        }
        adam_step(&mut student.params_mut(), &cfg.adam);
        let val_acc = accuracy(&student.predict(x)?.argmax_rows(), labels, &splits.val)?;
        log.push(EpochLog {
            epoch,
            train_loss: loss,
            val_acc,
        });
        if best.as_ref().is_none_or(|(b, _)| val_acc > *b) {
            best = Some((val_acc, student.clone()));
        }
    }
    Ok((best.map_or(student, |(_, s)| s), log))
}

/// Coefficient rows for the requested nodes, computed from the student's
/// hidden representation `h` (all nodes).
pub fn export_coefficients(
    h: &Matrix,
    factors: &CoeffFactors,
    nodes: &[usize],
) -> Result<Vec<(usize, Vec<f64>)>> {
    if let Some(&v) = nodes.iter().find(|&&v| v >= h.rows()) {
        return Err(Error::Config(format!("unknown node id {v} (graph has {} nodes)", h.rows())));
    }
    let c = coefficients(&h.gather_rows(nodes)?, factors)?;
    Ok(nodes
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, c.row(i).to_vec()))
        .collect())
}

/// CSV with header `node,c_1,...,c_{r+1}`; the last column is the integrated teacher.
pub fn coefficients_csv(rows: &[(usize, Vec<f64>)], num_teachers: usize) -> String {
    let mut s = String::from("node");
    for i in 1..=num_teachers {
        s.push_str(&format!(",c_{i}"));
    }
    s.push('\n');
    for (v, c) in rows {
        s.push_str(&v.to_string());
        for x in c {
            s.push_str(&format!(",{x}"));
        }
        s.push('\n');
    }
    s
}
