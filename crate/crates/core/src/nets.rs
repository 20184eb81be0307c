//! Small tanh MLPs with manual backpropagation, Adam and a plateau scheduler,
//! plus the three lifting models used on the synthetic tasks.
//!
//! Parameters live in one flat vector. Layer `l` stores its weight matrix
//! row-major as `[out][in]`, followed by its bias. Hidden layers use `tanh`;
//! the output layer is linear and its columns are split into named heads.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure_dim, Error, Result};
use crate::mcl::{composite_loss_grad, HypothesisSet, LossConfig};
use crate::rotations::{angle_to_point, torus_jacobian, torus_to_points};
use crate::skeleton::{Pose, PoseSequence};
use crate::synthdata::{Scenario, Split, TORUS_S0, TORUS_S1};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub name: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub heads: Vec<Head>,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, heads: Vec<Head>) -> Result<Self> {
        let spec = MlpSpec { input_dim, hidden_dims, heads };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        if self.heads.is_empty() || self.heads.iter().any(|h| h.dim == 0) {
            return Err(Error::InvalidArgument("an MLP needs at least one non-empty head".into()));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.heads.iter().map(|h| h.dim).sum()
    }

    /// `(fan_in, fan_out)` of each layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden_dims);
        widths.push(self.output_dim());
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| o * (i + 1)).sum()
    }

    /// Column range of head `name` in the output.
    pub fn head_range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut start = 0;
        for h in &self.heads {
            if h.name == name {
                return Some(start..start + h.dim);
            }
            start += h.dim;
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<f64>,
}

/// Activations kept by [`Mlp::forward`] for [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// Layer inputs: the network input, then each hidden activation.
    inputs: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.param_count();
        Ok(Mlp { spec, params: vec![0.0; n] })
    }

    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::with_capacity(spec.param_count());
        for (fan_in, fan_out) in spec.layers() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_out * (fan_in + 1) {
                params.push(rng.random_range(-bound..bound));
            }
        }
        Ok(Mlp { spec, params })
    }

    pub fn from_params(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        ensure_dim("MLP parameters", spec.param_count(), params.len())?;
        Ok(Mlp { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Outputs for a row-major batch `x` of `batch x input_dim`.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let d_in = self.spec.input_dim;
        if !x.len().is_multiple_of(d_in) {
            return Err(Error::DimensionMismatch {
                context: "MLP input",
                expected: d_in,
                actual: x.len() % d_in,
            });
        }
        let batch = x.len() / d_in;
        let layers = self.spec.layers();
        let mut inputs = Vec::with_capacity(layers.len());
        let mut cur = x.to_vec();
        let mut offset = 0;
        for (l, &(fi, fo)) in layers.iter().enumerate() {
            let w = &self.params[offset..offset + fi * fo];
            let b = &self.params[offset + fi * fo..offset + fo * (fi + 1)];
            offset += fo * (fi + 1);
            let mut out = vec![0.0; batch * fo];
            for n in 0..batch {
                let row = &cur[n * fi..(n + 1) * fi];
                for o in 0..fo {
                    let wr = &w[o * fi..(o + 1) * fi];
                    let mut acc = b[o];
                    for (a, c) in wr.iter().zip(row) {
                        acc += a * c;
                    }
                    out[n * fo + o] = acc;
                }
            }
            if l + 1 < layers.len() {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            inputs.push(std::mem::replace(&mut cur, out));
        }
        Ok((cur, ForwardCache { batch, inputs }))
    }

    /// Parameter gradient given the gradient of the loss w.r.t. the outputs.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64]) -> Result<Vec<f64>> {
        let layers = self.spec.layers();
        ensure_dim("forward cache layers", layers.len(), cache.inputs.len())?;
        let batch = cache.batch;
        ensure_dim("output gradient", batch * self.spec.output_dim(), d_out.len())?;
        let mut grad = vec![0.0; self.params.len()];
        let mut offsets = Vec::with_capacity(layers.len());
        let mut off = 0;
        for &(fi, fo) in &layers {
            offsets.push(off);
            off += fo * (fi + 1);
        }
        let mut delta = d_out.to_vec();
        for l in (0..layers.len()).rev() {
            let (fi, fo) = layers[l];
            let off = offsets[l];
            let input = &cache.inputs[l];
            let w = &self.params[off..off + fi * fo];
            {
                let (gw, gb) = grad[off..off + fo * (fi + 1)].split_at_mut(fi * fo);
                for n in 0..batch {
                    let row = &input[n * fi..(n + 1) * fi];
                    for o in 0..fo {
                        let d = delta[n * fo + o];
                        gb[o] += d;
                        for (g, a) in gw[o * fi..(o + 1) * fi].iter_mut().zip(row) {
                            *g += d * a;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            // Propagate to the previous tanh layer: d/dz = d/da * (1 - a^2).
            let mut prev = vec![0.0; batch * fi];
            for n in 0..batch {
                for o in 0..fo {
                    let d = delta[n * fo + o];
                    for (p, a) in prev[n * fi..(n + 1) * fi].iter_mut().zip(&w[o * fi..(o + 1) * fi]) {
                        *p += d * a;
                    }
                }
            }
            for (p, a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
        Ok(grad)
    }
}

/// Adam with L2 weight decay added to the gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(param_count: usize) -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; param_count], v: vec![0.0; param_count], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient length mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i] + weight_decay * params[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub factor: f64,
    pub patience: usize,
    /// Relative improvement threshold.
    pub threshold: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig { factor: 0.5, patience: 10, threshold: 1e-4 }
    }
}

/// Reduce-on-plateau in relative mode: a loss counts as an improvement only
/// if it is below `best * (1 - threshold)`. After more than `patience`
/// consecutive non-improving epochs the rate is multiplied by `factor`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    cfg: SchedulerConfig,
    lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    /// Reductions smaller than this are skipped.
    const MIN_DELTA: f64 = 1e-8;

    pub fn new(lr: f64, cfg: SchedulerConfig) -> Self {
        PlateauScheduler { cfg, lr, best: f64::INFINITY, bad_epochs: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best * (1.0 - self.cfg.threshold) {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.bad_epochs > self.cfg.patience {
            let new_lr = self.lr * self.cfg.factor;
            if self.lr - new_lr > Self::MIN_DELTA {
                self.lr = new_lr;
            }
            self.bad_epochs = 0;
        }
        self.lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelKind {
    Unconstrained,
    Constrained,
    ManiPose { k: usize },
}

impl ModelKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelKind::ManiPose { k: 0 } => Err(Error::InvalidArgument("ManiPose needs K >= 1".into())),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            ModelKind::Unconstrained => "unconstrained".into(),
            ModelKind::Constrained => "constrained".into(),
            ModelKind::ManiPose { k } => format!("manipose-k{k}"),
        }
    }

    pub fn is_constrained(&self) -> bool {
        !matches!(self, ModelKind::Unconstrained)
    }
}

/// Network heads for `kind` on `scenario`.
pub fn heads_for(scenario: Scenario, kind: ModelKind) -> Vec<Head> {
    let head = |name: &str, dim| Head { name: name.into(), dim };
    match (scenario.is_torus(), kind) {
        (false, ModelKind::Unconstrained) => vec![head("coords", 2)],
        (true, ModelKind::Unconstrained) => vec![head("coords", 6)],
        (false, ModelKind::Constrained) => vec![head("theta", 1)],
        (true, ModelKind::Constrained) => vec![head("theta", 1), head("phi", 1)],
        (false, ModelKind::ManiPose { k }) => vec![head("theta", k), head("logits", k)],
        (true, ModelKind::ManiPose { k }) => {
            vec![head("theta", k), head("phi", k), head("logits", k)]
        }
    }
}

/// An MLP together with the decoding of its outputs into task poses.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftingModel {
    pub scenario: Scenario,
    pub kind: ModelKind,
    pub beta: f64,
    pub mlp: Mlp,
}

/// Decoded predictions for a batch.
#[derive(Debug, Clone)]
pub struct Prediction {
    /// `K` hypotheses (one for the regressors) with their scores.
    pub hypotheses: HypothesisSet,
    /// Raw network outputs, row-major.
    pub raw: Vec<f64>,
}

/// Loss value and output-space gradient for one batch.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub loss: f64,
    pub d_out: Vec<f64>,
    pub winners: Option<Vec<usize>>,
}

impl LiftingModel {
    pub fn new<R: Rng + ?Sized>(scenario: Scenario, kind: ModelKind, beta: f64, rng: &mut R) -> Result<Self> {
        kind.validate()?;
        let spec = MlpSpec::new(scenario.input_dim(), vec![32, 32], heads_for(scenario, kind))?;
        Ok(LiftingModel { scenario, kind, beta, mlp: Mlp::init(spec, rng)? })
    }

    pub fn k(&self) -> usize {
        match self.kind {
            ModelKind::ManiPose { k } => k,
            _ => 1,
        }
    }

    fn out_dim(&self) -> usize {
        self.mlp.spec.output_dim()
    }

    /// Pose of hypothesis `h` decoded from output row `row`.
    fn decode(&self, row: &[f64], h: usize) -> Pose {
        let k = self.k();
        let torus = self.scenario.is_torus();
        let pose = match (self.kind, torus) {
            (ModelKind::Unconstrained, false) => Pose::new(2, [0.0, 0.0, row[0], row[1]].to_vec()),
            (ModelKind::Unconstrained, true) => {
                let mut c = vec![0.0; 3];
                c.extend_from_slice(&row[..6]);
                Pose::new(3, c)
            }
            (_, false) => Pose::from_points(&[[0.0; 2], angle_to_point(row[h], 1.0)]),
            (_, true) => {
                let [j1, j2] = torus_to_points(row[h], row[k + h], TORUS_S0, TORUS_S1);
                Pose::from_points(&[[0.0; 3], j1, j2])
            }
        };
        pose.expect("decoded pose is finite")
    }

    fn logits<'a>(&self, row: &'a [f64]) -> &'a [f64] {
        let k = self.k();
        let start = if self.scenario.is_torus() { 2 * k } else { k };
        &row[start..start + k]
    }

    fn hypotheses_from_raw(&self, raw: &[f64]) -> Result<HypothesisSet> {
        let od = self.out_dim();
        let rows: Vec<&[f64]> = raw.chunks(od).collect();
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("network produced non-finite outputs".into()));
        }
        let hyps = (0..self.k())
            .map(|h| PoseSequence::new(rows.iter().map(|r| self.decode(r, h)).collect()))
            .collect::<Result<Vec<_>>>()?;
        match self.kind {
            ModelKind::ManiPose { .. } => {
                let logits: Vec<Vec<f64>> = rows.iter().map(|r| self.logits(r).to_vec()).collect();
                HypothesisSet::from_logits(hyps, &logits)
            }
            _ => Ok(HypothesisSet::single(hyps.into_iter().next().expect("one hypothesis"))),
        }
    }

    /// Predictions for a row-major batch of inputs.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let (raw, _) = self.mlp.forward(x)?;
        Ok(Prediction { hypotheses: self.hypotheses_from_raw(&raw)?, raw })
    }

    /// Training objective and its gradient w.r.t. the raw outputs.
    ///
    /// Regressors use `(1/N) sum_i ||p_hat_i - p_i||^2`; ManiPose uses the
    /// composite winner-takes-all plus scoring loss.
    pub fn batch_loss(&self, raw: &[f64], targets: &PoseSequence) -> Result<BatchLoss> {
        let od = self.out_dim();
        let n = targets.len();
        ensure_dim("outputs per target", n * od, raw.len())?;
        let hyps = self.hypotheses_from_raw(raw)?;
        let mut d_out = vec![0.0; raw.len()];
        let torus = self.scenario.is_torus();
        let k = self.k();
        // Chain rule from pose coordinates (root included) to raw outputs.
        let pull = |d_out: &mut [f64], t: usize, h: usize, d_pose: &[f64]| {
            let row = &raw[t * od..(t + 1) * od];
            let out = &mut d_out[t * od..(t + 1) * od];
            match (self.kind, torus) {
                (ModelKind::Unconstrained, false) => {
                    out[0] += d_pose[2];
                    out[1] += d_pose[3];
                }
                (ModelKind::Unconstrained, true) => {
                    for c in 0..6 {
                        out[c] += d_pose[3 + c];
                    }
                }
                (_, false) => {
                    let (s, c) = row[h].sin_cos();
                    out[h] += -s * d_pose[2] + c * d_pose[3];
                }
                (_, true) => {
                    let jac = torus_jacobian(row[h], row[k + h], TORUS_S0, TORUS_S1);
                    let dot = |col: &[f64; 6]| col.iter().zip(&d_pose[3..]).map(|(a, b)| a * b).sum::<f64>();
                    out[h] += dot(&jac[0]);
                    out[k + h] += dot(&jac[1]);
                }
            }
        };
        match self.kind {
            ModelKind::ManiPose { .. } => {
                let cfg = LossConfig { beta: self.beta, joint_weights: None };
                let g = composite_loss_grad(&hyps, targets, &cfg)?;
                for t in 0..n {
                    let w = g.winners[t];
                    pull(&mut d_out, t, w, &g.d_hypotheses[w][t]);
                    let start = if torus { 2 * k } else { k };
                    for (h, dl) in g.d_logits[t].iter().enumerate() {
                        d_out[t * od + start + h] += dl;
                    }
                }
                Ok(BatchLoss { loss: g.loss, d_out, winners: Some(g.winners) })
            }
            _ => {
                let pred = hyps.hypothesis(0);
                let mut loss = 0.0;
                for t in 0..n {
                    let (p, y) = (pred.frame(t).coords(), targets.frame(t).coords());
                    let d: Vec<f64> = p.iter().zip(y).map(|(a, b)| a - b).collect();
                    loss += d.iter().map(|v| v * v).sum::<f64>();
                    let dp: Vec<f64> = d.iter().map(|v| 2.0 * v / n as f64).collect();
                    pull(&mut d_out, t, 0, &dp);
                }
                Ok(BatchLoss { loss: loss / n as f64, d_out, winners: None })
            }
        }
    }

    /// Loss and parameter gradient on a batch.
    pub fn loss_and_grad(&self, x: &[f64], targets: &PoseSequence) -> Result<(BatchLoss, Vec<f64>)> {
        let (raw, cache) = self.mlp.forward(x)?;
        let bl = self.batch_loss(&raw, targets)?;
        let grad = self.mlp.backward(&cache, &bl.d_out)?;
        Ok((bl, grad))
    }

    pub fn loss(&self, x: &[f64], targets: &PoseSequence) -> Result<f64> {
        let (raw, _) = self.mlp.forward(x)?;
        Ok(self.batch_loss(&raw, targets)?.loss)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_batch() -> usize {
    100
}

fn default_epochs() -> usize {
    50
}

fn default_beta() -> f64 {
    1.0
}

impl TrainConfig {
    pub fn toy(learning_rate: f64, seed: u64) -> Self {
        TrainConfig {
            learning_rate,
            batch_size: 100,
            max_epochs: 50,
            weight_decay: 0.0,
            scheduler: SchedulerConfig::default(),
            seed,
            beta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::InvalidArgument("learning rate and batch size must be positive".into()));
        }
        if !(self.scheduler.factor > 0.0 && self.scheduler.factor < 1.0) {
            return Err(Error::InvalidArgument("scheduler factor must be in (0, 1)".into()));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) || self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("beta and weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: LiftingModel,
    pub last: LiftingModel,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Trains `kind` on the train split, selecting weights by validation loss.
///
/// The RNG stream 0 of `seed` initializes the weights and stream 1 shuffles
/// the batches.
pub fn train(scenario: Scenario, kind: ModelKind, train: &Split, val: &Split, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut model = LiftingModel::new(scenario, kind, cfg.beta, &mut init_rng)?;

    let d_in = scenario.input_dim();
    let x_train = train.input_matrix();
    let x_val = val.input_matrix();
    let y_val = val.target_sequence()?;
    let mut adam = Adam::new(model.mlp.params.len());
    let mut sched = PlateauScheduler::new(cfg.learning_rate, cfg.scheduler);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut best = (f64::INFINITY, model.clone(), 0);

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let lr = sched.lr();
        let (mut total, mut batches) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let mut xb = Vec::with_capacity(chunk.len() * d_in);
            for &i in chunk {
                xb.extend_from_slice(&x_train[i * d_in..(i + 1) * d_in]);
            }
            let yb = PoseSequence::new(chunk.iter().map(|&i| train.targets[i].clone()).collect())?;
            let (bl, grad) = match model.loss_and_grad(&xb, &yb) {
                Ok(v) => v,
                Err(Error::InvalidArgument(_)) => return Err(Error::NonFiniteLoss { epoch }),
                Err(e) => return Err(e),
            };
            if !bl.loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch });
            }
            adam.step(&mut model.mlp.params, &grad, lr, cfg.weight_decay);
            total += bl.loss;
            batches += 1;
        }
        let val_loss = match model.loss(&x_val, &y_val) {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(Error::InvalidArgument(_)) => return Err(Error::NonFiniteLoss { epoch }),
            Err(e) => return Err(e),
        };
        history.push(EpochRecord { epoch, train_loss: total / batches as f64, val_loss, lr });
        if val_loss < best.0 {
            best = (val_loss, model.clone(), epoch);
        }
        sched.step(val_loss);
    }
    Ok(TrainOutcome { best: best.1, last: model, best_epoch: best.2, history })
}

pub const CHECKPOINT_SCHEMA: &str = "manilift-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON manifest describing a parameter blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub schema: String,
    pub version: u32,
    pub scenario: Scenario,
    pub kind: ModelKind,
    pub beta: f64,
    pub mlp: MlpSpec,
    pub param_count: usize,
    /// Hex SHA-256 of the little-endian `f64` blob.
    pub sha256: String,
}

pub fn encode_params(params: &[f64]) -> Vec<u8> {
    params.iter().flat_map(|p| p.to_le_bytes()).collect()
}

impl LiftingModel {
    pub fn to_checkpoint(&self) -> (CheckpointManifest, Vec<u8>) {
        let blob = encode_params(&self.mlp.params);
        let manifest = CheckpointManifest {
            schema: CHECKPOINT_SCHEMA.into(),
            version: CHECKPOINT_VERSION,
            scenario: self.scenario,
            kind: self.kind,
            beta: self.beta,
            mlp: self.mlp.spec.clone(),
            param_count: self.mlp.params.len(),
            sha256: hex::encode(Sha256::digest(&blob)),
        };
        (manifest, blob)
    }

    /// Rebuilds a model from a manifest JSON string and its blob.
    pub fn from_checkpoint(manifest_json: &str, blob: &[u8]) -> Result<Self> {
        let m: CheckpointManifest = serde_json::from_str(manifest_json)?;
        if m.schema != CHECKPOINT_SCHEMA || m.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint {} v{}", m.schema, m.version)));
        }
        m.kind.validate()?;
        m.mlp.validate()?;
        if m.mlp.heads != heads_for(m.scenario, m.kind) || m.mlp.input_dim != m.scenario.input_dim() {
            return Err(Error::Checkpoint("network layout does not match the model kind".into()));
        }
        if m.param_count != m.mlp.param_count() || blob.len() != 8 * m.param_count {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, blob holds {} bytes",
                m.mlp.param_count(),
                blob.len()
            )));
        }
        if hex::encode(Sha256::digest(blob)) != m.sha256 {
            return Err(Error::Checkpoint("parameter blob checksum mismatch".into()));
        }
        let params: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(LiftingModel { scenario: m.scenario, kind: m.kind, beta: m.beta, mlp: Mlp::from_params(m.mlp, params)? })
    }

    /// Writes `<stem>.json` and `<stem>.bin` next to each other.
    pub fn save(&self, manifest_path: &Path) -> Result<()> {
        let (m, blob) = self.to_checkpoint();
        std::fs::write(manifest_path, serde_json::to_string_pretty(&m)? + "\n")?;
        std::fs::write(manifest_path.with_extension("bin"), blob)?;
        Ok(())
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(manifest_path)?;
        let blob = std::fs::read(manifest_path.with_extension("bin"))?;
        Self::from_checkpoint(&json, &blob)
    }
}
