//! Multiple choice learning: winner selection, winner-takes-all and scoring
//! losses, and hypothesis aggregation.
//!
//! Ties in the per-frame argmin go to the lowest hypothesis index.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::skeleton::{distance, Pose, PoseSequence};

/// Lower clamp applied to the winner's score inside the cross-entropy.
pub const SCORE_CLAMP: f64 = 1e-12;

const SIMPLEX_TOL: f64 = 1e-9;

/// `K` pose-sequence hypotheses with per-frame scores on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSet {
    hypotheses: Vec<PoseSequence>,
    /// `scores[t][k]`.
    scores: Vec<Vec<f64>>,
}

impl HypothesisSet {
    pub fn new(hypotheses: Vec<PoseSequence>, scores: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = hypotheses.first() else {
            return Err(Error::InvalidArgument("at least one hypothesis is required".into()));
        };
        for h in &hypotheses[1..] {
            h.same_shape(first, "hypothesis shape")?;
        }
        ensure_dim("score frames", first.len(), scores.len())?;
        for (t, row) in scores.iter().enumerate() {
            ensure_dim("scores per frame", hypotheses.len(), row.len())?;
            if row.iter().any(|g| !(0.0..=1.0).contains(g)) {
                return Err(Error::InvalidArgument(format!("frame {t} has a score outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidArgument(format!(
                    "frame {t} scores sum to {sum}, not 1"
                )));
            }
        }
        Ok(HypothesisSet { hypotheses, scores })
    }

    /// One hypothesis with score 1 at every frame.
    pub fn single(seq: PoseSequence) -> Self {
        let l = seq.len();
        HypothesisSet {
            hypotheses: vec![seq],
            scores: vec![vec![1.0]; l],
        }
    }

    /// Builds scores from raw logits `logits[t][k]` through a softmax.
    pub fn from_logits(hypotheses: Vec<PoseSequence>, logits: &[Vec<f64>]) -> Result<Self> {
        let scores = logits.iter().map(|row| softmax(row)).collect();
        Self::new(hypotheses, scores)
    }

    pub fn k(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn len(&self) -> usize {
        self.hypotheses[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses[0].is_empty()
    }

    pub fn hypothesis(&self, k: usize) -> &PoseSequence {
        &self.hypotheses[k]
    }

    pub fn hypotheses(&self) -> &[PoseSequence] {
        &self.hypotheses
    }

    pub fn scores(&self) -> &[Vec<f64>] {
        &self.scores
    }

    fn frame_hypotheses(&self, t: usize) -> Vec<&Pose> {
        self.hypotheses.iter().map(|h| h.frame(t)).collect()
    }

    fn check_target(&self, target: &PoseSequence) -> Result<()> {
        self.hypotheses[0].same_shape(target, "hypotheses vs target")
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Loss hyperparameters: score weight and optional per-joint weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub joint_weights: Option<Vec<f64>>,
}

fn default_beta() -> f64 {
    1.0
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            beta: default_beta(),
            joint_weights: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::InvalidArgument(format!("beta must be >= 0, got {}", self.beta)));
        }
        if let Some(w) = &self.joint_weights {
            if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::InvalidArgument("joint weights must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Joint weights of the 17-joint skeleton used with the weighted WTA loss.
pub const H36M_JOINT_WEIGHTS: [f64; 17] = [
    1.0, 1.0, 2.5, 2.5, 1.0, 2.5, 2.5, 1.0, 1.0, 1.0, 1.5, 1.5, 4.0, 4.0, 1.5, 4.0, 4.0,
];

/// Mean per-joint Euclidean distance, weight-normalized when weights are given.
pub fn per_frame_error(pred: &Pose, target: &Pose, weights: Option<&[f64]>) -> Result<f64> {
    pred.same_shape(target, "per_frame_error")?;
    let dists = pred.joints().zip(target.joints()).map(|(a, b)| distance(a, b));
    match weights {
        None => Ok(dists.sum::<f64>() / pred.joint_count() as f64),
        Some(w) => {
            ensure_dim("joint weights", pred.joint_count(), w.len())?;
            let total: f64 = w.iter().sum();
            Ok(dists.zip(w).map(|(d, w)| d * w).sum::<f64>() / total)
        }
    }
}

/// Index of the hypothesis closest to `target`; lowest index on ties.
pub fn winner(hyps: &[&Pose], target: &Pose, weights: Option<&[f64]>) -> Result<usize> {
    let mut best = (0, f64::INFINITY);
    for (k, h) in hyps.iter().enumerate() {
        let e = per_frame_error(h, target, weights)?;
        if e < best.1 {
            best = (k, e);
        }
    }
    Ok(best.0)
}

/// One-hot winner indicator.
pub fn winner_indicator(hyps: &[&Pose], target: &Pose, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    if hyps.is_empty() {
        return Err(Error::InvalidArgument("at least one hypothesis is required".into()));
    }
    let w = winner(hyps, target, weights)?;
    Ok((0..hyps.len()).map(|k| if k == w { 1.0 } else { 0.0 }).collect())
}

fn winners(hyp: &HypothesisSet, target: &PoseSequence, weights: Option<&[f64]>) -> Result<Vec<usize>> {
    hyp.check_target(target)?;
    (0..hyp.len())
        .map(|t| winner(&hyp.frame_hypotheses(t), target.frame(t), weights))
        .collect()
}

/// Per-frame winner indices under the given loss configuration.
pub fn frame_winners(hyp: &HypothesisSet, target: &PoseSequence, cfg: &LossConfig) -> Result<Vec<usize>> {
    winners(hyp, target, cfg.joint_weights.as_deref())
}

/// `(1/L) sum_t min_k error(hyp_k[t], target[t])`.
pub fn wta_loss(hyp: &HypothesisSet, target: &PoseSequence, cfg: &LossConfig) -> Result<f64> {
    hyp.check_target(target)?;
    let w = cfg.joint_weights.as_deref();
    let mut total = 0.0;
    for t in 0..hyp.len() {
        let mut best = f64::INFINITY;
        for h in &hyp.hypotheses {
            best = best.min(per_frame_error(h.frame(t), target.frame(t), w)?);
        }
        total += best;
    }
    Ok(total / hyp.len() as f64)
}

/// Average cross-entropy between the one-hot winner and the scores.
pub fn scoring_loss(hyp: &HypothesisSet, target: &PoseSequence) -> Result<f64> {
    scoring_loss_weighted(hyp, target, None)
}

fn scoring_loss_weighted(
    hyp: &HypothesisSet,
    target: &PoseSequence,
    weights: Option<&[f64]>,
) -> Result<f64> {
    let win = winners(hyp, target, weights)?;
    let total: f64 = win
        .iter()
        .enumerate()
        .map(|(t, &k)| -hyp.scores[t][k].max(SCORE_CLAMP).ln())
        .sum();
    Ok(total / hyp.len() as f64)
}

/// `wta + beta * score`.
pub fn composite_loss(hyp: &HypothesisSet, target: &PoseSequence, cfg: &LossConfig) -> Result<f64> {
    let wta = wta_loss(hyp, target, cfg)?;
    let score = scoring_loss_weighted(hyp, target, cfg.joint_weights.as_deref())?;
    Ok(wta + cfg.beta * score)
}

/// Composite loss value with its gradient.
#[derive(Debug, Clone)]
pub struct CompositeGrad {
    pub loss: f64,
    pub wta: f64,
    pub score: f64,
    pub winners: Vec<usize>,
    /// `d_hypotheses[k][t]` has the layout of `Pose::coords`. Only winners
    /// receive a non-zero gradient.
    pub d_hypotheses: Vec<Vec<Vec<f64>>>,
    /// Gradient w.r.t. the score logits, `d_logits[t][k] = beta (gamma - delta) / L`,
    /// assuming the scores are a softmax of those logits.
    pub d_logits: Vec<Vec<f64>>,
}

pub fn composite_loss_grad(
    hyp: &HypothesisSet,
    target: &PoseSequence,
    cfg: &LossConfig,
) -> Result<CompositeGrad> {
    hyp.check_target(target)?;
    let weights = cfg.joint_weights.as_deref();
    let l = hyp.len();
    let (jc, dim) = (target.joint_count(), target.dim());
    if let Some(w) = weights {
        ensure_dim("joint weights", jc, w.len())?;
    }
    let wsum = weights.map_or(jc as f64, |w| w.iter().sum());
    let mut d_hyp = vec![vec![vec![0.0; jc * dim]; l]; hyp.k()];
    let mut d_logits = vec![vec![0.0; hyp.k()]; l];
    let (mut wta, mut score) = (0.0, 0.0);
    let inv_l = 1.0 / l as f64;
    let mut win = Vec::with_capacity(l);
    for t in 0..l {
        let p = target.frame(t);
        let mut best = (0, f64::INFINITY);
        for (k, h) in hyp.hypotheses.iter().enumerate() {
            let e = per_frame_error(h.frame(t), p, weights)?;
            if e < best.1 {
                best = (k, e);
            }
        }
        let (kw, e) = best;
        win.push(kw);
        wta += e;
        score -= hyp.scores[t][kw].max(SCORE_CLAMP).ln();

        let pred = hyp.hypotheses[kw].frame(t);
        let g = &mut d_hyp[kw][t];
        for j in 0..jc {
            let a = pred.joint(j);
            let b = p.joint(j);
            let d = distance(a, b);
            if d > 0.0 {
                let wj = weights.map_or(1.0, |w| w[j]);
                let f = inv_l * wj / (wsum * d);
                for c in 0..dim {
                    g[j * dim + c] = f * (a[c] - b[c]);
                }
            }
        }
        for (k, dl) in d_logits[t].iter_mut().enumerate() {
            let delta = if k == kw { 1.0 } else { 0.0 };
            *dl = cfg.beta * inv_l * (hyp.scores[t][k] - delta);
        }
    }
    wta *= inv_l;
    score *= inv_l;
    Ok(CompositeGrad {
        loss: wta + cfg.beta * score,
        wta,
        score,
        winners: win,
        d_hypotheses: d_hyp,
        d_logits,
    })
}

/// Score-weighted average of the hypotheses, frame by frame.
pub fn aggregate(hyp: &HypothesisSet) -> PoseSequence {
    let frames = (0..hyp.len())
        .map(|t| {
            let mut coords = vec![0.0; hyp.hypotheses[0].frame(t).coords().len()];
            for (h, g) in hyp.hypotheses.iter().zip(&hyp.scores[t]) {
                for (c, v) in coords.iter_mut().zip(h.frame(t).coords()) {
                    *c += g * v;
                }
            }
            Pose::new(hyp.hypotheses[0].dim(), coords).expect("convex combination is finite")
        })
        .collect();
    PoseSequence::new(frames).expect("aggregate shares hypothesis shape")
}

/// Per-frame winning hypothesis against the ground truth.
pub fn oracle_select(hyp: &HypothesisSet, target: &PoseSequence) -> Result<PoseSequence> {
    oracle_select_weighted(hyp, target, None)
}

pub fn oracle_select_weighted(
    hyp: &HypothesisSet,
    target: &PoseSequence,
    weights: Option<&[f64]>,
) -> Result<PoseSequence> {
    let win = winners(hyp, target, weights)?;
    let frames = win
        .iter()
        .enumerate()
        .map(|(t, &k)| hyp.hypotheses[k].frame(t).clone())
        .collect();
    PoseSequence::new(frames)
}
