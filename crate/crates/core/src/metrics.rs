//! Pose evaluation metrics.
//!
//! Conventions:
//! - MPJPE is root-relative and averages over the non-root joints (the root
//!   error is identically zero after root alignment).
//! - P-MPJPE aligns the root-relative prediction to the ground truth with a
//!   least-squares similarity transform per frame (rotation, translation and
//!   uniform scale) and averages the residuals over all joints. Frames whose
//!   point sets are rank-deficient fall back to translation-only alignment
//!   and are counted in [`ProcrustesOutcome::degenerate_frames`].
//! - MPSCE uses the population (`1/L`) standard deviation over frames.
//! - PCK counts joints whose error is `<=` the threshold; AUC averages PCK
//!   over [`auc_thresholds`]. Both are reported in percent.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::kinematics::SegmentLengths;
use crate::skeleton::{distance, segment_lengths, PoseSequence, Skeleton};

/// Default PCK threshold, in millimetres.
pub const PCK_THRESHOLD_MM: f64 = 150.0;

/// Thresholds 5, 10, ..., 150 mm.
pub fn auc_thresholds() -> Vec<f64> {
    (1..=30).map(|i| 5.0 * i as f64).collect()
}

fn check_pair(pred: &PoseSequence, gt: &PoseSequence) -> Result<()> {
    pred.same_shape(gt, "prediction vs ground truth")?;
    if pred.joint_count() < 2 {
        return Err(Error::InvalidArgument("metrics need at least one non-root joint".into()));
    }
    Ok(())
}

/// Root-relative per-joint errors `[t][j - 1]` for joints `1..J`.
fn root_relative_errors(pred: &PoseSequence, gt: &PoseSequence) -> Vec<Vec<f64>> {
    pred.frames()
        .iter()
        .zip(gt.frames())
        .map(|(p, g)| {
            let (p, g) = (p.root_relative(), g.root_relative());
            (1..p.joint_count())
                .map(|j| distance(p.joint(j), g.joint(j)))
                .collect()
        })
        .collect()
}

/// Mean root-relative error for each non-root joint.
pub fn mpjpe_per_joint(pred: &PoseSequence, gt: &PoseSequence) -> Result<Vec<f64>> {
    check_pair(pred, gt)?;
    let errs = root_relative_errors(pred, gt);
    let n = pred.joint_count() - 1;
    let l = pred.len() as f64;
    Ok((0..n)
        .map(|j| errs.iter().map(|e| e[j]).sum::<f64>() / l)
        .collect())
}

pub fn mpjpe(pred: &PoseSequence, gt: &PoseSequence) -> Result<f64> {
    let per_joint = mpjpe_per_joint(pred, gt)?;
    Ok(per_joint.iter().sum::<f64>() / per_joint.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcrustesOutcome {
    pub value: f64,
    pub degenerate_frames: usize,
}

/// Similarity transform `x -> scale * R x + t` mapping one point set onto another.
#[derive(Debug, Clone)]
pub struct Similarity {
    pub rotation: DMatrix<f64>,
    pub scale: f64,
    pub translation: Vec<f64>,
    pub degenerate: bool,
}

impl Similarity {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        (0..d)
            .map(|r| {
                self.scale * (0..d).map(|c| self.rotation[(r, c)] * x[c]).sum::<f64>()
                    + self.translation[r]
            })
            .collect()
    }
}

/// Least-squares similarity alignment of `src` points onto `dst` points
/// (Umeyama). Both are `n x d` row-major point lists.
pub fn similarity_align(src: &[&[f64]], dst: &[&[f64]]) -> Similarity {
    let n = src.len();
    let d = src[0].len();
    let mean = |pts: &[&[f64]]| -> Vec<f64> {
        (0..d)
            .map(|c| pts.iter().map(|p| p[c]).sum::<f64>() / n as f64)
            .collect()
    };
    let (mu_s, mu_d) = (mean(src), mean(dst));
    let var_s: f64 = src
        .iter()
        .map(|p| p.iter().zip(&mu_s).map(|(a, m)| (a - m) * (a - m)).sum::<f64>())
        .sum::<f64>()
        / n as f64;

    let mut cov = DMatrix::<f64>::zeros(d, d);
    for (s, t) in src.iter().zip(dst) {
        for r in 0..d {
            for c in 0..d {
                cov[(r, c)] += (t[r] - mu_d[r]) * (s[c] - mu_s[c]);
            }
        }
    }
    cov /= n as f64;

    let translation_only = |mu_s: &[f64], mu_d: &[f64]| Similarity {
        rotation: DMatrix::identity(d, d),
        scale: 1.0,
        translation: mu_d.iter().zip(mu_s).map(|(a, b)| a - b).collect(),
        degenerate: true,
    };

    if var_s <= 1e-24 {
        return translation_only(&mu_s, &mu_d);
    }
    let svd = cov.clone().svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return translation_only(&mu_s, &mu_d);
    };
    let mut sv: Vec<(usize, f64)> = svd.singular_values.iter().copied().enumerate().collect();
    sv.sort_by(|a, b| b.1.total_cmp(&a.1));
    let largest = sv[0].1;
    if d >= 2 && (largest <= 0.0 || sv[d - 2].1 <= 1e-12 * largest) {
        return translation_only(&mu_s, &mu_d);
    }
    let mut signs = DMatrix::<f64>::identity(d, d);
    if u.determinant() * v_t.determinant() < 0.0 {
        // Flip the direction of the smallest singular value.
        let smallest = sv[d - 1].0;
        signs[(smallest, smallest)] = -1.0;
    }
    let rotation = &u * &signs * &v_t;
    let trace: f64 = (0..d)
        .map(|i| svd.singular_values[i] * signs[(i, i)])
        .sum();
    let scale = trace / var_s;
    let rotated_mu: Vec<f64> = (0..d)
        .map(|r| (0..d).map(|c| rotation[(r, c)] * mu_s[c]).sum::<f64>())
        .collect();
    let translation = (0..d).map(|r| mu_d[r] - scale * rotated_mu[r]).collect();
    Similarity {
        rotation,
        scale,
        translation,
        degenerate: false,
    }
}

/// MPJPE after per-frame similarity alignment.
pub fn p_mpjpe(pred: &PoseSequence, gt: &PoseSequence) -> Result<ProcrustesOutcome> {
    check_pair(pred, gt)?;
    let mut total = 0.0;
    let mut degenerate = 0;
    for (p, g) in pred.frames().iter().zip(gt.frames()) {
        let (p, g) = (p.root_relative(), g.root_relative());
        let src: Vec<&[f64]> = p.joints().collect();
        let dst: Vec<&[f64]> = g.joints().collect();
        let sim = similarity_align(&src, &dst);
        if sim.degenerate {
            degenerate += 1;
        }
        total += src
            .iter()
            .zip(&dst)
            .map(|(s, d)| distance(&sim.apply(s), d))
            .sum::<f64>()
            / src.len() as f64;
    }
    Ok(ProcrustesOutcome {
        value: total / pred.len() as f64,
        degenerate_frames: degenerate,
    })
}

fn lengths_over_time(seq: &PoseSequence, skel: &Skeleton) -> Result<Vec<Vec<f64>>> {
    seq.frames()
        .iter()
        .map(|f| segment_lengths(f, skel))
        .collect()
}

/// Population standard deviation over frames of each segment length.
pub fn mpsce_per_segment(seq: &PoseSequence, skel: &Skeleton) -> Result<Vec<f64>> {
    let lens = lengths_over_time(seq, skel)?;
    let l = seq.len() as f64;
    Ok((0..skel.segment_count())
        .map(|j| {
            let mean = lens.iter().map(|f| f[j]).sum::<f64>() / l;
            (lens.iter().map(|f| (f[j] - mean).powi(2)).sum::<f64>() / l).sqrt()
        })
        .collect())
}

/// Mean per-segment consistency error.
pub fn mpsce(seq: &PoseSequence, skel: &Skeleton) -> Result<f64> {
    if skel.segment_count() == 0 {
        return Err(Error::MetricUnavailable("skeleton has no segments"));
    }
    let per = mpsce_per_segment(seq, skel)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Mean absolute left/right length difference for each symmetric pair.
pub fn mpsse_per_pair(seq: &PoseSequence, skel: &Skeleton) -> Result<Vec<f64>> {
    if !skel.has_symmetry() {
        return Err(Error::MetricUnavailable("skeleton has no left/right symmetry map"));
    }
    let lens = lengths_over_time(seq, skel)?;
    let l = seq.len() as f64;
    Ok(skel
        .symmetric_pairs()
        .map(|(left, right)| {
            lens.iter()
                .map(|f| (f[left - 1] - f[right - 1]).abs())
                .sum::<f64>()
                / l
        })
        .collect())
}

/// Mean per-segment symmetry error.
pub fn mpsse(seq: &PoseSequence, skel: &Skeleton) -> Result<f64> {
    let per = mpsse_per_pair(seq, skel)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// PCK at `threshold` and AUC over `sweep`, both in percent.
pub fn pck_auc(
    pred: &PoseSequence,
    gt: &PoseSequence,
    threshold: f64,
    sweep: &[f64],
) -> Result<(f64, f64)> {
    if sweep.is_empty() {
        return Err(Error::InvalidArgument("AUC threshold sweep is empty".into()));
    }
    check_pair(pred, gt)?;
    let errs: Vec<f64> = root_relative_errors(pred, gt).into_iter().flatten().collect();
    let pck_at = |th: f64| 100.0 * errs.iter().filter(|&&e| e <= th).count() as f64 / errs.len() as f64;
    let auc = sweep.iter().map(|&th| pck_at(th)).sum::<f64>() / sweep.len() as f64;
    Ok((pck_at(threshold), auc))
}

/// Mean absolute deviation of segment lengths from the known lengths `s`.
pub fn manifold_distance(seq: &PoseSequence, s: &SegmentLengths, skel: &Skeleton) -> Result<f64> {
    ensure_dim("manifold_distance segments", skel.segment_count(), s.len())?;
    if s.is_empty() {
        return Err(Error::MetricUnavailable("skeleton has no segments"));
    }
    let lens = lengths_over_time(seq, skel)?;
    let total: f64 = lens
        .iter()
        .flat_map(|f| f.iter().zip(s.as_slice()).map(|(a, b)| (a - b).abs()))
        .sum();
    Ok(total / (lens.len() * s.len()) as f64)
}

/// Collected metrics for one prediction against one ground truth.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mpjpe: Option<f64>,
    pub p_mpjpe: Option<f64>,
    pub p_mpjpe_degenerate_frames: Option<usize>,
    pub mpsce: Option<f64>,
    pub mpsse: Option<f64>,
    pub pck: Option<f64>,
    pub auc: Option<f64>,
    pub manifold_distance: Option<f64>,
    pub per_joint_mpjpe: Vec<f64>,
    pub per_segment_mpsce: Vec<f64>,
    pub per_pair_mpsse: Vec<f64>,
}

/// Which optional metrics to compute in [`MetricReport::evaluate`].
#[derive(Debug, Clone, Default)]
pub struct EvalOptions<'a> {
    pub segment_lengths: Option<&'a SegmentLengths>,
    /// PCK/AUC are only meaningful for millimetre-scale data.
    pub pck: bool,
}

impl MetricReport {
    pub fn evaluate(
        pred: &PoseSequence,
        gt: &PoseSequence,
        skel: &Skeleton,
        opts: &EvalOptions<'_>,
    ) -> Result<Self> {
        let per_joint = mpjpe_per_joint(pred, gt)?;
        let mut r = MetricReport {
            mpjpe: Some(per_joint.iter().sum::<f64>() / per_joint.len() as f64),
            per_joint_mpjpe: per_joint,
            ..Default::default()
        };
        if pred.joint_count() >= 3 {
            let p = p_mpjpe(pred, gt)?;
            r.p_mpjpe = Some(p.value);
            r.p_mpjpe_degenerate_frames = Some(p.degenerate_frames);
        }
        let per_seg = mpsce_per_segment(pred, skel)?;
        r.mpsce = Some(per_seg.iter().sum::<f64>() / per_seg.len() as f64);
        r.per_segment_mpsce = per_seg;
        if skel.has_symmetry() {
            let per_pair = mpsse_per_pair(pred, skel)?;
            r.mpsse = Some(per_pair.iter().sum::<f64>() / per_pair.len() as f64);
            r.per_pair_mpsse = per_pair;
        }
        if opts.pck {
            let (pck, auc) = pck_auc(pred, gt, PCK_THRESHOLD_MM, &auc_thresholds())?;
            r.pck = Some(pck);
            r.auc = Some(auc);
        }
        if let Some(s) = opts.segment_lengths {
            r.manifold_distance = Some(manifold_distance(pred, s, skel)?);
        }
        Ok(r)
    }

    /// Scalar metrics as `metric,value` CSV rows; absent metrics are skipped.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let scalars = [
            ("mpjpe", self.mpjpe),
            ("p_mpjpe", self.p_mpjpe),
            ("mpsce", self.mpsce),
            ("mpsse", self.mpsse),
            ("pck", self.pck),
            ("auc", self.auc),
            ("manifold_distance", self.manifold_distance),
        ];
        for (name, v) in scalars {
            if let Some(v) = v {
                out.push_str(&format!("{name},{v}\n"));
            }
        }
        for (j, v) in self.per_joint_mpjpe.iter().enumerate() {
            out.push_str(&format!("mpjpe_joint_{},{v}\n", j + 1));
        }
        for (j, v) in self.per_segment_mpsce.iter().enumerate() {
            out.push_str(&format!("mpsce_segment_{},{v}\n", j + 1));
        }
        for (j, v) in self.per_pair_mpsse.iter().enumerate() {
            out.push_str(&format!("mpsse_pair_{j},{v}\n"));
        }
        out
    }
}
