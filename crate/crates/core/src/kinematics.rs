//! Manifold-constrained pose decoding.
//!
//! A pose is decoded from segment lengths shared by every frame and one 6D
//! rotation per joint and frame:
//!
//! 1. the unit reference pose is scaled segment by segment,
//! 2. each 6D representation is orthonormalized into a rotation matrix,
//! 3. forward kinematics places the joints in topological order.
//!
//! Every decoded frame has exactly the requested segment lengths, whatever the
//! rotations are. Within a frame the joint loop is sequential; frames are
//! independent and can be decoded in parallel with
//! [`decode_pose_sequence_par`], which returns the same bits as the
//! sequential path.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{ensure_dim, Error, Result};
use crate::rotations::{rot6d_to_matrix, Rot6D, RotMatrix};
use crate::skeleton::{segment_lengths, Pose, PoseSequence, Skeleton};

const UNIT_TOL: f64 = 1e-12;

/// Root-centred 3D pose whose segments all have unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePose(Pose);

impl ReferencePose {
    pub fn new(pose: Pose, skel: &Skeleton) -> Result<Self> {
        ensure_dim("reference pose dimension", 3, pose.dim())?;
        if !pose.is_root_relative() {
            return Err(Error::InvalidPose("reference pose root must be at the origin".into()));
        }
        for (j, l) in segment_lengths(&pose, skel)?.into_iter().enumerate() {
            if (l - 1.0).abs() > UNIT_TOL {
                return Err(Error::InvalidPose(format!(
                    "reference segment {} has length {l}, expected 1",
                    j + 1
                )));
            }
        }
        Ok(ReferencePose(pose))
    }

    /// Every joint offset by `+x` from its parent.
    pub fn along_x(skel: &Skeleton) -> Self {
        let mut pose = Pose::zeros(skel.joint_count(), 3);
        for j in 1..skel.joint_count() {
            let parent = pose.joint(skel.parent_of(j)).to_vec();
            let p = pose.joint_mut(j);
            p.copy_from_slice(&parent);
            p[0] += 1.0;
        }
        ReferencePose(pose)
    }

    /// Unit T-pose for [`Skeleton::h36m17`], from `data/h36m17_tpose.json`.
    pub fn h36m17_tpose() -> Self {
        #[derive(serde::Deserialize)]
        struct TPose {
            directions: Vec<[f64; 3]>,
        }
        let skel = Skeleton::h36m17();
        let t: TPose = serde_json::from_str(include_str!("../data/h36m17_tpose.json"))
            .expect("bundled T-pose parses");
        let mut pose = Pose::zeros(skel.joint_count(), 3);
        for j in 1..skel.joint_count() {
            let parent = pose.joint(skel.parent_of(j)).to_vec();
            let d = t.directions[j];
            for (c, (p, dc)) in pose.joint_mut(j).iter_mut().zip(parent.iter().zip(d)) {
                *c = p + dc;
            }
        }
        ReferencePose::new(pose, &skel).expect("bundled T-pose has unit segments")
    }

    pub fn pose(&self) -> &Pose {
        &self.0
    }
}

/// Strictly positive segment lengths ordered by child joint `1..J`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentLengths(Vec<f64>);

impl SegmentLengths {
    pub fn new(lengths: Vec<f64>) -> Result<Self> {
        if let Some((j, l)) = lengths
            .iter()
            .enumerate()
            .find(|(_, l)| !(l.is_finite() && **l > 0.0))
        {
            return Err(Error::InvalidArgument(format!(
                "segment {} has non-positive length {l}",
                j + 1
            )));
        }
        Ok(SegmentLengths(lengths))
    }

    pub fn ones(count: usize) -> Self {
        SegmentLengths(vec![1.0; count])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Scales each unit segment of `u` by its target length:
/// `u'_j = u'_parent + s_j (u_j - u_parent)`, with `u'_0 = 0`.
pub fn scale_reference(u: &ReferencePose, s: &SegmentLengths, skel: &Skeleton) -> Result<Pose> {
    let u = u.pose();
    ensure_dim("scale_reference joints", skel.joint_count(), u.joint_count())?;
    ensure_dim("scale_reference segments", skel.segment_count(), s.len())?;
    let mut out = Pose::zeros(u.joint_count(), u.dim());
    for j in 1..skel.joint_count() {
        let parent = skel.parent_of(j);
        let sj = s.0[j - 1];
        let base = out.joint(parent).to_vec();
        let (uj, up) = (u.joint(j), u.joint(parent));
        for (d, c) in out.joint_mut(j).iter_mut().enumerate() {
            *c = base[d] + sj * (uj[d] - up[d]);
        }
    }
    Ok(out)
}

/// Applies relative joint rotations along the tree.
///
/// Global rotations compose as `R'_j = R_j R'_parent`, and each joint is
/// placed at `p_j = R'_j (u'_j - u'_parent) + p_parent`.
pub fn forward_kinematics(
    scaled_reference: &Pose,
    rotations: &[RotMatrix],
    skel: &Skeleton,
) -> Result<Pose> {
    ensure_dim("forward_kinematics dimension", 3, scaled_reference.dim())?;
    ensure_dim(
        "forward_kinematics joints",
        skel.joint_count(),
        scaled_reference.joint_count(),
    )?;
    ensure_dim("forward_kinematics rotations", skel.joint_count(), rotations.len())?;

    let u = scaled_reference;
    let mut global = Vec::with_capacity(rotations.len());
    global.push(rotations[0]);
    let mut out = Pose::zeros(u.joint_count(), 3);
    out.joint_mut(0).copy_from_slice(u.joint(0));
    for j in 1..skel.joint_count() {
        let parent = skel.parent_of(j);
        let g = rotations[j].compose(&global[parent]);
        let offset = Vector3::from_iterator(
            u.joint(j).iter().zip(u.joint(parent)).map(|(a, b)| a - b),
        );
        let placed = g.apply(&offset);
        let base = out.joint(parent).to_vec();
        for (d, c) in out.joint_mut(j).iter_mut().enumerate() {
            *c = placed[d] + base[d];
        }
        global.push(g);
    }
    Ok(out)
}

fn decode_frame(
    scaled: &Pose,
    frame: usize,
    reps: &[Rot6D],
    skel: &Skeleton,
) -> Result<Pose> {
    ensure_dim("rotations per frame", skel.joint_count(), reps.len())?;
    let rotations = reps
        .iter()
        .enumerate()
        .map(|(j, r)| {
            rot6d_to_matrix(r).map_err(|e| match e {
                Error::DegenerateRepresentation { .. } => Error::DegenerateRepresentation {
                    frame: Some(frame),
                    joint: Some(j),
                },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    forward_kinematics(scaled, &rotations, skel)
}

/// Decodes `L` frames of per-joint 6D rotations into poses sharing segment lengths `s`.
pub fn decode_pose_sequence(
    s: &SegmentLengths,
    reps: &[Vec<Rot6D>],
    u: &ReferencePose,
    skel: &Skeleton,
) -> Result<PoseSequence> {
    let scaled = scale_reference(u, s, skel)?;
    let frames = reps
        .iter()
        .enumerate()
        .map(|(t, r)| decode_frame(&scaled, t, r, skel))
        .collect::<Result<Vec<_>>>()?;
    PoseSequence::new(frames)
}

/// Parallel-over-frames variant of [`decode_pose_sequence`].
pub fn decode_pose_sequence_par(
    s: &SegmentLengths,
    reps: &[Vec<Rot6D>],
    u: &ReferencePose,
    skel: &Skeleton,
) -> Result<PoseSequence> {
    let scaled = scale_reference(u, s, skel)?;
    let frames = reps
        .par_iter()
        .enumerate()
        .map(|(t, r)| decode_frame(&scaled, t, r, skel))
        .collect::<Result<Vec<_>>>()?;
    PoseSequence::new(frames)
}
