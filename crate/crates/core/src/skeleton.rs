//! Skeleton topology, pose containers and segment geometry.
//!
//! A [`Skeleton`] is stored as a parent array in topological order: joint 0
//! is the root and every other joint's parent has a smaller index. The
//! adjacency matrix is never materialized.
//!
//! Poses carry their ambient dimension at runtime so the planar circle task
//! (D = 2) and the 3D tasks share every code path.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};

/// Joint tree with optional left/right symmetry map.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    parents: Vec<Option<usize>>,
    left: Vec<usize>,
    right: Vec<usize>,
    names: Vec<String>,
}

/// On-disk JSON layout of a skeleton. The root's parent is written as `-1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkeletonJson {
    pub parents: Vec<i64>,
    #[serde(default)]
    pub left: Vec<usize>,
    #[serde(default)]
    pub right: Vec<usize>,
    #[serde(default)]
    pub names: Vec<String>,
}

impl Skeleton {
    /// Builds a skeleton from the parents of joints `1..J`. Joint 0 is the root.
    pub fn from_parents(parents_of_non_root: &[usize]) -> Result<Self> {
        let mut parents = Vec::with_capacity(parents_of_non_root.len() + 1);
        parents.push(None);
        parents.extend(parents_of_non_root.iter().map(|&p| Some(p)));
        Self::new(parents, Vec::new(), Vec::new(), Vec::new())
    }

    /// Simple chain `0 -> 1 -> ... -> J-1`.
    pub fn chain(joint_count: usize) -> Result<Self> {
        if joint_count == 0 {
            return Err(Error::InvalidSkeleton("a skeleton needs at least one joint".into()));
        }
        let parents: Vec<usize> = (0..joint_count - 1).collect();
        Self::from_parents(&parents)
    }

    pub fn new(
        parents: Vec<Option<usize>>,
        left: Vec<usize>,
        right: Vec<usize>,
        names: Vec<String>,
    ) -> Result<Self> {
        let joint_count = parents.len();
        if joint_count == 0 {
            return Err(Error::InvalidSkeleton("a skeleton needs at least one joint".into()));
        }
        if parents[0].is_some() {
            return Err(Error::InvalidSkeleton("joint 0 is the root and has no parent".into()));
        }
        for (j, p) in parents.iter().enumerate().skip(1) {
            match p {
                None => {
                    return Err(Error::InvalidSkeleton(format!(
                        "joint {j} has no parent; only joint 0 may be a root"
                    )))
                }
                Some(p) if *p >= j => {
                    return Err(Error::InvalidSkeleton(format!(
                        "parent of joint {j} is {p}; parents must precede their children"
                    )))
                }
                _ => {}
            }
        }
        if !names.is_empty() && names.len() != joint_count {
            return Err(Error::InvalidSkeleton(format!(
                "{} names given for {joint_count} joints",
                names.len()
            )));
        }
        let skel = Skeleton {
            parents,
            left,
            right,
            names,
        };
        skel.validate_symmetry()?;
        Ok(skel)
    }

    /// Adds (or replaces) a left/right symmetry map.
    pub fn with_symmetry(mut self, left: Vec<usize>, right: Vec<usize>) -> Result<Self> {
        self.left = left;
        self.right = right;
        self.validate_symmetry()?;
        Ok(self)
    }

    fn validate_symmetry(&self) -> Result<()> {
        if self.left.len() != self.right.len() {
            return Err(Error::InvalidSkeleton(format!(
                "symmetry map has {} left and {} right joints",
                self.left.len(),
                self.right.len()
            )));
        }
        let j_count = self.joint_count();
        let mut seen = vec![false; j_count];
        for &j in self.left.iter().chain(&self.right) {
            if j == 0 || j >= j_count {
                return Err(Error::InvalidSkeleton(format!(
                    "symmetry joint {j} must be a non-root joint index below {j_count}"
                )));
            }
            if seen[j] {
                return Err(Error::InvalidSkeleton(format!(
                    "joint {j} appears more than once in the symmetry map"
                )));
            }
            seen[j] = true;
        }
        for (&l, &r) in self.left.iter().zip(&self.right) {
            if self.depth(l) != self.depth(r) {
                return Err(Error::InvalidSkeleton(format!(
                    "symmetric joints {l} and {r} sit at different depths"
                )));
            }
        }
        Ok(())
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn segment_count(&self) -> usize {
        self.parents.len() - 1
    }

    /// Parent of joint `j`, `None` for the root.
    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parents[j]
    }

    /// Parent of a non-root joint.
    ///
    /// Panics when called with the root index.
    pub fn parent_of(&self, j: usize) -> usize {
        self.parents[j].expect("root joint has no parent")
    }

    /// Number of edges between `j` and the root.
    pub fn depth(&self, mut j: usize) -> usize {
        let mut d = 0;
        while let Some(p) = self.parents[j] {
            j = p;
            d += 1;
        }
        d
    }

    pub fn has_symmetry(&self) -> bool {
        !self.left.is_empty()
    }

    /// Left/right joint pairs. Each left joint `l` maps to its partner `r`.
    pub fn symmetric_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.left.iter().copied().zip(self.right.iter().copied())
    }

    pub fn left_joints(&self) -> &[usize] {
        &self.left
    }

    pub fn right_joints(&self) -> &[usize] {
        &self.right
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: SkeletonJson = serde_json::from_str(s)?;
        Self::try_from(raw)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&SkeletonJson::from(self)).expect("skeleton serializes")
    }

    /// The 17-joint Human3.6M-style skeleton shipped in `data/h36m17.json`.
    ///
    /// The parent list follows the usual community convention for this joint
    /// ordering; it is not derived from any printed table.
    pub fn h36m17() -> Self {
        Self::from_json_str(include_str!("../data/h36m17.json")).expect("bundled skeleton is valid")
    }
}

impl TryFrom<SkeletonJson> for Skeleton {
    type Error = Error;

    fn try_from(raw: SkeletonJson) -> Result<Self> {
        let parents = raw
            .parents
            .iter()
            .enumerate()
            .map(|(j, &p)| match p {
                -1 => Ok(None),
                p if p >= 0 => Ok(Some(p as usize)),
                p => Err(Error::InvalidSkeleton(format!("joint {j} has parent {p}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Skeleton::new(parents, raw.left, raw.right, raw.names)
    }
}

impl From<&Skeleton> for SkeletonJson {
    fn from(s: &Skeleton) -> Self {
        SkeletonJson {
            parents: s
                .parents
                .iter()
                .map(|p| p.map_or(-1, |p| p as i64))
                .collect(),
            left: s.left.clone(),
            right: s.right.clone(),
            names: s.names.clone(),
        }
    }
}

/// Joint positions of one frame, `J` points in `R^D`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    dim: usize,
    coords: Vec<f64>,
}

impl Pose {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || !coords.len().is_multiple_of(dim) || coords.is_empty() {
            return Err(Error::InvalidPose(format!(
                "{} coordinates cannot form joints of dimension {dim}",
                coords.len()
            )));
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidPose(format!("coordinate {i} is not finite")));
        }
        Ok(Pose { dim, coords })
    }

    pub fn zeros(joint_count: usize, dim: usize) -> Self {
        Pose {
            dim,
            coords: vec![0.0; joint_count * dim],
        }
    }

    pub fn from_points<const D: usize>(points: &[[f64; D]]) -> Result<Self> {
        Self::new(D, points.iter().flatten().copied().collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn joint_count(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn joint(&self, j: usize) -> &[f64] {
        &self.coords[j * self.dim..(j + 1) * self.dim]
    }

    pub fn joint_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.coords[j * self.dim..(j + 1) * self.dim]
    }

    pub fn joints(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    /// Translates the pose so that the root sits at the origin.
    pub fn root_relative(&self) -> Pose {
        let mut out = self.clone();
        let root = self.joint(0).to_vec();
        for p in out.coords.chunks_exact_mut(self.dim) {
            for (c, r) in p.iter_mut().zip(&root) {
                *c -= r;
            }
        }
        out
    }

    pub fn is_root_relative(&self) -> bool {
        self.joint(0).iter().all(|&c| c == 0.0)
    }

    pub(crate) fn same_shape(&self, other: &Pose, context: &'static str) -> Result<()> {
        ensure_dim(context, self.dim, other.dim)?;
        ensure_dim(context, self.joint_count(), other.joint_count())
    }
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Ordered frames of one movement; every frame shares `J` and `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    frames: Vec<Pose>,
}

impl PoseSequence {
    pub fn new(frames: Vec<Pose>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidPose("a pose sequence needs at least one frame".into()));
        }
        let first = &frames[0];
        for f in &frames[1..] {
            f.same_shape(first, "pose sequence frame")?;
        }
        Ok(PoseSequence { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.frames[0].joint_count()
    }

    pub fn dim(&self) -> usize {
        self.frames[0].dim()
    }

    pub fn frame(&self, t: usize) -> &Pose {
        &self.frames[t]
    }

    pub fn frames(&self) -> &[Pose] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Pose> {
        self.frames
    }

    pub(crate) fn same_shape(&self, other: &PoseSequence, context: &'static str) -> Result<()> {
        ensure_dim(context, self.len(), other.len())?;
        self.frames[0].same_shape(&other.frames[0], context)
    }
}

/// Projected joint positions, `J` points in `R^(D-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Input2D {
    pub keypoints: Pose,
}

/// Per-segment lengths `||p_j - p_parent(j)||`, ordered by child joint `1..J`.
pub fn segment_lengths(pose: &Pose, skel: &Skeleton) -> Result<Vec<f64>> {
    ensure_dim("segment_lengths joints", skel.joint_count(), pose.joint_count())?;
    Ok((1..skel.joint_count())
        .map(|j| distance(pose.joint(j), pose.joint(skel.parent_of(j))))
        .collect())
}

/// Orthographic projection dropping one coordinate axis.
pub fn project(pose: &Pose, drop_axis: usize) -> Result<Input2D> {
    if drop_axis >= pose.dim() || pose.dim() < 2 {
        return Err(Error::InvalidArgument(format!(
            "cannot drop axis {drop_axis} of a {}-dimensional pose",
            pose.dim()
        )));
    }
    let coords = pose
        .joints()
        .flat_map(|p| {
            p.iter()
                .enumerate()
                .filter(move |(i, _)| *i != drop_axis)
                .map(|(_, c)| *c)
        })
        .collect();
    Ok(Input2D {
        keypoints: Pose::new(pose.dim() - 1, coords)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_segment() {
        let skel = Skeleton::chain(2).unwrap();
        let pose = Pose::from_points(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        assert_eq!(segment_lengths(&pose, &skel).unwrap(), vec![1.0]);
    }

    #[test]
    fn axis_aligned_chain() {
        let skel = Skeleton::from_parents(&[0, 1]).unwrap();
        let pose = Pose::from_points(&[[0.0, 0.0, 0.0], [0.0, 0.0, 2.0], [0.0, 1.0, 2.0]]).unwrap();
        assert_eq!(segment_lengths(&pose, &skel).unwrap(), vec![2.0, 1.0]);
    }

    #[test]
    fn segment_lengths_rejects_mismatch() {
        let skel = Skeleton::chain(3).unwrap();
        let pose = Pose::from_points(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        assert!(matches!(
            segment_lengths(&pose, &skel),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn projection_drops_axis() {
        let p = Pose::from_points(&[[0.0, 0.0], [0.5, 0.866]]).unwrap();
        let u = project(&p, 1).unwrap();
        assert_eq!(u.keypoints.joint(1), &[0.5]);
        assert_eq!(u.keypoints.joint(0), &[0.0]);

        let p = Pose::from_points(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
        let u = project(&p, 1).unwrap();
        assert_eq!(u.keypoints.joint(1), &[2.0, 0.0]);
        assert!(project(&p, 3).is_err());
    }

    #[test]
    fn rejects_bad_parent_maps() {
        assert!(Skeleton::new(vec![Some(0)], vec![], vec![], vec![]).is_err());
        assert!(Skeleton::new(vec![None, None], vec![], vec![], vec![]).is_err());
        assert!(Skeleton::new(vec![None, Some(1)], vec![], vec![], vec![]).is_err());
        assert!(Skeleton::new(vec![None, Some(2), Some(0)], vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn rejects_bad_symmetry() {
        let base = Skeleton::from_parents(&[0, 1, 0, 3]).unwrap();
        assert!(base.clone().with_symmetry(vec![1], vec![4]).is_err(), "depth mismatch");
        assert!(base.clone().with_symmetry(vec![1, 2], vec![3]).is_err());
        assert!(base.clone().with_symmetry(vec![1], vec![1]).is_err());
        assert!(base.clone().with_symmetry(vec![0], vec![3]).is_err());
        assert!(base.with_symmetry(vec![1, 2], vec![3, 4]).is_ok());
    }

    #[test]
    fn json_roundtrip() {
        let s = Skeleton::h36m17();
        assert_eq!(s.joint_count(), 17);
        assert_eq!(s.left_joints().len(), 6);
        let back = Skeleton::from_json_str(&s.to_json_string()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn json_rejects_garbage_parent() {
        assert!(Skeleton::from_json_str(r#"{"parents":[-1,-2]}"#).is_err());
        assert!(Skeleton::from_json_str(r#"{"parents":[0]}"#).is_err());
        assert!(Skeleton::from_json_str(r#"{"parents":[-1,0],"names":["a"]}"#).is_err());
    }

    #[test]
    fn root_relative_translation() {
        let p = Pose::from_points(&[[1.0, 2.0], [3.0, 5.0]]).unwrap();
        let r = p.root_relative();
        assert!(r.is_root_relative());
        assert_eq!(r.joint(1), &[2.0, 3.0]);
    }

    #[test]
    fn pose_rejects_non_finite() {
        assert!(Pose::new(2, vec![0.0, f64::NAN]).is_err());
        assert!(Pose::new(2, vec![0.0, 1.0, 2.0]).is_err());
    }
}
