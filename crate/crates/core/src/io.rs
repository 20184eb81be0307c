//! Pose sequence files.
//!
//! CSV: header `frame,joint,x,y[,z]`, one row per joint, rows ordered by
//! frame then joint, every frame complete.
//!
//! Binary (little-endian):
//!
//! ```text
//! magic   8 bytes  "MLPOSE01"
//! dim     u64
//! joints  u64
//! frames  u64
//! coords  f64 * frames * joints * dim, frame-major then joint-major
//! ```

use crate::error::{Error, Result};
use crate::skeleton::{Pose, PoseSequence};

pub const POSE_MAGIC: &[u8; 8] = b"MLPOSE01";

const AXES: [&str; 3] = ["x", "y", "z"];

pub fn sequence_to_csv(seq: &PoseSequence) -> Result<String> {
    let dim = seq.dim();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["frame".to_string(), "joint".to_string()];
    header.extend(AXES[..dim].iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (t, f) in seq.frames().iter().enumerate() {
        for (j, p) in f.joints().enumerate() {
            let mut row = vec![t.to_string(), j.to_string()];
            row.extend(p.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn sequence_from_csv(text: &str) -> Result<PoseSequence> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let dim = header.len().saturating_sub(2);
    if !(2..=3).contains(&dim) || header[0] != "frame" || header[1] != "joint" || header[2..] != AXES[..dim] {
        return Err(Error::Parse(format!("unexpected pose header {header:?}")));
    }
    let mut frames: Vec<Vec<f64>> = Vec::new();
    let mut joints_per_frame: Option<usize> = None;
    let mut next_joint = 0usize;
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != dim + 2 {
            return Err(Error::Parse(format!("row {row}: expected {} fields", dim + 2)));
        }
        let index = |i: usize| -> Result<usize> {
            rec[i].trim().parse().map_err(|_| Error::Parse(format!("row {row}: bad index {:?}", &rec[i])))
        };
        let (t, j) = (index(0)?, index(1)?);
        if j == 0 {
            if let Some(last) = frames.last() {
                let n = last.len() / dim;
                match joints_per_frame {
                    None => joints_per_frame = Some(n),
                    Some(m) if m != n => {
                        return Err(Error::Parse(format!("frame {} has {n} joints, expected {m}", frames.len() - 1)))
                    }
                    _ => {}
                }
            }
            if t != frames.len() {
                return Err(Error::Parse(format!("row {row}: frame {t} out of order")));
            }
            frames.push(Vec::new());
            next_joint = 0;
        } else if t + 1 != frames.len() || j != next_joint {
            return Err(Error::Parse(format!("row {row}: joint {j} of frame {t} out of order")));
        }
        let current = frames.last_mut().expect("frame started");
        for field in rec.iter().skip(2) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("row {row}: bad coordinate {field:?}")))?;
            current.push(v);
        }
        next_joint += 1;
    }
    if let (Some(m), Some(last)) = (joints_per_frame, frames.last()) {
        if last.len() / dim != m {
            return Err(Error::Parse("last frame is incomplete".into()));
        }
    }
    if frames.is_empty() {
        return Err(Error::Parse("pose file has no rows".into()));
    }
    let poses = frames.into_iter().map(|c| Pose::new(dim, c)).collect::<Result<Vec<_>>>()?;
    PoseSequence::new(poses)
}

pub fn sequence_to_bytes(seq: &PoseSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 8 * seq.len() * seq.joint_count() * seq.dim());
    out.extend_from_slice(POSE_MAGIC);
    for v in [seq.dim(), seq.joint_count(), seq.len()] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for f in seq.frames() {
        for c in f.coords() {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}

pub fn sequence_from_bytes(bytes: &[u8]) -> Result<PoseSequence> {
    if bytes.len() < 32 || &bytes[..8] != POSE_MAGIC {
        return Err(Error::Parse("missing pose file magic".into()));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes"));
    let (dim, joints, frames) = (word(0), word(1), word(2));
    if !(2..=3).contains(&dim) || joints == 0 || frames == 0 {
        return Err(Error::Parse(format!("invalid pose header dim={dim} joints={joints} frames={frames}")));
    }
    let per_frame = dim
        .checked_mul(joints)
        .ok_or_else(|| Error::Parse("pose header sizes overflow".into()))?;
    let expected = per_frame
        .checked_mul(frames)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Parse("pose header sizes overflow".into()))?;
    if (bytes.len() - 32) as u64 != expected {
        return Err(Error::Parse(format!("pose payload is {} bytes, header implies {expected}", bytes.len() - 32)));
    }
    let coords: Vec<f64> = bytes[32..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let poses = coords
        .chunks_exact(per_frame as usize)
        .map(|c| Pose::new(dim as usize, c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    PoseSequence::new(poses)
}
