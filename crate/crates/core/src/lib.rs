//! Manifold-constrained multi-hypothesis 3D pose lifting.
//!
//! The library covers skeleton and pose types, 6D rotations, kinematic
//! decoding, multiple-choice losses, evaluation metrics, small MLP models for
//! synthetic lifting tasks, synthetic data generation and an experiment
//! harness.

pub mod error;
pub mod skeleton;
pub mod rotations;
pub mod kinematics;
pub mod mcl;
pub mod metrics;
pub mod synthdata;
pub mod nets;
pub mod io;
pub mod harness;

pub use error::{Error, Result};
