//! Task-oriented 6-DoF grasp detection on point clouds.
//!
//! Procedural affordance-labeled grasp data, an implicit multi-stream grasp
//! generator, a grasp evaluator, a point-wise affordance network and the
//! coarse-to-fine fusion that combines them.

pub mod error;
pub mod fusion;
pub mod geometry;
pub mod learning;
pub mod netcore;
pub mod synthdata;
pub mod tape;

pub use error::{Error, Result};
