//! Unsupervised domain adaptation of LiDAR object detectors from repeated
//! traversals of the same routes.
//!
//! Points that are occupied in every traversal of a location are persistent
//! background; points seen in only one traversal belong to things that move.
//! The persistence-prior score ([`ppscore`]) turns this into a per-point
//! number in `[0, 1]` which then drives pseudo-label filtering ([`refine`])
//! and point-label rewriting ([`supervise`]) inside a self-training loop
//! ([`selftrain`]) around a small two-stage detector ([`detector`]).

pub mod detector;
pub mod error;
pub mod eval;
pub mod exec;
pub mod experiment;
pub mod geometry;
pub mod ingest;
pub mod ppscore;
pub mod refine;
pub mod selftrain;
pub mod spatial;
pub mod supervise;
pub mod synthgen;

pub use error::{Error, Result};
pub use exec::Execution;
