//! Registration-free dental implant planning on CBCT-like volumes.
//!
//! The pipeline trains an implant-position network directly on
//! post-implantation scans: the implant region is masked out of the volume,
//! so any scan containing an implant becomes a training sample without
//! pre-/post-operative registration. Supervision comes from cylindrical
//! labels swept along three clinician-marked landmarks, plus the implant's
//! axis slopes fitted in closed form from the labeled voxels.
//!
//! Crate layout mirrors the pipeline stages:
//!
//! - [`volume`] — volumes, masks, landmarks, on-disk formats
//! - [`labelgen`] — cylindrical label rasterization, masking, jitter
//! - [`slope`] — closed-form inclination from labeled voxels
//! - [`nn`] — dense tensor ops with hand-derived backward passes
//! - [`ndp`] — neighboring-distance-perception front end
//! - [`network`] — dual-branch segmentation + slope network
//! - [`objectives`] — soft Dice + cross-entropy + L1 slope losses
//! - [`metrics`] — Dice / IoU evaluation
//! - [`inference`] — overlapped sliding-window whole-volume inference
//! - [`trainer`] — seeded training loop, checkpoints, manifests
//! - [`synthdata`] — deterministic jaw-phantom fixtures
//!
//! See the crate examples for runnable walkthroughs of each capability.

pub mod cli;
pub mod config;
pub mod error;
pub mod inference;
pub mod labelgen;
pub mod manifest;
pub mod metrics;
pub mod ndp;
pub mod network;
pub mod nn;
pub mod objectives;
pub mod report;
pub mod slope;
pub mod synthdata;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{BinaryMask, LandmarkTriple, SlopePair, VoxelCoord, VoxelVolume};
