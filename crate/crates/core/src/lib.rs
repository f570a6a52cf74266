//! Volumetric-to-planar segmentation for OCTA-like volumes.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense `f64` tensors and differentiable operations, each with a
//!   hand-written backward pass, plus Adam and a finite-difference checker.
//! - [`network`]: the projection network (IPN), its plane-perceptron extension
//!   (IPN-V2), the global retraining net (IPN-V2+), checkpoints and training loops.
//! - [`tiling`]: patch planning, extraction, overlap splicing and the seam score.
//! - [`projection`]: volumes, layer surfaces and the six en-face projection maps.
//! - [`metrics`]: confusion counts, DICE / JAC / BACC, threshold selection.
//! - [`synthdata`]: a seeded phantom generator and an on-disk dataset loader.
//! - [`formats`]: the `.vvol`, `.vsurf`, `.vmap` and PGM file formats.
//! - [`verify`]: the self-check suites behind `ipnseg verify`.

pub mod error;
pub mod formats;
pub mod metrics;
pub mod network;
pub mod numerics;
pub mod projection;
pub mod synthdata;
pub mod tiling;
pub mod verify;

pub use error::{Error, Result};
