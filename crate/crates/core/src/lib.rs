//! Radar perception toolkit built around a directional spatial-Doppler
//! diffusion process.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! ```text
//! Scene ──simulate──► AdcFrame ──cube──► RadarCube ──► Sddr (u, v)
//!                                                        │
//!                    diffusion (schedule + denoiser) ◄───┤
//!                                                        │
//!        eve (WLS / RANSAC / soft mask)  ◄───────────────┤
//!                                                        ▼
//!                                  metrics (extraction, CFAR, CD, EMD, VPR/SRL/EGD)
//! ```
//!
//! Every random draw is seed-derived; nothing reads ambient randomness.

pub mod cube;
pub mod diffusion;
pub mod error;
pub mod eve;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod schedule;
pub mod simulate;

pub use error::{Error, Result};
