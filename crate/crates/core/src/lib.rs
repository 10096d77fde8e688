//! Motion-aware gradient data attribution for a small latent video
//! generative model.
//!
//! The crate covers the whole loop: synthetic motion clips ([`dataset`]),
//! block-matching motion masks ([`motion`]), a latent flow-matching /
//! diffusion denoiser with hand-written backprop ([`genmodel`]),
//! per-example gradients at a shared noise draw ([`gradients`]), Fastfood
//! sketches ([`sketch`]), cosine influence ([`attribution`]), subset
//! selection ([`selection`]) and brute-force references ([`oracle`]).
//! [`pipeline`] chains the stages with on-disk caching.

pub mod attribution;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod genmodel;
pub mod gradients;
pub mod motion;
pub mod oracle;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod selection;
pub mod sketch;

pub use error::{Error, Result};
