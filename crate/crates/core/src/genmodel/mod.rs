//! Toy latent video generator: frozen patch encoder, noise schedule,
//! temporal denoiser with exact gradients, objectives and training.

pub mod checkpoint;
pub mod encoder;
pub mod network;
pub mod objective;
pub mod schedule;
pub mod train;

pub use checkpoint::{checkpoint_hash, load_checkpoint, save_checkpoint};
pub use encoder::{EncoderConfig, LatentClip, PatchEncoder};
pub use network::{Architecture, ModelParams};
pub use objective::{Model, ModelConfig, Objective, Reduction};
pub use schedule::{forward_noise, Schedule};
pub use train::{evaluate_loss, train, TrainConfig, TrainExample, TrainOutcome};
