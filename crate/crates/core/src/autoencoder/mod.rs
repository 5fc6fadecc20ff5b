//! Geometric-convolution autoencoder over particle patches.
//!
//! The encoder routes each member's attributes through six signed axis bases
//! weighted by direction, lifts them with a shared layer and averages the
//! members with the distance kernel; the decoder disperses the latent vector
//! back to every member along the reversed direction.

pub mod basis;
pub mod infer;
pub mod model;
pub mod net;
pub mod search;
pub mod train;

pub use basis::{dir_weights, member_weights, BASES};
pub use infer::{infer_latents, infer_latents_at, psnr, psnr_frames, psnr_from_mse, LatentField};
pub use model::{AutoencoderModel, Layout};
pub use net::{geoconv_forward, geodeconv_forward, patch_loss, reconstruct, LossMode, Mode};
pub use search::{evaluate_latent_dims, random_search_latent_dim, Candidate, SearchReport};
pub use train::{train, train_model, EpochStats, TrainConfig};
