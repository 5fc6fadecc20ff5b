//! Local latent representations for particle data.
//!
//! Particles are grouped into radius patches, encoded by a geometric-convolution
//! autoencoder into fixed-length latent vectors, and the resulting latent fields
//! drive feature extraction (hierarchical k-means) and feature tracking
//! (mean-shift over latent histograms).
//!
//! Module map:
//! - [`store`]: frame loading, normalization, kd-tree patches, value-based sampling, baselines
//! - [`bandwidth`]: Nadaraya–Watson LSCV and golden-section radius selection
//! - [`autoencoder`]: GeoConv / GeoDeConv network, training, inference, persistence
//! - [`analysis`]: k-means, cluster tree, t-SNE, PCA, DBSCAN
//! - [`tracker`]: mean-shift tracking on PCA-reduced latent histograms
//! - [`synth`]: synthetic datasets with ground truth

pub mod analysis;
pub mod autoencoder;
pub mod bandwidth;
mod error;
pub mod io;
pub mod store;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
