//! Feature extraction over latent fields.

pub mod dbscan;
pub mod kmeans;
pub mod pca;
pub mod tree;
pub mod tsne;

pub use dbscan::{dbscan, default_eps, DEFAULT_MIN_PTS, NOISE};
pub use kmeans::{kmeans, KMeans};
pub use pca::{pca, Pca};
pub use tree::{ClusterTree, TreeNode, TreeOp, DEFAULT_SPLIT_K, ROOT};
pub use tsne::{project_tsne, tsne, Projection2D, TsneParams};
