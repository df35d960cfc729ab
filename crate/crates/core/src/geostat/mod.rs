//! Geostatistical ensembles: conditioned ln-permeability realizations and
//! their clustering into representative groups.

mod asset;
mod cluster;
mod field;
mod sampling;
mod variogram;

pub use asset::{AssetSpec, HardDatum, DEFAULT_LOG_PERM_MEAN, DEFAULT_LOG_PERM_VARIANCE};
pub use cluster::{cluster_realizations, kmeans, standardize, ClusterAssignment};
pub use field::{
    generate_realizations, generate_with, Cholesky, Method, RealizationSet, COVARIANCE_JITTER,
    DENSE_CELL_LIMIT,
};
pub use sampling::{sample_global_batch, sample_training_batch};
pub use variogram::{covariance, VariogramKind, VariogramModel};

#[cfg(test)]
pub(crate) use asset::tests::small_asset;
