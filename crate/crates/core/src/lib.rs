//! Turning-movement count estimation for unlabeled intersections by instance
//! transfer: Lasso feature selection, ITML metric learning and matching,
//! Gaussian-mixture augmentation, and gradient boosting with balanced
//! source/target weighting.

pub mod boosting;
pub mod dataset;
pub mod gmm;
pub mod itml;
pub mod lasso;
pub mod matrix;
pub mod pipeline;
pub mod seed;
pub mod stats;

pub use matrix::FeatureMatrix;
