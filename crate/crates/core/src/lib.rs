//! Concept-level explanations for CNN classifiers.
//!
//! Feature maps from the last convolutional layer are factorized into a
//! small set of concept directions (NMF, PCA or k-means). Because every
//! reducer has an inverse, the classifier head can be re-applied to the
//! reconstructed feature maps, which gives both a measure of how faithful
//! the concept model is and an exact decomposition of each class score into
//! per-concept contributions plus a remainder.

pub mod cli;
pub mod error;
pub mod explainer;
pub mod fidelity;
pub mod linalg;
pub mod reducers;
pub mod render;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
