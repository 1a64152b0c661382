//! Matrix-factorization reducers behind a common transform/inverse
//! interface.
//!
//! Each reducer maps the flattened feature matrix `V` (one row per spatial
//! position, one column per channel) to concept scores `S` with `c′`
//! columns, and back again. The residual `V − inverse(transform(V))` is the
//! part of the feature map the concepts cannot express.

pub mod kmeans;
pub mod nmf;
pub mod pca;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::frobenius_diff;
use crate::tensor::archive::{decode_archive, encode_archive};
use crate::tensor::{Tensor, TensorMap};

pub use kmeans::{fit_kmeans, kmeans_inverse, kmeans_transform, KMeansFit, KMeansModel};
pub use nmf::{fit_nmf, nmf_inverse, nmf_transform, NmfFit, NmfModel};
pub use pca::{fit_pca, pca_inverse, pca_transform, PcaModel};

/// Which factorization backs a reducer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nmf,
    Pca,
    #[serde(rename = "kmeans")]
    KMeans,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Nmf, Method::Pca, Method::KMeans];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Nmf => "nmf",
            Method::Pca => "pca",
            Method::KMeans => "kmeans",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nmf" => Ok(Method::Nmf),
            "pca" => Ok(Method::Pca),
            "kmeans" | "k-means" => Ok(Method::KMeans),
            other => Err(Error::InvalidArgument(format!(
                "unknown method {other:?} (expected nmf, pca or kmeans)"
            ))),
        }
    }
}

/// Initialization of the NMF factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NmfInit {
    /// Uniform entries scaled by `sqrt(mean(V) / c′)`.
    #[default]
    RandomUniform,
    /// NNDSVD with zeros filled by small random values (NNDSVD-ar).
    Nndsvd,
    /// Basis from k-means centroids, scores from one-hot assignments.
    FromKmeans,
}

impl FromStr for NmfInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random-uniform" | "random" => Ok(NmfInit::RandomUniform),
            "nndsvd" => Ok(NmfInit::Nndsvd),
            "from-kmeans" => Ok(NmfInit::FromKmeans),
            other => Err(Error::InvalidArgument(format!("unknown init {other:?}"))),
        }
    }
}

/// Solver settings shared by the iterative reducers. k-means always seeds
/// with k-means++.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative objective change below which NMF stops.
    pub tolerance: f64,
    pub seed: u64,
    pub init: NmfInit,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-4,
            seed: 0,
            init: NmfInit::RandomUniform,
        }
    }
}

impl FitOptions {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_init(mut self, init: NmfInit) -> Self {
        self.init = init;
        self
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::InvalidArgument("max_iterations must be >= 1".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Statistics recorded while fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    pub iterations: usize,
    /// Frobenius norm of the training residual (k-means: `sqrt(inertia)`).
    pub objective: f64,
}

/// A fitted reducer of any kind.
#[derive(Debug, Clone, PartialEq)]
pub enum ReducerModel {
    Nmf(NmfModel),
    Pca(PcaModel),
    KMeans(KMeansModel),
}

/// Output of [`fit_reducer`]: the model plus the training scores.
#[derive(Debug, Clone)]
pub struct FittedReducer {
    pub model: ReducerModel,
    pub scores: Array2<f64>,
    pub stats: FitStats,
}

/// Fits the reducer for `method` on the flattened matrix `v`.
pub fn fit_reducer(
    method: Method,
    v: &Array2<f64>,
    n_concepts: usize,
    opts: &FitOptions,
) -> Result<FittedReducer> {
    match method {
        Method::Nmf => {
            let fit = fit_nmf(v, n_concepts, opts)?;
            let stats = FitStats {
                iterations: fit.model.fit_iterations,
                objective: fit.model.final_objective,
            };
            Ok(FittedReducer {
                model: ReducerModel::Nmf(fit.model),
                scores: fit.scores,
                stats,
            })
        }
        Method::Pca => {
            let (model, scores) = fit_pca(v, n_concepts)?;
            let objective = frobenius_diff(v.view(), pca_inverse(&scores, &model)?.view());
            Ok(FittedReducer {
                model: ReducerModel::Pca(model),
                scores,
                stats: FitStats {
                    iterations: 1,
                    objective,
                },
            })
        }
        Method::KMeans => {
            let fit = fit_kmeans(v, n_concepts, opts)?;
            let scores = kmeans::one_hot(&fit.labels, n_concepts);
            let stats = FitStats {
                iterations: fit.model.iterations,
                objective: fit.model.inertia.sqrt(),
            };
            Ok(FittedReducer {
                model: ReducerModel::KMeans(fit.model),
                scores,
                stats,
            })
        }
    }
}

impl ReducerModel {
    pub fn method(&self) -> Method {
        match self {
            ReducerModel::Nmf(_) => Method::Nmf,
            ReducerModel::Pca(_) => Method::Pca,
            ReducerModel::KMeans(_) => Method::KMeans,
        }
    }

    /// The `c′ × c` concept directions: NMF basis, PCA components or
    /// k-means centroids.
    pub fn basis(&self) -> &Array2<f64> {
        match self {
            ReducerModel::Nmf(m) => &m.basis,
            ReducerModel::Pca(m) => &m.components,
            ReducerModel::KMeans(m) => &m.centroids,
        }
    }

    /// Affine offset added by the inverse (PCA mean), if any.
    pub fn offset(&self) -> Option<&Array1<f64>> {
        match self {
            ReducerModel::Pca(m) => Some(&m.mean),
            _ => None,
        }
    }

    pub fn n_concepts(&self) -> usize {
        self.basis().nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.basis().ncols()
    }

    pub fn transform(&self, v: &Array2<f64>) -> Result<Array2<f64>> {
        match self {
            ReducerModel::Nmf(m) => nmf_transform(v, &m.basis, &m.options),
            ReducerModel::Pca(m) => pca_transform(v, m),
            ReducerModel::KMeans(m) => kmeans_transform(v, m),
        }
    }

    pub fn inverse(&self, s: &Array2<f64>) -> Result<Array2<f64>> {
        match self {
            ReducerModel::Nmf(m) => nmf_inverse(s, &m.basis),
            ReducerModel::Pca(m) => pca_inverse(s, m),
            ReducerModel::KMeans(m) => kmeans_inverse(s, m),
        }
    }

    /// `inverse(transform(v))`.
    pub fn reconstruct(&self, v: &Array2<f64>) -> Result<Array2<f64>> {
        self.inverse(&self.transform(v)?)
    }

    pub fn fit_stats(&self) -> FitStats {
        match self {
            ReducerModel::Nmf(m) => FitStats {
                iterations: m.fit_iterations,
                objective: m.final_objective,
            },
            ReducerModel::Pca(m) => FitStats {
                iterations: 1,
                objective: m.fit_objective,
            },
            ReducerModel::KMeans(m) => FitStats {
                iterations: m.iterations,
                objective: m.inertia.sqrt(),
            },
        }
    }

    pub fn options(&self) -> Option<&FitOptions> {
        match self {
            ReducerModel::Nmf(m) => Some(&m.options),
            ReducerModel::KMeans(m) => Some(&m.options),
            ReducerModel::Pca(_) => None,
        }
    }

    /// JSON descriptor plus named tensors, the on-disk representation.
    pub fn to_parts(&self) -> (ReducerDescriptor, Vec<(&'static str, Tensor)>) {
        let descriptor = ReducerDescriptor {
            method: self.method(),
            c_prime: self.n_concepts(),
            channels: self.n_channels(),
            options: self.options().copied(),
            stats: self.fit_stats(),
            inertia: match self {
                ReducerModel::KMeans(m) => Some(m.inertia),
                _ => None,
            },
        };
        let tensors = match self {
            ReducerModel::Nmf(m) => vec![("P", Tensor::from_matrix(&m.basis))],
            ReducerModel::Pca(m) => vec![
                ("mean", Tensor::from_vector(m.mean.as_slice().expect("contiguous"))),
                ("components", Tensor::from_matrix(&m.components)),
                (
                    "explained_variance",
                    Tensor::from_vector(m.explained_variance.as_slice().expect("contiguous")),
                ),
            ],
            ReducerModel::KMeans(m) => vec![("centroids", Tensor::from_matrix(&m.centroids))],
        };
        (descriptor, tensors)
    }

    pub fn from_parts(desc: &ReducerDescriptor, tensors: &TensorMap) -> Result<Self> {
        let check = |basis: &Array2<f64>| -> Result<()> {
            if basis.dim() != (desc.c_prime, desc.channels) {
                return Err(Error::Shape(format!(
                    "basis has shape {:?}, descriptor says ({}, {})",
                    basis.dim(),
                    desc.c_prime,
                    desc.channels
                )));
            }
            Ok(())
        };
        let options = || {
            desc.options.ok_or_else(|| {
                Error::CorruptArchive(format!("{} descriptor lacks options", desc.method))
            })
        };
        let model = match desc.method {
            Method::Nmf => {
                let basis = tensors.require("P")?.to_matrix()?;
                check(&basis)?;
                ReducerModel::Nmf(NmfModel {
                    basis,
                    fit_iterations: desc.stats.iterations,
                    final_objective: desc.stats.objective,
                    options: options()?,
                })
            }
            Method::Pca => {
                let components = tensors.require("components")?.to_matrix()?;
                check(&components)?;
                let mean = Array1::from(tensors.require("mean")?.to_vector()?);
                let explained_variance =
                    Array1::from(tensors.require("explained_variance")?.to_vector()?);
                if mean.len() != desc.channels || explained_variance.len() != desc.c_prime {
                    return Err(Error::Shape("PCA mean/variance length mismatch".into()));
                }
                ReducerModel::Pca(PcaModel {
                    mean,
                    components,
                    explained_variance,
                    fit_objective: desc.stats.objective,
                })
            }
            Method::KMeans => {
                let centroids = tensors.require("centroids")?.to_matrix()?;
                check(&centroids)?;
                ReducerModel::KMeans(KMeansModel {
                    centroids,
                    inertia: desc.inertia.ok_or_else(|| {
                        Error::CorruptArchive("kmeans descriptor lacks inertia".into())
                    })?,
                    iterations: desc.stats.iterations,
                    options: options()?,
                })
            }
        };
        Ok(model)
    }
}

/// JSON metadata describing a serialized reducer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducerDescriptor {
    pub method: Method,
    pub c_prime: usize,
    pub channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<FitOptions>,
    pub stats: FitStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia: Option<f64>,
}

const REDUCER_JSON: &str = "reducer.json";

/// Writes a standalone reducer archive (`reducer.json` plus tensors).
pub fn save_reducer(model: &ReducerModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (desc, tensors) = model.to_parts();
    let json = serde_json::to_vec_pretty(&desc)?;
    let refs: Vec<(&str, &Tensor)> = tensors.iter().map(|(n, t)| (*n, t)).collect();
    let bytes = encode_archive(&refs, &[(REDUCER_JSON, &json)])?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_reducer(path: impl AsRef<Path>) -> Result<ReducerModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let contents = decode_archive(&bytes)?;
    let json = contents
        .files
        .get(REDUCER_JSON)
        .ok_or_else(|| Error::MissingMember(REDUCER_JSON.into()))?;
    let desc: ReducerDescriptor = serde_json::from_slice(json)?;
    ReducerModel::from_parts(&desc, &contents.tensors)
}

/// `‖V − inverse(transform(V))‖_F`.
pub fn reconstruction_error(v: &Array2<f64>, model: &ReducerModel) -> Result<f64> {
    let recon = model.reconstruct(v)?;
    Ok(frobenius_diff(v.view(), recon.view()))
}

pub(crate) fn check_concept_count(v: &Array2<f64>, n_concepts: usize) -> Result<()> {
    let (m, c) = v.dim();
    if n_concepts < 1 || n_concepts > m.min(c) {
        return Err(Error::InvalidArgument(format!(
            "c′ = {n_concepts} out of range 1..={} for a {m}×{c} matrix",
            m.min(c)
        )));
    }
    Ok(())
}

pub(crate) fn check_non_negative(v: &Array2<f64>) -> Result<()> {
    if let Some(((row, col), &value)) = v.indexed_iter().find(|(_, x)| **x < 0.0) {
        return Err(Error::NegativeInput { row, col, value });
    }
    Ok(())
}

pub(crate) fn check_columns(v: &Array2<f64>, expected: usize, what: &str) -> Result<()> {
    if v.ncols() != expected {
        return Err(Error::Shape(format!(
            "{what}: input has {} columns, model expects {expected}",
            v.ncols()
        )));
    }
    Ok(())
}
