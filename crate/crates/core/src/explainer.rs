//! Explainers: a fitted reducer combined with the classifier head.
//!
//! For a head of the form `GAP(A)·W + b` and a reducer with
//! `V = S·P + U`, every class score splits exactly into
//!
//! ```text
//! GAP(A)·W_k + b_k = Σ_j GAP(S)_j (P·W)_jk + GAP(U)·W_k + b_k
//! ```
//!
//! so `P·W` are the concept weights and `GAP(S)` the concept scores. The
//! residual term measures what the concepts leave unexplained. PCA adds its
//! mean to every reconstruction; that offset's contribution `mean·W_k` is
//! folded into the bias term.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reducers::{fit_reducer, FitOptions, Method, ReducerDescriptor, ReducerModel};
use crate::tensor::archive::{decode_archive, encode_archive};
use crate::tensor::{block_means, flatten_channels, gap, FeatureMapBatch, Tensor};

pub const DEFAULT_PROTOTYPES: usize = 5;
const FORMAT_VERSION: u32 = 1;
const EXPLAINER_JSON: &str = "explainer.json";

/// The final dense layer after global average pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    /// `c × K`.
    pub weights: Array2<f64>,
    /// Length `K`.
    pub bias: Array1<f64>,
    pub class_names: Vec<String>,
}

impl ClassifierHead {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, class_names: Vec<String>) -> Result<Self> {
        let k = weights.ncols();
        if bias.len() != k || class_names.len() != k {
            return Err(Error::Shape(format!(
                "head has {k} weight columns, {} biases and {} class names",
                bias.len(),
                class_names.len()
            )));
        }
        Ok(Self {
            weights,
            bias,
            class_names,
        })
    }

    /// Builds a head with generated names `class_0`, `class_1`, ….
    pub fn unnamed(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        let names = (0..weights.ncols()).map(|k| format!("class_{k}")).collect();
        Self::new(weights, bias, names)
    }

    pub fn from_tensors(w: &Tensor, b: &Tensor, class_names: Option<Vec<String>>) -> Result<Self> {
        let weights = w.to_matrix()?;
        let bias = Array1::from(b.to_vector()?);
        match class_names {
            Some(names) => Self::new(weights, bias, names),
            None => Self::unnamed(weights, bias),
        }
    }

    pub fn n_channels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.weights.ncols()
    }

    /// Scores from pooled features (`n × c`).
    pub fn predict_pooled(&self, pooled: &Array2<f64>) -> Result<Array2<f64>> {
        if pooled.ncols() != self.n_channels() {
            return Err(Error::Shape(format!(
                "pooled features have {} channels, head expects {}",
                pooled.ncols(),
                self.n_channels()
            )));
        }
        Ok(pooled.dot(&self.weights) + &self.bias)
    }

    /// `GAP(A)·W + b`, the pre-softmax logits.
    pub fn predict(&self, a: &FeatureMapBatch) -> Result<Array2<f64>> {
        self.predict_pooled(&gap(a))
    }

    /// Resolves a class given by name or by numeric index.
    pub fn class_index(&self, class: &str) -> Result<usize> {
        if let Some(i) = self.class_names.iter().position(|n| n == class) {
            return Ok(i);
        }
        match class.parse::<usize>() {
            Ok(i) if i < self.n_classes() => Ok(i),
            _ => Err(Error::InvalidArgument(format!("unknown class {class:?}"))),
        }
    }

    fn check_class(&self, k: usize) -> Result<()> {
        if k >= self.n_classes() {
            return Err(Error::InvalidArgument(format!(
                "class index {k} out of range for {} classes",
                self.n_classes()
            )));
        }
        Ok(())
    }
}

/// Which images an explainer was fitted on.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainedOn {
    pub class_index: Option<usize>,
    pub class_name: Option<String>,
    pub image_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explainer {
    reducer: ReducerModel,
    head: ClassifierHead,
    concept_weights: Array2<f64>,
    layer_name: String,
    trained_on: TrainedOn,
}

/// Per-concept breakdown of one class score for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalExplanation {
    pub class_index: usize,
    pub class_name: String,
    /// `GAP(S)` for the image, one entry per concept.
    pub concept_scores: Vec<f64>,
    /// Column `k` of the concept weights.
    pub concept_weights: Vec<f64>,
    /// `concept_scores[j] · concept_weights[j]`.
    pub contributions: Vec<f64>,
    /// `GAP(U)·W_k`.
    pub residual_term: f64,
    /// `b_k` (plus `mean·W_k` for PCA).
    pub bias_term: f64,
    /// `Σ contributions + bias_term`.
    pub approx_score: f64,
    /// `GAP(A)·W_k + b_k`.
    pub exact_score: f64,
}

/// The `m` images scoring highest on one concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub concept_index: usize,
    pub image_indices: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Fits a reducer on `A` and derives concept weights from `head`.
pub fn fit_explainer(
    a: &FeatureMapBatch,
    head: &ClassifierHead,
    n_concepts: usize,
    method: Method,
    opts: &FitOptions,
) -> Result<Explainer> {
    if a.c() != head.n_channels() {
        return Err(Error::Shape(format!(
            "feature maps have {} channels, head expects {}",
            a.c(),
            head.n_channels()
        )));
    }
    let fitted = fit_reducer(method, &flatten_channels(a), n_concepts, opts)?;
    let mut explainer = Explainer::new(fitted.model, head.clone())?;
    explainer.trained_on.image_count = a.n();
    Ok(explainer)
}

/// `P·W`: the importance of each concept direction for each class.
pub fn estimate_concept_weights_linear(
    basis: &Array2<f64>,
    head: &ClassifierHead,
) -> Result<Array2<f64>> {
    if basis.ncols() != head.n_channels() {
        return Err(Error::Shape(format!(
            "basis has {} channels, head expects {}",
            basis.ncols(),
            head.n_channels()
        )));
    }
    Ok(basis.dot(&head.weights))
}

/// Average directional derivative of class `k` along `direction`, by
/// central differences at every spatial position of `a`.
///
/// At each position the channel vector is perturbed by `±ε·direction`
/// while the rest of the image's feature map is held fixed. Since a pooled
/// head sees one position through a `1/(h·w)` weight, each difference
/// quotient is scaled by `h·w` to express it per unit change of that
/// position's vector. `classifier` maps a single-image batch to `1 × K`
/// scores.
pub fn estimate_concept_weights_directional<F>(
    classifier: F,
    direction: &[f64],
    a: &FeatureMapBatch,
    class: usize,
    epsilon: f64,
) -> Result<f64>
where
    F: Fn(&FeatureMapBatch) -> Result<Array2<f64>>,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if direction.len() != a.c() {
        return Err(Error::Shape(format!(
            "direction has length {}, feature maps have {} channels",
            direction.len(),
            a.c()
        )));
    }
    let (n, h, w, _) = a.array().dim();
    let hw = (h * w) as f64;
    let mut total = 0.0;
    for i in 0..n {
        let mut image = a.image(i)?.into_array();
        for j in 0..h {
            for l in 0..w {
                let original: Vec<f64> =
                    image.slice(ndarray::s![0, j, l, ..]).iter().copied().collect();
                let mut eval = |sign: f64| -> Result<f64> {
                    for (ch, &d) in direction.iter().enumerate() {
                        image[[0, j, l, ch]] = original[ch] + sign * epsilon * d;
                    }
                    let scores = classifier(&FeatureMapBatch::signed(image.clone())?)?;
                    scores.get([0, class]).copied().ok_or_else(|| {
                        Error::InvalidArgument(format!("class index {class} out of range"))
                    })
                };
                let plus = eval(1.0)?;
                let minus = eval(-1.0)?;
                for (ch, &v) in original.iter().enumerate() {
                    image[[0, j, l, ch]] = v;
                }
                total += hw * (plus - minus) / (2.0 * epsilon);
            }
        }
    }
    Ok(total / (n as f64 * hw))
}

/// Directional estimates for every concept and class of an explainer.
pub fn directional_concept_weights<F>(
    classifier: F,
    basis: &Array2<f64>,
    a: &FeatureMapBatch,
    n_classes: usize,
    epsilon: f64,
) -> Result<Array2<f64>>
where
    F: Fn(&FeatureMapBatch) -> Result<Array2<f64>>,
{
    let mut out = Array2::zeros((basis.nrows(), n_classes));
    for (j, row) in basis.rows().into_iter().enumerate() {
        let dir = row.to_vec();
        for k in 0..n_classes {
            out[[j, k]] = estimate_concept_weights_directional(&classifier, &dir, a, k, epsilon)?;
        }
    }
    Ok(out)
}

/// `1e-3 × RMS(A)`, falling back to `1e-3` for an all-zero batch.
pub fn default_epsilon(a: &FeatureMapBatch) -> f64 {
    let rms = a.rms();
    if rms > 0.0 {
        1e-3 * rms
    } else {
        1e-3
    }
}

/// Indices of the `m` highest entries of column `concept`, descending,
/// ties to the lower image index.
pub fn top_images(scores: &Array2<f64>, concept: usize, m: usize) -> Result<PrototypeSet> {
    if concept >= scores.ncols() {
        return Err(Error::InvalidArgument(format!(
            "concept index {concept} out of range for {} concepts",
            scores.ncols()
        )));
    }
    if m > scores.nrows() {
        return Err(Error::InvalidArgument(format!(
            "requested {m} prototypes from {} images",
            scores.nrows()
        )));
    }
    let col = scores.column(concept);
    let mut order: Vec<usize> = (0..scores.nrows()).collect();
    order.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
    order.truncate(m);
    Ok(PrototypeSet {
        concept_index: concept,
        scores: order.iter().map(|&i| col[i]).collect(),
        image_indices: order,
    })
}

impl Explainer {
    /// Pairs an already-fitted reducer with a head.
    pub fn new(reducer: ReducerModel, head: ClassifierHead) -> Result<Self> {
        if reducer.n_channels() != head.n_channels() {
            return Err(Error::Shape(format!(
                "reducer works on {} channels, head expects {}",
                reducer.n_channels(),
                head.n_channels()
            )));
        }
        let concept_weights = estimate_concept_weights_linear(reducer.basis(), &head)?;
        Ok(Self {
            reducer,
            head,
            concept_weights,
            layer_name: String::new(),
            trained_on: TrainedOn::default(),
        })
    }

    pub fn with_layer_name(mut self, name: impl Into<String>) -> Self {
        self.layer_name = name.into();
        self
    }

    pub fn with_target_class(mut self, class_index: usize) -> Self {
        self.trained_on.class_name = self.head.class_names.get(class_index).cloned();
        self.trained_on.class_index = Some(class_index);
        self
    }

    pub fn reducer(&self) -> &ReducerModel {
        &self.reducer
    }

    pub fn head(&self) -> &ClassifierHead {
        &self.head
    }

    /// `c′ × K`.
    pub fn concept_weights(&self) -> &Array2<f64> {
        &self.concept_weights
    }

    pub fn layer_name(&self) -> &str {
        &self.layer_name
    }

    pub fn trained_on(&self) -> &TrainedOn {
        &self.trained_on
    }

    pub fn method(&self) -> Method {
        self.reducer.method()
    }

    pub fn n_concepts(&self) -> usize {
        self.reducer.n_concepts()
    }

    fn check_maps(&self, a: &FeatureMapBatch) -> Result<()> {
        if a.c() != self.head.n_channels() {
            return Err(Error::Shape(format!(
                "feature maps have {} channels, explainer expects {}",
                a.c(),
                self.head.n_channels()
            )));
        }
        Ok(())
    }

    /// Per-position concept scores `S` for a batch, `(n·h·w) × c′`.
    pub fn position_scores(&self, a: &FeatureMapBatch) -> Result<Array2<f64>> {
        self.check_maps(a)?;
        self.reducer.transform(&flatten_channels(a))
    }

    /// `GAP(S)` per image, `n × c′`.
    pub fn concept_scores(&self, a: &FeatureMapBatch) -> Result<Array2<f64>> {
        let s = self.position_scores(a)?;
        Ok(block_means(s.view(), a.positions_per_image()))
    }

    /// Contribution of the reducer's affine offset to class `k`.
    fn offset_term(&self, k: usize) -> f64 {
        self.reducer
            .offset()
            .map(|mean| mean.dot(&self.head.weights.column(k)))
            .unwrap_or(0.0)
    }

    /// Decomposes the class-`k` score of a single image.
    pub fn explain_local(&self, a: &FeatureMapBatch, class: usize) -> Result<LocalExplanation> {
        self.check_maps(a)?;
        self.head.check_class(class)?;
        if a.n() != 1 {
            return Err(Error::InvalidArgument(format!(
                "local explanations take one image, got {}",
                a.n()
            )));
        }
        let v = flatten_channels(a);
        let s = self.reducer.transform(&v)?;
        let recon = self.reducer.inverse(&s)?;

        let scores = s.mean_axis(Axis(0)).expect("non-empty");
        let weights = self.concept_weights.column(class);
        let contributions: Vec<f64> = scores.iter().zip(weights).map(|(s, w)| s * w).collect();
        let bias_term = self.head.bias[class] + self.offset_term(class);
        let approx_score = contributions.iter().sum::<f64>() + bias_term;

        let w_k = self.head.weights.column(class);
        let pooled = v.mean_axis(Axis(0)).expect("non-empty");
        let pooled_recon = recon.mean_axis(Axis(0)).expect("non-empty");
        let residual_term = (&pooled - &pooled_recon).dot(&w_k);
        let exact_score = pooled.dot(&w_k) + self.head.bias[class];

        Ok(LocalExplanation {
            class_index: class,
            class_name: self.head.class_names[class].clone(),
            concept_scores: scores.to_vec(),
            concept_weights: weights.to_vec(),
            contributions,
            residual_term,
            bias_term,
            approx_score,
            exact_score,
        })
    }

    /// The `m` images of `a` with the highest score on `concept`.
    pub fn select_prototypes(
        &self,
        a: &FeatureMapBatch,
        concept: usize,
        m: usize,
    ) -> Result<PrototypeSet> {
        if concept >= self.n_concepts() {
            return Err(Error::InvalidArgument(format!(
                "concept index {concept} out of range for {} concepts",
                self.n_concepts()
            )));
        }
        top_images(&self.concept_scores(a)?, concept, m)
    }

    /// Serializes to archive bytes: `explainer.json` plus tensor members.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (reducer, mut tensors) = self.reducer.to_parts();
        tensors.push(("W", Tensor::from_matrix(&self.head.weights)));
        tensors.push(("b", Tensor::from_vector(self.head.bias.as_slice().expect("contiguous"))));
        tensors.push(("concept_weights", Tensor::from_matrix(&self.concept_weights)));
        let meta = ExplainerMeta {
            format_version: FORMAT_VERSION,
            method: self.method(),
            c_prime: self.n_concepts(),
            layer_name: self.layer_name.clone(),
            class_names: self.head.class_names.clone(),
            trained_on: self.trained_on.clone(),
            reducer,
        };
        let json = serde_json::to_vec_pretty(&meta)?;
        let refs: Vec<(&str, &Tensor)> = tensors.iter().map(|(n, t)| (*n, t)).collect();
        encode_archive(&refs, &[(EXPLAINER_JSON, &json)])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let contents = decode_archive(bytes)?;
        let json = contents
            .files
            .get(EXPLAINER_JSON)
            .ok_or_else(|| Error::MissingMember(EXPLAINER_JSON.into()))?;
        let version: VersionProbe = serde_json::from_slice(json)?;
        if version.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let meta: ExplainerMeta = serde_json::from_slice(json)?;
        let reducer = ReducerModel::from_parts(&meta.reducer, &contents.tensors)?;
        let head = ClassifierHead::from_tensors(
            contents.tensors.require("W")?,
            contents.tensors.require("b")?,
            Some(meta.class_names),
        )?;
        let concept_weights = contents.tensors.require("concept_weights")?.to_matrix()?;
        let mut explainer = Explainer::new(reducer, head)?;
        if concept_weights.dim() != explainer.concept_weights.dim() {
            return Err(Error::CorruptArchive("concept_weights has the wrong shape".into()));
        }
        let scale = concept_weights.iter().fold(1.0f64, |a, x| a.max(x.abs()));
        let drift = concept_weights
            .iter()
            .zip(explainer.concept_weights.iter())
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        if drift > 1e-12 * scale {
            return Err(Error::CorruptArchive(
                "concept_weights do not match basis·W".into(),
            ));
        }
        explainer.concept_weights = concept_weights;
        explainer.layer_name = meta.layer_name;
        explainer.trained_on = meta.trained_on;
        Ok(explainer)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ExplainerMeta {
    format_version: u32,
    method: Method,
    c_prime: usize,
    layer_name: String,
    class_names: Vec<String>,
    trained_on: TrainedOn,
    reducer: ReducerDescriptor,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

pub fn save_explainer(explainer: &Explainer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, explainer.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_explainer(path: impl AsRef<Path>) -> Result<Explainer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Explainer::from_bytes(&bytes)
}
