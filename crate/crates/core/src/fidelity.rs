//! Fidelity of the concept model against the original classifier.
//!
//! The approximate model runs the head on reconstructed feature maps,
//! `ŷ = GAP(inverse(transform(A)))·W + b`. Classification fidelity is the
//! fraction of images where the predicted label agrees with the original;
//! regression fidelity is the relative absolute error of the ground-truth
//! class score.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explainer::{fit_explainer, ClassifierHead, Explainer};
use crate::reducers::{FitOptions, Method};
use crate::tensor::{block_means, flatten_channels, FeatureMapBatch};

/// Per-element stabilizer in the denominator of [`fid_regression`].
pub const FID_EPSILON: f64 = 1e-12;

/// Candidate restriction used by the standard protocol.
pub const DEFAULT_TOP_CANDIDATES: usize = 5;

/// Concept counts 5, 10, …, 50.
pub fn default_concept_counts() -> Vec<usize> {
    (1..=10).map(|i| 5 * i).collect()
}

pub const CSV_HEADER: &str =
    "method,c_prime,fid_c,fid_r,approx_accuracy,reconstruction_error,fit_seconds";

/// Held-out feature maps with the original model's outputs.
#[derive(Debug, Clone)]
pub struct EvalBatch {
    pub maps: FeatureMapBatch,
    /// `n × K` pre-softmax logits of the original model.
    pub exact_logits: Array2<f64>,
    pub ground_truth: Vec<usize>,
}

impl EvalBatch {
    pub fn new(
        maps: FeatureMapBatch,
        exact_logits: Array2<f64>,
        ground_truth: Vec<usize>,
    ) -> Result<Self> {
        let n = maps.n();
        if exact_logits.nrows() != n || ground_truth.len() != n {
            return Err(Error::Shape(format!(
                "{n} feature maps but {} logit rows and {} labels",
                exact_logits.nrows(),
                ground_truth.len()
            )));
        }
        let k = exact_logits.ncols();
        if let Some(&bad) = ground_truth.iter().find(|&&g| g >= k) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        Ok(Self {
            maps,
            exact_logits,
            ground_truth,
        })
    }
}

/// Scores of the approximate model, `n × K`.
pub fn approximate_predict(explainer: &Explainer, a: &FeatureMapBatch) -> Result<Array2<f64>> {
    let v = flatten_channels(a);
    if v.ncols() != explainer.head().n_channels() {
        return Err(Error::Shape(format!(
            "feature maps have {} channels, explainer expects {}",
            v.ncols(),
            explainer.head().n_channels()
        )));
    }
    let recon = explainer.reducer().reconstruct(&v)?;
    let pooled = block_means(recon.view(), a.positions_per_image());
    explainer.head().predict_pooled(&pooled)
}

fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Indices of the `t` largest entries, ties to the lower index.
fn top_classes(row: ArrayView1<'_, f64>, t: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    order.truncate(t);
    order
}

/// Fraction of rows where the approximate label equals the exact label.
///
/// With `candidates = Some(t)` the approximate label is the argmax over
/// the exact model's top-`t` classes only.
pub fn fid_classification(
    exact: &Array2<f64>,
    approx: &Array2<f64>,
    candidates: Option<usize>,
) -> Result<f64> {
    if exact.dim() != approx.dim() {
        return Err(Error::Shape(format!(
            "logit shapes differ: {:?} vs {:?}",
            exact.dim(),
            approx.dim()
        )));
    }
    if exact.nrows() == 0 {
        return Err(Error::InvalidArgument("no rows to compare".into()));
    }
    if candidates == Some(0) {
        return Err(Error::InvalidArgument("candidate count must be >= 1".into()));
    }
    let agree = exact
        .rows()
        .into_iter()
        .zip(approx.rows())
        .filter(|(e, a)| {
            let label = argmax(*e);
            let predicted = match candidates {
                None => argmax(*a),
                Some(t) => {
                    let mut best: Option<usize> = None;
                    let mut cands = top_classes(*e, t);
                    cands.sort_unstable();
                    for c in cands {
                        if best.is_none_or(|b| a[c] > a[b]) {
                            best = Some(c);
                        }
                    }
                    best.expect("at least one candidate")
                }
            };
            label == predicted
        })
        .count();
    Ok(agree as f64 / exact.nrows() as f64)
}

/// `Σ|F − F̂| / Σ(|F| + ε)` over the given scores.
pub fn fid_regression(exact: &[f64], approx: &[f64]) -> Result<f64> {
    if exact.is_empty() {
        return Err(Error::InvalidArgument("no scores to compare".into()));
    }
    if exact.len() != approx.len() {
        return Err(Error::Shape(format!(
            "{} exact scores vs {} approximate",
            exact.len(),
            approx.len()
        )));
    }
    let numer: f64 = exact.iter().zip(approx).map(|(e, a)| (e - a).abs()).sum();
    let denom: f64 = exact.iter().map(|e| e.abs() + FID_EPSILON).sum();
    Ok(numer / denom)
}

/// Sweep settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub methods: Vec<Method>,
    pub concept_counts: Vec<usize>,
    pub options: FitOptions,
    /// `None` compares unrestricted argmaxes.
    pub top_candidates: Option<usize>,
    /// Wall-clock fit times make reports differ between runs; off by default.
    pub record_timings: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            concept_counts: default_concept_counts(),
            options: FitOptions::default(),
            top_candidates: Some(DEFAULT_TOP_CANDIDATES),
            record_timings: false,
        }
    }
}

/// One class's reducer training data and evaluation set.
#[derive(Debug, Clone)]
pub struct ClassTask {
    pub class_index: usize,
    pub train: FeatureMapBatch,
    pub eval: EvalBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityCell {
    pub method: Method,
    pub c_prime: usize,
    pub fid_c: f64,
    pub fid_r: f64,
    /// Argmax of the approximate scores against the ground-truth labels.
    pub approx_accuracy: f64,
    /// `‖V − V̂‖_F` on the reducer's training matrix.
    pub reconstruction_error: f64,
    pub fit_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCells {
    pub class_index: usize,
    pub cells: Vec<FidelityCell>,
}

/// Results sorted by method then `c′`. `cells` holds the unweighted mean over
/// classes; `per_class` the individual results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub cells: Vec<FidelityCell>,
    pub per_class: Vec<ClassCells>,
}

/// Single-class sweep.
pub fn sweep(
    train: &FeatureMapBatch,
    eval: &EvalBatch,
    head: &ClassifierHead,
    config: &SweepConfig,
) -> Result<FidelityReport> {
    let class_index = eval.ground_truth.first().copied().unwrap_or(0);
    sweep_classes(
        &[ClassTask {
            class_index,
            train: train.clone(),
            eval: eval.clone(),
        }],
        head,
        config,
    )
}

/// Fits one explainer per (class, method, `c′`) and measures its fidelity.
pub fn sweep_classes(
    tasks: &[ClassTask],
    head: &ClassifierHead,
    config: &SweepConfig,
) -> Result<FidelityReport> {
    if tasks.is_empty() || config.methods.is_empty() || config.concept_counts.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep needs at least one class, method and concept count".into(),
        ));
    }
    config.options.validate()?;
    if config.top_candidates == Some(0) {
        return Err(Error::InvalidArgument("candidate count must be >= 1".into()));
    }
    let mut methods = config.methods.clone();
    methods.sort();
    methods.dedup();
    let mut counts = config.concept_counts.clone();
    counts.sort_unstable();
    counts.dedup();

    let jobs: Vec<(usize, Method, usize)> = (0..tasks.len())
        .flat_map(|t| {
            let counts = &counts;
            methods
                .iter()
                .flat_map(move |&m| counts.iter().map(move |&c| (t, m, c)))
        })
        .collect();

    let results: Vec<Result<FidelityCell>> = jobs
        .par_iter()
        .map(|&(t, method, c)| evaluate_cell(&tasks[t], head, method, c, config))
        .collect();

    let per_cell = jobs.len() / tasks.len();
    let mut per_class = Vec::with_capacity(tasks.len());
    let mut results = results.into_iter();
    for task in tasks {
        let cells = results
            .by_ref()
            .take(per_cell)
            .collect::<Result<Vec<_>>>()?;
        per_class.push(ClassCells {
            class_index: task.class_index,
            cells,
        });
    }

    let n = per_class.len() as f64;
    let cells = (0..per_cell)
        .map(|i| {
            let first = &per_class[0].cells[i];
            let mean = |f: fn(&FidelityCell) -> f64| {
                per_class.iter().map(|c| f(&c.cells[i])).sum::<f64>() / n
            };
            FidelityCell {
                method: first.method,
                c_prime: first.c_prime,
                fid_c: mean(|c| c.fid_c),
                fid_r: mean(|c| c.fid_r),
                approx_accuracy: mean(|c| c.approx_accuracy),
                reconstruction_error: mean(|c| c.reconstruction_error),
                fit_seconds: mean(|c| c.fit_seconds),
            }
        })
        .collect();

    Ok(FidelityReport { cells, per_class })
}

fn evaluate_cell(
    task: &ClassTask,
    head: &ClassifierHead,
    method: Method,
    c_prime: usize,
    config: &SweepConfig,
) -> Result<FidelityCell> {
    let started = Instant::now();
    let explainer = fit_explainer(&task.train, head, c_prime, method, &config.options)?;
    let fit_seconds = if config.record_timings {
        started.elapsed().as_secs_f64()
    } else {
        0.0
    };

    let eval = &task.eval;
    let approx = approximate_predict(&explainer, &eval.maps)?;
    let fid_c = fid_classification(&eval.exact_logits, &approx, config.top_candidates)?;

    let (exact_gt, approx_gt): (Vec<f64>, Vec<f64>) = eval
        .ground_truth
        .iter()
        .enumerate()
        .map(|(i, &g)| (eval.exact_logits[[i, g]], approx[[i, g]]))
        .unzip();
    let fid_r = fid_regression(&exact_gt, &approx_gt)?;

    let correct = approx
        .rows()
        .into_iter()
        .zip(&eval.ground_truth)
        .filter(|(row, &g)| argmax(*row) == g)
        .count();

    Ok(FidelityCell {
        method,
        c_prime,
        fid_c,
        fid_r,
        approx_accuracy: correct as f64 / eval.ground_truth.len() as f64,
        reconstruction_error: explainer.reducer().fit_stats().objective,
        fit_seconds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidArgument(format!(
                "unknown report format {other:?}"
            ))),
        }
    }
}

impl FidelityReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Header plus one row per aggregate cell. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{:?},{:?},{:?},{:?},{:?}",
                c.method,
                c.c_prime,
                c.fid_c,
                c.fid_r,
                c.approx_accuracy,
                c.reconstruction_error,
                c.fit_seconds
            );
        }
        out
    }
}

pub fn write_report(report: &FidelityReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Json => report.to_json()?,
        ReportFormat::Csv => report.to_csv(),
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn one_hot_rows(labels: &[usize], k: usize) -> Array2<f64> {
        let mut m = Array2::zeros((labels.len(), k));
        for (i, &l) in labels.iter().enumerate() {
            m[[i, l]] = 1.0;
        }
        m
    }

    #[test]
    fn classification_arithmetic() {
        let exact = one_hot_rows(&[3, 7, 7], 8);
        let approx = one_hot_rows(&[3, 7, 2], 8);
        let f = fid_classification(&exact, &approx, None).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(fid_classification(&exact, &exact, None).unwrap(), 1.0);
        assert!(fid_classification(&exact, &approx, Some(0)).is_err());
    }

    #[test]
    fn candidate_restriction_ignores_outside_classes() {
        // approximate model prefers class 4, which is not among the exact top-2
        let exact = array![[5.0, 4.0, 1.0, 0.0, -1.0]];
        let approx = array![[3.0, 2.0, 0.0, 0.0, 9.0]];
        assert_eq!(fid_classification(&exact, &approx, None).unwrap(), 0.0);
        assert_eq!(fid_classification(&exact, &approx, Some(2)).unwrap(), 1.0);
    }

    #[test]
    fn regression_arithmetic() {
        let f = fid_regression(&[4.0, 2.0], &[3.0, 1.0]).unwrap();
        assert_eq!(f, 2.0 / (6.0 + 2.0 * FID_EPSILON));
        assert!((f - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(fid_regression(&[4.0, -2.0], &[4.0, -2.0]).unwrap(), 0.0);
        assert!(fid_regression(&[], &[]).is_err());
        assert!(fid_regression(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn regression_scale_invariance() {
        let e = [1.5, -2.0, 3.25, 0.5];
        let a = [1.0, -2.5, 3.0, 0.75];
        let scaled_e: Vec<f64> = e.iter().map(|x| x * 10.0).collect();
        let scaled_a: Vec<f64> = a.iter().map(|x| x * 10.0).collect();
        let f1 = fid_regression(&e, &a).unwrap();
        let f2 = fid_regression(&scaled_e, &scaled_a).unwrap();
        assert!((f1 - f2).abs() < 1e-12);
    }

    #[test]
    fn default_counts() {
        assert_eq!(default_concept_counts(), vec![5, 10, 15, 20, 25, 30, 35, 40, 45, 50]);
    }

    #[test]
    fn eval_batch_validation() {
        let maps = FeatureMapBatch::new(ndarray::Array4::zeros((2, 1, 1, 3))).unwrap();
        assert!(EvalBatch::new(maps.clone(), Array2::zeros((2, 4)), vec![0, 3]).is_ok());
        assert!(EvalBatch::new(maps.clone(), Array2::zeros((2, 4)), vec![0, 4]).is_err());
        assert!(EvalBatch::new(maps, Array2::zeros((3, 4)), vec![0, 1]).is_err());
    }
}
