#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ncav::explainer::ClassifierHead;
use ncav::tensor::{to_channel_first, write_archive, FeatureMapBatch, Tensor};
use ndarray::{Array1, Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_simple_fn((rows, cols), || r.random::<f64>())
}

pub fn signed(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_simple_fn((rows, cols), || r.random::<f64>() * 2.0 - 1.0)
}

pub fn maps(n: usize, h: usize, w: usize, c: usize, seed: u64) -> FeatureMapBatch {
    let mut r = rng(seed);
    FeatureMapBatch::new(Array4::from_shape_simple_fn((n, h, w, c), || r.random::<f64>())).unwrap()
}

pub fn head(c: usize, k: usize, seed: u64) -> ClassifierHead {
    let mut r = rng(seed);
    let w = Array2::from_shape_simple_fn((c, k), || r.random::<f64>() * 2.0 - 1.0);
    let b = Array1::from_shape_simple_fn(k, || r.random::<f64>() * 2.0 - 1.0);
    ClassifierHead::unnamed(w, b).unwrap()
}

/// Plain triple loop, independent of any BLAS-style kernel.
pub fn naive_matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    assert_eq!(a.ncols(), b.nrows());
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    for i in 0..a.nrows() {
        for j in 0..b.ncols() {
            let mut acc = 0.0;
            for k in 0..a.ncols() {
                acc += a[[i, k]] * b[[k, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// Pooled head scores computed by explicit loops over the channel-last batch.
pub fn naive_head_scores(a: &FeatureMapBatch, head: &ClassifierHead) -> Array2<f64> {
    let arr = a.array();
    let (n, h, w, c) = arr.dim();
    let k = head.n_classes();
    let mut out = Array2::zeros((n, k));
    for i in 0..n {
        for class in 0..k {
            let mut acc = 0.0;
            for ch in 0..c {
                let mut sum = 0.0;
                for y in 0..h {
                    for x in 0..w {
                        sum += arr[[i, y, x, ch]];
                    }
                }
                acc += sum / (h * w) as f64 * head.weights[[ch, class]];
            }
            out[[i, class]] = acc + head.bias[class];
        }
    }
    out
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Writes an extractor-style archive: channel-first `acts`, `logits`,
/// `labels`, `W` and `b`.
pub fn write_acts_archive(path: &Path, a: &FeatureMapBatch, head: &ClassifierHead, with_head: bool) {
    let acts = to_channel_first(a);
    let logits = head.predict(a).unwrap();
    let labels: Vec<f64> = logits
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for i in 0..r.len() {
                if r[i] > r[best] {
                    best = i;
                }
            }
            best as f64
        })
        .collect();
    let logits_t = Tensor::from_matrix(&logits);
    let labels_t = Tensor::from_vector(&labels);
    let w = Tensor::from_matrix(&head.weights);
    let b = Tensor::from_vector(head.bias.as_slice().unwrap());
    let mut members: Vec<(&str, &Tensor)> = vec![("acts", &acts), ("logits", &logits_t), ("labels", &labels_t)];
    if with_head {
        members.push(("W", &w));
        members.push(("b", &b));
    }
    write_archive(path, &members, &[]).unwrap();
}

pub fn write_head_archive(path: &Path, head: &ClassifierHead, names: Option<&str>) {
    let w = Tensor::from_matrix(&head.weights);
    let b = Tensor::from_vector(head.bias.as_slice().unwrap());
    let files: Vec<(&str, &[u8])> = names.map(|n| vec![("class_names.txt", n.as_bytes())]).unwrap_or_default();
    write_archive(path, &[("W", &w), ("b", &b)], &files).unwrap();
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures").join(name)
}
