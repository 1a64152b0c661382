mod common;

use common::*;
use ncav::tensor::archive::{decode_archive, encode_archive, read_archive_contents};
use ncav::tensor::npy::{decode, encode};
use ncav::tensor::{
    block_means, flatten_channels, gap, read_archive, read_archive_requiring, to_channel_first,
    to_channel_last, unflatten, Dtype, FeatureMapBatch, Tensor,
};
use ncav::Error;
use ndarray::{Array2, Array4};
use proptest::prelude::*;

#[test]
fn numpy_archive_matches_independent_pooling() {
    let contents = read_archive_contents(fixture("extract_small.npz")).unwrap();
    let acts = contents.tensors.require("acts").unwrap();
    assert_eq!(acts.shape, vec![6, 8, 3, 3]);
    assert_eq!(acts.dtype, Dtype::F32);
    let a = to_channel_last(acts).unwrap();
    assert_eq!(a.array().dim(), (6, 3, 3, 8));

    let mut expected = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(fixture("extract_small_gap.csv"))
        .unwrap();
    let pooled = gap(&a);
    for (i, record) in expected.records().enumerate() {
        for (j, field) in record.unwrap().iter().enumerate() {
            let want: f64 = field.parse().unwrap();
            assert!((pooled[[i, j]] - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }
}

#[test]
fn dumped_triple_reproduces_logits() {
    for name in ["extract_small.npz", "extract_small_compressed.npz"] {
        let t = read_archive_requiring(fixture(name), &["acts", "logits", "W", "b"]).unwrap();
        let a = to_channel_last(t.require("acts").unwrap()).unwrap();
        let head = ncav::explainer::ClassifierHead::from_tensors(
            t.require("W").unwrap(),
            t.require("b").unwrap(),
            None,
        )
        .unwrap();
        let logits = t.require("logits").unwrap().to_matrix().unwrap();
        let recomputed = head.predict(&a).unwrap();
        for (x, y) in logits.iter().zip(recomputed.iter()) {
            assert!((x - y).abs() <= 1e-4 * x.abs().max(1.0), "{name}: {x} vs {y}");
        }
        let naive = naive_head_scores(&a, &head);
        for (x, y) in naive.iter().zip(recomputed.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn missing_member_is_named() {
    let err = read_archive_requiring(fixture("head_named.npz"), &["W", "b", "acts"]).unwrap_err();
    assert!(matches!(&err, Error::MissingMember(m) if m == "acts"));
    assert!(err.to_string().contains("acts"));
}

#[test]
fn negative_channel_first_input_rejected() {
    let t = Tensor::new(vec![1, 2, 1, 1], vec![0.5, -0.25]).unwrap();
    let err = to_channel_last(&t).unwrap_err();
    assert!(matches!(err, Error::NegativeInput { row: 0, col: 1, .. }));
}

#[test]
fn gap_equals_block_means_example() {
    // 1 image, 2×2 positions, 2 channels
    let a = FeatureMapBatch::new(
        Array4::from_shape_vec((1, 2, 2, 2), vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]).unwrap(),
    )
    .unwrap();
    assert_eq!(gap(&a), ndarray::array![[2.5, 25.0]]);
}

#[test]
fn file_round_trip_both_dtypes() {
    let dir = tempfile::tempdir().unwrap();
    let t64 = Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, 1e300, -5.0, 0.0]).unwrap();
    let p = dir.path().join("x.npy");
    ncav::tensor::write_tensor(&t64, &p).unwrap();
    assert_eq!(ncav::tensor::read_tensor(&p).unwrap(), t64);

    let t32 = Tensor::with_dtype(vec![3], vec![0.5, 1.25, -2.0], Dtype::F32).unwrap();
    ncav::tensor::write_tensor(&t32, &p).unwrap();
    assert_eq!(ncav::tensor::read_tensor(&p).unwrap(), t32);

    let ap = dir.path().join("a.npz");
    ncav::tensor::write_archive(&ap, &[("x", &t64), ("y", &t32)], &[]).unwrap();
    let back = read_archive(&ap).unwrap();
    assert_eq!(back.get("x"), Some(&t64));
    assert_eq!(back.get("y"), Some(&t32));
}

fn shape_and_data() -> impl Strategy<Value = (Vec<usize>, Vec<f64>)> {
    prop::collection::vec(1usize..5, 0..4).prop_flat_map(|shape| {
        let len: usize = shape.iter().product();
        (Just(shape), prop::collection::vec(-1e6f64..1e6, len))
    })
}

fn batch() -> impl Strategy<Value = (usize, usize, usize, usize, Vec<f64>)> {
    (1usize..4, 1usize..4, 1usize..4, 1usize..5).prop_flat_map(|(n, h, w, c)| {
        (Just(n), Just(h), Just(w), Just(c), prop::collection::vec(0.0f64..10.0, n * h * w * c))
    })
}

proptest! {
    #[test]
    fn npy_round_trip_is_bit_exact((shape, data) in shape_and_data()) {
        let t = Tensor::new(shape, data).unwrap();
        let back = decode(&encode(&t)).unwrap();
        prop_assert_eq!(back.shape, t.shape);
        let same = back.data.iter().zip(&t.data).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }

    #[test]
    fn archive_round_trip((shape, data) in shape_and_data(), names in prop::collection::btree_set("[a-z]{1,6}", 1..4)) {
        let t = Tensor::new(shape, data).unwrap();
        let members: Vec<(&str, &Tensor)> = names.iter().map(|n| (n.as_str(), &t)).collect();
        let bytes = encode_archive(&members, &[]).unwrap();
        prop_assert_eq!(&bytes, &encode_archive(&members, &[]).unwrap());
        let back = decode_archive(&bytes).unwrap();
        for n in &names {
            prop_assert_eq!(back.tensors.get(n), Some(&t));
        }
    }

    #[test]
    fn flatten_unflatten_inverse((n, h, w, c, data) in batch()) {
        let a = FeatureMapBatch::new(Array4::from_shape_vec((n, h, w, c), data).unwrap()).unwrap();
        let v = flatten_channels(&a);
        prop_assert_eq!(v.dim(), (n * h * w, c));
        // row index is i·h·w + j·w + k
        let arr = a.array();
        for i in 0..n { for j in 0..h { for k in 0..w { for ch in 0..c {
            prop_assert_eq!(v[[i * h * w + j * w + k, ch]], arr[[i, j, k, ch]]);
        }}}}
        let back = unflatten(&v, n, h, w).unwrap();
        prop_assert_eq!(back.array(), a.array());
        prop_assert_eq!(flatten_channels(&back), v);
    }

    #[test]
    fn gap_is_block_mean_and_linear((n, h, w, c, data) in batch(), alpha in 0.0f64..5.0, seed in 0u64..1000) {
        let a = FeatureMapBatch::new(Array4::from_shape_vec((n, h, w, c), data).unwrap()).unwrap();
        let b = maps(n, h, w, c, seed);
        let pooled = gap(&a);
        let blocks = block_means(flatten_channels(&a).view(), h * w);
        for (x, y) in pooled.iter().zip(blocks.iter()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        let combined: Array4<f64> = a.array() * alpha + b.array();
        let combo = FeatureMapBatch::new(combined).unwrap();
        let lhs = gap(&combo);
        let rhs: Array2<f64> = &pooled * alpha + &gap(&b);
        for (x, y) in lhs.iter().zip(rhs.iter()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn channel_layout_round_trip((n, h, w, c, data) in batch()) {
        let a = FeatureMapBatch::new(Array4::from_shape_vec((n, h, w, c), data).unwrap()).unwrap();
        let t = to_channel_first(&a);
        prop_assert_eq!(&t.shape, &vec![n, c, h, w]);
        let back = to_channel_last(&t).unwrap();
        prop_assert_eq!(back.array(), a.array());
    }
}
