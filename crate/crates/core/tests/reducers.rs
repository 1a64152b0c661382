mod common;

use common::*;
use nalgebra::{DMatrix, SymmetricEigen};
use ncav::explainer::{fit_explainer, Explainer};
use ncav::reducers::{
    fit_kmeans, fit_nmf, fit_pca, fit_reducer, kmeans_transform, nmf_inverse, reconstruction_error,
    FitOptions, Method, NmfInit,
};
use ndarray::{Array2, Axis};
use proptest::prelude::*;

/// Eigenvalues of the centered scatter matrix, descending.
fn scatter_eigenvalues(v: &Array2<f64>) -> Vec<f64> {
    let mean = v.mean_axis(Axis(0)).unwrap();
    let centered = v - &mean;
    let (m, c) = centered.dim();
    let x = DMatrix::from_fn(m, c, |i, j| centered[[i, j]]);
    let eig = SymmetricEigen::new(x.transpose() * &x);
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    vals
}

#[test]
fn pca_error_equals_discarded_spectrum() {
    for (seed, k) in [(1u64, 1usize), (2, 3), (3, 6), (4, 9)] {
        let v = signed(80, 10, seed);
        let eig = scatter_eigenvalues(&v);
        let (model, _) = fit_pca(&v, k).unwrap();
        let discarded: f64 = eig[k..].iter().map(|x| x.max(0.0)).sum();
        let err = model.fit_objective;
        assert!(rel_close(err * err, discarded, 1e-9), "k={k}: {} vs {discarded}", err * err);
        for (j, ev) in model.explained_variance.iter().enumerate() {
            assert!(rel_close(*ev, eig[j] / 79.0, 1e-9));
        }
    }
}

#[test]
fn nmf_reconstruction_matches_naive_product() {
    let v = uniform(40, 7, 5);
    let fit = fit_nmf(&v, 4, &FitOptions::default()).unwrap();
    let fast = nmf_inverse(&fit.scores, &fit.model.basis).unwrap();
    let slow = naive_matmul(&fit.scores, &fit.model.basis);
    for (a, b) in fast.iter().zip(slow.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    let direct = ncav::linalg::frobenius_diff(v.view(), slow.view());
    assert!(rel_close(direct, *fit.objective_trace.last().unwrap(), 1e-12));
}

#[test]
fn kmeans_recovers_blob_means() {
    // three tight, far-apart blobs; the optimal centroids are the blob means
    let centers = [[0.0, 0.0, 0.0], [50.0, 0.0, 10.0], [0.0, 60.0, 30.0]];
    let noise = signed(90, 3, 8);
    let mut v = Array2::zeros((90, 3));
    for i in 0..90 {
        for j in 0..3 {
            v[[i, j]] = centers[i % 3][j] + noise[[i, j]];
        }
    }
    let fit = fit_kmeans(&v, 3, &FitOptions::default().with_seed(3)).unwrap();
    for blob in 0..3 {
        let mut mean = [0.0; 3];
        for i in (blob..90).step_by(3) {
            for j in 0..3 {
                mean[j] += v[[i, j]] / 30.0;
            }
        }
        let found = fit.model.centroids.rows().into_iter().any(|c| {
            (0..3).all(|j| (c[j] - mean[j]).abs() < 1e-9)
        });
        assert!(found, "blob {blob} mean {mean:?} not among centroids");
    }
    let labels_of_blob: Vec<usize> = (0..3).map(|b| fit.labels[b]).collect();
    for i in 0..90 {
        assert_eq!(fit.labels[i], labels_of_blob[i % 3]);
    }
}

#[test]
fn ordering_on_small_matrices() {
    for seed in 0..5u64 {
        let v = uniform(120, 16, 100 + seed);
        for k in [2usize, 4, 8] {
            let opts = FitOptions::default().with_seed(seed);
            let pca = fit_reducer(Method::Pca, &v, k, &opts).unwrap();
            let nmf = fit_reducer(Method::Nmf, &v, k, &opts).unwrap();
            let km = fit_reducer(Method::KMeans, &v, k, &opts).unwrap();
            let nmf_km = fit_reducer(Method::Nmf, &v, k, &opts.with_init(NmfInit::FromKmeans)).unwrap();
            let e = |m: &ncav::reducers::FittedReducer| reconstruction_error(&v, &m.model).unwrap();
            let (ep, en, ek, enk) = (e(&pca), e(&nmf), e(&km), e(&nmf_km));
            assert!(ep <= en * (1.0 + 1e-9), "pca {ep} nmf {en}");
            assert!(ep <= ek * (1.0 + 1e-9), "pca {ep} kmeans {ek}");
            assert!(enk <= ek * (1.0 + 1e-9), "nmf-from-kmeans {enk} kmeans {ek}");
        }
    }
}

#[test]
fn explainer_archive_round_trip_each_method() {
    let a = maps(4, 3, 3, 6, 21);
    let head = head(6, 3, 22);
    let probe = maps(1, 3, 3, 6, 23);
    for method in Method::ALL {
        let e = fit_explainer(&a, &head, 3, method, &FitOptions::default()).unwrap()
            .with_layer_name("layer4")
            .with_target_class(1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.npz");
        ncav::explainer::save_explainer(&e, &path).unwrap();
        let back = ncav::explainer::load_explainer(&path).unwrap();
        assert_eq!(back, e);
        assert_eq!(back.layer_name(), "layer4");
        assert_eq!(back.trained_on().class_index, Some(1));
        assert_eq!(back.position_scores(&probe).unwrap(), e.position_scores(&probe).unwrap());
        assert_eq!(back.explain_local(&probe, 2).unwrap(), e.explain_local(&probe, 2).unwrap());
        assert_eq!(std::fs::read(&path).unwrap(), e.to_bytes().unwrap());
    }
}

#[test]
fn corrupt_explainer_archive_rejected() {
    let a = maps(3, 2, 2, 4, 1);
    let e = fit_explainer(&a, &head(4, 2, 2), 2, Method::Pca, &FitOptions::default()).unwrap();
    let mut bytes = e.to_bytes().unwrap();
    let n = bytes.len();
    bytes.truncate(n / 2);
    assert!(Explainer::from_bytes(&bytes).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn nmf_objective_never_increases(seed in 0u64..10_000, rows in 5usize..40, cols in 2usize..10, k in 1usize..5) {
        let k = k.min(rows).min(cols);
        let v = uniform(rows, cols, seed);
        for init in [NmfInit::RandomUniform, NmfInit::Nndsvd] {
            let fit = fit_nmf(&v, k, &FitOptions::default().with_seed(seed).with_init(init)).unwrap();
            for w in fit.objective_trace.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-10), "{} -> {}", w[0], w[1]);
            }
            prop_assert!(fit.model.basis.iter().all(|&x| x >= 0.0));
            prop_assert!(fit.scores.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn kmeans_scores_are_one_hot(seed in 0u64..10_000, k in 1usize..6) {
        let v = uniform(30, 4, seed);
        let fit = fit_kmeans(&v, k, &FitOptions::default().with_seed(seed)).unwrap();
        let s = kmeans_transform(&uniform(17, 4, seed + 1), &fit.model).unwrap();
        for row in s.rows() {
            prop_assert_eq!(row.iter().filter(|&&x| x == 1.0).count(), 1);
            prop_assert_eq!(row.iter().filter(|&&x| x == 0.0).count(), k - 1);
        }
    }

    #[test]
    fn transform_is_row_order_invariant(seed in 0u64..10_000, perm_seed in 0u64..1000) {
        use rand::seq::SliceRandom;
        let v = uniform(30, 5, seed);
        let probe = uniform(12, 5, seed + 7);
        let mut order: Vec<usize> = (0..12).collect();
        order.shuffle(&mut rng(perm_seed));
        let permuted = probe.select(Axis(0), &order);
        for method in Method::ALL {
            let model = fit_reducer(method, &v, 3, &FitOptions::default()).unwrap().model;
            let s = model.transform(&probe).unwrap();
            let sp = model.transform(&permuted).unwrap();
            for (r, &src) in order.iter().enumerate() {
                for j in 0..3 {
                    prop_assert!((sp[[r, j]] - s[[src, j]]).abs() <= 1e-12 * s[[src, j]].abs().max(1.0));
                }
            }
        }
    }
}
