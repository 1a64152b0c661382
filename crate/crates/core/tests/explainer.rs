mod common;

use common::*;
use ncav::explainer::{
    directional_concept_weights, estimate_concept_weights_directional, fit_explainer, top_images,
    ClassifierHead, Explainer,
};
use ncav::reducers::{FitOptions, Method};
use ncav::tensor::{flatten_channels, gap, FeatureMapBatch};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

#[test]
fn decomposition_matches_loop_oracle() {
    for method in Method::ALL {
        let train = maps(5, 3, 4, 6, 3);
        let head = head(6, 4, 4);
        let e = fit_explainer(&train, &head, 3, method, &FitOptions::default()).unwrap();
        let img = maps(1, 3, 4, 6, 5);
        let exact = naive_head_scores(&img, &head);
        for k in 0..4 {
            let local = e.explain_local(&img, k).unwrap();
            assert!(rel_close(local.exact_score, exact[[0, k]], 1e-12));
            let total = local.contributions.iter().sum::<f64>() + local.residual_term + local.bias_term;
            assert!(rel_close(total, exact[[0, k]], 1e-9), "{method} class {k}");
            let approx = local.contributions.iter().sum::<f64>() + local.bias_term;
            assert!(rel_close(approx, local.approx_score, 1e-12));
            for j in 0..3 {
                assert!(rel_close(
                    local.contributions[j],
                    local.concept_scores[j] * local.concept_weights[j],
                    1e-15
                ));
            }
        }
    }
}

#[test]
fn concept_scores_are_pooled_position_scores() {
    let a = maps(3, 2, 2, 5, 9);
    let e = fit_explainer(&a, &head(5, 2, 1), 2, Method::Nmf, &FitOptions::default()).unwrap();
    let s = e.position_scores(&a).unwrap();
    let pooled = e.concept_scores(&a).unwrap();
    for i in 0..3 {
        for j in 0..2 {
            let mean = (0..4).map(|p| s[[i * 4 + p, j]]).sum::<f64>() / 4.0;
            assert!((pooled[[i, j]] - mean).abs() < 1e-12);
        }
    }
}

/// `b + g·W + γ·(g·u)²` on the pooled features `g`, for every class.
fn quadratic_head<'a>(
    head: &'a ClassifierHead,
    u: &Array1<f64>,
    gamma: f64,
) -> impl Fn(&FeatureMapBatch) -> ncav::Result<Array2<f64>> + 'a {
    let u = u.clone();
    move |a: &FeatureMapBatch| {
        let g = gap(a);
        let mut out = head.predict_pooled(&g)?;
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let t = g.row(i).dot(&u);
            row.mapv_inplace(|x| x + gamma * t * t);
        }
        Ok(out)
    }
}

#[test]
fn directional_estimate_matches_quadratic_gradient() {
    let a = maps(3, 2, 3, 4, 30);
    let head = head(4, 2, 31);
    let u = Array1::from(vec![0.5, -1.0, 2.0, 0.25]);
    let gamma = 0.7;
    let d = [0.3, 0.1, 0.0, 0.6];
    let classifier = quadratic_head(&head, &u, gamma);
    let pooled = gap(&a);
    let ud: f64 = u.iter().zip(d).map(|(x, y)| x * y).sum();
    for k in 0..2 {
        let wd: f64 = (0..4).map(|c| head.weights[[c, k]] * d[c]).sum();
        // per-image gradient along d, identical at every position
        let expected = (0..3)
            .map(|i| wd + 2.0 * gamma * pooled.row(i).dot(&u) * ud)
            .sum::<f64>()
            / 3.0;
        for eps in [1e-1, 1e-3] {
            let est = estimate_concept_weights_directional(&classifier, &d, &a, k, eps).unwrap();
            assert!(rel_close(est, expected, 1e-8), "eps {eps}: {est} vs {expected}");
        }
    }
}

#[test]
fn directional_weights_equal_linear_closed_form() {
    let a = maps(2, 3, 3, 5, 40);
    let head = head(5, 3, 41);
    let e = fit_explainer(&a, &head, 3, Method::Nmf, &FitOptions::default()).unwrap();
    let closed = e.concept_weights();
    let oracle = naive_matmul(e.reducer().basis(), &head.weights);
    for eps in [1e-1, 1e-3, 1e-6] {
        let est = directional_concept_weights(|x: &FeatureMapBatch| head.predict(x), e.reducer().basis(), &a, 3, eps)
            .unwrap();
        for ((x, y), z) in est.iter().zip(closed.iter()).zip(oracle.iter()) {
            assert!(rel_close(*x, *z, 1e-6), "eps {eps}: {x} vs {z}");
            assert!(rel_close(*y, *z, 1e-12));
        }
    }
}

#[test]
fn explain_rejects_bad_input() {
    let a = maps(2, 2, 2, 3, 1);
    let e = fit_explainer(&a, &head(3, 2, 2), 2, Method::Pca, &FitOptions::default()).unwrap();
    assert!(e.explain_local(&a, 0).is_err());
    assert!(e.explain_local(&maps(1, 2, 2, 3, 3), 2).is_err());
    assert!(e.explain_local(&maps(1, 2, 2, 4, 3), 0).is_err());
    assert!(e.select_prototypes(&a, 0, 3).is_err());
    assert!(e.select_prototypes(&a, 5, 1).is_err());
}

#[test]
fn identity_basis_reproduces_head() {
    let c = 4;
    let reducer = ncav::reducers::ReducerModel::Nmf(ncav::reducers::NmfModel {
        basis: Array2::eye(c),
        fit_iterations: 0,
        final_objective: 0.0,
        options: FitOptions::default(),
    });
    let head = head(c, 3, 7);
    let e = Explainer::new(reducer, head.clone()).unwrap();
    let img = maps(1, 3, 3, c, 8);
    let s = e.position_scores(&img).unwrap();
    assert_eq!(s, flatten_channels(&img));
    let local = e.explain_local(&img, 1).unwrap();
    assert!(local.residual_term.abs() < 1e-12);
    assert!(rel_close(local.approx_score, local.exact_score, 1e-12));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prototypes_match_sorting_oracle(values in prop::collection::vec(0u8..6, 1..20), m in 1usize..20) {
        // few distinct values so ties are common
        let n = values.len();
        let m = m.min(n);
        let scores = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { values[i] as f64 } else { 0.0 });
        let set = top_images(&scores, 0, m).unwrap();
        let mut oracle: Vec<(i64, usize)> = values.iter().enumerate().map(|(i, &v)| (-(v as i64), i)).collect();
        oracle.sort();
        let expected: Vec<usize> = oracle.iter().take(m).map(|&(_, i)| i).collect();
        prop_assert_eq!(set.image_indices, expected);
    }
}
