//! Principal component analysis via the SVD of the column-centered matrix.

use ndarray::{Array1, Array2, Axis};

use super::{check_columns, check_concept_count};
use crate::error::{Error, Result};
use crate::linalg::{frobenius_diff, thin_svd};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    /// Column means of the training matrix, length `c`.
    pub mean: Array1<f64>,
    /// `c′ × c` with orthonormal rows, ordered by decreasing variance.
    pub components: Array2<f64>,
    /// Variance along each component, non-increasing.
    pub explained_variance: Array1<f64>,
    /// Training reconstruction error `‖V − V̂‖_F`.
    pub fit_objective: f64,
}

/// Fits the top-`c′` principal subspace and returns the training scores.
pub fn fit_pca(v: &Array2<f64>, n_concepts: usize) -> Result<(PcaModel, Array2<f64>)> {
    check_concept_count(v, n_concepts)?;
    let m = v.nrows();
    let mean = v
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::Shape("empty matrix".into()))?;
    let centered = v - &mean;
    let svd = thin_svd(centered.view())?;

    let mut components = svd.vt.slice(ndarray::s![..n_concepts, ..]).to_owned();
    // fix each component's sign so its largest-magnitude entry is positive
    for mut row in components.rows_mut() {
        let pivot = row
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            row.mapv_inplace(|x| -x);
        }
    }
    let denom = (m.max(2) - 1) as f64;
    let explained_variance = svd
        .singular_values
        .slice(ndarray::s![..n_concepts])
        .mapv(|s| s * s / denom);

    let scores = centered.dot(&components.t());
    let recon = scores.dot(&components) + &mean;
    let fit_objective = frobenius_diff(v.view(), recon.view());
    Ok((
        PcaModel {
            mean,
            components,
            explained_variance,
            fit_objective,
        },
        scores,
    ))
}

/// `(V − mean) · componentsᵀ`.
pub fn pca_transform(v: &Array2<f64>, model: &PcaModel) -> Result<Array2<f64>> {
    check_columns(v, model.mean.len(), "pca_transform")?;
    Ok((v - &model.mean).dot(&model.components.t()))
}

/// `S · components + mean`.
pub fn pca_inverse(s: &Array2<f64>, model: &PcaModel) -> Result<Array2<f64>> {
    if s.ncols() != model.components.nrows() {
        return Err(Error::Shape(format!(
            "scores have {} columns, model has {} components",
            s.ncols(),
            model.components.nrows()
        )));
    }
    Ok(s.dot(&model.components) + &model.mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn rank_one_centered_data() {
        let v = array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        let (model, s) = fit_pca(&v, 1).unwrap();
        let recon = pca_inverse(&s, &model).unwrap();
        assert!(frobenius_diff(v.view(), recon.view()) < 1e-12);
        assert_eq!(model.mean, array![2.0, 2.0]);
    }

    #[test]
    fn components_orthonormal_variance_sorted() {
        let v = random(50, 7, 1);
        let (model, _) = fit_pca(&v, 5).unwrap();
        let gram = model.components.dot(&model.components.t());
        for i in 0..5 {
            for j in 0..5 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - expected).abs() < 1e-8);
            }
        }
        let ev = &model.explained_variance;
        assert!(ev.windows(2).into_iter().all(|w| w[0] >= w[1]));
    }

    #[test]
    fn subspace_fixed_point_and_zero_scores() {
        let v = random(30, 6, 2);
        let (model, _) = fit_pca(&v, 3).unwrap();
        let inside = pca_inverse(&pca_transform(&v, &model).unwrap(), &model).unwrap();
        let again = pca_inverse(&pca_transform(&inside, &model).unwrap(), &model).unwrap();
        assert!(frobenius_diff(inside.view(), again.view()) < 1e-10);

        let zero = pca_inverse(&Array2::zeros((2, 3)), &model).unwrap();
        for row in zero.rows() {
            assert_eq!(row, model.mean);
        }
    }

    #[test]
    fn dimension_checks() {
        let v = random(10, 4, 3);
        let (model, _) = fit_pca(&v, 2).unwrap();
        assert!(pca_transform(&random(3, 5, 4), &model).is_err());
        assert!(pca_inverse(&Array2::zeros((3, 3)), &model).is_err());
        assert!(fit_pca(&v, 5).is_err());
    }

    #[test]
    fn error_shrinks_with_more_components() {
        let v = random(40, 8, 5);
        let errors: Vec<f64> = (1..=8).map(|k| fit_pca(&v, k).unwrap().0.fit_objective).collect();
        assert!(errors.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(errors[7] < 1e-10);
    }
}
