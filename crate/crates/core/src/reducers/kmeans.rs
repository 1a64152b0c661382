//! k-means as a factorization: centroids are the concept directions and
//! each position's score row is the one-hot indicator of its nearest
//! centroid.
//!
//! Lloyd's algorithm with k-means++ seeding. Distance ties go to the lowest
//! centroid index everywhere, so fitting and transform agree.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_columns, FitOptions};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    /// `c′ × c`.
    pub centroids: Array2<f64>,
    /// Sum of squared distances from each training row to its nearest
    /// centroid, evaluated with the final centroids.
    pub inertia: f64,
    pub iterations: usize,
    pub options: FitOptions,
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub model: KMeansModel,
    pub labels: Vec<usize>,
    /// Inertia after seeding followed by one entry per Lloyd iteration.
    pub inertia_trace: Vec<f64>,
}

pub fn fit_kmeans(v: &Array2<f64>, k: usize, opts: &FitOptions) -> Result<KMeansFit> {
    opts.validate()?;
    if k < 1 {
        return Err(Error::InvalidArgument("c′ must be at least 1".into()));
    }
    let distinct = count_distinct_rows(v, k);
    if distinct < k {
        return Err(Error::InvalidArgument(format!(
            "need at least {k} distinct points for {k} clusters, found {distinct}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut centroids = kmeans_plus_plus(v, k, &mut rng);
    let (mut labels, mut dists) = assign(v, &centroids);
    let mut trace = vec![dists.iter().sum::<f64>()];
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        update_centroids(v, &labels, &mut centroids);
        let (next_labels, next_dists) = assign(v, &centroids);
        trace.push(next_dists.iter().sum());
        let stable = next_labels == labels;
        labels = next_labels;
        dists = next_dists;
        if stable {
            break;
        }
    }

    let inertia = dists.iter().sum();
    Ok(KMeansFit {
        model: KMeansModel {
            centroids,
            inertia,
            iterations,
            options: *opts,
        },
        labels,
        inertia_trace: trace,
    })
}

/// One-hot score rows for the nearest centroid of each row of `v`.
pub fn kmeans_transform(v: &Array2<f64>, model: &KMeansModel) -> Result<Array2<f64>> {
    check_columns(v, model.centroids.ncols(), "kmeans_transform")?;
    let (labels, _) = assign(v, &model.centroids);
    Ok(one_hot(&labels, model.centroids.nrows()))
}

/// `S · centroids` for one-hot `S`.
pub fn kmeans_inverse(s: &Array2<f64>, model: &KMeansModel) -> Result<Array2<f64>> {
    let k = model.centroids.nrows();
    if s.ncols() != k {
        return Err(Error::Shape(format!(
            "scores have {} columns, model has {k} centroids",
            s.ncols()
        )));
    }
    let mut out = Array2::zeros((s.nrows(), model.centroids.ncols()));
    for (r, row) in s.rows().into_iter().enumerate() {
        let ones: Vec<usize> = (0..k).filter(|&j| row[j] == 1.0).collect();
        let zeros = row.iter().filter(|&&x| x == 0.0).count();
        if ones.len() != 1 || zeros != k - 1 {
            return Err(Error::InvalidArgument(format!(
                "score row {r} is not one-hot"
            )));
        }
        out.row_mut(r).assign(&model.centroids.row(ones[0]));
    }
    Ok(out)
}

pub(crate) fn one_hot(labels: &[usize], k: usize) -> Array2<f64> {
    let mut s = Array2::zeros((labels.len(), k));
    for (r, &l) in labels.iter().enumerate() {
        s[[r, l]] = 1.0;
    }
    s
}

fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid per row (lowest index on ties) and its squared distance.
fn assign(v: &Array2<f64>, centroids: &Array2<f64>) -> (Vec<usize>, Vec<f64>) {
    v.rows()
        .into_iter()
        .map(|row| {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centroids.rows().into_iter().enumerate() {
                let d = squared_distance(row, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .unzip()
}

fn count_distinct_rows(v: &Array2<f64>, enough: usize) -> usize {
    let mut seen = HashSet::new();
    for row in v.rows() {
        // +0.0 folds -0.0 onto 0.0
        seen.insert(row.iter().map(|x| (x + 0.0).to_bits()).collect::<Vec<u64>>());
        if seen.len() >= enough {
            break;
        }
    }
    seen.len()
}

fn kmeans_plus_plus(v: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let m = v.nrows();
    let mut centroids = Array2::zeros((k, v.ncols()));
    let first = rng.random_range(0..m);
    centroids.row_mut(0).assign(&v.row(first));
    let mut nearest: Vec<f64> = v
        .rows()
        .into_iter()
        .map(|r| squared_distance(r, centroids.row(0)))
        .collect();

    for j in 1..k {
        let total: f64 = nearest.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in nearest.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            acc += d;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let pick = pick.expect("distinct points remain");
        centroids.row_mut(j).assign(&v.row(pick));
        for (i, row) in v.rows().into_iter().enumerate() {
            nearest[i] = nearest[i].min(squared_distance(row, centroids.row(j)));
        }
    }
    centroids
}

/// Replaces each centroid by the mean of its members. An empty cluster is
/// reseeded at the point farthest from its own (updated) centroid.
fn update_centroids(v: &Array2<f64>, labels: &[usize], centroids: &mut Array2<f64>) {
    let k = centroids.nrows();
    let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
    let mut counts = vec![0usize; k];
    for (row, &l) in v.rows().into_iter().zip(labels) {
        let mut acc = sums.row_mut(l);
        acc += &row;
        counts[l] += 1;
    }
    let mut empty = Vec::new();
    for (j, &count) in counts.iter().enumerate() {
        if count > 0 {
            let mean = sums.row(j).mapv(|x| x / count as f64);
            centroids.row_mut(j).assign(&mean);
        } else {
            empty.push(j);
        }
    }
    if empty.is_empty() {
        return;
    }
    let mut far: Vec<(usize, f64)> = v
        .rows()
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (row, &l))| (i, squared_distance(row, centroids.row(l))))
        .collect();
    far.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (j, (i, _)) in empty.into_iter().zip(far) {
        centroids.row_mut(j).assign(&v.row(i));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frobenius_diff;
    use crate::reducers::reconstruction_error;
    use crate::reducers::ReducerModel;
    use ndarray::array;

    fn model(centroids: Array2<f64>) -> KMeansModel {
        KMeansModel {
            centroids,
            inertia: 0.0,
            iterations: 0,
            options: FitOptions::default(),
        }
    }

    #[test]
    fn transform_examples() {
        let m = model(array![[0.0, 0.0], [10.0, 10.0]]);
        assert_eq!(kmeans_transform(&array![[9.0, 9.0]], &m).unwrap(), array![[0.0, 1.0]]);
        // equidistant: lowest index wins
        assert_eq!(kmeans_transform(&array![[5.0, 5.0]], &m).unwrap(), array![[1.0, 0.0]]);
        assert_eq!(
            kmeans_inverse(&array![[0.0, 1.0]], &m).unwrap(),
            array![[10.0, 10.0]]
        );
        assert!(kmeans_inverse(&array![[0.5, 0.5]], &m).is_err());
        assert!(kmeans_inverse(&array![[1.0, 1.0]], &m).is_err());
    }

    #[test]
    fn every_point_its_own_cluster() {
        let v = array![[0.0, 1.0], [2.0, 3.0], [5.0, 1.0], [4.0, 4.0]];
        let fit = fit_kmeans(&v, 4, &FitOptions::default()).unwrap();
        assert_eq!(fit.model.inertia, 0.0);
        let mut rows: Vec<Vec<f64>> =
            fit.model.centroids.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expected: Vec<Vec<f64>> = v.rows().into_iter().map(|r| r.to_vec()).collect();
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rows, expected);
    }

    #[test]
    fn too_few_distinct_points() {
        let v = array![[1.0, 1.0], [1.0, 1.0], [2.0, 2.0]];
        assert!(fit_kmeans(&v, 3, &FitOptions::default()).is_err());
        assert!(fit_kmeans(&v, 2, &FitOptions::default()).is_ok());
    }

    #[test]
    fn reconstruction_error_is_root_inertia() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = Array2::from_shape_simple_fn((60, 5), || rng.random::<f64>());
        let fit = fit_kmeans(&v, 6, &FitOptions::default()).unwrap();
        let err = reconstruction_error(&v, &ReducerModel::KMeans(fit.model.clone())).unwrap();
        assert!((err - fit.model.inertia.sqrt()).abs() <= 1e-12 * err.max(1.0));
    }

    #[test]
    fn reconstruction_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = Array2::from_shape_simple_fn((40, 3), || rng.random::<f64>());
        let fit = fit_kmeans(&v, 5, &FitOptions::default()).unwrap();
        let recon = kmeans_inverse(&kmeans_transform(&v, &fit.model).unwrap(), &fit.model).unwrap();
        let again =
            kmeans_inverse(&kmeans_transform(&recon, &fit.model).unwrap(), &fit.model).unwrap();
        assert_eq!(frobenius_diff(recon.view(), again.view()), 0.0);
    }

    #[test]
    fn reseeds_empty_cluster() {
        let v = array![[0.0], [0.1], [10.0], [10.1], [20.0]];
        let labels = vec![0, 0, 0, 0, 0];
        let mut centroids = array![[0.0], [100.0], [200.0]];
        update_centroids(&v, &labels, &mut centroids);
        // mean is 8.04; farthest points are 20.0 then 0.0
        assert!((centroids[[0, 0]] - 8.04).abs() < 1e-12);
        assert_eq!(centroids[[1, 0]], 20.0);
        assert_eq!(centroids[[2, 0]], 0.0);
    }
}
