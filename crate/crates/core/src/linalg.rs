//! Small dense linear-algebra helpers shared by the reducers.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Thin SVD `X = U Σ Vᵀ` with singular values sorted in descending order.
pub struct Svd {
    pub u: Array2<f64>,
    pub singular_values: Array1<f64>,
    pub vt: Array2<f64>,
}

pub fn to_dmatrix(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

pub fn thin_svd(a: ArrayView2<'_, f64>) -> Result<Svd> {
    let svd = nalgebra::linalg::SVD::try_new(to_dmatrix(a), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let sv = svd.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]).then(i.cmp(&j)));

    let m = u.nrows();
    let c = vt.ncols();
    let k = order.len();
    let mut u_sorted = Array2::zeros((m, k));
    let mut vt_sorted = Array2::zeros((k, c));
    let mut s_sorted = Array1::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        s_sorted[dst] = sv[src];
        for i in 0..m {
            u_sorted[[i, dst]] = u[(i, src)];
        }
        for j in 0..c {
            vt_sorted[[dst, j]] = vt[(src, j)];
        }
    }
    Ok(Svd {
        u: u_sorted,
        singular_values: s_sorted,
        vt: vt_sorted,
    })
}

/// Solves `A x = b` for symmetric positive-definite `A` by Cholesky
/// factorization. Returns `None` when `A` is not numerically positive
/// definite.
pub fn solve_spd(a: &Array2<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = Array2::<f64>::zeros((n, n));
    let scale = (0..n).map(|i| a[[i, i]].abs()).fold(0.0, f64::max);
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if d <= scale * 1e-13 || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    Some(x)
}

/// Minimum-norm least-squares solve through the pseudo-inverse.
pub fn solve_pinv(a: &Array2<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let m = to_dmatrix(a.view());
    let rhs = nalgebra::DVector::from_column_slice(b);
    let svd = m.svd(true, true);
    let tol = svd.singular_values.max() * 1e-12 * b.len().max(1) as f64;
    let x = svd
        .solve(&rhs, tol)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(x.iter().copied().collect())
}

/// Frobenius norm of `a - b`.
pub fn frobenius_diff(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn frobenius(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}
