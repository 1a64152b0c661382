//! Non-negative matrix factorization `V ≈ S P` under the Frobenius
//! objective, fitted with Lee–Seung multiplicative updates.
//!
//! The rows of `P` are the non-negative concept activation vectors; `S`
//! holds the per-position concept scores. New data is projected onto a
//! fixed `P` by solving the non-negative least-squares problem row by row.

use ndarray::{Array2, ArrayView1, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    check_columns, check_concept_count, check_non_negative, kmeans, FitOptions, NmfInit,
};
use crate::error::{Error, Result};
use crate::linalg::{frobenius_diff, solve_pinv, solve_spd, thin_svd};

/// Guards multiplicative-update denominators against division by zero.
pub const UPDATE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct NmfModel {
    /// `c′ × c`, every entry non-negative.
    pub basis: Array2<f64>,
    pub fit_iterations: usize,
    /// `‖V − S P‖_F` at the end of fitting.
    pub final_objective: f64,
    pub options: FitOptions,
}

#[derive(Debug, Clone)]
pub struct NmfFit {
    pub model: NmfModel,
    /// `m × c′` training scores.
    pub scores: Array2<f64>,
    /// Objective after initialization followed by one entry per iteration.
    pub objective_trace: Vec<f64>,
}

/// Fits `V ≈ S P` with `c′ = n_concepts`.
pub fn fit_nmf(v: &Array2<f64>, n_concepts: usize, opts: &FitOptions) -> Result<NmfFit> {
    opts.validate()?;
    check_non_negative(v)?;
    check_concept_count(v, n_concepts)?;

    let (mut s, mut p) = initialize(v, n_concepts, opts)?;
    let mut objective = frobenius_diff(v.view(), s.dot(&p).view());
    let mut trace = vec![objective];
    let mut iterations = 0;

    while iterations < opts.max_iterations && objective > 0.0 {
        // P ← P ∘ (SᵀV) ⊘ (SᵀS P)
        let st = s.t();
        let numer = st.dot(v);
        let denom = st.dot(&s).dot(&p);
        multiplicative_step(&mut p, &numer, &denom);

        // S ← S ∘ (V Pᵀ) ⊘ (S P Pᵀ)
        let numer = v.dot(&p.t());
        let denom = s.dot(&p.dot(&p.t()));
        multiplicative_step(&mut s, &numer, &denom);

        iterations += 1;
        let next = frobenius_diff(v.view(), s.dot(&p).view());
        trace.push(next);
        let change = (objective - next) / objective;
        objective = next;
        if change < opts.tolerance {
            break;
        }
    }

    if let Some(row) = p.rows().into_iter().position(|r| r.iter().all(|&x| x == 0.0)) {
        return Err(Error::DegenerateConcept(row));
    }

    Ok(NmfFit {
        model: NmfModel {
            basis: p,
            fit_iterations: iterations,
            final_objective: objective,
            options: *opts,
        },
        scores: s,
        objective_trace: trace,
    })
}

fn multiplicative_step(x: &mut Array2<f64>, numer: &Array2<f64>, denom: &Array2<f64>) {
    Zip::from(x).and(numer).and(denom).for_each(|x, &n, &d| {
        *x *= n / (d + UPDATE_EPSILON);
    });
}

fn initialize(
    v: &Array2<f64>,
    k: usize,
    opts: &FitOptions,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (m, c) = v.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    match opts.init {
        NmfInit::RandomUniform => {
            let mean = v.mean().unwrap_or(0.0);
            let scale = (mean / k as f64).sqrt();
            let s = Array2::from_shape_simple_fn((m, k), || scale * rng.random::<f64>());
            let p = Array2::from_shape_simple_fn((k, c), || scale * rng.random::<f64>());
            Ok((s, p))
        }
        NmfInit::Nndsvd => nndsvd_ar(v, k, &mut rng),
        NmfInit::FromKmeans => {
            let fit = kmeans::fit_kmeans(v, k, opts)?;
            Ok((kmeans::one_hot(&fit.labels, k), fit.model.centroids))
        }
    }
}

/// NNDSVD (Boutsidis & Gallopoulos) with zero entries replaced by uniform
/// values in `[0, mean(V)/100)`.
fn nndsvd_ar(v: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Result<(Array2<f64>, Array2<f64>)> {
    let (m, c) = v.dim();
    let svd = thin_svd(v.view())?;
    let mut s = Array2::zeros((m, k));
    let mut p = Array2::zeros((k, c));

    for j in 0..k {
        let sigma = svd.singular_values[j];
        let x = svd.u.column(j);
        let y = svd.vt.row(j);
        if j == 0 {
            let root = sigma.sqrt();
            s.column_mut(0).assign(&x.mapv(|e| root * e.abs()));
            p.row_mut(0).assign(&y.mapv(|e| root * e.abs()));
            continue;
        }
        let (xp, xn) = split_signs(x);
        let (yp, yn) = split_signs(y);
        let (nxp, nyp) = (norm(&xp), norm(&yp));
        let (nxn, nyn) = (norm(&xn), norm(&yn));
        let (mp, mn) = (nxp * nyp, nxn * nyn);
        let (u, w, mass, nu, nw) = if mp > mn {
            (xp, yp, mp, nxp, nyp)
        } else {
            (xn, yn, mn, nxn, nyn)
        };
        if mass == 0.0 {
            continue;
        }
        let lambda = (sigma * mass).sqrt();
        s.column_mut(j).assign(&u.mapv(|e| lambda * e / nu));
        p.row_mut(j).assign(&w.mapv(|e| lambda * e / nw));
    }

    let fill = v.mean().unwrap_or(0.0) / 100.0;
    for x in s.iter_mut().chain(p.iter_mut()) {
        if *x <= 0.0 {
            *x = fill * rng.random::<f64>();
        }
    }
    Ok((s, p))
}

fn split_signs(x: ArrayView1<'_, f64>) -> (ndarray::Array1<f64>, ndarray::Array1<f64>) {
    (x.mapv(|e| e.max(0.0)), x.mapv(|e| (-e).max(0.0)))
}

fn norm(x: &ndarray::Array1<f64>) -> f64 {
    x.dot(x).sqrt()
}

/// Scores for new data against a fixed basis: each row of the result is the
/// non-negative least-squares solution of `min ‖v − s P‖` over `s ≥ 0`.
///
/// `opts.max_iterations` bounds the active-set iterations per row.
pub fn nmf_transform(v: &Array2<f64>, basis: &Array2<f64>, opts: &FitOptions) -> Result<Array2<f64>> {
    check_columns(v, basis.ncols(), "nmf_transform")?;
    check_non_negative(v)?;
    let k = basis.nrows();
    let gram = basis.dot(&basis.t());
    let projected = v.dot(&basis.t());
    let max_iter = opts.max_iterations + 3 * k;

    let rows: Vec<Result<Vec<f64>>> = (0..projected.nrows())
        .into_par_iter()
        .map(|i| {
            let q = projected.row(i);
            nnls_gram(&gram, q.as_slice().expect("row-major"), max_iter)
        })
        .collect();

    let mut s = Array2::zeros((v.nrows(), k));
    for (i, row) in rows.into_iter().enumerate() {
        s.row_mut(i).assign(&ndarray::Array1::from(row?));
    }
    Ok(s)
}

/// `S P`.
pub fn nmf_inverse(s: &Array2<f64>, basis: &Array2<f64>) -> Result<Array2<f64>> {
    if s.ncols() != basis.nrows() {
        return Err(Error::Shape(format!(
            "scores have {} columns, basis has {} rows",
            s.ncols(),
            basis.nrows()
        )));
    }
    Ok(s.dot(basis))
}

/// Lawson–Hanson active-set NNLS in normal-equation form: minimizes
/// `½ xᵀ G x − qᵀ x` over `x ≥ 0`, where `G = P Pᵀ` and `q = P v`.
pub(crate) fn nnls_gram(g: &Array2<f64>, q: &[f64], max_iter: usize) -> Result<Vec<f64>> {
    let k = q.len();
    let mut x = vec![0.0; k];
    let mut passive = vec![false; k];
    let mut rejected = vec![false; k];
    let scale = q.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if scale == 0.0 {
        return Ok(x);
    }
    let tol = 1e-12 * scale * k as f64;

    let gradient = |x: &[f64]| -> Vec<f64> {
        (0..k)
            .map(|i| q[i] - (0..k).map(|j| g[[i, j]] * x[j]).sum::<f64>())
            .collect()
    };

    let mut w = gradient(&x);
    let mut iterations = 0;
    'outer: loop {
        let candidate = (0..k)
            .filter(|&j| !passive[j] && !rejected[j] && w[j] > tol)
            .max_by(|&a, &b| w[a].total_cmp(&w[b]).then(b.cmp(&a)));
        let Some(j) = candidate else { break };
        passive[j] = true;

        let mut first = true;
        loop {
            iterations += 1;
            if iterations > max_iter {
                break 'outer;
            }
            let z = solve_passive(g, q, &passive)?;
            if first && z[j] <= 0.0 {
                // the entering variable cannot become positive: numerically
                // degenerate, leave x unchanged and try the next candidate
                passive[j] = false;
                rejected[j] = true;
                continue 'outer;
            }
            first = false;
            if (0..k).filter(|&i| passive[i]).all(|i| z[i] > 0.0) {
                x = z;
                break;
            }
            // step from x towards z until the first passive variable hits zero
            let (mut alpha, mut blocking) = (f64::INFINITY, j);
            for i in (0..k).filter(|&i| passive[i] && z[i] <= 0.0) {
                let ratio = x[i] / (x[i] - z[i]);
                if ratio < alpha {
                    alpha = ratio;
                    blocking = i;
                }
            }
            for i in 0..k {
                if passive[i] {
                    x[i] += alpha * (z[i] - x[i]);
                }
            }
            x[blocking] = 0.0;
            passive[blocking] = false;
            for i in 0..k {
                if passive[i] && x[i] <= 0.0 {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
        }
        w = gradient(&x);
        rejected.iter_mut().for_each(|r| *r = false);
    }
    Ok(x)
}

fn solve_passive(g: &Array2<f64>, q: &[f64], passive: &[bool]) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..q.len()).filter(|&i| passive[i]).collect();
    let sub = Array2::from_shape_fn((idx.len(), idx.len()), |(a, b)| g[[idx[a], idx[b]]]);
    let rhs: Vec<f64> = idx.iter().map(|&i| q[i]).collect();
    let sol = match solve_spd(&sub, &rhs) {
        Some(s) => s,
        None => solve_pinv(&sub, &rhs)?,
    };
    let mut z = vec![0.0; q.len()];
    for (a, &i) in idx.iter().enumerate() {
        z[i] = sol[a];
    }
    Ok(z)
}
