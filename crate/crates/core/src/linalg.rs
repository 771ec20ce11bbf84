//! Small dense linear-algebra helpers built on `nalgebra`.
//!
//! Everything here targets the matrix sizes this crate deals with (a few
//! dozen states at most), so clarity wins over asymptotic cost.

use nalgebra::{DMatrix, DVector, Schur, SVD};

use crate::error::{Error, Result};

const SCHUR_MAX_ITER: usize = 100_000;

/// Diagonal similarity scaling (powers of two) that equalizes row and column
/// norms. Returns the balanced matrix and the scaling `d` with
/// `balanced = D^-1 * a * D`.
pub(crate) fn balance(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = a.nrows();
    let mut b = a.clone();
    let mut d = DVector::from_element(n, 1.0);
    let radix = 2.0_f64;
    let mut converged = false;
    while !converged {
        converged = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += b[(j, i)].abs();
                    r += b[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut cc = c;
            let g = r / radix;
            while cc < g {
                f *= radix;
                cc *= radix * radix;
            }
            let g = r * radix;
            while cc > g {
                f /= radix;
                cc /= radix * radix;
            }
            if (cc + r / f) / f < 0.95 * s {
                converged = false;
                d[i] *= f;
                for j in 0..n {
                    b[(i, j)] /= f;
                    b[(j, i)] *= f;
                }
            }
        }
    }
    (b, d)
}

/// Eigenvalues of a general real matrix as `(re, im)` pairs.
pub(crate) fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    let (balanced, _) = balance(a);
    let schur = Schur::try_new(balanced, f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or_else(|| Error::Convergence("Schur decomposition".into()))?;
    Ok(schur.complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect())
}

/// Spectral radius from the eigenvalues.
pub(crate) fn spectral_radius(eigs: &[(f64, f64)]) -> f64 {
    eigs.iter().map(|&(re, im)| re.hypot(im)).fold(0.0, f64::max)
}

/// Eigenvalues that must be real, with imaginary parts below
/// `rel_imag_tol * spectral_radius` truncated. Sorted ascending.
pub(crate) fn real_eigenvalues(a: &DMatrix<f64>, rel_imag_tol: f64) -> Result<(Vec<f64>, f64)> {
    let eigs = eigenvalues(a)?;
    let rho = spectral_radius(&eigs);
    let mut out = Vec::with_capacity(eigs.len());
    for (re, im) in eigs {
        if im.abs() > rel_imag_tol * rho {
            return Err(Error::NonRealSpectrum { re, im });
        }
        out.push(re);
    }
    out.sort_by(f64::total_cmp);
    Ok((out, rho))
}

/// The `k` right singular vectors of `a - z I` with the smallest singular
/// values, together with those singular values.
pub(crate) fn null_vectors(a: &DMatrix<f64>, z: f64, k: usize) -> (Vec<DVector<f64>>, Vec<f64>) {
    let n = a.nrows();
    let shifted = a - DMatrix::identity(n, n) * z;
    let svd = SVD::new(shifted, false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    order
        .into_iter()
        .take(k)
        .map(|i| (v_t.row(i).transpose(), svd.singular_values[i]))
        .unzip()
}

/// Infinity norm (max absolute row sum).
pub(crate) fn norm_inf(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Outcome of a Perron root computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerronRoot {
    pub value: f64,
    pub iterations: usize,
    /// True when power iteration did not converge and the dense eigensolver
    /// supplied the value.
    pub used_fallback: bool,
}

/// Perron-Frobenius eigenvalue of an entrywise nonnegative irreducible matrix.
///
/// Power iteration with Collatz-Wielandt bounds: for a positive vector `v`,
/// `min_i (Mv)_i / v_i <= rho <= max_i (Mv)_i / v_i`, so the gap between the
/// two is a certified error bar. Falls back to the dense eigensolver after
/// `max_iter` iterations.
pub fn perron_root(m: &DMatrix<f64>, rel_tol: f64, max_iter: usize) -> Result<PerronRoot> {
    let n = m.nrows();
    let mut v = DVector::from_element(n, 1.0 / n as f64);
    let mut w = DVector::zeros(n);
    let mut last_bounds = (0.0, f64::INFINITY);
    for it in 1..=max_iter {
        m.mul_to(&v, &mut w);
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for i in 0..n {
            let ratio = w[i] / v[i];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        last_bounds = (lo, hi);
        if !(hi.is_finite() && lo > 0.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if hi - lo <= rel_tol * mid {
            return Ok(PerronRoot {
                value: mid,
                iterations: it,
                used_fallback: false,
            });
        }
        let s = w.sum();
        v.copy_from(&w);
        v /= s;
    }
    let eigs = eigenvalues(m)?;
    let value = eigs
        .iter()
        .filter(|(_, im)| im.abs() <= 1e-9 * (1.0 + spectral_radius(&eigs)))
        .map(|&(re, _)| re)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::Convergence(format!(
            "Perron root: power iteration stalled after {max_iter} iterations with bounds [{:e}, {:e}] and the dense fallback found no positive real eigenvalue",
            last_bounds.0, last_bounds.1
        )));
    }
    Ok(PerronRoot {
        value,
        iterations: max_iter,
        used_fallback: true,
    })
}
