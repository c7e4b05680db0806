//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Smallest admissible squared pivot ratio in the Cholesky factor before a
/// system is treated as numerically singular.
const PIVOT_RATIO_TOLERANCE: f64 = 1e-13;

/// Solves `a * x = b` for symmetric positive-definite `a` via Cholesky.
pub fn solve_spd(a: DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Singular("matrix is not positive definite".into()))?;
    let l = chol.l_dirty();
    let pivots = (0..n).map(|i| l[(i, i)] * l[(i, i)]);
    let (lo, hi) = pivots.fold((f64::INFINITY, 0.0f64), |(lo, hi), p| (lo.min(p), hi.max(p)));
    if n > 0 && lo.partial_cmp(&(hi * PIVOT_RATIO_TOLERANCE)) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Singular(format!("pivot ratio {:.3e} below tolerance", lo / hi)));
    }
    Ok(chol.solve(b))
}

/// `x^T x + lambda I`.
pub fn gram_plus_ridge(x: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let mut g = x.tr_mul(x);
    for i in 0..g.nrows() {
        g[(i, i)] += lambda;
    }
    g
}

pub fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows().max(1) as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

pub fn center_columns(m: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    out
}

pub fn frobenius_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc: f64, x| acc.max(x.abs()))
}

/// Top-`k` principal directions of the rows of `data` as the orthonormal
/// columns of a `ncols x k` matrix. Each column's largest-magnitude entry is
/// positive so the basis is deterministic.
pub fn principal_basis(data: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let (n, d) = data.shape();
    if k == 0 || k > d {
        return Err(Error::Data(format!("cannot keep {k} of {d} components")));
    }
    let centered = center_columns(data, &column_means(data));
    // Work with whichever scatter matrix is smaller.
    let SymmetricEigen {
        eigenvalues: values,
        eigenvectors: vectors,
    } = if n < d {
        SymmetricEigen::new(&centered * centered.transpose())
    } else {
        SymmetricEigen::new(centered.tr_mul(&centered))
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let top = values[order[0]].max(0.0);
    let mut basis = DMatrix::zeros(d, k);
    for (slot, &idx) in order.iter().take(k).enumerate() {
        let value = values[idx];
        if value.partial_cmp(&(top * 1e-10)) != Some(std::cmp::Ordering::Greater) || top == 0.0 {
            return Err(Error::Data(format!(
                "requested {k} components but the data has rank {slot}"
            )));
        }
        let column = if n < d {
            centered.tr_mul(&vectors.column(idx)) / value.sqrt()
        } else {
            vectors.column(idx).into_owned()
        };
        basis.set_column(slot, &column);
    }
    orthonormalize(&mut basis);
    for mut col in basis.column_iter_mut() {
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
    Ok(basis)
}

/// Modified Gram-Schmidt, in place.
fn orthonormalize(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        for i in 0..j {
            let proj = m.column(i).dot(&m.column(j));
            let qi = m.column(i).into_owned();
            m.column_mut(j).axpy(-proj, &qi, 1.0);
        }
        let norm = m.column(j).norm();
        if norm > 0.0 {
            m.column_mut(j).unscale_mut(norm);
        }
    }
}
