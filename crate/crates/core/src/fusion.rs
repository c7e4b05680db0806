//! Multimodal embeddings: ridge regression from linguistic to perceptual
//! vectors, followed by concatenation of the L2-normalized halves.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{column_means, frobenius_sq, gram_plus_ridge, max_abs, principal_basis, solve_spd};
use crate::space::{align_vocabulary, l2_normalize, EmbeddingSpace, Modality};

/// Principal-component projection applied to ridge predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    /// `output_dim x reduce_to`, orthonormal columns.
    pub basis: DMatrix<f64>,
    /// Mean of the perceptual training rows, subtracted before projecting.
    pub mean: DVector<f64>,
}

/// A fitted linear map `x -> x^T W`, optionally followed by a projection
/// onto the leading principal components of the training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeMap {
    pub weights: DMatrix<f64>,
    pub lambda: f64,
    pub input_dim: usize,
    pub output_dim: usize,
    pub reduction: Option<Reduction>,
    /// `||XW - Y||_F^2` on the training data.
    pub train_residual: f64,
    pub n_train: usize,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Data(format!(
            "lambda must be a finite non-negative number, got {lambda}"
        )));
    }
    Ok(())
}

/// Closed-form ridge regression: `W = (X^T X + lambda I)^-1 X^T Y`.
pub fn ridge_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<RidgeMap> {
    check_lambda(lambda)?;
    let (n, d_in) = x.shape();
    if n == 0 {
        return Err(Error::Data("ridge regression needs at least one row".into()));
    }
    if y.nrows() != n {
        return Err(Error::Dimension {
            expected: n,
            found: y.nrows(),
        });
    }
    if lambda == 0.0 && d_in > n {
        return Err(Error::Singular(format!(
            "{d_in} inputs but only {n} rows; lambda must be positive"
        )));
    }
    let weights = solve_spd(gram_plus_ridge(x, lambda), &x.tr_mul(y))?;
    let train_residual = frobenius_sq(&(x * &weights - y));
    Ok(RidgeMap {
        weights,
        lambda,
        input_dim: d_in,
        output_dim: y.ncols(),
        reduction: None,
        train_residual,
        n_train: n,
    })
}

/// Ridge fit whose predictions are projected onto the top `reduce_to`
/// principal components of `y`.
pub fn ridge_fit_reduced(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64, reduce_to: usize) -> Result<RidgeMap> {
    let mut map = ridge_fit(x, y, lambda)?;
    map.reduction = Some(Reduction {
        basis: principal_basis(y, reduce_to)?,
        mean: column_means(y),
    });
    Ok(map)
}

impl RidgeMap {
    /// Width of the vectors returned by [`predict`](Self::predict).
    pub fn predicted_dim(&self) -> usize {
        self.reduction.as_ref().map_or(self.output_dim, |r| r.basis.ncols())
    }

    pub fn reduce_to(&self) -> Option<usize> {
        self.reduction.as_ref().map(|r| r.basis.ncols())
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        let x = DVector::from_column_slice(x);
        let y = self.weights.tr_mul(&x);
        let out = match &self.reduction {
            None => y,
            Some(r) => r.basis.tr_mul(&(y - &r.mean)),
        };
        Ok(out.iter().copied().collect())
    }

    /// `max |(X^T X + lambda I) W - X^T Y|` for checking the normal equations.
    pub fn normal_equation_residual(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        max_abs(&(gram_plus_ridge(x, self.lambda) * &self.weights - x.tr_mul(y)))
    }

    pub fn header(&self) -> RidgeHeader {
        RidgeHeader {
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            lambda: self.lambda,
            reduce_to: self.reduce_to(),
            reduction_mean: self.reduction.as_ref().map(|r| r.mean.iter().copied().collect()),
            train_residual: self.train_residual,
            n_train: self.n_train,
        }
    }

    pub fn from_parts(header: RidgeHeader, weights: DMatrix<f64>, basis: Option<DMatrix<f64>>) -> Result<Self> {
        if weights.shape() != (header.input_dim, header.output_dim) {
            return Err(Error::Data(format!(
                "weights are {:?}, header declares {}x{}",
                weights.shape(),
                header.input_dim,
                header.output_dim
            )));
        }
        let reduction = match (header.reduce_to, basis, header.reduction_mean) {
            (None, None, None) => None,
            (Some(k), Some(basis), Some(mean))
                if basis.shape() == (header.output_dim, k) && mean.len() == header.output_dim =>
            {
                Some(Reduction {
                    basis,
                    mean: DVector::from_vec(mean),
                })
            }
            _ => return Err(Error::Data("inconsistent reduction metadata".into())),
        };
        Ok(RidgeMap {
            weights,
            lambda: header.lambda,
            input_dim: header.input_dim,
            output_dim: header.output_dim,
            reduction,
            train_residual: header.train_residual,
            n_train: header.n_train,
        })
    }
}

pub fn ridge_predict(map: &RidgeMap, x: &[f64]) -> Result<Vec<f64>> {
    map.predict(x)
}

/// JSON metadata stored next to the CSV weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeHeader {
    pub input_dim: usize,
    pub output_dim: usize,
    pub lambda: f64,
    pub reduce_to: Option<usize>,
    pub reduction_mean: Option<Vec<f64>>,
    pub train_residual: f64,
    pub n_train: usize,
}

/// Training and held-out residuals for a grid of penalties.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaSweepRow {
    pub lambda: f64,
    pub train_residual: f64,
    pub heldout_residual: f64,
}

pub fn lambda_sweep(
    x_train: &DMatrix<f64>,
    y_train: &DMatrix<f64>,
    x_heldout: &DMatrix<f64>,
    y_heldout: &DMatrix<f64>,
    grid: &[f64],
) -> Result<Vec<LambdaSweepRow>> {
    grid.iter()
        .map(|&lambda| {
            let map = ridge_fit(x_train, y_train, lambda)?;
            Ok(LambdaSweepRow {
                lambda,
                train_residual: map.train_residual,
                heldout_residual: frobenius_sq(&(x_heldout * &map.weights - y_heldout)),
            })
        })
        .collect()
}

/// For every shared token, `[a_t / |a_t|, b_t / |b_t|]`.
pub fn concat_fuse(a: &EmbeddingSpace, b: &EmbeddingSpace) -> Result<EmbeddingSpace> {
    let shared = align_vocabulary(&[a, b])?;
    let rows = shared
        .par_iter()
        .map(|token| {
            let left = l2_normalize(a.vector(token)?)
                .map_err(|_| Error::normalization(format!("`{token}` in {} space", a.modality())))?;
            let right = l2_normalize(b.vector(token)?)
                .map_err(|_| Error::normalization(format!("`{token}` in {} space", b.modality())))?;
            Ok((token.as_str(), [left, right].concat()))
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSpace::from_entries(Modality::Fused, a.dim() + b.dim(), rows)
}

/// Fits ridge on the shared vocabulary, predicts perceptual vectors for the
/// whole linguistic vocabulary and fuses them with the linguistic vectors.
pub fn build_ridge_multimodal(
    ling: &EmbeddingSpace,
    perc: &EmbeddingSpace,
    lambda: f64,
    reduce_to: Option<usize>,
) -> Result<(EmbeddingSpace, RidgeMap)> {
    let shared = align_vocabulary(&[ling, perc])?;
    if shared.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 shared training tokens, found {}",
            shared.len()
        )));
    }
    let x = ling.matrix(&shared)?;
    let y = perc.matrix(&shared)?;
    let map = match reduce_to {
        Some(k) => ridge_fit_reduced(&x, &y, lambda, k)?,
        None => ridge_fit(&x, &y, lambda)?,
    };
    let predicted = predict_space(&map, ling, perc.modality())?;
    let fused = concat_fuse(ling, &predicted)?;
    Ok((fused, map))
}

/// Applies a ridge map to every vector of `space`.
pub fn predict_space(map: &RidgeMap, space: &EmbeddingSpace, modality: Modality) -> Result<EmbeddingSpace> {
    let entries: Vec<(&str, &[f64])> = space.iter().collect();
    let rows = entries
        .par_iter()
        .map(|(token, v)| Ok((*token, map.predict(v)?)))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSpace::from_entries(modality, map.predicted_dim(), rows)
}
