//! Affine map from a distributed embedding space into the brain-based
//! attribute space, fitted by regularized least squares on normalized
//! embeddings.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{center_columns, column_means, gram_plus_ridge, solve_spd};
use crate::space::{
    align_vocabulary, l2_normalize, BrainSemanticSpace, EmbeddingSpace, PropertySchema, MAX_RATING, MIN_RATING,
};

pub const DEFAULT_TRAIN_FRAC: f64 = 0.9;

/// Penalties tried by [`tune_brain_map`], ascending.
pub const LAMBDA_GRID: [f64; 7] = [0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0];

pub const MIN_ALIGNED_TOKENS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct BrainMap {
    /// `d_emb x d_attr`.
    pub weights: DMatrix<f64>,
    pub bias: Vec<f64>,
    pub lambda: f64,
    pub seed: u64,
    pub train_frac: f64,
    pub train_tokens: Vec<String>,
    pub dev_tokens: Vec<String>,
    pub train_mse: f64,
    pub dev_mse: f64,
    pub schema: PropertySchema,
}

/// JSON metadata stored next to the CSV weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrainMapHeader {
    pub lambda: f64,
    pub seed: u64,
    pub train_frac: f64,
    pub embedding_dim: usize,
    pub attribute_dim: usize,
    pub train_tokens: Vec<String>,
    pub dev_tokens: Vec<String>,
    pub train_mse: f64,
    pub dev_mse: f64,
    pub bias: Vec<f64>,
    pub schema: PropertySchema,
}

/// Shuffles `tokens` with `seed` and splits off a training share.
/// Both halves are returned sorted.
pub fn split_tokens(tokens: &[String], train_frac: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Data(format!(
            "train fraction must be in (0, 1), got {train_frac}"
        )));
    }
    if tokens.len() < 2 {
        return Err(Error::Data("need at least two tokens to split".into()));
    }
    let mut shuffled = tokens.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((tokens.len() as f64 * train_frac).round() as usize).clamp(1, tokens.len() - 1);
    let mut dev = shuffled.split_off(n_train);
    shuffled.sort();
    dev.sort();
    Ok((shuffled, dev))
}

fn normalized_rows(emb: &EmbeddingSpace, tokens: &[String]) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(tokens.len(), emb.dim());
    for (i, t) in tokens.iter().enumerate() {
        let v = l2_normalize(emb.vector(t)?).map_err(|_| Error::normalization(format!("embedding of `{t}`")))?;
        for (j, x) in v.into_iter().enumerate() {
            m[(i, j)] = x;
        }
    }
    Ok(m)
}

fn rating_rows(brain: &BrainSemanticSpace, tokens: &[String]) -> Result<DMatrix<f64>> {
    let d = brain.schema().attribute_count();
    let mut m = DMatrix::zeros(tokens.len(), d);
    for (i, t) in tokens.iter().enumerate() {
        for (j, x) in brain.ratings(t)?.iter().enumerate() {
            m[(i, j)] = *x;
        }
    }
    Ok(m)
}

/// Minimizes `||XW + 1 b^T - Y||^2 + lambda ||W||^2`; the bias is not
/// penalized, so centering both sides reduces it to plain ridge.
pub fn fit_affine(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Data(format!(
            "lambda must be finite and non-negative, got {lambda}"
        )));
    }
    let (x_mean, y_mean) = (column_means(x), column_means(y));
    let (xc, yc) = (center_columns(x, &x_mean), center_columns(y, &y_mean));
    let weights = solve_spd(gram_plus_ridge(&xc, lambda), &xc.tr_mul(&yc))?;
    let bias = y_mean - weights.tr_mul(&x_mean);
    Ok((weights, bias))
}

fn mse(x: &DMatrix<f64>, y: &DMatrix<f64>, weights: &DMatrix<f64>, bias: &DVector<f64>) -> f64 {
    let mut pred = x * weights;
    for mut row in pred.row_iter_mut() {
        row += bias.transpose();
    }
    let n = (y.nrows() * y.ncols()).max(1) as f64;
    (pred - y).iter().map(|e| e * e).sum::<f64>() / n
}

fn aligned(emb: &EmbeddingSpace, brain: &BrainSemanticSpace) -> Result<Vec<String>> {
    let tokens = align_vocabulary(&[emb, brain])?;
    if tokens.len() < MIN_ALIGNED_TOKENS {
        return Err(Error::Data(format!(
            "need at least {MIN_ALIGNED_TOKENS} words shared by embeddings and brain ratings, found {}",
            tokens.len()
        )));
    }
    Ok(tokens)
}

/// Fits a map on a seeded random training share of the shared vocabulary
/// and reports the error on the held-out words.
pub fn fit_brain_map(
    emb: &EmbeddingSpace,
    brain: &BrainSemanticSpace,
    train_frac: f64,
    lambda: f64,
    seed: u64,
) -> Result<BrainMap> {
    let tokens = aligned(emb, brain)?;
    let (train_tokens, dev_tokens) = split_tokens(&tokens, train_frac, seed)?;
    let (x, y) = (normalized_rows(emb, &train_tokens)?, rating_rows(brain, &train_tokens)?);
    let (weights, bias) = fit_affine(&x, &y, lambda)?;
    let train_mse = mse(&x, &y, &weights, &bias);
    let dev_mse = mse(
        &normalized_rows(emb, &dev_tokens)?,
        &rating_rows(brain, &dev_tokens)?,
        &weights,
        &bias,
    );
    Ok(BrainMap {
        weights,
        bias: bias.iter().copied().collect(),
        lambda,
        seed,
        train_frac,
        train_tokens,
        dev_tokens,
        train_mse,
        dev_mse,
        schema: brain.schema().clone(),
    })
}

/// Outcome of one grid point during tuning.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub lambda: f64,
    /// `None` when the system was singular at this penalty.
    pub dev_mse: Option<f64>,
}

/// Fits one map per penalty in `grid` and keeps the one with the lowest
/// held-out error; exact ties go to the larger penalty.
pub fn tune_brain_map(
    emb: &EmbeddingSpace,
    brain: &BrainSemanticSpace,
    train_frac: f64,
    grid: &[f64],
    seed: u64,
) -> Result<(BrainMap, Vec<GridPoint>)> {
    let mut best: Option<BrainMap> = None;
    let mut points = Vec::with_capacity(grid.len());
    for &lambda in grid {
        match fit_brain_map(emb, brain, train_frac, lambda, seed) {
            Ok(map) => {
                points.push(GridPoint {
                    lambda,
                    dev_mse: Some(map.dev_mse),
                });
                let better = best
                    .as_ref()
                    .is_none_or(|b| map.dev_mse < b.dev_mse || (map.dev_mse == b.dev_mse && lambda > b.lambda));
                if better {
                    best = Some(map);
                }
            }
            Err(Error::Singular(_)) => points.push(GridPoint { lambda, dev_mse: None }),
            Err(e) => return Err(e),
        }
    }
    let best = best.ok_or_else(|| Error::Singular("every grid penalty gave a singular system".into()))?;
    Ok((best, points))
}

impl BrainMap {
    pub fn embedding_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn attribute_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn header(&self) -> BrainMapHeader {
        BrainMapHeader {
            lambda: self.lambda,
            seed: self.seed,
            train_frac: self.train_frac,
            embedding_dim: self.embedding_dim(),
            attribute_dim: self.attribute_dim(),
            train_tokens: self.train_tokens.clone(),
            dev_tokens: self.dev_tokens.clone(),
            train_mse: self.train_mse,
            dev_mse: self.dev_mse,
            bias: self.bias.clone(),
            schema: self.schema.clone(),
        }
    }

    pub fn from_parts(header: BrainMapHeader, weights: DMatrix<f64>) -> Result<Self> {
        let d_attr = header.schema.attribute_count();
        if weights.shape() != (header.embedding_dim, header.attribute_dim)
            || header.attribute_dim != d_attr
            || header.bias.len() != d_attr
        {
            return Err(Error::Data(format!(
                "brain map weights {:?} and bias length {} disagree with header ({}x{})",
                weights.shape(),
                header.bias.len(),
                header.embedding_dim,
                header.attribute_dim
            )));
        }
        Ok(BrainMap {
            weights,
            bias: header.bias,
            lambda: header.lambda,
            seed: header.seed,
            train_frac: header.train_frac,
            train_tokens: header.train_tokens,
            dev_tokens: header.dev_tokens,
            train_mse: header.train_mse,
            dev_mse: header.dev_mse,
            schema: header.schema,
        })
    }
}

/// Raw attribute predictions for `v` (normalized first). Values are not
/// clamped to the rating range; see [`clamp_ratings`].
pub fn map_to_brain(map: &BrainMap, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != map.embedding_dim() {
        return Err(Error::Dimension {
            expected: map.embedding_dim(),
            found: v.len(),
        });
    }
    let x = DVector::from_vec(l2_normalize(v)?);
    let y = map.weights.tr_mul(&x);
    Ok(y.iter().zip(&map.bias).map(|(a, b)| a + b).collect())
}

/// Display view of predictions, clipped to `[0, 6]`.
pub fn clamp_ratings(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| v.clamp(MIN_RATING, MAX_RATING)).collect()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::space::{ConceptLabel, Concreteness, Modality, Property};
    use rand::Rng;

    pub fn schema(sizes: &[usize]) -> PropertySchema {
        let mut k = 0;
        PropertySchema::new(
            sizes
                .iter()
                .enumerate()
                .map(|(p, &n)| Property {
                    name: format!("p{p}"),
                    attributes: (0..n)
                        .map(|_| {
                            k += 1;
                            format!("a{k}")
                        })
                        .collect(),
                })
                .collect(),
        )
        .unwrap()
    }

    /// Ratings are an exact affine image of the normalized embeddings.
    pub fn affine_world(
        n: usize,
        dim: usize,
        sizes: &[usize],
        seed: u64,
    ) -> (EmbeddingSpace, BrainSemanticSpace, DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let schema = schema(sizes);
        let d_attr = schema.attribute_count();
        let scale = 1.0 / (dim as f64).sqrt();
        let w = DMatrix::from_fn(dim, d_attr, |_, _| rng.random_range(-scale..scale));
        let b = DVector::from_fn(d_attr, |_, _| rng.random_range(2.0..4.0));
        let mut emb = EmbeddingSpace::new(Modality::Linguistic, dim);
        let mut brain = BrainSemanticSpace::new(schema);
        for i in 0..n {
            let token = format!("w{i:04}");
            let raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = DVector::from_vec(l2_normalize(&raw).unwrap());
            let y = w.tr_mul(&x) + &b;
            emb.insert(&token, raw.iter().map(|v| v * 3.0).collect()).unwrap();
            brain
                .insert(
                    &token,
                    ConceptLabel {
                        concreteness: Concreteness::Concrete,
                        category: None,
                    },
                    y.iter().copied().collect(),
                )
                .unwrap();
        }
        (emb, brain, w, b)
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_affine_world_is_recovered() {
        let (emb, brain, _, _) = affine_world(120, 6, &[2, 3], 1);
        let map = fit_brain_map(&emb, &brain, DEFAULT_TRAIN_FRAC, 0.0, 7).unwrap();
        assert!(map.dev_mse < 1e-10, "dev mse {}", map.dev_mse);
        assert_eq!(map.train_tokens.len(), 108);
        assert_eq!(map.dev_tokens.len(), 12);
        for t in &map.dev_tokens {
            let got = map_to_brain(&map, emb.get(t).unwrap()).unwrap();
            for (g, e) in got.iter().zip(brain.get(t).unwrap()) {
                assert_abs_diff_eq!(g, e, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn square_system_interpolates() {
        // n_train = d_emb + 1 makes the augmented system [X 1] square.
        let (emb, _, _, _) = affine_world(12, 9, &[1], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut brain = BrainSemanticSpace::new(schema(&[2]));
        for t in emb.tokens() {
            use rand::Rng;
            let label = crate::space::ConceptLabel {
                concreteness: crate::space::Concreteness::Abstract,
                category: None,
            };
            brain
                .insert(t, label, vec![rng.random_range(0.0..6.0), rng.random_range(0.0..6.0)])
                .unwrap();
        }
        let map = fit_brain_map(&emb, &brain, 10.0 / 12.0, 0.0, 3).unwrap();
        assert_eq!(map.train_tokens.len(), 10);
        assert!(map.train_mse < 1e-8, "train mse {}", map.train_mse);
    }

    #[test]
    fn same_seed_same_split() {
        let (emb, brain, _, _) = affine_world(50, 4, &[2], 3);
        let a = fit_brain_map(&emb, &brain, 0.9, 0.1, 11).unwrap();
        let b = fit_brain_map(&emb, &brain, 0.9, 0.1, 11).unwrap();
        assert_eq!(
            (a.train_tokens.clone(), a.dev_tokens.clone()),
            (b.train_tokens, b.dev_tokens)
        );
        let c = fit_brain_map(&emb, &brain, 0.9, 0.1, 12).unwrap();
        assert_ne!(a.dev_tokens, c.dev_tokens);
        let overlap = a.train_tokens.iter().filter(|t| a.dev_tokens.contains(t)).count();
        assert_eq!(overlap, 0);
    }

    #[test]
    fn errors() {
        let (emb, brain, _, _) = affine_world(9, 4, &[2], 4);
        assert!(matches!(fit_brain_map(&emb, &brain, 0.9, 0.0, 1), Err(Error::Data(_))));
        let (emb, brain, _, _) = affine_world(12, 20, &[2], 4);
        assert!(matches!(
            fit_brain_map(&emb, &brain, 0.9, 0.0, 1),
            Err(Error::Singular(_))
        ));
        assert!(fit_brain_map(&emb, &brain, 0.9, 0.1, 1).is_ok());
        assert!(matches!(fit_brain_map(&emb, &brain, 1.0, 0.1, 1), Err(Error::Data(_))));
    }

    #[test]
    fn zero_weights_return_bias() {
        let map = BrainMap {
            weights: DMatrix::zeros(3, 2),
            bias: vec![1.5, 4.0],
            lambda: 0.0,
            seed: 0,
            train_frac: 0.9,
            train_tokens: vec![],
            dev_tokens: vec![],
            train_mse: 0.0,
            dev_mse: 0.0,
            schema: schema(&[2]),
        };
        assert_eq!(map_to_brain(&map, &[1.0, -2.0, 0.5]).unwrap(), vec![1.5, 4.0]);
        assert!(matches!(map_to_brain(&map, &[1.0]), Err(Error::Dimension { .. })));
        assert!(matches!(
            map_to_brain(&map, &[0.0; 3]),
            Err(Error::Normalization { .. })
        ));
        assert_eq!(clamp_ratings(&[-1.0, 3.0, 7.5]), vec![0.0, 3.0, 6.0]);
    }

    #[test]
    fn mapping_is_scale_invariant_and_satisfies_normal_equations() {
        let (emb, brain, _, _) = affine_world(80, 5, &[3], 5);
        let map = fit_brain_map(&emb, &brain, 0.9, 0.01, 2).unwrap();
        let v = emb.get("w0001").unwrap();
        let scaled: Vec<f64> = v.iter().map(|x| x * 17.0).collect();
        for (a, b) in map_to_brain(&map, v)
            .unwrap()
            .iter()
            .zip(map_to_brain(&map, &scaled).unwrap())
        {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-10);
        }
        let x = normalized_rows(&emb, &map.train_tokens).unwrap();
        let y = rating_rows(&brain, &map.train_tokens).unwrap();
        let (xm, ym) = (column_means(&x), column_means(&y));
        let (xc, yc) = (center_columns(&x, &xm), center_columns(&y, &ym));
        let lhs = gram_plus_ridge(&xc, map.lambda) * &map.weights;
        let rhs = xc.tr_mul(&yc);
        assert!((&lhs - &rhs).abs().max() <= 1e-8 * rhs.abs().max().max(1.0));
    }

    #[test]
    fn tuning_prefers_larger_lambda_on_ties() {
        let (emb, brain, _, _) = affine_world(60, 4, &[2], 6);
        let (best, points) = tune_brain_map(&emb, &brain, 0.9, &LAMBDA_GRID, 1).unwrap();
        assert_eq!(points.len(), LAMBDA_GRID.len());
        let min = points.iter().filter_map(|p| p.dev_mse).fold(f64::INFINITY, f64::min);
        assert_eq!(best.dev_mse, min);
        // Identical penalties tie exactly.
        let (tied, _) = tune_brain_map(&emb, &brain, 0.9, &[0.5, 0.5], 1).unwrap();
        assert_eq!(tied.lambda, 0.5);
    }

    #[test]
    fn header_round_trip() {
        let (emb, brain, _, _) = affine_world(30, 4, &[1, 2], 8);
        let map = fit_brain_map(&emb, &brain, 0.9, 0.1, 2).unwrap();
        let json = serde_json::to_string(&map.header()).unwrap();
        let back = BrainMap::from_parts(serde_json::from_str(&json).unwrap(), map.weights.clone()).unwrap();
        assert_eq!(back, map);
    }
}
