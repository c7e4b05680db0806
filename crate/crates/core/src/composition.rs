//! Two-word composition models and their training.
//!
//! | kind           | phrase vector                      | parameters  |
//! |----------------|------------------------------------|-------------|
//! | addition       | `x1 + x2`                          | none        |
//! | multiplication | `x1 * x2` (elementwise)            | none        |
//! | w-addition     | `tanh(W x1) + tanh(W x2)`          | one shared  |
//! | matrix         | `tanh(W1 x1) + tanh(W2 x2)`        | two, by position |
//! | dan            | `tanh(W (x1 + x2))`                | one         |
//!
//! Parametric models are trained by full-batch gradient descent on
//! `mean_i ||p_comp_i - p_gold_i||^2 + lambda1 * sum ||W||_F^2`. Word and
//! gold phrase vectors are never updated.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{format_float, PhraseLexicon};
use crate::linalg::frobenius_sq;
use crate::space::{aggregate_groups, l2_normalize, EmbeddingSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CompositionKind {
    #[serde(rename = "addition")]
    Addition,
    #[serde(rename = "multiplication")]
    Multiplication,
    #[serde(rename = "w-addition")]
    WAddition,
    #[serde(rename = "matrix")]
    Matrix,
    #[serde(rename = "dan")]
    Dan,
}

impl CompositionKind {
    pub const ALL: [CompositionKind; 5] = [
        CompositionKind::Addition,
        CompositionKind::Multiplication,
        CompositionKind::WAddition,
        CompositionKind::Matrix,
        CompositionKind::Dan,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CompositionKind::Addition => "addition",
            CompositionKind::Multiplication => "multiplication",
            CompositionKind::WAddition => "w-addition",
            CompositionKind::Matrix => "matrix",
            CompositionKind::Dan => "dan",
        }
    }

    /// Number of `d x d` matrices the kind carries.
    pub fn param_count(self) -> usize {
        match self {
            CompositionKind::Addition | CompositionKind::Multiplication => 0,
            CompositionKind::WAddition | CompositionKind::Dan => 1,
            CompositionKind::Matrix => 2,
        }
    }

    /// Conventional names for the parameter matrices.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            CompositionKind::Addition | CompositionKind::Multiplication => &[],
            CompositionKind::WAddition => &["w_v"],
            CompositionKind::Matrix => &["w_m1", "w_m2"],
            CompositionKind::Dan => &["w_d"],
        }
    }
}

impl fmt::Display for CompositionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CompositionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim().to_ascii_lowercase().replace('_', "-");
        CompositionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s || (s == "waddition" && *k == CompositionKind::WAddition))
            .ok_or_else(|| format!("unknown composition model `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Activation {
    Tanh,
    #[cfg(test)]
    Identity,
}

impl Activation {
    fn apply(self, z: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Activation::Tanh => z.map(f64::tanh),
            #[cfg(test)]
            Activation::Identity => z.clone(),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, out: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Activation::Tanh => out.map(|t| 1.0 - t * t),
            #[cfg(test)]
            Activation::Identity => DMatrix::from_element(out.nrows(), out.ncols(), 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositionModel {
    kind: CompositionKind,
    dim: usize,
    params: Vec<DMatrix<f64>>,
    activation: Activation,
}

impl CompositionModel {
    pub fn new(kind: CompositionKind, dim: usize, params: Vec<DMatrix<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Data("composition dimension must be positive".into()));
        }
        if params.len() != kind.param_count() {
            return Err(Error::Data(format!(
                "{kind} takes {} parameter matrices, got {}",
                kind.param_count(),
                params.len()
            )));
        }
        for p in &params {
            if p.shape() != (dim, dim) {
                return Err(Error::Dimension {
                    expected: dim,
                    found: p.nrows().max(p.ncols()),
                });
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data(format!("{kind} parameters contain non-finite values")));
            }
        }
        Ok(CompositionModel {
            kind,
            dim,
            params,
            activation: Activation::Tanh,
        })
    }

    /// Identity matrices plus uniform noise in `[-0.01, 0.01]`.
    pub fn initialized(kind: CompositionKind, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..kind.param_count())
            .map(|_| {
                DMatrix::from_fn(dim, dim, |i, j| {
                    let noise = rng.random_range(-0.01..=0.01);
                    if i == j {
                        1.0 + noise
                    } else {
                        noise
                    }
                })
            })
            .collect();
        CompositionModel {
            kind,
            dim,
            params,
            activation: Activation::Tanh,
        }
    }

    pub fn kind(&self) -> CompositionKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &[DMatrix<f64>] {
        &self.params
    }

    pub fn param_norm_sq(&self) -> f64 {
        self.params.iter().map(frobenius_sq).sum()
    }

    pub fn compose(&self, x1: &[f64], x2: &[f64]) -> Result<Vec<f64>> {
        for x in [x1, x2] {
            if x.len() != self.dim {
                return Err(Error::Dimension {
                    expected: self.dim,
                    found: x.len(),
                });
            }
        }
        let a = DMatrix::from_column_slice(self.dim, 1, x1);
        let b = DMatrix::from_column_slice(self.dim, 1, x2);
        Ok(self.forward(&a, &b).output.iter().copied().collect())
    }

    /// Composes every column pair of `x1` and `x2` (`dim x n` each).
    fn forward(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Forward {
        let f = self.activation;
        match self.kind {
            CompositionKind::Addition => Forward::plain(x1 + x2),
            CompositionKind::Multiplication => Forward::plain(x1.component_mul(x2)),
            CompositionKind::WAddition => {
                let (t1, t2) = (f.apply(&(&self.params[0] * x1)), f.apply(&(&self.params[0] * x2)));
                Forward {
                    output: &t1 + &t2,
                    hidden: vec![t1, t2],
                }
            }
            CompositionKind::Matrix => {
                let (t1, t2) = (f.apply(&(&self.params[0] * x1)), f.apply(&(&self.params[1] * x2)));
                Forward {
                    output: &t1 + &t2,
                    hidden: vec![t1, t2],
                }
            }
            CompositionKind::Dan => {
                let t = f.apply(&(&self.params[0] * (x1 + x2)));
                Forward {
                    output: t.clone(),
                    hidden: vec![t],
                }
            }
        }
    }
}

struct Forward {
    output: DMatrix<f64>,
    hidden: Vec<DMatrix<f64>>,
}

impl Forward {
    fn plain(output: DMatrix<f64>) -> Self {
        Forward {
            output,
            hidden: Vec::new(),
        }
    }
}

pub fn compose(model: &CompositionModel, x1: &[f64], x2: &[f64]) -> Result<Vec<f64>> {
    model.compose(x1, x2)
}

/// Constituent and gold vectors for a set of phrases, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseBatch {
    x1: DMatrix<f64>,
    x2: DMatrix<f64>,
    gold: DMatrix<f64>,
}

impl PhraseBatch {
    /// Builds a batch from `(adjective, noun, gold)` triples of equal width.
    pub fn new(rows: &[(Vec<f64>, Vec<f64>, Vec<f64>)]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.0.len());
        let mut batch = PhraseBatch {
            x1: DMatrix::zeros(dim, rows.len()),
            x2: DMatrix::zeros(dim, rows.len()),
            gold: DMatrix::zeros(dim, rows.len()),
        };
        for (j, (a, b, g)) in rows.iter().enumerate() {
            for v in [a, b, g] {
                if v.len() != dim {
                    return Err(Error::Dimension {
                        expected: dim,
                        found: v.len(),
                    });
                }
            }
            batch.x1.set_column(j, &nalgebra::DVector::from_column_slice(a));
            batch.x2.set_column(j, &nalgebra::DVector::from_column_slice(b));
            batch.gold.set_column(j, &nalgebra::DVector::from_column_slice(g));
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.gold.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mean over phrases of `||p_comp - p_gold||^2`.
pub fn mean_squared_error(model: &CompositionModel, batch: &PhraseBatch) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let residual = model.forward(&batch.x1, &batch.x2).output - &batch.gold;
    frobenius_sq(&residual) / batch.len() as f64
}

/// The training objective: mean squared error plus `lambda1` times the
/// squared Frobenius norm of all parameters.
pub fn objective(model: &CompositionModel, batch: &PhraseBatch, lambda1: f64) -> f64 {
    mean_squared_error(model, batch) + lambda1 * model.param_norm_sq()
}

/// Objective value and its analytic gradient with respect to each
/// parameter matrix, in parameter order.
pub fn objective_gradient(model: &CompositionModel, batch: &PhraseBatch, lambda1: f64) -> (f64, Vec<DMatrix<f64>>) {
    let n = batch.len().max(1) as f64;
    let fwd = model.forward(&batch.x1, &batch.x2);
    let residual = &fwd.output - &batch.gold;
    let value = frobenius_sq(&residual) / n + lambda1 * model.param_norm_sq();
    let f = model.activation;
    // dJ/dz for a pre-activation z whose output is t.
    let delta = |t: &DMatrix<f64>| residual.component_mul(&f.derivative_from_output(t)) * (2.0 / n);
    let mut grads: Vec<DMatrix<f64>> = match model.kind {
        CompositionKind::Addition | CompositionKind::Multiplication => Vec::new(),
        CompositionKind::WAddition => {
            let (d1, d2) = (delta(&fwd.hidden[0]), delta(&fwd.hidden[1]));
            vec![d1 * batch.x1.transpose() + d2 * batch.x2.transpose()]
        }
        CompositionKind::Matrix => vec![
            delta(&fwd.hidden[0]) * batch.x1.transpose(),
            delta(&fwd.hidden[1]) * batch.x2.transpose(),
        ],
        CompositionKind::Dan => vec![delta(&fwd.hidden[0]) * (&batch.x1 + &batch.x2).transpose()],
    };
    for (g, w) in grads.iter_mut().zip(&model.params) {
        *g += w * (2.0 * lambda1);
    }
    (value, grads)
}

/// Optimizer and data-split settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Train, test and development shares.
    pub split: [f64; 3],
    /// Scale gold phrase vectors to unit norm before fitting.
    pub normalize_gold: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 1e-5,
            learning_rate: 0.1,
            max_epochs: 2000,
            patience: 20,
            seed: 42,
            split: [0.7, 0.2, 0.1],
            normalize_gold: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Data(m.to_string()));
        if !(self.lambda1.is_finite() && self.lambda1 >= 0.0) {
            return bad("lambda1 must be finite and non-negative");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.split.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return bad("split ratios must be positive");
        }
        if (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("split ratios must sum to 1");
        }
        Ok(())
    }
}

/// Phrase tokens of each split, every list sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub dev: Vec<String>,
}

/// Seeded shuffle of `phrases` cut into train/test/dev shares.
pub fn split_phrases(phrases: &[String], ratios: [f64; 3], seed: u64) -> PhraseSplit {
    let mut shuffled = phrases.to_vec();
    shuffled.sort();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = shuffled.len();
    let n_train = ((n as f64 * ratios[0]).round() as usize).min(n);
    let n_test = ((n as f64 * ratios[1]).round() as usize).min(n - n_train);
    let mut rest = shuffled.split_off(n_train);
    let mut dev = rest.split_off(n_test);
    let (mut train, mut test) = (shuffled, rest);
    train.sort();
    test.sort();
    dev.sort();
    PhraseSplit { train, test, dev }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Training objective, including the penalty.
    pub train_loss: f64,
    /// Development mean squared error.
    pub dev_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub kind: CompositionKind,
    pub epochs: Vec<EpochLoss>,
    /// Epoch whose parameters were kept (`0` = initialization).
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub train_mse: f64,
    pub dev_mse: f64,
    pub test_mse: f64,
    pub split: PhraseSplit,
}

impl TrainReport {
    /// `epoch,train_loss,dev_loss,learning_rate`, one row per epoch.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "train_loss", "dev_loss", "learning_rate"])
            .expect("in-memory write");
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                format_float(e.train_loss),
                format_float(e.dev_loss),
                format_float(e.learning_rate),
            ])
            .expect("in-memory write");
        }
        w.into_inner().expect("in-memory write")
    }
}

fn unit(v: &[f64], what: impl FnOnce() -> String) -> Result<Vec<f64>> {
    l2_normalize(v).map_err(|_| Error::normalization(what()))
}

fn constituents<'a>(
    words: &'a EmbeddingSpace,
    lexicon: &PhraseLexicon,
    phrase: &str,
) -> Result<(&'a [f64], &'a [f64])> {
    let entry = lexicon
        .entry(phrase)
        .ok_or_else(|| Error::Alignment(format!("phrase `{phrase}` not in lexicon")))?;
    let missing = |w: &str| Error::Alignment(format!("word `{w}` of phrase `{phrase}` has no vector"));
    let adj = words.get(&entry.adjective).ok_or_else(|| missing(&entry.adjective))?;
    let noun = words.get(&entry.noun).ok_or_else(|| missing(&entry.noun))?;
    Ok((adj, noun))
}

fn build_batch(
    phrases: &[String],
    words: &EmbeddingSpace,
    gold: &EmbeddingSpace,
    lexicon: &PhraseLexicon,
    normalize_gold: bool,
) -> Result<PhraseBatch> {
    let rows = phrases
        .iter()
        .map(|p| {
            let (adj, noun) = constituents(words, lexicon, p)?;
            let g = gold
                .get(p)
                .ok_or_else(|| Error::Alignment(format!("phrase `{p}` has no gold vector")))?;
            let g = if normalize_gold {
                unit(g, || format!("gold vector of `{p}`"))?
            } else {
                g.to_vec()
            };
            Ok((
                unit(adj, || format!("vector of `{p}` adjective"))?,
                unit(noun, || format!("vector of `{p}` noun"))?,
                g,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    PhraseBatch::new(&rows)
}

/// Trains a model of `kind` on the lexicon's phrases. The lexicon is split
/// by `cfg.split` and `cfg.seed`; the split is recorded in the report.
pub fn train(
    kind: CompositionKind,
    words: &EmbeddingSpace,
    gold_phrases: &EmbeddingSpace,
    lexicon: &PhraseLexicon,
    cfg: &TrainConfig,
) -> Result<(CompositionModel, TrainReport)> {
    cfg.validate()?;
    if words.dim() != gold_phrases.dim() {
        return Err(Error::Dimension {
            expected: words.dim(),
            found: gold_phrases.dim(),
        });
    }
    let phrases: Vec<String> = lexicon.entries().iter().map(|e| e.phrase.clone()).collect();
    let split = split_phrases(&phrases, cfg.split, cfg.seed);
    if split.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let batch = |tokens: &[String]| build_batch(tokens, words, gold_phrases, lexicon, cfg.normalize_gold);
    let (train_batch, dev_batch, test_batch) = (batch(&split.train)?, batch(&split.dev)?, batch(&split.test)?);

    let model = CompositionModel::initialized(kind, words.dim(), cfg.seed);
    let (model, epochs, best_epoch, stopped_early) = if kind.param_count() == 0 {
        (model, Vec::new(), 0, false)
    } else {
        descend(model, &train_batch, &dev_batch, cfg)?
    };
    let report = TrainReport {
        kind,
        epochs,
        best_epoch,
        stopped_early,
        train_mse: mean_squared_error(&model, &train_batch),
        dev_mse: mean_squared_error(&model, &dev_batch),
        test_mse: mean_squared_error(&model, &test_batch),
        split,
    };
    Ok((model, report))
}

/// Full-batch gradient descent with learning-rate halving on development
/// loss increases and patience-based early stopping. Returns the parameters
/// with the lowest development loss seen.
fn descend(
    mut model: CompositionModel,
    train: &PhraseBatch,
    dev: &PhraseBatch,
    cfg: &TrainConfig,
) -> Result<(CompositionModel, Vec<EpochLoss>, usize, bool)> {
    // Without development phrases, monitor the training objective instead.
    let monitor = |m: &CompositionModel| {
        if dev.is_empty() {
            objective(m, train, cfg.lambda1)
        } else {
            mean_squared_error(m, dev)
        }
    };
    let mut lr = cfg.learning_rate;
    let mut best = (monitor(&model), model.clone(), 0);
    let mut previous_dev = best.0;
    let mut since_best = 0;
    let mut epochs = Vec::with_capacity(cfg.max_epochs);
    for epoch in 1..=cfg.max_epochs {
        let (_, grads) = objective_gradient(&model, train, cfg.lambda1);
        for (w, g) in model.params.iter_mut().zip(&grads) {
            *w -= g * lr;
        }
        let train_loss = objective(&model, train, cfg.lambda1);
        let dev_loss = monitor(&model);
        if !train_loss.is_finite() || !dev_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        epochs.push(EpochLoss {
            epoch,
            train_loss,
            dev_loss,
            learning_rate: lr,
        });
        if dev_loss > previous_dev {
            lr *= 0.5;
        }
        previous_dev = dev_loss;
        if dev_loss < best.0 {
            best = (dev_loss, model.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                return Ok((best.1, epochs, best.2, true));
            }
        }
    }
    Ok((best.1, epochs, best.2, false))
}

/// Composes one vector per lexicon entry from normalized word vectors.
pub fn predict_phrases(
    model: &CompositionModel,
    words: &EmbeddingSpace,
    lexicon: &PhraseLexicon,
) -> Result<EmbeddingSpace> {
    let mut out = EmbeddingSpace::new(words.modality(), model.dim());
    for entry in lexicon.entries() {
        let (adj, noun) = constituents(words, lexicon, &entry.phrase)?;
        let p = &entry.phrase;
        let composed = model.compose(
            &unit(adj, || format!("vector of `{p}` adjective"))?,
            &unit(noun, || format!("vector of `{p}` noun"))?,
        )?;
        out.insert(&entry.phrase, composed)?;
    }
    Ok(out)
}

/// Word vectors computed as the mean of the phrase vectors each word occurs
/// in, as adjective or noun. Phrases without a vector are skipped.
pub fn word_vectors_from_phrases(phrases: &EmbeddingSpace, lexicon: &PhraseLexicon) -> Result<EmbeddingSpace> {
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for e in lexicon.entries().iter().filter(|e| phrases.contains(&e.phrase)) {
        groups.entry(e.adjective.clone()).or_default().push(e.phrase.clone());
        if e.noun != e.adjective {
            groups.entry(e.noun.clone()).or_default().push(e.phrase.clone());
        }
    }
    if groups.is_empty() {
        return Err(Error::Alignment("no lexicon phrase has a vector".into()));
    }
    aggregate_groups(phrases, &groups)
}

/// JSON header of a serialized model; matrices live in sibling CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub kind: CompositionKind,
    pub dim: usize,
    pub config: TrainConfig,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub final_train_mse: f64,
    pub final_dev_mse: f64,
    pub final_test_mse: f64,
    pub param_files: Vec<String>,
    pub split: PhraseSplit,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Modality;
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, StandardNormal};

    fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        l2_normalize(&v).unwrap()
    }

    fn random_matrix(dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(dim, dim, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
    }

    fn random_batch(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> PhraseBatch {
        let rows: Vec<_> = (0..n)
            .map(|_| (random_unit(dim, rng), random_unit(dim, rng), random_unit(dim, rng)))
            .collect();
        PhraseBatch::new(&rows).unwrap()
    }

    #[test]
    fn compose_examples() {
        let add = CompositionModel::new(CompositionKind::Addition, 2, vec![]).unwrap();
        assert_eq!(compose(&add, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), vec![4.0, 6.0]);
        let mul = CompositionModel::new(CompositionKind::Multiplication, 2, vec![]).unwrap();
        assert_eq!(mul.compose(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), vec![3.0, 8.0]);
        let dan = CompositionModel::new(CompositionKind::Dan, 1, vec![DMatrix::identity(1, 1)]).unwrap();
        assert_abs_diff_eq!(dan.compose(&[0.5], &[0.5]).unwrap()[0], 0.76159416, epsilon = 1e-8);
        assert!(matches!(add.compose(&[1.0], &[1.0, 2.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn parametric_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (w1, w2) = (random_matrix(3, 1.0, &mut rng), random_matrix(3, 1.0, &mut rng));
        let (x1, x2) = (random_unit(3, &mut rng), random_unit(3, &mut rng));
        let mv = |w: &DMatrix<f64>, x: &[f64]| -> Vec<f64> {
            (0..3).map(|i| (0..3).map(|j| w[(i, j)] * x[j]).sum::<f64>()).collect()
        };
        let th = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(f64::tanh).collect() };
        let sum = |a: Vec<f64>, b: Vec<f64>| -> Vec<f64> { a.iter().zip(&b).map(|(x, y)| x + y).collect() };

        let wadd = CompositionModel::new(CompositionKind::WAddition, 3, vec![w1.clone()]).unwrap();
        let expected = sum(th(mv(&w1, &x1)), th(mv(&w1, &x2)));
        for (g, e) in wadd.compose(&x1, &x2).unwrap().iter().zip(&expected) {
            assert_abs_diff_eq!(g, e, epsilon = 1e-14);
        }
        let matrix = CompositionModel::new(CompositionKind::Matrix, 3, vec![w1.clone(), w2.clone()]).unwrap();
        let expected = sum(th(mv(&w1, &x1)), th(mv(&w2, &x2)));
        for (g, e) in matrix.compose(&x1, &x2).unwrap().iter().zip(&expected) {
            assert_abs_diff_eq!(g, e, epsilon = 1e-14);
        }
        let dan = CompositionModel::new(CompositionKind::Dan, 3, vec![w2.clone()]).unwrap();
        let expected = th(mv(&w2, &sum(x1.clone(), x2.clone())));
        for (g, e) in dan.compose(&x1, &x2).unwrap().iter().zip(&expected) {
            assert_abs_diff_eq!(g, e, epsilon = 1e-14);
        }
    }

    #[test]
    fn symmetry_by_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x1, x2) = (random_unit(4, &mut rng), random_unit(4, &mut rng));
        for kind in [CompositionKind::Addition, CompositionKind::Multiplication] {
            let m = CompositionModel::new(kind, 4, vec![]).unwrap();
            assert_eq!(m.compose(&x1, &x2).unwrap(), m.compose(&x2, &x1).unwrap());
        }
        let m = CompositionModel::new(
            CompositionKind::Matrix,
            4,
            vec![random_matrix(4, 1.0, &mut rng), random_matrix(4, 1.0, &mut rng)],
        )
        .unwrap();
        let (a, b) = (m.compose(&x1, &x2).unwrap(), m.compose(&x2, &x1).unwrap());
        assert!(a.iter().zip(&b).any(|(p, q)| (p - q).abs() > 1e-6));
    }

    #[test]
    fn model_validation() {
        assert!(CompositionModel::new(CompositionKind::Addition, 2, vec![DMatrix::identity(2, 2)]).is_err());
        assert!(CompositionModel::new(CompositionKind::Matrix, 2, vec![DMatrix::identity(2, 2)]).is_err());
        assert!(CompositionModel::new(CompositionKind::Dan, 2, vec![DMatrix::identity(3, 3)]).is_err());
        let init = CompositionModel::initialized(CompositionKind::Matrix, 5, 3);
        assert_eq!(init.params().len(), 2);
        for p in init.params() {
            assert!((p - DMatrix::<f64>::identity(5, 5)).abs().max() <= 0.01);
        }
        assert!(CompositionModel::initialized(CompositionKind::Addition, 5, 3)
            .params()
            .is_empty());
        assert_eq!(
            "W-Addition".parse::<CompositionKind>().unwrap(),
            CompositionKind::WAddition
        );
    }

    /// Central differences over every parameter entry.
    fn numeric_gradient(model: &CompositionModel, batch: &PhraseBatch, lambda1: f64) -> Vec<DMatrix<f64>> {
        let h = 1e-6;
        (0..model.params.len())
            .map(|k| {
                let mut g = DMatrix::zeros(model.dim, model.dim);
                for i in 0..model.dim {
                    for j in 0..model.dim {
                        let mut plus = model.clone();
                        plus.params[k][(i, j)] += h;
                        let mut minus = model.clone();
                        minus.params[k][(i, j)] -= h;
                        g[(i, j)] = (objective(&plus, batch, lambda1) - objective(&minus, batch, lambda1)) / (2.0 * h);
                    }
                }
                g
            })
            .collect()
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for kind in [
            CompositionKind::WAddition,
            CompositionKind::Matrix,
            CompositionKind::Dan,
        ] {
            for trial in 0..5 {
                let dim = 2 + trial;
                let params = (0..kind.param_count())
                    .map(|_| random_matrix(dim, 0.7, &mut rng))
                    .collect();
                let model = CompositionModel::new(kind, dim, params).unwrap();
                let batch = random_batch(7, dim, &mut rng);
                let lambda1 = 0.05 * trial as f64;
                let (value, analytic) = objective_gradient(&model, &batch, lambda1);
                assert_abs_diff_eq!(value, objective(&model, &batch, lambda1), epsilon = 1e-12);
                for (a, n) in analytic.iter().zip(numeric_gradient(&model, &batch, lambda1)) {
                    let rel = (a - &n).norm() / a.norm().max(n.norm());
                    assert!(rel < 1e-5, "{kind} d={dim}: relative error {rel}");
                }
            }
        }
    }

    #[test]
    fn dan_loss_at_zero_weights_is_mean_gold_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<_> = (0..9)
            .map(|_| {
                let g: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                (random_unit(3, &mut rng), random_unit(3, &mut rng), g)
            })
            .collect();
        let batch = PhraseBatch::new(&rows).unwrap();
        let model = CompositionModel::new(CompositionKind::Dan, 3, vec![DMatrix::zeros(3, 3)]).unwrap();
        let expected = rows.iter().map(|r| r.2.iter().map(|x| x * x).sum::<f64>()).sum::<f64>() / 9.0;
        assert_abs_diff_eq!(objective(&model, &batch, 0.0), expected, epsilon = 1e-12);
    }

    #[test]
    fn linear_subcase_descends_monotonically() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let train = random_batch(40, 4, &mut rng);
        let mut model = CompositionModel::initialized(CompositionKind::WAddition, 4, 1);
        model.activation = Activation::Identity;
        let mut previous = objective(&model, &train, 0.01);
        for _ in 0..200 {
            let (_, grads) = objective_gradient(&model, &train, 0.01);
            model.params[0] -= &grads[0] * 0.05;
            let current = objective(&model, &train, 0.01);
            assert!(current <= previous + 1e-15, "{current} > {previous}");
            previous = current;
        }
    }

    fn toy_data(
        n: usize,
        dim: usize,
        seed: u64,
        gold: impl Fn(&[f64], &[f64]) -> Vec<f64>,
    ) -> (EmbeddingSpace, EmbeddingSpace, PhraseLexicon) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_words = (n as f64).sqrt().ceil() as usize + 1;
        let mut words = EmbeddingSpace::new(Modality::Linguistic, dim);
        for i in 0..2 * n_words {
            words.insert(&format!("w{i}"), random_unit(dim, &mut rng)).unwrap();
        }
        let mut lexicon = PhraseLexicon::new();
        let mut phrases = EmbeddingSpace::new(Modality::Linguistic, dim);
        'outer: for a in 0..n_words {
            for b in n_words..2 * n_words {
                if lexicon.len() == n {
                    break 'outer;
                }
                let (adj, noun) = (format!("w{a}"), format!("w{b}"));
                lexicon.push(&adj, &noun, None, None).unwrap();
                let g = gold(words.get(&adj).unwrap(), words.get(&noun).unwrap());
                phrases.insert(&format!("{adj}_{noun}"), g).unwrap();
            }
        }
        (words, phrases, lexicon)
    }

    #[test]
    fn addition_fits_additive_gold_exactly() {
        let (words, phrases, lexicon) = toy_data(30, 5, 1, |a, b| a.iter().zip(b).map(|(x, y)| x + y).collect());
        let cfg = TrainConfig {
            normalize_gold: false,
            ..TrainConfig::default()
        };
        let (model, report) = train(CompositionKind::Addition, &words, &phrases, &lexicon, &cfg).unwrap();
        assert!(report.epochs.is_empty());
        assert!(report.train_mse < 1e-28);
        assert_eq!(model.kind(), CompositionKind::Addition);
    }

    #[test]
    fn split_is_seeded_and_seven_two_one() {
        let phrases: Vec<String> = (0..500).map(|i| format!("p{i:03}")).collect();
        let s = split_phrases(&phrases, [0.7, 0.2, 0.1], 9);
        assert_eq!((s.train.len(), s.test.len(), s.dev.len()), (350, 100, 50));
        assert_eq!(s, split_phrases(&phrases, [0.7, 0.2, 0.1], 9));
        assert_ne!(s, split_phrases(&phrases, [0.7, 0.2, 0.1], 10));
        let mut all: Vec<_> = s.train.iter().chain(&s.test).chain(&s.dev).cloned().collect();
        all.sort();
        assert_eq!(all, phrases);
    }

    #[test]
    fn heavy_penalty_shrinks_toward_zero_predictor() {
        let (words, phrases, lexicon) =
            toy_data(60, 4, 2, |a, b| a.iter().zip(b).map(|(x, y)| (x - y).tanh()).collect());
        let cfg = TrainConfig {
            lambda1: 100.0,
            learning_rate: 0.001,
            max_epochs: 3000,
            ..TrainConfig::default()
        };
        let (model, report) = train(CompositionKind::Dan, &words, &phrases, &lexicon, &cfg).unwrap();
        assert!(model.param_norm_sq() < 1e-4, "norm {}", model.param_norm_sq());
        let zero = CompositionModel::new(CompositionKind::Dan, 4, vec![DMatrix::zeros(4, 4)]).unwrap();
        let dev = build_batch(&report.split.dev, &words, &phrases, &lexicon, true).unwrap();
        assert_abs_diff_eq!(report.dev_mse, mean_squared_error(&zero, &dev), epsilon = 1e-2);
    }

    #[test]
    fn training_is_deterministic_and_never_touches_inputs() {
        let (words, phrases, lexicon) = toy_data(40, 4, 3, |a, b| {
            a.iter().zip(b).map(|(x, y)| (x + 0.5 * y).tanh()).collect()
        });
        let (w0, p0) = (words.clone(), phrases.clone());
        let cfg = TrainConfig {
            max_epochs: 50,
            ..TrainConfig::default()
        };
        let a = train(CompositionKind::Matrix, &words, &phrases, &lexicon, &cfg).unwrap();
        let b = train(CompositionKind::Matrix, &words, &phrases, &lexicon, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!((words, phrases), (w0, p0));
        assert!(a.1.epochs.len() <= 50);
    }

    #[test]
    fn training_errors() {
        let (words, phrases, lexicon) = toy_data(10, 3, 4, |a, _| a.to_vec());
        let diverge = TrainConfig {
            learning_rate: 1e308,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(CompositionKind::Dan, &words, &phrases, &lexicon, &diverge),
            Err(Error::Divergence { .. })
        ));
        let empty = PhraseLexicon::new();
        assert!(matches!(
            train(CompositionKind::Dan, &words, &phrases, &empty, &TrainConfig::default()),
            Err(Error::Data(_))
        ));
        let mut missing = lexicon.clone();
        missing.push("nobody", "w0", None, None).unwrap();
        let err = predict_phrases(
            &CompositionModel::initialized(CompositionKind::Addition, 3, 0),
            &words,
            &missing,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Alignment(ref m) if m.contains("nobody_w0")));
    }

    #[test]
    fn predictions_match_per_phrase_loop() {
        let (words, _, lexicon) = toy_data(12, 3, 6, |a, _| a.to_vec());
        let model = CompositionModel::initialized(CompositionKind::Matrix, 3, 8);
        let out = predict_phrases(&model, &words, &lexicon).unwrap();
        let expected: Vec<&str> = lexicon.entries().iter().map(|e| e.phrase.as_str()).collect();
        let mut got: Vec<&str> = out.tokens().collect();
        got.sort();
        let mut exp_sorted = expected.clone();
        exp_sorted.sort();
        assert_eq!(got, exp_sorted);
        for e in lexicon.entries() {
            let x1 = l2_normalize(words.get(&e.adjective).unwrap()).unwrap();
            let x2 = l2_normalize(words.get(&e.noun).unwrap()).unwrap();
            let w = model.params();
            for i in 0..3 {
                let z1: f64 = (0..3).map(|j| w[0][(i, j)] * x1[j]).sum();
                let z2: f64 = (0..3).map(|j| w[1][(i, j)] * x2[j]).sum();
                assert_abs_diff_eq!(out.get(&e.phrase).unwrap()[i], z1.tanh() + z2.tanh(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn word_vectors_average_their_phrases() {
        let text = "red\tcar\nred\tapple\nbig\tcar\n";
        let lexicon = crate::ingest::parse_phrases(text, std::path::Path::new("l")).unwrap();
        let phrases = EmbeddingSpace::from_entries(
            Modality::Visual,
            2,
            [
                ("red_car", vec![1.0, 0.0]),
                ("red_apple", vec![0.0, 1.0]),
                ("big_car", vec![3.0, 3.0]),
            ],
        )
        .unwrap();
        let words = word_vectors_from_phrases(&phrases, &lexicon).unwrap();
        assert_eq!(words.get("red").unwrap(), &[0.5, 0.5]);
        assert_eq!(words.get("car").unwrap(), &[2.0, 1.5]);
        assert_eq!(words.get("apple").unwrap(), &[0.0, 1.0]);
        assert_eq!(words.modality(), Modality::Visual);
    }
}
