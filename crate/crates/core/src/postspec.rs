//! Non-adversarial post-specialization: learn a global map `G` from
//! original to specialized vectors of seen words with a max-margin ranking
//! loss, then apply `G` to the whole vocabulary.

use log::{info, warn};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed_io::{cosine_unchecked, l2_norm, normalize_rows, EmbeddingSpace};
use crate::error::{Error, Result};
use crate::nn::{Mode, MlpNetwork, MlpSpec, OptimizerState, OutputKind, DEFAULT_LEAKY_SLOPE};

/// Architecture of the mapping network `G`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub hidden_layers: usize,
    pub hidden_size: usize,
    pub slope: f64,
    pub input_dropout: f64,
    pub hidden_dropout: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            hidden_layers: 2,
            hidden_size: 2048,
            slope: DEFAULT_LEAKY_SLOPE,
            input_dropout: 0.2,
            hidden_dropout: 0.2,
        }
    }
}

impl GeneratorConfig {
    pub fn spec(&self, dim: usize) -> MlpSpec {
        MlpSpec {
            input_dim: dim,
            output_dim: dim,
            hidden_layers: self.hidden_layers,
            hidden_size: self.hidden_size,
            slope: self.slope,
            input_dropout: self.input_dropout,
            hidden_dropout: self.hidden_dropout,
            output_kind: OutputKind::Linear,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostSpecConfig {
    /// Max-margin `delta_MM`.
    pub margin: f64,
    /// Negatives `k` sampled from the batch for every pair.
    pub negatives_per_pair: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// `None` derives the count from the number of training pairs.
    pub iterations_per_epoch: Option<usize>,
    pub learning_rate: f64,
    pub decay: f64,
    pub plateau_decay: f64,
    pub validation_fraction: f64,
    pub generator: GeneratorConfig,
}

impl Default for PostSpecConfig {
    fn default() -> Self {
        PostSpecConfig {
            margin: 0.6,
            negatives_per_pair: 25,
            batch_size: 32,
            epochs: 10,
            iterations_per_epoch: None,
            learning_rate: 0.1,
            decay: 0.98,
            plateau_decay: 0.5,
            validation_fraction: 0.05,
            generator: GeneratorConfig::default(),
        }
    }
}

impl PostSpecConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::config("margin", "must be >= 0"));
        }
        if self.negatives_per_pair == 0 {
            return Err(Error::config("negatives_per_pair", "must be >= 1"));
        }
        if self.batch_size <= self.negatives_per_pair {
            return Err(Error::config(
                "batch_size",
                format!(
                    "{} must exceed negatives_per_pair ({})",
                    self.batch_size, self.negatives_per_pair
                ),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be >= 1"));
        }
        if self.iterations_per_epoch == Some(0) {
            return Err(Error::config("iterations_per_epoch", "must be >= 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        for (field, v) in [("decay", self.decay), ("plateau_decay", self.plateau_decay)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::config(field, format!("{v} not in (0, 1]")));
            }
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("validation_fraction", "must be in [0, 1)"));
        }
        self.generator.spec(1).validate()
    }

    pub fn iterations_for(&self, train_pairs: usize) -> usize {
        self.iterations_per_epoch
            .unwrap_or_else(|| (train_pairs / 2).max(self.batch_size))
    }
}

/// Row-aligned (original, specialized) vectors used to fit `G`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPairs {
    pub originals: Array2<f64>,
    pub targets: Array2<f64>,
}

impl TrainingPairs {
    pub fn new(originals: Array2<f64>, targets: Array2<f64>) -> Result<Self> {
        if originals.dim() != targets.dim() {
            return Err(Error::DimensionMismatch {
                context: "training pair matrices",
                expected: originals.len(),
                found: targets.len(),
            });
        }
        Ok(TrainingPairs { originals, targets })
    }

    /// Pairs for every word of `specialized` whose vector differs from its
    /// vector in `original`. Unchanged words would only teach the identity.
    pub fn from_spaces(original: &EmbeddingSpace, specialized: &EmbeddingSpace) -> Result<Self> {
        if original.dim() != specialized.dim() {
            return Err(Error::DimensionMismatch {
                context: "original vs specialized space",
                expected: original.dim(),
                found: specialized.dim(),
            });
        }
        let mut rows = Vec::new();
        for (j, word) in specialized.words().iter().enumerate() {
            if let Some(i) = original.index_of(word) {
                if original.row(i) != specialized.row(j) {
                    rows.push((i, j));
                }
            }
        }
        let (oi, sj): (Vec<usize>, Vec<usize>) = rows.into_iter().unzip();
        TrainingPairs::new(
            original.matrix().select(Axis(0), &oi),
            specialized.matrix().select(Axis(0), &sj),
        )
    }

    pub fn len(&self) -> usize {
        self.originals.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.originals.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> TrainingPairs {
        TrainingPairs {
            originals: self.originals.select(Axis(0), rows),
            targets: self.targets.select(Axis(0), rows),
        }
    }

    /// Seeded shuffle into (train, validation).
    pub fn split(&self, validation_fraction: f64, seed: u64) -> (TrainingPairs, TrainingPairs) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = if validation_fraction > 0.0 && self.len() > 1 {
            ((self.len() as f64 * validation_fraction).round() as usize).clamp(1, self.len() - 1)
        } else {
            0
        };
        let (val, train) = idx.split_at(n_val);
        (self.select(train), self.select(val))
    }
}

fn cosine_grad(p: ArrayView1<f64>, y: ArrayView1<f64>) -> (f64, Array1<f64>) {
    let (np, ny) = (l2_norm(p), l2_norm(y));
    if np == 0.0 || ny == 0.0 {
        return (0.0, Array1::zeros(p.len()));
    }
    let cos = p.dot(&y) / (np * ny);
    let grad = &y / (np * ny) - &p * (cos / (np * np));
    (cos, grad)
}

fn check_negatives(n: usize, negatives: &[Vec<usize>]) -> Result<()> {
    if negatives.len() != n {
        return Err(Error::DimensionMismatch {
            context: "negative lists per pair",
            expected: n,
            found: negatives.len(),
        });
    }
    for (i, list) in negatives.iter().enumerate() {
        if list.contains(&i) {
            return Err(Error::SelfNegative(i));
        }
        if let Some(&j) = list.iter().find(|&&j| j >= n) {
            return Err(Error::DimensionMismatch {
                context: "negative index",
                expected: n,
                found: j,
            });
        }
    }
    Ok(())
}

/// `sum_i sum_{j in negs(i)} tau(margin - cos(p_i, y_i) + cos(p_i, y_j))`
pub fn mm_loss(
    preds: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    negatives: &[Vec<usize>],
    margin: f64,
) -> Result<f64> {
    Ok(mm_loss_grad(preds, targets, negatives, margin)?.0)
}

/// Loss and gradient with respect to `preds`.
pub fn mm_loss_grad(
    preds: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    negatives: &[Vec<usize>],
    margin: f64,
) -> Result<(f64, Array2<f64>)> {
    if preds.dim() != targets.dim() {
        return Err(Error::DimensionMismatch {
            context: "predictions vs targets",
            expected: targets.len(),
            found: preds.len(),
        });
    }
    check_negatives(preds.nrows(), negatives)?;
    let mut grad = Array2::zeros(preds.raw_dim());
    let mut loss = 0.0;
    for (i, negs) in negatives.iter().enumerate() {
        let p = preds.row(i);
        let (pos, pos_grad) = cosine_grad(p, targets.row(i));
        let mut g = grad.row_mut(i);
        for &j in negs {
            let (neg, neg_grad) = cosine_grad(p, targets.row(j));
            let hinge = margin - pos + neg;
            if hinge > 0.0 {
                loss += hinge;
                g -= &pos_grad;
                g += &neg_grad;
            }
        }
    }
    Ok((loss, grad))
}

/// `k` distinct in-batch negatives per row, never the row itself.
pub fn sample_negatives<R: Rng + ?Sized>(batch: usize, k: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let k = k.min(batch.saturating_sub(1));
    (0..batch)
        .map(|i| {
            sample(rng, batch - 1, k)
                .into_iter()
                .map(|j| if j >= i { j + 1 } else { j })
                .collect()
        })
        .collect()
}

/// Mean cosine between eval-mode predictions and targets.
pub fn mean_cosine(net: &MlpNetwork, pairs: &TrainingPairs) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let preds = predict_chunked(net, pairs.originals.view())?;
    Ok(preds
        .outer_iter()
        .zip(pairs.targets.outer_iter())
        .map(|(p, y)| cosine_unchecked(p, y))
        .sum::<f64>()
        / pairs.len() as f64)
}

const PREDICT_CHUNK: usize = 4096;

pub(crate) fn predict_chunked(net: &MlpNetwork, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((x.nrows(), net.output_dim()));
    for start in (0..x.nrows()).step_by(PREDICT_CHUNK) {
        let end = (start + PREDICT_CHUNK).min(x.nrows());
        out.slice_mut(s![start..end, ..])
            .assign(&net.predict(x.slice(s![start..end, ..]))?);
    }
    Ok(out)
}

/// One max-margin SGD step on `G`; returns the summed batch loss.
pub(crate) fn mm_step<R: Rng + ?Sized>(
    generator: &mut MlpNetwork,
    opt: &mut OptimizerState,
    pairs: &TrainingPairs,
    cfg: &PostSpecConfig,
    rng: &mut R,
) -> Result<f64> {
    let batch = distinct_batch(pairs.len(), cfg.batch_size, rng);
    let x = pairs.originals.select(Axis(0), &batch);
    let y = pairs.targets.select(Axis(0), &batch);
    let negatives = sample_negatives(batch.len(), cfg.negatives_per_pair, rng);
    let (preds, cache) = generator.forward(x.view(), Mode::Train, rng)?;
    let (loss, grad) = mm_loss_grad(preds.view(), y.view(), &negatives, cfg.margin)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("max-margin loss".into()));
    }
    let (mut grads, _) = generator.backward(&cache, grad.view())?;
    grads.scale(1.0 / batch.len() as f64);
    generator.apply_gradients(&grads, opt)?;
    Ok(loss)
}

/// Distinct rows so that in-batch negatives are genuinely other words.
pub(crate) fn distinct_batch<R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> Vec<usize> {
    sample(rng, n, size.min(n)).into_vec()
}

/// Per-epoch learning-rate rule: multiply by `decay`, or by `plateau_decay`
/// when the validation score did not improve on the best so far.
#[derive(Clone, Debug)]
pub struct LrSchedule {
    pub decay: f64,
    pub plateau_decay: f64,
    best: f64,
}

impl LrSchedule {
    pub fn new(decay: f64, plateau_decay: f64) -> Self {
        LrSchedule {
            decay,
            plateau_decay,
            best: f64::NEG_INFINITY,
        }
    }

    /// Factor to apply to the learning rate after an epoch scoring `score`.
    pub fn factor(&mut self, score: f64) -> f64 {
        if score > self.best {
            self.best = score;
            self.decay
        } else {
            self.plateau_decay
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PostSpecEpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mm_loss: f64,
    pub validation: f64,
}

#[derive(Clone, Debug)]
pub struct PostSpecOutcome {
    /// Generator with the best validation score.
    pub generator: MlpNetwork,
    pub best_validation: f64,
    pub log: Vec<PostSpecEpochLog>,
}

pub(crate) fn prepare_pairs(
    pairs: &TrainingPairs,
    cfg: &PostSpecConfig,
    seed: u64,
) -> Result<(TrainingPairs, TrainingPairs)> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no training pairs".into()));
    }
    let (train, val) = pairs.split(cfg.validation_fraction, seed);
    if train.len() < cfg.batch_size {
        return Err(Error::config(
            "batch_size",
            format!(
                "{} training pairs cannot fill a batch of {}",
                train.len(),
                cfg.batch_size
            ),
        ));
    }
    Ok((train, val))
}

/// Fit `G` with the max-margin loss (the POST-DFFN baseline).
pub fn train_postspec(
    pairs: &TrainingPairs,
    cfg: &PostSpecConfig,
    seed: u64,
) -> Result<PostSpecOutcome> {
    cfg.validate()?;
    let (train, val) = prepare_pairs(pairs, cfg, seed)?;
    let monitor = if val.is_empty() { &train } else { &val };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut generator = MlpNetwork::new(cfg.generator.spec(pairs.dim()), &mut rng)?;
    let mut opt = OptimizerState::sgd(cfg.learning_rate);
    let mut schedule = LrSchedule::new(cfg.decay, cfg.plateau_decay);
    let iterations = cfg.iterations_for(train.len());

    let mut best = (mean_cosine(&generator, monitor)?, generator.clone());
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        for _ in 0..iterations {
            total += mm_step(&mut generator, &mut opt, &train, cfg, &mut rng)?;
        }
        let score = mean_cosine(&generator, monitor)?;
        if !score.is_finite() {
            return Err(Error::NonFinite(format!("validation score at epoch {epoch}")));
        }
        log.push(PostSpecEpochLog {
            epoch,
            learning_rate: opt.learning_rate,
            mm_loss: total / iterations as f64,
            validation: score,
        });
        info!(
            "post-specialization epoch {epoch}: mm {:.4} validation {score:.4} lr {:.4}",
            total / iterations as f64,
            opt.learning_rate
        );
        if score > best.0 {
            best = (score, generator.clone());
        }
        opt.learning_rate *= schedule.factor(score);
    }
    if val.is_empty() {
        warn!("no validation split; best generator chosen on training pairs");
    }
    Ok(PostSpecOutcome {
        generator: best.1,
        best_validation: best.0,
        log,
    })
}

/// Transform every row with `G` in eval mode and re-normalize.
pub fn apply_map(net: &MlpNetwork, space: &EmbeddingSpace) -> Result<EmbeddingSpace> {
    if net.input_dim() != space.dim() {
        return Err(Error::DimensionMismatch {
            context: "generator input vs space",
            expected: net.input_dim(),
            found: space.dim(),
        });
    }
    let mut out = predict_chunked(net, space.matrix())?;
    normalize_rows(&mut out);
    space.with_matrix(out)
}
