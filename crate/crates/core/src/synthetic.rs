//! Synthetic tasks with a known ground-truth specialization map, used to
//! check post-specialization and zero-shot transfer end to end.
//!
//! Word vectors are drawn from a mixture of many loose clusters around
//! skewed, anisotropic centres, with cluster weights decaying as a power
//! of the cluster rank. The skew and anisotropy give an unsupervised
//! aligner something to lock onto. The clusters stay loose enough that
//! in-batch negatives remain distinguishable for the ranking loss.

use nalgebra::DMatrix;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embed_io::{normalize_rows, EmbeddingSpace};
use crate::error::{Error, Result};
use crate::postspec::TrainingPairs;

/// Unit vectors from a skewed distribution (centred exponentials) whose
/// scale on axis `a` is `1 / sqrt(1 + a)`.
pub fn skewed_vectors<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Array2<f64> {
    let scales: Vec<f64> = (0..dim).map(|a| 1.0 / (1.0 + a as f64).sqrt()).collect();
    let mut m = Array2::from_shape_fn((n, dim), |(_, a)| {
        let e: f64 = Exp1.sample(rng);
        (e - 1.0) * scales[a]
    });
    normalize_rows(&mut m);
    m
}

/// Isotropic Gaussian noise of expected norm about `scale` added to every
/// row, then rows re-normalized.
pub fn perturb<R: Rng + ?Sized>(m: &Array2<f64>, scale: f64, rng: &mut R) -> Array2<f64> {
    let per_axis = scale / (m.ncols() as f64).sqrt();
    let mut out = m.mapv(|v| {
        let z: f64 = StandardNormal.sample(rng);
        v + per_axis * z
    });
    normalize_rows(&mut out);
    out
}

/// Haar-random orthogonal matrix (QR of a Gaussian matrix, signs fixed).
pub fn random_orthogonal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Array2<f64> {
    let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    Array2::from_shape_fn((dim, dim), |(i, j)| {
        let sign = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
        q[(i, j)] * sign
    })
}

/// Ground-truth map: `normalize(0.5 R x + 0.5 tanh(R x))`, rows as vectors.
pub fn planted_map(x: &Array2<f64>, rotation: &Array2<f64>) -> Array2<f64> {
    let rx = x.dot(&rotation.t());
    let mut y = &rx * 0.5 + &rx.mapv(f64::tanh) * 0.5;
    normalize_rows(&mut y);
    y
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub dim: usize,
    /// Words with constraints, used to train the map.
    pub seen: usize,
    /// Held-out words used only for scoring.
    pub unseen: usize,
    pub clusters: usize,
    /// Cluster `k` has weight `1 / (k + 1)^zipf_exponent`.
    pub zipf_exponent: f64,
    /// Noise norm around each cluster centre.
    pub spread: f64,
    /// Noise norm separating a target-language word from its source concept.
    pub translation_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            dim: 16,
            seen: 5_000,
            unseen: 1_000,
            clusters: 500,
            zipf_exponent: 0.5,
            spread: 0.3,
            translation_noise: 0.1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("dim", self.dim), ("seen", self.seen), ("clusters", self.clusters)] {
            if v == 0 {
                return Err(Error::config(field, "must be >= 1"));
            }
        }
        for (field, v) in [
            ("zipf_exponent", self.zipf_exponent),
            ("spread", self.spread),
            ("translation_noise", self.translation_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, "must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Cluster mixture from which concept vectors are drawn.
#[derive(Clone, Debug)]
pub struct ConceptDistribution {
    centres: Array2<f64>,
    cumulative: Vec<f64>,
    spread: f64,
}

impl ConceptDistribution {
    pub fn new<R: Rng + ?Sized>(cfg: &SyntheticConfig, rng: &mut R) -> Self {
        let mut total = 0.0;
        let cumulative = (0..cfg.clusters)
            .map(|k| {
                total += ((k + 1) as f64).powf(-cfg.zipf_exponent);
                total
            })
            .collect();
        ConceptDistribution {
            centres: skewed_vectors(cfg.clusters, cfg.dim, rng),
            cumulative,
            spread: cfg.spread,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        let total = *self.cumulative.last().expect("at least one cluster");
        let last = self.cumulative.len() - 1;
        let rows: Vec<usize> = (0..n)
            .map(|_| {
                let u = rng.random::<f64>() * total;
                self.cumulative.partition_point(|&c| c < u).min(last)
            })
            .collect();
        perturb(&self.centres.select(Axis(0), &rows), self.spread, rng)
    }
}

/// Seen pairs for training and held-out unseen pairs for scoring, both
/// labelled by the planted map.
#[derive(Clone, Debug)]
pub struct MapTask {
    pub rotation: Array2<f64>,
    pub seen: TrainingPairs,
    pub unseen: TrainingPairs,
}

impl MapTask {
    /// Original vectors of seen then unseen words.
    pub fn concepts(&self) -> Array2<f64> {
        let mut m = self.seen.originals.clone();
        m.append(Axis(0), self.unseen.originals.view())
            .expect("equal widths");
        m
    }

    /// Source space with words `s0`, `s1`, ... (seen words first).
    pub fn source_space(&self) -> Result<EmbeddingSpace> {
        named_space("s", self.concepts())
    }
}

pub fn map_task(cfg: &SyntheticConfig, seed: u64) -> Result<MapTask> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rotation = random_orthogonal(cfg.dim, &mut rng);
    let distribution = ConceptDistribution::new(cfg, &mut rng);
    let x = distribution.sample(cfg.seen + cfg.unseen, &mut rng);
    let y = planted_map(&x, &rotation);
    let pairs = TrainingPairs::new(x, y)?;
    let seen: Vec<usize> = (0..cfg.seen).collect();
    let unseen: Vec<usize> = (cfg.seen..cfg.seen + cfg.unseen).collect();
    Ok(MapTask {
        rotation,
        seen: pairs.select(&seen),
        unseen: pairs.select(&unseen),
    })
}

/// Space named `{prefix}{i}` for each row.
pub fn named_space(prefix: &str, matrix: Array2<f64>) -> Result<EmbeddingSpace> {
    let words = (0..matrix.nrows()).map(|i| format!("{prefix}{i}")).collect();
    EmbeddingSpace::new(words, matrix)
}

/// A target language for zero-shot transfer. Every source concept gets a
/// target word with its own name and a slightly perturbed vector; the
/// target vocabulary is shuffled and the whole space rotated by a planted
/// orthogonal map. `oracle` holds each target word's planted
/// specialization expressed in the source space.
#[derive(Clone, Debug)]
pub struct TransferTask {
    pub target: EmbeddingSpace,
    pub language_rotation: Array2<f64>,
    pub oracle: Array2<f64>,
    /// Target rows whose concept was an unseen source word.
    pub held_out: Vec<usize>,
}

pub fn transfer_task(task: &MapTask, cfg: &SyntheticConfig, seed: u64) -> Result<TransferTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let language_rotation = random_orthogonal(task.rotation.nrows(), &mut rng);
    let n_seen = task.seen.len();
    let concepts = task.concepts();
    let mut order: Vec<usize> = (0..concepts.nrows()).collect();
    order.shuffle(&mut rng);

    let latent = perturb(&concepts.select(Axis(0), &order), cfg.translation_noise, &mut rng);
    let oracle = planted_map(&latent, &task.rotation);
    let target = named_space("t", latent.dot(&language_rotation.t()))?;
    let held_out = order
        .iter()
        .enumerate()
        .filter(|&(_, &concept)| concept >= n_seen)
        .map(|(row, _)| row)
        .collect();
    Ok(TransferTask {
        target,
        language_rotation,
        oracle,
        held_out,
    })
}
