//! Zero-shot cross-lingual transfer of a specialization map.
//!
//! A target-language space is aligned into the source space without any
//! bilingual data: a linear map is trained adversarially against a
//! discriminator, then refined by alternating CSLS dictionary induction and
//! closed-form orthogonal Procrustes. The source-trained generator is then
//! applied to the mapped target vectors.
//!
//! Vectors are stored as matrix rows throughout. A map `W` sends a target
//! vector `t` to `W t`, so a row matrix `T` maps to `T Wᵀ`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::{info, warn};
use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::auxgan::{d_loss_grad, DiscriminatorConfig, SPECIALIZED};
use crate::embed_io::{cosine_unchecked, normalize_rows, EmbeddingSpace};
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, MlpNetwork, Mode, OptimizerState};
use crate::postspec::{apply_map, LrSchedule};

/// Orthogonal (or near-orthogonal) linear map from target into source space.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentMap {
    pub w: Array2<f64>,
}

impl AlignmentMap {
    pub fn identity(dim: usize) -> Self {
        AlignmentMap { w: Array2::eye(dim) }
    }

    pub fn new(w: Array2<f64>) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::DimensionMismatch {
                context: "alignment map must be square",
                expected: w.nrows(),
                found: w.ncols(),
            });
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("alignment map".into()));
        }
        Ok(AlignmentMap { w })
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    /// `W` applied to every row of `rows`.
    pub fn map_rows(&self, rows: ArrayView2<f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "alignment map vs vectors",
                expected: self.dim(),
                found: rows.ncols(),
            });
        }
        Ok(rows.dot(&self.w.t()))
    }

    /// `||W Wᵀ - I||_F`
    pub fn orthogonality_error(&self) -> f64 {
        let gram = self.w.dot(&self.w.t()) - Array2::<f64>::eye(self.dim());
        gram.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `W <- (1 + beta) W - beta (W Wᵀ) W`
    pub fn orthogonalize(&mut self, beta: f64) {
        let wwt_w = self.w.dot(&self.w.t()).dot(&self.w);
        self.w = &self.w * (1.0 + beta) - wwt_w * beta;
    }

    /// Apply [`orthogonalize`](Self::orthogonalize) at least once and then
    /// until the orthogonality error is at most `tolerance`. Returns the
    /// number of applications.
    pub fn orthogonalize_within(&mut self, beta: f64, tolerance: f64) -> Result<usize> {
        const MAX_ROUNDS: usize = 100_000;
        for round in 1..=MAX_ROUNDS {
            self.orthogonalize(beta);
            let err = self.orthogonality_error();
            if !err.is_finite() {
                return Err(Error::NonFinite("alignment map".into()));
            }
            if err <= tolerance {
                return Ok(round);
            }
        }
        Err(Error::Diverged(format!(
            "orthogonalization did not reach {tolerance} in {MAX_ROUNDS} rounds"
        )))
    }
}

/// Writes `d d` on the first line, then one row per line.
pub fn write_map<W: Write>(map: &AlignmentMap, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{} {}", map.dim(), map.dim())?;
    for row in map.w.outer_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn save_map(map: &AlignmentMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_map(map, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_map<R: BufRead>(input: R) -> Result<AlignmentMap> {
    let mut lines = input.lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse {
        line: line + 1,
        message,
    };
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::EmptyInput("map file".into()))?;
    let header = header.map_err(|e| Error::io("<map>", e))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(0, format!("bad header {header:?}")))?;
    let d = match dims.as_slice() {
        [r, c] if r == c && *r > 0 => *r,
        _ => return Err(parse_err(0, format!("expected `d d`, found {header:?}"))),
    };
    let mut values = Vec::with_capacity(d * d);
    for (n, line) in lines {
        let line = line.map_err(|e| Error::io("<map>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(n, "bad number".into()))?;
        if row.len() != d {
            return Err(Error::InconsistentDimension {
                line: n + 1,
                expected: d,
                found: row.len(),
            });
        }
        values.extend(row);
    }
    if values.len() != d * d {
        return Err(parse_err(d, format!("expected {d} rows")));
    }
    AlignmentMap::new(Array2::from_shape_vec((d, d), values).expect("d*d values"))
}

pub fn load_map(path: impl AsRef<Path>) -> Result<AlignmentMap> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_map(BufReader::new(file))
}

const CHUNK: usize = 1024;

fn unit_rows(m: ArrayView2<f64>) -> Array2<f64> {
    let mut m = m.to_owned();
    normalize_rows(&mut m);
    m
}

fn check_k(k: usize, available: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::config("csls_k", "must be >= 1"));
    }
    if k > available {
        return Err(Error::NeighbourhoodTooLarge { k, available });
    }
    Ok(())
}

/// Mean cosine of every query to its `k` nearest candidates.
pub fn mean_topk_cosines(
    queries: ArrayView2<f64>,
    candidates: ArrayView2<f64>,
    k: usize,
) -> Result<Array1<f64>> {
    check_k(k, candidates.nrows())?;
    let q = unit_rows(queries);
    let c = unit_rows(candidates);
    let mut out = Array1::zeros(q.nrows());
    for start in (0..q.nrows()).step_by(CHUNK) {
        let end = (start + CHUNK).min(q.nrows());
        let cos = q.slice(s![start..end, ..]).dot(&c.t());
        for (i, row) in cos.outer_iter().enumerate() {
            let mut v = row.to_vec();
            v.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
            out[start + i] = v[..k].iter().sum::<f64>() / k as f64;
        }
    }
    Ok(out)
}

/// `CSLS(q, c_j) = 2 cos(q, c_j) - r_query - r_candidates[j]` for every
/// candidate row `c_j`, where the `r` values are mean top-`k` cosines.
pub fn csls_scores(
    query: ArrayView1<f64>,
    candidates: ArrayView2<f64>,
    k: usize,
    r_query: f64,
    r_candidates: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    check_k(k, candidates.nrows())?;
    if r_candidates.len() != candidates.nrows() {
        return Err(Error::DimensionMismatch {
            context: "candidate neighbourhood scores",
            expected: candidates.nrows(),
            found: r_candidates.len(),
        });
    }
    Ok(Array1::from_iter(
        candidates
            .outer_iter()
            .zip(r_candidates)
            .map(|(c, rc)| 2.0 * cosine_unchecked(query, c) - r_query - rc),
    ))
}

/// Precomputed CSLS between a query set and a candidate set.
#[derive(Clone, Debug)]
pub struct Csls {
    queries: Array2<f64>,
    candidates: Array2<f64>,
    r_queries: Array1<f64>,
    r_candidates: Array1<f64>,
}

impl Csls {
    pub fn new(queries: ArrayView2<f64>, candidates: ArrayView2<f64>, k: usize) -> Result<Self> {
        check_k(k, queries.nrows())?;
        Ok(Csls {
            r_queries: mean_topk_cosines(queries, candidates, k)?,
            r_candidates: mean_topk_cosines(candidates, queries, k)?,
            queries: unit_rows(queries),
            candidates: unit_rows(candidates),
        })
    }

    pub fn r_queries(&self) -> ArrayView1<'_, f64> {
        self.r_queries.view()
    }

    pub fn r_candidates(&self) -> ArrayView1<'_, f64> {
        self.r_candidates.view()
    }

    pub fn scores(&self, query: usize) -> Array1<f64> {
        let cos = self.candidates.dot(&self.queries.row(query));
        2.0 * cos - self.r_queries[query] - &self.r_candidates
    }

    /// Best candidate for every query and best query for every candidate;
    /// ties go to the lower index.
    pub fn argmaxes(&self) -> (Vec<(usize, f64)>, Vec<usize>) {
        let nc = self.candidates.nrows();
        let mut by_query = Vec::with_capacity(self.queries.nrows());
        let mut by_candidate = vec![(usize::MAX, f64::NEG_INFINITY); nc];
        for start in (0..self.queries.nrows()).step_by(CHUNK) {
            let end = (start + CHUNK).min(self.queries.nrows());
            let cos = self.queries.slice(s![start..end, ..]).dot(&self.candidates.t());
            for (off, row) in cos.outer_iter().enumerate() {
                let i = start + off;
                let mut best = (usize::MAX, f64::NEG_INFINITY);
                for (j, &c) in row.iter().enumerate() {
                    let score = 2.0 * c - self.r_queries[i] - self.r_candidates[j];
                    if score > best.1 {
                        best = (j, score);
                    }
                    if score > by_candidate[j].1 {
                        by_candidate[j] = (i, score);
                    }
                }
                by_query.push(best);
            }
        }
        (by_query, by_candidate.into_iter().map(|(i, _)| i).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DictionaryEntry {
    pub source: usize,
    pub target: usize,
    pub score: f64,
}

/// Induced bilingual dictionary over row indices of the two spaces.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SyntheticDictionary {
    pub entries: Vec<DictionaryEntry>,
}

impl SyntheticDictionary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Mean cosine between each source vector and its mapped target.
    pub fn mean_cosine(
        &self,
        source: &EmbeddingSpace,
        target: &EmbeddingSpace,
        map: &AlignmentMap,
    ) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyDictionary);
        }
        let mut total = 0.0;
        for e in &self.entries {
            let mapped = map.w.dot(&target.row(e.target));
            total += cosine_unchecked(source.row(e.source), mapped.view());
        }
        Ok(total / self.len() as f64)
    }
}

fn leading(space: &EmbeddingSpace, n: usize) -> ArrayView2<'_, f64> {
    space.matrix().slice_move(s![..n.min(space.len()), ..])
}

/// Mutual CSLS nearest neighbours among the first `top_n` words of each
/// space (spaces are assumed frequency-ordered).
pub fn build_dictionary(
    source: &EmbeddingSpace,
    target: &EmbeddingSpace,
    map: &AlignmentMap,
    k: usize,
    top_n: usize,
) -> Result<SyntheticDictionary> {
    check_dims(source, target, map)?;
    let mapped = map.map_rows(leading(target, top_n))?;
    let csls = Csls::new(leading(source, top_n), mapped.view(), k)?;
    let (by_source, by_target) = csls.argmaxes();
    let entries: Vec<DictionaryEntry> = by_source
        .into_iter()
        .enumerate()
        .filter(|&(i, (j, _))| by_target[j] == i)
        .map(|(i, (j, score))| DictionaryEntry {
            source: i,
            target: j,
            score,
        })
        .collect();
    if entries.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    Ok(SyntheticDictionary { entries })
}

/// Unsupervised model-selection criterion: mean cosine between each of the
/// first `n_words` source words and its CSLS-nearest mapped target.
pub fn unsupervised_metric(
    source: &EmbeddingSpace,
    target: &EmbeddingSpace,
    map: &AlignmentMap,
    k: usize,
    n_words: usize,
) -> Result<f64> {
    check_dims(source, target, map)?;
    let src = leading(source, n_words);
    let mapped = map.map_rows(leading(target, n_words))?;
    let csls = Csls::new(src, mapped.view(), k)?;
    let (by_source, _) = csls.argmaxes();
    Ok(by_source
        .iter()
        .enumerate()
        .map(|(i, &(j, _))| cosine_unchecked(src.row(i), mapped.row(j)))
        .sum::<f64>()
        / by_source.len() as f64)
}

fn check_dims(source: &EmbeddingSpace, target: &EmbeddingSpace, map: &AlignmentMap) -> Result<()> {
    for (context, found) in [("source space", source.dim()), ("target space", target.dim())] {
        if found != map.dim() {
            return Err(Error::DimensionMismatch {
                context,
                expected: map.dim(),
                found,
            });
        }
    }
    Ok(())
}

/// Orthogonal `W` minimizing `sum_i ||W t_i - s_i||^2` over paired rows.
/// With `UΣVᵀ = SVD(X_t X_sᵀ)` for column-vector matrices, the minimizer
/// is `V Uᵀ`.
pub fn procrustes(target_rows: ArrayView2<f64>, source_rows: ArrayView2<f64>) -> Result<AlignmentMap> {
    if target_rows.dim() != source_rows.dim() {
        return Err(Error::DimensionMismatch {
            context: "procrustes pairs",
            expected: target_rows.nrows(),
            found: source_rows.nrows(),
        });
    }
    let d = target_rows.ncols();
    if target_rows.nrows() < d {
        warn!(
            "procrustes with {} pairs in {d} dimensions; the solution is not unique",
            target_rows.nrows()
        );
    }
    let m = target_rows.t().dot(&source_rows);
    let cross = DMatrix::from_fn(d, d, |i, j| m[(i, j)]);
    let svd = cross.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    if svd.singular_values.iter().any(|&s| s <= 1e-12 * svd.singular_values.max()) {
        warn!("rank-deficient cross-covariance; procrustes solution is not unique");
    }
    let w = v_t.transpose() * u.transpose();
    AlignmentMap::new(Array2::from_shape_fn((d, d), |(i, j)| w[(i, j)]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    /// Orthogonalization step size `beta`.
    pub beta: f64,
    /// Largest `||W Wᵀ - I||_F` tolerated after a map update.
    pub orthogonality_tolerance: f64,
    pub csls_k: usize,
    /// Dictionary vocabulary cutoff.
    pub top_n: usize,
    pub refinements: usize,
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    pub batch_size: usize,
    /// Discriminator learning rate.
    pub learning_rate: f64,
    /// Learning rate of the map `W`.
    pub map_learning_rate: f64,
    pub decay: f64,
    pub plateau_decay: f64,
    pub d_steps: usize,
    pub label_smoothing: f64,
    pub discriminator: DiscriminatorConfig,
    /// Adversarial batches are drawn from this many most frequent words.
    pub adversarial_vocab: usize,
    pub checks_per_epoch: usize,
    /// Words per side used by the unsupervised selection metric.
    pub metric_words: usize,
    /// Checks without improvement before adversarial training stops.
    pub patience: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            beta: 0.01,
            orthogonality_tolerance: 0.05,
            csls_k: 10,
            top_n: 10_000,
            refinements: 5,
            epochs: 5,
            iterations_per_epoch: 2_000,
            batch_size: 32,
            learning_rate: 0.1,
            map_learning_rate: 0.1,
            decay: 0.98,
            plateau_decay: 0.5,
            d_steps: 5,
            label_smoothing: 0.1,
            discriminator: DiscriminatorConfig {
                input_dropout: 0.0,
                hidden_dropout: 0.0,
                ..DiscriminatorConfig::default()
            },
            adversarial_vocab: 75_000,
            checks_per_epoch: 5,
            metric_words: 5_000,
            patience: 10,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 0.5) {
            return Err(Error::config("beta", "must be in (0, 0.5)"));
        }
        if !(self.orthogonality_tolerance > 0.0) {
            return Err(Error::config("orthogonality_tolerance", "must be positive"));
        }
        let positive = [
            ("csls_k", self.csls_k),
            ("top_n", self.top_n),
            ("epochs", self.epochs),
            ("iterations_per_epoch", self.iterations_per_epoch),
            ("batch_size", self.batch_size),
            ("d_steps", self.d_steps),
            ("adversarial_vocab", self.adversarial_vocab),
            ("checks_per_epoch", self.checks_per_epoch),
            ("metric_words", self.metric_words),
            ("patience", self.patience),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be >= 1"));
            }
        }
        for (field, v) in [
            ("learning_rate", self.learning_rate),
            ("map_learning_rate", self.map_learning_rate),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return Err(Error::config("label_smoothing", "must be in [0, 0.5)"));
        }
        self.discriminator.spec(1).validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlignLogRecord {
    pub epoch: usize,
    pub iteration: usize,
    pub d_loss: f64,
    pub metric: f64,
    pub orthogonality_error: f64,
}

#[derive(Clone, Debug)]
pub struct AlignOutcome {
    /// Map with the best unsupervised metric.
    pub map: AlignmentMap,
    /// Map after the last update.
    pub last_map: AlignmentMap,
    pub best_metric: f64,
    pub log: Vec<AlignLogRecord>,
}

/// Adversarial training of `W`, starting from the identity. The
/// discriminator separates source vectors from mapped target vectors; `W`
/// is updated to fool it and re-orthogonalized after every update. The map
/// with the best unsupervised metric is returned.
pub fn adv_align(
    source: &EmbeddingSpace,
    target: &EmbeddingSpace,
    cfg: &AlignConfig,
    seed: u64,
) -> Result<AlignOutcome> {
    cfg.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput("alignment needs two non-empty spaces".into()));
    }
    let dim = source.dim();
    let mut map = AlignmentMap::identity(dim);
    check_dims(source, target, &map)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = MlpNetwork::new(cfg.discriminator.spec(dim), &mut rng)?;
    let mut state = AlignState {
        d,
        d_opt: OptimizerState::sgd(cfg.learning_rate),
        map_lr: cfg.map_learning_rate,
        src: leading(source, cfg.adversarial_vocab),
        tgt: leading(target, cfg.adversarial_vocab),
    };
    let metric_words = cfg.metric_words.min(source.len()).min(target.len());
    let k = cfg.csls_k.min(metric_words);
    let metric = |m: &AlignmentMap| unsupervised_metric(source, target, m, k, metric_words);

    let mut best = (metric(&map)?, map.clone());
    let mut since_best = 0;
    let mut schedule = LrSchedule::new(cfg.decay, cfg.plateau_decay);
    let check_every = (cfg.iterations_per_epoch / cfg.checks_per_epoch).max(1);
    let mut log = Vec::new();
    let mut d_window = (0.0, 0usize);
    'epochs: for epoch in 1..=cfg.epochs {
        let mut epoch_score = f64::NEG_INFINITY;
        for it in 1..=cfg.iterations_per_epoch {
            for _ in 0..cfg.d_steps {
                let (loss, n) = state.d_step(&map, cfg, &mut rng)?;
                d_window.0 += loss;
                d_window.1 += n;
            }
            state.map_step(&mut map, cfg, &mut rng)?;
            if it % check_every != 0 && it != cfg.iterations_per_epoch {
                continue;
            }
            let score = metric(&map)?;
            epoch_score = epoch_score.max(score);
            log.push(AlignLogRecord {
                epoch,
                iteration: (epoch - 1) * cfg.iterations_per_epoch + it,
                d_loss: d_window.0 / d_window.1.max(1) as f64,
                metric: score,
                orthogonality_error: map.orthogonality_error(),
            });
            d_window = (0.0, 0);
            if score > best.0 {
                best = (score, map.clone());
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    info!("alignment metric stalled for {since_best} checks; stopping");
                    break 'epochs;
                }
            }
        }
        info!("alignment epoch {epoch}: best metric {:.4}", best.0);
        let factor = schedule.factor(epoch_score);
        state.map_lr *= factor;
        state.d_opt.learning_rate *= factor;
    }
    if log.iter().all(|r| r.metric <= log.first().map_or(f64::NEG_INFINITY, |f| f.metric))
        && best.1 == AlignmentMap::identity(dim)
    {
        warn!("adversarial alignment never improved on the identity map");
    }
    Ok(AlignOutcome {
        last_map: map,
        map: best.1,
        best_metric: best.0,
        log,
    })
}

struct AlignState<'a> {
    d: MlpNetwork,
    d_opt: OptimizerState,
    map_lr: f64,
    src: ArrayView2<'a, f64>,
    tgt: ArrayView2<'a, f64>,
}

impl AlignState<'_> {
    fn batch<R: Rng + ?Sized>(rows: ArrayView2<f64>, size: usize, rng: &mut R) -> Array2<f64> {
        let idx: Vec<usize> = (0..size).map(|_| rng.random_range(0..rows.nrows())).collect();
        rows.select(Axis(0), &idx)
    }

    fn d_step<R: Rng + ?Sized>(
        &mut self,
        map: &AlignmentMap,
        cfg: &AlignConfig,
        rng: &mut R,
    ) -> Result<(f64, usize)> {
        let mapped = map.map_rows(Self::batch(self.tgt, cfg.batch_size, rng).view())?;
        let real = Self::batch(self.src, cfg.batch_size, rng);
        let (loss, mut grads) =
            d_loss_grad(&self.d, mapped.view(), real.view(), cfg.label_smoothing, rng)?;
        let n = 2 * cfg.batch_size;
        grads.scale(1.0 / n as f64);
        self.d.apply_gradients(&grads, &mut self.d_opt)?;
        Ok((loss, n))
    }

    /// Gradient step on `W` through a frozen discriminator, then
    /// re-orthogonalization.
    fn map_step<R: Rng + ?Sized>(
        &mut self,
        map: &mut AlignmentMap,
        cfg: &AlignConfig,
        rng: &mut R,
    ) -> Result<()> {
        let t = Self::batch(self.tgt, cfg.batch_size, rng);
        let (_, grad_w) = map_adv_loss_grad(&self.d, map, t.view(), cfg.label_smoothing, rng)?;
        map.w.scaled_add(-self.map_lr / cfg.batch_size as f64, &grad_w);
        map.orthogonalize_within(cfg.beta, cfg.orthogonality_tolerance)?;
        Ok(())
    }
}

/// Adversarial loss of the map (mapped target rows labelled as source) and
/// its gradient with respect to `W`, through a training-mode discriminator.
pub fn map_adv_loss_grad<R: Rng + ?Sized>(
    d: &MlpNetwork,
    map: &AlignmentMap,
    target_rows: ArrayView2<f64>,
    smoothing: f64,
    rng: &mut R,
) -> Result<(f64, Array2<f64>)> {
    let mapped = map.map_rows(target_rows)?;
    let (logits, cache) = d.forward(mapped.view(), Mode::Train, rng)?;
    let (loss, grad_logits) = softmax_cross_entropy(logits.view(), SPECIALIZED, smoothing);
    let (_, grad_mapped) = d.backward(&cache, grad_logits.view())?;
    Ok((loss, grad_mapped.t().dot(&target_rows)))
}

/// Mean cosine of the dictionary each refinement round fitted, measured
/// before and after its Procrustes update.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefinementRecord {
    pub round: usize,
    pub dictionary_size: usize,
    pub mean_cosine_before: f64,
    pub mean_cosine_after: f64,
}

/// Alternate dictionary induction and Procrustes `cfg.refinements` times.
pub fn refine(
    source: &EmbeddingSpace,
    target: &EmbeddingSpace,
    initial: &AlignmentMap,
    cfg: &AlignConfig,
) -> Result<(AlignmentMap, Vec<RefinementRecord>)> {
    let top_n = cfg.top_n.min(source.len()).min(target.len());
    let k = cfg.csls_k.min(top_n);
    let mut map = initial.clone();
    let mut records = Vec::with_capacity(cfg.refinements);
    for round in 1..=cfg.refinements {
        let dict = build_dictionary(source, target, &map, k, top_n)?;
        let before = dict.mean_cosine(source, target, &map)?;
        let src_rows: Vec<usize> = dict.entries.iter().map(|e| e.source).collect();
        let tgt_rows: Vec<usize> = dict.entries.iter().map(|e| e.target).collect();
        map = procrustes(
            target.matrix().select(Axis(0), &tgt_rows).view(),
            source.matrix().select(Axis(0), &src_rows).view(),
        )?;
        let after = dict.mean_cosine(source, target, &map)?;
        info!(
            "refinement {round}: {} pairs, mean cosine {before:.4} -> {after:.4}",
            dict.len()
        );
        records.push(RefinementRecord {
            round,
            dictionary_size: dict.len(),
            mean_cosine_before: before,
            mean_cosine_after: after,
        });
    }
    Ok((map, records))
}

/// `G(W t)` for every target word, unit-normalized.
pub fn zero_shot_specialize(
    map: &AlignmentMap,
    target: &EmbeddingSpace,
    generator: &MlpNetwork,
) -> Result<EmbeddingSpace> {
    let mapped = target.with_matrix(map.map_rows(target.matrix())?)?;
    apply_map(generator, &mapped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;
    use crate::postspec::GeneratorConfig;
    use crate::synthetic::{named_space, random_orthogonal, skewed_vectors};
    use ndarray::array;
    use rand_distr::{Distribution, StandardNormal};

    fn frob(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        (a - b).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn gaussian(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(rng))
    }

    #[test]
    fn procrustes_identity_and_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs = gaussian(40, 6, &mut rng);
        let w = procrustes(xs.view(), xs.view()).unwrap();
        assert!(frob(&w.w, &Array2::eye(6)) < 1e-10);

        let r = random_orthogonal(6, &mut rng);
        let xt = xs.dot(&r.t());
        let w = procrustes(xt.view(), xs.view()).unwrap();
        assert!(frob(&w.w, &r.t().to_owned()) < 1e-8);
    }

    #[test]
    fn procrustes_is_orthogonal_global_minimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let xt = gaussian(30, 5, &mut rng);
            let xs = gaussian(30, 5, &mut rng);
            let w = procrustes(xt.view(), xs.view()).unwrap();
            assert!(w.orthogonality_error() < 1e-10);
            let cost = |m: &Array2<f64>| frob(&xt.dot(&m.t()), &xs);
            let best = cost(&w.w);
            for _ in 0..10 {
                let perturbed = w.w.dot(&random_orthogonal(5, &mut rng));
                assert!(cost(&perturbed) >= best - 1e-9);
            }
        }
    }

    #[test]
    fn orthogonalize_pulls_towards_orthogonal() {
        let mut map = AlignmentMap::new(array![[1.05, 0.02], [0.0, 0.97]]).unwrap();
        let start = map.orthogonality_error();
        for _ in 0..200 {
            map.orthogonalize(0.01);
        }
        assert!(map.orthogonality_error() < start * 0.1);
        let mut id = AlignmentMap::identity(4);
        id.orthogonalize(0.01);
        assert_eq!(id, AlignmentMap::identity(4));
    }

    #[test]
    fn csls_degenerate_and_errors() {
        let q = array![1.0, 0.0];
        let cands = array![[2.0, 0.0], [3.0, 0.0], [1.0, 0.0]];
        let r = mean_topk_cosines(cands.view(), q.view().insert_axis(Axis(0)), 1).unwrap();
        let scores = csls_scores(q.view(), cands.view(), 2, 1.0, r.view()).unwrap();
        assert!(scores.iter().all(|s| s.abs() < 1e-12));
        assert!(matches!(
            mean_topk_cosines(q.view().insert_axis(Axis(0)), cands.view(), 4),
            Err(Error::NeighbourhoodTooLarge { k: 4, available: 3 })
        ));
    }

    #[test]
    fn csls_with_full_neighbourhood_is_cosine_minus_candidate_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = gaussian(7, 4, &mut rng);
        let c = gaussian(9, 4, &mut rng);
        let csls = Csls::new(q.view(), c.view(), 7).unwrap();
        let full_r = mean_topk_cosines(c.view(), q.view(), 7).unwrap();
        for i in 0..7 {
            let scores = csls.scores(i);
            for j in 0..9 {
                let expected = 2.0 * cosine_unchecked(q.row(i), c.row(j)) - full_r[j];
                assert!((scores[j] + csls.r_queries()[i] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dictionary_on_identical_spaces_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let space = named_space("w", skewed_vectors(60, 5, &mut rng)).unwrap();
        let dict = build_dictionary(&space, &space, &AlignmentMap::identity(5), 3, 40).unwrap();
        assert_eq!(dict.len(), 40);
        assert!(dict.entries.iter().all(|e| e.source == e.target));
    }

    #[test]
    fn non_mutual_pairs_excluded() {
        // Source 0 and 1 both prefer target 0; target 0 prefers source 0.
        let src = named_space("s", array![[1.0, 0.0], [0.9, 0.436], [0.0, 1.0]]).unwrap();
        let tgt = named_space("t", array![[1.0, 0.05], [-0.6, 0.8], [0.1, 1.0]]).unwrap();
        let dict = build_dictionary(&src, &tgt, &AlignmentMap::identity(2), 1, 3).unwrap();
        let pairs: Vec<(usize, usize)> = dict.entries.iter().map(|e| (e.source, e.target)).collect();
        assert_eq!(pairs, vec![(0, 0), (2, 2)]);
    }

    #[test]
    fn planted_rotation_dictionary_and_refinement() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 8;
        let x = skewed_vectors(400, d, &mut rng);
        let r = random_orthogonal(d, &mut rng);
        let source = named_space("s", x.clone()).unwrap();
        let target = named_space("t", x.dot(&r.t())).unwrap();
        let near = AlignmentMap::new(r.t().dot(&random_small_rotation(d, &mut rng))).unwrap();
        let dict = build_dictionary(&source, &target, &near, 10, 400).unwrap();
        let correct = dict.entries.iter().filter(|e| e.source == e.target).count();
        assert!(correct as f64 >= 0.95 * dict.len() as f64, "{correct}/{}", dict.len());

        let cfg = AlignConfig::default();
        let (refined, records) = refine(&source, &target, &near, &cfg).unwrap();
        assert!(frob(&refined.w, &r.t().to_owned()) < 1e-6);
        assert!(refined.orthogonality_error() < 1e-6);
        for pair in records.windows(2) {
            assert!(pair[1].mean_cosine_before >= pair[0].mean_cosine_before - 1e-12);
        }
    }

    #[test]
    fn map_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = DiscriminatorConfig {
            hidden_size: 8,
            input_dropout: 0.1,
            ..Default::default()
        };
        let d = MlpNetwork::new(cfg.spec(4), &mut rng).unwrap();
        let map = AlignmentMap::new(random_orthogonal(4, &mut rng)).unwrap();
        let t = gaussian(5, 4, &mut rng);
        let (_, g) =
            map_adv_loss_grad(&d, &map, t.view(), 0.1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut flat = map.w.clone().into_raw_vec_and_offset().0;
        let numeric = crate::nn::central_difference(&mut flat, 1e-6, |w| {
            let m = AlignmentMap::new(Array2::from_shape_vec((4, 4), w.to_vec()).unwrap()).unwrap();
            map_adv_loss_grad(&d, &m, t.view(), 0.1, &mut ChaCha8Rng::seed_from_u64(1))
                .unwrap()
                .0
        });
        for (a, n) in g.iter().zip(&numeric) {
            assert!(crate::nn::relative_error(*a, *n) < 1e-4, "{a} vs {n}");
        }
    }

    fn random_small_rotation(d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        // Orthogonal polar factor of I + small noise.
        let noisy = Array2::<f64>::eye(d) + gaussian(d, d, rng) * 0.05;
        procrustes(Array2::<f64>::eye(d).view(), noisy.view()).unwrap().w
    }

    #[test]
    fn zero_shot_identity_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let target = named_space("t", skewed_vectors(30, 4, &mut rng)).unwrap();
        let spec = GeneratorConfig {
            hidden_layers: 0,
            ..Default::default()
        }
        .spec(4);
        let g = MlpNetwork::from_layers(
            spec,
            vec![Dense {
                weights: Array2::eye(4),
                bias: Array1::zeros(4),
            }],
        )
        .unwrap();
        let out = zero_shot_specialize(&AlignmentMap::identity(4), &target, &g).unwrap();
        assert_eq!(out.len(), target.len());
        assert!(frob(&out.matrix().to_owned(), &target.matrix().to_owned()) < 1e-12);
    }

    #[test]
    fn map_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let map = AlignmentMap::new(random_orthogonal(5, &mut rng)).unwrap();
        let mut buf = Vec::new();
        write_map(&map, &mut buf).unwrap();
        assert_eq!(read_map(buf.as_slice()).unwrap(), map);
        assert!(read_map("2 3\n1 2 3\n".as_bytes()).is_err());
        assert!(matches!(
            read_map("2 2\n1 0\n0\n".as_bytes()),
            Err(Error::InconsistentDimension { line: 3, .. })
        ));
    }

    #[test]
    fn identity_before_training_and_drift_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = skewed_vectors(300, 6, &mut rng);
        let r = random_orthogonal(6, &mut rng);
        let source = named_space("s", x.clone()).unwrap();
        let target = named_space("t", x.dot(&r.t())).unwrap();
        let cfg = AlignConfig {
            epochs: 1,
            iterations_per_epoch: 300,
            metric_words: 300,
            discriminator: DiscriminatorConfig {
                hidden_size: 32,
                input_dropout: 0.0,
                hidden_dropout: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = adv_align(&source, &target, &cfg, 3).unwrap();
        assert!(!out.log.is_empty());
        assert!(out.log.iter().all(|r| r.orthogonality_error < 0.05));
        assert!(out.map.orthogonality_error() < 0.05);
    }
}
