//! ATTRACT-REPEL fine-tuning of the words that occur in constraints.
//!
//! Each training step takes one ATTRACT mini-batch and one REPEL mini-batch,
//! mines a negative example for every pair member from the vectors of both
//! batches, and takes an Adagrad step on
//! `Att(B_A, T_A) + Rep(B_R, T_R) + Pre(B_A, B_R)`.
//! Words outside the constraints are never touched.

use std::collections::{BTreeMap, BTreeSet};

use log::info;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{index_pairs, ConstraintSet};
use crate::embed_io::{l2_norm, EmbeddingSpace};
use crate::error::{Error, Result};
use crate::nn::{adagrad_step};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArConfig {
    pub delta_attract: f64,
    pub delta_repel: f64,
    pub lambda_reg: f64,
    pub batch_attract: usize,
    pub batch_repel: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub epsilon: f64,
}

impl Default for ArConfig {
    fn default() -> Self {
        ArConfig {
            delta_attract: 0.6,
            delta_repel: 0.0,
            lambda_reg: 1e-9,
            batch_attract: 50,
            batch_repel: 50,
            epochs: 5,
            learning_rate: 0.05,
            epsilon: 1e-8,
        }
    }
}

impl ArConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |field, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("{v} must be a finite value >= 0")))
            }
        };
        nonneg("delta_attract", self.delta_attract)?;
        nonneg("delta_repel", self.delta_repel)?;
        nonneg("lambda_reg", self.lambda_reg)?;
        nonneg("epsilon", self.epsilon)?;
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.batch_attract == 0 {
            return Err(Error::config("batch_attract", "must be >= 1"));
        }
        if self.batch_repel == 0 {
            return Err(Error::config("batch_repel", "must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be >= 1"));
        }
        Ok(())
    }
}

/// Negatives `(t_l, t_r)` for each pair, as word indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NegativeAssignment {
    pub attract: Vec<(usize, usize)>,
    pub repel: Vec<(usize, usize)>,
}

/// Mine negatives from the vectors of both batches: the nearest candidate by
/// cosine for ATTRACT pairs, the farthest for REPEL pairs. A pair's own
/// members are never chosen; ties go to the lowest word index.
pub fn mine_negatives(
    vectors: ArrayView2<f64>,
    attract: &[(usize, usize)],
    repel: &[(usize, usize)],
) -> Result<NegativeAssignment> {
    let pool: Vec<usize> = attract
        .iter()
        .chain(repel)
        .flat_map(|&(l, r)| [l, r])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if pool.len() < 3 {
        return Err(Error::CandidatePool(pool.len()));
    }
    let unit: BTreeMap<usize, Array1<f64>> = pool
        .iter()
        .map(|&w| {
            let v = vectors.row(w);
            let n = l2_norm(v);
            (w, if n > 0.0 { &v / n } else { v.to_owned() })
        })
        .collect();

    let pick = |anchor: usize, l: usize, r: usize, nearest: bool| -> usize {
        let a = &unit[&anchor];
        let mut best: Option<(usize, f64)> = None;
        for &c in &pool {
            if c == l || c == r {
                continue;
            }
            let s = a.dot(&unit[&c]);
            let better = match best {
                None => true,
                Some((_, b)) if nearest => s > b,
                Some((_, b)) => s < b,
            };
            if better {
                best = Some((c, s));
            }
        }
        best.expect("pool has a third word").0
    };

    Ok(NegativeAssignment {
        attract: attract
            .iter()
            .map(|&(l, r)| (pick(l, l, r, true), pick(r, l, r, true)))
            .collect(),
        repel: repel
            .iter()
            .map(|&(l, r)| (pick(l, l, r, false), pick(r, l, r, false)))
            .collect(),
    })
}

/// One constraint pair together with its two negatives.
#[derive(Clone, Copy, Debug)]
pub struct PairTerm<'a> {
    pub left: ArrayView1<'a, f64>,
    pub right: ArrayView1<'a, f64>,
    pub neg_left: ArrayView1<'a, f64>,
    pub neg_right: ArrayView1<'a, f64>,
}

/// Gradients of one pair's loss with respect to its four vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct TermGrads {
    pub left: Array1<f64>,
    pub right: Array1<f64>,
    pub neg_left: Array1<f64>,
    pub neg_right: Array1<f64>,
}

impl TermGrads {
    fn zeros(dim: usize) -> Self {
        TermGrads {
            left: Array1::zeros(dim),
            right: Array1::zeros(dim),
            neg_left: Array1::zeros(dim),
            neg_right: Array1::zeros(dim),
        }
    }
}

/// `sum_i tau(d + xl.tl - xl.xr) + tau(d + xr.tr - xl.xr)`
pub fn att_loss(terms: &[PairTerm], delta_attract: f64) -> f64 {
    att_loss_grad(terms, delta_attract).0
}

pub fn att_loss_grad(terms: &[PairTerm], delta_attract: f64) -> (f64, Vec<TermGrads>) {
    let mut loss = 0.0;
    let grads = terms
        .iter()
        .map(|t| {
            let mut g = TermGrads::zeros(t.left.len());
            let pair = t.left.dot(&t.right);
            let left_hinge = delta_attract + t.left.dot(&t.neg_left) - pair;
            if left_hinge > 0.0 {
                loss += left_hinge;
                g.left += &(&t.neg_left - &t.right);
                g.neg_left += &t.left;
                g.right -= &t.left;
            }
            let right_hinge = delta_attract + t.right.dot(&t.neg_right) - pair;
            if right_hinge > 0.0 {
                loss += right_hinge;
                g.right += &(&t.neg_right - &t.left);
                g.neg_right += &t.right;
                g.left -= &t.right;
            }
            g
        })
        .collect();
    (loss, grads)
}

/// `sum_i tau(d - xl.tl + xl.xr) + tau(d - xr.tr + xl.xr)`
pub fn rep_loss(terms: &[PairTerm], delta_repel: f64) -> f64 {
    rep_loss_grad(terms, delta_repel).0
}

pub fn rep_loss_grad(terms: &[PairTerm], delta_repel: f64) -> (f64, Vec<TermGrads>) {
    let mut loss = 0.0;
    let grads = terms
        .iter()
        .map(|t| {
            let mut g = TermGrads::zeros(t.left.len());
            let pair = t.left.dot(&t.right);
            let left_hinge = delta_repel - t.left.dot(&t.neg_left) + pair;
            if left_hinge > 0.0 {
                loss += left_hinge;
                g.left += &(&t.right - &t.neg_left);
                g.neg_left -= &t.left;
                g.right += &t.left;
            }
            let right_hinge = delta_repel - t.right.dot(&t.neg_right) + pair;
            if right_hinge > 0.0 {
                loss += right_hinge;
                g.right += &(&t.left - &t.neg_right);
                g.neg_right -= &t.right;
                g.left += &t.right;
            }
            g
        })
        .collect();
    (loss, grads)
}

/// `sum_i lambda * ||y_i - x_i||_2` (the norm itself, not its square).
pub fn pre_loss(current: ArrayView2<f64>, originals: ArrayView2<f64>, lambda: f64) -> Result<f64> {
    Ok(pre_loss_grad(current, originals, lambda)?.0)
}

/// Loss and gradient with respect to `current`. Where a row has not moved,
/// the zero subgradient is used.
pub fn pre_loss_grad(
    current: ArrayView2<f64>,
    originals: ArrayView2<f64>,
    lambda: f64,
) -> Result<(f64, Array2<f64>)> {
    if current.dim() != originals.dim() {
        return Err(Error::DimensionMismatch {
            context: "preservation term operands",
            expected: originals.len(),
            found: current.len(),
        });
    }
    let diff = &current - &originals;
    let mut grad = Array2::zeros(diff.raw_dim());
    let mut loss = 0.0;
    if lambda == 0.0 {
        return Ok((0.0, grad));
    }
    for (d, mut g) in diff.outer_iter().zip(grad.outer_iter_mut()) {
        let norm = l2_norm(d);
        loss += lambda * norm;
        if norm > 0.0 {
            g.assign(&(&d * (lambda / norm)));
        }
    }
    Ok((loss, grad))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ArEpochLog {
    pub epoch: usize,
    pub att: f64,
    pub rep: f64,
    pub pre: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct ArOutcome {
    pub space: EmbeddingSpace,
    pub log: Vec<ArEpochLog>,
}

/// Losses and per-word gradients of one joint ATTRACT/REPEL step.
struct StepResult {
    att: f64,
    rep: f64,
    pre: f64,
    grads: BTreeMap<usize, Array1<f64>>,
}

fn step_gradients(
    current: &Array2<f64>,
    originals: &Array2<f64>,
    attract: &[(usize, usize)],
    repel: &[(usize, usize)],
    cfg: &ArConfig,
) -> Result<StepResult> {
    let negatives = mine_negatives(current.view(), attract, repel)?;
    let dim = current.ncols();
    let mut grads: BTreeMap<usize, Array1<f64>> = BTreeMap::new();
    let mut add = |w: usize, g: &Array1<f64>| {
        *grads.entry(w).or_insert_with(|| Array1::zeros(dim)) += g;
    };

    let terms = |pairs: &[(usize, usize)], negs: &[(usize, usize)]| -> Vec<PairTerm<'_>> {
        pairs
            .iter()
            .zip(negs)
            .map(|(&(l, r), &(tl, tr))| PairTerm {
                left: current.row(l),
                right: current.row(r),
                neg_left: current.row(tl),
                neg_right: current.row(tr),
            })
            .collect()
    };
    let (att, att_grads) = att_loss_grad(&terms(attract, &negatives.attract), cfg.delta_attract);
    let (rep, rep_grads) = rep_loss_grad(&terms(repel, &negatives.repel), cfg.delta_repel);

    for (pairs, negs, gs) in [
        (attract, &negatives.attract, &att_grads),
        (repel, &negatives.repel, &rep_grads),
    ] {
        for ((&(l, r), &(tl, tr)), g) in pairs.iter().zip(negs).zip(gs) {
            add(l, &g.left);
            add(r, &g.right);
            add(tl, &g.neg_left);
            add(tr, &g.neg_right);
        }
    }

    let members: Vec<usize> = attract
        .iter()
        .chain(repel)
        .flat_map(|&(l, r)| [l, r])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let cur = current.select(ndarray::Axis(0), &members);
    let orig = originals.select(ndarray::Axis(0), &members);
    let (pre, pre_grad) = pre_loss_grad(cur.view(), orig.view(), cfg.lambda_reg)?;
    for (&w, g) in members.iter().zip(pre_grad.outer_iter()) {
        add(w, &g.to_owned());
    }

    Ok(StepResult {
        att,
        rep,
        pre,
        grads,
    })
}

/// Fine-tune the vectors of constrained words. Rows of words that occur in
/// no constraint are returned bit-for-bit unchanged.
pub fn specialize(
    space: &EmbeddingSpace,
    cs: &ConstraintSet,
    cfg: &ArConfig,
    seed: u64,
) -> Result<ArOutcome> {
    cfg.validate()?;
    let attract = index_pairs(&cs.attract, space);
    let repel = index_pairs(&cs.repel, space);
    if attract.is_empty() && repel.is_empty() {
        return Err(Error::EmptyInput("no constraints within the vocabulary".into()));
    }
    let seen: BTreeSet<usize> = attract.iter().chain(&repel).flat_map(|&(l, r)| [l, r]).collect();

    let originals = space.matrix().to_owned();
    let mut current = originals.clone();
    let mut accumulators = Array2::<f64>::zeros(current.raw_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut a = attract.clone();
        let mut r = repel.clone();
        a.shuffle(&mut rng);
        r.shuffle(&mut rng);
        let steps = a
            .len()
            .div_ceil(cfg.batch_attract)
            .max(r.len().div_ceil(cfg.batch_repel));
        let mut entry = ArEpochLog {
            epoch: epoch + 1,
            ..Default::default()
        };
        for step in 0..steps {
            let chunk = |pairs: &[(usize, usize)], size: usize| -> Vec<(usize, usize)> {
                pairs.iter().skip(step * size).take(size).copied().collect()
            };
            let ba = chunk(&a, cfg.batch_attract);
            let br = chunk(&r, cfg.batch_repel);
            let res = step_gradients(&current, &originals, &ba, &br, cfg)?;
            entry.att += res.att;
            entry.rep += res.rep;
            entry.pre += res.pre;
            for (w, g) in res.grads {
                let mut row = current.row_mut(w);
                let mut acc = accumulators.row_mut(w);
                adagrad_step(
                    row.as_slice_mut().expect("row-major embedding matrix"),
                    g.as_slice().expect("owned gradient"),
                    acc.as_slice_mut().expect("row-major accumulators"),
                    cfg.learning_rate,
                    cfg.epsilon,
                )?;
            }
        }
        for &w in &seen {
            let mut row = current.row_mut(w);
            let n = l2_norm(row.view());
            if n > 0.0 {
                row.mapv_inplace(|v| v / n);
            }
        }
        entry.total = entry.att + entry.rep + entry.pre;
        if !entry.total.is_finite() {
            return Err(Error::NonFinite(format!("ATTRACT-REPEL loss at epoch {}", epoch + 1)));
        }
        info!(
            "attract-repel epoch {}: att {:.4} rep {:.4} pre {:.3e}",
            entry.epoch, entry.att, entry.rep, entry.pre
        );
        log.push(entry);
    }

    Ok(ArOutcome {
        space: space.with_matrix(current)?,
        log,
    })
}

/// Mean cosine over index pairs of `space`.
pub fn mean_pair_cosine(space: &EmbeddingSpace, pairs: &[(usize, usize)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs
        .iter()
        .map(|&(l, r)| crate::embed_io::cosine_unchecked(space.row(l), space.row(r)))
        .sum::<f64>()
        / pairs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{central_difference, relative_error};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};
    use proptest::prelude::*;
    use rand::Rng;

    fn term<'a>(v: &'a [Array1<f64>; 4]) -> PairTerm<'a> {
        PairTerm {
            left: v[0].view(),
            right: v[1].view(),
            neg_left: v[2].view(),
            neg_right: v[3].view(),
        }
    }

    /// Vectors realising prescribed dot products xl.xr, xl.tl, xr.tr.
    fn with_dots(pair: f64, left_neg: f64, right_neg: f64) -> [Array1<f64>; 4] {
        let xl = array![1.0, 0.0, 0.0];
        let xr = array![pair, (1.0 - pair * pair).sqrt(), 0.0];
        let tl = array![left_neg, 0.0, 0.0];
        let tr = &xr * right_neg;
        [xl, xr, tl, tr]
    }

    #[test]
    fn att_loss_hand_values() {
        assert_eq!(att_loss(&[], 0.6), 0.0);
        let v = with_dots(0.9, 0.3, 0.1);
        assert_abs_diff_eq!(att_loss(&[term(&v)], 0.6), 0.0, epsilon = 1e-9);
        let v = with_dots(0.0, 0.0, 0.0);
        assert_abs_diff_eq!(att_loss(&[term(&v)], 0.6), 1.2, epsilon = 1e-9);
    }

    #[test]
    fn rep_loss_hand_values() {
        assert_eq!(rep_loss(&[], 0.0), 0.0);
        let v = with_dots(0.5, 0.9, 0.2);
        assert_abs_diff_eq!(rep_loss(&[term(&v)], 0.0), 0.3, epsilon = 1e-9);
        // Antipodal pair: -t.x + (-1) <= 0 for any unit negative.
        let xl = array![1.0, 0.0];
        let xr = array![-1.0, 0.0];
        for angle in [0.0, 1.0, 2.5, 3.1] {
            let t = array![f64::cos(angle), f64::sin(angle)];
            let v = [xl.clone(), xr.clone(), t.clone(), -&t];
            assert_eq!(rep_loss(&[term(&v)], 0.0), 0.0);
        }
    }

    #[test]
    fn pre_loss_hand_values() {
        let x = array![[1.0, 2.0], [0.0, -1.0]];
        assert_eq!(pre_loss(x.view(), x.view(), 1e-9).unwrap(), 0.0);
        let y = array![[1.0, 4.0]];
        let x1 = array![[1.0, 2.0]];
        assert_abs_diff_eq!(pre_loss(y.view(), x1.view(), 1e-9).unwrap(), 2e-9, epsilon = 1e-18);
        assert_eq!(pre_loss(y.view(), x1.view(), 0.0).unwrap(), 0.0);
    }

    fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
        let v = Array1::from_shape_simple_fn(d, || rng.random_range(-1.0..1.0));
        let n = l2_norm(v.view());
        v / n
    }

    fn check_term_gradients(rep: bool, delta: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 6;
        let vecs: Vec<[Array1<f64>; 4]> = (0..5)
            .map(|_| std::array::from_fn(|_| random_unit(&mut rng, d)))
            .collect();
        let loss_of = |flat: &[f64]| -> f64 {
            let owned: Vec<[Array1<f64>; 4]> = (0..5)
                .map(|p| {
                    std::array::from_fn(|k| {
                        let s = (p * 4 + k) * d;
                        Array1::from(flat[s..s + d].to_vec())
                    })
                })
                .collect();
            let terms: Vec<_> = owned.iter().map(term).collect();
            if rep {
                rep_loss(&terms, delta)
            } else {
                att_loss(&terms, delta)
            }
        };
        let terms: Vec<_> = vecs.iter().map(term).collect();
        let (_, grads) = if rep {
            rep_loss_grad(&terms, delta)
        } else {
            att_loss_grad(&terms, delta)
        };
        let analytic: Vec<f64> = grads
            .iter()
            .flat_map(|g| {
                [&g.left, &g.right, &g.neg_left, &g.neg_right]
                    .into_iter()
                    .flat_map(|a| a.iter().copied())
                    .collect::<Vec<_>>()
            })
            .collect();
        let mut flat: Vec<f64> = vecs
            .iter()
            .flat_map(|v| v.iter().flat_map(|a| a.iter().copied()).collect::<Vec<_>>())
            .collect();
        let numeric = central_difference(&mut flat, 1e-5, loss_of);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!(relative_error(*a, *n) < 1e-4, "{a} vs {n}");
        }
    }

    #[test]
    fn att_and_rep_gradients_match_finite_differences() {
        for seed in 0..4 {
            check_term_gradients(false, 0.6, seed);
            check_term_gradients(true, 0.3, seed);
        }
    }

    #[test]
    fn pre_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let orig = Array2::from_shape_simple_fn((4, 5), || rng.random_range(-1.0..1.0));
        let cur = &orig + &Array2::from_shape_simple_fn((4, 5), || rng.random_range(-0.3..0.3));
        let (_, g) = pre_loss_grad(cur.view(), orig.view(), 0.7).unwrap();
        let mut flat = cur.clone().into_raw_vec_and_offset().0;
        let numeric = central_difference(&mut flat, 1e-5, |v| {
            let m = Array2::from_shape_vec((4, 5), v.to_vec()).unwrap();
            pre_loss(m.view(), orig.view(), 0.7).unwrap()
        });
        for (a, n) in g.iter().zip(&numeric) {
            assert!(relative_error(*a, *n) < 1e-4, "{a} vs {n}");
        }
    }

    #[test]
    fn attract_negative_is_unique_maximizer() {
        // Attract pair (0, 1); the repel batch supplies word 2 at cosine 0.9
        // with word 0 and word 3 at 0.1.
        let v = array![
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.9, (1.0f64 - 0.81).sqrt(), 0.0],
            [0.1, 0.0, (1.0f64 - 0.01).sqrt()],
        ];
        let negs = mine_negatives(v.view(), &[(0, 1)], &[(2, 3)]).unwrap();
        assert_eq!(negs.attract[0].0, 2);
    }

    #[test]
    fn repel_negative_is_unique_minimizer() {
        let v = array![[1.0, 0.0], [0.0, 1.0], [-0.8, 0.6], [0.0, -1.0]];
        // Candidates for the left anchor (word 0): 2 at -0.8, 3 at 0.0.
        let negs = mine_negatives(v.view(), &[(2, 3)], &[(0, 1)]).unwrap();
        assert_eq!(negs.repel[0].0, 2);
    }

    #[test]
    fn ties_go_to_lowest_index_and_pool_checked() {
        let v = array![[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]];
        let negs = mine_negatives(v.view(), &[(0, 1), (2, 3)], &[]).unwrap();
        assert_eq!(negs.attract[0].0, 2);
        assert!(matches!(
            mine_negatives(v.view(), &[(0, 1)], &[(1, 0)]),
            Err(Error::CandidatePool(2))
        ));
    }

    #[test]
    fn mining_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 60;
        let v = Array2::from_shape_simple_fn((n, 8), || rng.random_range(-1.0..1.0));
        let mut pairs = Vec::new();
        while pairs.len() < 20 {
            let (l, r) = (rng.random_range(0..n), rng.random_range(0..n));
            if l != r {
                pairs.push((l, r));
            }
        }
        let (a, r) = pairs.split_at(12);
        let negs = mine_negatives(v.view(), a, r).unwrap();

        let pool: Vec<usize> = {
            let mut p: Vec<usize> = pairs.iter().flat_map(|&(l, r)| [l, r]).collect();
            p.sort();
            p.dedup();
            p
        };
        let cos = |i: usize, j: usize| {
            crate::embed_io::cosine(v.row(i), v.row(j)).unwrap()
        };
        let brute = |anchor: usize, l: usize, r: usize, nearest: bool| {
            let scores: Vec<(usize, f64)> = pool
                .iter()
                .filter(|&&c| c != l && c != r)
                .map(|&c| (c, cos(anchor, c)))
                .collect();
            let target = scores
                .iter()
                .map(|s| s.1)
                .fold(if nearest { f64::MIN } else { f64::MAX }, |m, s| {
                    if nearest { m.max(s) } else { m.min(s) }
                });
            scores.iter().find(|s| (s.1 - target).abs() < 1e-12).unwrap().0
        };
        for (&(l, r), &(tl, tr)) in a.iter().zip(&negs.attract) {
            assert_eq!((tl, tr), (brute(l, l, r, true), brute(r, l, r, true)));
        }
        for (&(l, r), &(tl, tr)) in r.iter().zip(&negs.repel) {
            assert_eq!((tl, tr), (brute(l, l, r, false), brute(r, l, r, false)));
        }
    }

    fn small_space(seed: u64, n: usize, d: usize) -> EmbeddingSpace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words = (0..n).map(|i| format!("w{i}")).collect();
        let mut m = Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0..1.0));
        crate::embed_io::normalize_rows(&mut m);
        EmbeddingSpace::new(words, m).unwrap()
    }

    fn words(pairs: &[(usize, usize)]) -> Vec<(String, String)> {
        pairs
            .iter()
            .map(|(l, r)| (format!("w{l}"), format!("w{r}")))
            .collect()
    }

    #[test]
    fn attract_pair_moves_together_and_unseen_untouched() {
        let mut space = small_space(5, 12, 6);
        // Make words 0 and 1 orthogonal.
        let mut m = space.matrix().to_owned();
        m.row_mut(0).assign(&array![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        m.row_mut(1).assign(&array![0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        space = space.with_matrix(m).unwrap();
        let cs = ConstraintSet {
            attract: words(&[(0, 1), (2, 3)]),
            repel: words(&[(4, 5)]),
        };
        let before = crate::embed_io::cosine(space.row(0), space.row(1)).unwrap();
        let out = specialize(&space, &cs, &ArConfig::default(), 1).unwrap();
        let after = crate::embed_io::cosine(out.space.row(0), out.space.row(1)).unwrap();
        assert!(after > before, "{before} -> {after}");
        for w in 6..12 {
            assert_eq!(out.space.row(w), space.row(w));
        }
        assert_eq!(out.log.len(), 5);
        assert!(out.log.iter().all(|e| e.att >= 0.0 && e.rep >= 0.0 && e.pre >= 0.0));
    }

    #[test]
    fn repel_pair_moves_apart() {
        let space = small_space(6, 10, 5);
        let mut m = space.matrix().to_owned();
        m.row_mut(0).assign(&array![1.0, 0.0, 0.0, 0.0, 0.0]);
        m.row_mut(1).assign(&array![0.9, (1.0f64 - 0.81).sqrt(), 0.0, 0.0, 0.0]);
        let space = space.with_matrix(m).unwrap();
        let cs = ConstraintSet {
            attract: words(&[(2, 3), (4, 5)]),
            repel: words(&[(0, 1)]),
        };
        let out = specialize(&space, &cs, &ArConfig::default(), 3).unwrap();
        let after = crate::embed_io::cosine(out.space.row(0), out.space.row(1)).unwrap();
        assert!(after < 0.9, "{after}");
    }

    #[test]
    fn empty_constraints_rejected() {
        let space = small_space(1, 4, 3);
        assert!(matches!(
            specialize(&space, &ConstraintSet::default(), &ArConfig::default(), 0),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn config_validation_names_field() {
        let cfg = ArConfig {
            delta_attract: -1.0,
            ..Default::default()
        };
        match cfg.validate() {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "delta_attract"),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn saturated_margins_give_zero_attract_loss(
            extra in 0.0f64..0.3,
            negl in -1.0f64..0.0,
            negr in -1.0f64..0.0,
        ) {
            // Unit vectors with xl.xr >= delta + max(negative cosines).
            let delta = 0.6;
            let pair = (delta + negl.max(negr) + extra).min(1.0);
            let v = with_dots(pair, negl, negr);
            prop_assert_eq!(att_loss(&[term(&v)], delta), 0.0);
        }

        #[test]
        fn losses_are_nonnegative(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: [Array1<f64>; 4] = std::array::from_fn(|_| random_unit(&mut rng, 4));
            prop_assert!(att_loss(&[term(&v)], 0.6) >= 0.0);
            prop_assert!(rep_loss(&[term(&v)], 0.0) >= 0.0);
        }
    }
}
