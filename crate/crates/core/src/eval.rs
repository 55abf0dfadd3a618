//! Intrinsic and extrinsic evaluation: Spearman correlation on word
//! similarity benchmarks, and lexical simplification accuracy with a
//! nearest-neighbour substitution ranker.
//!
//! Similarity pairs with an out-of-vocabulary word are skipped and the
//! fraction kept is reported as coverage. A simplification record counts as
//! correct when its top-ranked candidate is one of the gold substitutes.
//! Records whose complex word is out of vocabulary count as incorrect.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::embed_io::{cosine, l2_norm, EmbeddingSpace};
use crate::error::{Error, Result};

pub const DEFAULT_CANDIDATES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRecord {
    pub word1: String,
    pub word2: String,
    pub gold: f64,
}

/// Word pairs with human similarity ratings. Scores are finite and no
/// unordered pair occurs twice.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimilarityDataset {
    records: Vec<SimilarityRecord>,
}

impl SimilarityDataset {
    pub fn new(records: Vec<SimilarityRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if !r.gold.is_finite() {
                return Err(Error::NonFinite(format!("gold score of pair {}", i + 1)));
            }
            let key = if r.word1 <= r.word2 {
                (r.word1.as_str(), r.word2.as_str())
            } else {
                (r.word2.as_str(), r.word1.as_str())
            };
            if !seen.insert(key) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("duplicate pair ({}, {})", r.word1, r.word2),
                });
            }
        }
        Ok(SimilarityDataset { records })
    }

    pub fn records(&self) -> &[SimilarityRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Parse `word1<TAB>word2<TAB>score` lines. Blank lines and lines starting
/// with `#` are ignored, and so is a first line whose score column is not a
/// number (a header).
pub fn read_similarity<R: BufRead>(reader: R) -> Result<SimilarityDataset> {
    let mut records = Vec::new();
    let mut first = true;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let is_header = first;
        first = false;
        let gold = match fields[2].trim().parse::<f64>() {
            Ok(v) => v,
            Err(_) if is_header => continue,
            Err(e) => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("bad score {:?}: {e}", fields[2]),
                })
            }
        };
        records.push(SimilarityRecord {
            word1: fields[0].trim().to_string(),
            word2: fields[1].trim().to_string(),
            gold,
        });
    }
    SimilarityDataset::new(records)
}

pub fn load_similarity(path: impl AsRef<Path>) -> Result<SimilarityDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_similarity(BufReader::new(file))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplificationRecord {
    pub tokens: Vec<String>,
    pub complex_index: usize,
    /// Annotator substitutes; repeats are kept.
    pub gold: Vec<String>,
}

impl SimplificationRecord {
    pub fn new(tokens: Vec<String>, complex_index: usize, gold: Vec<String>) -> Result<Self> {
        if complex_index >= tokens.len() {
            return Err(Error::config(
                "complex_index",
                format!("{complex_index} is outside a {}-token sentence", tokens.len()),
            ));
        }
        if gold.is_empty() {
            return Err(Error::EmptyInput("gold substitutes".into()));
        }
        Ok(SimplificationRecord {
            tokens,
            complex_index,
            gold,
        })
    }

    pub fn complex_word(&self) -> &str {
        &self.tokens[self.complex_index]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimplificationDataset {
    pub records: Vec<SimplificationRecord>,
}

/// Parse `sentence<TAB>index<TAB>sub1,sub2,...` lines. Sentences are split
/// on whitespace and the index is zero-based.
pub fn read_simplification<R: BufRead>(reader: R) -> Result<SimplificationDataset> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let tokens = fields[0].split_whitespace().map(str::to_string).collect();
        let index = fields[1].trim().parse::<usize>().map_err(|e| Error::Parse {
            line: lineno,
            message: format!("bad index {:?}: {e}", fields[1]),
        })?;
        let gold = fields[2]
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        let record = SimplificationRecord::new(tokens, index, gold).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(SimplificationDataset { records })
}

pub fn load_simplification(path: impl AsRef<Path>) -> Result<SimplificationDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_simplification(BufReader::new(file))
}

/// Ranks starting at 1, with tied values sharing the mean of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Positions start..end hold ranks start+1 ..= end.
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 {
        return Err(Error::UndefinedCorrelation("gold values are constant"));
    }
    if syy == 0.0 {
        return Err(Error::UndefinedCorrelation("predicted values are constant"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
pub fn spearman(gold: &[f64], pred: &[f64]) -> Result<f64> {
    if gold.len() != pred.len() {
        return Err(Error::DimensionMismatch {
            context: "spearman inputs",
            expected: gold.len(),
            found: pred.len(),
        });
    }
    if gold.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two observations"));
    }
    if gold.iter().chain(pred).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spearman input".into()));
    }
    pearson(&average_ranks(gold), &average_ranks(pred))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub rho: f64,
    /// Fraction of pairs with both words in the vocabulary.
    pub coverage: f64,
    pub pairs_total: usize,
    pub pairs_used: usize,
}

pub fn eval_similarity(space: &EmbeddingSpace, dataset: &SimilarityDataset) -> Result<SimilarityReport> {
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for r in dataset.records() {
        if let (Some(u), Some(v)) = (space.vector(&r.word1), space.vector(&r.word2)) {
            gold.push(r.gold);
            pred.push(cosine(u, v)?);
        }
    }
    if gold.is_empty() {
        return Err(Error::EmptyInput(
            "no similarity pair has both words in the vocabulary".into(),
        ));
    }
    Ok(SimilarityReport {
        rho: spearman(&gold, &pred)?,
        coverage: gold.len() as f64 / dataset.len() as f64,
        pairs_total: dataset.len(),
        pairs_used: gold.len(),
    })
}

/// Cosine of `query` to every row, with zero rows scored as -inf.
fn cosines_to_all(space: &EmbeddingSpace, query: ArrayView1<f64>) -> Array1<f64> {
    let qn = l2_norm(query);
    let m = space.matrix();
    let mut scores = m.dot(&query);
    for (s, row) in scores.iter_mut().zip(m.outer_iter()) {
        let denom = qn * l2_norm(row);
        *s = if denom == 0.0 {
            f64::NEG_INFINITY
        } else {
            *s / denom
        };
    }
    scores
}

/// The `n_candidates` vocabulary words closest to the complex word by
/// cosine, best first, excluding the word and its case variants. Returns
/// `None` when the complex word is out of vocabulary.
pub fn simplify_rank(
    space: &EmbeddingSpace,
    sentence: &[String],
    complex_index: usize,
    n_candidates: usize,
) -> Result<Option<Vec<(String, f64)>>> {
    let word = sentence.get(complex_index).ok_or_else(|| {
        Error::config(
            "complex_index",
            format!("{complex_index} is outside a {}-token sentence", sentence.len()),
        )
    })?;
    let Some(query) = space.vector(word) else {
        return Ok(None);
    };
    if l2_norm(query) == 0.0 {
        return Err(Error::ZeroVector(word.clone()));
    }
    let lowered = word.to_lowercase();
    let scores = cosines_to_all(space, query);
    let mut candidates: Vec<usize> = (0..space.len())
        .filter(|&i| space.words()[i].to_lowercase() != lowered)
        .filter(|&i| scores[i] > f64::NEG_INFINITY)
        .collect();
    candidates.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    candidates.truncate(n_candidates);
    Ok(Some(
        candidates
            .into_iter()
            .map(|i| (space.words()[i].clone(), scores[i]))
            .collect(),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Records whose complex word is out of vocabulary.
    pub skipped: usize,
}

pub fn ls_accuracy(
    space: &EmbeddingSpace,
    dataset: &SimplificationDataset,
    n_candidates: usize,
) -> Result<LsReport> {
    if n_candidates == 0 {
        return Err(Error::config("n_candidates", "must be >= 1"));
    }
    if dataset.records.is_empty() {
        return Err(Error::EmptyInput("simplification dataset".into()));
    }
    let (mut correct, mut skipped) = (0, 0);
    for r in &dataset.records {
        match simplify_rank(space, &r.tokens, r.complex_index, n_candidates)? {
            None => skipped += 1,
            Some(ranked) => {
                if let Some((top, _)) = ranked.first() {
                    if r.gold.iter().any(|g| g == top) {
                        correct += 1;
                    }
                }
            }
        }
    }
    let total = dataset.records.len();
    Ok(LsReport {
        accuracy: correct as f64 / total as f64,
        correct,
        total,
        skipped,
    })
}
