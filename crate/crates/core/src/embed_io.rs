//! Word-embedding spaces and their plain-text interchange format.
//!
//! The format is the word2vec text layout: an optional `V d` header line
//! followed by one `token v_1 ... v_d` line per word. Values are written with
//! the shortest representation that parses back to the identical `f64`, so a
//! save/load cycle is lossless.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// A vocabulary paired with a row-per-word vector matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSpace {
    words: Vec<String>,
    index: HashMap<String, usize>,
    matrix: Array2<f64>,
}

impl EmbeddingSpace {
    pub fn new(words: Vec<String>, matrix: Array2<f64>) -> Result<Self> {
        if words.len() != matrix.nrows() {
            return Err(Error::DimensionMismatch {
                context: "word count vs matrix rows",
                expected: words.len(),
                found: matrix.nrows(),
            });
        }
        if matrix.ncols() == 0 && !words.is_empty() {
            return Err(Error::EmptyInput("zero-dimensional vectors".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::config("words", format!("duplicate word {w:?}")));
            }
        }
        for (row, w) in matrix.outer_iter().zip(&words) {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("vector of {w:?}")));
            }
        }
        Ok(EmbeddingSpace {
            words,
            index,
            matrix,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn row(&self, idx: usize) -> ArrayView1<'_, f64> {
        self.matrix.row(idx)
    }

    pub fn vector(&self, word: &str) -> Option<ArrayView1<'_, f64>> {
        self.index_of(word).map(|i| self.matrix.row(i))
    }

    /// Same vocabulary, new vectors.
    pub fn with_matrix(&self, matrix: Array2<f64>) -> Result<Self> {
        if matrix.nrows() != self.len() {
            return Err(Error::DimensionMismatch {
                context: "replacement matrix rows",
                expected: self.len(),
                found: matrix.nrows(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("replacement matrix".into()));
        }
        Ok(EmbeddingSpace {
            words: self.words.clone(),
            index: self.index.clone(),
            matrix,
        })
    }

    /// Keep only the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let words = rows.iter().map(|&i| self.words[i].clone()).collect();
        EmbeddingSpace::new(words, self.matrix.select(Axis(0), rows))
    }

    pub fn into_parts(self) -> (Vec<String>, Array2<f64>) {
        (self.words, self.matrix)
    }
}

/// Load a text embedding file, keeping at most `limit` distinct words.
pub fn load_embeddings(path: impl AsRef<Path>, limit: Option<usize>) -> Result<EmbeddingSpace> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), limit).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_embeddings<R: BufRead>(reader: R, limit: Option<usize>) -> Result<EmbeddingSpace> {
    let mut words: Vec<String> = Vec::new();
    let mut seen: HashMap<String, ()> = HashMap::new();
    let mut values: Vec<f64> = Vec::new();
    let mut dim: Option<usize> = None;
    let mut first_content_line = true;

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else {
            continue;
        };
        let rest: Vec<&str> = fields.collect();

        if first_content_line {
            first_content_line = false;
            if rest.len() == 1 {
                if let (Ok(_), Ok(d)) = (token.parse::<usize>(), rest[0].parse::<usize>()) {
                    if d == 0 {
                        return Err(Error::Parse {
                            line: lineno,
                            message: "header declares zero dimensions".into(),
                        });
                    }
                    dim = Some(d);
                    continue;
                }
            }
        }

        if limit.is_some_and(|l| words.len() >= l) {
            break;
        }

        let expected = *dim.get_or_insert(rest.len());
        if rest.len() != expected || expected == 0 {
            return Err(Error::InconsistentDimension {
                line: lineno,
                expected,
                found: rest.len(),
            });
        }
        if seen.contains_key(token) {
            continue;
        }
        for field in &rest {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("malformed number {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("non-finite value {field:?}"),
                });
            }
            values.push(v);
        }
        seen.insert(token.to_owned(), ());
        words.push(token.to_owned());
    }

    if words.is_empty() {
        return Err(Error::EmptyInput("no embedding rows".into()));
    }
    let dim = dim.expect("dimension set once a row is read");
    let matrix = Array2::from_shape_vec((words.len(), dim), values)
        .expect("row arity checked while reading");
    EmbeddingSpace::new(words, matrix)
}

pub fn save_embeddings(space: &EmbeddingSpace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if space.is_empty() {
        return Err(Error::EmptyInput("refusing to save an empty space".into()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_embeddings(space, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_embeddings<W: Write>(space: &EmbeddingSpace, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{} {}", space.len(), space.dim())?;
    for (word, row) in space.words.iter().zip(space.matrix.outer_iter()) {
        out.write_all(word.as_bytes())?;
        for v in row {
            // `{}` on f64 prints the shortest string that round-trips.
            write!(out, " {v}")?;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn dot(u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
    u.dot(&v)
}

pub fn l2_norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            context: "cosine operands",
            expected: u.len(),
            found: v.len(),
        });
    }
    let (nu, nv) = (l2_norm(u), l2_norm(v));
    if nu == 0.0 {
        return Err(Error::ZeroVector("left cosine operand".into()));
    }
    if nv == 0.0 {
        return Err(Error::ZeroVector("right cosine operand".into()));
    }
    Ok((u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Cosine for callers that already guarantee nonzero, equal-length inputs.
pub(crate) fn cosine_unchecked(u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
    let denom = l2_norm(u) * l2_norm(v);
    if denom == 0.0 {
        0.0
    } else {
        (u.dot(&v) / denom).clamp(-1.0, 1.0)
    }
}

pub fn unit_normalize(space: &EmbeddingSpace) -> Result<EmbeddingSpace> {
    let mut matrix = space.matrix.clone();
    for (mut row, word) in matrix.outer_iter_mut().zip(&space.words) {
        let norm = l2_norm(row.view());
        if norm == 0.0 {
            return Err(Error::ZeroVector(word.clone()));
        }
        row.mapv_inplace(|v| v / norm);
    }
    space.with_matrix(matrix)
}

/// Normalize every row of a bare matrix in place; zero rows are left alone.
pub(crate) fn normalize_rows(matrix: &mut Array2<f64>) {
    for mut row in matrix.outer_iter_mut() {
        let norm = l2_norm(row.view());
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
}
