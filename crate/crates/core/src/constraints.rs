//! ATTRACT/REPEL constraint pairs and the seen/unseen vocabulary split.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;
use serde::Serialize;

use crate::embed_io::EmbeddingSpace;
use crate::error::{Error, Result};

pub type WordPair = (String, String);

/// Anything that can answer vocabulary membership.
pub trait WordSet {
    fn contains_word(&self, word: &str) -> bool;
}

impl WordSet for HashSet<String> {
    fn contains_word(&self, word: &str) -> bool {
        self.contains(word)
    }
}

impl WordSet for BTreeSet<String> {
    fn contains_word(&self, word: &str) -> bool {
        self.contains(word)
    }
}

impl WordSet for EmbeddingSpace {
    fn contains_word(&self, word: &str) -> bool {
        self.contains(word)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConstraintSet {
    pub attract: Vec<WordPair>,
    pub repel: Vec<WordPair>,
}

impl ConstraintSet {
    pub fn is_empty(&self) -> bool {
        self.attract.is_empty() && self.repel.is_empty()
    }

    pub fn len(&self) -> usize {
        self.attract.len() + self.repel.len()
    }

    /// Every word occurring in any pair, sorted.
    pub fn words(&self) -> BTreeSet<&str> {
        self.attract
            .iter()
            .chain(&self.repel)
            .flat_map(|(l, r)| [l.as_str(), r.as_str()])
            .collect()
    }
}

/// Counts reported by [`load_constraints`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub attract_read: usize,
    pub repel_read: usize,
    pub out_of_vocabulary: usize,
    pub identical_members: usize,
    pub duplicates: usize,
    pub conflicting: usize,
    pub attract_kept: usize,
    pub repel_kept: usize,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Strip language prefixes such as `en_` from every token.
    pub strip_language_prefix: bool,
}

fn strip_prefix(token: &str) -> &str {
    match token.split_once('_') {
        Some((prefix, rest))
            if (2..=3).contains(&prefix.len())
                && prefix.bytes().all(|b| b.is_ascii_lowercase())
                && !rest.is_empty() =>
        {
            rest
        }
        _ => token,
    }
}

fn pair_key(l: &str, r: &str) -> (String, String) {
    if l <= r {
        (l.to_owned(), r.to_owned())
    } else {
        (r.to_owned(), l.to_owned())
    }
}

pub fn read_pairs<R: BufRead>(reader: R, opts: LoadOptions) -> Result<Vec<WordPair>> {
    let mut pairs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            [l, r] => {
                let (l, r) = if opts.strip_language_prefix {
                    (strip_prefix(l), strip_prefix(r))
                } else {
                    (*l, *r)
                };
                pairs.push((l.to_owned(), r.to_owned()));
            }
            other => {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("expected two tokens, found {}", other.len()),
                })
            }
        }
    }
    Ok(pairs)
}

fn read_pair_file(path: &Path, opts: LoadOptions) -> Result<Vec<WordPair>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_pairs(BufReader::new(file), opts).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn load_constraints(
    attract_path: impl AsRef<Path>,
    repel_path: impl AsRef<Path>,
    vocab: &impl WordSet,
    opts: LoadOptions,
) -> Result<(ConstraintSet, LoadReport)> {
    let attract = read_pair_file(attract_path.as_ref(), opts)?;
    let repel = read_pair_file(repel_path.as_ref(), opts)?;
    Ok(build_constraints(attract, repel, vocab))
}

/// Filter raw pair lists against a vocabulary and enforce the set invariants.
pub fn build_constraints(
    attract: Vec<WordPair>,
    repel: Vec<WordPair>,
    vocab: &impl WordSet,
) -> (ConstraintSet, LoadReport) {
    let mut report = LoadReport {
        attract_read: attract.len(),
        repel_read: repel.len(),
        ..Default::default()
    };

    let mut clean = |pairs: Vec<WordPair>| {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (l, r) in pairs {
            if !vocab.contains_word(&l) || !vocab.contains_word(&r) {
                report.out_of_vocabulary += 1;
            } else if l == r {
                report.identical_members += 1;
            } else if !seen.insert(pair_key(&l, &r)) {
                report.duplicates += 1;
            } else {
                out.push((l, r));
            }
        }
        out
    };
    let attract = clean(attract);
    let repel = clean(repel);

    let attract_keys: HashSet<_> = attract.iter().map(|(l, r)| pair_key(l, r)).collect();
    let conflicts: HashSet<_> = repel
        .iter()
        .map(|(l, r)| pair_key(l, r))
        .filter(|k| attract_keys.contains(k))
        .collect();
    if !conflicts.is_empty() {
        warn!(
            "{} pairs appear in both ATTRACT and REPEL; dropped from both",
            conflicts.len()
        );
    }
    report.conflicting = conflicts.len();
    let keep = |pairs: Vec<WordPair>| -> Vec<WordPair> {
        pairs
            .into_iter()
            .filter(|(l, r)| !conflicts.contains(&pair_key(l, r)))
            .collect()
    };
    let set = ConstraintSet {
        attract: keep(attract),
        repel: keep(repel),
    };
    report.attract_kept = set.attract.len();
    report.repel_kept = set.repel.len();
    (set, report)
}

/// Seen words appear in at least one constraint; all others are unseen.
/// Both lists preserve vocabulary order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VocabPartition {
    pub seen: Vec<String>,
    pub unseen: Vec<String>,
}

pub fn split_seen_unseen(vocab: &[String], cs: &ConstraintSet) -> VocabPartition {
    let constrained = cs.words();
    let (seen, unseen) = vocab
        .iter()
        .cloned()
        .partition(|w| constrained.contains(w.as_str()));
    VocabPartition { seen, unseen }
}

/// Drop every pair that mentions a test word.
pub fn filter_disjoint(cs: &ConstraintSet, test_words: &impl WordSet) -> ConstraintSet {
    let keep = |pairs: &[WordPair]| -> Vec<WordPair> {
        pairs
            .iter()
            .filter(|(l, r)| !test_words.contains_word(l) && !test_words.contains_word(r))
            .cloned()
            .collect()
    };
    ConstraintSet {
        attract: keep(&cs.attract),
        repel: keep(&cs.repel),
    }
}

/// Resolve word pairs to row indices of `space`; unknown words are skipped.
pub fn index_pairs(pairs: &[WordPair], space: &EmbeddingSpace) -> Vec<(usize, usize)> {
    let lookup: HashMap<&str, usize> = space
        .words()
        .iter()
        .enumerate()
        .map(|(i, w)| (w.as_str(), i))
        .collect();
    pairs
        .iter()
        .filter_map(|(l, r)| Some((*lookup.get(l.as_str())?, *lookup.get(r.as_str())?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(words: &[&str]) -> HashSet<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    fn pairs(list: &[(&str, &str)]) -> Vec<WordPair> {
        list.iter()
            .map(|(l, r)| (l.to_string(), r.to_string()))
            .collect()
    }

    #[test]
    fn synonym_and_antonym_lines() {
        let v = vocab(&["graceful", "amiable", "innocent", "sinful"]);
        let a = read_pairs("graceful amiable\n".as_bytes(), LoadOptions::default()).unwrap();
        let r = read_pairs("innocent sinful\n".as_bytes(), LoadOptions::default()).unwrap();
        let (cs, report) = build_constraints(a, r, &v);
        assert_eq!(cs.attract, pairs(&[("graceful", "amiable")]));
        assert_eq!(cs.repel, pairs(&[("innocent", "sinful")]));
        assert_eq!(report.attract_kept + report.repel_kept, 2);
    }

    #[test]
    fn oov_pair_dropped() {
        let v = vocab(&["a", "b", "c"]);
        let (cs, report) =
            build_constraints(pairs(&[("a", "b"), ("a", "zzz"), ("b", "c")]), vec![], &v);
        assert_eq!(cs.attract.len(), 2);
        assert_eq!(report.out_of_vocabulary, 1);
    }

    #[test]
    fn dedup_is_order_insensitive_and_self_pairs_dropped() {
        let v = vocab(&["a", "b"]);
        let (cs, report) =
            build_constraints(pairs(&[("a", "b"), ("b", "a"), ("a", "a")]), vec![], &v);
        assert_eq!(cs.attract, pairs(&[("a", "b")]));
        assert_eq!(report.duplicates, 1);
        assert_eq!(report.identical_members, 1);
    }

    #[test]
    fn conflicting_pairs_dropped_from_both() {
        let v = vocab(&["a", "b", "c"]);
        let (cs, report) = build_constraints(
            pairs(&[("a", "b"), ("a", "c")]),
            pairs(&[("b", "a"), ("b", "c")]),
            &v,
        );
        assert_eq!(cs.attract, pairs(&[("a", "c")]));
        assert_eq!(cs.repel, pairs(&[("b", "c")]));
        assert_eq!(report.conflicting, 1);
    }

    #[test]
    fn malformed_line_reports_number() {
        let err = read_pairs("a b\nc\n".as_bytes(), LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn prefix_stripping() {
        let opts = LoadOptions {
            strip_language_prefix: true,
        };
        let p = read_pairs("en_good en_fine\nnot_a_prefix x\n".as_bytes(), opts).unwrap();
        assert_eq!(p, pairs(&[("good", "fine"), ("a_prefix", "x")]));
        let p = read_pairs("en_good NOT_x\n".as_bytes(), opts).unwrap();
        assert_eq!(p, pairs(&[("good", "NOT_x")]));
    }

    #[test]
    fn split_examples() {
        let v: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let cs = ConstraintSet {
            attract: pairs(&[("a", "b")]),
            repel: vec![],
        };
        let part = split_seen_unseen(&v, &cs);
        assert_eq!(part.seen, vec!["a", "b"]);
        assert_eq!(part.unseen, vec!["c"]);
        let empty = split_seen_unseen(&v, &ConstraintSet::default());
        assert!(empty.seen.is_empty());
        assert_eq!(empty.unseen.len(), 3);
    }

    #[test]
    fn split_counts_synthetic_fixture() {
        // 10k words; constraints chain words 0..1500 so exactly 1500 are seen.
        let v: Vec<String> = (0..10_000).map(|i| format!("w{i}")).collect();
        let attract = (0..750)
            .map(|i| (v[2 * i].clone(), v[2 * i + 1].clone()))
            .collect();
        let repel = (0..749)
            .map(|i| (v[2 * i + 1].clone(), v[2 * i + 2].clone()))
            .collect();
        let part = split_seen_unseen(&v, &ConstraintSet { attract, repel });
        assert_eq!(part.seen.len(), 1500);
        assert_eq!(part.unseen.len(), 8500);
    }

    #[test]
    fn disjoint_filter_examples() {
        let cs = ConstraintSet {
            attract: pairs(&[("a", "b"), ("c", "d"), ("e", "f")]),
            repel: pairs(&[("a", "g"), ("h", "i")]),
        };
        assert_eq!(filter_disjoint(&cs, &vocab(&["x", "y"])), cs);
        assert!(filter_disjoint(&cs, &vocab(&["a", "c", "e", "h"])).is_empty());
        // flagged: a (2 pairs), d (1 pair) -> 3 of 5 removed
        let f = filter_disjoint(&cs, &vocab(&["a", "d"]));
        assert_eq!(f.attract, pairs(&[("e", "f")]));
        assert_eq!(f.repel, pairs(&[("h", "i")]));
    }

    proptest! {
        #[test]
        fn disjoint_filter_leaves_no_test_word(
            raw in prop::collection::vec((0u8..12, 0u8..12), 0..40),
            test in prop::collection::btree_set(0u8..12, 0..5),
        ) {
            let p: Vec<WordPair> = raw.iter().map(|(l, r)| (format!("w{l}"), format!("w{r}"))).collect();
            let cs = ConstraintSet { attract: p.clone(), repel: p };
            let t: BTreeSet<String> = test.iter().map(|i| format!("w{i}")).collect();
            let f = filter_disjoint(&cs, &t);
            for (l, r) in f.attract.iter().chain(&f.repel) {
                prop_assert!(!t.contains(l) && !t.contains(r));
            }
        }

        #[test]
        fn split_is_a_partition(
            n in 1usize..30,
            raw in prop::collection::vec((0usize..30, 0usize..30), 0..20),
        ) {
            let v: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
            let vs: HashSet<String> = v.iter().cloned().collect();
            let p = raw.iter().map(|(l, r)| (format!("w{l}"), format!("w{r}"))).collect();
            let (cs, _) = build_constraints(p, vec![], &vs);
            let part = split_seen_unseen(&v, &cs);
            prop_assert_eq!(part.seen.len() + part.unseen.len(), n);
            let seen: HashSet<_> = part.seen.iter().collect();
            prop_assert!(part.unseen.iter().all(|w| !seen.contains(w)));
        }
    }
}
