//! Best-path decoding and edit-distance error rates.

use std::fmt;

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::data::{LabelSeq, BLANK};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("total reference length at {0} level is zero")]
    EmptyReference(Level),
    #[error("input length {input_len} exceeds {frames} frames")]
    InputLength { input_len: usize, frames: usize },
}

/// Edit operations turning a source sequence into a target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EditOps {
    pub substitutions: usize,
    /// Source items missing from the target.
    pub deletions: usize,
    /// Target items absent from the source.
    pub insertions: usize,
}

impl EditOps {
    pub fn distance(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Wagner–Fischer with unit costs. Ties in the backtrace prefer
/// substitution (or match), then deletion, then insertion.
pub fn edit_distance<T: PartialEq>(source: &[T], target: &[T]) -> EditOps {
    let (n, m) = (source.len(), target.len());
    let w = m + 1;
    let mut dp = vec![0usize; (n + 1) * w];
    for j in 0..=m {
        dp[j] = j;
    }
    for i in 1..=n {
        dp[i * w] = i;
        for j in 1..=m {
            let sub = dp[(i - 1) * w + j - 1] + usize::from(source[i - 1] != target[j - 1]);
            let del = dp[(i - 1) * w + j] + 1;
            let ins = dp[i * w + j - 1] + 1;
            dp[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut ops = EditOps::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 {
            let mismatch = usize::from(source[i - 1] != target[j - 1]);
            if dp[(i - 1) * w + j - 1] + mismatch == here {
                ops.substitutions += mismatch;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[(i - 1) * w + j] + 1 == here {
            ops.deletions += 1;
            i -= 1;
        } else {
            ops.insertions += 1;
            j -= 1;
        }
    }
    ops
}

/// Per-frame argmax over the first `input_len` rows of `[T, C]` scores,
/// collapse repeats, drop blanks. Ties go to the lowest class id.
pub fn greedy_decode(log_probs: &Tensor, input_len: usize) -> Result<LabelSeq, MetricError> {
    let frames = log_probs.shape()[0];
    let classes = log_probs.numel() / frames;
    if input_len > frames {
        return Err(MetricError::InputLength { input_len, frames });
    }
    let mut out = Vec::new();
    let mut prev = None;
    for row in log_probs.data().chunks(classes).take(input_len) {
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        let best = best as u32;
        if prev != Some(best) && best != BLANK {
            out.push(best);
        }
        prev = Some(best);
    }
    Ok(LabelSeq(out))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Char,
    Word,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Char => "character",
            Level::Word => "word",
        })
    }
}

fn words(s: &str) -> Vec<&str> {
    if s.is_empty() {
        Vec::new()
    } else {
        s.split(' ').collect()
    }
}

/// Micro-averaged error rate: Σ edits / Σ reference length over
/// `(prediction, reference)` pairs.
pub fn corpus_error_rates<S: AsRef<str>>(
    pairs: &[(S, S)],
    level: Level,
) -> Result<f64, MetricError> {
    let mut edits = 0usize;
    let mut total = 0usize;
    for (pred, reference) in pairs {
        let (pred, reference) = (pred.as_ref(), reference.as_ref());
        match level {
            Level::Char => {
                let r: Vec<char> = reference.chars().collect();
                let p: Vec<char> = pred.chars().collect();
                edits += edit_distance(&r, &p).distance();
                total += r.len();
            }
            Level::Word => {
                let r = words(reference);
                edits += edit_distance(&r, &words(pred)).distance();
                total += r.len();
            }
        }
    }
    if total == 0 {
        return Err(MetricError::EmptyReference(level));
    }
    Ok(edits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    #[test]
    fn textbook_pairs() {
        let ops = edit_distance(&chars("kitten"), &chars("sitting"));
        assert_eq!(ops.distance(), 3);
        assert_eq!(
            (ops.substitutions, ops.insertions, ops.deletions),
            (2, 1, 0)
        );
        assert_eq!(edit_distance(&chars("abc"), &chars("abc")).distance(), 0);
        let ops = edit_distance(&chars(""), &chars("abc"));
        assert_eq!(
            (ops.insertions, ops.deletions, ops.substitutions),
            (3, 0, 0)
        );
    }

    #[test]
    fn tie_prefers_substitution() {
        // "ab" → "ba": two substitutions or delete+insert; substitution wins.
        let ops = edit_distance(&chars("ab"), &chars("ba"));
        assert_eq!(
            ops,
            EditOps {
                substitutions: 2,
                deletions: 0,
                insertions: 0
            }
        );
    }

    fn path(ids: &[usize], classes: usize) -> Tensor {
        let mut data = vec![-5.0; ids.len() * classes];
        for (t, &k) in ids.iter().enumerate() {
            data[t * classes + k] = 0.0;
        }
        Tensor::new(&[ids.len(), classes], data).unwrap()
    }

    #[test]
    fn greedy_rules() {
        assert_eq!(
            greedy_decode(&path(&[1, 1, 0, 1], 3), 4).unwrap().0,
            vec![1, 1]
        );
        assert!(greedy_decode(&path(&[0, 0, 0], 3), 3).unwrap().is_empty());
        assert_eq!(
            greedy_decode(&path(&[0, 2, 2, 0, 1], 3), 5).unwrap().0,
            vec![2, 1]
        );
        assert_eq!(greedy_decode(&path(&[1, 2, 2], 3), 1).unwrap().0, vec![1]);
        assert!(greedy_decode(&path(&[1], 3), 2).is_err());
        let tie = Tensor::new(&[1, 3], vec![0.0, 0.0, 0.0]).unwrap();
        assert!(greedy_decode(&tie, 1).unwrap().is_empty());
    }

    #[test]
    fn error_rates() {
        assert_eq!(
            corpus_error_rates(&[("helo", "hello")], Level::Char).unwrap(),
            0.2
        );
        assert_eq!(
            corpus_error_rates(&[("ab", "ab")], Level::Char).unwrap(),
            0.0
        );
        let wer = corpus_error_rates(&[("cat", "cat"), ("dgo", "dog"), ("x", "cow")], Level::Word)
            .unwrap();
        assert!((wer - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            corpus_error_rates::<&str>(&[("a", "")], Level::Char),
            Err(MetricError::EmptyReference(Level::Char))
        );
        // Micro average weights by reference length.
        let cer = corpus_error_rates(&[("a", "ab"), ("abcd", "abcd")], Level::Char).unwrap();
        assert!((cer - 1.0 / 6.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn greedy_inverts_interleaved_encoding(y in proptest::collection::vec(1usize..4, 0..8)) {
            let mut frames = vec![0];
            for &k in &y {
                frames.push(k);
                frames.push(0);
            }
            let got = greedy_decode(&path(&frames, 4), frames.len()).unwrap();
            prop_assert_eq!(got.0, y.iter().map(|&k| k as u32).collect::<Vec<_>>());
        }

        #[test]
        fn cer_is_order_invariant(
            mut pairs in proptest::collection::vec(("[ab]{0,5}", "[ab]{1,5}"), 1..6)
        ) {
            let a = corpus_error_rates(&pairs, Level::Char).unwrap();
            pairs.reverse();
            prop_assert_eq!(a, corpus_error_rates(&pairs, Level::Char).unwrap());
        }
    }
}
