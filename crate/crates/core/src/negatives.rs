//! Hard-negative transcripts at edit distance one: every error set holds one
//! deletion, one insertion and one substitution variant of the truth.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{mix_seed, LabelSeq};
use crate::metrics::edit_distance;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NegativeError {
    #[error("cannot corrupt an empty transcript")]
    EmptyTruth,
    #[error("character id {0} of the transcript is not in the alphabet")]
    OutsideAlphabet(u32),
    #[error("alphabet offers no substitute for id {0}")]
    NoSubstitute(u32),
    #[error("no valid {kind} variant after {tries} draws")]
    Exhausted { kind: EditKind, tries: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EditKind {
    Deletion,
    Insertion,
    Substitution,
}

impl EditKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EditKind::Deletion => "deletion",
            EditKind::Insertion => "insertion",
            EditKind::Substitution => "substitution",
        }
    }
}

impl fmt::Display for EditKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ErrorSetConfig {
    /// Number of error sets S; yields 3S negatives.
    pub num_sets: usize,
    /// Ids available for insertion and substitution.
    pub alphabet: Vec<u32>,
    pub seed: u64,
    pub max_resample: usize,
    pub allow_empty: bool,
}

impl ErrorSetConfig {
    pub fn new(num_sets: usize, alphabet: Vec<u32>, seed: u64) -> Self {
        Self {
            num_sets,
            alphabet,
            seed,
            max_resample: 32,
            allow_empty: false,
        }
    }

    /// Same settings, different stream.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Negative {
    /// Requested kind; a single-character deletion falls back to substitution.
    pub kind: EditKind,
    pub seq: LabelSeq,
}

/// `3 · num_sets` negatives; set `k` draws from its own stream keyed by
/// `(seed, k)`.
pub fn generate_negatives(
    truth: &LabelSeq,
    cfg: &ErrorSetConfig,
) -> Result<Vec<Negative>, NegativeError> {
    if cfg.num_sets == 0 {
        return Ok(Vec::new());
    }
    if truth.is_empty() {
        return Err(NegativeError::EmptyTruth);
    }
    if let Some(&bad) = truth.ids().iter().find(|id| !cfg.alphabet.contains(id)) {
        return Err(NegativeError::OutsideAlphabet(bad));
    }
    let mut out = Vec::with_capacity(3 * cfg.num_sets);
    for set in 0..cfg.num_sets {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, set as u64));
        for kind in [
            EditKind::Deletion,
            EditKind::Insertion,
            EditKind::Substitution,
        ] {
            out.push(draw(truth, kind, cfg, &mut rng)?);
        }
    }
    Ok(out)
}

fn draw(
    truth: &LabelSeq,
    kind: EditKind,
    cfg: &ErrorSetConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Negative, NegativeError> {
    let ids = truth.ids();
    let effective = if kind == EditKind::Deletion && ids.len() == 1 && !cfg.allow_empty {
        EditKind::Substitution
    } else {
        kind
    };
    let tries = cfg.max_resample.max(1);
    for _ in 0..tries {
        let seq = match effective {
            EditKind::Deletion => {
                let pos = rng.random_range(0..ids.len());
                let mut v = ids.to_vec();
                v.remove(pos);
                v
            }
            EditKind::Insertion => {
                let pos = rng.random_range(0..=ids.len());
                let ch = cfg.alphabet[rng.random_range(0..cfg.alphabet.len())];
                let mut v = ids.to_vec();
                v.insert(pos, ch);
                v
            }
            EditKind::Substitution => {
                let pos = rng.random_range(0..ids.len());
                let choices: Vec<u32> = cfg
                    .alphabet
                    .iter()
                    .copied()
                    .filter(|&c| c != ids[pos])
                    .collect();
                if choices.is_empty() {
                    return Err(NegativeError::NoSubstitute(ids[pos]));
                }
                let mut v = ids.to_vec();
                v[pos] = choices[rng.random_range(0..choices.len())];
                v
            }
        };
        if seq != ids && (cfg.allow_empty || !seq.is_empty()) {
            return Ok(Negative {
                kind,
                seq: LabelSeq(seq),
            });
        }
    }
    Err(NegativeError::Exhausted { kind, tries })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegativeReport {
    pub distances: Vec<usize>,
    /// Indices whose distance is not exactly one.
    pub flagged: Vec<usize>,
    pub equal_to_truth: usize,
}

impl NegativeReport {
    pub fn all_clear(&self) -> bool {
        self.flagged.is_empty()
    }
}

pub fn verify_negative_set(truth: &LabelSeq, negs: &[LabelSeq]) -> NegativeReport {
    let distances: Vec<usize> = negs
        .iter()
        .map(|n| edit_distance(truth.ids(), n.ids()).distance())
        .collect();
    NegativeReport {
        flagged: distances
            .iter()
            .enumerate()
            .filter(|(_, &d)| d != 1)
            .map(|(i, _)| i)
            .collect(),
        equal_to_truth: distances.iter().filter(|&&d| d == 0).count(),
        distances,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(s: &str) -> LabelSeq {
        LabelSeq(s.bytes().map(|b| (b - b'a' + 1) as u32).collect())
    }

    #[test]
    fn one_set_of_ab() {
        let cfg = ErrorSetConfig::new(1, vec![1, 2, 3], 5);
        let negs = generate_negatives(&seq("ab"), &cfg).unwrap();
        assert_eq!(negs.len(), 3);
        assert_eq!(negs[0].seq.len(), 1);
        assert_eq!(negs[1].seq.len(), 3);
        assert_eq!(negs[2].seq.len(), 2);
        let seqs: Vec<_> = negs.iter().map(|n| n.seq.clone()).collect();
        assert!(verify_negative_set(&seq("ab"), &seqs).all_clear());
    }

    #[test]
    fn counts_and_zero_sets() {
        let cfg = ErrorSetConfig::new(2, vec![1, 2, 3], 5);
        assert_eq!(generate_negatives(&seq("abc"), &cfg).unwrap().len(), 6);
        let cfg = ErrorSetConfig::new(0, vec![1, 2, 3], 5);
        assert!(generate_negatives(&seq("abc"), &cfg).unwrap().is_empty());
    }

    #[test]
    fn single_char_deletion_falls_back() {
        let cfg = ErrorSetConfig::new(3, vec![1, 2], 9);
        for n in generate_negatives(&seq("a"), &cfg).unwrap() {
            assert!(!n.seq.is_empty());
        }
        let cfg = ErrorSetConfig {
            allow_empty: true,
            ..cfg
        };
        assert!(generate_negatives(&seq("a"), &cfg).unwrap()[0]
            .seq
            .is_empty());
    }

    #[test]
    fn singleton_alphabet_cannot_substitute() {
        let cfg = ErrorSetConfig::new(1, vec![1], 0);
        assert_eq!(
            generate_negatives(&seq("aa"), &cfg),
            Err(NegativeError::NoSubstitute(1))
        );
    }

    #[test]
    fn verify_flags_bad_items() {
        let truth = seq("kitten");
        let r = verify_negative_set(&truth, &[truth.clone(), seq("sitting"), seq("kiten")]);
        assert_eq!(r.distances, vec![0, 3, 1]);
        assert_eq!(r.flagged, vec![0, 1]);
        assert_eq!(r.equal_to_truth, 1);
    }

    #[test]
    fn deletion_positions_uniform() {
        // 10^4 deletions of "abc"; the surviving pair reveals the position
        let cfg = ErrorSetConfig::new(10_000, vec![1, 2, 3], 17);
        let mut counts = [0.0f64; 3];
        for n in generate_negatives(&seq("abc"), &cfg).unwrap() {
            if n.kind == EditKind::Deletion {
                let pos = match n.seq.0.as_slice() {
                    [2, 3] => 0,
                    [1, 3] => 1,
                    [1, 2] => 2,
                    other => panic!("unexpected deletion {other:?}"),
                };
                counts[pos] += 1.0;
            }
        }
        let expected = counts.iter().sum::<f64>() / 3.0;
        let chi2: f64 = counts
            .iter()
            .map(|c| (c - expected).powi(2) / expected)
            .sum();
        // chi-square critical value at p = 0.01 with 2 degrees of freedom
        assert!(chi2 < 9.2103, "chi2 {chi2} counts {counts:?}");
    }

    proptest! {
        #[test]
        fn distance_one_and_deterministic(
            word in proptest::collection::vec(1u32..=5, 1..10),
            sets in 0usize..4,
            seed in any::<u64>(),
        ) {
            let cfg = ErrorSetConfig::new(sets, vec![1, 2, 3, 4, 5], seed);
            let truth = LabelSeq(word);
            let a = generate_negatives(&truth, &cfg).unwrap();
            prop_assert_eq!(a.len(), 3 * sets);
            let seqs: Vec<_> = a.iter().map(|n| n.seq.clone()).collect();
            let report = verify_negative_set(&truth, &seqs);
            prop_assert!(report.all_clear());
            prop_assert!(seqs.iter().all(|s| !s.is_empty()));
            prop_assert_eq!(a, generate_negatives(&truth, &cfg).unwrap());
        }
    }
}
