use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, SampleRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    /// Unseen words, known writers.
    WriterDependent,
    /// Unseen writers, known words.
    WriterIndependent,
}

impl FromStr for SplitKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "wd" | "writer_dependent" | "writer-dependent" => Ok(SplitKind::WriterDependent),
            "wi" | "writer_independent" | "writer-independent" => Ok(SplitKind::WriterIndependent),
            other => Err(format!("unknown split kind {other:?} (expected wd or wi)")),
        }
    }
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitKind::WriterDependent => "wd",
            SplitKind::WriterIndependent => "wi",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub kind: SplitKind,
    pub holdout_fraction: f64,
    pub seed: u64,
}

/// Partition by word (WD) or writer (WI). `round(fraction · units)` units go to
/// validation, clamped so both sides keep at least one unit.
pub fn make_split(
    records: &[SampleRecord],
    spec: &SplitSpec,
) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>), DataError> {
    if !(spec.holdout_fraction > 0.0 && spec.holdout_fraction < 1.0) {
        return Err(DataError::Invalid(format!(
            "holdout fraction {} outside (0, 1)",
            spec.holdout_fraction
        )));
    }
    let (unit, key): (&'static str, fn(&SampleRecord) -> &str) = match spec.kind {
        SplitKind::WriterDependent => ("words", |r| r.transcript.as_str()),
        SplitKind::WriterIndependent => ("writers", |r| r.writer_id.as_str()),
    };
    let mut units: Vec<&str> = records
        .iter()
        .map(key)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if units.len() < 2 {
        return Err(DataError::InsufficientUnits {
            unit,
            needed: 2,
            found: units.len(),
        });
    }
    let n_val =
        ((spec.holdout_fraction * units.len() as f64).round() as usize).clamp(1, units.len() - 1);
    units.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let val_units: BTreeSet<&str> = units[..n_val].iter().copied().collect();
    let (val, train): (Vec<_>, Vec<_>) = records
        .iter()
        .cloned()
        .partition(|r| val_units.contains(key(r)));
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Signal;

    fn records(words: usize, writers: usize) -> Vec<SampleRecord> {
        let mut out = Vec::new();
        for w in 0..words {
            for v in 0..writers {
                out.push(SampleRecord {
                    sample_id: format!("{w}-{v}"),
                    writer_id: format!("v{v}"),
                    transcript: format!("word{w}"),
                    signal: Signal::new(1, 1, vec![0.0]).unwrap(),
                });
            }
        }
        out
    }

    fn units<'a>(r: &'a [SampleRecord], f: fn(&'a SampleRecord) -> &'a str) -> BTreeSet<&'a str> {
        r.iter().map(f).collect()
    }

    #[test]
    fn disjointness_over_many_seeds() {
        let data = records(10, 5);
        for seed in 0..50 {
            let wd = SplitSpec {
                kind: SplitKind::WriterDependent,
                holdout_fraction: 0.2,
                seed,
            };
            let (tr, va) = make_split(&data, &wd).unwrap();
            assert!(units(&tr, |r| &r.transcript).is_disjoint(&units(&va, |r| &r.transcript)));
            assert_eq!(tr.len() + va.len(), data.len());
            let wi = SplitSpec {
                kind: SplitKind::WriterIndependent,
                ..wd
            };
            let (tr, va) = make_split(&data, &wi).unwrap();
            assert!(units(&tr, |r| &r.writer_id).is_disjoint(&units(&va, |r| &r.writer_id)));
        }
    }

    #[test]
    fn holdout_rounding() {
        let data = records(100, 1);
        let spec = SplitSpec {
            kind: SplitKind::WriterDependent,
            holdout_fraction: 0.2,
            seed: 1,
        };
        let (_, va) = make_split(&data, &spec).unwrap();
        assert_eq!(units(&va, |r| &r.transcript).len(), 20);
        let (_, va) = make_split(&records(9, 1), &spec).unwrap();
        assert_eq!(va.len(), 2);
        let (tr, va) = make_split(&records(2, 1), &spec).unwrap();
        assert_eq!((tr.len(), va.len()), (1, 1));
    }

    #[test]
    fn too_few_units() {
        let spec = SplitSpec {
            kind: SplitKind::WriterIndependent,
            holdout_fraction: 0.2,
            seed: 1,
        };
        assert!(matches!(
            make_split(&records(3, 1), &spec),
            Err(DataError::InsufficientUnits {
                unit: "writers",
                found: 1,
                ..
            })
        ));
    }
}
