use std::collections::BTreeMap;
use std::fmt::Write;

use super::SampleRecord;

/// Character counts over a set of transcripts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CharHistogram {
    pub counts: BTreeMap<char, u64>,
}

impl CharHistogram {
    pub fn count(&self, ch: char) -> u64 {
        self.counts.get(&ch).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

pub fn char_frequency(records: &[SampleRecord]) -> CharHistogram {
    let mut counts = BTreeMap::new();
    for ch in records.iter().flat_map(|r| r.transcript.chars()) {
        *counts.entry(ch).or_insert(0) += 1;
    }
    CharHistogram { counts }
}

/// Train/validation histograms over a shared character list.
#[derive(Clone, Debug)]
pub struct CharFrequency {
    pub chars: Vec<char>,
    pub train: CharHistogram,
    pub val: CharHistogram,
}

impl CharFrequency {
    pub fn new(chars: &[char], train: &[SampleRecord], val: &[SampleRecord]) -> Self {
        Self {
            chars: chars.to_vec(),
            train: char_frequency(train),
            val: char_frequency(val),
        }
    }

    /// Characters present in training but never in validation.
    pub fn missing_in_val(&self) -> Vec<char> {
        self.chars
            .iter()
            .copied()
            .filter(|&c| self.train.count(c) > 0 && self.val.count(c) == 0)
            .collect()
    }

    /// `char,train_count,train_share,val_count,val_share,val_zero`
    pub fn to_csv(&self) -> String {
        let share = |h: &CharHistogram, c: char| {
            let total = h.total();
            if total == 0 {
                0.0
            } else {
                h.count(c) as f64 / total as f64
            }
        };
        let mut out = String::from("char,train_count,train_share,val_count,val_share,val_zero\n");
        for &c in &self.chars {
            let shown = match c {
                ',' => "\",\"".to_string(),
                '"' => "\"\"\"\"".to_string(),
                _ => c.to_string(),
            };
            writeln!(
                out,
                "{shown},{},{:.6},{},{:.6},{}",
                self.train.count(c),
                share(&self.train, c),
                self.val.count(c),
                share(&self.val, c),
                u8::from(self.val.count(c) == 0)
            )
            .expect("write to string");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Signal;

    fn rec(t: &str) -> SampleRecord {
        SampleRecord {
            sample_id: t.into(),
            writer_id: "w".into(),
            transcript: t.into(),
            signal: Signal::new(1, 1, vec![0.0]).unwrap(),
        }
    }

    #[test]
    fn counts() {
        let h = char_frequency(&[rec("ab"), rec("b")]);
        assert_eq!(h.count('a'), 1);
        assert_eq!(h.count('b'), 2);
        assert_eq!(char_frequency(&[]).total(), 0);
    }

    #[test]
    fn flags_chars_missing_from_validation() {
        let f = CharFrequency::new(&['a', 'b', 'z'], &[rec("abz")], &[rec("ba")]);
        assert_eq!(f.missing_in_val(), vec!['z']);
        let csv = f.to_csv();
        assert!(csv
            .lines()
            .any(|l| l.starts_with("z,1,") && l.ends_with(",0,0.000000,1")));
        let empty = CharFrequency::new(&['a'], &[], &[]);
        assert!(empty.to_csv().contains("a,0,0.000000,0,0.000000,1"));
    }
}
