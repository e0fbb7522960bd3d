//! Samples, vocabulary, the dataset container, synthetic data, splits and batching.

mod batch;
mod format;
mod split;
mod stats;
mod synth;

pub use batch::{collate, make_batches, pad_signals, Batch, BatchStream};
pub use format::{
    load_dataset, read_dataset, save_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION,
};
pub use split::{make_split, SplitKind, SplitSpec};
pub use stats::{char_frequency, CharFrequency, CharHistogram};
pub use synth::{synth_generate, SynthConfig, TEMPLATE_LEN_RANGE};

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

/// Default number of pen sensor channels.
pub const DEFAULT_CHANNELS: usize = 13;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic at byte 0: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported dataset version {0}")]
    BadVersion(u16),
    #[error("truncated file at byte offset {offset} (record {record:?}) while reading {what}")]
    Truncated {
        offset: usize,
        record: Option<usize>,
        what: &'static str,
    },
    #[error("record {record}: invalid utf-8 in {field}")]
    Utf8 { record: usize, field: &'static str },
    #[error("record {record} ({sample_id}): non-finite signal value at frame {frame}, channel {channel}")]
    NonFinite {
        record: usize,
        sample_id: String,
        frame: usize,
        channel: usize,
    },
    #[error("record {record} ({sample_id}): {msg}")]
    InvalidRecord {
        record: usize,
        sample_id: String,
        msg: String,
    },
    #[error("character {ch:?} is not in the vocabulary")]
    UnknownChar { ch: char },
    #[error("label id {0} is not in the vocabulary")]
    UnknownId(u32),
    #[error("split needs at least {needed} distinct {unit}, found {found}")]
    InsufficientUnits {
        unit: &'static str,
        needed: usize,
        found: usize,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Multichannel sensor recording, `frames × channels`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    pub frames: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Signal {
    pub fn new(frames: usize, channels: usize, data: Vec<f32>) -> Result<Self, DataError> {
        if frames * channels != data.len() {
            return Err(DataError::Invalid(format!(
                "signal of {frames}×{channels} given {} values",
                data.len()
            )));
        }
        Ok(Self {
            frames,
            channels,
            data,
        })
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }
}

/// One handwriting instance.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub writer_id: String,
    pub transcript: String,
    pub signal: Signal,
}

/// Transcript as character ids (1-based; 0 is the CTC blank and never appears).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct LabelSeq(pub Vec<u32>);

impl LabelSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }
}

impl From<Vec<u32>> for LabelSeq {
    fn from(v: Vec<u32>) -> Self {
        Self(v)
    }
}

/// Id reserved for the CTC blank.
pub const BLANK: u32 = 0;

/// Characters sorted by code point; ids start at 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
}

impl Vocabulary {
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let set: BTreeSet<char> = chars.into_iter().collect();
        Self {
            chars: set.into_iter().collect(),
        }
    }

    pub fn from_transcripts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        Self::from_chars(texts.into_iter().flat_map(str::chars))
    }

    pub fn from_records(records: &[SampleRecord]) -> Self {
        Self::from_transcripts(records.iter().map(|r| r.transcript.as_str()))
    }

    /// Number of characters, blank excluded.
    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// Output classes of the recognizer: characters plus blank.
    pub fn num_classes(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn id(&self, ch: char) -> Option<u32> {
        self.chars.binary_search(&ch).ok().map(|i| i as u32 + 1)
    }

    pub fn char_of(&self, id: u32) -> Option<char> {
        (id >= 1)
            .then(|| self.chars.get(id as usize - 1).copied())
            .flatten()
    }

    /// All character ids, in order.
    pub fn ids(&self) -> Vec<u32> {
        (1..=self.chars.len() as u32).collect()
    }

    pub fn encode(&self, text: &str) -> Result<LabelSeq, DataError> {
        text.chars()
            .map(|ch| self.id(ch).ok_or(DataError::UnknownChar { ch }))
            .collect::<Result<Vec<_>, _>>()
            .map(LabelSeq)
    }

    pub fn decode(&self, seq: &LabelSeq) -> Result<String, DataError> {
        seq.0
            .iter()
            .map(|&id| self.char_of(id).ok_or(DataError::UnknownId(id)))
            .collect()
    }
}

impl fmt::Display for Vocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.chars.iter().collect::<String>())
    }
}

/// SplitMix64 finalizer; used to derive independent stream seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the UTF-8 bytes; stable across platforms.
pub fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
