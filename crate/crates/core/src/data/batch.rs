use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{stable_hash, DataError, LabelSeq, SampleRecord, Vocabulary};
use crate::autodiff::Tensor;
use crate::negatives::{generate_negatives, ErrorSetConfig};

/// Padded mini-batch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// Positions of the samples in the source record list.
    pub indices: Vec<usize>,
    pub sample_ids: Vec<String>,
    /// `[B, T_max, C]`, zero past each sample's length.
    pub signals: Tensor,
    pub lengths: Vec<usize>,
    pub labels: Vec<LabelSeq>,
    /// `3S` negatives per sample; empty lists when no error sets are requested.
    pub negatives: Vec<Vec<LabelSeq>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Zero-padded `[B, T_max, C]` signals and their lengths, in index order.
pub fn pad_signals(
    records: &[SampleRecord],
    indices: &[usize],
) -> Result<(Tensor, Vec<usize>), DataError> {
    let Some(&first) = indices.first() else {
        return Err(DataError::Invalid("cannot pad an empty batch".into()));
    };
    let channels = records[first].signal.channels;
    let t_max = indices
        .iter()
        .map(|&i| records[i].signal.frames)
        .max()
        .unwrap_or(1);
    let mut data = vec![0.0; indices.len() * t_max * channels];
    let mut lengths = Vec::with_capacity(indices.len());
    for (b, &i) in indices.iter().enumerate() {
        let r = &records[i];
        if r.signal.channels != channels {
            return Err(DataError::InvalidRecord {
                record: i,
                sample_id: r.sample_id.clone(),
                msg: format!(
                    "{} channels in a {channels}-channel batch",
                    r.signal.channels
                ),
            });
        }
        let dst = &mut data[b * t_max * channels..][..r.signal.data.len()];
        for (d, &s) in dst.iter_mut().zip(&r.signal.data) {
            *d = s as f64;
        }
        lengths.push(r.signal.frames);
    }
    let signals = Tensor::new(&[indices.len(), t_max, channels], data)
        .map_err(|e| DataError::Invalid(e.to_string()))?;
    Ok((signals, lengths))
}

/// Pad and encode the given records, in order.
pub fn collate(
    records: &[SampleRecord],
    indices: &[usize],
    vocab: &Vocabulary,
    error_cfg: Option<&ErrorSetConfig>,
) -> Result<Batch, DataError> {
    let (signals, lengths) = pad_signals(records, indices)?;
    let mut labels = Vec::with_capacity(indices.len());
    let mut negatives = Vec::with_capacity(indices.len());
    for &i in indices {
        let r = &records[i];
        let label = vocab.encode(&r.transcript)?;
        let negs = match error_cfg {
            Some(cfg) if cfg.num_sets > 0 => {
                let sample_cfg = cfg.with_seed(cfg.seed ^ stable_hash(&r.sample_id));
                generate_negatives(&label, &sample_cfg)
                    .map_err(|e| DataError::InvalidRecord {
                        record: i,
                        sample_id: r.sample_id.clone(),
                        msg: e.to_string(),
                    })?
                    .into_iter()
                    .map(|n| n.seq)
                    .collect()
            }
            _ => Vec::new(),
        };
        labels.push(label);
        negatives.push(negs);
    }
    Ok(Batch {
        indices: indices.to_vec(),
        sample_ids: indices
            .iter()
            .map(|&i| records[i].sample_id.clone())
            .collect(),
        signals,
        lengths,
        labels,
        negatives,
    })
}

/// One epoch of batches: a seeded shuffle, then consecutive chunks. The last
/// batch may be short.
pub fn make_batches(
    records: &[SampleRecord],
    vocab: &Vocabulary,
    batch_size: usize,
    shuffle_seed: Option<u64>,
    error_cfg: Option<&ErrorSetConfig>,
) -> Result<Vec<Batch>, DataError> {
    if batch_size == 0 {
        return Err(DataError::Invalid("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
        .chunks(batch_size)
        .map(|chunk| collate(records, chunk, vocab, error_cfg))
        .collect()
}

/// Epoch-indexed batch source over a fixed record set.
pub struct BatchStream<'a> {
    pub records: &'a [SampleRecord],
    pub vocab: &'a Vocabulary,
    pub batch_size: usize,
    pub seed: u64,
}

impl BatchStream<'_> {
    pub fn epoch(
        &self,
        epoch: usize,
        error_cfg: Option<&ErrorSetConfig>,
    ) -> Result<Vec<Batch>, DataError> {
        make_batches(
            self.records,
            self.vocab,
            self.batch_size,
            Some(super::mix_seed(self.seed, epoch as u64)),
            error_cfg,
        )
    }
}
