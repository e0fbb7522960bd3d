//! Multi-writer synthetic pen signals.
//!
//! Every character owns a smooth template (a random low-order Fourier series
//! per channel). A word is its characters' templates laid end to end; a writer
//! rescales channels, shifts them, and time-warps the whole word; each sample
//! then gets fresh Gaussian noise.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{mix_seed, DataError, SampleRecord, Signal};

/// Frames per character template.
pub const TEMPLATE_LEN_RANGE: RangeInclusive<usize> = 8..=14;
const HARMONICS: usize = 3;
const NOISE_STD: f64 = 0.05;
const WARP_RANGE: RangeInclusive<f64> = 0.8..=1.25;

// Stream tags for derived seeds.
const TAG_TEMPLATE: u64 = 1;
const TAG_WRITER: u64 = 2;
const TAG_NOISE: u64 = 3;
const TAG_WORDS: u64 = 4;

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub words: Vec<String>,
    pub writers: usize,
    pub samples: usize,
    pub channels: usize,
    pub seed: u64,
}

impl SynthConfig {
    /// `n` distinct random lowercase words of length 3..=7.
    pub fn random_words(n: usize, seed: u64) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, TAG_WORDS));
        let mut out: Vec<String> = Vec::with_capacity(n);
        while out.len() < n {
            let len = rng.random_range(3..=7);
            let w: String = (0..len)
                .map(|_| rng.random_range(b'a'..=b'z') as char)
                .collect();
            if !out.contains(&w) {
                out.push(w);
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
struct Template {
    /// `frames × channels`
    data: Vec<f64>,
}

fn make_template(ch: char, channels: usize, seed: u64) -> Template {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(seed, TAG_TEMPLATE), ch as u64));
    let len = rng.random_range(TEMPLATE_LEN_RANGE);
    let mut data = vec![0.0; len * channels];
    for c in 0..channels {
        let offset = rng.random_range(-0.5..0.5);
        let coeffs: Vec<(f64, f64)> = (1..=HARMONICS)
            .map(|k| {
                (
                    rng.random_range(-1.0..1.0) / k as f64,
                    rng.random_range(0.0..2.0 * PI),
                )
            })
            .collect();
        for t in 0..len {
            let x = t as f64 / len as f64;
            let v: f64 = coeffs
                .iter()
                .enumerate()
                .map(|(k, (a, phase))| a * (2.0 * PI * (k + 1) as f64 * x + phase).sin())
                .sum();
            data[t * channels + c] = offset + v;
        }
    }
    Template { data }
}

#[derive(Clone, Debug)]
struct WriterStyle {
    scale: Vec<f64>,
    shift: Vec<f64>,
    warp: f64,
}

fn make_style(writer: usize, channels: usize, seed: u64) -> WriterStyle {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(seed, TAG_WRITER), writer as u64));
    WriterStyle {
        scale: (0..channels).map(|_| rng.random_range(0.7..1.3)).collect(),
        shift: (0..channels).map(|_| rng.random_range(-0.3..0.3)).collect(),
        warp: rng.random_range(WARP_RANGE),
    }
}

/// Frames in a warped word: `round(warp · Σ template lengths)`, at least 1.
pub(crate) fn warped_len(base: usize, warp: f64) -> usize {
    ((warp * base as f64).round() as usize).max(1)
}

/// Generate `samples` records. Sample `i` writes word `i mod |words|` by writer
/// `(i / |words|) mod writers`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<SampleRecord>, DataError> {
    if cfg.words.is_empty() || cfg.words.iter().any(|w| w.is_empty()) {
        return Err(DataError::Invalid(
            "synthetic words must be non-empty".into(),
        ));
    }
    if cfg.writers == 0 || cfg.channels == 0 {
        return Err(DataError::Invalid(
            "writers and channels must be positive".into(),
        ));
    }
    let mut templates: BTreeMap<char, Template> = BTreeMap::new();
    for ch in cfg.words.iter().flat_map(|w| w.chars()) {
        templates
            .entry(ch)
            .or_insert_with(|| make_template(ch, cfg.channels, cfg.seed));
    }
    let styles: Vec<WriterStyle> = (0..cfg.writers)
        .map(|w| make_style(w, cfg.channels, cfg.seed))
        .collect();
    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");
    let c = cfg.channels;

    let mut out = Vec::with_capacity(cfg.samples);
    for i in 0..cfg.samples {
        let word = &cfg.words[i % cfg.words.len()];
        let writer = (i / cfg.words.len()) % cfg.writers;
        let style = &styles[writer];
        let mut base: Vec<f64> = Vec::new();
        for ch in word.chars() {
            base.extend_from_slice(&templates[&ch].data);
        }
        let base_len = base.len() / c;
        let frames = warped_len(base_len, style.warp);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(cfg.seed, TAG_NOISE), i as u64));
        let mut data = Vec::with_capacity(frames * c);
        for t in 0..frames {
            // Linear resampling of the base sequence onto the warped grid.
            let u = if frames == 1 {
                0.0
            } else {
                t as f64 * (base_len - 1) as f64 / (frames - 1) as f64
            };
            let lo = u.floor() as usize;
            let hi = (lo + 1).min(base_len - 1);
            let frac = u - lo as f64;
            for ch in 0..c {
                let v = base[lo * c + ch] * (1.0 - frac) + base[hi * c + ch] * frac;
                let styled = v * style.scale[ch] + style.shift[ch] + noise.sample(&mut rng);
                data.push(styled as f32);
            }
        }
        out.push(SampleRecord {
            sample_id: format!("s{i:06}"),
            writer_id: format!("w{writer:03}"),
            transcript: word.clone(),
            signal: Signal::new(frames, c, data)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
fn template_len(ch: char, channels: usize, seed: u64) -> usize {
    make_template(ch, channels, seed).data.len() / channels
}

#[cfg(test)]
fn writer_warp(writer: usize, channels: usize, seed: u64) -> f64 {
    make_style(writer, channels, seed).warp
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(samples: usize) -> SynthConfig {
        SynthConfig {
            words: vec!["ab".into(), "bca".into()],
            writers: 2,
            samples,
            channels: 4,
            seed: 11,
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            synth_generate(&cfg(6)).unwrap(),
            synth_generate(&cfg(6)).unwrap()
        );
    }

    #[test]
    fn writers_differ_on_same_word() {
        let r = synth_generate(&cfg(4)).unwrap();
        // samples 0 and 2 are word "ab" by writers 0 and 1
        assert_eq!(r[0].transcript, r[2].transcript);
        assert_ne!(r[0].writer_id, r[2].writer_id);
        assert_ne!(r[0].signal, r[2].signal);
    }

    #[test]
    fn length_follows_warp_formula() {
        let c = cfg(4);
        for (i, r) in synth_generate(&c).unwrap().iter().enumerate() {
            let base: usize = r
                .transcript
                .chars()
                .map(|ch| template_len(ch, 4, c.seed))
                .sum();
            let warp = writer_warp((i / 2) % 2, 4, c.seed);
            assert!((0.8..=1.25).contains(&warp));
            assert_eq!(r.signal.frames, (warp * base as f64).round() as usize);
        }
    }

    #[test]
    fn random_words_are_distinct() {
        let w = SynthConfig::random_words(30, 5);
        let set: std::collections::BTreeSet<_> = w.iter().collect();
        assert_eq!(set.len(), 30);
        assert_eq!(w, SynthConfig::random_words(30, 5));
    }
}
