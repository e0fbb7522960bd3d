use std::fmt::Write as _;
use std::str::FromStr;

use crate::model::{AuxConfig, SensorConfig, SizePreset};
use crate::nn::NormKind;
use crate::objectives::{Objectives, DEFAULT_SMOOTHING};

use super::TrainError;

/// Everything a training run depends on. The `key = value` config format
/// uses the field names below.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    pub lr_primary: f64,
    pub lr_aux: f64,
    pub weight_decay: f64,
    pub objectives: Objectives,
    /// Error sets per sample; each contributes three negatives.
    pub error_sets: usize,
    pub seed: u64,
    pub norm_kind: NormKind,
    pub gated: bool,
    pub num_registers: usize,
    pub preset: SizePreset,
    pub aux_dim: usize,
    pub pool_heads: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    pub attn_dropout: f64,
    pub ffn_mult: usize,
    pub max_len: usize,
    pub smoothing: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    /// Reuse epoch 0's negatives for every epoch.
    pub freeze_negatives: bool,
    /// Also decode the training split after every epoch.
    pub eval_train: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let aux = AuxConfig::default();
        Self {
            epochs: 300,
            batch_size: 64,
            warmup_epochs: 30,
            lr_primary: 1e-3,
            lr_aux: 2.5e-4,
            weight_decay: 1e-2,
            objectives: Objectives::ALL,
            error_sets: 2,
            seed: 0,
            norm_kind: aux.norm_kind,
            gated: aux.gated,
            num_registers: aux.num_registers,
            preset: SizePreset::S,
            aux_dim: aux.dim,
            pool_heads: aux.pool_heads,
            text_layers: aux.text_layers,
            text_heads: aux.text_heads,
            attn_dropout: aux.attn_dropout,
            ffn_mult: aux.ffn_mult,
            max_len: aux.max_len,
            smoothing: DEFAULT_SMOOTHING,
            clip_norm: 5.0,
            freeze_negatives: false,
            eval_train: false,
        }
    }
}

pub(crate) const KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "warmup_epochs",
    "lr_primary",
    "lr_aux",
    "weight_decay",
    "objectives",
    "error_sets",
    "seed",
    "norm_kind",
    "gated",
    "num_registers",
    "preset",
    "aux_dim",
    "pool_heads",
    "text_layers",
    "text_heads",
    "attn_dropout",
    "ffn_mult",
    "max_len",
    "smoothing",
    "clip_norm",
    "freeze_negatives",
    "eval_train",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, TrainError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| TrainError::Config(format!("{key} = {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, TrainError> {
    match value.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(TrainError::Config(format!(
            "{key} = {value:?}: expected a boolean"
        ))),
    }
}

impl TrainConfig {
    /// Set one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        let v = value.trim();
        match key.trim() {
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "warmup_epochs" => self.warmup_epochs = parse(key, v)?,
            "lr_primary" => self.lr_primary = parse(key, v)?,
            "lr_aux" => self.lr_aux = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "objectives" => self.objectives = parse(key, v)?,
            "error_sets" => self.error_sets = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "norm_kind" => self.norm_kind = parse(key, v)?,
            "gated" => self.gated = parse_bool(key, v)?,
            "num_registers" => self.num_registers = parse(key, v)?,
            "preset" => self.preset = parse(key, v)?,
            "aux_dim" => self.aux_dim = parse(key, v)?,
            "pool_heads" => self.pool_heads = parse(key, v)?,
            "text_layers" => self.text_layers = parse(key, v)?,
            "text_heads" => self.text_heads = parse(key, v)?,
            "attn_dropout" => self.attn_dropout = parse(key, v)?,
            "ffn_mult" => self.ffn_mult = parse(key, v)?,
            "max_len" => self.max_len = parse(key, v)?,
            "smoothing" => self.smoothing = parse(key, v)?,
            "clip_norm" => self.clip_norm = parse(key, v)?,
            "freeze_negatives" => self.freeze_negatives = parse_bool(key, v)?,
            "eval_train" => self.eval_train = parse_bool(key, v)?,
            other => return Err(TrainError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), TrainError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                TrainError::Config(format!("line {}: expected `key = value`", n + 1))
            })?;
            self.set(k, v)
                .map_err(|e| TrainError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, TrainError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical `key = value` form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.value_of(key));
        }
        s
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "warmup_epochs" => self.warmup_epochs.to_string(),
            "lr_primary" => format!("{:?}", self.lr_primary),
            "lr_aux" => format!("{:?}", self.lr_aux),
            "weight_decay" => format!("{:?}", self.weight_decay),
            "objectives" => self.objectives.to_string(),
            "error_sets" => self.error_sets.to_string(),
            "seed" => self.seed.to_string(),
            "norm_kind" => self.norm_kind.as_str().to_string(),
            "gated" => self.gated.to_string(),
            "num_registers" => self.num_registers.to_string(),
            "preset" => self.preset.to_string(),
            "aux_dim" => self.aux_dim.to_string(),
            "pool_heads" => self.pool_heads.to_string(),
            "text_layers" => self.text_layers.to_string(),
            "text_heads" => self.text_heads.to_string(),
            "attn_dropout" => format!("{:?}", self.attn_dropout),
            "ffn_mult" => self.ffn_mult.to_string(),
            "max_len" => self.max_len.to_string(),
            "smoothing" => format!("{:?}", self.smoothing),
            "clip_norm" => format!("{:?}", self.clip_norm),
            "freeze_negatives" => self.freeze_negatives.to_string(),
            "eval_train" => self.eval_train.to_string(),
            _ => unreachable!("key list and value_of disagree on {key}"),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            return bad(format!(
                "need 0 ≤ warmup_epochs < epochs (got {} and {})",
                self.warmup_epochs, self.epochs
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr_primary > 0.0 && self.lr_aux >= 0.0 && self.lr_aux <= self.lr_primary) {
            return bad(format!(
                "need 0 ≤ lr_aux ≤ lr_primary with lr_primary > 0 (got {} and {})",
                self.lr_aux, self.lr_primary
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!(
                "weight_decay must be finite and ≥ 0, got {}",
                self.weight_decay
            ));
        }
        if !(0.0..=1.0).contains(&self.smoothing) {
            return bad(format!(
                "smoothing must lie in [0, 1], got {}",
                self.smoothing
            ));
        }
        if !(self.clip_norm >= 0.0) {
            return bad(format!("clip_norm must be ≥ 0, got {}", self.clip_norm));
        }
        if !(0.0..1.0).contains(&self.attn_dropout) {
            return bad(format!(
                "attn_dropout must lie in [0, 1), got {}",
                self.attn_dropout
            ));
        }
        if self.objectives.needs_aux() {
            self.aux_config().validate()?;
        }
        Ok(())
    }

    pub fn sensor_config(&self, num_classes: usize) -> SensorConfig {
        SensorConfig::preset(self.preset, num_classes)
    }

    pub fn aux_config(&self) -> AuxConfig {
        AuxConfig {
            dim: self.aux_dim,
            pool_heads: self.pool_heads,
            text_layers: self.text_layers,
            text_heads: self.text_heads,
            attn_dropout: self.attn_dropout,
            norm_kind: self.norm_kind,
            gated: self.gated,
            num_registers: self.num_registers,
            max_len: self.max_len,
            ffn_mult: self.ffn_mult,
        }
    }

    /// Negatives are generated only when the error-contrastive term is on.
    pub fn active_error_sets(&self) -> usize {
        if self.objectives.ec {
            self.error_sets
        } else {
            0
        }
    }
}
