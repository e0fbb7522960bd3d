use std::fmt::Write as _;

use log::info;

use crate::data::SampleRecord;

use super::{train, TrainConfig, TrainError};

/// Overrides applied on top of a base config, as `key = value` pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigDelta(pub Vec<(String, String)>);

impl ConfigDelta {
    pub fn new<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> Self {
        Self(
            pairs
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        )
    }

    /// `key=value;key=value`.
    pub fn parse(s: &str) -> Result<Self, TrainError> {
        let mut pairs = Vec::new();
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| {
                TrainError::Config(format!("grid entry {part:?} is not key=value"))
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Self(pairs))
    }

    pub fn apply(&self, base: &TrainConfig) -> Result<TrainConfig, TrainError> {
        let mut cfg = base.clone();
        for (k, v) in &self.0 {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Normalization × {plain, gated, gated + registers} × {BC, BC + EC}.
pub fn arch_grid() -> Vec<ConfigDelta> {
    let mut out = Vec::new();
    for norm in ["layer", "rms"] {
        for (gated, regs) in [("false", "0"), ("true", "0"), ("true", "4")] {
            for obj in ["ctc,bc", "ctc,bc,ec"] {
                out.push(ConfigDelta::new([
                    ("norm_kind", norm),
                    ("gated", gated),
                    ("num_registers", regs),
                    ("objectives", obj),
                ]));
            }
        }
    }
    out
}

/// Error-set counts 1..=3 with every objective on.
pub fn error_set_grid() -> Vec<ConfigDelta> {
    (1..=3)
        .map(|s| {
            ConfigDelta::new([
                ("objectives", "ctc,bc,ec".to_string()),
                ("error_sets", s.to_string()),
            ])
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub norm: String,
    pub gated: bool,
    pub registers: usize,
    pub objectives: String,
    pub error_sets: usize,
    pub cer: f64,
    pub wer: f64,
    pub best_epoch: usize,
}

/// Train every variant on the same split; report its best validation scores.
pub fn ablation_sweep(
    train_set: &[SampleRecord],
    val: &[SampleRecord],
    base: &TrainConfig,
    grid: &[ConfigDelta],
) -> Result<Vec<SweepRow>, TrainError> {
    let cfgs = grid
        .iter()
        .map(|d| d.apply(base))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::with_capacity(cfgs.len());
    for (i, cfg) in cfgs.iter().enumerate() {
        info!("sweep variant {}/{}: {:?}", i + 1, cfgs.len(), grid[i].0);
        let out = train(train_set, val, cfg)?;
        let best = out.best_record();
        rows.push(SweepRow {
            norm: cfg.norm_kind.as_str().to_string(),
            gated: cfg.gated,
            registers: cfg.num_registers,
            objectives: cfg.objectives.to_string().replace(',', "+"),
            error_sets: cfg.active_error_sets(),
            cer: best.val_cer,
            wer: best.val_wer,
            best_epoch: out.best_epoch,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("norm,GA,Reg,objectives,S,CER,WER,best_epoch\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.norm,
            u8::from(r.gated),
            r.registers,
            r.objectives,
            r.error_sets,
            r.cer,
            r.wer,
            r.best_epoch
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_have_expected_shape() {
        let t = arch_grid();
        assert_eq!(t.len(), 12);
        let base = TrainConfig::default();
        let cfgs: Vec<TrainConfig> = t.iter().map(|d| d.apply(&base).unwrap()).collect();
        for i in 0..cfgs.len() {
            for j in 0..i {
                assert_ne!(cfgs[i], cfgs[j]);
            }
        }
        let s: Vec<usize> = error_set_grid()
            .iter()
            .map(|d| d.apply(&base).unwrap().error_sets)
            .collect();
        assert_eq!(s, vec![1, 2, 3]);
    }

    #[test]
    fn delta_parse() {
        let d = ConfigDelta::parse("gated=true; objectives=ctc,bc ;error_sets=3").unwrap();
        let c = d.apply(&TrainConfig::default()).unwrap();
        assert!(c.gated && c.objectives.bc && !c.objectives.ec && c.error_sets == 3);
        assert!(ConfigDelta::parse("gated").is_err());
        assert!(ConfigDelta::parse("nope=1")
            .unwrap()
            .apply(&TrainConfig::default())
            .is_err());
    }
}
