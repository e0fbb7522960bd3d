//! Optimization loop, evaluation and ablation sweeps.

mod config;
mod optim;
mod sweep;

pub use config::TrainConfig;
pub use optim::{clip_global_norm, lr_at, AdamW};
pub use sweep::{ablation_sweep, arch_grid, error_set_grid, sweep_csv, ConfigDelta, SweepRow};

use std::fmt::Write as _;

use log::{debug, info, warn};
use thiserror::Error;

use crate::autodiff::{Tape, Tensor, TensorError};
use crate::data::{mix_seed, pad_signals, BatchStream, DataError, SampleRecord, Vocabulary};
use crate::metrics::{corpus_error_rates, greedy_decode, Level, MetricError};
use crate::model::{ModelBundle, ModelError};
use crate::negatives::ErrorSetConfig;
use crate::nn::{Ctx, Group, Mode, ParamId};
use crate::objectives::{bc_loss, ctc_batch, ec_loss, total_loss, LossError, LossReport};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("non-finite {what} ({value}) at epoch {epoch}, step {step}")]
    NonFinite {
        epoch: usize,
        step: usize,
        what: &'static str,
        value: f64,
    },
    #[error("no usable training samples: {0}")]
    NoSamples(String),
}

// Seed streams derived from the run seed.
const STREAM_SHUFFLE: u64 = 20;
const STREAM_NEGATIVES: u64 = 21;
const STREAM_DROPOUT: u64 = 22;

/// One optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub report: LossReport,
    /// Similarity scale used in the step, when the alignment branch is on.
    pub tau: Option<f64>,
    pub lr_primary: f64,
    pub lr_aux: f64,
    pub grad_norm: f64,
    pub skipped_ctc: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub mean_l_ctc: f64,
    pub mean_l_bc: f64,
    pub mean_l_ec: f64,
    pub mean_l_total: f64,
    pub skipped_ctc: usize,
    pub val_cer: f64,
    pub val_wer: f64,
    pub train_cer: Option<f64>,
    pub train_wer: Option<f64>,
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Bundle after the last epoch.
    pub last: ModelBundle,
    /// Bundle at the epoch with the best validation CER.
    pub best: ModelBundle,
    pub best_epoch: usize,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Training records dropped for being shorter than the network's receptive minimum.
    pub dropped_short: usize,
}

impl TrainOutcome {
    pub fn best_record(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch]
    }
}

/// Corpus error rates of a model on a record set.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub n_samples: usize,
    pub cer: f64,
    pub wer: f64,
    pub predictions: Vec<String>,
}

/// Greedy-decode every record and score against its transcript. Records
/// too short for the network decode to the empty string.
pub fn evaluate(
    bundle: &ModelBundle,
    records: &[SampleRecord],
    batch_size: usize,
) -> Result<EvalResult, TrainError> {
    if records.is_empty() {
        return Err(TrainError::Data(DataError::Invalid(
            "evaluation set is empty".into(),
        )));
    }
    let min = bundle.sensor.cfg.min_input_len();
    let usable: Vec<usize> = (0..records.len())
        .filter(|&i| records[i].signal.frames >= min)
        .collect();
    let mut predictions = vec![String::new(); records.len()];
    for chunk in usable.chunks(batch_size.max(1)) {
        let (signals, lengths) = pad_signals(records, chunk)?;
        let (logits, out_lens) = bundle.logits(&signals, &lengths)?;
        let shape = logits.shape().to_vec();
        let (t, c) = (shape[1], shape[2]);
        for (b, &i) in chunk.iter().enumerate() {
            let rows = Tensor::new(&[t, c], logits.data()[b * t * c..(b + 1) * t * c].to_vec())?;
            let ids = greedy_decode(&rows, out_lens[b])?;
            predictions[i] = bundle.vocab.decode(&ids)?;
        }
    }
    let pairs: Vec<(&str, &str)> = predictions
        .iter()
        .zip(records)
        .map(|(p, r)| (p.as_str(), r.transcript.as_str()))
        .collect();
    Ok(EvalResult {
        n_samples: records.len(),
        cer: corpus_error_rates(&pairs, Level::Char)?,
        wer: corpus_error_rates(&pairs, Level::Word)?,
        predictions,
    })
}

fn check_finite(
    epoch: usize,
    step: usize,
    what: &'static str,
    value: f64,
) -> Result<(), TrainError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(TrainError::NonFinite {
            epoch,
            step,
            what,
            value,
        })
    }
}

struct StepOutput {
    report: LossReport,
    tau: Option<f64>,
    grads: Vec<(ParamId, Tensor)>,
    skipped: usize,
}

fn forward_backward(
    bundle: &ModelBundle,
    batch: &crate::data::Batch,
    cfg: &TrainConfig,
    dropout_seed: u64,
) -> Result<Option<StepOutput>, TrainError> {
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &bundle.store, Mode::Train, true, dropout_seed);
    let out = bundle
        .sensor
        .forward(&ctx, tape.constant(batch.signals.clone()), &batch.lengths)?;
    let log_probs = out.logits.log_softmax(2)?;
    let targets: Vec<&[u32]> = batch.labels.iter().map(|l| l.0.as_slice()).collect();
    let (ctc, skipped) = ctc_batch(log_probs, &targets, &out.out_lengths, cfg.smoothing)?;
    let Some(ctc) = ctc else {
        return Ok(None);
    };
    let mut tau_value = None;
    let (mut bc, mut ec) = (None, None);
    if let (Some(aux), true) = (&bundle.aux, cfg.objectives.needs_aux()) {
        let al = aux.align_batch(
            &ctx,
            out.features,
            &out.out_lengths,
            &batch.labels,
            &batch.negatives,
        )?;
        let tau = aux.tau(&ctx)?;
        tau_value = Some(tau.item());
        let z_pos = al.z_pos()?;
        if cfg.objectives.bc {
            bc = Some(bc_loss(al.c_sig, z_pos, tau, &batch.labels)?);
        }
        if cfg.objectives.ec {
            ec = Some(match al.z_neg()? {
                Some(z_neg) => ec_loss(al.c_sig, z_pos, z_neg, tau)?,
                None => tape.scalar(0.0),
            });
        }
    }
    let (total, report) = total_loss(ctc, bc, ec)?;
    tape.backward(total)?;
    let grads = ctx
        .bound_params()
        .into_iter()
        .filter_map(|(id, v)| tape.grad(v).map(|g| (id, g)))
        .collect();
    Ok(Some(StepOutput {
        report,
        tau: tau_value,
        grads,
        skipped: skipped.len(),
    }))
}

/// Train on `train`, select by CER on `val`. The vocabulary comes from the
/// training transcripts only.
pub fn train(
    train: &[SampleRecord],
    val: &[SampleRecord],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if val.is_empty() {
        return Err(TrainError::NoSamples("validation split is empty".into()));
    }
    let vocab = Vocabulary::from_records(train);
    if vocab.is_empty() {
        return Err(TrainError::NoSamples(
            "training split has no characters".into(),
        ));
    }
    let sensor_cfg = cfg.sensor_config(vocab.num_classes());
    let aux_cfg = cfg.objectives.needs_aux().then(|| cfg.aux_config());
    let mut bundle = ModelBundle::new(vocab.clone(), sensor_cfg, aux_cfg, cfg.seed)?;

    let min = bundle.sensor.cfg.min_input_len();
    let usable: Vec<SampleRecord> = train
        .iter()
        .filter(|r| r.signal.frames >= min)
        .cloned()
        .collect();
    let dropped_short = train.len() - usable.len();
    if dropped_short > 0 {
        warn!("dropping {dropped_short} training samples shorter than {min} frames");
    }
    if usable.is_empty() {
        return Err(TrainError::NoSamples(format!(
            "every training sample is shorter than {min} frames"
        )));
    }

    let sets = cfg.active_error_sets();
    let stream = BatchStream {
        records: &usable,
        vocab: &vocab,
        batch_size: cfg.batch_size,
        seed: mix_seed(cfg.seed, STREAM_SHUFFLE),
    };
    let mut opt = AdamW::new();
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, f64, usize, ModelBundle)> = None;
    let mut global_step = 0usize;

    for epoch in 0..cfg.epochs {
        let neg_seed = if cfg.freeze_negatives {
            mix_seed(cfg.seed, STREAM_NEGATIVES)
        } else {
            mix_seed(mix_seed(cfg.seed, STREAM_NEGATIVES), epoch as u64)
        };
        let error_cfg = (sets > 0).then(|| ErrorSetConfig::new(sets, vocab.ids(), neg_seed));
        let batches = stream.epoch(epoch, error_cfg.as_ref())?;
        let nb = batches.len();
        let mut sums = [0.0; 4];
        let mut done = 0usize;
        let mut skipped_epoch = 0usize;
        for (s, batch) in batches.iter().enumerate() {
            let frac = epoch as f64 + s as f64 / nb as f64;
            let lr_p = lr_at(frac, Group::Primary, cfg);
            let lr_a = lr_at(frac, Group::Auxiliary, cfg);
            let seed = mix_seed(mix_seed(cfg.seed, STREAM_DROPOUT), global_step as u64);
            let Some(mut out) = forward_backward(&bundle, batch, cfg, seed)? else {
                warn!("epoch {epoch} batch {s}: every CTC target is infeasible, batch skipped");
                skipped_epoch += batch.len();
                continue;
            };
            if out.skipped > 0 {
                warn!(
                    "epoch {epoch} batch {s}: {} infeasible CTC targets skipped",
                    out.skipped
                );
            }
            skipped_epoch += out.skipped;
            let r = out.report;
            for (what, v) in [
                ("l_ctc", r.l_ctc),
                ("l_bc", r.l_bc),
                ("l_ec", r.l_ec),
                ("l_total", r.l_total),
            ] {
                check_finite(epoch, global_step, what, v)?;
            }
            let grad_norm = clip_global_norm(&mut out.grads, cfg.clip_norm);
            check_finite(epoch, global_step, "gradient norm", grad_norm)?;
            opt.step(
                &mut bundle.store,
                &out.grads,
                |g| if g == Group::Primary { lr_p } else { lr_a },
                cfg.weight_decay,
            );
            bundle.store.round_to_storage();
            if let Some((_, p)) = bundle
                .store
                .iter()
                .find(|(_, p)| p.value.data().iter().any(|x| !x.is_finite()))
            {
                let bad = p
                    .value
                    .data()
                    .iter()
                    .copied()
                    .find(|x| !x.is_finite())
                    .unwrap_or(f64::NAN);
                warn!("parameter {} became non-finite", p.name);
                return Err(TrainError::NonFinite {
                    epoch,
                    step: global_step,
                    what: "parameter",
                    value: bad,
                });
            }
            debug!(
                "step {global_step}: ctc {:.5} bc {:.5} ec {:.5} total {:.5}",
                r.l_ctc, r.l_bc, r.l_ec, r.l_total
            );
            for (acc, v) in sums.iter_mut().zip([r.l_ctc, r.l_bc, r.l_ec, r.l_total]) {
                *acc += v;
            }
            done += 1;
            steps.push(StepRecord {
                step: global_step,
                epoch,
                report: r,
                tau: out.tau,
                lr_primary: lr_p,
                lr_aux: lr_a,
                grad_norm,
                skipped_ctc: out.skipped,
            });
            global_step += 1;
        }

        let val_res = evaluate(&bundle, val, cfg.batch_size)?;
        let train_res = if cfg.eval_train {
            Some(evaluate(&bundle, &usable, cfg.batch_size)?)
        } else {
            None
        };
        let mean = |k: usize| {
            if done == 0 {
                0.0
            } else {
                sums[k] / done as f64
            }
        };
        let rec = EpochRecord {
            epoch,
            steps: done,
            mean_l_ctc: mean(0),
            mean_l_bc: mean(1),
            mean_l_ec: mean(2),
            mean_l_total: mean(3),
            skipped_ctc: skipped_epoch,
            val_cer: val_res.cer,
            val_wer: val_res.wer,
            train_cer: train_res.as_ref().map(|r| r.cer),
            train_wer: train_res.as_ref().map(|r| r.wer),
        };
        info!(
            "epoch {epoch}: loss {:.4} val CER {:.4} WER {:.4}",
            rec.mean_l_total, rec.val_cer, rec.val_wer
        );
        let better = match &best {
            None => true,
            Some((cer, wer, _, _)) => (val_res.cer, val_res.wer) < (*cer, *wer),
        };
        if better {
            best = Some((val_res.cer, val_res.wer, epoch, bundle.clone()));
        }
        epochs.push(rec);
    }

    let (_, _, best_epoch, best_bundle) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        last: bundle,
        best: best_bundle,
        best_epoch,
        steps,
        epochs,
        dropped_short,
    })
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-step loss log.
pub fn steps_csv(steps: &[StepRecord]) -> String {
    let mut s = String::from("step,l_ctc,l_bc,l_ec,l_total,tau,lr_primary,lr_aux\n");
    for r in steps {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.step,
            r.report.l_ctc,
            r.report.l_bc,
            r.report.l_ec,
            r.report.l_total,
            opt_num(r.tau),
            r.lr_primary,
            r.lr_aux
        );
    }
    s
}

/// Per-epoch means and error rates.
pub fn epochs_csv(epochs: &[EpochRecord]) -> String {
    let mut s = String::from(
        "epoch,steps,l_ctc,l_bc,l_ec,l_total,skipped_ctc,val_cer,val_wer,train_cer,train_wer\n",
    );
    for r in epochs {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.steps,
            r.mean_l_ctc,
            r.mean_l_bc,
            r.mean_l_ec,
            r.mean_l_total,
            r.skipped_ctc,
            r.val_cer,
            r.val_wer,
            opt_num(r.train_cer),
            opt_num(r.train_wer)
        );
    }
    s
}
