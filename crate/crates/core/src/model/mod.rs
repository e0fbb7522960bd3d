//! Deployable recognizer, training-only alignment branch, and the bundle that
//! owns both plus their parameters.

mod align;
mod checkpoint;
mod sensor;

pub use align::{
    AlignedEmbeddings, AttentionPool, AuxBranch, AuxConfig, EncoderBlock, TextEncoder,
};
pub use checkpoint::{
    export_inference_model, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint,
    CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use sensor::{ConvStage, SensorConfig, SensorModel, SensorOutput, SizePreset};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{Tape, Tensor, TensorError};
use crate::data::{mix_seed, Vocabulary};
use crate::nn::{Ctx, Group, ParamStore};
use crate::objectives::LossError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input length {length} is below the minimum of {minimum} frames")]
    InputTooShort { length: usize, minimum: usize },
    #[error("unknown character id {id}")]
    UnknownToken { id: u32 },
    #[error("transcript of {len} characters exceeds the encoder limit of {max}")]
    TooLong { len: usize, max: usize },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

const SENSOR_STREAM: u64 = 10;
const AUX_STREAM: u64 = 11;

/// Parameters plus the modules that read them.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub sensor: SensorModel,
    pub aux: Option<AuxBranch>,
}

impl ModelBundle {
    /// Sensor and alignment branch draw from separate streams, so adding the
    /// branch leaves the recognizer's initialization unchanged.
    pub fn new(
        vocab: Vocabulary,
        sensor_cfg: SensorConfig,
        aux_cfg: Option<AuxConfig>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if sensor_cfg.num_classes != vocab.num_classes() {
            return Err(ModelError::Config(format!(
                "sensor has {} classes, vocabulary needs {}",
                sensor_cfg.num_classes,
                vocab.num_classes()
            )));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, SENSOR_STREAM));
        let sensor = SensorModel::new(&mut store, &mut rng, sensor_cfg)?;
        let aux = match aux_cfg {
            Some(cfg) => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, AUX_STREAM));
                let d_in = sensor.cfg.feature_dim();
                Some(AuxBranch::new(
                    &mut store,
                    &mut rng,
                    cfg,
                    d_in,
                    vocab.len(),
                )?)
            }
            None => None,
        };
        Ok(Self {
            vocab,
            store,
            sensor,
            aux,
        })
    }

    /// Eval-mode logits `[B, T', classes]` and output lengths.
    pub fn logits(
        &self,
        signals: &Tensor,
        lengths: &[usize],
    ) -> Result<(Tensor, Vec<usize>), ModelError> {
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &self.store);
        let out = self
            .sensor
            .forward(&ctx, tape.constant(signals.clone()), lengths)?;
        Ok(((*out.logits.value()).clone(), out.out_lengths))
    }

    /// Copy holding only the deployable parameters.
    pub fn primary_only(&self) -> Result<Self, ModelError> {
        let mut out = Self::new(self.vocab.clone(), self.sensor.cfg.clone(), None, 0)?;
        for (id, p) in out.store.clone().iter() {
            let src = self
                .store
                .id_of(&p.name)
                .ok_or_else(|| CheckpointError::MissingParam(p.name.clone()))?;
            *out.store.value_mut(id) = (*self.store.get(src).value).clone();
        }
        Ok(out)
    }

    pub fn param_count(&self, group: Group) -> usize {
        self.store.numel(group)
    }
}
