use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Tensor, TensorError, Var};
use crate::data::DEFAULT_CHANNELS;
use crate::nn::{BiLstm, Conv1d, Ctx, Group, Linear, ParamStore};

use super::ModelError;

type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvStage {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvStage {
    pub fn padding(&self) -> usize {
        self.kernel / 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SizePreset {
    S,
    B,
}

impl FromStr for SizePreset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "S" | "s" => Ok(SizePreset::S),
            "B" | "b" => Ok(SizePreset::B),
            other => Err(format!("unknown size preset {other:?} (expected S or B)")),
        }
    }
}

impl fmt::Display for SizePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SizePreset::S => "S",
            SizePreset::B => "B",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SensorConfig {
    pub in_channels: usize,
    pub conv_stages: Vec<ConvStage>,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    /// Vocabulary size plus the blank.
    pub num_classes: usize,
}

impl SensorConfig {
    pub fn preset(preset: SizePreset, num_classes: usize) -> Self {
        let stage = |out_channels, stride| ConvStage {
            out_channels,
            kernel: 5,
            stride,
        };
        match preset {
            SizePreset::S => Self {
                in_channels: DEFAULT_CHANNELS,
                conv_stages: vec![stage(32, 2), stage(48, 2), stage(64, 1)],
                lstm_hidden: 64,
                lstm_layers: 1,
                num_classes,
            },
            SizePreset::B => Self {
                in_channels: DEFAULT_CHANNELS,
                conv_stages: vec![stage(64, 2), stage(96, 2), stage(128, 1), stage(160, 1)],
                lstm_hidden: 128,
                lstm_layers: 2,
                num_classes,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.num_classes < 2 {
            return bad(format!("num_classes {} < 2", self.num_classes));
        }
        if self.in_channels == 0 || self.lstm_hidden == 0 || self.lstm_layers == 0 {
            return bad("channel, hidden and layer counts must be positive".into());
        }
        if self.conv_stages.is_empty() {
            return bad("at least one conv stage is required".into());
        }
        if let Some(s) = self
            .conv_stages
            .iter()
            .find(|s| s.out_channels == 0 || s.kernel == 0 || s.stride == 0)
        {
            return bad(format!("degenerate conv stage {s:?}"));
        }
        Ok(())
    }

    /// Product of the conv strides.
    pub fn downsampling(&self) -> usize {
        self.conv_stages.iter().map(|s| s.stride).product()
    }

    /// Frames after every conv stage, or `None` if a kernel overruns.
    pub fn output_len(&self, len: usize) -> Option<usize> {
        self.conv_stages.iter().try_fold(len, |l, s| {
            crate::nn::conv_output_len(l, s.kernel, s.stride, s.padding()).filter(|&o| o > 0)
        })
    }

    /// Smallest input length with a non-empty output.
    pub fn min_input_len(&self) -> usize {
        (1..)
            .find(|&t| self.output_len(t).is_some())
            .expect("some length fits")
    }

    pub fn feature_dim(&self) -> usize {
        self.conv_stages
            .last()
            .map_or(self.in_channels, |s| s.out_channels)
    }
}

/// Per-frame logits and the feature tap handed to the alignment branch.
#[derive(Debug)]
pub struct SensorOutput<'t> {
    /// `[B, T', num_classes]`
    pub logits: Var<'t>,
    /// `[B, T', feature_dim]`, the last conv stage after activation.
    pub features: Var<'t>,
    pub out_lengths: Vec<usize>,
}

/// Convolutional encoder, bidirectional recurrent decoder, linear CTC head.
#[derive(Clone, Debug)]
pub struct SensorModel {
    pub cfg: SensorConfig,
    pub convs: Vec<Conv1d>,
    pub lstms: Vec<BiLstm>,
    pub head: Linear,
}

impl SensorModel {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, cfg: SensorConfig) -> Result<Self> {
        cfg.validate()?;
        let g = Group::Primary;
        let mut convs = Vec::new();
        let mut c_in = cfg.in_channels;
        for (i, s) in cfg.conv_stages.iter().enumerate() {
            convs.push(Conv1d::new(
                store,
                rng,
                &format!("sensor.conv{i}"),
                g,
                c_in,
                s.out_channels,
                s.kernel,
                s.stride,
                s.padding(),
            ));
            c_in = s.out_channels;
        }
        let mut lstms = Vec::new();
        for i in 0..cfg.lstm_layers {
            lstms.push(BiLstm::new(
                store,
                rng,
                &format!("sensor.lstm{i}"),
                g,
                c_in,
                cfg.lstm_hidden,
            ));
            c_in = 2 * cfg.lstm_hidden;
        }
        let head = Linear::new(store, rng, "sensor.head", g, c_in, cfg.num_classes, true);
        Ok(Self {
            cfg,
            convs,
            lstms,
            head,
        })
    }

    /// `signals: [B, T, C]` with per-sample valid `lengths`. Content past a
    /// sample's length never reaches its outputs.
    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t>,
        signals: Var<'t>,
        lengths: &[usize],
    ) -> Result<SensorOutput<'t>> {
        let shape = signals.shape();
        if shape.len() != 3 || shape[2] != self.cfg.in_channels || shape[0] != lengths.len() {
            return Err(ModelError::Tensor(TensorError::ShapeMismatch {
                op: "sensor_forward",
                shapes: vec![shape, vec![lengths.len(), 0, self.cfg.in_channels]],
            }));
        }
        let min = self.cfg.min_input_len();
        if let Some(&short) = lengths.iter().find(|&&l| l < min || l > shape[1]) {
            return Err(ModelError::InputTooShort {
                length: short,
                minimum: min,
            });
        }
        let mut lens = lengths.to_vec();
        let mut x = mask_tail(ctx, signals, &lens)?;
        for conv in &self.convs {
            x = conv.forward(ctx, x)?.relu()?;
            for l in &mut lens {
                *l = conv.output_len(*l).expect("validated length");
            }
            x = mask_tail(ctx, x, &lens)?;
        }
        let features = x;
        for lstm in &self.lstms {
            x = lstm.forward(ctx, x, &lens)?;
        }
        let logits = self.head.forward(ctx, x)?;
        Ok(SensorOutput {
            logits,
            features,
            out_lengths: lens,
        })
    }
}

/// Zero every frame at or past each sample's length.
fn mask_tail<'t>(
    ctx: &Ctx<'t>,
    x: Var<'t>,
    lens: &[usize],
) -> std::result::Result<Var<'t>, TensorError> {
    let shape = x.shape();
    let (b, t) = (shape[0], shape[1]);
    if lens.iter().all(|&l| l >= t) {
        return Ok(x);
    }
    let mask: Vec<f64> = (0..b * t)
        .map(|k| if k % t < lens[k / t] { 1.0 } else { 0.0 })
        .collect();
    x.mul(ctx.constant(Tensor::new(&[b, t, 1], mask)?))
}
