use std::collections::HashMap;

use rand::Rng;

use crate::autodiff::{Tensor, TensorError, Var};
use crate::data::LabelSeq;
use crate::nn::{
    init, sinusoidal_positions, AttentionConfig, Ctx, Embedding, Group, LearnedPositions, Linear,
    MultiHeadAttention, Norm, NormKind, ParamId, ParamStore,
};
use crate::objectives::Temperature;

use super::ModelError;

type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Debug, PartialEq)]
pub struct AuxConfig {
    /// Shared embedding width of pooling output and text encoder.
    pub dim: usize,
    pub pool_heads: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    pub attn_dropout: f64,
    pub norm_kind: NormKind,
    pub gated: bool,
    pub num_registers: usize,
    /// Token budget of the text encoder: CLS + registers + characters.
    pub max_len: usize,
    pub ffn_mult: usize,
}

impl Default for AuxConfig {
    fn default() -> Self {
        Self {
            dim: 512,
            pool_heads: 8,
            text_layers: 3,
            text_heads: 8,
            attn_dropout: 0.1,
            norm_kind: NormKind::Layer,
            gated: false,
            num_registers: 4,
            max_len: 48,
            ffn_mult: 4,
        }
    }
}

impl AuxConfig {
    pub fn validate(&self) -> Result<()> {
        for (heads, what) in [
            (self.pool_heads, "pooling"),
            (self.text_heads, "text encoder"),
        ] {
            if heads == 0 || self.dim % heads != 0 {
                return Err(ModelError::Config(format!(
                    "{what}: dim {} not divisible by {heads} heads",
                    self.dim
                )));
            }
        }
        if self.dim % 2 != 0 {
            return Err(ModelError::Config(format!("dim {} must be even", self.dim)));
        }
        if self.text_layers == 0 || self.ffn_mult == 0 {
            return Err(ModelError::Config(
                "text encoder needs ≥ 1 layer and ffn_mult ≥ 1".into(),
            ));
        }
        if self.max_len < self.num_registers + 2 {
            return Err(ModelError::Config(format!(
                "max_len {} leaves no room for characters after CLS and {} registers",
                self.max_len, self.num_registers
            )));
        }
        Ok(())
    }

    /// Longest transcript the encoder accepts.
    pub fn max_chars(&self) -> usize {
        self.max_len - 1 - self.num_registers
    }
}

/// Linear projection, sinusoidal positions, then one attention step whose
/// query is the mean over valid frames.
#[derive(Clone, Debug)]
pub struct AttentionPool {
    pub proj: Linear,
    pub attn: MultiHeadAttention,
    pub dim: usize,
}

impl AttentionPool {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        d_in: usize,
        cfg: &AuxConfig,
    ) -> Result<Self> {
        let g = Group::Auxiliary;
        let proj = Linear::new(store, rng, "aux.pool.proj", g, d_in, cfg.dim, true);
        let attn = MultiHeadAttention::new(
            store,
            rng,
            "aux.pool.attn",
            g,
            AttentionConfig {
                num_heads: cfg.pool_heads,
                model_dim: cfg.dim,
                dropout_p: 0.0,
                gated: cfg.gated,
            },
        )?;
        Ok(Self {
            proj,
            attn,
            dim: cfg.dim,
        })
    }

    /// `features: [B, T', d_in]` → `[B, dim]` (not normalized). Each sample
    /// only sees its first `lens[b]` frames.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, features: Var<'t>, lens: &[usize]) -> Result<Var<'t>> {
        let shape = features.shape();
        if shape.len() != 3 || shape[0] != lens.len() {
            return Err(ModelError::Tensor(TensorError::ShapeMismatch {
                op: "attention_pool",
                shapes: vec![shape, vec![lens.len()]],
            }));
        }
        if let Some(b) = lens.iter().position(|&l| l == 0 || l > shape[1]) {
            return Err(ModelError::Config(format!(
                "attention pooling: sample {b} has valid length {} (frames {})",
                lens[b], shape[1]
            )));
        }
        let projected = self.proj.forward(ctx, features)?;
        let pe = sinusoidal_positions(shape[1], self.dim)?;
        let mut pooled = Vec::with_capacity(lens.len());
        for (b, &len) in lens.iter().enumerate() {
            let pos = ctx.constant(Tensor::from_parts(
                vec![1, len, self.dim],
                pe.data()[..len * self.dim].to_vec(),
            ));
            let seq = projected.slice(0, b, b + 1)?.slice(1, 0, len)?.add(pos)?;
            let query = seq.mean_axis(1)?.reshape(&[1, 1, self.dim])?;
            pooled.push(
                self.attn
                    .forward(ctx, query, seq, None)?
                    .reshape(&[1, self.dim])?,
            );
        }
        Ok(Var::concat(&pooled, 0)?)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub norm_attn: Norm,
    pub attn: MultiHeadAttention,
    pub norm_ffn: Norm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

/// Character-level pre-norm Transformer with a CLS token and optional
/// register tokens; positions are learned and added to characters only.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub chars: Embedding,
    pub cls: ParamId,
    pub registers: Option<ParamId>,
    pub positions: LearnedPositions,
    pub blocks: Vec<EncoderBlock>,
    pub final_norm: Norm,
    pub vocab_size: usize,
    pub cfg: AuxConfig,
}

impl TextEncoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        vocab_size: usize,
        cfg: &AuxConfig,
    ) -> Result<Self> {
        let g = Group::Auxiliary;
        let d = cfg.dim;
        // Row 0 mirrors the blank id and is never looked up.
        let chars = Embedding::new(store, rng, "aux.text.chars", g, vocab_size + 1, d);
        let cls = store.add("aux.text.cls", g, init::normal(rng, &[1, d], 0.02));
        let registers = (cfg.num_registers > 0).then(|| {
            store.add(
                "aux.text.registers",
                g,
                init::normal(rng, &[cfg.num_registers, d], 0.02),
            )
        });
        let positions =
            LearnedPositions::new(store, rng, "aux.text.positions", g, cfg.max_chars(), d);
        let mut blocks = Vec::with_capacity(cfg.text_layers);
        for i in 0..cfg.text_layers {
            let name = format!("aux.text.block{i}");
            blocks.push(EncoderBlock {
                norm_attn: Norm::new(store, &format!("{name}.norm_attn"), g, cfg.norm_kind, d),
                attn: MultiHeadAttention::new(
                    store,
                    rng,
                    &format!("{name}.attn"),
                    g,
                    AttentionConfig {
                        num_heads: cfg.text_heads,
                        model_dim: d,
                        dropout_p: cfg.attn_dropout,
                        gated: cfg.gated,
                    },
                )?,
                norm_ffn: Norm::new(store, &format!("{name}.norm_ffn"), g, cfg.norm_kind, d),
                ffn_in: Linear::new(
                    store,
                    rng,
                    &format!("{name}.ffn_in"),
                    g,
                    d,
                    cfg.ffn_mult * d,
                    true,
                ),
                ffn_out: Linear::new(
                    store,
                    rng,
                    &format!("{name}.ffn_out"),
                    g,
                    cfg.ffn_mult * d,
                    d,
                    true,
                ),
            });
        }
        let final_norm = Norm::new(store, "aux.text.final_norm", g, cfg.norm_kind, d);
        Ok(Self {
            chars,
            cls,
            registers,
            positions,
            blocks,
            final_norm,
            vocab_size,
            cfg: cfg.clone(),
        })
    }

    /// Encode several transcripts at once → `[K, dim]` CLS outputs (not normalized).
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, labels: &[&LabelSeq]) -> Result<Var<'t>> {
        let d = self.cfg.dim;
        let max_chars = self.cfg.max_chars();
        let mut longest = 1;
        for l in labels {
            if let Some(&bad) = l
                .ids()
                .iter()
                .find(|&&id| id == 0 || id as usize > self.vocab_size)
            {
                return Err(ModelError::UnknownToken { id: bad });
            }
            if l.len() > max_chars {
                return Err(ModelError::TooLong {
                    len: l.len(),
                    max: max_chars,
                });
            }
            longest = longest.max(l.len());
        }
        if labels.is_empty() {
            return Err(ModelError::Config(
                "text encoder called with no transcripts".into(),
            ));
        }
        let prefix = 1 + self.cfg.num_registers;
        let seq_len = prefix + longest;
        let cls = ctx.param(self.cls);
        let regs = self.registers.map(|r| ctx.param(r));
        let table = ctx.param(self.chars.table);
        let positions = self.positions.forward(ctx, longest)?;
        let mut rows = Vec::with_capacity(labels.len());
        let mut valid = Vec::with_capacity(labels.len() * seq_len);
        for l in labels {
            let mut parts = vec![cls];
            parts.extend(regs);
            if !l.is_empty() {
                let ids: Vec<usize> = l.ids().iter().map(|&i| i as usize).collect();
                parts.push(
                    table
                        .gather_rows(&ids)?
                        .add(positions.slice(0, 0, l.len())?)?,
                );
            }
            if l.len() < longest {
                parts.push(ctx.constant(Tensor::zeros(&[longest - l.len(), d])));
            }
            rows.push(Var::concat(&parts, 0)?.reshape(&[1, seq_len, d])?);
            valid.extend((0..seq_len).map(|k| k < prefix + l.len()));
        }
        let mut x = Var::concat(&rows, 0)?;
        for block in &self.blocks {
            let h = block.norm_attn.forward(ctx, x)?;
            x = x.add(block.attn.forward(ctx, h, h, Some(&valid))?)?;
            let h = block.norm_ffn.forward(ctx, x)?;
            let h = block
                .ffn_out
                .forward(ctx, block.ffn_in.forward(ctx, h)?.relu()?)?;
            x = x.add(h)?;
        }
        let k = labels.len();
        let cls_out = x.slice(1, 0, 1)?.reshape(&[k, d])?;
        Ok(self.final_norm.forward(ctx, cls_out)?)
    }
}

/// Training-only branch: pooling, text encoder and the shared temperature.
#[derive(Clone, Debug)]
pub struct AuxBranch {
    pub cfg: AuxConfig,
    pub pool: AttentionPool,
    pub text: TextEncoder,
    pub temperature: Temperature,
}

/// L2-normalized rows: `c_sig [N, dim]`, then `z_text` holding the N positives
/// followed by the `N · M` negatives in sample-major order.
pub struct AlignedEmbeddings<'t> {
    pub c_sig: Var<'t>,
    pub z_text: Var<'t>,
    pub n: usize,
    pub m: usize,
}

impl<'t> AlignedEmbeddings<'t> {
    pub fn z_pos(&self) -> std::result::Result<Var<'t>, TensorError> {
        self.z_text.slice(0, 0, self.n)
    }

    /// `[N, M, dim]`; `None` when there are no negatives.
    pub fn z_neg(&self) -> std::result::Result<Option<Var<'t>>, TensorError> {
        if self.m == 0 {
            return Ok(None);
        }
        let d = self.z_text.shape()[1];
        Ok(Some(
            self.z_text
                .slice(0, self.n, self.n * (1 + self.m))?
                .reshape(&[self.n, self.m, d])?,
        ))
    }
}

impl AuxBranch {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        cfg: AuxConfig,
        feature_dim: usize,
        vocab_size: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let pool = AttentionPool::new(store, rng, feature_dim, &cfg)?;
        let text = TextEncoder::new(store, rng, vocab_size, &cfg)?;
        let temperature = Temperature::new(store, "aux.log_tau");
        Ok(Self {
            cfg,
            pool,
            text,
            temperature,
        })
    }

    /// Pool the sensor features and encode every positive and negative
    /// transcript; each distinct transcript is encoded once.
    pub fn align_batch<'t>(
        &self,
        ctx: &Ctx<'t>,
        features: Var<'t>,
        lens: &[usize],
        labels: &[LabelSeq],
        negatives: &[Vec<LabelSeq>],
    ) -> Result<AlignedEmbeddings<'t>> {
        let n = labels.len();
        let m = negatives.first().map_or(0, Vec::len);
        if negatives.len() != n && !(negatives.is_empty() && m == 0) {
            return Err(ModelError::Config(format!(
                "{} negative lists for {n} samples",
                negatives.len()
            )));
        }
        if negatives.iter().any(|v| v.len() != m) {
            return Err(ModelError::Loss(
                crate::objectives::LossError::MismatchedNegatives(
                    negatives.iter().map(Vec::len).collect(),
                ),
            ));
        }
        let c_sig = self.pool.forward(ctx, features, lens)?.l2_normalize(1)?;

        let all: Vec<&LabelSeq> = labels.iter().chain(negatives.iter().flatten()).collect();
        let mut unique: Vec<&LabelSeq> = Vec::new();
        let mut slot: HashMap<&LabelSeq, usize> = HashMap::new();
        let rows: Vec<usize> = all
            .iter()
            .map(|&l| {
                *slot.entry(l).or_insert_with(|| {
                    unique.push(l);
                    unique.len() - 1
                })
            })
            .collect();
        let encoded = self.text.forward(ctx, &unique)?.l2_normalize(1)?;
        let z_text = if unique.len() == all.len() {
            encoded
        } else {
            encoded.gather_rows(&rows)?
        };
        Ok(AlignedEmbeddings {
            c_sig,
            z_text,
            n,
            m,
        })
    }

    pub fn tau<'t>(&self, ctx: &Ctx<'t>) -> Result<Var<'t>> {
        Ok(self.temperature.tau(ctx)?)
    }
}
