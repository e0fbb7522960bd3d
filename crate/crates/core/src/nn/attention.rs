use rand::Rng;

use super::{dropout, shape_error, Ctx, Group, Linear, ParamStore};
use crate::autodiff::{Tensor, TensorError, Var};

type Result<T> = std::result::Result<T, TensorError>;

/// Score assigned to masked keys before the softmax; underflows to an exact zero weight.
const MASKED_SCORE: f64 = -1e30;

/// Bias the output gates start from, so training begins close to ungated attention.
pub const GATE_BIAS_INIT: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionConfig {
    pub num_heads: usize,
    pub model_dim: usize,
    pub dropout_p: f64,
    pub gated: bool,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.model_dim == 0 || self.model_dim % self.num_heads != 0 {
            return Err(TensorError::Invalid {
                op: "attention",
                msg: format!(
                    "model_dim {} not divisible by num_heads {}",
                    self.model_dim, self.num_heads
                ),
            });
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(TensorError::Invalid {
                op: "attention",
                msg: format!("dropout {} outside [0, 1)", self.dropout_p),
            });
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }
}

/// Scaled dot-product attention over several heads, optionally with
/// per-head elementwise output gates `sigmoid(x_q · W_g + b_g)`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub cfg: AttentionConfig,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub gate: Option<Linear>,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: Group,
        cfg: AttentionConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.model_dim;
        let query = Linear::new(store, rng, &format!("{name}.q"), group, d, d, true);
        let key = Linear::new(store, rng, &format!("{name}.k"), group, d, d, true);
        let value = Linear::new(store, rng, &format!("{name}.v"), group, d, d, true);
        let output = Linear::new(store, rng, &format!("{name}.o"), group, d, d, true);
        let gate = cfg.gated.then(|| {
            let g = Linear::new(store, rng, &format!("{name}.gate"), group, d, d, true);
            *store.value_mut(g.bias.expect("gate bias")) = Tensor::full(&[d], GATE_BIAS_INIT);
            g
        });
        Ok(Self {
            cfg,
            query,
            key,
            value,
            output,
            gate,
        })
    }

    /// Attend `q_in: [B, Lq, D]` over `kv_in: [B, Lk, D]`.
    ///
    /// `key_valid`, when given, has `B · Lk` entries; false keys receive zero weight.
    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t>,
        q_in: Var<'t>,
        kv_in: Var<'t>,
        key_valid: Option<&[bool]>,
    ) -> Result<Var<'t>> {
        let (qs, ks) = (q_in.shape(), kv_in.shape());
        let d = self.cfg.model_dim;
        if qs.len() != 3 || ks.len() != 3 || qs[2] != d || ks[2] != d || qs[0] != ks[0] {
            return Err(shape_error("multi_head_attention", vec![qs, ks]));
        }
        let (b, lq, lk) = (qs[0], qs[1], ks[1]);
        let (h, dh) = (self.cfg.num_heads, self.cfg.head_dim());

        let split_heads = |x: Var<'t>, len: usize| -> Result<Var<'t>> {
            x.reshape(&[b, len, h, dh])?
                .permute(&[0, 2, 1, 3])?
                .reshape(&[b * h, len, dh])
        };
        let q = split_heads(self.query.forward(ctx, q_in)?, lq)?;
        let k = split_heads(self.key.forward(ctx, kv_in)?, lk)?;
        let v = split_heads(self.value.forward(ctx, kv_in)?, lk)?;

        let mut scores = q.matmul(k.transpose()?)?.scale(1.0 / (dh as f64).sqrt())?;
        if let Some(valid) = key_valid {
            if valid.len() != b * lk {
                return Err(shape_error(
                    "multi_head_attention",
                    vec![vec![valid.len()], vec![b, lk]],
                ));
            }
            if let Some(row) = (0..b).find(|&i| !valid[i * lk..(i + 1) * lk].iter().any(|&x| x)) {
                return Err(TensorError::Invalid {
                    op: "multi_head_attention",
                    msg: format!("every key masked for batch row {row} (empty attention support)"),
                });
            }
            if valid.iter().any(|&x| !x) {
                let mut mask = Vec::with_capacity(b * h * lq * lk);
                for bi in 0..b {
                    for _ in 0..h * lq {
                        mask.extend(valid[bi * lk..(bi + 1) * lk].iter().map(|&x| !x));
                    }
                }
                scores = scores.masked_fill(&mask, MASKED_SCORE)?;
            }
        }
        let weights = dropout(ctx, scores.softmax(2)?, self.cfg.dropout_p)?;
        let mut context = weights
            .matmul(v)?
            .reshape(&[b, h, lq, dh])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, lq, d])?;
        if let Some(gate) = &self.gate {
            context = context.mul(gate.forward(ctx, q_in)?.sigmoid()?)?;
        }
        self.output.forward(ctx, context)
    }
}
