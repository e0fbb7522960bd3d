//! Recognition loss, the two contrastive alignment losses, and their sum.

mod ctc;

pub use ctc::{
    ctc_batch, ctc_loss, ctc_neg_log_likelihood, ctc_nll_and_grad, required_length,
    DEFAULT_SMOOTHING,
};

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::autodiff::{Tensor, TensorError, Var};
use crate::data::LabelSeq;
use crate::nn::{Ctx, Group, ParamId, ParamStore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("infeasible target: needs {required} frames, input has {input_len}")]
    InfeasibleTarget { required: usize, input_len: usize },
    #[error("input length {input_len} not in 1..={frames}")]
    InputLength { input_len: usize, frames: usize },
    #[error("label {label} outside 1..{classes}")]
    LabelOutOfRange { label: u32, classes: usize },
    #[error("{what}; got shape {shape:?}")]
    Shape {
        what: &'static str,
        shape: Vec<usize>,
    },
    #[error("samples carry different negative counts: {0:?}")]
    MismatchedNegatives(Vec<usize>),
    #[error("{0}")]
    Invalid(String),
}

impl From<LossError> for TensorError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::Tensor(t) => t,
            other => TensorError::Invalid {
                op: "loss",
                msg: other.to_string(),
            },
        }
    }
}

type Result<T> = std::result::Result<T, LossError>;

/// Upper bound on the similarity scale.
pub const MAX_TAU: f64 = 100.0;

/// Initial similarity scale, `1 / 0.07`.
pub fn initial_log_tau() -> f64 {
    (1.0f64 / 0.07).ln()
}

/// Learnable similarity scale `τ = exp(log_tau)`, shared by both contrastive
/// terms and clamped at [`MAX_TAU`].
#[derive(Clone, Copy, Debug)]
pub struct Temperature {
    pub log_tau: ParamId,
}

impl Temperature {
    pub fn new(store: &mut ParamStore, name: &str) -> Self {
        Self {
            log_tau: store.add(name, Group::Auxiliary, Tensor::scalar(initial_log_tau())),
        }
    }

    /// Scalar `τ`. Past the clamp the value is a constant, so no gradient
    /// pushes it further out.
    pub fn tau<'t>(&self, ctx: &Ctx<'t>) -> Result<Var<'t>> {
        tau_of(ctx.param(self.log_tau))
    }
}

pub fn tau_of(log_tau: Var<'_>) -> Result<Var<'_>> {
    if log_tau.item() >= MAX_TAU.ln() {
        Ok(log_tau.tape().scalar(MAX_TAU))
    } else {
        Ok(log_tau.exp()?)
    }
}

/// Indices of the first occurrence of each distinct label, in batch order.
pub fn first_occurrences(labels: &[LabelSeq]) -> Vec<usize> {
    let mut seen = HashSet::new();
    (0..labels.len())
        .filter(|&i| seen.insert(&labels[i]))
        .collect()
}

/// Symmetric InfoNCE on an `[n, n]` logit matrix whose diagonal holds the
/// matched pairs; averaged over `2n` terms.
pub fn bc_from_logits(logits: Var<'_>) -> Result<Var<'_>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(LossError::Shape {
            what: "contrastive logits must be square",
            shape,
        });
    }
    let n = shape[0];
    let eye = Tensor::new(
        &[n, n],
        (0..n * n)
            .map(|k| if k / n == k % n { 1.0 } else { 0.0 })
            .collect(),
    )?;
    let eye = logits.tape().constant(eye);
    let rows = logits.log_softmax(1)?.mul(eye)?.sum()?;
    let cols = logits.log_softmax(0)?.mul(eye)?.sum()?;
    Ok(rows.add(cols)?.scale(-1.0 / (2 * n) as f64)?)
}

/// In-batch contrastive loss. Only the first sample of each distinct
/// transcript takes part; the effective batch size is returned alongside.
pub fn bc_loss<'t>(
    c_sig: Var<'t>,
    z_text: Var<'t>,
    tau: Var<'t>,
    labels: &[LabelSeq],
) -> Result<(Var<'t>, usize)> {
    let (cs, zs) = (c_sig.shape(), z_text.shape());
    if cs.len() != 2 || cs != zs || cs[0] != labels.len() || labels.is_empty() {
        return Err(LossError::Shape {
            what: "c_sig and z_text must both be [N, D] with N labels, N ≥ 1",
            shape: cs,
        });
    }
    let keep = first_occurrences(labels);
    let (c, z) = if keep.len() == labels.len() {
        (c_sig, z_text)
    } else {
        (c_sig.gather_rows(&keep)?, z_text.gather_rows(&keep)?)
    };
    let logits = c.matmul(z.transpose()?)?.mul(tau)?;
    Ok((bc_from_logits(logits)?, keep.len()))
}

/// Error-based contrastive loss on `[N, 1 + M]` logits whose column 0 is the
/// positive. `M = 0` gives exactly zero.
pub fn ec_from_logits(logits: Var<'_>) -> Result<Var<'_>> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(LossError::Shape {
            what: "error-contrastive logits must be [N, 1 + M]",
            shape,
        });
    }
    if shape[1] == 1 {
        return Ok(logits.tape().scalar(0.0));
    }
    Ok(logits.log_softmax(1)?.slice(1, 0, 1)?.mean()?.neg()?)
}

/// `c_sig: [N, D]`, `z_pos: [N, D]`, `z_neg: [N, M, D]` (sample `i` sees only
/// its own negatives).
pub fn ec_loss<'t>(
    c_sig: Var<'t>,
    z_pos: Var<'t>,
    z_neg: Var<'t>,
    tau: Var<'t>,
) -> Result<Var<'t>> {
    let (cs, ps, ns) = (c_sig.shape(), z_pos.shape(), z_neg.shape());
    if cs.len() != 2 || cs != ps || ns.len() != 3 || ns[0] != cs[0] || ns[2] != cs[1] {
        return Err(LossError::Shape {
            what: "ec_loss expects c_sig [N, D], z_pos [N, D], z_neg [N, M, D]",
            shape: ns,
        });
    }
    let (n, m, d) = (ns[0], ns[1], ns[2]);
    if m == 0 {
        return Ok(c_sig.tape().scalar(0.0));
    }
    let pos = c_sig.mul(z_pos)?.sum_axis(1)?.reshape(&[n, 1])?;
    let neg = z_neg.matmul(c_sig.reshape(&[n, d, 1])?)?.reshape(&[n, m])?;
    let logits = Var::concat(&[pos, neg], 1)?.mul(tau)?;
    ec_from_logits(logits)
}

/// Which terms of the composite objective are active. CTC always is.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Objectives {
    pub bc: bool,
    pub ec: bool,
}

impl Objectives {
    pub const CTC: Objectives = Objectives {
        bc: false,
        ec: false,
    };
    pub const CTC_BC: Objectives = Objectives {
        bc: true,
        ec: false,
    };
    pub const ALL: Objectives = Objectives { bc: true, ec: true };

    pub fn needs_aux(&self) -> bool {
        self.bc || self.ec
    }
}

impl FromStr for Objectives {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut out = Objectives::CTC;
        let mut ctc = false;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "ctc" => ctc = true,
                "bc" => out.bc = true,
                "ec" => out.ec = true,
                other => return Err(format!("unknown objective {other:?}")),
            }
        }
        if !ctc {
            return Err("objectives must include ctc".into());
        }
        Ok(out)
    }
}

impl fmt::Display for Objectives {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ctc")?;
        if self.bc {
            f.write_str(",bc")?;
        }
        if self.ec {
            f.write_str(",ec")?;
        }
        Ok(())
    }
}

/// Scalar values of one step's loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub l_ctc: f64,
    pub l_bc: f64,
    pub l_ec: f64,
    pub l_total: f64,
    pub effective_batch_bc: usize,
}

/// Sum the enabled terms. Absent terms add nothing to the graph.
pub fn total_loss<'t>(
    ctc: Var<'t>,
    bc: Option<(Var<'t>, usize)>,
    ec: Option<Var<'t>>,
) -> Result<(Var<'t>, LossReport)> {
    let mut total = ctc;
    let mut report = LossReport {
        l_ctc: ctc.item(),
        ..LossReport::default()
    };
    if let Some((v, n)) = bc {
        total = total.add(v)?;
        report.l_bc = v.item();
        report.effective_batch_bc = n;
    }
    if let Some(v) = ec {
        total = total.add(v)?;
        report.l_ec = v.item();
    }
    report.l_total = total.item();
    for (name, v) in [
        ("ctc", report.l_ctc),
        ("bc", report.l_bc),
        ("ec", report.l_ec),
        ("total", report.l_total),
    ] {
        if !v.is_finite() {
            return Err(LossError::Invalid(format!("non-finite {name} loss {v}")));
        }
    }
    Ok((total, report))
}
