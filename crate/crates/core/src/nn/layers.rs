use rand::Rng;

use super::{init, shape_error, Ctx, Group, Mode, ParamId, ParamStore};
use crate::autodiff::{Tensor, TensorError, Var};

type Result<T> = std::result::Result<T, TensorError>;

/// `y = x · W + b` over the last axis; `W` is stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: Group,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            group,
            init::kaiming_uniform(rng, &[in_dim, out_dim], in_dim, 1.0 / 3f64.sqrt()),
        );
        let bias = bias.then(|| {
            store.add(
                format!("{name}.bias"),
                group,
                init::uniform(rng, &[out_dim], 1.0 / (in_dim as f64).sqrt()),
            )
        });
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let y = x.matmul(ctx.param(self.weight))?;
        match self.bias {
            Some(b) => y.add(ctx.param(b)),
            None => Ok(y),
        }
    }
}

/// Temporal convolution over `[batch, time, channels]` with symmetric zero padding.
#[derive(Clone, Debug)]
pub struct Conv1d {
    /// `[kernel · in_channels, out_channels]`, tap-major.
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: Group,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let fan_in = kernel * in_channels;
        let weight = store.add(
            format!("{name}.weight"),
            group,
            init::kaiming_uniform(rng, &[fan_in, out_channels], fan_in, 2f64.sqrt()),
        );
        let bias = store.add(
            format!("{name}.bias"),
            group,
            Tensor::zeros(&[out_channels]),
        );
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    /// `floor((len + 2·pad − kernel) / stride) + 1`, or `None` if the kernel
    /// does not fit the padded input.
    pub fn output_len(&self, len: usize) -> Option<usize> {
        conv_output_len(len, self.kernel, self.stride, self.padding)
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let cols = unfold(x, self.kernel, self.stride, self.padding)?;
        let y = cols.matmul(ctx.param(self.weight))?;
        y.add(ctx.param(self.bias))
    }
}

pub(crate) fn conv_output_len(
    len: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    let padded = len + 2 * padding;
    (padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

/// im2col: `[B, T, C] → [B, T_out, kernel·C]`, out-of-range taps read zero.
fn unfold<'t>(x: Var<'t>, kernel: usize, stride: usize, padding: usize) -> Result<Var<'t>> {
    let xv = x.value();
    let shape = xv.shape().to_vec();
    if shape.len() != 3 {
        return Err(shape_error("conv1d", vec![shape]));
    }
    let (b, t, c) = (shape[0], shape[1], shape[2]);
    let t_out =
        conv_output_len(t, kernel, stride, padding).ok_or_else(|| TensorError::Invalid {
            op: "conv1d",
            msg: format!(
                "kernel {kernel} larger than padded input {}",
                t + 2 * padding
            ),
        })?;
    let width = kernel * c;
    // Source frame for each (output step, tap), or None for padding.
    let taps: Vec<Option<usize>> = (0..t_out)
        .flat_map(|o| {
            (0..kernel).map(move |k| {
                let src = (o * stride + k) as isize - padding as isize;
                (src >= 0 && (src as usize) < t).then_some(src as usize)
            })
        })
        .collect();
    let mut out = vec![0.0; b * t_out * width];
    for bi in 0..b {
        for o in 0..t_out {
            for k in 0..kernel {
                if let Some(src) = taps[o * kernel + k] {
                    let dst = (bi * t_out + o) * width + k * c;
                    let from = (bi * t + src) * c;
                    out[dst..dst + c].copy_from_slice(&xv.data()[from..from + c]);
                }
            }
        }
    }
    let value = Tensor::new(&[b, t_out, width], out)?;
    let backward = Box::new(move |g: &Tensor| {
        let mut gx = vec![0.0; b * t * c];
        for bi in 0..b {
            for o in 0..t_out {
                for k in 0..kernel {
                    if let Some(src) = taps[o * kernel + k] {
                        let from = (bi * t_out + o) * width + k * c;
                        let dst = (bi * t + src) * c;
                        for ch in 0..c {
                            gx[dst + ch] += g.data()[from + ch];
                        }
                    }
                }
            }
        }
        vec![Tensor::new(&[b, t, c], gx).expect("unfold grad shape")]
    });
    x.tape().custom(&[x], value, backward)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    Layer,
    Rms,
}

impl NormKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::Layer => "layer",
            NormKind::Rms => "rms",
        }
    }
}

impl std::str::FromStr for NormKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "layer" | "ln" | "layernorm" => Ok(NormKind::Layer),
            "rms" | "rmsnorm" => Ok(NormKind::Rms),
            other => Err(format!("unknown norm kind '{other}' (expected layer|rms)")),
        }
    }
}

/// Normalize over the last axis.
///
/// Layer: `(x − mean) / sqrt(var + eps) · gain + bias`.
/// RMS: `x / sqrt(mean(x²) + eps) · gain`; no centering and no bias.
pub fn normalize<'t>(
    x: Var<'t>,
    kind: NormKind,
    gain: Var<'t>,
    bias: Option<Var<'t>>,
    eps: f64,
) -> Result<Var<'t>> {
    let axis = x.shape().len() - 1;
    let y = match kind {
        NormKind::Layer => {
            let centered = x.sub(x.mean_axis(axis)?)?;
            let var = centered.mul(centered)?.mean_axis(axis)?;
            centered.div(var.add_scalar(eps)?.sqrt()?)?
        }
        NormKind::Rms => {
            let ms = x.mul(x)?.mean_axis(axis)?;
            x.div(ms.add_scalar(eps)?.sqrt()?)?
        }
    };
    let y = y.mul(gain)?;
    match (kind, bias) {
        (NormKind::Layer, Some(b)) => y.add(b),
        _ => Ok(y),
    }
}

#[derive(Clone, Debug)]
pub struct Norm {
    pub kind: NormKind,
    pub gain: ParamId,
    pub bias: Option<ParamId>,
    pub eps: f64,
}

impl Norm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: Group,
        kind: NormKind,
        dim: usize,
    ) -> Self {
        let gain = store.add(format!("{name}.gain"), group, Tensor::full(&[dim], 1.0));
        let bias = (kind == NormKind::Layer)
            .then(|| store.add(format!("{name}.bias"), group, Tensor::zeros(&[dim])));
        Self {
            kind,
            gain,
            bias,
            eps: 1e-6,
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        normalize(
            x,
            self.kind,
            ctx.param(self.gain),
            self.bias.map(|b| ctx.param(b)),
            self.eps,
        )
    }
}

/// Lookup table of row vectors.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: Group,
        rows: usize,
        dim: usize,
    ) -> Self {
        let table = store.add(
            name.to_string(),
            group,
            init::normal(rng, &[rows, dim], 0.02),
        );
        Self { table, rows, dim }
    }

    pub fn lookup<'t>(&self, ctx: &Ctx<'t>, ids: &[usize]) -> Result<Var<'t>> {
        ctx.param(self.table).gather_rows(ids)
    }
}

/// Fixed sin/cos table: even dims `sin(p / 10000^(2i/dim))`, odd dims the cosine.
pub fn sinusoidal_positions(length: usize, dim: usize) -> Result<Tensor> {
    if dim % 2 != 0 || dim == 0 || length == 0 {
        return Err(TensorError::Invalid {
            op: "positional_encoding",
            msg: format!(
                "sinusoidal table needs an even, positive dim (got {dim}) and length {length}"
            ),
        });
    }
    let mut data = vec![0.0; length * dim];
    for p in 0..length {
        for i in 0..dim / 2 {
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            data[p * dim + 2 * i] = angle.sin();
            data[p * dim + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(&[length, dim], data)
}

/// Learnable position table of `max_len` rows.
#[derive(Clone, Debug)]
pub struct LearnedPositions {
    pub table: ParamId,
    pub max_len: usize,
    pub dim: usize,
}

impl LearnedPositions {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: Group,
        max_len: usize,
        dim: usize,
    ) -> Self {
        let table = store.add(
            name.to_string(),
            group,
            init::normal(rng, &[max_len, dim], 0.02),
        );
        Self {
            table,
            max_len,
            dim,
        }
    }

    /// Rows `[0, length)`.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, length: usize) -> Result<Var<'t>> {
        if length > self.max_len {
            return Err(TensorError::Invalid {
                op: "positional_encoding",
                msg: format!("length {length} exceeds max_len {}", self.max_len),
            });
        }
        ctx.param(self.table).slice(0, 0, length)
    }
}

/// Inverted dropout; identity in eval mode or when `p == 0`.
pub fn dropout<'t>(ctx: &Ctx<'t>, x: Var<'t>, p: f64) -> Result<Var<'t>> {
    if ctx.mode() == Mode::Eval || p <= 0.0 {
        return Ok(x);
    }
    let shape = x.shape();
    let n: usize = shape.iter().product();
    let keep = 1.0 - p;
    let mask: Vec<f64> = ctx.with_rng(|rng| {
        (0..n)
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect()
    });
    x.mul(ctx.constant(Tensor::new(&shape, mask)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradcheck, gradcheck_multi, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        init::uniform(rng, shape, 1.0)
    }

    #[test]
    fn rms_of_three_four() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![3.0, 4.0]));
        let g = tape.constant(Tensor::from_vec(vec![1.0, 1.0]));
        let y = normalize(x, NormKind::Rms, g, None, 1e-6).unwrap().value();
        let denom = (12.5f64 + 1e-6).sqrt();
        assert!((y.data()[0] - 3.0 / denom).abs() < 1e-15);
        assert!((y.data()[0] - 0.8485).abs() < 1e-4);
        assert!((y.data()[1] - 1.1314).abs() < 1e-4);
    }

    #[test]
    fn layer_norm_shift_invariant_and_rms_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = rand_tensor(&mut rng, &[3, 6]);
        let tape = Tape::new();
        let gain = tape.constant(Tensor::full(&[6], 1.0));
        let bias = tape.constant(Tensor::zeros(&[6]));
        let ln = |t: &Tensor| {
            normalize(
                tape.constant(t.clone()),
                NormKind::Layer,
                gain,
                Some(bias),
                1e-6,
            )
            .unwrap()
            .value()
        };
        let rms = |t: &Tensor| {
            normalize(tape.constant(t.clone()), NormKind::Rms, gain, None, 1e-14)
                .unwrap()
                .value()
        };
        let shifted = Tensor::new(&[3, 6], base.data().iter().map(|v| v + 2.5).collect()).unwrap();
        for (a, b) in ln(&base).data().iter().zip(ln(&shifted).data()) {
            assert!((a - b).abs() < 1e-9);
        }
        for alpha in [0.5, 2.0, 10.0] {
            let scaled =
                Tensor::new(&[3, 6], base.data().iter().map(|v| v * alpha).collect()).unwrap();
            for (a, b) in rms(&base).data().iter().zip(rms(&scaled).data()) {
                assert!((a - b).abs() < 1e-9, "alpha {alpha}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn sinusoidal_values() {
        let pe = sinusoidal_positions(4, 8).unwrap();
        for i in 0..4 {
            assert_eq!(pe.at(&[0, 2 * i]), 0.0);
            assert_eq!(pe.at(&[0, 2 * i + 1]), 1.0);
        }
        assert!((pe.at(&[1, 0]) - 1f64.sin()).abs() < 1e-15);
        assert!((pe.at(&[1, 0]) - 0.8415).abs() < 1e-4);
        assert!(sinusoidal_positions(4, 7).is_err());
    }

    #[test]
    fn learned_positions_shape_and_overflow() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pos = LearnedPositions::new(&mut store, &mut rng, "pos", Group::Auxiliary, 10, 4);
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &store);
        assert_eq!(pos.forward(&ctx, 6).unwrap().shape(), vec![6, 4]);
        assert!(pos.forward(&ctx, 11).is_err());
    }

    #[test]
    fn identity_conv_is_identity() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv1d::new(&mut store, &mut rng, "c", Group::Primary, 1, 1, 1, 1, 0);
        *store.value_mut(conv.weight) = Tensor::new(&[1, 1], vec![1.0]).unwrap();
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &store);
        let x = Tensor::new(&[1, 5, 1], vec![0.5, -1.0, 2.0, 3.0, 0.25]).unwrap();
        let y = conv
            .forward(&ctx, tape.constant(x.clone()))
            .unwrap()
            .value();
        assert_eq!(*y, x);
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv1d::new(&mut store, &mut rng, "c", Group::Primary, 2, 3, 7, 1, 1);
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &store);
        let x = tape.constant(Tensor::zeros(&[1, 3, 2]));
        assert!(conv.forward(&ctx, x).is_err());
        assert_eq!(conv.output_len(3), None);
        assert_eq!(conv.output_len(5), Some(1));
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let conv = Conv1d::new(&mut store, &mut rng, "c", Group::Primary, 2, 3, 3, 2, 1);
        let x = rand_tensor(&mut rng, &[1, 7, 2]);
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &store);
        let y = conv
            .forward(&ctx, tape.constant(x.clone()))
            .unwrap()
            .value();
        let w = store.get(conv.weight).value.clone();
        let b = store.get(conv.bias).value.clone();
        assert_eq!(y.shape(), &[1, 4, 3]);
        for o in 0..4 {
            for co in 0..3 {
                let mut acc = b.data()[co];
                for k in 0..3 {
                    let src = (o * 2 + k) as isize - 1;
                    if src < 0 || src >= 7 {
                        continue;
                    }
                    for ci in 0..2 {
                        acc += x.at(&[0, src as usize, ci]) * w.at(&[k * 2 + ci, co]);
                    }
                }
                assert!((y.at(&[0, o, co]) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dropout_modes() {
        let store = ParamStore::new();
        let tape = Tape::new();
        let x = tape.constant(Tensor::full(&[4, 4], 1.5));
        let train = Ctx::new(&tape, &store, Mode::Train, false, 9);
        let y = dropout(&train, x, 0.0).unwrap();
        assert_eq!(y.id(), x.id());
        let eval = Ctx::eval(&tape, &store);
        assert_eq!(*dropout(&eval, x, 0.5).unwrap().value(), *x.value());
        let dropped = dropout(&train, x, 0.5).unwrap().value();
        assert!(dropped.data().iter().all(|&v| v == 0.0 || v == 3.0));
    }

    #[test]
    fn gradcheck_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_tensor(&mut rng, &[2, 6, 3]);
        let w = rand_tensor(&mut rng, &[9, 4]);
        let r = gradcheck_multi(
            |_, v| unfold(v[0], 3, 2, 1)?.matmul(v[1])?.tanh()?.sum(),
            &[x, w],
            1e-6,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");

        for kind in [NormKind::Layer, NormKind::Rms] {
            let x = rand_tensor(&mut rng, &[3, 5]);
            let g = rand_tensor(&mut rng, &[5]);
            let b = rand_tensor(&mut rng, &[5]);
            let probe = rand_tensor(&mut rng, &[3, 5]);
            let r = gradcheck_multi(
                |tape, v| {
                    normalize(v[0], kind, v[1], Some(v[2]), 1e-6)?
                        .mul(tape.constant(probe.clone()))?
                        .sum()
                },
                &[x, g, b],
                1e-4,
            )
            .unwrap();
            assert!(r.passed, "{kind:?} {r:?}");
        }

        let x = rand_tensor(&mut rng, &[4]);
        let r = gradcheck(|_, v| v.mul(v)?.sum(), &x, 1e-6).unwrap();
        assert!(r.passed);
    }
}
