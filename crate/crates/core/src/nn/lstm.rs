use rand::Rng;

use super::{init, shape_error, Ctx, Group, ParamId, ParamStore};
use crate::autodiff::{Tensor, TensorError, Var};

type Result<T> = std::result::Result<T, TensorError>;

/// Single-direction LSTM with gate order (input, forget, cell, output).
#[derive(Clone, Debug)]
pub struct Lstm {
    /// `[in, 4H]`
    pub w_ih: ParamId,
    /// `[H, 4H]`
    pub w_hh: ParamId,
    /// `[4H]`
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
    pub reverse: bool,
}

impl Lstm {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: Group,
        input_dim: usize,
        hidden: usize,
        reverse: bool,
    ) -> Self {
        let w_ih = store.add(
            format!("{name}.w_ih"),
            group,
            init::kaiming_uniform(rng, &[input_dim, 4 * hidden], input_dim, 1.0 / 3f64.sqrt()),
        );
        // Orthogonal per gate block.
        let mut hh = vec![0.0; hidden * 4 * hidden];
        for gate in 0..4 {
            let block = init::orthogonal(rng, hidden, hidden);
            for r in 0..hidden {
                for c in 0..hidden {
                    hh[r * 4 * hidden + gate * hidden + c] = block.at(&[r, c]);
                }
            }
        }
        let w_hh = store.add(
            format!("{name}.w_hh"),
            group,
            Tensor::new(&[hidden, 4 * hidden], hh).expect("lstm shape"),
        );
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        let bias = store.add(
            format!("{name}.bias"),
            group,
            Tensor::new(&[4 * hidden], b).expect("lstm shape"),
        );
        Self {
            w_ih,
            w_hh,
            bias,
            input_dim,
            hidden,
            reverse,
        }
    }

    /// Run over `x: [B, T, in]`; sample `b` only consumes steps `< lengths[b]`,
    /// so a reverse pass starts at its own last valid frame. Returns `[B, T, H]`.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>, lengths: &[usize]) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 3 || shape[2] != self.input_dim || shape[0] != lengths.len() {
            return Err(shape_error(
                "bilstm",
                vec![shape, vec![lengths.len(), 0, self.input_dim]],
            ));
        }
        let (b, t, h) = (shape[0], shape[1], self.hidden);
        let projected = x
            .reshape(&[b * t, self.input_dim])?
            .matmul(ctx.param(self.w_ih))?
            .add(ctx.param(self.bias))?
            .reshape(&[b, t, 4 * h])?;
        let w_hh = ctx.param(self.w_hh);
        let mut state_h = ctx.constant(Tensor::zeros(&[b, h]));
        let mut state_c = ctx.constant(Tensor::zeros(&[b, h]));
        let mut outputs: Vec<Option<Var<'t>>> = vec![None; t];
        let steps: Vec<usize> = if self.reverse {
            (0..t).rev().collect()
        } else {
            (0..t).collect()
        };
        for step in steps {
            let gates = projected
                .slice(1, step, step + 1)?
                .reshape(&[b, 4 * h])?
                .add(state_h.matmul(w_hh)?)?;
            let i = gates.slice(1, 0, h)?.sigmoid()?;
            let f = gates.slice(1, h, 2 * h)?.sigmoid()?;
            let g = gates.slice(1, 2 * h, 3 * h)?.tanh()?;
            let o = gates.slice(1, 3 * h, 4 * h)?.sigmoid()?;
            let c_new = f.mul(state_c)?.add(i.mul(g)?)?;
            let h_new = o.mul(c_new.tanh()?)?;
            if lengths.iter().all(|&len| step < len) {
                state_c = c_new;
                state_h = h_new;
            } else {
                // Frozen state past each sample's end.
                let mask: Vec<f64> = lengths
                    .iter()
                    .map(|&len| if step < len { 1.0 } else { 0.0 })
                    .collect();
                let m = ctx.constant(Tensor::new(&[b, 1], mask)?);
                state_c = state_c.add(m.mul(c_new.sub(state_c)?)?)?;
                state_h = state_h.add(m.mul(h_new.sub(state_h)?)?)?;
            }
            outputs[step] = Some(state_h.reshape(&[b, 1, h])?);
        }
        let outputs: Vec<Var<'t>> = outputs
            .into_iter()
            .map(|o| o.expect("every step"))
            .collect();
        Var::concat(&outputs, 1)
    }
}

/// Forward and reverse LSTMs, concatenated per timestep to `[B, T, 2H]`.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward_dir: Lstm,
    pub backward_dir: Lstm,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: Group,
        input_dim: usize,
        hidden: usize,
    ) -> Self {
        Self {
            forward_dir: Lstm::new(
                store,
                rng,
                &format!("{name}.fwd"),
                group,
                input_dim,
                hidden,
                false,
            ),
            backward_dir: Lstm::new(
                store,
                rng,
                &format!("{name}.bwd"),
                group,
                input_dim,
                hidden,
                true,
            ),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward_dir.hidden
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>, lengths: &[usize]) -> Result<Var<'t>> {
        let f = self.forward_dir.forward(ctx, x, lengths)?;
        let b = self.backward_dir.forward(ctx, x, lengths)?;
        Var::concat(&[f, b], 2)
    }
}
