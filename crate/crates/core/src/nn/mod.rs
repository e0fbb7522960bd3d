//! Parameterized building blocks and the parameter store they register into.

mod attention;
mod layers;
mod lstm;

pub use attention::{AttentionConfig, MultiHeadAttention};
pub(crate) use layers::conv_output_len;
pub use layers::{
    dropout, normalize, sinusoidal_positions, Conv1d, Embedding, LearnedPositions, Linear, Norm,
    NormKind,
};
pub use lstm::{BiLstm, Lstm};

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Tensor, TensorError, Var};

/// Which optimizer group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    /// Deployed with the recognizer.
    Primary,
    /// Training-only alignment branch; dropped at export.
    Auxiliary,
}

impl Group {
    pub fn tag(self) -> u8 {
        match self {
            Group::Primary => 0,
            Group::Auxiliary => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Group::Primary),
            1 => Some(Group::Auxiliary),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Primary => "primary",
            Group::Auxiliary => "auxiliary",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    #[cfg(test)]
    pub(crate) fn for_test(i: usize) -> Self {
        ParamId(i)
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub group: Group,
    pub value: Arc<Tensor>,
}

/// Named parameters in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter. Values are rounded to `f32` precision, the
    /// precision of the checkpoint format.
    pub fn add(&mut self, name: impl Into<String>, group: Group, mut value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        round_to_f32(value.data_mut());
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            group,
            value: Arc::new(value),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Scalar count of parameters in `group`.
    pub fn numel(&self, group: Group) -> usize {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .map(|p| p.value.numel())
            .sum()
    }

    /// Snap every value to the nearest `f32`.
    pub fn round_to_storage(&mut self) {
        for p in &mut self.params {
            round_to_f32(Arc::make_mut(&mut p.value).data_mut());
        }
    }
}

pub(crate) fn round_to_f32(data: &mut [f64]) {
    for v in data {
        *v = *v as f32 as f64;
    }
}

/// Forward-pass behaviour switch for dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Everything a layer needs during one forward pass: the tape, lazily bound
/// parameter leaves, the mode and a seeded RNG for dropout.
pub struct Ctx<'t> {
    pub tape: &'t Tape,
    values: Vec<Arc<Tensor>>,
    bound: RefCell<Vec<Option<Var<'t>>>>,
    trainable: bool,
    mode: Mode,
    rng: RefCell<ChaCha8Rng>,
}

impl<'t> Ctx<'t> {
    /// `trainable` makes parameter leaves require gradients.
    pub fn new(tape: &'t Tape, store: &ParamStore, mode: Mode, trainable: bool, seed: u64) -> Self {
        Self {
            tape,
            values: store.params.iter().map(|p| Arc::clone(&p.value)).collect(),
            bound: RefCell::new(vec![None; store.len()]),
            trainable,
            mode,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    /// Eval-mode context without gradient tracking.
    pub fn eval(tape: &'t Tape, store: &ParamStore) -> Self {
        Self::new(tape, store, Mode::Eval, false, 0)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn param(&self, id: ParamId) -> Var<'t> {
        let mut bound = self.bound.borrow_mut();
        if let Some(v) = bound[id.0] {
            return v;
        }
        let v = self
            .tape
            .leaf_shared(Arc::clone(&self.values[id.0]), self.trainable);
        bound[id.0] = Some(v);
        v
    }

    /// Substitute `var` for parameter `id` in this pass (gradient checks).
    pub fn bind(&self, id: ParamId, var: Var<'t>) {
        self.bound.borrow_mut()[id.0] = Some(var);
    }

    /// Parameters touched by this pass, in id order.
    pub fn bound_params(&self) -> Vec<(ParamId, Var<'t>)> {
        self.bound
            .borrow()
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .collect()
    }

    pub(crate) fn with_rng<R>(&self, f: impl FnOnce(&mut ChaCha8Rng) -> R) -> R {
        f(&mut self.rng.borrow_mut())
    }

    pub fn constant(&self, t: Tensor) -> Var<'t> {
        self.tape.constant(t)
    }
}

/// Parameter initializers.
pub mod init {
    use super::*;

    /// U(-bound, bound) with `bound = gain · sqrt(3 / fan_in)`.
    pub fn kaiming_uniform(
        rng: &mut impl Rng,
        shape: &[usize],
        fan_in: usize,
        gain: f64,
    ) -> Tensor {
        let bound = gain * (3.0 / fan_in as f64).sqrt();
        uniform(rng, shape, bound)
    }

    pub fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        Tensor::new(shape, data).expect("init shape")
    }

    pub fn normal(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        Tensor::new(shape, data).expect("init shape")
    }

    /// `rows × cols` matrix with orthonormal rows (cols ≥ rows) or columns.
    pub fn orthogonal(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
        // Gram-Schmidt on the longer side's vectors.
        let (n_vec, len) = if rows <= cols {
            (rows, cols)
        } else {
            (cols, rows)
        };
        let dist = Normal::new(0.0, 1.0).expect("unit normal");
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n_vec);
        while basis.len() < n_vec {
            let mut v: Vec<f64> = (0..len).map(|_| dist.sample(rng)).collect();
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                v.iter_mut().for_each(|x| *x /= norm);
                basis.push(v);
            }
        }
        let mut data = vec![0.0; rows * cols];
        for (i, b) in basis.iter().enumerate() {
            for (j, &x) in b.iter().enumerate() {
                if rows <= cols {
                    data[i * cols + j] = x;
                } else {
                    data[j * cols + i] = x;
                }
            }
        }
        Tensor::from_parts(vec![rows, cols], data)
    }
}

pub(crate) fn shape_error(op: &'static str, shapes: Vec<Vec<usize>>) -> TensorError {
    TensorError::ShapeMismatch { op, shapes }
}
