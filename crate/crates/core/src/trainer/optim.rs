use std::f64::consts::PI;

use crate::autodiff::Tensor;
use crate::nn::{Group, ParamId, ParamStore};

use super::TrainConfig;

/// Learning rate at fractional `epoch`: linear warmup to the group's peak,
/// then cosine annealing to zero at `epochs`.
pub fn lr_at(epoch: f64, group: Group, cfg: &TrainConfig) -> f64 {
    let peak = match group {
        Group::Primary => cfg.lr_primary,
        Group::Auxiliary => cfg.lr_aux,
    };
    let total = cfg.epochs as f64;
    let warm = cfg.warmup_epochs as f64;
    let e = epoch.clamp(0.0, total);
    let lr = if e < warm {
        peak * (e / warm)
    } else {
        peak * 0.5 * (1.0 + (PI * (e - warm) / (total - warm)).cos())
    };
    lr.max(0.0)
}

#[derive(Clone, Debug, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

/// Adam with decoupled weight decay. Parameters without a gradient in a step
/// are left untouched, decay included.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: Vec<Moments>,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: Vec::new(),
        }
    }
}

impl AdamW {
    pub fn new() -> Self {
        Self::default()
    }

    /// One update. `lr` gives each group's current rate.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[(ParamId, Tensor)],
        lr: impl Fn(Group) -> f64,
        weight_decay: f64,
    ) {
        if self.state.len() < store.len() {
            self.state.resize_with(store.len(), Moments::default);
        }
        for (id, g) in grads {
            let lr = lr(store.get(*id).group);
            let st = &mut self.state[id.index()];
            if st.m.is_empty() {
                st.m = vec![0.0; g.numel()];
                st.v = vec![0.0; g.numel()];
            }
            st.step += 1;
            let bc1 = 1.0 - self.beta1.powi(st.step as i32);
            let bc2 = 1.0 - self.beta2.powi(st.step as i32);
            let decay = 1.0 - lr * weight_decay;
            let p = store.value_mut(*id).data_mut();
            for (k, &gk) in g.data().iter().enumerate() {
                st.m[k] = self.beta1 * st.m[k] + (1.0 - self.beta1) * gk;
                st.v[k] = self.beta2 * st.v[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = st.m[k] / bc1;
                let v_hat = st.v[k] / bc2;
                p[k] = p[k] * decay - lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Scale all gradients so their joint L2 norm is at most `max_norm`
/// (0 disables). Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [(ParamId, Tensor)], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|(_, g)| g.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}
