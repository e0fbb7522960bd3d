//! Log-space CTC over the blank-interleaved lattice, as a custom tape op.

use crate::autodiff::{Tensor, Var};
use crate::data::BLANK;

use super::LossError;

type Result<T> = std::result::Result<T, LossError>;

/// Default weight of the uniform-label smoothing term.
pub const DEFAULT_SMOOTHING: f64 = 0.1;

/// Minimum frames needed to emit `target`: one per label plus a separating
/// blank between each pair of equal neighbours.
pub fn required_length(target: &[u32]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn lse3(a: f64, b: f64, c: f64) -> f64 {
    lse2(lse2(a, b), c)
}

struct Lattice {
    ext: Vec<u32>,
    n: usize,
    classes: usize,
}

impl Lattice {
    fn new(target: &[u32], classes: usize, frames: usize, input_len: usize) -> Result<Self> {
        if input_len == 0 || input_len > frames {
            return Err(LossError::InputLength { input_len, frames });
        }
        if let Some(&bad) = target
            .iter()
            .find(|&&k| k == BLANK || k as usize >= classes)
        {
            return Err(LossError::LabelOutOfRange {
                label: bad,
                classes,
            });
        }
        let required = required_length(target);
        if input_len < required {
            return Err(LossError::InfeasibleTarget {
                required,
                input_len,
            });
        }
        let mut ext = Vec::with_capacity(2 * target.len() + 1);
        ext.push(BLANK);
        for &k in target {
            ext.push(k);
            ext.push(BLANK);
        }
        Ok(Self {
            ext,
            n: input_len,
            classes,
        })
    }

    fn skip_allowed(&self, s: usize) -> bool {
        s >= 2 && self.ext[s] != BLANK && self.ext[s] != self.ext[s - 2]
    }

    fn alpha(&self, lp: &[f64]) -> Vec<f64> {
        let (len, c) = (self.ext.len(), self.classes);
        let mut a = vec![f64::NEG_INFINITY; self.n * len];
        a[0] = lp[self.ext[0] as usize];
        if len > 1 {
            a[1] = lp[self.ext[1] as usize];
        }
        for t in 1..self.n {
            for s in 0..len {
                let prev = &a[(t - 1) * len..t * len];
                let stay = prev[s];
                let step = if s >= 1 {
                    prev[s - 1]
                } else {
                    f64::NEG_INFINITY
                };
                let skip = if self.skip_allowed(s) {
                    prev[s - 2]
                } else {
                    f64::NEG_INFINITY
                };
                let acc = lse3(stay, step, skip);
                a[t * len + s] = if acc == f64::NEG_INFINITY {
                    acc
                } else {
                    acc + lp[t * c + self.ext[s] as usize]
                };
            }
        }
        a
    }

    fn beta(&self, lp: &[f64]) -> Vec<f64> {
        let (len, c) = (self.ext.len(), self.classes);
        let last = self.n - 1;
        let mut b = vec![f64::NEG_INFINITY; self.n * len];
        b[last * len + len - 1] = lp[last * c + self.ext[len - 1] as usize];
        if len > 1 {
            b[last * len + len - 2] = lp[last * c + self.ext[len - 2] as usize];
        }
        for t in (0..last).rev() {
            for s in 0..len {
                let next = &b[(t + 1) * len..(t + 2) * len];
                let stay = next[s];
                let step = if s + 1 < len {
                    next[s + 1]
                } else {
                    f64::NEG_INFINITY
                };
                let skip = if s + 2 < len && self.skip_allowed(s + 2) {
                    next[s + 2]
                } else {
                    f64::NEG_INFINITY
                };
                let acc = lse3(stay, step, skip);
                b[t * len + s] = if acc == f64::NEG_INFINITY {
                    acc
                } else {
                    acc + lp[t * c + self.ext[s] as usize]
                };
            }
        }
        b
    }

    fn log_likelihood(&self, alpha: &[f64]) -> f64 {
        let len = self.ext.len();
        let row = &alpha[(self.n - 1) * len..self.n * len];
        if len > 1 {
            lse2(row[len - 1], row[len - 2])
        } else {
            row[0]
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [t, c] if *c >= 2 => Ok((*t, *c)),
        _ => Err(LossError::Shape {
            what: "ctc log-probs must be [T, classes ≥ 2]",
            shape: shape.to_vec(),
        }),
    }
}

/// `−ln P(target | log_probs)` using the first `input_len` frames of a
/// row-major `[T, classes]` array.
pub fn ctc_neg_log_likelihood(log_probs: &Tensor, target: &[u32], input_len: usize) -> Result<f64> {
    let (t, c) = check_shape(log_probs.shape())?;
    let lat = Lattice::new(target, c, t, input_len)?;
    Ok(-lat.log_likelihood(&lat.alpha(log_probs.data())))
}

/// Negative log-likelihood and its gradient with respect to every log-prob.
pub fn ctc_nll_and_grad(
    log_probs: &Tensor,
    target: &[u32],
    input_len: usize,
) -> Result<(f64, Tensor)> {
    let (t, c) = check_shape(log_probs.shape())?;
    let lp = log_probs.data();
    let lat = Lattice::new(target, c, t, input_len)?;
    let alpha = lat.alpha(lp);
    let beta = lat.beta(lp);
    let ll = lat.log_likelihood(&alpha);
    let len = lat.ext.len();
    let mut grad = vec![0.0; t * c];
    let mut acc = vec![f64::NEG_INFINITY; c];
    for step in 0..lat.n {
        acc.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
        for s in 0..len {
            let k = lat.ext[s] as usize;
            acc[k] = lse2(acc[k], alpha[step * len + s] + beta[step * len + s]);
        }
        for k in 0..c {
            if acc[k] != f64::NEG_INFINITY {
                grad[step * c + k] = -(acc[k] - lp[step * c + k] - ll).exp();
            }
        }
    }
    Ok((-ll, Tensor::from_parts(vec![t, c], grad)))
}

/// Smoothed CTC for one sample:
/// `(1 − ε)·CTC + ε·(−mean log-prob over the first input_len frames)`.
pub fn ctc_loss<'t>(
    log_probs: Var<'t>,
    target: &[u32],
    input_len: usize,
    smoothing: f64,
) -> Result<Var<'t>> {
    if !(0.0..1.0).contains(&smoothing) {
        return Err(LossError::Invalid(format!(
            "smoothing {smoothing} outside [0, 1)"
        )));
    }
    let value = log_probs.value();
    let (nll, grad) = ctc_nll_and_grad(&value, target, input_len)?;
    let tape = log_probs.tape();
    let ctc = tape.custom(
        &[log_probs],
        Tensor::scalar(nll),
        Box::new(move |g: &Tensor| {
            let s = g.item();
            let mut out = grad.clone();
            out.data_mut().iter_mut().for_each(|v| *v *= s);
            vec![out]
        }),
    )?;
    if smoothing == 0.0 {
        return Ok(ctc);
    }
    let uniform = log_probs.slice(0, 0, input_len)?.mean()?.neg()?;
    Ok(ctc.scale(1.0 - smoothing)?.add(uniform.scale(smoothing)?)?)
}

/// Mean smoothed CTC over a batch of `[B, T, classes]` log-probs. Samples
/// whose target cannot fit are skipped; their indices are returned.
pub fn ctc_batch<'t>(
    log_probs: Var<'t>,
    targets: &[&[u32]],
    input_lens: &[usize],
    smoothing: f64,
) -> Result<(Option<Var<'t>>, Vec<usize>)> {
    let shape = log_probs.shape();
    if shape.len() != 3 || shape[0] != targets.len() || shape[0] != input_lens.len() {
        return Err(LossError::Shape {
            what: "ctc batch log-probs must be [B, T, classes] with B targets and lengths",
            shape,
        });
    }
    let (b, t, c) = (shape[0], shape[1], shape[2]);
    let mut terms = Vec::with_capacity(b);
    let mut skipped = Vec::new();
    for i in 0..b {
        if input_lens[i] < required_length(targets[i]) {
            skipped.push(i);
            continue;
        }
        let sample = log_probs.slice(0, i, i + 1)?.reshape(&[t, c])?;
        terms.push(ctc_loss(sample, targets[i], input_lens[i], smoothing)?);
    }
    if terms.is_empty() {
        return Ok((None, skipped));
    }
    let n = terms.len();
    let total = Var::concat(
        &terms
            .iter()
            .map(|v| v.reshape(&[1]))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        0,
    )?
    .sum()?;
    Ok((Some(total.scale(1.0 / n as f64)?), skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradcheck, Tape};

    fn lp(rows: &[&[f64]]) -> Tensor {
        let c = rows[0].len();
        Tensor::new(
            &[rows.len(), c],
            rows.iter().flat_map(|r| r.iter().map(|p| p.ln())).collect(),
        )
        .unwrap()
    }

    #[test]
    fn certain_single_frame() {
        let x = lp(&[&[1e-300, 1.0]]);
        assert!(ctc_neg_log_likelihood(&x, &[1], 1).unwrap().abs() < 1e-12);
    }

    #[test]
    fn two_frames_uniform() {
        let x = lp(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let v = ctc_neg_log_likelihood(&x, &[1], 2).unwrap();
        assert!((v - (-(0.75f64).ln())).abs() < 1e-12);
        assert!((v - 0.28768).abs() < 1e-5);
    }

    #[test]
    fn repeat_needs_separator() {
        let x = lp(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert_eq!(required_length(&[1, 1]), 3);
        assert!(matches!(
            ctc_neg_log_likelihood(&x, &[1, 1], 2),
            Err(LossError::InfeasibleTarget {
                required: 3,
                input_len: 2
            })
        ));
    }

    #[test]
    fn frames_past_input_len_are_ignored() {
        let a = lp(&[&[0.2, 0.5, 0.3], &[0.6, 0.1, 0.3], &[0.1, 0.1, 0.8]]);
        let (v, g) = ctc_nll_and_grad(&a, &[2], 2).unwrap();
        let short = Tensor::new(&[2, 3], a.data()[..6].to_vec()).unwrap();
        assert_eq!(v, ctc_neg_log_likelihood(&short, &[2], 2).unwrap());
        assert!(g.data()[6..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_with_smoothing() {
        let x = Tensor::new(
            &[5, 4],
            (0..20).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.3).collect(),
        )
        .unwrap();
        let r = gradcheck(
            |_tape: &Tape, v| {
                let l = v.log_softmax(1)?;
                Ok(ctc_loss(l, &[2, 3], 5, 0.1)?)
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn batch_skips_infeasible() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[2, 2, 3], (1.0f64 / 3.0).ln()), true);
        let (loss, skipped) = ctc_batch(x, &[&[1, 1], &[2]], &[2, 2], 0.0).unwrap();
        assert_eq!(skipped, vec![0]);
        let single =
            ctc_neg_log_likelihood(&Tensor::full(&[2, 3], (1.0f64 / 3.0).ln()), &[2], 2).unwrap();
        assert!((loss.unwrap().item() - single).abs() < 1e-15);
    }
}
