//! Central-difference verification of tape gradients.

use super::{Tape, Tensor, TensorError, Var};

/// Outcome of comparing analytic gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradcheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// (input index, flat element index) where the maximum occurred.
    pub worst: (usize, usize),
    pub rel_tol: f64,
    pub passed: bool,
}

/// Denominator floor so that near-zero gradients are compared absolutely.
const REL_FLOOR: f64 = 1e-4;

/// Check the gradient of a scalar function of one tensor.
pub fn gradcheck<F>(f: F, point: &Tensor, rel_tol: f64) -> Result<GradcheckReport, TensorError>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>, TensorError>,
{
    gradcheck_multi(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(point),
        rel_tol,
    )
}

/// Check the gradient of a scalar function of several tensors at once.
///
/// The step for element `x` is `1e-5 · (|x| + 1)`.
pub fn gradcheck_multi<F>(
    f: F,
    points: &[Tensor],
    rel_tol: f64,
) -> Result<GradcheckReport, TensorError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, TensorError>,
{
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = points.iter().map(|p| tape.leaf(p.clone(), true)).collect();
        let out = f(&tape, &vars)?;
        tape.backward(out)?;
        vars.iter()
            .zip(points)
            .map(|(v, p)| tape.grad(*v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect()
    };

    let eval = |inputs: &[Tensor], loc: (usize, usize)| -> Result<f64, TensorError> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|p| tape.constant(p.clone())).collect();
        let v = f(&tape, &vars)?.item();
        if !v.is_finite() {
            return Err(TensorError::Invalid {
                op: "gradcheck",
                msg: format!("non-finite value at input {} element {}", loc.0, loc.1),
            });
        }
        Ok(v)
    };

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        rel_tol,
        passed: true,
    };
    let mut work: Vec<Tensor> = points.to_vec();
    for (pi, point) in points.iter().enumerate() {
        for j in 0..point.numel() {
            let x = point.data()[j];
            let h = 1e-5 * (x.abs() + 1.0);
            work[pi].data_mut()[j] = x + h;
            let plus = eval(&work, (pi, j))?;
            work[pi].data_mut()[j] = x - h;
            let minus = eval(&work, (pi, j))?;
            work[pi].data_mut()[j] = x;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (pi, j);
            }
        }
    }
    report.passed = report.max_rel_error <= rel_tol;
    Ok(report)
}
