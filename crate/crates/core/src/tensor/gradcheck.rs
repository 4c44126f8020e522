use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Worst disagreement between tape gradients and central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `max |a − n| / max(|a|, |n|, floor)` over every input coordinate.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub coordinates: usize,
}

/// Denominator floor so that near-zero gradients are compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;

/// Compares the reverse-mode gradient of the scalar built by `f` with
/// central finite differences of step `eps`, over every element of every
/// input.
pub fn check_gradients<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let y = f(&tape, &vars)?;
        if y.shape().iter().product::<usize>() != 1 {
            return Err(Error::Contract(format!("gradient check needs a scalar, got {:?}", y.shape())));
        }
        Ok(y.item())
    };
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let y = f(&tape, &vars)?;
    let grads = tape.backward(y)?;
    let mut out = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        coordinates: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v);
        for i in 0..inputs[k].len() {
            let x = inputs[k].data()[i];
            work[k].data_mut()[i] = x + eps;
            let hi = eval(&work)?;
            work[k].data_mut()[i] = x - eps;
            let lo = eval(&work)?;
            work[k].data_mut()[i] = x;
            let numeric = (hi - lo) / (2.0 * eps);
            let a = analytic[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            out.max_abs_error = out.max_abs_error.max(abs);
            out.max_rel_error = out.max_rel_error.max(rel);
            out.coordinates += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_functions_agree() {
        let x = Tensor::vector(&[0.3, -0.7]);
        let y = Tensor::vector(&[1.1, 0.4]);
        let g = check_gradients(&[x, y], 1e-5, |_, v| Ok(v[0].exp().mul(v[1].tanh())?.sum())).unwrap();
        assert!(g.max_rel_error < 1e-8, "{g:?}");
        assert_eq!(g.coordinates, 4);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let x = Tensor::vector(&[0.3, -0.7]);
        assert!(check_gradients(&[x], 1e-5, |_, v| Ok(v[0].exp())).is_err());
    }
}
