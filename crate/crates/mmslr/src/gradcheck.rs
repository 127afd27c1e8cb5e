//! Finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Compare analytic gradients of a scalar-valued composite against central
/// finite differences. Returns the max over all coordinates of
/// `|analytic - fd| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if !v.is_scalar() {
            return Err(Error::InvalidInput {
                op: "grad_check",
                reason: format!("composite output must be scalar, got {:?}", v.shape()),
            });
        }
        Ok(v.scalar_value())
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).is_scalar() {
        return Err(Error::InvalidInput {
            op: "grad_check",
            reason: format!("composite output must be scalar, got {:?}", tape.value(out).shape()),
        });
    }
    let grads = tape.backward(out)?;

    let mut max_err: f64 = 0.0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.of(vars[i], input.shape());
        for j in 0..input.numel() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = analytic.data()[j];
            let err = (a - fd).abs() / a.abs().max(1.0);
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn sum_gradient_is_exact() {
        let x = Tensor::new(vec![2, 3], vec![0.3, -1.0, 2.0, 0.1, 5.0, -0.7]).unwrap();
        let err = grad_check(|tape, vars| Ok(tape.reduce_sum(vars[0])), &[x], 1e-5).unwrap();
        // only finite-difference roundoff remains for a linear map
        assert!(err < 1e-9, "err = {err}");
    }

    #[test]
    fn softmax_cross_entropy_gradcheck() {
        let mut rng = Rng::new(3);
        let logits = rng.tensor_normal(vec![1, 5], 1.0);
        let err = grad_check(
            |tape, vars| {
                let lp = tape.log_softmax(vars[0], 1)?;
                // NLL of class 2 via one-hot mask
                let onehot = tape.constant(Tensor::new(
                    vec![1, 5],
                    vec![0.0, 0.0, -1.0, 0.0, 0.0],
                )?);
                let picked = tape.mul(lp, onehot)?;
                Ok(tape.reduce_sum(picked))
            },
            &[logits],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "err = {err}");
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let x = Tensor::zeros(vec![2, 2]);
        let res = grad_check(|_tape, vars| Ok(vars[0]), &[x], 1e-5);
        assert!(res.is_err());
    }
}
