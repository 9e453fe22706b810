//! Gradient verification against central finite differences.

use super::{no_grad, Tensor};
use crate::error::{Error, Result};

/// Compare analytic gradients of a scalar-valued `f` against central finite
/// differences at the current parameter values.
///
/// Returns the maximum over all parameter entries of
/// `|analytic - central| / (|central| + 1e-12)`.
///
/// `f` must be deterministic: any sampling inside it has to be frozen by the
/// caller before invoking this.
pub fn finite_diff_check<F>(f: &F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn() -> Result<Tensor>,
{
    for p in params {
        p.zero_grad();
    }
    let loss = f()?;
    if loss.numel() != 1 {
        return Err(Error::Usage(format!(
            "finite_diff_check: f must be scalar-valued, got shape {:?}",
            loss.shape()
        )));
    }
    if !loss.item().is_finite() {
        return Err(Error::Numeric(format!("finite_diff_check: f evaluated to {}", loss.item())));
    }
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut max_rel = 0.0;
    for (param, grads) in params.iter().zip(&analytic) {
        for i in 0..param.numel() {
            param.nudge(i, eps);
            let plus = no_grad(|| f().map(|t| t.item()))?;
            param.nudge(i, -2.0 * eps);
            let minus = no_grad(|| f().map(|t| t.item()))?;
            param.nudge(i, eps);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(
                    "finite_diff_check: perturbed evaluation is not finite".to_string(),
                ));
            }
            let central = (plus - minus) / (2.0 * eps);
            let rel = (grads[i] - central).abs() / (central.abs() + 1e-12);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    for p in params {
        p.zero_grad();
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_matches_to_machine_precision() {
        let x = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        x.set_requires_grad(true);
        let f = {
            let x = x.clone();
            move || x.mul(&x)
        };
        let err = finite_diff_check(&f, &[x], 1e-5).unwrap();
        assert!(err < 1e-9, "rel err {err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        x.set_requires_grad(true);
        let f = || Ok(Tensor::scalar(4.0));
        let err = finite_diff_check(&f, &[x], 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn composite_ops_pass_at_1e4() {
        let mut rng = crate::rng::stream(5, "fdcheck", 0);
        let w = Tensor::randn(&[3, 3], 0.5, &mut rng);
        w.set_requires_grad(true);
        let b = Tensor::randn(&[3], 0.5, &mut rng);
        b.set_requires_grad(true);
        let x = Tensor::randn(&[2, 3], 1.0, &mut rng);
        let target = Tensor::randn(&[2, 3], 1.0, &mut rng);
        let f = {
            let (w, b, x, target) = (w.clone(), b.clone(), x.clone(), target.clone());
            move || {
                let h = x.matmul(&w)?.add_row_broadcast(&b)?.silu();
                let s = h.softmax_lastdim()?;
                s.mse(&target)
            }
        };
        let err = finite_diff_check(&f, &[w, b], 1e-5).unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }
}
