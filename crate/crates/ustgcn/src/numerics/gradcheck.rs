use crate::error::{Error, Result};
use crate::numerics::tensor::DenseTensor;

/// Compare analytic gradients against central finite differences.
///
/// For every coordinate of every parameter the numeric gradient is
/// (f(p+h) − f(p−h)) / 2h; the return value is the max over coordinates of
/// |analytic − numeric| / max(1e-8, |numeric|).
pub fn finite_diff_check<F>(
    mut f: F,
    params: &[DenseTensor],
    analytic: &[DenseTensor],
    h: f64,
) -> Result<f64>
where
    F: FnMut(&[DenseTensor]) -> Result<f64>,
{
    if h <= 0.0 {
        return Err(Error::InvalidArgument {
            op: "finite_diff_check",
            msg: format!("step size must be positive, got {h}"),
        });
    }
    if params.len() != analytic.len() {
        return Err(Error::InvalidArgument {
            op: "finite_diff_check",
            msg: format!(
                "{} parameter tensors but {} gradient tensors",
                params.len(),
                analytic.len()
            ),
        });
    }
    let mut work: Vec<DenseTensor> = params.to_vec();
    let mut max_rel = 0.0f64;
    for pi in 0..params.len() {
        if params[pi].shape() != analytic[pi].shape() {
            return Err(Error::ShapeMismatch {
                op: "finite_diff_check",
                lhs: params[pi].shape().to_vec(),
                rhs: analytic[pi].shape().to_vec(),
            });
        }
        for k in 0..params[pi].numel() {
            let orig = work[pi].as_slice()[k];
            work[pi].as_mut_slice()[k] = orig + h;
            let up = f(&work)?;
            work[pi].as_mut_slice()[k] = orig - h;
            let down = f(&work)?;
            work[pi].as_mut_slice()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic[pi].as_slice()[k] - numeric).abs() / numeric.abs().max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tape::Tape;

    #[test]
    fn quadratic_matches_calculus() {
        let p = DenseTensor::scalar(3.0);
        let analytic = DenseTensor::scalar(6.0);
        let rel = finite_diff_check(
            |ps| Ok(ps[0].scalar_value() * ps[0].scalar_value()),
            &[p],
            &[analytic],
            1e-5,
        )
        .unwrap();
        assert!(rel < 1e-9, "rel err {rel}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let p = DenseTensor::scalar(1.0);
        let analytic = DenseTensor::scalar(0.0);
        let rel = finite_diff_check(|_| Ok(7.0), &[p], &[analytic], 1e-5).unwrap();
        assert_eq!(rel, 0.0);
    }

    #[test]
    fn rejects_nonpositive_h() {
        let p = DenseTensor::scalar(1.0);
        let g = DenseTensor::scalar(0.0);
        assert!(finite_diff_check(|_| Ok(0.0), &[p], &[g], 0.0).is_err());
    }

    #[test]
    fn tape_mse_gradient_passes_check() {
        // loss = mse(W·x, y) on a small fixed instance
        let w0 = DenseTensor::from_rows(&[&[0.5, -0.3], &[0.2, 0.9]]).unwrap();
        let x = DenseTensor::from_rows(&[&[1.0], &[-2.0]]).unwrap();
        let y = DenseTensor::from_rows(&[&[0.7], &[-0.1]]).unwrap();

        let eval = |ps: &[DenseTensor]| -> crate::error::Result<f64> {
            let mut tape = Tape::new();
            let w = tape.param(ps[0].clone());
            let xi = tape.input(x.clone());
            let yi = tape.input(y.clone());
            let pred = tape.matmul(w, xi)?;
            let loss = tape.mse_loss(pred, yi)?;
            Ok(tape.value(loss).scalar_value())
        };

        let mut tape = Tape::new();
        let w = tape.param(w0.clone());
        let xi = tape.input(x.clone());
        let yi = tape.input(y.clone());
        let pred = tape.matmul(w, xi).unwrap();
        let loss = tape.mse_loss(pred, yi).unwrap();
        let grads = tape.backward(loss).unwrap();

        let rel = finite_diff_check(eval, &[w0], &[grads.get(w)], 1e-5).unwrap();
        assert!(rel < 1e-5, "rel err {rel}");
    }
}
