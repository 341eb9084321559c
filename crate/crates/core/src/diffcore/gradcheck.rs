use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over coordinates of `|analytic - numeric| / max(1, |analytic|)`
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// (input index, flat coordinate) of the worst coordinate
    pub worst: Option<(usize, usize)>,
}

/// Compares tape gradients of a scalar function against central differences
/// with step `h`, in double precision, over every input coordinate.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    grad_check_filtered(f, inputs, h, |_, _| true)
}

/// Like [`grad_check`], restricted to coordinates where `select(input, coord)` holds.
pub fn grad_check_filtered<F>(
    f: F,
    inputs: &[Tensor<f64>],
    h: f64,
    select: impl Fn(usize, usize) -> bool,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let analytic: Vec<Tensor<f64>> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_, f64>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&tape, &vars)?;
        let grads = tape.backward(loss)?;
        vars.iter().map(|&v| grads.wrt(v)).collect()
    };
    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_, f64>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&tape, &vars)?;
        let v = loss.value();
        if v.numel() != 1 {
            return Err(Error::NonScalarLoss(v.shape().to_vec()));
        }
        Ok(v.data()[0])
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        worst: None,
    };
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.numel() {
            if !select(k, i) {
                continue;
            }
            let x0 = input.data()[i];
            work[k].data_mut()[i] = x0 + h;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = x0 - h;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = x0;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[k].data()[i];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((k, i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_is_exact_to_rounding() {
        let w = Tensor::from_fn(&[3, 2], |i| 0.3 * i as f64 - 0.7);
        let x = Tensor::from_fn(&[4, 3], |i| (i as f64 * 0.37).sin());
        let r = grad_check(|_, v| Ok(v[0].matmul(v[1])?.sum()), &[x, w], 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.coords_checked, 18);
    }

    #[test]
    fn detects_a_wrong_backward_rule() {
        let x = Tensor::from_fn(&[5], |i| 0.2 + i as f64);
        let r = grad_check(
            |tape, v| {
                // forward x^2 with a deliberately wrong derivative (x instead of 2x)
                let sq = tape.custom(
                    &[v[0]],
                    |xs| Ok(xs[0].map(|a| a * a)),
                    Box::new(|g, xs, _| {
                        vec![Tensor::new(
                            g.shape(),
                            g.data().iter().zip(xs[0].data()).map(|(g, x)| g * x).collect(),
                        )
                        .unwrap()]
                    }),
                )?;
                Ok(sq.sum())
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error > 0.1);
    }
}
