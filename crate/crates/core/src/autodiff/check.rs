use super::{Tape, Tensor, Var};
use crate::error::TensorError;

/// Compare tape gradients of a scalar function against central differences.
///
/// `f` builds the scalar on a fresh tape from leaves holding `params`; it must
/// be deterministic. Returns the maximum over all parameter entries of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check<F, E>(f: F, params: &[Tensor], eps: f64) -> Result<f64, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let per_param = finite_difference_errors(f, params, eps)?;
    Ok(per_param.into_iter().fold(0.0, f64::max))
}

/// Same as [`finite_difference_check`], but reports the worst error per parameter.
pub fn finite_difference_errors<F, E>(f: F, params: &[Tensor], eps: f64) -> Result<Vec<f64>, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let eval = |values: &[Tensor]| -> Result<f64, E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| tape.grad(*v)).collect();
    drop(tape);

    let mut probe = params.to_vec();
    let mut worst = vec![0.0f64; params.len()];
    for (p, grad) in analytic.iter().enumerate() {
        for i in 0..grad.numel() {
            let orig = probe[p].data()[i];
            probe[p].data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe[p].data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe[p].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst[p] = worst[p].max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
