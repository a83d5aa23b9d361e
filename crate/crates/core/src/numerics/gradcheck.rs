use super::graph::{Graph, Var};
use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// Default central-difference step for double precision.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Compares the tape gradient of a scalar function of one tensor against
/// central differences.
///
/// Returns `max |analytic − numeric| / max(1, |analytic|)` over all entries.
pub fn grad_check<F>(f: F, x: &Tensor2, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(x), step)
}

/// [`grad_check`] over several input tensors at once.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor2], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Argument(format!("finite-difference step {step}")));
    }
    let eval = |inputs: &[Tensor2]| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        if g.shape(out) != (1, 1) {
            return Err(Error::dim("grad_check output", g.shape(out), (1, 1)));
        }
        Ok((g, vars, out))
    };

    let (g, vars, out) = eval(inputs)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor2> = vars.iter().map(|&v| grads.get(v)).collect();

    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (which, grad) in analytic.iter().enumerate() {
        for idx in 0..grad.len() {
            let orig = work[which].data()[idx];
            work[which].data_mut()[idx] = orig + step;
            let (gp, _, op) = eval(&work)?;
            let plus = gp.scalar(op);
            work[which].data_mut()[idx] = orig - step;
            let (gm, _, om) = eval(&work)?;
            let minus = gm.scalar(om);
            work[which].data_mut()[idx] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            if !numeric.is_finite() {
                return Err(Error::NonFinite {
                    op: "finite difference".into(),
                });
            }
            let a = grad.data()[idx];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}
