use super::{Array, Tape, Var};
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of `f` against central finite differences.
///
/// `f` builds a scalar on the tape from one `Var` per entry of `params`.
/// Returns the maximum over all coordinates of
/// `|g_ad - g_fd| / max(1, |g_fd|)`.
pub fn finite_diff_check<F>(f: F, params: &[Array], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Parameter(format!(
            "finite-difference step must lie in (0, 1e-2], got {eps}"
        )));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let base = tape.value(loss).item();
    let grads = tape.backward(loss)?;

    let again = evaluate(&f, params)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::Contract(format!(
            "function is not deterministic: {base} then {again}"
        )));
    }

    let mut worst: f64 = 0.0;
    let mut probe = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let ad = grads.wrt(*var).data().to_vec();
        for j in 0..params[pi].len() {
            let orig = params[pi].data()[j];
            probe[pi].data_mut()[j] = orig + eps;
            let fp = evaluate(&f, &probe)?;
            probe[pi].data_mut()[j] = orig - eps;
            let fm = evaluate(&f, &probe)?;
            probe[pi].data_mut()[j] = orig;
            let fd = (fp - fm) / (2.0 * eps);
            let err = (ad[j] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn evaluate<F>(f: &F, params: &[Array]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let v = tape.value(loss);
    if !v.is_scalar() {
        return Err(Error::Contract(format!(
            "checked function must return a scalar, got {:?}",
            v.shape()
        )));
    }
    Ok(v.item())
}
