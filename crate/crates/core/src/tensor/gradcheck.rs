use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing recorded gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares the backward-pass gradient of the scalar built by `f` at `x0`
/// with central finite differences `(f(x+h) − f(x−h)) / 2h`, elementwise.
///
/// The reported error is `max |analytic − numeric| / max(1e-8, |numeric|)`.
/// Callers keep inputs away from ReLU kinks by at least `h`.
pub fn grad_check<F>(f: F, x0: &Tensor<f64>, h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(x0.clone());
    let loss = f(&mut tape, x)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<f64> = match grads.get(x) {
        Some(g) => g.data().to_vec(),
        None => vec![0.0; x0.len()],
    };

    let eval = |xp: Tensor<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.constant(xp);
        let l = f(&mut t, v)?;
        Ok(t.value(l).item())
    };
    let mut numeric = Vec::with_capacity(x0.len());
    for i in 0..x0.len() {
        let mut plus = x0.clone();
        plus.data_mut()[i] += h;
        let mut minus = x0.clone();
        minus.data_mut()[i] -= h;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * h));
    }

    let mut max_rel_error = 0.0;
    let mut worst_index = 0;
    for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        if a.is_nan() || n.is_nan() {
            return Err(Error::NonFinite(format!("gradient element {i} is NaN")));
        }
        let e = (a - n).abs() / n.abs().max(1e-8);
        if e > max_rel_error {
            max_rel_error = e;
            worst_index = i;
        }
    }
    Ok(GradCheck { max_rel_error, worst_index, analytic, numeric })
}
