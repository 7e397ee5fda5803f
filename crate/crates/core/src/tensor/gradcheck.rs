use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the tape gradient of a scalar function against central
/// differences `(f(x+h·e) − f(x−h·e)) / 2h`, coordinate by coordinate.
///
/// Returns the largest relative error.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |point: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(point, false);
        let y = f(&mut tape, v)?;
        let out = tape.value(y);
        if out.len() != 1 {
            return Err(Error::argument("grad_check needs a scalar function"));
        }
        Ok(out.item())
    };

    let mut tape = Tape::new();
    let v = tape.leaf(x.clone(), true);
    let y = f(&mut tape, v)?;
    let grads = tape.backward(y)?;
    let analytic = grads
        .get(v)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Central-difference check of the gradient with respect to selected
/// coordinates of a stored parameter. `f` builds a scalar loss from the store.
///
/// Returns the largest relative error over `coords`.
pub fn param_grad_check<F>(store: &ParamStore, id: ParamId, f: F, h: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !store.get(id).trainable {
        return Err(Error::argument(format!("{} is frozen", store.get(id).name)));
    }
    let mut tape = Tape::new();
    let y = f(&mut tape, store)?;
    let grads = tape.backward(y)?;
    let x = store.value(id);
    let analytic = grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |i: usize, delta: f64| -> Result<f64> {
        let mut s = store.clone();
        s.value_mut(id).data_mut()[i] += delta;
        let mut tape = Tape::new();
        let y = f(&mut tape, &s)?;
        Ok(tape.value(y).item())
    };
    let mut worst: f64 = 0.0;
    for &i in coords {
        if i >= x.len() {
            return Err(Error::Index(format!("coordinate {i} of a {}-element parameter", x.len())));
        }
        let numeric = (eval(i, h)? - eval(i, -h)?) / (2.0 * h);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}
