use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Compares the reverse-mode gradient of a scalar function with central
/// finite differences.
///
/// `f` receives a fresh graph and a leaf holding `x` and must return a
/// scalar node. The result is the maximum over coordinates of
/// `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`.
pub fn gradient_check<'p, T, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Graph<'p, T>, Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("eps must be positive, got {eps}")));
    }
    let analytic = {
        let mut g = Graph::new();
        let leaf = g.input(x.clone(), true);
        let out = f(&mut g, leaf)?;
        let grads = g.backward(out)?;
        match grads.get(leaf) {
            Some(t) => t.to_f64_vec(),
            None => vec![0.0; x.numel()],
        }
    };

    let eval = |probe: Tensor<T>| -> Result<f64> {
        let mut g = Graph::new();
        let leaf = g.input(probe, false);
        let out = f(&mut g, leaf)?;
        let v = g.value(out).item()?.to_f64().unwrap_or(f64::NAN);
        if !v.is_finite() {
            return Err(Error::Numeric("function under gradient check".into()));
        }
        Ok(v)
    };

    let step = T::c(eps);
    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        // the perturbation actually applied, after rounding
        let h = (plus.data()[i] - minus.data()[i]).to_f64().unwrap();
        let numeric = (eval(plus)? - eval(minus)?) / h;
        let a = analytic[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}
