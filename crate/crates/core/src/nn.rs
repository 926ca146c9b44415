//! Layers shared by the guide and the autoencoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{contract, Result};
use crate::params::{Bound, ParamSet};
use crate::scalar::Scalar;

const LN_EPS: f64 = 1e-5;
const MASKED: f64 = -1e9;

/// Width and depth of a Transformer stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerDims {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
}

impl TransformerDims {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(contract!(
                "hidden width {} must be a positive multiple of the head count {}",
                self.hidden,
                self.heads
            ));
        }
        Ok(())
    }
}

pub(crate) fn init_linear<T: Scalar>(p: &mut ParamSet<T>, rng: &mut impl Rng, prefix: &str, fan_in: usize, fan_out: usize) {
    p.init_normal(rng, &format!("{prefix}.w"), fan_in, fan_out, (1.0 / fan_in as f64).sqrt());
    p.init_full(&format!("{prefix}.b"), 1, fan_out, 0.0);
}

pub(crate) fn init_layer_norm<T: Scalar>(p: &mut ParamSet<T>, prefix: &str, width: usize) {
    p.init_full(&format!("{prefix}.gain"), 1, width, 1.0);
    p.init_full(&format!("{prefix}.bias"), 1, width, 0.0);
}

pub(crate) fn init_transformer<T: Scalar>(p: &mut ParamSet<T>, rng: &mut impl Rng, prefix: &str, dims: &TransformerDims) {
    let h = dims.hidden;
    for l in 0..dims.layers {
        let pre = format!("{prefix}.{l}");
        init_layer_norm(p, &format!("{pre}.ln1"), h);
        init_linear(p, rng, &format!("{pre}.qkv"), h, 3 * h);
        init_linear(p, rng, &format!("{pre}.out"), h, h);
        init_layer_norm(p, &format!("{pre}.ln2"), h);
        init_linear(p, rng, &format!("{pre}.ff1"), h, dims.ffn);
        init_linear(p, rng, &format!("{pre}.ff2"), dims.ffn, h);
    }
    init_layer_norm(p, &format!("{prefix}.final_ln"), h);
}

pub(crate) fn linear<T: Scalar>(g: &mut Graph<'_, T>, b: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let w = b.var(&format!("{prefix}.w"))?;
    let bias = b.var(&format!("{prefix}.b"))?;
    let y = g.matmul(x, w)?;
    g.add_row(y, bias)
}

pub(crate) fn layer_norm<T: Scalar>(g: &mut Graph<'_, T>, b: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let gain = b.var(&format!("{prefix}.gain"))?;
    let bias = b.var(&format!("{prefix}.bias"))?;
    g.layer_norm(x, gain, bias, LN_EPS)
}

fn attention<T: Scalar>(g: &mut Graph<'_, T>, b: &Bound, prefix: &str, x: Var, heads: usize, causal: bool) -> Result<Var> {
    let rows = g.value(x).rows();
    let h = g.value(x).cols();
    let d = h / heads;
    let qkv = linear(g, b, &format!("{prefix}.qkv"), x)?;
    let mask = if causal && rows > 1 {
        let mut m = Tensor::zeros(rows, rows);
        for i in 0..rows {
            for j in i + 1..rows {
                m.data_mut()[i * rows + j] = T::c(MASKED);
            }
        }
        Some(g.constant(m))
    } else {
        None
    };
    let scale = T::c(1.0 / (d as f64).sqrt());
    let mut ctx = Vec::with_capacity(heads);
    for head in 0..heads {
        let q = g.slice_cols(qkv, head * d, d)?;
        let k = g.slice_cols(qkv, h + head * d, d)?;
        let v = g.slice_cols(qkv, 2 * h + head * d, d)?;
        let scores = g.matmul_t(q, k)?;
        let mut scores = g.scale(scores, scale)?;
        if let Some(m) = mask {
            scores = g.add(scores, m)?;
        }
        let probs = g.softmax(scores)?;
        ctx.push(g.matmul(probs, v)?);
    }
    let joined = if heads == 1 { ctx[0] } else { g.concat_cols(&ctx)? };
    linear(g, b, &format!("{prefix}.out"), joined)
}

/// Pre-norm Transformer stack followed by a final layer norm.
///
/// With `causal`, position `i` only attends to positions `<= i`.
pub(crate) fn transformer<T: Scalar>(
    g: &mut Graph<'_, T>,
    b: &Bound,
    prefix: &str,
    dims: &TransformerDims,
    mut x: Var,
    causal: bool,
) -> Result<Var> {
    for l in 0..dims.layers {
        let pre = format!("{prefix}.{l}");
        let h = layer_norm(g, b, &format!("{pre}.ln1"), x)?;
        let a = attention(g, b, &pre, h, dims.heads, causal)?;
        x = g.add(x, a)?;
        let h = layer_norm(g, b, &format!("{pre}.ln2"), x)?;
        let f = linear(g, b, &format!("{pre}.ff1"), h)?;
        let f = g.gelu(f)?;
        let f = linear(g, b, &format!("{pre}.ff2"), f)?;
        x = g.add(x, f)?;
    }
    layer_norm(g, b, &format!("{prefix}.final_ln"), x)
}

pub(crate) fn init_gru<T: Scalar>(p: &mut ParamSet<T>, rng: &mut impl Rng, prefix: &str, input: usize, hidden: usize) {
    let std = (1.0 / hidden as f64).sqrt();
    p.init_normal(rng, &format!("{prefix}.wx"), input, 3 * hidden, std);
    p.init_normal(rng, &format!("{prefix}.wh"), hidden, 3 * hidden, std);
    p.init_full(&format!("{prefix}.bx"), 1, 3 * hidden, 0.0);
    p.init_full(&format!("{prefix}.bh"), 1, 3 * hidden, 0.0);
}

/// Runs a GRU left to right over the rows of `x` and returns every hidden
/// state, starting from a zero state.
///
/// Gates follow the usual reset/update/candidate form:
/// `r = s(x Wr + h Ur)`, `u = s(x Wu + h Uu)`,
/// `n = tanh(x Wn + r * (h Un))`, `h' = n + u * (h - n)`.
pub(crate) fn gru<T: Scalar>(g: &mut Graph<'_, T>, b: &Bound, prefix: &str, x: Var) -> Result<Vec<Var>> {
    let rows = g.value(x).rows();
    let wh = b.var(&format!("{prefix}.wh"))?;
    let bh = b.var(&format!("{prefix}.bh"))?;
    let hidden = g.value(wh).rows();
    let wx = b.var(&format!("{prefix}.wx"))?;
    let bx = b.var(&format!("{prefix}.bx"))?;
    let xw = g.matmul(x, wx)?;
    let xw = g.add_row(xw, bx)?;

    let mut state = g.constant(Tensor::zeros(1, hidden));
    let mut states = Vec::with_capacity(rows);
    for t in 0..rows {
        let xt = g.slice_rows(xw, t, 1)?;
        let hw = g.matmul(state, wh)?;
        let hw = g.add(hw, bh)?;
        let (xr, xu, xn) = (g.slice_cols(xt, 0, hidden)?, g.slice_cols(xt, hidden, hidden)?, g.slice_cols(xt, 2 * hidden, hidden)?);
        let (hr, hu, hn) = (g.slice_cols(hw, 0, hidden)?, g.slice_cols(hw, hidden, hidden)?, g.slice_cols(hw, 2 * hidden, hidden)?);
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r)?;
        let u = g.add(xu, hu)?;
        let u = g.sigmoid(u)?;
        let rn = g.mul(r, hn)?;
        let n = g.add(xn, rn)?;
        let n = g.tanh(n)?;
        let diff = g.sub(state, n)?;
        let keep = g.mul(u, diff)?;
        state = g.add(n, keep)?;
        states.push(state);
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> TransformerDims {
        TransformerDims {
            hidden: 8,
            layers: 1,
            heads: 2,
            ffn: 12,
        }
    }

    #[test]
    fn transformer_preserves_rows_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamSet::<f64>::new();
        init_transformer(&mut p, &mut rng, "enc", &tiny());
        let x = Tensor::matrix(5, 8, (0..40).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let run = || {
            let mut g = Graph::new();
            let b = p.bind(&mut g, false);
            let xv = g.input(x.clone(), false);
            let y = transformer(&mut g, &b, "enc", &tiny(), xv, false).unwrap();
            g.value(y).clone()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.shape(), &[5, 8]);
        assert_eq!(a, b);
    }

    #[test]
    fn causal_attention_ignores_the_future() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ParamSet::<f64>::new();
        init_transformer(&mut p, &mut rng, "dec", &tiny());
        let x = Tensor::matrix(4, 8, (0..32).map(|i| (i as f64 * 0.21).cos()).collect()).unwrap();
        let mut y = x.clone();
        for v in y.row_mut(3) {
            *v += 1.0;
        }
        let out = |inp: &Tensor<f64>| {
            let mut g = Graph::new();
            let b = p.bind(&mut g, false);
            let xv = g.input(inp.clone(), false);
            let o = transformer(&mut g, &b, "dec", &tiny(), xv, true).unwrap();
            g.value(o).clone()
        };
        let (a, b) = (out(&x), out(&y));
        assert_eq!(a.slice_rows(0, 3).unwrap(), b.slice_rows(0, 3).unwrap());
        assert_ne!(a.row(3), b.row(3));
    }

    #[test]
    fn transformer_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = ParamSet::<f64>::new();
        init_transformer(&mut p, &mut rng, "enc", &tiny());
        let x = Tensor::matrix(3, 8, (0..24).map(|i| (i as f64 * 0.5).sin()).collect()).unwrap();
        let w = Tensor::matrix(3, 8, (0..24).map(|i| (i as f64 * 0.9).cos()).collect()).unwrap();
        let err = gradient_check(
            |g, xv| {
                let b = p.bind(g, false);
                let y = transformer(g, &b, "enc", &tiny(), xv, true)?;
                let wv = g.input(w.clone(), false);
                let yw = g.mul(y, wv)?;
                g.sum_all(yw)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn gru_with_zero_weights_stays_at_zero() {
        let mut p = ParamSet::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        init_gru(&mut p, &mut rng, "gru", 4, 4);
        for t in p.values_mut() {
            t.data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let x = g.input(Tensor::full(3, 4, 0.7), false);
        let states = gru(&mut g, &b, "gru", x).unwrap();
        assert_eq!(states.len(), 3);
        for s in states {
            assert!(g.value(s).data().iter().all(|&v| v == 0.0));
        }
    }
}
