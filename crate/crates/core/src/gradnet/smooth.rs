//! Certified smoothness constant of the cross-entropy loss as a function of
//! the input, for softplus networks.
//!
//! Composition rule: for `g = l o F` with `F` having Lipschitz constant `L_F`
//! and Jacobian curvature bound `b_F` (so `||sum_i u_i H_i(F)|| <= b_F ||u||`),
//! `||H(g)|| <= ||H(l)|| L_F^2 + ||grad l|| b_F`. Softmax cross-entropy in the
//! logits has `||H|| <= 1/2` and `||grad|| <= sqrt(2)`. Linear layers multiply
//! both constants by their operator norm; softplus has slope at most 1 and
//! curvature at most 1/4, giving `b' = L^2 / 4 + b`.

use super::{ActivationKind, Layer, Network};
use crate::error::{Error, Result};

/// Upper bound on the spectral norm of a linear layer's operator.
///
/// Uses `min(||A||_F, sqrt(||A||_1 ||A||_inf))` for dense layers and the
/// Schur bound `sqrt(max_row_sum * max_col_sum)` computed from kernel tap
/// sums for convolutions. Returns `None` for non-linear layers; flatten is 1.
pub fn operator_norm_bound(layer: &Layer) -> Option<f64> {
    match layer {
        Layer::Dense(d) => {
            let (out, inp) = (d.weights.shape()[0], d.weights.shape()[1]);
            let w = d.weights.data();
            let frob = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            let row = (0..out)
                .map(|o| w[o * inp..(o + 1) * inp].iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max);
            let col = (0..inp)
                .map(|i| (0..out).map(|o| w[o * inp + i].abs()).sum::<f64>())
                .fold(0.0, f64::max);
            Some(frob.min((row * col).sqrt()))
        }
        Layer::Conv2d(c) => {
            let s = c.kernels.shape();
            let (cout, cin, kk) = (s[0], s[1], s[2] * s[3]);
            let k = c.kernels.data();
            let tap_sum = |oc: usize, ic: usize| -> f64 {
                let base = (oc * cin + ic) * kk;
                k[base..base + kk].iter().map(|v| v.abs()).sum()
            };
            let row = (0..cout)
                .map(|oc| (0..cin).map(|ic| tap_sum(oc, ic)).sum::<f64>())
                .fold(0.0, f64::max);
            let col = (0..cin)
                .map(|ic| (0..cout).map(|oc| tap_sum(oc, ic)).sum::<f64>())
                .fold(0.0, f64::max);
            Some((row * col).sqrt())
        }
        Layer::Flatten => Some(1.0),
        Layer::Activation(_) => None,
    }
}

/// Smoothness constant `lambda` with `||H_x L(x, y)|| <= lambda` for all `x, y`.
///
/// ReLU networks are rejected: their loss is not differentiable everywhere.
pub fn smoothness_bound(net: &Network) -> Result<f64> {
    if net.uses_relu() {
        return Err(Error::Unsupported(
            "smoothness bound requires softplus activations; network uses relu".into(),
        ));
    }
    let (mut lip, mut curv) = (1.0f64, 0.0f64);
    for layer in net.layers() {
        match layer {
            Layer::Activation(ActivationKind::Softplus) => {
                curv += lip * lip / 4.0;
            }
            Layer::Activation(ActivationKind::Relu) => unreachable!(),
            linear => {
                let s = operator_norm_bound(linear).expect("linear layer");
                lip *= s;
                curv *= s;
            }
        }
    }
    Ok(0.5 * lip * lip + std::f64::consts::SQRT_2 * curv)
}
