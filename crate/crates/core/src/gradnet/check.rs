use super::Network;
use crate::error::Result;
use crate::tensor::Tensor;

/// Largest gradient errors found by [`finite_difference_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_param_error: f64,
    pub max_input_error: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn max_error(&self) -> f64 {
        self.max_param_error.max(self.max_input_error)
    }
}

/// `|a - n| / max(|a|, |n|, floor)`: relative error that stays meaningful
/// for gradients near zero.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares every parameter and input gradient of the cross-entropy loss
/// against central differences with step `h`.
pub fn finite_difference_check(net: &Network, x: &Tensor, y: usize, h: f64, floor: f64) -> Result<GradCheck> {
    let lg = net.backward(x, y)?;
    let analytic = lg.param_grads.flat();
    let mut params = net.params_flat();
    let mut probe = net.clone();
    let mut max_param_error: f64 = 0.0;
    for i in 0..params.len() {
        let p0 = params[i];
        params[i] = p0 + h;
        probe.set_params_flat(&params)?;
        let up = probe.loss(x, y)?;
        params[i] = p0 - h;
        probe.set_params_flat(&params)?;
        let down = probe.loss(x, y)?;
        params[i] = p0;
        max_param_error = max_param_error.max(relative_error(analytic[i], (up - down) / (2.0 * h), floor));
    }
    let mut xp = x.clone();
    let mut max_input_error: f64 = 0.0;
    for i in 0..x.len() {
        let v = x.data()[i];
        xp.data_mut()[i] = v + h;
        let up = net.loss(&xp, y)?;
        xp.data_mut()[i] = v - h;
        let down = net.loss(&xp, y)?;
        xp.data_mut()[i] = v;
        max_input_error = max_input_error.max(relative_error(lg.input_grad.data()[i], (up - down) / (2.0 * h), floor));
    }
    Ok(GradCheck {
        max_param_error,
        max_input_error,
        checked: params.len() + x.len(),
    })
}
