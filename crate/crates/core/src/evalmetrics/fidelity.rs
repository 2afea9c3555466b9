use crate::error::{Error, Result};
use crate::gradnet::{Network, OutputMode};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeletionOrder {
    /// Most relevant first.
    MoRF,
    /// Least relevant first.
    LeRF,
}

/// Per-channel mean over a set of `[C, ...]` inputs (one channel for 1-D inputs).
pub fn channel_means(inputs: &[Tensor]) -> Result<Vec<f64>> {
    let first = inputs.first().ok_or_else(|| Error::invalid("no inputs"))?;
    let channels = if first.shape().len() == 3 { first.shape()[0] } else { 1 };
    let per = first.len() / channels;
    let mut sums = vec![0.0; channels];
    for x in inputs {
        x.expect_shape(first.shape())?;
        for (c, s) in sums.iter_mut().enumerate() {
            *s += x.data()[c * per..(c + 1) * per].iter().sum::<f64>();
        }
    }
    Ok(sums.into_iter().map(|s| s / (per * inputs.len()) as f64).collect())
}

fn score(net: &Network, x: &Tensor, class: usize, mode: OutputMode) -> Result<f64> {
    let (logits, probs) = net.forward(x)?;
    Ok(match mode {
        OutputMode::Probability => probs.data()[class],
        OutputMode::Logit => logits.data()[class],
    })
}

/// Area over the perturbation curve: pixels are removed one per step in the
/// map's relevance order (all channels set to the per-channel `baseline`),
/// and `AOPC = (1/(K+1)) sum_{k=0..K} [f(x^0) - f(x^k)]`.
#[allow(clippy::too_many_arguments)]
pub fn aopc(
    net: &Network,
    x: &Tensor,
    map: &[f64],
    steps: usize,
    baseline: &[f64],
    class: usize,
    mode: OutputMode,
    order: DeletionOrder,
) -> Result<f64> {
    net.check_class(class)?;
    let (channels, pixels) = match *x.shape() {
        [c, h, w] => (c, h * w),
        _ => (1, x.len()),
    };
    if map.len() != pixels {
        return Err(Error::Shape(format!("map has {} entries, input has {pixels} pixels", map.len())));
    }
    if baseline.len() != channels {
        return Err(Error::Shape(format!("{} baseline values for {channels} channels", baseline.len())));
    }
    if steps > pixels {
        return Err(Error::invalid(format!("{steps} deletion steps exceed {pixels} pixels")));
    }
    if steps == 0 {
        return Ok(0.0);
    }
    let mut idx: Vec<usize> = (0..pixels).collect();
    match order {
        DeletionOrder::MoRF => idx.sort_by(|&a, &b| map[b].abs().total_cmp(&map[a].abs()).then(a.cmp(&b))),
        DeletionOrder::LeRF => idx.sort_by(|&a, &b| map[a].abs().total_cmp(&map[b].abs()).then(a.cmp(&b))),
    }
    let f0 = score(net, x, class, mode)?;
    let mut cur = x.clone();
    let mut total = 0.0;
    for &p in idx.iter().take(steps) {
        for (c, b) in baseline.iter().enumerate() {
            cur.data_mut()[c * pixels + p] = *b;
        }
        total += f0 - score(net, &cur, class, mode)?;
    }
    Ok(total / (steps + 1) as f64)
}

pub fn aopc_morf(
    net: &Network,
    x: &Tensor,
    map: &[f64],
    steps: usize,
    baseline: &[f64],
    class: usize,
    mode: OutputMode,
) -> Result<f64> {
    aopc(net, x, map, steps, baseline, class, mode, DeletionOrder::MoRF)
}

pub fn aopc_lerf(
    net: &Network,
    x: &Tensor,
    map: &[f64],
    steps: usize,
    baseline: &[f64],
    class: usize,
    mode: OutputMode,
) -> Result<f64> {
    aopc(net, x, map, steps, baseline, class, mode, DeletionOrder::LeRF)
}
