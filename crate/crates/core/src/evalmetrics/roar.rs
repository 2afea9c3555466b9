use crate::error::{Error, Result};
use crate::gradnet::{LayerSpec, Network};
use crate::saliency::fraction_count;
use crate::tensor::Tensor;
use crate::trainloop::{evaluate, train, Dataset, TrainConfig};

use super::fidelity::channel_means;

/// How fresh models are trained on masked data.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrainSpec {
    pub input_shape: Vec<usize>,
    pub arch: Vec<LayerSpec>,
    pub classes: usize,
    pub cfg: TrainConfig,
    /// One retrain per seed; each seed drives both initialization and training.
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffRoarPoint {
    pub k: f64,
    /// Test accuracy in percent after removing the top-k pixels.
    pub acc_top_removed: f64,
    /// Test accuracy in percent after removing the bottom-k pixels.
    pub acc_bottom_removed: f64,
    /// `acc_bottom_removed - acc_top_removed`, averaged over seeds.
    pub diff: f64,
}

/// Replaces the `ceil(fraction * pixels)` highest-ranked (or lowest-ranked)
/// pixels of `x` by the per-channel `baseline`. Ties rank by lowest index.
pub fn mask_by_saliency(x: &Tensor, map: &[f64], fraction: f64, remove_top: bool, baseline: &[f64]) -> Result<Tensor> {
    let (channels, pixels) = match *x.shape() {
        [c, h, w] => (c, h * w),
        _ => (1, x.len()),
    };
    if map.len() != pixels || baseline.len() != channels {
        return Err(Error::Shape(format!(
            "map of {} / baseline of {} for input {:?}",
            map.len(),
            baseline.len(),
            x.shape()
        )));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("removal fraction {fraction} is outside [0, 1]")));
    }
    let mut idx: Vec<usize> = (0..pixels).collect();
    idx.sort_by(|&a, &b| map[b].abs().total_cmp(&map[a].abs()).then(a.cmp(&b)));
    if !remove_top {
        idx.reverse();
    }
    let mut out = x.clone();
    for &p in idx.iter().take(fraction_count(fraction, pixels)) {
        for (c, b) in baseline.iter().enumerate() {
            out.data_mut()[c * pixels + p] = *b;
        }
    }
    Ok(out)
}

fn masked(data: &Dataset, maps: &[Tensor], k: f64, top: bool, baseline: &[f64]) -> Result<Dataset> {
    let inputs = data
        .inputs
        .iter()
        .zip(maps)
        .map(|(x, m)| mask_by_saliency(x, m.data(), k, top, baseline))
        .collect::<Result<_>>()?;
    Dataset::new(inputs, data.labels.clone())
}

fn retrain_accuracy(train_set: &Dataset, test_set: &Dataset, spec: &RetrainSpec, seed: u64) -> Result<f64> {
    let net = Network::init(&spec.input_shape, &spec.arch, spec.classes, seed)?;
    let cfg = TrainConfig {
        seed,
        ..spec.cfg.clone()
    };
    let (net, _) = train(net, train_set, None, &cfg, None)?;
    Ok(100.0 * evaluate(&net, test_set)?.accuracy)
}

/// Remove-and-retrain difference per removal fraction `k`: accuracy of
/// models retrained with the bottom-k pixels removed minus accuracy with the
/// top-k removed. Positive values mean the map's top pixels carry more
/// predictive signal. Removed pixels take the training set's channel means.
pub fn diffroar(
    train_set: &Dataset,
    test_set: &Dataset,
    train_maps: &[Tensor],
    test_maps: &[Tensor],
    k_fractions: &[f64],
    spec: &RetrainSpec,
) -> Result<Vec<DiffRoarPoint>> {
    if train_maps.len() != train_set.len() || test_maps.len() != test_set.len() {
        return Err(Error::invalid("one saliency map per sample is required"));
    }
    if spec.seeds.is_empty() {
        return Err(Error::invalid("diffroar needs at least one retrain seed"));
    }
    let baseline = channel_means(&train_set.inputs)?;
    let mut out = Vec::with_capacity(k_fractions.len());
    for &k in k_fractions {
        let (mut top, mut bottom) = (0.0, 0.0);
        let top_train = masked(train_set, train_maps, k, true, &baseline)?;
        let top_test = masked(test_set, test_maps, k, true, &baseline)?;
        let bottom_train = masked(train_set, train_maps, k, false, &baseline)?;
        let bottom_test = masked(test_set, test_maps, k, false, &baseline)?;
        for &seed in &spec.seeds {
            top += retrain_accuracy(&top_train, &top_test, spec, seed)?;
            bottom += retrain_accuracy(&bottom_train, &bottom_test, spec, seed)?;
        }
        let n = spec.seeds.len() as f64;
        out.push(DiffRoarPoint {
            k,
            acc_top_removed: top / n,
            acc_bottom_removed: bottom / n,
            diff: (bottom - top) / n,
        });
    }
    Ok(out)
}
