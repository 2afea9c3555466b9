use rand::Rng;

use crate::error::{Error, Result};
use crate::gradnet::Network;
use crate::rng;
use crate::saliency::simple_grad;
use crate::tensor::{norm_l2, Tensor};

use super::overlap::{topk_intersection, topk_mask};
use super::similarity::ssim;

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// L2 radius of the input perturbation.
    pub budget: f64,
    pub steps: usize,
    pub seed: u64,
    /// Top-k fraction defining the salient set under attack.
    pub k_fraction: f64,
    /// Step length as a fraction of `budget`.
    pub step_fraction: f64,
    /// SPSA probe length (L2) as a fraction of `budget`.
    pub probe_fraction: f64,
    /// Rademacher probes averaged per gradient estimate.
    pub probes: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            budget: 1.0,
            steps: 20,
            seed: 0,
            k_fraction: 0.4,
            step_fraction: 0.25,
            probe_fraction: 0.25,
            probes: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub x_adv: Tensor,
    pub rho: Tensor,
    /// Top-k intersection between the original and attacked maps.
    pub intersection: f64,
    pub ssim: f64,
    pub drop_intersection: f64,
    pub drop_ssim: f64,
    pub accepted_steps: usize,
    /// `1 - intersection` initially and after every accepted step.
    pub objective: Vec<f64>,
}

struct Probe<'a> {
    net: &'a Network,
    x: &'a Tensor,
    class: usize,
    original: Vec<f64>,
    top: Vec<usize>,
    k: f64,
}

impl Probe<'_> {
    fn map(&self, rho: &[f64]) -> Result<(Vec<f64>, usize)> {
        let xa = offset(self.x, rho);
        let m = simple_grad(self.net, &xa, self.class)?;
        Ok((m.values.into_data(), self.net.predict(&xa)?))
    }

    /// Share of the attacked map's mass outside the original top-k set.
    fn surrogate(&self, map: &[f64]) -> f64 {
        let total: f64 = map.iter().map(|v| v.abs()).sum();
        if total == 0.0 {
            return 1.0;
        }
        1.0 - self.top.iter().map(|&i| map[i].abs()).sum::<f64>() / total
    }

    fn objective(&self, map: &[f64]) -> f64 {
        topk_intersection(&self.original, map, self.k).map_or(1.0, |v| 1.0 - v)
    }
}

fn offset(x: &Tensor, rho: &[f64]) -> Tensor {
    let data = x.data().iter().zip(rho).map(|(a, b)| a + b).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same length")
}

fn project_l2(v: &mut [f64], radius: f64) {
    let n = norm_l2(v);
    if n > radius {
        let s = radius / n;
        v.iter_mut().for_each(|e| *e *= s);
    }
}

/// Norm-bounded attack on the simple-gradient map of the predicted class.
///
/// Ascent directions come from simultaneous-perturbation (SPSA) estimates of
/// the gradient of a smooth surrogate, the share of saliency mass pushed out
/// of the original top-k set. A step is accepted only if the predicted class
/// is unchanged and it raises `1 - topk_intersection` (or keeps it and
/// raises the surrogate); iterates are projected onto the L2 ball.
pub fn interp_attack(net: &Network, x: &Tensor, cfg: &AttackConfig) -> Result<AttackResult> {
    if !cfg.budget.is_finite() || cfg.budget < 0.0 {
        return Err(Error::invalid("attack budget must be finite and >= 0"));
    }
    if cfg.probes == 0 {
        return Err(Error::invalid("attack needs at least one probe"));
    }
    let class = net.predict(x)?;
    let original = simple_grad(net, x, class)?;
    let probe = Probe {
        net,
        x,
        class,
        top: topk_mask(original.values.data(), cfg.k_fraction)?,
        original: original.values.data().to_vec(),
        k: cfg.k_fraction,
    };
    let d = x.len();
    let mut rho = vec![0.0; d];
    let mut cur_map = probe.original.clone();
    let mut cur_obj = probe.objective(&cur_map);
    let mut cur_sur = probe.surrogate(&cur_map);
    let mut objective = vec![cur_obj];
    let mut accepted = 0;
    if cfg.budget > 0.0 {
        let mut rng = rng::stream(cfg.seed, "spsa");
        let c = cfg.probe_fraction * cfg.budget / (d as f64).sqrt();
        for _ in 0..cfg.steps {
            let mut grad = vec![0.0; d];
            for _ in 0..cfg.probes {
                let delta: Vec<f64> = (0..d).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
                let plus: Vec<f64> = rho.iter().zip(&delta).map(|(r, e)| r + c * e).collect();
                let minus: Vec<f64> = rho.iter().zip(&delta).map(|(r, e)| r - c * e).collect();
                let diff = probe.surrogate(&probe.map(&plus)?.0) - probe.surrogate(&probe.map(&minus)?.0);
                for (g, e) in grad.iter_mut().zip(&delta) {
                    *g += diff / (2.0 * c) * e;
                }
            }
            let gn = norm_l2(&grad);
            if gn == 0.0 {
                continue;
            }
            let step = cfg.step_fraction * cfg.budget / gn;
            let mut cand: Vec<f64> = rho.iter().zip(&grad).map(|(r, g)| r + step * g).collect();
            project_l2(&mut cand, cfg.budget);
            let (map, pred) = probe.map(&cand)?;
            if pred != class {
                continue;
            }
            let (obj, sur) = (probe.objective(&map), probe.surrogate(&map));
            if obj > cur_obj || (obj == cur_obj && sur > cur_sur) {
                rho = cand;
                cur_map = map;
                cur_obj = obj;
                cur_sur = sur;
                accepted += 1;
                objective.push(cur_obj);
            }
        }
    }
    let shape = original.values.shape().to_vec();
    let attacked = Tensor::new(shape, cur_map)?;
    let intersection = 1.0 - cur_obj;
    let s = ssim(&original.values, &attacked)?;
    Ok(AttackResult {
        x_adv: offset(x, &rho),
        rho: Tensor::new(x.shape().to_vec(), rho)?,
        intersection,
        ssim: s,
        drop_intersection: 1.0 - intersection,
        drop_ssim: 1.0 - s,
        accepted_steps: accepted,
        objective,
    })
}
