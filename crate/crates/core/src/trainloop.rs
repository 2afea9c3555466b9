//! Training procedures: standard, one-step and iterative norm-regularized
//! adversarial training, a Gaussian-noise baseline, and attention
//! harmonization.
//!
//! Each minibatch is processed sample by sample (in parallel), and the
//! per-sample parameter gradients are summed in sample order, so a run is
//! bitwise reproducible for a fixed seed regardless of thread count.

use std::time::Instant;

use rayon::prelude::*;

use crate::dualnorm::{PerturbRule, WeightVariant};
use crate::error::{Error, Result};
use crate::gradnet::{Network, ParamGrads};
use crate::rng::{self, derive_seed, normal, rng_from_seed};
use crate::tensor::{norm_l2, Tensor};

/// Largest magnitude any coordinate of an iterated penalty-rule perturbation may reach.
pub const PERTURBATION_CAP: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Standard,
    /// One analytic perturbation step per sample.
    Fast,
    /// Analytic initialization followed by `iter_steps` ascent steps.
    Iterative,
    /// Gaussian input noise.
    Noise,
    /// Attention-weighted perturbation; requires attention maps.
    Harmonize,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Standard => "standard",
            Protocol::Fast => "fast",
            Protocol::Iterative => "iterative",
            Protocol::Noise => "noise",
            Protocol::Harmonize => "harmonize",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "standard" => Protocol::Standard,
            "fast" => Protocol::Fast,
            "iterative" => Protocol::Iterative,
            "noise" => Protocol::Noise,
            "harmonize" => Protocol::Harmonize,
            _ => return Err(Error::invalid(format!("unknown protocol '{s}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub rule: Option<PerturbRule>,
    pub protocol: Protocol,
    pub iter_steps: usize,
    pub iter_step_size: f64,
    pub noise_sigma: f64,
    /// Perturbation scale for the harmonization protocol.
    pub harmonize_eps: f64,
    pub optimizer: Optimizer,
    /// Epochs over which perturbation coefficients ramp linearly up to
    /// their configured values; 0 disables the ramp.
    pub warmup_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.05,
            seed: 0,
            rule: None,
            protocol: Protocol::Standard,
            iter_steps: 7,
            iter_step_size: 0.01,
            noise_sigma: 0.0,
            harmonize_eps: 0.0,
            optimizer: Optimizer::Sgd,
            warmup_epochs: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::invalid("learning rate must be finite and >= 0"));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::invalid("noise sigma must be finite and >= 0"));
        }
        if !self.harmonize_eps.is_finite() || self.harmonize_eps < 0.0 {
            return Err(Error::invalid("harmonization eps must be finite and >= 0"));
        }
        if !self.iter_step_size.is_finite() || self.iter_step_size < 0.0 {
            return Err(Error::invalid("iteration step size must be finite and >= 0"));
        }
        match (self.protocol, &self.rule) {
            (Protocol::Fast | Protocol::Iterative, None) => Err(Error::invalid(format!(
                "protocol {} requires a perturbation rule",
                self.protocol.name()
            ))),
            (
                Protocol::Iterative,
                Some(PerturbRule::WeightedL2 {
                    variant: WeightVariant::Empirical,
                    ..
                }),
            ) => Err(Error::Unsupported(
                "iterative ascent needs a convex penalty; signed harmonization weights have none".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Training samples with optional per-sample attention maps of input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub attention: Option<Vec<Tensor>>,
}

impl Dataset {
    pub fn new(inputs: Vec<Tensor>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Self {
            inputs,
            labels,
            attention: None,
        })
    }

    pub fn with_attention(mut self, attention: Vec<Tensor>) -> Result<Self> {
        if attention.len() != self.inputs.len() {
            return Err(Error::invalid("one attention map per sample is required"));
        }
        for (a, x) in attention.iter().zip(&self.inputs) {
            if a.len() != x.len() {
                return Err(Error::Shape(format!(
                    "attention map has {} entries, input has {}",
                    a.len(),
                    x.len()
                )));
            }
        }
        self.attention = Some(attention);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            attention: self
                .attention
                .as_ref()
                .map(|a| indices.iter().map(|&i| a[i].clone()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub protocol: Protocol,
    /// Mean clean cross-entropy per epoch, measured before each step.
    pub epoch_loss: Vec<f64>,
    /// Clean training accuracy per epoch, measured before each step.
    pub epoch_accuracy: Vec<f64>,
    /// Mean loss at the inputs actually used for the parameter step.
    pub epoch_train_loss: Vec<f64>,
    pub test_accuracy: Option<f64>,
    pub wall_clock_secs: f64,
    pub seed: u64,
    /// Coordinates clipped by [`PERTURBATION_CAP`] during iterative ascent.
    pub cap_hits: u64,
}

/// Perturbation trajectory of one sample in one step: `deltas[0]` is the
/// analytic (or noise) perturbation, later entries are ascent iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbRecord {
    pub epoch: usize,
    pub batch: usize,
    pub sample: usize,
    pub deltas: Vec<Vec<f64>>,
    pub clean_loss: f64,
    pub train_loss: f64,
}

pub type Observer<'a> = &'a mut dyn FnMut(&PerturbRecord);

struct SampleOutcome {
    grads: ParamGrads,
    clean_loss: f64,
    clean_correct: bool,
    train_loss: f64,
    cap_hits: u64,
    deltas: Vec<Vec<f64>>,
}

/// Result of [`iterate_perturbation`].
#[derive(Debug, Clone, PartialEq)]
pub struct AscentTrace {
    /// Initial analytic perturbation followed by each iterate.
    pub deltas: Vec<Vec<f64>>,
    pub cap_hits: u64,
}

/// Inner maximization of `L(x + delta) - h(delta)`.
///
/// Starts from the analytic solution for `clean_grad`. Ball rules take
/// sign (L-inf) or unit-L2 (group) steps on the loss and project; penalty
/// rules take plain gradient steps on the penalized objective, with every
/// coordinate capped at [`PERTURBATION_CAP`].
pub fn iterate_perturbation(
    rule: &PerturbRule,
    clean_grad: &[f64],
    steps: usize,
    step_size: f64,
    mut loss_grad_at: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<AscentTrace> {
    let mut delta = rule.argmax_perturb(clean_grad)?;
    let mut deltas = vec![delta.clone()];
    let mut cap_hits = 0;
    for _ in 0..steps {
        let g = loss_grad_at(&delta)?;
        match rule {
            PerturbRule::LinfBall { .. } => {
                for (d, gi) in delta.iter_mut().zip(&g) {
                    *d += step_size * sign(*gi);
                }
                delta = rule.project(&delta)?;
            }
            PerturbRule::GroupBall { .. } => {
                let n = norm_l2(&g);
                if n > 0.0 {
                    for (d, gi) in delta.iter_mut().zip(&g) {
                        *d += step_size * gi / n;
                    }
                }
                delta = rule.project(&delta)?;
            }
            PerturbRule::ElasticNet { .. } | PerturbRule::WeightedL2 { .. } => {
                let hg = rule.penalty_grad(&delta)?;
                for ((d, gi), hi) in delta.iter_mut().zip(&g).zip(&hg) {
                    *d += step_size * (gi - hi);
                    if d.abs() > PERTURBATION_CAP {
                        *d = d.clamp(-PERTURBATION_CAP, PERTURBATION_CAP);
                        cap_hits += 1;
                    }
                }
            }
        }
        deltas.push(delta.clone());
    }
    Ok(AscentTrace { deltas, cap_hits })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn offset(x: &Tensor, delta: &[f64]) -> Tensor {
    let data = x.data().iter().zip(delta).map(|(a, b)| a + b).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same length as input")
}

fn sample_step(
    net: &Network,
    data: &Dataset,
    cfg: &TrainConfig,
    idx: usize,
    noise_seed: u64,
    record: bool,
) -> Result<SampleOutcome> {
    let x = &data.inputs[idx];
    let y = data.labels[idx];
    let mut cap_hits = 0;
    let (train_x, clean_loss, clean_correct, deltas) = match cfg.protocol {
        Protocol::Standard => (None, None, None, Vec::new()),
        Protocol::Noise => {
            let mut rng = rng_from_seed(noise_seed);
            let delta: Vec<f64> = (0..x.len()).map(|_| cfg.noise_sigma * normal(&mut rng)).collect();
            let (logits, _) = net.forward(x)?;
            let loss = crate::gradnet::cross_entropy(logits.data(), y);
            let correct = logits.argmax() == y;
            (Some(offset(x, &delta)), Some(loss), Some(correct), vec![delta])
        }
        Protocol::Fast | Protocol::Iterative | Protocol::Harmonize => {
            let (loss, probs, g) = net.loss_input_grad(x, y)?;
            let correct = probs.argmax() == y;
            let deltas = match cfg.protocol {
                Protocol::Harmonize => {
                    let attention = data
                        .attention
                        .as_ref()
                        .ok_or_else(|| Error::invalid(format!("sample {idx} has no attention map")))?;
                    let rule = PerturbRule::harmonize_empirical(cfg.harmonize_eps, attention[idx].data())?;
                    vec![rule.argmax_perturb(g.data())?]
                }
                Protocol::Fast => vec![cfg.rule.as_ref().expect("validated").argmax_perturb(g.data())?],
                _ => {
                    let trace = iterate_perturbation(
                        cfg.rule.as_ref().expect("validated"),
                        g.data(),
                        cfg.iter_steps,
                        cfg.iter_step_size,
                        |delta| Ok(net.loss_input_grad(&offset(x, delta), y)?.2.into_data()),
                    )?;
                    cap_hits = trace.cap_hits;
                    trace.deltas
                }
            };
            let last = deltas.last().expect("at least one perturbation");
            (Some(offset(x, last)), Some(loss), Some(correct), deltas)
        }
    };
    let (train_loss, probs, grads) = net.param_gradients(train_x.as_ref().unwrap_or(x), y)?;
    Ok(SampleOutcome {
        grads,
        clean_loss: clean_loss.unwrap_or(train_loss),
        clean_correct: clean_correct.unwrap_or(probs.argmax() == y),
        train_loss,
        cap_hits,
        deltas: if record { deltas } else { Vec::new() },
    })
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

fn apply_update(net: &mut Network, grads: &ParamGrads, cfg: &TrainConfig, adam: &mut Option<AdamState>) {
    match cfg.optimizer {
        Optimizer::Sgd => net.apply_sgd(grads, cfg.learning_rate),
        Optimizer::Adam { beta1, beta2, eps } => {
            let g = grads.flat();
            let state = adam.get_or_insert_with(|| AdamState {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
                t: 0,
            });
            state.t += 1;
            let c1 = 1.0 - beta1.powi(state.t);
            let c2 = 1.0 - beta2.powi(state.t);
            let mut params = net.params_flat();
            for i in 0..g.len() {
                state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g[i];
                state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g[i] * g[i];
                params[i] -= cfg.learning_rate * (state.m[i] / c1) / ((state.v[i] / c2).sqrt() + eps);
            }
            net.set_params_flat(&params).expect("parameter count is fixed");
        }
    }
}

/// Epoch-local config with perturbation coefficients scaled by
/// `(epoch + 1) / (warmup_epochs + 1)`, or `None` outside the ramp.
fn ramp(cfg: &TrainConfig, epoch: usize) -> Option<TrainConfig> {
    if epoch >= cfg.warmup_epochs {
        return None;
    }
    let f = (epoch + 1) as f64 / (cfg.warmup_epochs + 1) as f64;
    let mut c = cfg.clone();
    c.rule = cfg.rule.as_ref().map(|r| r.scaled(f));
    c.harmonize_eps *= f;
    c.noise_sigma *= f;
    Some(c)
}

/// Runs the configured protocol. `test`, when given, fills
/// [`TrainReport::test_accuracy`]; `observer` receives every sample's
/// perturbation trajectory in sample order.
pub fn train(
    mut net: Network,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    mut observer: Option<Observer<'_>>,
) -> Result<(Network, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if cfg.protocol == Protocol::Harmonize && data.attention.is_none() {
        return Err(Error::invalid("harmonization requires attention maps"));
    }
    for &y in &data.labels {
        if y >= net.class_count() {
            return Err(Error::ClassOutOfRange {
                index: y,
                classes: net.class_count(),
            });
        }
    }
    let start = Instant::now();
    let record = observer.is_some();
    let mut report = TrainReport {
        protocol: cfg.protocol,
        epoch_loss: Vec::with_capacity(cfg.epochs),
        epoch_accuracy: Vec::with_capacity(cfg.epochs),
        epoch_train_loss: Vec::with_capacity(cfg.epochs),
        test_accuracy: None,
        wall_clock_secs: 0.0,
        seed: cfg.seed,
        cap_hits: 0,
    };
    let mut adam = None;
    let noise_master = derive_seed(cfg.seed, rng::stream_id("noise"));
    let base_cfg = cfg;
    for epoch in 0..base_cfg.epochs {
        let ramped = ramp(base_cfg, epoch);
        let cfg = ramped.as_ref().unwrap_or(base_cfg);
        let mut shuffle = rng::rng_from_seed(derive_seed(
            derive_seed(cfg.seed, rng::stream_id("shuffle")),
            epoch as u64,
        ));
        let order = rng::permutation(&mut shuffle, data.len());
        let epoch_noise = derive_seed(noise_master, epoch as u64);
        let (mut loss_sum, mut train_sum, mut correct) = (0.0, 0.0, 0usize);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let outcomes: Vec<SampleOutcome> = chunk
                .par_iter()
                .map(|&i| sample_step(&net, data, cfg, i, derive_seed(epoch_noise, i as u64), record))
                .collect::<Result<_>>()?;
            let mut grads = ParamGrads::zeros_like(&net);
            for (o, &i) in outcomes.iter().zip(chunk) {
                if !o.train_loss.is_finite() || !o.clean_loss.is_finite() {
                    return Err(Error::Diverged { epoch, batch });
                }
                grads.add_scaled(&o.grads, 1.0 / chunk.len() as f64);
                loss_sum += o.clean_loss;
                train_sum += o.train_loss;
                correct += usize::from(o.clean_correct);
                report.cap_hits += o.cap_hits;
                if let Some(obs) = observer.as_mut() {
                    obs(&PerturbRecord {
                        epoch,
                        batch,
                        sample: i,
                        deltas: o.deltas.clone(),
                        clean_loss: o.clean_loss,
                        train_loss: o.train_loss,
                    });
                }
            }
            apply_update(&mut net, &grads, cfg, &mut adam);
            if net.params_flat().iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged { epoch, batch });
            }
        }
        let n = data.len() as f64;
        report.epoch_loss.push(loss_sum / n);
        report.epoch_accuracy.push(correct as f64 / n);
        report.epoch_train_loss.push(train_sum / n);
    }
    if let Some(test) = test {
        report.test_accuracy = Some(evaluate(&net, test)?.accuracy);
    }
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((net, report))
}

pub fn train_standard(net: Network, data: &Dataset, cfg: &TrainConfig) -> Result<(Network, TrainReport)> {
    let cfg = TrainConfig {
        protocol: Protocol::Standard,
        ..cfg.clone()
    };
    train(net, data, None, &cfg, None)
}

pub fn train_fast_at(net: Network, data: &Dataset, cfg: &TrainConfig) -> Result<(Network, TrainReport)> {
    let cfg = TrainConfig {
        protocol: Protocol::Fast,
        ..cfg.clone()
    };
    train(net, data, None, &cfg, None)
}

pub fn train_iterative_at(net: Network, data: &Dataset, cfg: &TrainConfig) -> Result<(Network, TrainReport)> {
    let cfg = TrainConfig {
        protocol: Protocol::Iterative,
        ..cfg.clone()
    };
    train(net, data, None, &cfg, None)
}

pub fn train_noise(net: Network, data: &Dataset, cfg: &TrainConfig) -> Result<(Network, TrainReport)> {
    let cfg = TrainConfig {
        protocol: Protocol::Noise,
        ..cfg.clone()
    };
    train(net, data, None, &cfg, None)
}

pub fn train_harmonize(
    net: Network,
    data: &Dataset,
    cfg: &TrainConfig,
    eps: f64,
) -> Result<(Network, TrainReport)> {
    let cfg = TrainConfig {
        protocol: Protocol::Harmonize,
        harmonize_eps: eps,
        ..cfg.clone()
    };
    train(net, data, None, &cfg, None)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Mean cross-entropy and accuracy of `net` on `data`.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let per: Vec<(f64, bool)> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let (logits, _) = net.forward(&data.inputs[i])?;
            net.check_class(data.labels[i])?;
            Ok((
                crate::gradnet::cross_entropy(logits.data(), data.labels[i]),
                logits.argmax() == data.labels[i],
            ))
        })
        .collect::<Result<_>>()?;
    let n = data.len() as f64;
    Ok(Evaluation {
        loss: per.iter().map(|p| p.0).sum::<f64>() / n,
        accuracy: per.iter().filter(|p| p.1).count() as f64 / n,
    })
}

/// Predictions of `net` for every input.
pub fn predict_all(net: &Network, inputs: &[Tensor]) -> Result<Vec<usize>> {
    inputs.par_iter().map(|x| net.predict(x)).collect()
}
