//! Translation of a [`RunConfig`] into datasets, networks and training
//! configurations.

use std::time::Instant;

use advsal_core::dualnorm::{make_patch_groups, PerturbRule};
use advsal_core::formats::load_network;
use advsal_core::gradnet::{parse_arch, Network};
use advsal_core::synthgen::{
    attach_attention, gen_dataset, load_dataset, to_dataset, BackgroundKind, FocusRegion, SynthConfig, SynthSample,
};
use advsal_core::trainloop::{train, Dataset, Optimizer, Protocol, TrainConfig, TrainReport};

use crate::config::RunConfig;
use crate::error::{HubError, Result};

/// Train and test splits as raw samples (with masks) and training views.
#[derive(Debug, Clone)]
pub struct Data {
    pub train: Vec<SynthSample>,
    pub test: Vec<SynthSample>,
    pub train_set: Dataset,
    pub test_set: Dataset,
}

impl Data {
    pub fn from_samples(train: Vec<SynthSample>, test: Vec<SynthSample>) -> Result<Self> {
        if train.is_empty() {
            return Err(HubError::Input("training split is empty".into()));
        }
        let train_set = to_dataset(&train)?;
        let test_set = to_dataset(&test)?;
        Ok(Self {
            train,
            test,
            train_set,
            test_set,
        })
    }

    pub fn input_shape(&self) -> Vec<usize> {
        self.train[0].image.shape().to_vec()
    }

    /// The first `n` test samples (all of them if fewer).
    pub fn eval_samples(&self, n: usize) -> &[SynthSample] {
        &self.test[..n.min(self.test.len())]
    }
}

pub fn synth_config(cfg: &RunConfig) -> Result<SynthConfig> {
    let background: BackgroundKind = cfg
        .str("data.background")?
        .parse()
        .map_err(|e: advsal_core::Error| HubError::Config(e.to_string()))?;
    let sc = SynthConfig {
        class_count: cfg.get("data.classes")?,
        train_count: cfg.get("data.train")?,
        test_count: cfg.get("data.test")?,
        image_size: cfg.get("data.size")?,
        channels: cfg.get("data.channels")?,
        background,
        seed: cfg.get("data.seed")?,
        ..SynthConfig::default()
    };
    sc.validate().map_err(|e| HubError::Config(e.to_string()))?;
    Ok(sc)
}

fn focus(cfg: &RunConfig) -> Result<FocusRegion> {
    cfg.str("data.focus")?
        .parse()
        .map_err(|e: advsal_core::Error| HubError::Config(e.to_string()))
}

/// Generated samples in index order, with attention maps attached.
pub fn generate(cfg: &RunConfig) -> Result<Vec<SynthSample>> {
    let sc = synth_config(cfg)?;
    let mut samples = gen_dataset(&sc)?;
    attach_attention(&mut samples, focus(cfg)?, cfg.get("data.attention_sigma")?)?;
    Ok(samples)
}

/// Loads `data_dir` when set, otherwise generates the configured data.
pub fn load_data(cfg: &RunConfig) -> Result<Data> {
    match cfg.path("data_dir")? {
        Some(dir) => {
            if !dir.join("labels.csv").exists() {
                return Err(HubError::Input(format!("{} has no labels.csv", dir.display())));
            }
            let (mut samples, manifest) = load_dataset(&dir)?;
            if samples.iter().any(|s| s.attention.is_none()) {
                attach_attention(&mut samples, focus(cfg)?, cfg.get("data.attention_sigma")?)?;
            }
            let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
            Data::from_samples(pick(&manifest.train), pick(&manifest.test))
        }
        None => {
            let n_train: usize = cfg.get("data.train")?;
            let mut samples = generate(cfg)?;
            let test = samples.split_off(n_train);
            Data::from_samples(samples, test)
        }
    }
}

/// Perturbation rule selected by `rule`, sized for `input_shape`.
pub fn rule(cfg: &RunConfig, input_shape: &[usize]) -> Result<Option<PerturbRule>> {
    let r = match cfg.str("rule")? {
        "none" => None,
        "linf" => Some(PerturbRule::linf(cfg.get("eps")?)?),
        "elastic" => Some(PerturbRule::elastic_net(cfg.get("eps1")?, cfg.get("eps2")?)?),
        "group" => {
            let (c, h, w) = match *input_shape {
                [c, h, w] => (c, h, w),
                _ => return Err(HubError::Config("group rule needs [C, H, W] inputs".into())),
            };
            let groups = make_patch_groups(h, w, c, cfg.get("patch")?)?;
            Some(PerturbRule::group(cfg.get("eps")?, groups)?)
        }
        other => return Err(HubError::Config(format!("unknown rule '{other}'"))),
    };
    Ok(r)
}

pub fn optimizer(cfg: &RunConfig) -> Result<Optimizer> {
    match cfg.str("optimizer")? {
        "sgd" => Ok(Optimizer::Sgd),
        "adam" => Ok(Optimizer::adam()),
        other => Err(HubError::Config(format!("unknown optimizer '{other}'"))),
    }
}

pub fn protocol(name: &str) -> Result<Protocol> {
    name.parse()
        .map_err(|e: advsal_core::Error| HubError::Config(e.to_string()))
}

/// Training configuration for the configured protocol and `seed`.
pub fn train_config(cfg: &RunConfig, input_shape: &[usize], seed: u64) -> Result<TrainConfig> {
    let tc = TrainConfig {
        epochs: cfg.get("epochs")?,
        batch_size: cfg.get("batch_size")?,
        learning_rate: cfg.get("lr")?,
        seed,
        rule: rule(cfg, input_shape)?,
        protocol: protocol(cfg.str("protocol")?)?,
        iter_steps: cfg.get("iter_steps")?,
        iter_step_size: cfg.get("iter_step_size")?,
        noise_sigma: cfg.get("noise_sigma")?,
        harmonize_eps: cfg.get("harmonize_eps")?,
        optimizer: optimizer(cfg)?,
        warmup_epochs: cfg.get("warmup_epochs")?,
    };
    tc.validate().map_err(|e| HubError::Config(e.to_string()))?;
    Ok(tc)
}

pub fn init_network(cfg: &RunConfig, input_shape: &[usize], classes: usize, seed: u64) -> Result<Network> {
    let arch = parse_arch(cfg.str("arch")?).map_err(|e| HubError::Config(e.to_string()))?;
    Network::init(input_shape, &arch, classes, seed).map_err(|e| HubError::Config(e.to_string()))
}

/// Trains a fresh network with the configured protocol and `seed`.
pub fn train_model(cfg: &RunConfig, data: &Data, seed: u64, budget: &Budget) -> Result<(Network, TrainReport)> {
    let shape = data.input_shape();
    let tc = train_config(cfg, &shape, seed)?;
    let net = init_network(cfg, &shape, cfg.get("data.classes")?, seed)?;
    let test = (!data.test_set.is_empty()).then_some(&data.test_set);
    let out = train(net, &data.train_set, test, &tc, None)?;
    budget.check("training")?;
    Ok(out)
}

/// The network file named by `model`.
pub fn load_model(cfg: &RunConfig) -> Result<Network> {
    let path = cfg
        .path("model")?
        .ok_or_else(|| HubError::Input("this command needs model = <network file>".into()))?;
    if !path.exists() {
        return Err(HubError::Input(format!("model file {} does not exist", path.display())));
    }
    Ok(load_network(&path)?)
}

/// `model` when set, otherwise a freshly trained network.
pub fn model_or_train(cfg: &RunConfig, data: &Data, budget: &Budget) -> Result<Network> {
    match cfg.path("model")? {
        Some(_) => load_model(cfg),
        None => Ok(train_model(cfg, data, cfg.get("seed")?, budget)?.0),
    }
}

/// Wall-clock limit shared by the stages of one command.
#[derive(Debug, Clone)]
pub struct Budget {
    start: Instant,
    limit_secs: f64,
}

impl Budget {
    pub fn new(limit_secs: f64) -> Self {
        Self {
            start: Instant::now(),
            limit_secs,
        }
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let limit: f64 = cfg.get("budget_secs")?;
        if !(limit >= 0.0) {
            return Err(HubError::Config("budget_secs must be >= 0".into()));
        }
        Ok(Self::new(limit))
    }

    pub fn unlimited() -> Self {
        Self::new(0.0)
    }

    pub fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    /// Fails once the limit is exceeded; a zero limit never fails.
    pub fn check(&self, stage: &str) -> Result<()> {
        let e = self.elapsed();
        if self.limit_secs > 0.0 && e > self.limit_secs {
            return Err(HubError::Budget(format!(
                "{stage} finished after {e:.1}s, over the {}s limit",
                self.limit_secs
            )));
        }
        Ok(())
    }
}
