//! Command implementations: run a driver and write its reports.
//!
//! Every command writes `config.resolved` (the resolved configuration) and
//! `timing.log` (wall-clock seconds) next to its CSV reports. CSV files
//! carry no timings, so reruns of an echoed config reproduce them byte for
//! byte.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use advsal_core::formats::{save_network, write_pgm, write_tensor};
use advsal_core::gradnet::Network;
use advsal_core::saliency::{simple_grad, smooth_grad, sparsify, FeatureVisConfig, SaliencyMap};
use advsal_core::synthgen::split_and_save;

use crate::config::RunConfig;
use crate::drivers::{self, mean};
use crate::error::{HubError, Result};
use crate::report::Table;
use crate::row;
use crate::setup::{self, Budget};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenData,
    Train,
    Saliency,
    Metrics,
    Attack,
    Diffroar,
    VerifyDuality,
    Stability,
    Sanity,
    HarmonizeSweep,
    Featvis,
}

pub const COMMANDS: &[(Command, &str)] = &[
    (Command::GenData, "gen-data"),
    (Command::Train, "train"),
    (Command::Saliency, "saliency"),
    (Command::Metrics, "metrics"),
    (Command::Attack, "attack"),
    (Command::Diffroar, "diffroar"),
    (Command::VerifyDuality, "verify-duality"),
    (Command::Stability, "stability"),
    (Command::Sanity, "sanity"),
    (Command::HarmonizeSweep, "harmonize-sweep"),
    (Command::Featvis, "featvis"),
];

impl Command {
    pub fn name(self) -> &'static str {
        COMMANDS.iter().find(|(c, _)| *c == self).expect("every command is listed").1
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = HubError;

    fn from_str(s: &str) -> Result<Self> {
        COMMANDS
            .iter()
            .find(|(_, n)| *n == s)
            .map(|(c, _)| *c)
            .ok_or_else(|| HubError::Config(format!("unknown command '{s}'")))
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| HubError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| HubError::io(path, e))
}

/// Runs `command` and returns the output directory.
pub fn run(command: Command, cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.out_dir()?;
    let budget = Budget::from_config(cfg)?;
    create_dir(&out)?;
    write_text(&out.join("config.resolved"), &cfg.echo())?;
    match command {
        Command::GenData => gen_data(cfg, &out)?,
        Command::Train => train_cmd(cfg, &out, &budget)?,
        Command::Saliency => saliency_cmd(cfg, &out)?,
        Command::Metrics => metrics_cmd(cfg, &out)?,
        Command::Attack => attack_cmd(cfg, &out)?,
        Command::Diffroar => diffroar_cmd(cfg, &out, &budget)?,
        Command::VerifyDuality => duality_cmd(cfg, &out)?,
        Command::Stability => stability_cmd(cfg, &out, &budget)?,
        Command::Sanity => sanity_cmd(cfg, &out, &budget)?,
        Command::HarmonizeSweep => sweep_cmd(cfg, &out, &budget)?,
        Command::Featvis => featvis_cmd(cfg, &out)?,
    }
    budget.check(command.name())?;
    write_text(
        &out.join("timing.log"),
        &format!("command={command}\nelapsed_secs={:.3}\n", budget.elapsed()),
    )?;
    Ok(out)
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let sc = setup::synth_config(cfg)?;
    let samples = setup::generate(cfg)?;
    let fraction = sc.train_count as f64 / samples.len() as f64;
    let manifest = split_and_save(&samples, fraction, out, Some(&sc))?;
    let mut t = Table::new(&["split", "label", "count"]);
    for (split, idx) in [("train", &manifest.train), ("test", &manifest.test)] {
        for c in 0..sc.class_count {
            t.push(row![split, c, idx.iter().filter(|&&i| samples[i].label == c).count()]);
        }
    }
    t.write(&out.join("dataset.csv"))
}

fn train_cmd(cfg: &RunConfig, out: &Path, budget: &Budget) -> Result<()> {
    let data = setup::load_data(cfg)?;
    let seed = cfg.get("seed")?;
    let (net, report) = setup::train_model(cfg, &data, seed, budget)?;
    save_network(&out.join("model.net"), &net)?;
    let mut epochs = Table::new(&["epoch", "clean_loss", "clean_accuracy", "train_loss"]);
    for e in 0..report.epoch_loss.len() {
        epochs.push(row![e, report.epoch_loss[e], report.epoch_accuracy[e], report.epoch_train_loss[e]]);
    }
    epochs.write(&out.join("train.csv"))?;
    let mut summary = Table::new(&["seed", "final_clean_loss", "final_train_accuracy", "test_accuracy"]);
    summary.push(row![
        seed,
        *report.epoch_loss.last().expect("epochs >= 1"),
        *report.epoch_accuracy.last().expect("epochs >= 1"),
        report.test_accuracy.unwrap_or(f64::NAN)
    ]);
    summary.write(&out.join("summary.csv"))
}

fn saliency_of(cfg: &RunConfig, net: &Network, x: &advsal_core::Tensor, c: usize, i: usize) -> Result<SaliencyMap> {
    let seed: u64 = cfg.get("seed")?;
    Ok(match cfg.str("saliency.method")? {
        "simple" => simple_grad(net, x, c)?,
        "smooth" => smooth_grad(
            net,
            x,
            c,
            cfg.get("saliency.smooth_n")?,
            cfg.get("saliency.smooth_sigma")?,
            advsal_core::rng::derive_seed(seed, i as u64),
        )?,
        "sparse" => sparsify(&simple_grad(net, x, c)?, cfg.get("saliency.keep")?)?,
        other => return Err(HubError::Config(format!("unknown saliency method '{other}'"))),
    })
}

fn saliency_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let net = setup::load_model(cfg)?;
    let data = setup::load_data(cfg)?;
    let dir = out.join("maps");
    create_dir(&dir)?;
    let mut t = Table::new(&["index", "label", "predicted", "gini"]);
    for (i, s) in data.eval_samples(cfg.get("saliency.count")?).iter().enumerate() {
        let m = saliency_of(cfg, &net, &s.image, s.label, i)?;
        write_tensor(&dir.join(format!("{i:04}.ten")), &m.values)?;
        write_pgm(&dir.join(format!("{i:04}.pgm")), &m.values)?;
        t.push(row![i, s.label, net.predict(&s.image)?, drivers::gini_or_zero(&m.values)?]);
    }
    t.write(&out.join("saliency.csv"))
}

fn metrics_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let net = setup::load_model(cfg)?;
    let data = setup::load_data(cfg)?;
    let eval = data.eval_samples(cfg.get("eval.count")?);
    let scores = drivers::map_scores(&net, eval)?;
    let baseline = drivers::dataset_baseline(&data)?;
    let fid = drivers::fidelity_scores(&net, eval, &baseline, cfg.get("metrics.aopc_steps")?, cfg.get("metrics.topk")?)?;
    let header = [
        "index",
        "gini",
        "binary_acc",
        "binary_recall",
        "binary_precision",
        "band_acc",
        "band_recall",
        "band_precision",
        "band_fpr",
        "aopc_morf",
        "aopc_lerf",
        "attention_overlap",
    ];
    let mut t = Table::new(&header);
    let mut cols = vec![Vec::new(); header.len() - 1];
    for (i, (s, f)) in scores.iter().zip(&fid).enumerate() {
        let vals = [
            s.gini,
            s.binary_acc,
            s.binary_recall,
            s.binary_precision,
            s.band_acc,
            s.band_recall,
            s.band_precision,
            s.band_fpr,
            f.aopc_morf,
            f.aopc_lerf,
            f.attention_overlap.unwrap_or(f64::NAN),
        ];
        let mut r = row![i];
        for (c, v) in cols.iter_mut().zip(vals) {
            c.push(v);
            r.push(v.into());
        }
        t.push(r);
    }
    let mut r = row!["mean"];
    r.extend(cols.iter().map(|c| mean(c).into()));
    t.push(r);
    t.write(&out.join("metrics.csv"))
}

fn attack_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let net = setup::load_model(cfg)?;
    let data = setup::load_data(cfg)?;
    let eval = data.eval_samples(cfg.get("attack.count")?);
    let inputs: Vec<_> = eval.iter().map(|s| s.image.clone()).collect();
    let rows = drivers::attack_rows(&net, &inputs, &drivers::attack_config(cfg)?)?;
    let dir = out.join("attack");
    create_dir(&dir)?;
    let mut t = Table::new(&["index", "intersection", "ssim", "drop_intersection", "drop_ssim", "accepted_steps"]);
    for r in &rows {
        write_tensor(&dir.join(format!("{:04}.ten", r.index)), &r.x_adv)?;
        t.push(row![r.index, r.intersection, r.ssim, r.drop_intersection, r.drop_ssim, r.accepted_steps]);
    }
    let m = |f: fn(&drivers::AttackRow) -> f64| mean(&rows.iter().map(f).collect::<Vec<_>>());
    t.push(row![
        "mean",
        m(|r| r.intersection),
        m(|r| r.ssim),
        m(|r| r.drop_intersection),
        m(|r| r.drop_ssim),
        m(|r| r.accepted_steps as f64)
    ]);
    t.write(&out.join("attack.csv"))
}

fn diffroar_cmd(cfg: &RunConfig, out: &Path, budget: &Budget) -> Result<()> {
    let data = setup::load_data(cfg)?;
    let seed = cfg.get("seed")?;
    let net = match cfg.str("roar.maps")? {
        "trained" => setup::load_model(cfg)?,
        "random" => setup::init_network(cfg, &data.input_shape(), cfg.get("data.classes")?, seed)?,
        other => return Err(HubError::Config(format!("roar.maps must be trained or random, got '{other}'"))),
    };
    let points = drivers::diffroar_run(cfg, &data, &net, &cfg.list::<u64>("seeds")?)?;
    budget.check("retraining")?;
    let mut t = Table::new(&["k", "acc_top_removed", "acc_bottom_removed", "diffroar"]);
    for p in &points {
        t.push(row![p.k, p.acc_top_removed, p.acc_bottom_removed, p.diff]);
    }
    let m = |f: fn(&advsal_core::evalmetrics::DiffRoarPoint) -> f64| mean(&points.iter().map(f).collect::<Vec<_>>());
    t.push(row!["mean", m(|p| p.acc_top_removed), m(|p| p.acc_bottom_removed), m(|p| p.diff)]);
    t.write(&out.join("diffroar.csv"))
}

fn duality_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let rows = drivers::verify_duality(
        cfg.get("duality.samples")?,
        cfg.get("duality.steps")?,
        cfg.get("duality.dim")?,
        cfg.get("seed")?,
    )?;
    let mut t = Table::new(&[
        "rule",
        "samples",
        "closedForm",
        "bruteForce",
        "absGap",
        "certificateGap",
        "maximizerGap",
    ]);
    for r in rows {
        t.push(row![r.rule, r.samples, r.closed_form, r.brute_force, r.abs_gap, r.certificate_gap, r.maximizer_gap]);
    }
    t.write(&out.join("duality.csv"))
}

fn stability_cmd(cfg: &RunConfig, out: &Path, budget: &Budget) -> Result<()> {
    let data = setup::load_data(cfg)?;
    let rows = drivers::stability(cfg, &data, budget)?;
    let mut t = Table::new(&["protocol", "image", "ssim", "dice"]);
    for r in rows {
        let image = r.image.map_or_else(|| "mean".to_string(), |i| i.to_string());
        t.push(row![r.protocol, image, r.ssim, r.dice]);
    }
    t.write(&out.join("stability.csv"))
}

fn sanity_cmd(cfg: &RunConfig, out: &Path, budget: &Budget) -> Result<()> {
    let data = setup::load_data(cfg)?;
    let reference = setup::model_or_train(cfg, &data, budget)?;
    match cfg.str("sanity.mode")? {
        "labels" => {
            let r = drivers::label_sanity_run(cfg, &data, &reference, budget)?;
            let mut t = Table::new(&[
                "accuracy",
                "chance",
                "at_chance",
                "norm_ratio",
                "mean_ssim",
                "constant_prediction_rate",
                "degenerate",
            ]);
            t.push(row![
                r.accuracy,
                r.chance,
                r.at_chance,
                r.norm_ratio,
                r.mean_ssim,
                r.constant_prediction_rate,
                r.degenerate
            ]);
            t.write(&out.join("sanity_labels.csv"))
        }
        "cascade" => {
            let eval = data.eval_samples(cfg.get("sanity.count")?);
            let rows = drivers::cascade_run(&reference, eval, &cfg.list::<u64>("seeds")?)?;
            let mut t = Table::new(&["seed", "randomized", "layer", "ssim"]);
            for r in rows {
                let layer = r.layer.map_or_else(|| "none".to_string(), |l| l.to_string());
                t.push(row![r.seed, r.randomized, layer, r.ssim]);
            }
            t.write(&out.join("sanity_cascade.csv"))
        }
        other => Err(HubError::Config(format!("sanity.mode must be labels or cascade, got '{other}'"))),
    }
}

fn sweep_cmd(cfg: &RunConfig, out: &Path, budget: &Budget) -> Result<()> {
    let data = setup::load_data(cfg)?;
    let rows = drivers::harmonize_sweep(cfg, &data, budget)?;
    let mut t = Table::new(&["eps", "top5_overlap", "top10_overlap", "test_accuracy"]);
    for r in &rows {
        t.push(row![r.eps, r.top5, r.top10, r.accuracy]);
    }
    t.write(&out.join("sweep.csv"))?;
    let s = drivers::sweep_summary(&rows);
    let mut st = Table::new(&["pairs", "nondecreasing_pairs", "monotone", "top5_gain", "accuracy_drop"]);
    st.push(row![s.pairs, s.nondecreasing, s.nondecreasing == s.pairs, s.gain, s.accuracy_drop]);
    st.write(&out.join("sweep_summary.csv"))
}

fn featvis_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let net = setup::load_model(cfg)?;
    let fc = FeatureVisConfig {
        steps: cfg.get("featvis.steps")?,
        step_size: cfg.get("featvis.step_size")?,
        decay: cfg.get("featvis.decay")?,
        seed: cfg.get("seed")?,
        ..FeatureVisConfig::default()
    };
    let v = advsal_core::saliency::feature_vis(&net, cfg.get("featvis.class")?, &fc)?;
    write_tensor(&out.join("featvis.ten"), &v.image)?;
    write_pgm(&out.join("featvis.pgm"), &advsal_core::saliency::reduce_channels(&v.image))?;
    let mut t = Table::new(&["step", "objective"]);
    for (i, o) in v.objective.iter().enumerate() {
        t.push(row![i, *o]);
    }
    t.write(&out.join("featvis.csv"))
}
