//! Flat `key = value` run configuration.
//!
//! Every key has a default; files and overrides may only set known keys.
//! Lists are comma-separated. [`RunConfig::echo`] renders the fully
//! resolved configuration in a form that parses back to the same values.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{HubError, Result};

/// `(key, default, description)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("out_dir", "out", "directory receiving every output file"),
    ("data_dir", "", "dataset written by gen-data; empty generates one in memory"),
    ("model", "", "network file for saliency, metrics, attack and featvis"),
    ("budget_secs", "0", "wall-clock limit per command in seconds; 0 disables"),
    ("data.classes", "4", "number of shape classes"),
    ("data.train", "2000", "training samples"),
    ("data.test", "500", "test samples"),
    ("data.size", "32", "image side length"),
    ("data.channels", "1", "image channels"),
    ("data.background", "mixed", "dark | blurred | noise | mixed"),
    ("data.seed", "0", "generator seed"),
    ("data.focus", "distinguishing", "attention focus region: distinguishing | localization"),
    ("data.attention_sigma", "2", "attention blur std in pixels"),
    ("arch", "conv:8:5:2-relu-conv:16:3:2-relu-flatten-dense:4", "layer list; the last dense width must equal data.classes"),
    ("epochs", "15", "training epochs"),
    ("batch_size", "32", "minibatch size"),
    ("lr", "0.003", "learning rate"),
    ("optimizer", "adam", "sgd | adam"),
    ("seed", "0", "initialization and training seed"),
    ("seeds", "0,1,2", "seeds for multi-seed commands"),
    ("protocol", "standard", "standard | fast | iterative | noise | harmonize"),
    ("rule", "none", "none | linf | group | elastic"),
    ("eps", "0.03", "ball radius for linf and group rules"),
    ("eps1", "0.03", "elastic-net L1 coefficient"),
    ("eps2", "0.03", "elastic-net squared-L2 coefficient"),
    ("patch", "4", "patch side for group rules"),
    ("iter_steps", "7", "ascent steps of the iterative protocol"),
    ("iter_step_size", "0.01", "ascent step size of the iterative protocol"),
    ("noise_sigma", "0", "noise protocol standard deviation"),
    ("harmonize_eps", "0", "harmonization perturbation scale"),
    ("warmup_epochs", "10", "epochs over which perturbation coefficients ramp up"),
    ("eval.count", "500", "test samples used by metric commands (capped at the test size)"),
    ("saliency.method", "simple", "simple | smooth | sparse"),
    ("saliency.count", "16", "maps exported by the saliency command"),
    ("saliency.smooth_n", "50", "SmoothGrad sample count"),
    ("saliency.smooth_sigma", "0.1", "SmoothGrad noise std"),
    ("saliency.keep", "0.1", "kept fraction for sparsified maps"),
    ("metrics.aopc_steps", "20", "pixels removed in AOPC curves"),
    ("metrics.topk", "0.1", "top-k fraction for overlap metrics"),
    ("attack.budget", "1", "L2 attack radius"),
    ("attack.steps", "20", "attack iterations"),
    ("attack.k", "0.4", "top-k fraction under attack"),
    ("attack.count", "50", "test samples attacked"),
    ("stability.swap", "0.1", "fraction of the training set swapped with test samples"),
    ("stability.protocols", "standard,fast", "protocols compared by the stability command"),
    ("stability.seeds", "0,1", "seeds of the two compared runs"),
    ("stability.topk", "0.1", "top-k fraction for the Dice score"),
    ("sweep.eps", "0,0.05,0.1,0.15,0.25", "harmonization scales; must include 0"),
    ("roar.k", "0.2,0.5,0.8", "removal fractions"),
    ("roar.epochs", "8", "epochs of each retrained model"),
    ("roar.maps", "trained", "trained | random: source of the ranking maps"),
    ("sanity.mode", "labels", "labels | cascade"),
    ("sanity.count", "50", "test samples used by the cascade check"),
    ("sanity.chance_margin", "0.1", "accuracy margin above chance still counted as chance"),
    ("sanity.norm_ratio", "0.5", "map norm ratio below which maps count as vanishing"),
    ("sanity.ssim", "0.5", "mean SSIM below which maps count as structureless"),
    ("duality.samples", "50", "random gradients per rule"),
    ("duality.steps", "401", "grid points per axis"),
    ("duality.dim", "2", "gradient dimension (at most 4)"),
    ("featvis.class", "0", "class maximized by feature visualization"),
    ("featvis.steps", "200", "ascent steps"),
    ("featvis.step_size", "0.05", "ascent step size"),
    ("featvis.decay", "0.01", "L2 decay of the visualized image"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

impl RunConfig {
    /// Parses `key = value` lines; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HubError::Config(format!("line {}: expected key = value, got '{line}'", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| HubError::Config(format!("line {}: {}", n + 1, strip(e))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HubError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !known(key) {
            return Err(HubError::Config(format!("unknown key '{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| HubError::Config(format!("override '{o}' is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Builder-style [`RunConfig::set`] for programmatic use.
    pub fn with(mut self, key: &str, value: impl ToString) -> Result<Self> {
        self.set(key, &value.to_string())?;
        Ok(self)
    }

    pub fn str(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| HubError::Config(format!("unknown key '{key}'")))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.str(key)?;
        v.parse()
            .map_err(|_| HubError::Config(format!("cannot parse {key} = '{v}'")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let v = self.str(key)?;
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| HubError::Config(format!("cannot parse element '{s}' of {key}")))
            })
            .collect()
    }

    /// Optional path; empty means unset.
    pub fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        let v = self.str(key)?;
        Ok((!v.is_empty()).then(|| PathBuf::from(v)))
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        self.path("out_dir")?
            .ok_or_else(|| HubError::Config("out_dir must not be empty".into()))
    }

    /// Resolved configuration, one sorted `key = value` line per key.
    pub fn echo(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn strip(e: HubError) -> String {
    match e {
        HubError::Config(m) => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_rejects_unknown_keys() {
        let cfg = RunConfig::parse("# run\nepochs = 3 # short\n\nseeds=1, 2\n").unwrap();
        assert_eq!(cfg.get::<usize>("epochs").unwrap(), 3);
        assert_eq!(cfg.list::<u64>("seeds").unwrap(), vec![1, 2]);
        let err = RunConfig::parse("epoch = 3").unwrap_err();
        assert!(err.to_string().contains("unknown key 'epoch'"), "{err}");
        assert!(RunConfig::parse("epochs").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(&["lr=0.5", "rule = linf"]).unwrap();
        assert_eq!(RunConfig::parse(&cfg.echo()).unwrap(), cfg);
    }

    #[test]
    fn bad_values_are_reported_with_key() {
        let cfg = RunConfig::default().with("epochs", "many").unwrap();
        let err = cfg.get::<usize>("epochs").unwrap_err();
        assert!(err.to_string().contains("epochs"));
    }
}
