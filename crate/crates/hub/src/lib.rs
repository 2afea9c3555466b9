//! Command-line layer for the saliency experiments: flat run
//! configuration, CSV reports, and composite experiment drivers.

pub mod commands;
pub mod config;
pub mod drivers;
pub mod error;
pub mod report;
pub mod setup;

pub use commands::{run, Command};
pub use config::RunConfig;
pub use error::{HubError, Result};

use std::path::PathBuf;

/// Configuration file and overrides extracted from command-line tokens.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Invocation {
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
}

/// Accepts `key=value`, `--key value`, `--key=value` and `--config FILE`
/// (`-c FILE`). Dashes in option names become underscores, so
/// `--iter-steps 3` sets `iter_steps`.
pub fn parse_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Invocation> {
    let mut inv = Invocation::default();
    let mut it = tokens.iter().map(AsRef::as_ref);
    while let Some(tok) = it.next() {
        if tok == "--config" || tok == "-c" {
            let path = it
                .next()
                .ok_or_else(|| HubError::Config(format!("{tok} needs a file argument")))?;
            inv.config = Some(PathBuf::from(path));
        } else if let Some(opt) = tok.strip_prefix("--") {
            let (key, value) = match opt.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| HubError::Config(format!("--{opt} needs a value")))?;
                    (opt.to_string(), v.to_string())
                }
            };
            if key == "config" {
                inv.config = Some(PathBuf::from(value));
            } else {
                inv.overrides.push(format!("{}={value}", key.replace('-', "_")));
            }
        } else if tok.contains('=') {
            inv.overrides.push(tok.to_string());
        } else {
            return Err(HubError::Config(format!("unexpected argument '{tok}'")));
        }
    }
    Ok(inv)
}

/// Resolves the configuration of an invocation: defaults, then the file,
/// then overrides in order.
pub fn resolve(inv: &Invocation) -> Result<RunConfig> {
    let mut cfg = match &inv.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&inv.overrides)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_forms() {
        let inv = parse_tokens(&["--protocol", "fast", "--rule=linf", "eps=0", "-c", "run.cfg", "--iter-steps", "3"])
            .unwrap();
        assert_eq!(inv.config, Some(PathBuf::from("run.cfg")));
        assert_eq!(inv.overrides, vec!["protocol=fast", "rule=linf", "eps=0", "iter_steps=3"]);
        assert!(parse_tokens(&["--eps"]).is_err());
        assert!(parse_tokens(&["stray"]).is_err());
    }

    #[test]
    fn overrides_win_over_defaults() {
        let inv = parse_tokens(&["--epochs", "2"]).unwrap();
        assert_eq!(resolve(&inv).unwrap().get::<usize>("epochs").unwrap(), 2);
        let bad = parse_tokens(&["--epoch", "2"]).unwrap();
        assert!(resolve(&bad).is_err());
    }
}
