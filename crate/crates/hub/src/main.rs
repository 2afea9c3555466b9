use std::process::ExitCode;

use clap::Parser;

use advsal_hub::commands::COMMANDS;
use advsal_hub::{parse_tokens, resolve, run, Command, HubError};

/// Norm-regularized adversarial training and saliency evaluation.
///
/// Settings come from built-in defaults, then `--config FILE` (flat
/// `key = value` lines), then `key=value` or `--key value` overrides.
#[derive(Debug, Parser)]
#[command(name = "advsal", version)]
struct Cli {
    /// gen-data | train | saliency | metrics | attack | diffroar |
    /// verify-duality | stability | sanity | harmonize-sweep | featvis
    #[arg(value_parser = command_name)]
    command: Command,

    /// `--config FILE` and configuration overrides.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    args: Vec<String>,
}

fn command_name(s: &str) -> Result<Command, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = COMMANDS.iter().map(|(_, n)| *n).collect();
        format!("unknown command '{s}' (expected one of {})", names.join(", "))
    })
}

fn execute(cli: &Cli) -> Result<(), HubError> {
    let cfg = resolve(&parse_tokens(&cli.args)?)?;
    let out = run(cli.command, &cfg)?;
    println!("{} done: {}", cli.command, out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("advsal: error: {}", e.to_string().replace(['\n', '\r'], " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
