mod commands;
mod config;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Arg, Command};

use commands::CliError;
use config::{RunConfig, SCHEMA, SHORTHANDS};

fn settings_help() -> String {
    let mut s = String::from("Settings (file `key = value`, or `--key value`):\n");
    for (k, v, d) in SCHEMA {
        s.push_str(&format!("  {k:<24} {d} [default: {v}]\n"));
    }
    s.push_str("\nShorthands:\n");
    for (f, k, v) in SHORTHANDS {
        s.push_str(&format!("  --{f:<22} {k} = {v}\n"));
    }
    s
}

fn cli() -> Command {
    let rest = || {
        Arg::new("args")
            .num_args(0..)
            .trailing_var_arg(true)
            .allow_hyphen_values(true)
            .value_name("ARGS")
    };
    let sub = |name: &'static str, about: &'static str| Command::new(name).about(about).arg(rest());
    Command::new("tgt")
        .about("Temporal graph transformer recommender")
        .after_help(settings_help())
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(sub(
            "ingest",
            "Parse the interaction log and print statistics",
        ))
        .subcommand(sub("train", "Train and write a checkpoint and loss log"))
        .subcommand(sub(
            "evaluate",
            "Rank held-out items with a trained checkpoint",
        ))
        .subcommand(sub(
            "recommend",
            "Print the top-N items for a user: recommend <user> <N>",
        ))
        .subcommand(sub("synth", "Write a synthetic interaction log"))
        .subcommand(sub(
            "gradcheck",
            "Compare gradients with finite differences on a toy dataset",
        ))
        .subcommand(sub(
            "ablate",
            "Train and evaluate a variant: ablate <flag...>",
        ))
}

fn run(argv: Vec<String>) -> Result<(), CliError> {
    let matches = match cli().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            return Err(CliError::Usage(e.render().to_string()));
        }
        Err(e) => {
            return Err(CliError::Usage(
                e.render()
                    .to_string()
                    .trim_start_matches("error: ")
                    .trim_end()
                    .to_string(),
            ))
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let args: Vec<String> = sub
        .get_many::<String>("args")
        .map(|v| v.cloned().collect())
        .unwrap_or_default();
    let (mut cfg, positional) = RunConfig::from_args(&args)?;
    let expect_positional = |n: usize| -> Result<(), CliError> {
        if positional.len() != n {
            return Err(CliError::Usage(format!(
                "`{name}` takes {n} positional argument(s), got {}",
                positional.len()
            )));
        }
        Ok(())
    };
    match name {
        "recommend" => expect_positional(2)?,
        "ablate" => {
            if positional.is_empty() {
                return Err(CliError::Usage(
                    "`ablate` needs at least one variant flag".into(),
                ));
            }
        }
        _ => expect_positional(0)?,
    }
    match name {
        "ingest" => commands::ingest(&cfg),
        "train" => commands::train(&cfg),
        "evaluate" => commands::evaluate_cmd(&cfg),
        "recommend" => commands::recommend_cmd(&cfg, &positional[0], &positional[1]),
        "synth" => commands::synth(&cfg),
        "gradcheck" => commands::gradcheck(&cfg),
        "ablate" => commands::ablate(&mut cfg, &positional),
        other => Err(CliError::Usage(format!("unknown command `{other}`"))),
    }
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tgt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
