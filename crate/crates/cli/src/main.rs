mod args;
mod commands;

use std::ffi::OsString;
use std::path::Path;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, FromArgMatches};
use serde_json::{json, Value};

use args::{Cli, Command};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] relkin::Error),
    /// The command wrote some outputs before a query failed.
    #[error("{source}")]
    Partial { source: relkin::Error, outputs: Vec<String> },
}

/// 2 for numerical non-convergence, 1 for everything else.
pub fn core_exit_code(e: &relkin::Error) -> u8 {
    use relkin::Error::*;
    match e {
        Diverged { .. } | ShootingFailed { .. } | NonConvergence(_) | EmptyEnsemble => 2,
        _ => 1,
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) | CliError::Partial { source: e, .. } => core_exit_code(e),
        }
    }
}

fn command() -> clap::Command {
    Cli::command().mut_subcommands(|s| s.args_override_self(true))
}

/// Flags encoded by a flat JSON config, or by the `parameters` of a manifest.
fn config_flags(path: &Path, subcommand: &str) -> Result<Vec<OsString>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let root: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
    let map = match root.get("parameters") {
        Some(params) => {
            if let Some(sub) = root.get("subcommand").and_then(Value::as_str) {
                if sub != subcommand {
                    return Err(CliError::Usage(format!(
                        "manifest {} was written by `{sub}`, not `{subcommand}`",
                        path.display()
                    )));
                }
            }
            params
        }
        None => &root,
    };
    let map = map
        .as_object()
        .ok_or_else(|| CliError::Usage(format!("config {} must be a JSON object", path.display())))?;
    let scalar = |v: &Value| -> Result<String, CliError> {
        match v {
            Value::Number(n) => Ok(n.to_string()),
            Value::String(s) => Ok(s.clone()),
            other => Err(CliError::Usage(format!("unsupported config value {other}"))),
        }
    };
    let mut flags = Vec::new();
    for (key, v) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" {
            continue;
        }
        match v {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => flags.push(flag.into()),
            Value::Array(items) => {
                let joined = items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?.join(",");
                flags.push(flag.into());
                flags.push(joined.into());
            }
            v => {
                flags.push(flag.into());
                flags.push(scalar(v)?.into());
            }
        }
    }
    Ok(flags)
}

/// Parses `argv`, splicing config-file flags in ahead of the user's so that
/// explicit flags win.
fn parse(argv: Vec<OsString>) -> Result<Cli, clap::Error> {
    let matches = command().try_get_matches_from(&argv)?;
    let Some((name, sub)) = matches.subcommand() else {
        return Cli::from_arg_matches(&matches);
    };
    let Some(path) = sub.get_one::<std::path::PathBuf>("config") else {
        return Cli::from_arg_matches(&matches);
    };
    let flags = config_flags(path, name).map_err(|e| command().error(ErrorKind::ValueValidation, e))?;
    let at = argv.iter().skip(1).position(|a| a == name).map_or(argv.len(), |i| i + 2);
    let mut merged = argv[..at].to_vec();
    merged.extend(flags);
    merged.extend_from_slice(&argv[at..]);
    Cli::from_arg_matches(&command().try_get_matches_from(merged)?)
}

fn run(cmd: &Command) -> Result<Vec<String>, CliError> {
    let out = cmd.common().out.clone();
    std::fs::create_dir_all(&out).map_err(relkin::Error::from)?;
    if let Some(n) = cmd.common().threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start the worker pool: {e}")))?;
    }
    match cmd {
        Command::Geometry(a) => commands::geometry(a, &out),
        Command::Hormander(a) => commands::hormander(a, &out),
        Command::Simulate(a) => commands::simulate_cmd(a, &out),
        Command::SolvePde(a) => commands::solve_pde(a, &out),
        Command::Green(a) => commands::green(a, &out),
        Command::ValueFunction(a) => commands::value(a, &out),
        Command::Chain(a) => commands::chain(a, &out),
        Command::EstimateCh(a) => commands::estimate_ch(a, &out),
        Command::VerifyBound(a) => commands::verify_bound(a, &out),
    }
}

fn write_manifest(cmd: &Command, status: &str, outputs: &[String]) -> std::io::Result<()> {
    let manifest = json!({
        "tool": "relkin",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": cmd.name(),
        "seed": cmd.seed(),
        "status": status,
        "parameters": cmd.parameters().map_err(std::io::Error::other)?,
        "outputs": outputs,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
    std::fs::write(cmd.common().out.join("manifest.json"), text + "\n")
}

fn main() -> ExitCode {
    let cli = match parse(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let cmd = cli.command;
    let result = run(&cmd);
    let (status, outputs) = match &result {
        Ok(o) => ("ok", o.clone()),
        Err(CliError::Partial { outputs, .. }) => ("failed", outputs.clone()),
        Err(_) => ("failed", Vec::new()),
    };
    if cmd.common().out.is_dir() {
        if let Err(e) = write_manifest(&cmd, status, &outputs) {
            eprintln!("error: cannot write manifest: {e}");
            return ExitCode::from(1);
        }
    }
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
