use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scm_cli::{execute, Command, Invocation};

#[derive(Parser)]
#[command(name = "sim", version, about = "Online learning simulator for two-layer committee machines")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulation and write its trajectory, summary and charts.
    Run(CommonArgs),
    /// Paired base/variant runs over several seeds.
    Compare(CommonArgs),
    /// Check the closed-form generalization error against Monte-Carlo.
    Verify(CommonArgs),
    /// One run per value of `rule.dropout.p` or `eta`.
    Sweep(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Dotted-path override applied to the config, e.g. `rule.dropout.p=0.25`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Run(a) => (Command::Run, a),
        Cmd::Compare(a) => (Command::Compare, a),
        Cmd::Verify(a) => (Command::Verify, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
    };
    let inv = Invocation {
        command,
        config: args.config,
        out: args.out,
        overrides: args.set,
    };
    match execute(&inv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
