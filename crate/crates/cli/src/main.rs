use std::path::PathBuf;

use clap::Parser;

use halfcell_cli::{run, Flags, Subcommand};

/// Cell problems, boundary ergodic constants and homogenization studies.
#[derive(Parser)]
#[command(name = "halfcell", version)]
struct Args {
    #[arg(value_enum)]
    command: Subcommand,
    /// Configuration file; may also be given positionally.
    #[arg(long = "config", value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(value_name = "CONFIG")]
    config_pos: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed, overriding `numerics.seed`.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// `section.key=value`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    quiet: bool,
}

fn main() {
    let args = Args::parse();
    let Some(config) = args.config.or(args.config_pos) else {
        eprintln!("halfcell: no configuration file given");
        std::process::exit(2);
    };
    let flags = Flags {
        out: args.out,
        seed: args.seed,
        overrides: args.overrides,
        quiet: args.quiet,
    };
    std::process::exit(run(args.command, &config, &flags));
}
