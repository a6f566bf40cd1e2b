mod args;
mod cmd;
mod error;
mod run;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, FileConfig};
use error::{CliError, CliResult};
use run::Run;

fn load_config(path: Option<&PathBuf>) -> CliResult<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config file {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|source| CliError::Config {
        path: path.display().to_string(),
        source,
    })
}

fn execute(cli: Cli) -> CliResult<()> {
    let file = load_config(cli.config.as_ref())?;
    let threads = cli.threads.or(file.threads);
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(format!("cannot size the worker pool: {e}")))?;
    }
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let out = cli.out.or(file.out).unwrap_or_else(|| PathBuf::from("out"));
    let name = match &cli.command {
        Command::Gen(_) => "gen",
        Command::Fit(_) => "fit",
        Command::Pipeline(_) => "pipeline",
        Command::Viz(_) => "viz",
    };
    let run = Run::new(name, out, seed, threads);
    match cli.command {
        Command::Gen(a) => cmd::gen::run(&run, a.over(file.gen)),
        Command::Fit(a) => cmd::fit::run(&run, a.over(file.fit)),
        Command::Pipeline(a) => cmd::pipeline::run(&run, a.over(file.pipeline)),
        Command::Viz(a) => cmd::viz::run(&run, a.over(file.viz)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
