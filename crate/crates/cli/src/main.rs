use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use tdexplain::metrics::format_table;
use tdexplain_cli::server::{serve, StudyState};
use tdexplain_cli::{CliError, CliResult, Paths, RunConfig};

#[derive(Parser)]
#[command(name = "tdexplain", version, about = "Listenable explanations for audio classifiers")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set interpreter.alpha=0.5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the corpus and write it with its digest.
    GenData,
    /// Train and freeze the classifier.
    TrainClf,
    /// Train the interpreter against the frozen classifier.
    TrainItp,
    /// Export explanation triplets and the study manifest.
    Explain,
    /// Score the interpreter and baselines on the evaluation split.
    Eval,
    /// Serve the listening study over HTTP.
    ServeStudy,
    /// Summarize collected ratings.
    Mos,
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    cfg.echo()?;
    match cli.command {
        Command::GenData => println!("{}", tdexplain_cli::gen_data(&cfg)?),
        Command::TrainClf => {
            let clf = tdexplain_cli::train_clf(&cfg)?;
            println!("{}", serde_json::to_string(clf.metrics()).map_err(tdexplain::Error::from)?);
        }
        Command::TrainItp => {
            for h in tdexplain_cli::train_itp(&cfg)? {
                println!("{}", serde_json::to_string(&h).map_err(tdexplain::Error::from)?);
            }
        }
        Command::Explain => {
            let m = tdexplain_cli::explain(&cfg)?;
            println!(
                "{} stimuli in {}",
                m.stimuli.len(),
                Paths::new(&cfg).study_dir().display()
            );
        }
        Command::Eval => print!("{}", format_table(&tdexplain_cli::eval(&cfg)?)),
        Command::ServeStudy => {
            let paths = Paths::new(&cfg);
            let state = StudyState::open(paths.study_dir(), paths.ratings(), tdexplain_cli::ci_method(&cfg))?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Other(e.to_string()))?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&cfg.study.bind)
                    .await
                    .map_err(|e| CliError::Other(format!("bind {}: {e}", cfg.study.bind)))?;
                log::info!("serving study on {}", cfg.study.bind);
                serve(Arc::new(state), listener)
                    .await
                    .map_err(|e| CliError::Other(e.to_string()))
            })?;
        }
        Command::Mos => {
            let s = tdexplain_cli::mos(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&s).map_err(tdexplain::Error::from)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
