use std::process::ExitCode;

use clap::Parser;
use doclab_core::experiment::ExperimentDir;
use doclab_service::cli::{run, Cli, Command};
use doclab_service::{error_line, server};

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve { experiment, port } => tokio::runtime::Runtime::new()
            .map_err(|e| doclab_core::Error::io("tokio runtime", e))
            .and_then(|rt| rt.block_on(server::serve(ExperimentDir::new(experiment), port)))
            .map(|()| serde_json::Value::Null),
        other => run(other),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
