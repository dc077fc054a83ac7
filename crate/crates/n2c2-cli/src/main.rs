//! Command-line surface for the calibration pipeline: synthesize a corpus,
//! train, predict, evaluate, ablate components, and sweep the retrieval cap.

mod args;
mod commands;

use clap::Parser;

use args::{Cli, Command, FileConfig};

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(&cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    if let Some(threads) = cli.threads.or(file.threads) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()?;
    }
    match &cli.command {
        Command::Synth(args) => commands::cmd_synth(args, &file),
        Command::Train(args) => commands::cmd_train(args, &file),
        Command::Predict(args) => commands::cmd_predict(args, &file),
        Command::Evaluate(args) => commands::cmd_evaluate(args, &file),
        Command::Ablate(args) => commands::cmd_ablate(args, &file),
        Command::SweepKmax(args) => commands::cmd_sweep_kmax(args, &file),
    }
}
