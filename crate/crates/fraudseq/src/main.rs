use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fraudseq::cli::{cmd_bench, cmd_eval, cmd_synth, cmd_train};

/// Sequential behavioral fraud detection toolkit.
#[derive(Parser)]
#[command(name = "fraudseq", version, about)]
struct Cli {
    /// Worker threads for batch evaluation, DTW pairs, and MTF batching.
    /// Results are independent of this setting.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset and its schema.
    Synth {
        /// Synthetic-generator configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model (plus item embeddings when the data has item tokens).
    Train {
        /// Model configuration (key=value text).
        #[arg(long)]
        config: PathBuf,
        /// Session dataset (JSONL).
        #[arg(long)]
        data: PathBuf,
        /// Dataset schema (JSON).
        #[arg(long)]
        schema: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a trained model over a labeled dataset.
    Eval {
        /// Directory holding model.bin / model.meta (from `train`).
        #[arg(long)]
        model: PathBuf,
        /// Session dataset (JSONL).
        #[arg(long)]
        data: PathBuf,
        /// Dataset schema (JSON).
        #[arg(long)]
        schema: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the five-model comparison benchmark.
    Bench {
        /// Benchmark configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the benchmark seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help / --version print and succeed; everything else is a
            // usage error (exit code 1)
            let is_help = err.use_stderr();
            let _ = err.print();
            return if is_help { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: could not configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Synth { config, out, seed } => cmd_synth(config, out, *seed),
        Command::Train { config, data, schema, out, seed } => {
            cmd_train(config, data, schema, out, *seed)
        }
        Command::Eval { model, data, schema, out } => cmd_eval(model, data, schema, out),
        Command::Bench { config, out, seed } => cmd_bench(config, out, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
