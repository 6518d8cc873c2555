use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mcmh::eval::{BenchmarkSpec, Rule};
use mcmh::pipeline::commands;
use mcmh::pipeline::{ConfigArgs, RunConfig};
use mcmh::Error;

/// Learn multi-chain rules for knowledge-graph completion.
#[derive(Parser)]
#[command(name = "mcmh", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate chains, build vocabularies and encode every split.
    Extract(ConfigArgs),
    /// Train one checkpoint per relation and mode.
    Train(ConfigArgs),
    /// Report test MAP per relation and mode.
    Eval(ConfigArgs),
    /// Show the highest-probability chains for test instances.
    ExportRules {
        #[command(flatten)]
        config: ConfigArgs,
        /// Chains listed per instance; defaults to the model's d.
        #[arg(long)]
        top_n: Option<usize>,
        /// Stop after this many instances per relation.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Write a synthetic graph with planted rules.
    Benchmark {
        /// single | conjunction | noisy-weak
        #[arg(long, default_value = "conjunction")]
        rule: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Label flip probability.
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(command: Command) -> mcmh::Result<String> {
    match command {
        Command::Extract(args) => commands::cmd_extract(&RunConfig::from_args(&args)?),
        Command::Train(args) => commands::cmd_train(&RunConfig::from_args(&args)?),
        Command::Eval(args) => commands::cmd_eval(&RunConfig::from_args(&args)?),
        Command::ExportRules { config, top_n, limit } => {
            commands::cmd_export_rules(&RunConfig::from_args(&config)?, top_n, limit)
        }
        Command::Benchmark { rule, seed, noise, out } => {
            let mut spec = match Rule::from_name(&rule) {
                Some(Rule::Single) => BenchmarkSpec::single(seed),
                Some(Rule::Conjunction) => BenchmarkSpec::conjunction(seed),
                Some(Rule::NoisyWeak) => BenchmarkSpec::noisy_weak(seed),
                None => return Err(Error::Config(format!("unknown rule `{rule}`"))),
            };
            if let Some(noise) = noise {
                spec.noise = noise;
            }
            commands::cmd_benchmark(&spec, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("mcmh: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
