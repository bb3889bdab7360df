use clap::{Parser, Subcommand};
use leadprice_cli::commands::{
    run_ab_test, run_evaluate, run_quote, run_serve, run_simulate, run_train, AbTestArgs,
    EvaluateArgs, QuoteArgs, ServeArgs, SimulateArgs, TrainArgs,
};

/// Lead-time pricing: train, quote, serve, simulate, evaluate, A/B test.
#[derive(Parser)]
#[command(name = "leadprice", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model artifact from a quote log.
    Train(TrainArgs),
    /// Price one request against an artifact.
    Quote(QuoteArgs),
    /// Serve quotes over HTTP with artifact hot reload.
    Serve(ServeArgs),
    /// Write a synthetic quote log from a ground truth.
    Simulate(SimulateArgs),
    /// Compare naive, vanilla MNL and tree models on held-out quotes.
    Evaluate(EvaluateArgs),
    /// Simulate an A/B test of legacy against framework pricing.
    AbTest(AbTestArgs),
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train(a) => println!("{}", run_train(&a)?),
        Command::Quote(a) => println!("{}", run_quote(&a)?),
        Command::Serve(a) => run_serve(&a)?,
        Command::Simulate(a) => println!("{}", run_simulate(&a)?),
        Command::Evaluate(a) => println!("{}", run_evaluate(&a)?),
        Command::AbTest(a) => println!("{}", run_ab_test(&a)?),
    }
    Ok(())
}
