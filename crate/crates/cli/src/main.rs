//! `medti`: preprocessing, embedding training, sampling, evaluation and the
//! augmentation study behind one command.

mod commands;
mod common;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::{classify, data, embed, evaluate, generate, report};
use common::Ctx;
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "medti", version, about = "Textual inversion for medical imaging on a small budget")]
struct Cli {
    /// TOML config layered over the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from the full published recipe instead of desk-scale defaults.
    #[arg(long, global = true)]
    paper_scale: bool,
    /// Config override applied last, e.g. `--set sampler.steps=50`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Root for relative input paths.
    #[arg(long, global = true, env = "MEDTI_DATA_ROOT")]
    data_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    Preprocess(data::PreprocessArgs),
    ToyData(data::ToyDataArgs),
    PretrainBase(data::PretrainBaseArgs),
    TrainEmbedding(embed::TrainEmbeddingArgs),
    Generate(generate::GenerateArgs),
    Compose(generate::ComposeArgs),
    Interpolate(generate::InterpolateArgs),
    Inpaint(generate::InpaintArgs),
    Fid(evaluate::FidArgs),
    SweepInference(evaluate::SweepInferenceArgs),
    SweepEmbedding(evaluate::SweepEmbeddingArgs),
    TrainClassifier(classify::TrainClassifierArgs),
    Report(report::ReportArgs),
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let ctx = Ctx {
        config: RunConfig::resolve(cli.config.as_deref(), cli.paper_scale, &cli.sets)?,
        data_root: cli.data_root,
    };
    match cli.command {
        Command::Preprocess(a) => data::preprocess(a, ctx),
        Command::ToyData(a) => data::toy_data(a, ctx),
        Command::PretrainBase(a) => data::pretrain(a, ctx),
        Command::TrainEmbedding(a) => embed::run(a, ctx),
        Command::Generate(a) => generate::generate(a, ctx),
        Command::Compose(a) => generate::compose(a, ctx),
        Command::Interpolate(a) => generate::interpolate(a, ctx),
        Command::Inpaint(a) => generate::run_inpaint(a, ctx),
        Command::Fid(a) => evaluate::fid(a, ctx),
        Command::SweepInference(a) => evaluate::sweep_inference(a, ctx),
        Command::SweepEmbedding(a) => evaluate::sweep_embedding(a, ctx),
        Command::TrainClassifier(a) => classify::run(a, ctx),
        Command::Report(a) => report::run(a, ctx),
    }
}
