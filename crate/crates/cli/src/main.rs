//! `nmt`: corpus preparation, training, translation and serving.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "nmt", version, about = "Neural machine translation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter a parallel corpus: duplicate sources, rare vocabulary, segmentation ratios.
    Clean(CleanArgs),
    /// Build vocabularies and binary batch datasets under <cache-dir>/<dataid>/.
    Mkdata(MkdataArgs),
    /// Train a model from a configuration file.
    Train(TrainArgs),
    /// Translate lines with one model, or an ensemble when --model repeats.
    Translate(TranslateArgs),
    /// Average the parameters of checkpoints.
    Avg(AvgArgs),
    /// Score sentence pairs by per-token loss.
    Rank(RankArgs),
    /// Write the indexes never seen on the target side as a config fragment.
    Forbidden(ForbiddenArgs),
    /// Serve translations over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct CleanArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    #[arg(long)]
    out_src: PathBuf,
    #[arg(long)]
    out_tgt: PathBuf,
    /// Share of each side's vocabulary kept as frequent; enables vocabulary cleaning.
    #[arg(long)]
    vratio: Option<f64>,
    /// Development source file for estimating ratio thresholds.
    #[arg(long, requires = "dev_tgt")]
    dev_src: Option<PathBuf>,
    #[arg(long, requires = "dev_src")]
    dev_tgt: Option<PathBuf>,
    #[arg(long)]
    max_cratio: Option<f64>,
    #[arg(long)]
    max_bratio: Option<f64>,
    #[arg(long)]
    max_sratio: Option<f64>,
    #[arg(long)]
    max_uratio: Option<f64>,
    #[arg(long)]
    max_oratio: Option<f64>,
    /// Subword continuation marker.
    #[arg(long, default_value = nmt_corpus::DEFAULT_MARKER)]
    marker: String,
}

#[derive(Debug, Args)]
struct MkdataArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    #[arg(long, requires = "dev_tgt")]
    dev_src: Option<PathBuf>,
    #[arg(long, requires = "dev_src")]
    dev_tgt: Option<PathBuf>,
    #[arg(long)]
    dataid: String,
    #[arg(long, default_value = "cache")]
    cache_dir: PathBuf,
    /// One vocabulary for both sides.
    #[arg(long)]
    shared_vocab: bool,
    #[arg(long, default_value_t = 1)]
    min_freq: u64,
    /// Token budget per batch unit and side.
    #[arg(long, default_value_t = 4096)]
    batch_tokens: usize,
    /// Pairs with a longer side are dropped.
    #[arg(long, default_value_t = 256)]
    max_len: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training dataset; overrides `train_data` in the config.
    #[arg(long)]
    train_data: Option<PathBuf>,
    /// Validation dataset; overrides `dev_data` in the config.
    #[arg(long)]
    dev_data: Option<PathBuf>,
    /// Configuration override, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Checkpoint file; repeat for an ensemble.
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    #[arg(long)]
    src_vocab: PathBuf,
    #[arg(long)]
    tgt_vocab: PathBuf,
    #[arg(long, default_value_t = 4)]
    beam: usize,
    /// Length-penalty exponent.
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 128)]
    max_len: usize,
}

#[derive(Debug, Args)]
struct TranslateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Input file; standard input when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct AvgArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct RankArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    src_vocab: PathBuf,
    #[arg(long)]
    tgt_vocab: PathBuf,
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct ForbiddenArgs {
    /// Target side of the training corpus.
    #[arg(long)]
    tgt: PathBuf,
    /// Target vocabulary file.
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "127.0.0.1")]
    addr: String,
    /// 0 picks a free port; the bound address is printed.
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value_t = nmt_server::DEFAULT_MAX_BATCH)]
    max_batch: usize,
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let res = match cli.command {
        Command::Clean(a) => commands::clean(a),
        Command::Mkdata(a) => commands::mkdata(a),
        Command::Train(a) => commands::train(a),
        Command::Translate(a) => commands::translate(a),
        Command::Avg(a) => commands::avg(a),
        Command::Rank(a) => commands::rank(a),
        Command::Forbidden(a) => commands::forbidden(a),
        Command::Serve(a) => commands::serve(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
