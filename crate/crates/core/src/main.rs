use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use swinfer::cli::{self, CommonArgs, EvalArgs};
use swinfer::data::Split;
use swinfer::metrics::ReportFormat;
use swinfer::Error;

/// Facial expression classifier: shifted-window transformer, excitation
/// gate, sharpness-aware training.
#[derive(Parser)]
#[command(name = "swinfer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file (`key = value` lines).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Data source: FER-style CSV, class-folder root, or synthetic:<kind>:<n>[:<side>]; repeatable.
    #[arg(long, value_name = "PATH")]
    data: Vec<String>,
    #[arg(long, value_name = "7|8")]
    classes: Option<usize>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_name = "32|64")]
    precision: Option<String>,
}

impl From<Common> for CommonArgs {
    fn from(c: Common) -> Self {
        CommonArgs {
            config: c.config,
            overrides: c.overrides,
            data: c.data,
            classes: c.classes,
            seed: c.seed,
            precision: c.precision,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Balance, split and train; writes checkpoints and curve.csv to output_dir.
    Train(Common),
    /// Score a checkpoint on one split of the data.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        ckpt: PathBuf,
        #[arg(long, default_value = "table", value_name = "table|csv|json")]
        format: String,
        #[arg(long, default_value = "test", value_name = "train|val|test")]
        split: String,
        /// Score an 8-class checkpoint on 7-class data (argmax over the first seven logits).
        #[arg(long)]
        remap: bool,
    },
    /// Classify one image.
    Predict {
        #[arg(long, value_name = "PATH")]
        ckpt: PathBuf,
        #[arg(value_name = "IMAGE")]
        image: PathBuf,
        #[arg(long, value_name = "32|64")]
        precision: Option<String>,
        #[arg(long, default_value = "table", value_name = "table|csv|json")]
        format: String,
    },
    /// Class histogram before and after balancing, with split counts.
    DataStats {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "table", value_name = "table|csv")]
        format: String,
    },
}

fn run(cli: Cli) -> Result<String, Error> {
    match cli.command {
        Command::Train(common) => cli::cmd_train(&common.into()),
        Command::Eval { common, ckpt, format, split, remap } => cli::cmd_eval(&EvalArgs {
            common: common.into(),
            ckpt,
            format: format.parse()?,
            split: split.parse::<Split>()?,
            remap,
        }),
        Command::Predict { ckpt, image, precision, format } => {
            cli::cmd_predict(&ckpt, &image, precision.as_deref(), format.parse::<ReportFormat>()?)
        }
        Command::DataStats { common, format } => cli::cmd_data_stats(&common.into(), format.parse()?),
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
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
