use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use deiste::cli::{
    resolve_config, run_baseline, run_eval, run_gradcheck, run_predict, run_train,
    AblationChoice, BaselineArgs, BaselineKind, ConfigOverrides, EvalArgs, GradcheckArgs,
    PredictArgs, TrainArgs,
};

/// Sentence-pair entailment classifier built on word-to-word interactions.
#[derive(Parser)]
#[command(name = "deiste", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Hyperparameter flags shared by the training-style commands. Flags
/// override the config file, which overrides built-in defaults.
#[derive(Args)]
struct HyperFlags {
    /// Key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed for initialization and shuffling.
    #[arg(long)]
    seed: Option<u64>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// AdaGrad learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Examples per mini-batch.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Position-embedding dimensionality.
    #[arg(long)]
    dm: Option<usize>,
    /// Word-embedding / hidden dimensionality.
    #[arg(long)]
    hidden: Option<usize>,
    /// Disable one model component.
    #[arg(long, value_enum)]
    ablation: Option<AblationChoice>,
    /// Encode only the premise-to-hypothesis direction.
    #[arg(long)]
    single_direction: bool,
}

impl HyperFlags {
    fn resolve(&self) -> deiste::Result<deiste::model::TrainConfig> {
        let overrides = ConfigOverrides {
            learning_rate: self.lr,
            batch_size: self.batch_size,
            hidden_dim: self.hidden,
            position_dim: self.dm,
            epochs: self.epochs,
            seed: self.seed,
            ablation: self.ablation,
            single_direction: self.single_direction,
        };
        resolve_config(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train on labelled TSV data and write a checkpoint.
    Train {
        /// Training pairs: premise<TAB>hypothesis<TAB>label.
        #[arg(long)]
        train: PathBuf,
        /// Development pairs for model selection.
        #[arg(long)]
        dev: PathBuf,
        /// Optional test pairs evaluated with the best parameters.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Pretrained embeddings in word2vec text format.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Directory to write the checkpoint into.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write the run report as JSON here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Abort on the first malformed data line instead of skipping.
        #[arg(long)]
        strict: bool,
        #[command(flatten)]
        hyper: HyperFlags,
    },
    /// Evaluate a checkpoint on labelled TSV data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Labelled pairs to score.
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        strict: bool,
    },
    /// Print probability and label for premise<TAB>hypothesis lines.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Unlabelled pairs, one per line.
        #[arg(long)]
        input: PathBuf,
    },
    /// Check analytic gradients against finite differences on tiny models.
    Gradcheck {
        /// Seed for the configuration generator.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Number of tiny configurations to run.
        #[arg(long, default_value_t = 20)]
        configs: usize,
    },
    /// Run one of the reference baselines.
    Baseline {
        /// Which baseline to run.
        #[arg(value_enum)]
        kind: BaselineKind,
        #[arg(long)]
        train: PathBuf,
        /// Required for the single-sentence baselines.
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        strict: bool,
        #[command(flatten)]
        hyper: HyperFlags,
    },
}

fn run(cli: Cli) -> deiste::Result<bool> {
    match cli.command {
        Command::Train {
            train,
            dev,
            test,
            embeddings,
            checkpoint,
            report,
            strict,
            hyper,
        } => {
            let config = hyper.resolve()?;
            run_train(&TrainArgs {
                train,
                dev,
                test,
                embeddings,
                checkpoint,
                report,
                strict,
                config,
            })?;
            Ok(true)
        }
        Command::Eval {
            checkpoint,
            test,
            report,
            strict,
        } => {
            run_eval(&EvalArgs {
                checkpoint,
                test,
                report,
                strict,
            })?;
            Ok(true)
        }
        Command::Predict { checkpoint, input } => {
            run_predict(&PredictArgs { checkpoint, input })?;
            Ok(true)
        }
        Command::Gradcheck { seed, configs } => run_gradcheck(&GradcheckArgs { seed, configs }),
        Command::Baseline {
            kind,
            train,
            dev,
            test,
            report,
            strict,
            hyper,
        } => {
            let config = hyper.resolve()?;
            run_baseline(&BaselineArgs {
                kind,
                train,
                dev,
                test,
                report,
                strict,
                config,
            })?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
