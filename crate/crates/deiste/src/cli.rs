//! Command implementations behind the binary: configuration merging,
//! run reports, and the train/eval/predict/gradcheck/baseline entry points.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    evaluate_overlap, evaluate_single_sentence, majority_accuracy, majority_label,
    train_overlap_classifier, train_single_sentence, Side,
};
use crate::data::{load_tsv, load_tsv_unlabelled, PairExample};
use crate::error::{Error, Result};
use crate::model::{
    evaluate, forward, gradcheck_suite, load_checkpoint, save_checkpoint, train_with_progress,
    AblationFlags, Confusion, EpochStats, ModelParams, TrainConfig,
};
use crate::text::{load_word2vec_text, EmbeddingStore, Vocabulary};

/// Maximum relative error the gradcheck command tolerates.
pub const GRADCHECK_THRESHOLD: f64 = 1e-4;

/// A named ablation, as written on the command line or in a config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AblationChoice {
    None,
    NoDynConv,
    NoRepresentation,
    NoPosition,
}

impl AblationChoice {
    pub fn flags(self) -> AblationFlags {
        match self {
            AblationChoice::None => AblationFlags::default(),
            AblationChoice::NoDynConv => AblationFlags {
                no_dyn_conv: true,
                ..AblationFlags::default()
            },
            AblationChoice::NoRepresentation => AblationFlags {
                no_representation: true,
                ..AblationFlags::default()
            },
            AblationChoice::NoPosition => AblationFlags {
                no_position: true,
                ..AblationFlags::default()
            },
        }
    }

    fn parse(value: &str) -> Option<Self> {
        match value {
            "none" => Some(AblationChoice::None),
            "no-dyn-conv" => Some(AblationChoice::NoDynConv),
            "no-representation" => Some(AblationChoice::NoRepresentation),
            "no-position" => Some(AblationChoice::NoPosition),
            _ => None,
        }
    }
}

/// Optional overrides from the command line; `None` defers to the config
/// file, which defers to defaults.
#[derive(Debug, Clone, Default)]
pub struct ConfigOverrides {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub position_dim: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub ablation: Option<AblationChoice>,
    /// Flag presence: can only switch the single direction on.
    pub single_direction: bool,
}

/// Build the effective configuration: defaults, then the config file, then
/// command-line flags.
pub fn resolve_config(file: Option<&Path>, flags: &ConfigOverrides) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(path) = file {
        apply_config_file(&mut config, path)?;
    }
    if let Some(v) = flags.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = flags.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = flags.hidden_dim {
        config.hidden_dim = v;
    }
    if let Some(v) = flags.position_dim {
        config.position_dim = v;
    }
    if let Some(v) = flags.epochs {
        config.epochs = v;
    }
    if let Some(v) = flags.seed {
        config.seed = v;
    }
    if let Some(choice) = flags.ablation {
        config.ablation = choice.flags();
    }
    if flags.single_direction {
        config.single_direction = true;
    }
    config.validate()?;
    Ok(config)
}

fn parse_bool(value: &str) -> Option<bool> {
    match value {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

/// Apply a `key = value` config file. `#` starts a comment; unknown keys
/// are errors so typos cannot silently change an experiment.
fn apply_config_file(config: &mut TrainConfig, path: &Path) -> Result<()> {
    let contents = std::fs::read_to_string(path)?;
    for (idx, raw) in contents.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path, lineno, "expected key = value"))?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |what: &str| Error::format(path, lineno, format!("bad {what}: {value:?}"));
        match key {
            "lr" | "learning_rate" => {
                config.learning_rate = value.parse().map_err(|_| bad("float"))?
            }
            "batch_size" => config.batch_size = value.parse().map_err(|_| bad("integer"))?,
            "hidden" | "hidden_dim" => {
                config.hidden_dim = value.parse().map_err(|_| bad("integer"))?
            }
            "dm" | "position_dim" => {
                config.position_dim = value.parse().map_err(|_| bad("integer"))?
            }
            "max_positions" => {
                config.max_positions = value.parse().map_err(|_| bad("integer"))?
            }
            "epochs" => config.epochs = value.parse().map_err(|_| bad("integer"))?,
            "seed" => config.seed = value.parse().map_err(|_| bad("integer"))?,
            "adagrad_epsilon" => {
                config.adagrad_epsilon = value.parse().map_err(|_| bad("float"))?
            }
            "ablation" => {
                config.ablation = AblationChoice::parse(value)
                    .ok_or_else(|| bad("ablation name"))?
                    .flags()
            }
            "no_dyn_conv" => {
                config.ablation.no_dyn_conv = parse_bool(value).ok_or_else(|| bad("bool"))?
            }
            "no_representation" => {
                config.ablation.no_representation =
                    parse_bool(value).ok_or_else(|| bad("bool"))?
            }
            "no_position" => {
                config.ablation.no_position = parse_bool(value).ok_or_else(|| bad("bool"))?
            }
            "single_direction" => {
                config.single_direction = parse_bool(value).ok_or_else(|| bad("bool"))?
            }
            other => {
                return Err(Error::format(path, lineno, format!("unknown key {other:?}")))
            }
        }
    }
    Ok(())
}

/// Everything a run wants to persist about itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config: TrainConfig,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding_coverage: Option<(usize, usize)>,
    pub history: Vec<EpochStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_dev_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Confusion>,
    pub wall_clock_secs: f64,
}

impl RunReport {
    fn new(command: &str, config: &TrainConfig) -> Self {
        RunReport {
            command: command.to_string(),
            config: config.clone(),
            seed: config.seed,
            train_path: None,
            dev_path: None,
            test_path: None,
            embedding_coverage: None,
            history: Vec::new(),
            best_epoch: None,
            best_dev_accuracy: None,
            test_accuracy: None,
            confusion: None,
            wall_clock_secs: 0.0,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n")?;
        Ok(())
    }
}

fn path_string(p: &Path) -> Option<String> {
    Some(p.display().to_string())
}

fn load_examples(path: &Path, strict: bool, what: &str) -> Result<Vec<PairExample>> {
    let loaded = load_tsv(path, strict)?;
    for skip in &loaded.skipped {
        eprintln!(
            "warning: {what} {}:{} skipped ({})",
            path.display(),
            skip.line,
            skip.reason
        );
    }
    if loaded.examples.is_empty() {
        return Err(Error::degenerate(format!(
            "{what} at {} contains no usable examples",
            path.display()
        )));
    }
    Ok(loaded.examples)
}

pub struct TrainArgs {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub strict: bool,
    pub config: TrainConfig,
}

pub fn run_train(args: &TrainArgs) -> Result<()> {
    let start = Instant::now();
    let config = &args.config;
    let mut report = RunReport::new("train", config);
    report.train_path = path_string(&args.train);
    report.dev_path = path_string(&args.dev);

    let train_set = load_examples(&args.train, args.strict, "train example")?;
    let dev_set = load_examples(&args.dev, args.strict, "dev example")?;

    let sentences: Vec<&[String]> = train_set
        .iter()
        .chain(&dev_set)
        .flat_map(|e| [e.premise.as_slice(), e.hypothesis.as_slice()])
        .collect();
    let vocab = Vocabulary::build(sentences);
    println!("vocabulary: {} entries", vocab.len());

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let embeddings = match &args.embeddings {
        Some(path) => {
            let (store, coverage) =
                load_word2vec_text(path, &vocab, config.hidden_dim, &mut rng)?;
            println!(
                "embeddings: {}/{} corpus tokens covered by {}",
                coverage.found,
                coverage.total,
                path.display()
            );
            report.embedding_coverage = Some((coverage.found, coverage.total));
            store
        }
        None => EmbeddingStore::random(&vocab, config.hidden_dim, &mut rng),
    };
    let params = ModelParams::init(vocab, embeddings, config, &mut rng)?;

    let outcome = train_with_progress(params, &train_set, &dev_set, config, |stats| {
        println!(
            "epoch {:>3}: train loss {:.6}  dev accuracy {:.4}",
            stats.epoch, stats.train_loss, stats.dev_accuracy
        );
    })?;
    report.history = outcome.history.clone();
    report.best_epoch = Some(outcome.best_epoch);
    report.best_dev_accuracy = Some(outcome.best_dev_accuracy);
    println!(
        "best dev accuracy {:.4} at epoch {}",
        outcome.best_dev_accuracy, outcome.best_epoch
    );

    if let Some(test_path) = &args.test {
        let test_set = load_examples(test_path, args.strict, "test example")?;
        let result = evaluate(&outcome.params, &test_set, config)?;
        report.test_path = path_string(test_path);
        report.test_accuracy = Some(result.accuracy);
        report.confusion = Some(result.confusion);
        println!("test accuracy {:.4} over {} examples", result.accuracy, result.total);
    }

    if let Some(dir) = &args.checkpoint {
        save_checkpoint(dir, &outcome.params, config)?;
        println!("checkpoint written to {}", dir.display());
    }

    report.wall_clock_secs = start.elapsed().as_secs_f64();
    if let Some(path) = &args.report {
        report.write(path)?;
    }
    Ok(())
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub test: PathBuf,
    pub report: Option<PathBuf>,
    pub strict: bool,
}

pub fn run_eval(args: &EvalArgs) -> Result<()> {
    let start = Instant::now();
    let (params, config) = load_checkpoint(&args.checkpoint)?;
    let data = load_examples(&args.test, args.strict, "eval example")?;
    let result = evaluate(&params, &data, &config)?;
    println!(
        "accuracy {:.4} over {} examples",
        result.accuracy, result.total
    );
    println!(
        "confusion: entails right {} wrong {}; neutral right {} wrong {}",
        result.confusion.true_entails,
        result.confusion.false_neutral,
        result.confusion.true_neutral,
        result.confusion.false_entails,
    );
    if let Some(path) = &args.report {
        let mut report = RunReport::new("eval", &config);
        report.test_path = path_string(&args.test);
        report.test_accuracy = Some(result.accuracy);
        report.confusion = Some(result.confusion);
        report.wall_clock_secs = start.elapsed().as_secs_f64();
        report.write(path)?;
    }
    Ok(())
}

pub struct PredictArgs {
    pub checkpoint: PathBuf,
    pub input: PathBuf,
}

/// Print `probability<TAB>label` for every input line, in order.
pub fn run_predict(args: &PredictArgs) -> Result<()> {
    let (params, config) = load_checkpoint(&args.checkpoint)?;
    let pairs = load_tsv_unlabelled(&args.input)?;
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for (premise, hypothesis) in &pairs {
        let pair = PairExample::new(premise, hypothesis, 0)?;
        let prob = forward(&pair, &params, &config)?;
        let label = if prob > 0.5 { "entails" } else { "neutral" };
        writeln!(out, "{prob:.6}\t{label}")?;
    }
    Ok(())
}

pub struct GradcheckArgs {
    pub seed: u64,
    pub configs: usize,
}

/// Returns true when the worst relative error stays under the threshold.
pub fn run_gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let outcome = gradcheck_suite(args.seed, args.configs)?;
    println!(
        "gradcheck: {} configurations, max relative error {:.3e} (threshold {:.0e})",
        outcome.configs_run, outcome.max_rel_error, GRADCHECK_THRESHOLD
    );
    Ok(outcome.max_rel_error < GRADCHECK_THRESHOLD)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BaselineKind {
    Majority,
    Ngram,
    PremiseOnly,
    HypothesisOnly,
}

pub struct BaselineArgs {
    pub kind: BaselineKind,
    pub train: PathBuf,
    pub dev: Option<PathBuf>,
    pub test: PathBuf,
    pub report: Option<PathBuf>,
    pub strict: bool,
    pub config: TrainConfig,
}

pub fn run_baseline(args: &BaselineArgs) -> Result<()> {
    let start = Instant::now();
    let config = &args.config;
    let train_set = load_examples(&args.train, args.strict, "train example")?;
    let test_set = load_examples(&args.test, args.strict, "test example")?;

    let command = format!(
        "baseline-{}",
        match args.kind {
            BaselineKind::Majority => "majority",
            BaselineKind::Ngram => "ngram",
            BaselineKind::PremiseOnly => "premise-only",
            BaselineKind::HypothesisOnly => "hypothesis-only",
        }
    );
    let mut report = RunReport::new(&command, config);
    report.train_path = path_string(&args.train);
    report.test_path = path_string(&args.test);

    let accuracy = match args.kind {
        BaselineKind::Majority => {
            let label = majority_label(&train_set)?;
            let accuracy = majority_accuracy(label, &test_set)?;
            println!(
                "majority baseline: predicting {} everywhere",
                if label == 1 { "entails" } else { "neutral" }
            );
            accuracy
        }
        BaselineKind::Ngram => {
            let model = train_overlap_classifier(&train_set, config)?;
            let result = evaluate_overlap(&model, &test_set)?;
            report.confusion = Some(result.confusion);
            result.accuracy
        }
        BaselineKind::PremiseOnly | BaselineKind::HypothesisOnly => {
            let side = if args.kind == BaselineKind::PremiseOnly {
                Side::Premise
            } else {
                Side::Hypothesis
            };
            let dev_path = args.dev.as_ref().ok_or_else(|| {
                Error::contract("single-sentence baselines require --dev for model selection")
            })?;
            let dev_set = load_examples(dev_path, args.strict, "dev example")?;
            report.dev_path = path_string(dev_path);
            let outcome = train_single_sentence(side, &train_set, &dev_set, config)?;
            for stats in &outcome.history {
                println!(
                    "epoch {:>3}: train loss {:.6}  dev accuracy {:.4}",
                    stats.epoch, stats.train_loss, stats.dev_accuracy
                );
            }
            report.history = outcome.history.clone();
            report.best_epoch = Some(outcome.best_epoch);
            report.best_dev_accuracy = Some(outcome.best_dev_accuracy);
            let result = evaluate_single_sentence(&outcome.model, &test_set)?;
            report.confusion = Some(result.confusion);
            result.accuracy
        }
    };

    println!("{command}: test accuracy {accuracy:.4}");
    report.test_accuracy = Some(accuracy);
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    if let Some(path) = &args.report {
        report.write(path)?;
    }
    Ok(())
}
