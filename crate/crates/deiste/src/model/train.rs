//! AdaGrad optimization, the epoch loop, and evaluation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PairExample;
use crate::error::{Error, Result};
use crate::numerics::graph::Graph;
use crate::text::{EmbeddingStore, Vocabulary};

use super::{batch_loss, forward, ModelParams, ParamNodes, PreparedPair, TrainConfig};

/// Gradients keyed by parameter slot name.
#[derive(Debug, Clone)]
pub struct ParamGrads(pub(crate) BTreeMap<String, Vec<f64>>);

/// The AdaGrad update rule on one flat parameter slice:
/// `acc += g^2; x -= lr * g / (sqrt(acc) + eps)`.
pub fn adagrad_update(value: &mut [f64], acc: &mut [f64], grad: &[f64], lr: f64, eps: f64) {
    debug_assert!(value.len() == acc.len() && acc.len() == grad.len());
    for ((x, a), g) in value.iter_mut().zip(acc).zip(grad) {
        *a += g * g;
        *x -= lr * g / (a.sqrt() + eps);
    }
}

/// One AdaGrad update: for every entry, `acc += g^2` then
/// `x -= lr * g / (sqrt(acc) + eps)`. The PAD embedding row is skipped so it
/// stays exactly zero.
pub fn adagrad_step(params: &mut ModelParams, grads: &ParamGrads, config: &TrainConfig) {
    let lr = config.learning_rate;
    let eps = config.adagrad_epsilon;
    let pad_skip = params.embeddings.dim();
    let embeddings_trainable = params.embeddings.trainable;

    let ModelParams {
        embeddings,
        dyn_conv,
        pos_conv,
        position,
        w_cls,
        b_cls,
        accumulators,
        ..
    } = params;

    let mut step = |name: &str, value: &mut crate::numerics::tensor::Tensor, skip: usize| {
        let Some(grad) = grads.0.get(name) else {
            return;
        };
        debug_assert_eq!(grad.len(), value.numel());
        let acc = accumulators
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; grad.len()]);
        adagrad_update(&mut value.data_mut()[skip..], &mut acc[skip..], &grad[skip..], lr, eps);
    };

    if embeddings_trainable {
        step("embeddings", &mut embeddings.matrix, pad_skip);
    }
    step("conv_left", &mut dyn_conv.w_left, 0);
    step("conv_center", &mut dyn_conv.w_center, 0);
    step("conv_right", &mut dyn_conv.w_right, 0);
    step("conv_bias", &mut dyn_conv.bias, 0);
    step("attentive_weight", &mut pos_conv.weight, 0);
    step("attentive_bias", &mut pos_conv.bias, 0);
    step("position_table", &mut position.table, 0);
    step("classifier_weight", w_cls, 0);
    step("classifier_bias", b_cls, 0);

    debug_assert!(params.all_finite(), "non-finite parameter after step");
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

/// Predicted-vs-gold counts; "positive" is the entails label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_entails: usize,
    pub false_entails: usize,
    pub true_neutral: usize,
    pub false_neutral: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub confusion: Confusion,
    pub total: usize,
}

/// Accuracy at a 0.5 probability threshold, with confusion counts.
/// Examples are sharded across threads; parameters are read-only.
pub fn evaluate(
    params: &ModelParams,
    data: &[PairExample],
    config: &TrainConfig,
) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::contract("evaluate over an empty dataset"));
    }
    let outcomes: Result<Vec<(u8, u8)>> = data
        .par_iter()
        .map(|pair| {
            let prob = forward(pair, params, config)?;
            Ok((pair.label, (prob > 0.5) as u8))
        })
        .collect();
    let mut confusion = Confusion::default();
    for (gold, pred) in outcomes? {
        match (gold, pred) {
            (1, 1) => confusion.true_entails += 1,
            (0, 1) => confusion.false_entails += 1,
            (0, 0) => confusion.true_neutral += 1,
            (1, 0) => confusion.false_neutral += 1,
            _ => unreachable!("labels are binary"),
        }
    }
    Ok(EvalResult {
        accuracy: (confusion.true_entails + confusion.true_neutral) as f64 / data.len() as f64,
        confusion,
        total: data.len(),
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
}

/// One optimizer step on a batch; returns the mean batch loss.
fn train_batch(
    params: &mut ModelParams,
    batch: &[&PairExample],
    config: &TrainConfig,
) -> Result<f64> {
    let pad_premise = batch.iter().map(|e| e.premise.len()).max().unwrap_or(1);
    let pad_hypothesis = batch.iter().map(|e| e.hypothesis.len()).max().unwrap_or(1);
    let prepared: Vec<PreparedPair> = batch
        .iter()
        .map(|e| PreparedPair::from_example(e, &params.vocab, pad_premise, pad_hypothesis))
        .collect::<Result<_>>()?;

    let mut g = Graph::new();
    let nodes = ParamNodes::register(&mut g, params);
    let loss = batch_loss(&mut g, &nodes, &prepared, config)?;
    let loss_value = g.value(loss).item();
    g.backward(loss)?;
    let grads = nodes.collect_grads(&g);
    drop(g);
    adagrad_step(params, &grads, config);
    Ok(loss_value)
}

/// Train from a fresh random initialization: the vocabulary is built from
/// the training and dev sets, embeddings start random. Use [`train_with`]
/// to supply pretrained embeddings.
pub fn train(
    train_set: &[PairExample],
    dev_set: &[PairExample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let sentences: Vec<&[String]> = train_set
        .iter()
        .chain(dev_set)
        .flat_map(|e| [e.premise.as_slice(), e.hypothesis.as_slice()])
        .collect();
    let vocab = Vocabulary::build(sentences);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let embeddings = EmbeddingStore::random(&vocab, config.hidden_dim, &mut rng);
    let params = ModelParams::init(vocab, embeddings, config, &mut rng)?;
    train_with(params, train_set, dev_set, config)
}

/// The epoch loop: seeded shuffling, padded mini-batches, one AdaGrad step
/// per batch, dev evaluation after every epoch. Returns the parameters from
/// the best dev epoch (earliest wins ties) plus the full history.
pub fn train_with(
    params: ModelParams,
    train_set: &[PairExample],
    dev_set: &[PairExample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_progress(params, train_set, dev_set, config, |_| {})
}

/// [`train_with`] invoking `progress` after every epoch.
pub fn train_with_progress(
    mut params: ModelParams,
    train_set: &[PairExample],
    dev_set: &[PairExample],
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::contract("train set is empty"));
    }
    if dev_set.is_empty() {
        return Err(Error::contract("dev set is empty"));
    }

    // distinct stream from parameter initialization
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9E3779B97F4A7C15));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PairExample> = chunk.iter().map(|&i| &train_set[i]).collect();
            loss_sum += train_batch(&mut params, &batch, config)?;
            batches += 1;
        }
        let dev = evaluate(&params, dev_set, config)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / batches as f64,
            dev_accuracy: dev.accuracy,
        };
        progress(&stats);
        history.push(stats);
        if best.as_ref().is_none_or(|(_, acc, _)| dev.accuracy > *acc) {
            best = Some((epoch, dev.accuracy, params.clone()));
        }
    }

    let (best_epoch, best_dev_accuracy, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params: best_params,
        history,
        best_epoch,
        best_dev_accuracy,
    })
}
