//! Non-neural and single-sentence baselines: majority class, skip-n-gram
//! overlap with a logistic head, and a vanilla CNN over one side of the
//! pair.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::PairExample;
use crate::encoders::vanilla_cnn;
use crate::error::{Error, Result};
use crate::model::{adagrad_update, Confusion, EpochStats, EvalResult, TrainConfig};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::tensor::Tensor;
use crate::text::{embed, EmbeddingStore, Vocabulary};

/// Token n-grams as a multiset.
pub type NgramCounts = HashMap<Vec<String>, usize>;

/// Overlap ratios between a pair's n-gram multisets, one per order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NgramFeatures {
    pub unigram: f64,
    pub bigram: f64,
    pub trigram: f64,
}

impl NgramFeatures {
    fn as_array(&self) -> [f64; 3] {
        [self.unigram, self.bigram, self.trigram]
    }
}

/// One-skip n-grams: consecutive selected tokens may skip at most one
/// intervening token, so gaps are 1 or 2. Order 1 is plain unigrams.
pub fn skip_ngrams(tokens: &[String], order: usize) -> Result<NgramCounts> {
    let mut counts = NgramCounts::new();
    let n = tokens.len();
    match order {
        1 => {
            for t in tokens {
                *counts.entry(vec![t.clone()]).or_insert(0) += 1;
            }
        }
        2 => {
            for i in 0..n {
                for gap in 1..=2usize {
                    if i + gap < n {
                        *counts
                            .entry(vec![tokens[i].clone(), tokens[i + gap].clone()])
                            .or_insert(0) += 1;
                    }
                }
            }
        }
        3 => {
            for i in 0..n {
                for gap1 in 1..=2usize {
                    for gap2 in 1..=2usize {
                        let (j, k) = (i + gap1, i + gap1 + gap2);
                        if k < n {
                            *counts
                                .entry(vec![
                                    tokens[i].clone(),
                                    tokens[j].clone(),
                                    tokens[k].clone(),
                                ])
                                .or_insert(0) += 1;
                        }
                    }
                }
            }
        }
        other => {
            return Err(Error::contract(format!(
                "skip_ngrams order must be 1, 2, or 3, got {other}"
            )))
        }
    }
    Ok(counts)
}

fn overlap_ratio(premise: &NgramCounts, hypothesis: &NgramCounts) -> f64 {
    let total: usize = hypothesis.values().sum();
    if total == 0 {
        return 0.0;
    }
    let matched: usize = hypothesis
        .iter()
        .map(|(gram, &count)| count.min(premise.get(gram).copied().unwrap_or(0)))
        .sum();
    matched as f64 / total as f64
}

/// Fraction of the hypothesis' n-grams covered by the premise, per order
/// (count-aware multiset intersection, hypothesis-normalized).
pub fn overlap_features(premise: &[String], hypothesis: &[String]) -> NgramFeatures {
    let ratio = |order| {
        let p = skip_ngrams(premise, order).expect("order in 1..=3");
        let h = skip_ngrams(hypothesis, order).expect("order in 1..=3");
        overlap_ratio(&p, &h)
    };
    NgramFeatures {
        unigram: ratio(1),
        bigram: ratio(2),
        trigram: ratio(3),
    }
}

/// Logistic regression over the three overlap ratios.
#[derive(Debug, Clone)]
pub struct OverlapModel {
    pub weights: [f64; 3],
    pub bias: f64,
}

impl OverlapModel {
    pub fn probability(&self, features: &NgramFeatures) -> f64 {
        let x = features.as_array();
        let score: f64 = self
            .weights
            .iter()
            .zip(&x)
            .map(|(w, v)| w * v)
            .sum::<f64>()
            + self.bias;
        1.0 / (1.0 + (-score).exp())
    }
}

/// Fit the overlap classifier with AdaGrad under the shared training
/// regime (learning rate, batch size, epochs, seed from `config`).
pub fn train_overlap_classifier(
    train_set: &[PairExample],
    config: &TrainConfig,
) -> Result<OverlapModel> {
    if train_set.is_empty() {
        return Err(Error::contract("train set is empty"));
    }
    let features: Vec<([f64; 3], f64)> = train_set
        .iter()
        .map(|e| {
            (
                overlap_features(&e.premise, &e.hypothesis).as_array(),
                e.label as f64,
            )
        })
        .collect();

    let mut model = OverlapModel {
        weights: [0.0; 3],
        bias: 0.0,
    };
    let mut acc_w = [0.0f64; 3];
    let mut acc_b = [0.0f64];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9E3779B97F4A7C15));
    let mut order: Vec<usize> = (0..features.len()).collect();

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let mut grad_w = [0.0f64; 3];
            let mut grad_b = 0.0f64;
            for &i in chunk {
                let (x, y) = features[i];
                let score: f64 =
                    model.weights.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + model.bias;
                let p = 1.0 / (1.0 + (-score).exp());
                let delta = (p - y) / chunk.len() as f64;
                for (g, v) in grad_w.iter_mut().zip(&x) {
                    *g += delta * v;
                }
                grad_b += delta;
            }
            adagrad_update(
                &mut model.weights,
                &mut acc_w,
                &grad_w,
                config.learning_rate,
                config.adagrad_epsilon,
            );
            adagrad_update(
                std::slice::from_mut(&mut model.bias),
                &mut acc_b,
                &[grad_b],
                config.learning_rate,
                config.adagrad_epsilon,
            );
        }
    }
    Ok(model)
}

/// Accuracy of the overlap classifier at the 0.5 threshold.
pub fn evaluate_overlap(model: &OverlapModel, data: &[PairExample]) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::contract("evaluate over an empty dataset"));
    }
    let mut confusion = Confusion::default();
    for pair in data {
        let p = model.probability(&overlap_features(&pair.premise, &pair.hypothesis));
        match (pair.label, (p > 0.5) as u8) {
            (1, 1) => confusion.true_entails += 1,
            (0, 1) => confusion.false_entails += 1,
            (0, 0) => confusion.true_neutral += 1,
            (1, 0) => confusion.false_neutral += 1,
            _ => unreachable!(),
        }
    }
    Ok(EvalResult {
        accuracy: (confusion.true_entails + confusion.true_neutral) as f64 / data.len() as f64,
        confusion,
        total: data.len(),
    })
}

/// Most frequent training label; ties resolve to neutral.
pub fn majority_label(train_set: &[PairExample]) -> Result<u8> {
    if train_set.is_empty() {
        return Err(Error::contract("train set is empty"));
    }
    let entails = train_set.iter().filter(|e| e.label == 1).count();
    Ok((entails * 2 > train_set.len()) as u8)
}

/// Accuracy of the constant predictor on an evaluation set.
pub fn majority_accuracy(label: u8, data: &[PairExample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::contract("evaluate over an empty dataset"));
    }
    let hits = data.iter().filter(|e| e.label == label).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Which sentence the single-sentence baseline reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Premise,
    Hypothesis,
}

impl Side {
    fn tokens<'a>(&self, pair: &'a PairExample) -> &'a [String] {
        match self {
            Side::Premise => &pair.premise,
            Side::Hypothesis => &pair.hypothesis,
        }
    }
}

/// Vanilla CNN over one sentence with a logistic head.
#[derive(Debug, Clone)]
pub struct CnnBaseline {
    pub side: Side,
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingStore,
    /// `[d, 3d]`.
    pub weight: Tensor,
    pub bias: Tensor,
    pub w_cls: Tensor,
    pub b_cls: Tensor,
}

pub struct CnnBaselineOutcome {
    pub model: CnnBaseline,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
}

struct CnnNodes {
    embeddings: NodeId,
    weight: NodeId,
    bias: NodeId,
    w_cls: NodeId,
    b_cls: NodeId,
}

fn cnn_forward_graph(
    g: &mut Graph,
    nodes: &CnnNodes,
    indices: &[usize],
) -> Result<NodeId> {
    let s = embed(g, nodes.embeddings, indices)?;
    let pooled = vanilla_cnn(g, s, nodes.weight, nodes.bias)?;
    let score = g.dot(nodes.w_cls, pooled)?;
    let score = g.add(score, nodes.b_cls)?;
    Ok(g.sigmoid(score))
}

fn cnn_probability(model: &CnnBaseline, pair: &PairExample) -> Result<f64> {
    let indices: Vec<usize> = model
        .side
        .tokens(pair)
        .iter()
        .map(|t| model.vocab.index_or_unk(t))
        .collect();
    let mut g = Graph::new();
    let nodes = CnnNodes {
        embeddings: g.leaf(model.embeddings.matrix.clone()),
        weight: g.leaf(model.weight.clone()),
        bias: g.leaf(model.bias.clone()),
        w_cls: g.leaf(model.w_cls.clone()),
        b_cls: g.leaf(model.b_cls.clone()),
    };
    let prob = cnn_forward_graph(&mut g, &nodes, &indices)?;
    Ok(g.value(prob).item())
}

pub fn evaluate_single_sentence(model: &CnnBaseline, data: &[PairExample]) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::contract("evaluate over an empty dataset"));
    }
    let outcomes: Result<Vec<(u8, u8)>> = data
        .par_iter()
        .map(|pair| Ok((pair.label, (cnn_probability(model, pair)? > 0.5) as u8)))
        .collect();
    let mut confusion = Confusion::default();
    for (gold, pred) in outcomes? {
        match (gold, pred) {
            (1, 1) => confusion.true_entails += 1,
            (0, 1) => confusion.false_entails += 1,
            (0, 0) => confusion.true_neutral += 1,
            (1, 0) => confusion.false_neutral += 1,
            _ => unreachable!(),
        }
    }
    Ok(EvalResult {
        accuracy: (confusion.true_entails + confusion.true_neutral) as f64 / data.len() as f64,
        confusion,
        total: data.len(),
    })
}

/// Train the single-sentence CNN baseline under the same regime as the full
/// model: seeded shuffling, AdaGrad, dev-accuracy early selection.
pub fn train_single_sentence(
    side: Side,
    train_set: &[PairExample],
    dev_set: &[PairExample],
    config: &TrainConfig,
) -> Result<CnnBaselineOutcome> {
    config.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::contract("train and dev sets must be non-empty"));
    }
    let d = config.hidden_dim;
    let sentences: Vec<&[String]> = train_set
        .iter()
        .chain(dev_set)
        .flat_map(|e| [e.premise.as_slice(), e.hypothesis.as_slice()])
        .collect();
    let vocab = Vocabulary::build(sentences);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let embeddings = EmbeddingStore::random(&vocab, d, &mut rng);
    let mut model = CnnBaseline {
        side,
        vocab,
        embeddings,
        weight: Tensor::rand_uniform(vec![d, 3 * d], -0.05, 0.05, &mut rng),
        bias: Tensor::zeros(vec![d]),
        w_cls: Tensor::rand_uniform(vec![d], -0.05, 0.05, &mut rng),
        b_cls: Tensor::zeros(vec![1]),
    };
    train_single_sentence_with(&mut model, train_set, dev_set, config)
}

fn train_single_sentence_with(
    model: &mut CnnBaseline,
    train_set: &[PairExample],
    dev_set: &[PairExample],
    config: &TrainConfig,
) -> Result<CnnBaselineOutcome> {
    let d = config.hidden_dim;
    let mut acc: HashMap<&'static str, Vec<f64>> = HashMap::new();
    let mut shuffle_rng =
        ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9E3779B97F4A7C15));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, CnnBaseline)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let mut g = Graph::new();
            let nodes = CnnNodes {
                embeddings: g.leaf(model.embeddings.matrix.clone()),
                weight: g.leaf(model.weight.clone()),
                bias: g.leaf(model.bias.clone()),
                w_cls: g.leaf(model.w_cls.clone()),
                b_cls: g.leaf(model.b_cls.clone()),
            };
            let mut total: Option<NodeId> = None;
            for &i in chunk {
                let pair = &train_set[i];
                let indices: Vec<usize> = model
                    .side
                    .tokens(pair)
                    .iter()
                    .map(|t| model.vocab.index_or_unk(t))
                    .collect();
                let prob = cnn_forward_graph(&mut g, &nodes, &indices)?;
                let loss = g.binary_cross_entropy(prob, pair.label as f64)?;
                total = Some(match total {
                    None => loss,
                    Some(t) => g.add(t, loss)?,
                });
            }
            let loss = g.scale(total.expect("non-empty chunk"), 1.0 / chunk.len() as f64);
            loss_sum += g.value(loss).item();
            batches += 1;
            g.backward(loss)?;

            let mut step = |name: &'static str, id: NodeId, value: &mut Tensor, skip: usize| {
                let grad = g.grad(id).map(|s| s.to_vec());
                if let Some(grad) = grad {
                    let acc = acc.entry(name).or_insert_with(|| vec![0.0; grad.len()]);
                    adagrad_update(
                        &mut value.data_mut()[skip..],
                        &mut acc[skip..],
                        &grad[skip..],
                        config.learning_rate,
                        config.adagrad_epsilon,
                    );
                }
            };
            step("embeddings", nodes.embeddings, &mut model.embeddings.matrix, d);
            step("weight", nodes.weight, &mut model.weight, 0);
            step("bias", nodes.bias, &mut model.bias, 0);
            step("w_cls", nodes.w_cls, &mut model.w_cls, 0);
            step("b_cls", nodes.b_cls, &mut model.b_cls, 0);
        }
        let dev = evaluate_single_sentence(model, dev_set)?;
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / batches as f64,
            dev_accuracy: dev.accuracy,
        });
        if best.as_ref().is_none_or(|(_, a, _)| dev.accuracy > *a) {
            best = Some((epoch, dev.accuracy, model.clone()));
        }
    }
    let (best_epoch, best_dev_accuracy, best_model) = best.expect("at least one epoch");
    Ok(CnnBaselineOutcome {
        model: best_model,
        history,
        best_epoch,
        best_dev_accuracy,
    })
}
