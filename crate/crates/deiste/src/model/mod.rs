//! The full entailment model: configuration, trainable parameters, and the
//! end-to-end forward pass from a token pair to a probability.

mod checkpoint;
mod suite;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use suite::{gradcheck_suite, GradCheckOutcome};
pub use train::{
    adagrad_step, adagrad_update, evaluate, train, train_with, train_with_progress, Confusion,
    EpochStats, EvalResult, ParamGrads, TrainOutcome,
};

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::PairExample;
use crate::encoders::{
    dynamic_conv, pos_attentive_conv, DynConvNodes, DynConvParams, PosConvNodes, PosConvParams,
};
use crate::error::{Error, Result};
use crate::interaction::{
    best_match_indices, importance_scores, interaction_matrix, position_embed_masked,
    soft_align, PositionTable,
};
use crate::numerics::graph::{Axis, Graph, NodeId};
use crate::numerics::tensor::Tensor;
use crate::text::{embed, EmbeddingStore, Vocabulary, PAD};

/// Convolution window width; the architecture is defined for trigrams.
pub const FILTER_WIDTH: usize = 3;

/// Initial scale for trainable weights.
const INIT_SCALE: f64 = 0.05;

/// Which model components to disable, for ablation runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    /// Drop the dynamic-convolution features from the classifier input.
    pub no_dyn_conv: bool,
    /// Drop the soft-aligned representation from the attentive window.
    pub no_representation: bool,
    /// Feed zero vectors in place of best-match position embeddings.
    pub no_position: bool,
}

/// Training and architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Word-embedding / hidden dimensionality `d`.
    pub hidden_dim: usize,
    /// Position-embedding dimensionality `d_m`.
    pub position_dim: usize,
    /// Rows in the shared position table; larger indices clamp to the last row.
    pub max_positions: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adagrad_epsilon: f64,
    pub ablation: AblationFlags,
    /// Encode only the premise-to-hypothesis direction.
    pub single_direction: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 50,
            hidden_dim: 300,
            position_dim: 50,
            max_positions: 60,
            epochs: 10,
            seed: 7,
            adagrad_epsilon: 1e-6,
            ablation: AblationFlags::default(),
            single_direction: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || self.adagrad_epsilon <= 0.0 {
            return Err(Error::contract("learning rate and epsilon must be positive"));
        }
        if self.batch_size == 0
            || self.hidden_dim == 0
            || self.position_dim == 0
            || self.max_positions == 0
            || self.epochs == 0
        {
            return Err(Error::contract("sizes and epoch count must be positive"));
        }
        Ok(())
    }

    /// Width of the classifier input under the configured ablations.
    pub fn classifier_dim(&self) -> usize {
        let directions = if self.single_direction { 1 } else { 2 };
        let blocks = if self.ablation.no_dyn_conv { 1 } else { 2 };
        directions * blocks * self.hidden_dim
    }
}

/// All trainable state plus per-parameter AdaGrad accumulators.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingStore,
    pub dyn_conv: DynConvParams,
    pub pos_conv: PosConvParams,
    pub position: PositionTable,
    /// `[classifier_dim]`.
    pub w_cls: Tensor,
    /// `[1]`.
    pub b_cls: Tensor,
    pub(crate) accumulators: BTreeMap<String, Vec<f64>>,
}

impl ModelParams {
    /// Assemble and shape-check parameters against the configuration.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        vocab: Vocabulary,
        embeddings: EmbeddingStore,
        dyn_conv: DynConvParams,
        pos_conv: PosConvParams,
        position: PositionTable,
        w_cls: Tensor,
        b_cls: Tensor,
        config: &TrainConfig,
    ) -> Result<Self> {
        let d = config.hidden_dim;
        let window =
            PosConvParams::window_width(d, config.position_dim, !config.ablation.no_representation);
        let checks = [
            (embeddings.matrix.shape() == [vocab.len(), d], "embeddings"),
            (dyn_conv.w_left.shape() == [d, d], "conv left weight"),
            (dyn_conv.w_center.shape() == [d, d], "conv center weight"),
            (dyn_conv.w_right.shape() == [d, d], "conv right weight"),
            (dyn_conv.bias.shape() == [d], "conv bias"),
            (pos_conv.weight.shape() == [d, window], "attentive weight"),
            (pos_conv.bias.shape() == [d], "attentive bias"),
            (
                position.table.shape() == [config.max_positions, config.position_dim],
                "position table",
            ),
            (w_cls.shape() == [config.classifier_dim()], "classifier weight"),
            (b_cls.shape() == [1], "classifier bias"),
        ];
        for (ok, what) in checks {
            if !ok {
                return Err(Error::contract(format!(
                    "{what} has the wrong shape for this configuration"
                )));
            }
        }
        Ok(ModelParams {
            vocab,
            embeddings,
            dyn_conv,
            pos_conv,
            position,
            w_cls,
            b_cls,
            accumulators: BTreeMap::new(),
        })
    }

    /// Random initialization around zero, with the given embedding store.
    pub fn init<R: Rng>(
        vocab: Vocabulary,
        embeddings: EmbeddingStore,
        config: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let d = config.hidden_dim;
        let dyn_conv = DynConvParams::random(d, INIT_SCALE, rng);
        let pos_conv = PosConvParams::random(
            d,
            config.position_dim,
            !config.ablation.no_representation,
            INIT_SCALE,
            rng,
        );
        let position = PositionTable::random(config.max_positions, config.position_dim, rng);
        let w_cls = Tensor::rand_uniform(vec![config.classifier_dim()], -INIT_SCALE, INIT_SCALE, rng);
        let b_cls = Tensor::zeros(vec![1]);
        ModelParams::new(vocab, embeddings, dyn_conv, pos_conv, position, w_cls, b_cls, config)
    }

    pub fn all_finite(&self) -> bool {
        self.embeddings.matrix.all_finite()
            && self.dyn_conv.w_left.all_finite()
            && self.dyn_conv.w_center.all_finite()
            && self.dyn_conv.w_right.all_finite()
            && self.dyn_conv.bias.all_finite()
            && self.pos_conv.weight.all_finite()
            && self.pos_conv.bias.all_finite()
            && self.position.table.all_finite()
            && self.w_cls.all_finite()
            && self.b_cls.all_finite()
    }
}

/// Graph leaves for one registration of the model parameters. One
/// registration serves a whole batch; gradients accumulate across examples.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ParamNodes {
    pub embeddings: NodeId,
    pub dyn_conv: DynConvNodes,
    pub pos_conv: PosConvNodes,
    pub position: NodeId,
    pub w_cls: NodeId,
    pub b_cls: NodeId,
}

/// Stable slot names for gradients, optimizer state, and checkpoints.
pub(crate) const SLOT_NAMES: [&str; 10] = [
    "embeddings",
    "conv_left",
    "conv_center",
    "conv_right",
    "conv_bias",
    "attentive_weight",
    "attentive_bias",
    "position_table",
    "classifier_weight",
    "classifier_bias",
];

impl ParamNodes {
    pub fn register(g: &mut Graph, params: &ModelParams) -> Self {
        ParamNodes {
            embeddings: g.leaf(params.embeddings.matrix.clone()),
            dyn_conv: DynConvNodes::register(g, &params.dyn_conv),
            pos_conv: PosConvNodes::register(g, &params.pos_conv),
            position: g.leaf(params.position.table.clone()),
            w_cls: g.leaf(params.w_cls.clone()),
            b_cls: g.leaf(params.b_cls.clone()),
        }
    }

    pub fn ids(&self) -> [NodeId; 10] {
        [
            self.embeddings,
            self.dyn_conv.w_left,
            self.dyn_conv.w_center,
            self.dyn_conv.w_right,
            self.dyn_conv.bias,
            self.pos_conv.weight,
            self.pos_conv.bias,
            self.position,
            self.w_cls,
            self.b_cls,
        ]
    }

    /// Read accumulated gradients back out of the graph, as zeros where no
    /// gradient flowed.
    pub fn collect_grads(&self, g: &Graph) -> ParamGrads {
        let mut grads = BTreeMap::new();
        for (name, id) in SLOT_NAMES.iter().zip(self.ids()) {
            let grad = g
                .grad(id)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; g.value(id).numel()]);
            grads.insert(name.to_string(), grad);
        }
        ParamGrads(grads)
    }
}

/// A token pair converted to padded index sequences with true lengths.
#[derive(Debug, Clone)]
pub(crate) struct PreparedPair {
    pub premise: Vec<usize>,
    pub hypothesis: Vec<usize>,
    pub premise_len: usize,
    pub hypothesis_len: usize,
    pub label: f64,
}

impl PreparedPair {
    pub fn from_example(
        pair: &PairExample,
        vocab: &Vocabulary,
        pad_premise_to: usize,
        pad_hypothesis_to: usize,
    ) -> Result<Self> {
        if pair.premise.is_empty() || pair.hypothesis.is_empty() {
            return Err(Error::degenerate("empty premise or hypothesis"));
        }
        let index = |tokens: &[String], pad_to: usize| -> Result<Vec<usize>> {
            if pad_to < tokens.len() {
                return Err(Error::contract(format!(
                    "cannot pad {} tokens down to {}",
                    tokens.len(),
                    pad_to
                )));
            }
            let mut idx: Vec<usize> = tokens.iter().map(|t| vocab.index_or_unk(t)).collect();
            idx.resize(pad_to, PAD);
            Ok(idx)
        };
        Ok(PreparedPair {
            premise: index(&pair.premise, pad_premise_to)?,
            hypothesis: index(&pair.hypothesis, pad_hypothesis_to)?,
            premise_len: pair.premise.len(),
            hypothesis_len: pair.hypothesis.len(),
            label: pair.label as f64,
        })
    }
}

/// Node handles to intermediate values of one example's forward pass, used
/// by the gradient-check suite to keep finite differences away from argmax
/// and clamp discontinuities.
pub(crate) struct ForwardTrace {
    pub interaction: NodeId,
    /// Matrices that feed a row max-pool.
    pub pooled_inputs: Vec<NodeId>,
    pub probability: NodeId,
}

/// Build one example's forward graph and return the probability node.
pub(crate) fn pair_probability(
    g: &mut Graph,
    nodes: &ParamNodes,
    pair: &PreparedPair,
    config: &TrainConfig,
) -> Result<NodeId> {
    Ok(pair_probability_traced(g, nodes, pair, config)?.probability)
}

pub(crate) fn pair_probability_traced(
    g: &mut Graph,
    nodes: &ParamNodes,
    pair: &PreparedPair,
    config: &TrainConfig,
) -> Result<ForwardTrace> {
    if pair.premise_len == 0 || pair.hypothesis_len == 0 {
        return Err(Error::degenerate("empty premise or hypothesis"));
    }
    let (n_p, n_h) = (pair.premise.len(), pair.hypothesis.len());
    let p_mask: Vec<bool> = (0..n_p).map(|i| i < pair.premise_len).collect();
    let h_mask: Vec<bool> = (0..n_h).map(|j| j < pair.hypothesis_len).collect();

    let p_feat = embed(g, nodes.embeddings, &pair.premise)?;
    let h_feat = embed(g, nodes.embeddings, &pair.hypothesis)?;
    let inter = interaction_matrix(g, p_feat, h_feat, &p_mask, &h_mask)?;
    let inter_t = g.transpose(inter)?;

    let mut pooled_inputs = Vec::new();
    let mut features = Vec::new();

    // Direction-agnostic helpers; "this" is the sentence being encoded.
    struct Side<'a> {
        feat: NodeId,
        mask: &'a [bool],
        len: usize,
        inter_from_this: NodeId,
        other_feat: NodeId,
        other_mask: &'a [bool],
        importance_axis: Axis,
    }
    let premise_side = Side {
        feat: p_feat,
        mask: &p_mask,
        len: pair.premise_len,
        inter_from_this: inter,
        other_feat: h_feat,
        other_mask: &h_mask,
        importance_axis: Axis::Rows,
    };
    let hypothesis_side = Side {
        feat: h_feat,
        mask: &h_mask,
        len: pair.hypothesis_len,
        inter_from_this: inter_t,
        other_feat: p_feat,
        other_mask: &p_mask,
        importance_axis: Axis::Cols,
    };
    let sides: Vec<&Side> = if config.single_direction {
        vec![&premise_side]
    } else {
        vec![&premise_side, &hypothesis_side]
    };

    if !config.ablation.no_dyn_conv {
        for side in &sides {
            let raw = importance_scores(g, inter, side.importance_axis)?;
            // padded positions contribute nothing to their neighbors' windows
            let mask_f = g.leaf(Tensor::vector(
                side.mask.iter().map(|&m| m as u8 as f64).collect(),
            ));
            let weights = g.mul(raw, mask_f)?;
            let conv = dynamic_conv(g, side.feat, weights, &nodes.dyn_conv)?;
            let live = g.slice_cols(conv, 0, side.len)?;
            pooled_inputs.push(live);
            let (pooled, _) = g.max_pool_rows(live)?;
            features.push(pooled);
        }
    }

    for side in &sides {
        let positions = if config.ablation.no_position {
            g.leaf(Tensor::zeros(vec![config.position_dim, side.mask.len()]))
        } else {
            let best = best_match_indices(g.value(side.inter_from_this), side.other_mask)?;
            position_embed_masked(g, nodes.position, &best, side.mask)?
        };
        let aligned = if config.ablation.no_representation {
            None
        } else {
            Some(soft_align(g, side.inter_from_this, side.other_feat, side.other_mask)?)
        };
        let conv = pos_attentive_conv(g, side.feat, positions, aligned, &nodes.pos_conv)?;
        let live = g.slice_cols(conv, 0, side.len)?;
        pooled_inputs.push(live);
        let (pooled, _) = g.max_pool_rows(live)?;
        features.push(pooled);
    }

    let feats = g.concat_vec(&features)?;
    let score = g.dot(nodes.w_cls, feats)?;
    let score = g.add(score, nodes.b_cls)?;
    let probability = g.sigmoid(score);
    Ok(ForwardTrace {
        interaction: inter,
        pooled_inputs,
        probability,
    })
}

/// Mean cross-entropy over a prepared batch, as one scalar node.
pub(crate) fn batch_loss(
    g: &mut Graph,
    nodes: &ParamNodes,
    batch: &[PreparedPair],
    config: &TrainConfig,
) -> Result<NodeId> {
    if batch.is_empty() {
        return Err(Error::contract("batch_loss over an empty batch"));
    }
    let mut total: Option<NodeId> = None;
    for pair in batch {
        let prob = pair_probability(g, nodes, pair, config)?;
        let loss = g.binary_cross_entropy(prob, pair.label)?;
        total = Some(match total {
            None => loss,
            Some(t) => g.add(t, loss)?,
        });
    }
    Ok(g.scale(total.expect("non-empty batch"), 1.0 / batch.len() as f64))
}

/// Probability that the premise entails the hypothesis.
pub fn forward(pair: &PairExample, params: &ModelParams, config: &TrainConfig) -> Result<f64> {
    let prepared = PreparedPair::from_example(
        pair,
        &params.vocab,
        pair.premise.len(),
        pair.hypothesis.len(),
    )?;
    let mut g = Graph::new();
    let nodes = ParamNodes::register(&mut g, params);
    let prob = pair_probability(&mut g, &nodes, &prepared, config)?;
    Ok(g.value(prob).item())
}

/// Cross-entropy of a probability against a binary label, after clipping
/// the probability to `[1e-12, 1 - 1e-12]`.
pub fn loss(prob: f64, label: u8) -> f64 {
    let p = prob.clamp(1e-12, 1.0 - 1e-12);
    -(label as f64) * p.ln() - (1.0 - label as f64) * (1.0 - p).ln()
}
