//! Full-model gradient checking over seeded tiny configurations.
//!
//! Each configuration builds the whole loss (interaction, importance,
//! both encoders, classifier, cross-entropy) at toy sizes and compares every
//! parameter entry against central finite differences. Configurations cycle
//! through the ablation switches, both encoding directions, and padded
//! batches.
//!
//! The loss is discontinuous at argmax flips and non-differentiable at
//! clamp boundaries and pooling ties, so finite differences are only
//! meaningful away from those points: candidate configurations whose forward
//! pass comes within a small margin of any of them are deterministically
//! resampled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoders::{DynConvNodes, PosConvNodes, PosConvParams};
use crate::error::{Error, Result};
use crate::interaction::IMPORTANCE_CLAMP;
use crate::numerics::gradcheck::{grad_check, DEFAULT_EPS};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::tensor::Tensor;
use crate::text::PAD;

use super::{
    pair_probability_traced, AblationFlags, ForwardTrace, ParamNodes, PreparedPair, TrainConfig,
};

/// Smallest tolerated distance to an argmax tie or clamp boundary.
const KINK_MARGIN: f64 = 1e-3;
const MAX_ATTEMPTS: u64 = 40;
const WEIGHT_SCALE: f64 = 0.5;
const BIAS_SCALE: f64 = 0.2;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOutcome {
    pub max_rel_error: f64,
    pub configs_run: usize,
}

/// Run `configs` seeded tiny configurations; returns the worst relative
/// error across every parameter entry of every configuration.
pub fn gradcheck_suite(seed: u64, configs: usize) -> Result<GradCheckOutcome> {
    let mut max_rel_error = 0.0_f64;
    for k in 0..configs {
        let err = check_configuration(seed, k)?;
        if err > max_rel_error {
            max_rel_error = err;
        }
    }
    Ok(GradCheckOutcome {
        max_rel_error,
        configs_run: configs,
    })
}

fn ablation_pattern(k: usize) -> AblationFlags {
    match k % 5 {
        1 => AblationFlags {
            no_dyn_conv: true,
            ..AblationFlags::default()
        },
        2 => AblationFlags {
            no_representation: true,
            ..AblationFlags::default()
        },
        3 => AblationFlags {
            no_position: true,
            ..AblationFlags::default()
        },
        4 => AblationFlags {
            no_dyn_conv: true,
            no_representation: true,
            no_position: true,
        },
        _ => AblationFlags::default(),
    }
}

fn check_configuration(seed: u64, k: usize) -> Result<f64> {
    let config = TrainConfig {
        hidden_dim: 3 + k % 2,
        position_dim: 2,
        max_positions: 6,
        ablation: ablation_pattern(k),
        single_direction: k.is_multiple_of(3),
        ..TrainConfig::default()
    };

    for attempt in 0..MAX_ATTEMPTS {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ ((k as u64) << 16) ^ (attempt << 40) ^ 0x5eed);
        let premise_len = rng.gen_range(2..=5);
        let hypothesis_len = rng.gen_range(2..=5);
        // every fourth configuration exercises trailing padding and masks
        let (pad_p, pad_h) = if k % 4 == 1 {
            (premise_len + 1, hypothesis_len + 2)
        } else {
            (premise_len, hypothesis_len)
        };

        // disjoint, repeat-free token pools keep cosines away from exact
        // ties (identical columns would pin entries at 1.0, the upper clamp
        // boundary)
        let mut premise: Vec<usize> = (2..2 + premise_len).collect();
        premise.resize(pad_p, PAD);
        let mut hypothesis: Vec<usize> = (2 + premise_len..2 + premise_len + hypothesis_len).collect();
        hypothesis.resize(pad_h, PAD);
        let pair = PreparedPair {
            premise,
            hypothesis,
            premise_len,
            hypothesis_len,
            label: (k % 2) as f64,
        };
        let vocab_rows = 2 + premise_len + hypothesis_len;
        let params = build_param_tensors(&config, vocab_rows, &mut rng);

        if !margins_clear(&params, &pair, &config)? {
            continue;
        }

        return grad_check(
            |g, ids| {
                let nodes = nodes_from_ids(ids);
                let trace = pair_probability_traced(g, &nodes, &pair, &config)?;
                g.binary_cross_entropy(trace.probability, pair.label)
            },
            &params,
            DEFAULT_EPS,
        );
    }
    Err(Error::contract(format!(
        "gradcheck configuration {k} found no well-separated instance in {MAX_ATTEMPTS} attempts"
    )))
}

/// Parameter tensors in slot order (see `SLOT_NAMES`).
fn build_param_tensors(config: &TrainConfig, vocab_rows: usize, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let d = config.hidden_dim;
    let window = PosConvParams::window_width(
        d,
        config.position_dim,
        !config.ablation.no_representation,
    );
    let mut embeddings =
        Tensor::rand_uniform(vec![vocab_rows, d], -WEIGHT_SCALE, WEIGHT_SCALE, rng);
    embeddings.data_mut()[..d].fill(0.0);
    vec![
        embeddings,
        Tensor::rand_uniform(vec![d, d], -WEIGHT_SCALE, WEIGHT_SCALE, rng),
        Tensor::rand_uniform(vec![d, d], -WEIGHT_SCALE, WEIGHT_SCALE, rng),
        Tensor::rand_uniform(vec![d, d], -WEIGHT_SCALE, WEIGHT_SCALE, rng),
        Tensor::rand_uniform(vec![d], -BIAS_SCALE, BIAS_SCALE, rng),
        Tensor::rand_uniform(vec![d, window], -WEIGHT_SCALE, WEIGHT_SCALE, rng),
        Tensor::rand_uniform(vec![d], -BIAS_SCALE, BIAS_SCALE, rng),
        Tensor::rand_uniform(
            vec![config.max_positions, config.position_dim],
            -WEIGHT_SCALE,
            WEIGHT_SCALE,
            rng,
        ),
        Tensor::rand_uniform(vec![config.classifier_dim()], -WEIGHT_SCALE, WEIGHT_SCALE, rng),
        Tensor::rand_uniform(vec![1], -BIAS_SCALE, BIAS_SCALE, rng),
    ]
}

fn nodes_from_ids(ids: &[NodeId]) -> ParamNodes {
    ParamNodes {
        embeddings: ids[0],
        dyn_conv: DynConvNodes {
            w_left: ids[1],
            w_center: ids[2],
            w_right: ids[3],
            bias: ids[4],
        },
        pos_conv: PosConvNodes {
            weight: ids[5],
            bias: ids[6],
        },
        position: ids[7],
        w_cls: ids[8],
        b_cls: ids[9],
    }
}

/// Forward once with the candidate parameters and measure the distance to
/// the nearest discontinuity or kink.
fn margins_clear(params: &[Tensor], pair: &PreparedPair, config: &TrainConfig) -> Result<bool> {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let nodes = nodes_from_ids(&ids);
    let trace = pair_probability_traced(&mut g, &nodes, pair, config)?;
    Ok(min_margin(&g, &trace, pair) > KINK_MARGIN)
}

fn min_margin(g: &Graph, trace: &ForwardTrace, pair: &PreparedPair) -> f64 {
    let mut margin = f64::INFINITY;
    let inter = g.value(trace.interaction);
    // unmasked rows over unmasked columns, both directions
    for r in 0..pair.premise_len {
        let vals: Vec<f64> = (0..pair.hypothesis_len).map(|c| inter.at(r, c)).collect();
        margin = margin.min(interaction_row_margin(&vals));
    }
    for c in 0..pair.hypothesis_len {
        let vals: Vec<f64> = (0..pair.premise_len).map(|r| inter.at(r, c)).collect();
        margin = margin.min(interaction_row_margin(&vals));
    }
    // pooling ties in the encoder outputs (already sliced to live columns)
    for &m in &trace.pooled_inputs {
        let t = g.value(m);
        for r in 0..t.rows() {
            let vals: Vec<f64> = (0..t.cols()).map(|c| t.at(r, c)).collect();
            margin = margin.min(top2_gap(&vals));
        }
    }
    margin
}

/// Distance to the nearest tie or clamp boundary for one interaction row.
fn interaction_row_margin(vals: &[f64]) -> f64 {
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted = 1.0 + max;
    top2_gap(vals)
        .min((shifted - IMPORTANCE_CLAMP.0).abs())
        .min((shifted - IMPORTANCE_CLAMP.1).abs())
}

fn top2_gap(vals: &[f64]) -> f64 {
    if vals.len() < 2 {
        return f64::INFINITY;
    }
    let mut top = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &v in vals {
        if v > top {
            second = top;
            top = v;
        } else if v > second {
            second = v;
        }
    }
    top - second
}
