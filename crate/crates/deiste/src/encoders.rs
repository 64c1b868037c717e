//! Convolutional sequence encoders, all width-3 with zero-padded boundaries
//! and same-length output.

use rand::Rng;

use crate::error::Result;
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::tensor::Tensor;

/// Weights of the importance-weighted dynamic convolution: one `[d, d]`
/// projection per window offset plus a shared bias. Their horizontal
/// concatenation is the weight of an ordinary width-3 convolution.
#[derive(Debug, Clone)]
pub struct DynConvParams {
    pub w_left: Tensor,
    pub w_center: Tensor,
    pub w_right: Tensor,
    pub bias: Tensor,
}

impl DynConvParams {
    pub fn random<R: Rng>(dim: usize, scale: f64, rng: &mut R) -> Self {
        DynConvParams {
            w_left: Tensor::rand_uniform(vec![dim, dim], -scale, scale, rng),
            w_center: Tensor::rand_uniform(vec![dim, dim], -scale, scale, rng),
            w_right: Tensor::rand_uniform(vec![dim, dim], -scale, scale, rng),
            bias: Tensor::zeros(vec![dim]),
        }
    }
}

/// Graph leaves for [`DynConvParams`].
#[derive(Debug, Clone, Copy)]
pub struct DynConvNodes {
    pub w_left: NodeId,
    pub w_center: NodeId,
    pub w_right: NodeId,
    pub bias: NodeId,
}

impl DynConvNodes {
    pub fn register(g: &mut Graph, p: &DynConvParams) -> Self {
        DynConvNodes {
            w_left: g.leaf(p.w_left.clone()),
            w_center: g.leaf(p.w_center.clone()),
            w_right: g.leaf(p.w_right.clone()),
            bias: g.leaf(p.bias.clone()),
        }
    }
}

/// Weights of the position-aware attentive convolution: a single `[d, w]`
/// matrix over the stacked window plus bias. The window width `w` is
/// `3 * (d + d_m) + d`, or `3 * (d + d_m)` when the aligned-representation
/// slot is removed.
#[derive(Debug, Clone)]
pub struct PosConvParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl PosConvParams {
    pub fn window_width(dim: usize, pos_dim: usize, with_aligned: bool) -> usize {
        3 * (dim + pos_dim) + if with_aligned { dim } else { 0 }
    }

    pub fn random<R: Rng>(
        dim: usize,
        pos_dim: usize,
        with_aligned: bool,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let width = Self::window_width(dim, pos_dim, with_aligned);
        PosConvParams {
            weight: Tensor::rand_uniform(vec![dim, width], -scale, scale, rng),
            bias: Tensor::zeros(vec![dim]),
        }
    }
}

/// Graph leaves for [`PosConvParams`].
#[derive(Debug, Clone, Copy)]
pub struct PosConvNodes {
    pub weight: NodeId,
    pub bias: NodeId,
}

impl PosConvNodes {
    pub fn register(g: &mut Graph, p: &PosConvParams) -> Self {
        PosConvNodes {
            weight: g.leaf(p.weight.clone()),
            bias: g.leaf(p.bias.clone()),
        }
    }
}

/// Importance-weighted width-3 convolution.
///
/// Column `i` of the output is
/// `tanh(a[i-1] W_left s[i-1] + a[i] W_center s[i] + a[i+1] W_right s[i+1] + bias)`
/// with zero columns (importance 0) beyond the boundaries. With all
/// importance scores at 1 this is exactly the ordinary convolution whose
/// weight is `[W_left | W_center | W_right]`. Differentiable through the
/// importance scores as well.
pub fn dynamic_conv(
    g: &mut Graph,
    s: NodeId,
    importance: NodeId,
    params: &DynConvNodes,
) -> Result<NodeId> {
    let scaled = g.col_scale(s, importance)?;
    let prev = g.shift_cols(scaled, 1)?;
    let next = g.shift_cols(scaled, -1)?;
    let left = g.matmul(params.w_left, prev)?;
    let center = g.matmul(params.w_center, scaled)?;
    let right = g.matmul(params.w_right, next)?;
    let sum = g.add(left, center)?;
    let sum = g.add(sum, right)?;
    let biased = g.add_col_vec(sum, params.bias)?;
    Ok(g.tanh(biased))
}

/// Position-aware attentive convolution.
///
/// Each position's state is its hidden column stacked on its position
/// embedding; the window at `i` is `[c[i-1]; c[i]; c[i+1]; aligned[i]]`
/// (zero-padded at the boundaries), with the aligned slot dropped when
/// `aligned` is `None`.
pub fn pos_attentive_conv(
    g: &mut Graph,
    s: NodeId,
    positions: NodeId,
    aligned: Option<NodeId>,
    params: &PosConvNodes,
) -> Result<NodeId> {
    let states = g.concat_rows(&[s, positions])?;
    let prev = g.shift_cols(states, 1)?;
    let next = g.shift_cols(states, -1)?;
    let window = match aligned {
        Some(a) => g.concat_rows(&[prev, states, next, a])?,
        None => g.concat_rows(&[prev, states, next])?,
    };
    let projected = g.matmul(params.weight, window)?;
    let biased = g.add_col_vec(projected, params.bias)?;
    Ok(g.tanh(biased))
}

/// Plain width-3 convolution (`weight` is `[d, 3d]`) followed by max-pooling
/// over positions; the single-sentence baseline encoder.
pub fn vanilla_cnn(g: &mut Graph, s: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
    if g.value(s).cols() == 0 {
        return Err(crate::error::Error::EmptySequence(
            "vanilla_cnn over an empty sequence",
        ));
    }
    let prev = g.shift_cols(s, 1)?;
    let next = g.shift_cols(s, -1)?;
    let window = g.concat_rows(&[prev, s, next])?;
    let projected = g.matmul(weight, window)?;
    let biased = g.add_col_vec(projected, bias)?;
    let act = g.tanh(biased);
    let (pooled, _) = g.max_pool_rows(act)?;
    Ok(pooled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{grad_check, DEFAULT_EPS};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Reference width-3 convolution computed position by position:
    /// `tanh(W [s_{i-1}; s_i; s_{i+1}] + b)` with zero padding.
    fn conv3_oracle(s: &Tensor, w: &Tensor, b: &[f64]) -> Vec<f64> {
        let (d, n) = (s.rows(), s.cols());
        let mut out = vec![0.0; d * n];
        for i in 0..n {
            let mut window = vec![0.0; 3 * d];
            for (slot, pos) in [(0, i.wrapping_sub(1)), (1, i), (2, i + 1)] {
                if pos < n {
                    for r in 0..d {
                        window[slot * d + r] = s.at(r, pos);
                    }
                }
            }
            for r in 0..d {
                let mut acc = b[r];
                for k in 0..3 * d {
                    acc += w.at(r, k) * window[k];
                }
                out[r * n + i] = acc.tanh();
            }
        }
        out
    }

    /// Per-position oracle for the dynamic convolution.
    fn dynamic_oracle(s: &Tensor, alpha: &[f64], p: &DynConvParams) -> Vec<f64> {
        let (d, n) = (s.rows(), s.cols());
        let mut out = vec![0.0; d * n];
        for i in 0..n {
            for r in 0..d {
                let mut acc = p.bias.data()[r];
                for (w, pos) in [
                    (&p.w_left, i.wrapping_sub(1)),
                    (&p.w_center, i),
                    (&p.w_right, i + 1),
                ] {
                    if pos < n {
                        for k in 0..d {
                            acc += alpha[pos] * w.at(r, k) * s.at(k, pos);
                        }
                    }
                }
                out[r * n + i] = acc.tanh();
            }
        }
        out
    }

    fn eye(d: usize) -> Tensor {
        let mut m = Tensor::zeros(vec![d, d]);
        for i in 0..d {
            m.data_mut()[i * d + i] = 1.0;
        }
        m
    }

    #[test]
    fn dynamic_conv_center_identity_is_tanh() {
        let d = 3;
        let mut g = Graph::new();
        let s_t = Tensor::matrix(d, 2, vec![0.1, -0.4, 0.2, 0.5, -0.3, 0.0]).unwrap();
        let s = g.leaf(s_t.clone());
        let ones = g.leaf(Tensor::vector(vec![1.0, 1.0]));
        let nodes = DynConvNodes {
            w_left: g.leaf(Tensor::zeros(vec![d, d])),
            w_center: g.leaf(eye(d)),
            w_right: g.leaf(Tensor::zeros(vec![d, d])),
            bias: g.leaf(Tensor::zeros(vec![d])),
        };
        let out = dynamic_conv(&mut g, s, ones, &nodes).unwrap();
        for (o, x) in g.value(out).data().iter().zip(s_t.data()) {
            assert!((o - x.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn dynamic_conv_with_unit_importance_reduces_to_plain_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (d, n) = (3, 5);
        let params = DynConvParams::random(d, 0.5, &mut rng);
        let s_t = Tensor::rand_uniform(vec![d, n], -1.0, 1.0, &mut rng);

        // plain convolution with the concatenated weight
        let mut w_full = Tensor::zeros(vec![d, 3 * d]);
        for r in 0..d {
            for c in 0..d {
                w_full.data_mut()[r * 3 * d + c] = params.w_left.at(r, c);
                w_full.data_mut()[r * 3 * d + d + c] = params.w_center.at(r, c);
                w_full.data_mut()[r * 3 * d + 2 * d + c] = params.w_right.at(r, c);
            }
        }
        let expected = conv3_oracle(&s_t, &w_full, params.bias.data());

        let mut g = Graph::new();
        let s = g.leaf(s_t);
        let ones = g.leaf(Tensor::vector(vec![1.0; n]));
        let nodes = DynConvNodes::register(&mut g, &params);
        let out = dynamic_conv(&mut g, s, ones, &nodes).unwrap();
        for (o, e) in g.value(out).data().iter().zip(&expected) {
            assert!((o - e).abs() <= 1e-12, "{o} vs {e}");
        }
    }

    #[test]
    fn dynamic_conv_matches_per_position_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (d, n) = (2, 3);
        let mut params = DynConvParams::random(d, 0.7, &mut rng);
        params.bias = Tensor::rand_uniform(vec![d], -0.3, 0.3, &mut rng);
        let s_t = Tensor::rand_uniform(vec![d, n], -1.0, 1.0, &mut rng);
        let alpha = vec![0.6, 1.3, 0.9];
        let expected = dynamic_oracle(&s_t, &alpha, &params);

        let mut g = Graph::new();
        let s = g.leaf(s_t);
        let a = g.leaf(Tensor::vector(alpha));
        let nodes = DynConvNodes::register(&mut g, &params);
        let out = dynamic_conv(&mut g, s, a, &nodes).unwrap();
        for (o, e) in g.value(out).data().iter().zip(&expected) {
            assert!((o - e).abs() <= 1e-12, "{o} vs {e}");
        }
    }

    #[test]
    fn dynamic_conv_importance_length_mismatch() {
        let mut g = Graph::new();
        let s = g.leaf(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let alpha = g.leaf(Tensor::vector(vec![1.0, 1.0]));
        let nodes = DynConvNodes {
            w_left: g.leaf(Tensor::zeros(vec![2, 2])),
            w_center: g.leaf(Tensor::zeros(vec![2, 2])),
            w_right: g.leaf(Tensor::zeros(vec![2, 2])),
            bias: g.leaf(Tensor::zeros(vec![2])),
        };
        assert!(dynamic_conv(&mut g, s, alpha, &nodes).is_err());
    }

    #[test]
    fn pos_conv_zero_weights_give_zero_output() {
        let (d, dm, n) = (2, 1, 3);
        let mut g = Graph::new();
        let s = g.leaf(Tensor::matrix(d, n, vec![0.3; 6]).unwrap());
        let z = g.leaf(Tensor::matrix(dm, n, vec![0.5; 3]).unwrap());
        let aligned = g.leaf(Tensor::matrix(d, n, vec![0.7; 6]).unwrap());
        let width = PosConvParams::window_width(d, dm, true);
        let nodes = PosConvNodes {
            weight: g.leaf(Tensor::zeros(vec![d, width])),
            bias: g.leaf(Tensor::zeros(vec![d])),
        };
        let out = pos_attentive_conv(&mut g, s, z, Some(aligned), &nodes).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
        assert_eq!(g.value(out).shape(), &[d, n]);
    }

    /// Per-position oracle for the position-aware attentive convolution.
    fn pos_conv_oracle(
        s: &Tensor,
        z: &Tensor,
        aligned: Option<&Tensor>,
        w: &Tensor,
        b: &[f64],
    ) -> Vec<f64> {
        let (d, n) = (s.rows(), s.cols());
        let dm = z.rows();
        let c = d + dm;
        let width = w.cols();
        let mut out = vec![0.0; d * n];
        for i in 0..n {
            let mut window = vec![0.0; width];
            for (slot, pos) in [(0, i.wrapping_sub(1)), (1, i), (2, i + 1)] {
                if pos < n {
                    for r in 0..d {
                        window[slot * c + r] = s.at(r, pos);
                    }
                    for r in 0..dm {
                        window[slot * c + d + r] = z.at(r, pos);
                    }
                }
            }
            if let Some(a) = aligned {
                for r in 0..d {
                    window[3 * c + r] = a.at(r, i);
                }
            }
            for r in 0..d {
                let mut acc = b[r];
                for (k, &x) in window.iter().enumerate() {
                    acc += w.at(r, k) * x;
                }
                out[r * n + i] = acc.tanh();
            }
        }
        out
    }

    #[test]
    fn pos_conv_single_position_window_is_center_plus_aligned() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (d, dm) = (2, 1);
        let s_t = Tensor::rand_uniform(vec![d, 1], -1.0, 1.0, &mut rng);
        let z_t = Tensor::rand_uniform(vec![dm, 1], -1.0, 1.0, &mut rng);
        let a_t = Tensor::rand_uniform(vec![d, 1], -1.0, 1.0, &mut rng);
        let w_t = Tensor::rand_uniform(
            vec![d, PosConvParams::window_width(d, dm, true)],
            -0.5,
            0.5,
            &mut rng,
        );
        let b_t = Tensor::rand_uniform(vec![d], -0.2, 0.2, &mut rng);
        let expected = pos_conv_oracle(&s_t, &z_t, Some(&a_t), &w_t, b_t.data());

        let mut g = Graph::new();
        let s = g.leaf(s_t);
        let z = g.leaf(z_t);
        let a = g.leaf(a_t);
        let nodes = PosConvNodes {
            weight: g.leaf(w_t),
            bias: g.leaf(b_t),
        };
        let out = pos_attentive_conv(&mut g, s, z, Some(a), &nodes).unwrap();
        for (o, e) in g.value(out).data().iter().zip(&expected) {
            assert!((o - e).abs() <= 1e-12);
        }
    }

    #[test]
    fn pos_conv_matches_oracle_with_and_without_aligned() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (d, dm, n) = (3, 2, 4);
        for with_aligned in [true, false] {
            let s_t = Tensor::rand_uniform(vec![d, n], -1.0, 1.0, &mut rng);
            let z_t = Tensor::rand_uniform(vec![dm, n], -1.0, 1.0, &mut rng);
            let a_t = Tensor::rand_uniform(vec![d, n], -1.0, 1.0, &mut rng);
            let w_t = Tensor::rand_uniform(
                vec![d, PosConvParams::window_width(d, dm, with_aligned)],
                -0.5,
                0.5,
                &mut rng,
            );
            let b_t = Tensor::rand_uniform(vec![d], -0.2, 0.2, &mut rng);
            let expected = pos_conv_oracle(
                &s_t,
                &z_t,
                with_aligned.then_some(&a_t),
                &w_t,
                b_t.data(),
            );

            let mut g = Graph::new();
            let s = g.leaf(s_t);
            let z = g.leaf(z_t);
            let a = g.leaf(a_t);
            let nodes = PosConvNodes {
                weight: g.leaf(w_t),
                bias: g.leaf(b_t),
            };
            let out =
                pos_attentive_conv(&mut g, s, z, with_aligned.then_some(a), &nodes).unwrap();
            for (o, e) in g.value(out).data().iter().zip(&expected) {
                assert!((o - e).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn vanilla_cnn_center_identity_single_column() {
        let d = 2;
        let mut g = Graph::new();
        let s_t = Tensor::matrix(d, 1, vec![0.4, -0.9]).unwrap();
        let s = g.leaf(s_t.clone());
        // weight selects the center block as identity
        let mut w = Tensor::zeros(vec![d, 3 * d]);
        for r in 0..d {
            w.data_mut()[r * 3 * d + d + r] = 1.0;
        }
        let wn = g.leaf(w);
        let bn = g.leaf(Tensor::zeros(vec![d]));
        let out = vanilla_cnn(&mut g, s, wn, bn).unwrap();
        for (o, x) in g.value(out).data().iter().zip(s_t.data()) {
            assert!((o - x.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn vanilla_cnn_zero_input_zero_bias_is_zero() {
        let mut g = Graph::new();
        let s = g.leaf(Tensor::zeros(vec![3, 4]));
        let w = g.leaf(Tensor::rand_uniform(
            vec![3, 9],
            -1.0,
            1.0,
            &mut ChaCha8Rng::seed_from_u64(13),
        ));
        let b = g.leaf(Tensor::zeros(vec![3]));
        let out = vanilla_cnn(&mut g, s, w, b).unwrap();
        assert_eq!(g.value(out).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn vanilla_cnn_matches_conv_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (d, n) = (3, 4);
        let s_t = Tensor::rand_uniform(vec![d, n], -1.0, 1.0, &mut rng);
        let w_t = Tensor::rand_uniform(vec![d, 3 * d], -0.5, 0.5, &mut rng);
        let b_t = Tensor::rand_uniform(vec![d], -0.2, 0.2, &mut rng);
        let conv = conv3_oracle(&s_t, &w_t, b_t.data());
        let expected: Vec<f64> = (0..d)
            .map(|r| {
                (0..n)
                    .map(|i| conv[r * n + i])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();

        let mut g = Graph::new();
        let s = g.leaf(s_t);
        let w = g.leaf(w_t);
        let b = g.leaf(b_t);
        let out = vanilla_cnn(&mut g, s, w, b).unwrap();
        for (o, e) in g.value(out).data().iter().zip(&expected) {
            assert!((o - e).abs() <= 1e-12);
        }
    }

    #[test]
    fn vanilla_cnn_empty_sequence_error() {
        let mut g = Graph::new();
        let s = g.leaf(Tensor::matrix(2, 0, vec![]).unwrap());
        let w = g.leaf(Tensor::zeros(vec![2, 6]));
        let b = g.leaf(Tensor::zeros(vec![2]));
        assert!(matches!(
            vanilla_cnn(&mut g, s, w, b),
            Err(crate::error::Error::EmptySequence(_))
        ));
    }

    #[test]
    fn encoders_pass_gradient_check_in_isolation() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let (d, dm, n) = (3, 2, 4);

        // dynamic convolution, including the importance input
        let s = Tensor::rand_uniform(vec![d, n], -1.0, 1.0, &mut rng);
        let alpha = Tensor::rand_uniform(vec![n], 0.3, 1.5, &mut rng);
        let wl = Tensor::rand_uniform(vec![d, d], -0.5, 0.5, &mut rng);
        let wc = Tensor::rand_uniform(vec![d, d], -0.5, 0.5, &mut rng);
        let wr = Tensor::rand_uniform(vec![d, d], -0.5, 0.5, &mut rng);
        let bias = Tensor::rand_uniform(vec![d], -0.2, 0.2, &mut rng);
        let err = grad_check(
            |g, ids| {
                let nodes = DynConvNodes {
                    w_left: ids[2],
                    w_center: ids[3],
                    w_right: ids[4],
                    bias: ids[5],
                };
                let out = dynamic_conv(g, ids[0], ids[1], &nodes)?;
                let (pooled, _) = g.max_pool_rows(out)?;
                Ok(g.sum(pooled))
            },
            &[s.clone(), alpha, wl, wc, wr, bias.clone()],
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-4, "dynamic_conv rel error {err}");

        // position-aware attentive convolution
        let z = Tensor::rand_uniform(vec![dm, n], -1.0, 1.0, &mut rng);
        let aligned = Tensor::rand_uniform(vec![d, n], -1.0, 1.0, &mut rng);
        let w = Tensor::rand_uniform(
            vec![d, PosConvParams::window_width(d, dm, true)],
            -0.5,
            0.5,
            &mut rng,
        );
        let err = grad_check(
            |g, ids| {
                let nodes = PosConvNodes {
                    weight: ids[3],
                    bias: ids[4],
                };
                let out = pos_attentive_conv(g, ids[0], ids[1], Some(ids[2]), &nodes)?;
                let (pooled, _) = g.max_pool_rows(out)?;
                Ok(g.sum(pooled))
            },
            &[s.clone(), z, aligned, w, bias.clone()],
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-4, "pos_attentive_conv rel error {err}");

        // vanilla CNN
        let w3 = Tensor::rand_uniform(vec![d, 3 * d], -0.5, 0.5, &mut rng);
        let err = grad_check(
            |g, ids| {
                let out = vanilla_cnn(g, ids[0], ids[1], ids[2])?;
                Ok(g.sum(out))
            },
            &[s, w3, bias],
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-4, "vanilla_cnn rel error {err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn encoder_outputs_stay_inside_tanh_range(seed in 0u64..10_000, n in 1usize..6) {
            // f64 tanh rounds to exactly 1.0 once the pre-activation passes
            // ~19, so the strict bound is checked at magnitudes where it is
            // representable.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 3;
            let params = DynConvParams::random(d, 0.5, &mut rng);
            let s_t = Tensor::rand_uniform(vec![d, n], -1.0, 1.0, &mut rng);
            let alpha_t = Tensor::rand_uniform(vec![n], 0.5, 2.0, &mut rng);
            let mut g = Graph::new();
            let s = g.leaf(s_t);
            let alpha = g.leaf(alpha_t);
            let nodes = DynConvNodes::register(&mut g, &params);
            let out = dynamic_conv(&mut g, s, alpha, &nodes).unwrap();
            // same-padding shape contract and strict tanh range
            prop_assert_eq!(g.value(out).shape(), &[d, n]);
            for &v in g.value(out).data() {
                prop_assert!(v > -1.0 && v < 1.0);
            }
        }

        #[test]
        fn reduction_identity_on_random_instances(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 1 + (seed as usize % 4);
            let n = 1 + ((seed / 7) as usize % 5);
            let mut params = DynConvParams::random(d, 0.8, &mut rng);
            params.bias = Tensor::rand_uniform(vec![d], -0.4, 0.4, &mut rng);
            let s_t = Tensor::rand_uniform(vec![d, n], -1.5, 1.5, &mut rng);

            let mut w_full = Tensor::zeros(vec![d, 3 * d]);
            for r in 0..d {
                for c in 0..d {
                    w_full.data_mut()[r * 3 * d + c] = params.w_left.at(r, c);
                    w_full.data_mut()[r * 3 * d + d + c] = params.w_center.at(r, c);
                    w_full.data_mut()[r * 3 * d + 2 * d + c] = params.w_right.at(r, c);
                }
            }
            let expected = conv3_oracle(&s_t, &w_full, params.bias.data());

            let mut g = Graph::new();
            let s = g.leaf(s_t);
            let ones = g.leaf(Tensor::vector(vec![1.0; n]));
            let nodes = DynConvNodes::register(&mut g, &params);
            let out = dynamic_conv(&mut g, s, ones, &nodes).unwrap();
            for (o, e) in g.value(out).data().iter().zip(&expected) {
                prop_assert!((o - e).abs() <= 1e-12);
            }
        }
    }
}
