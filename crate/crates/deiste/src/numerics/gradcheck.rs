//! Finite-difference gradient checking.
//!
//! The checker is the independent oracle for every backward rule in this
//! crate: it never touches the analytic gradients except to compare against
//! central differences computed from forward passes alone.

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::tensor::Tensor;

/// Default central-difference step.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Floor used in the relative-error denominator.
const REL_FLOOR: f64 = 1e-8;

/// Compare analytic gradients against central finite differences.
///
/// `build` must construct a scalar-output graph from the given parameter
/// leaves, deterministically: called repeatedly with perturbed copies of
/// `params`, it has to rebuild the same computation every time. Returns the
/// maximum over all parameter entries of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(mut build: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: FnMut(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if eps <= 0.0 {
        return Err(Error::contract("grad_check: eps must be positive"));
    }

    let eval = |build: &mut F, params: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = params.iter().map(|p| g.leaf(p.clone())).collect();
        let out = build(&mut g, &ids)?;
        if !g.value(out).is_scalar() {
            return Err(Error::contract(format!(
                "grad_check: builder must produce a scalar, got shape {:?}",
                g.value(out).shape()
            )));
        }
        Ok(g.value(out).item())
    };

    // Analytic pass.
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let out = build(&mut g, &ids)?;
    if !g.value(out).is_scalar() {
        return Err(Error::contract(format!(
            "grad_check: builder must produce a scalar, got shape {:?}",
            g.value(out).shape()
        )));
    }
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(params)
        .map(|(&id, p)| {
            g.grad(id)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; p.numel()])
        })
        .collect();
    drop(g);

    // Numeric pass: perturb one entry at a time.
    let mut max_rel = 0.0_f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, grads) in analytic.iter().enumerate() {
        for k in 0..params[pi].numel() {
            let orig = work[pi].data()[k];
            work[pi].data_mut()[k] = orig + eps;
            let f_plus = eval(&mut build, &work)?;
            work[pi].data_mut()[k] = orig - eps;
            let f_minus = eval(&mut build, &work)?;
            work[pi].data_mut()[k] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = grads[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::vector(vec![0.3, -1.2, 2.5]);
        let err = grad_check(
            |g, ids| {
                let out = g.sum(ids[0]);
                Ok(out)
            },
            &[x],
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-8, "rel error {err}");
    }

    #[test]
    fn tanh_gradient_at_zero_is_one() {
        let x = Tensor::vector(vec![0.0, 0.0, 0.0]);
        let mut g = Graph::new();
        let id = g.leaf(x.clone());
        let t = g.tanh(id);
        let out = g.sum(t);
        g.backward(out).unwrap();
        assert_eq!(g.grad(id).unwrap(), &[1.0, 1.0, 1.0]);

        let err = grad_check(
            |g, ids| {
                let t = g.tanh(ids[0]);
                Ok(g.sum(t))
            },
            &[x],
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-8, "rel error {err}");
    }

    #[test]
    fn non_scalar_output_is_a_contract_error() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let res = grad_check(|g, ids| g.add(ids[0], ids[0]), &[x], DEFAULT_EPS);
        assert!(matches!(res, Err(crate::error::Error::Contract(_))));
    }

    /// A composite graph touching most differentiable ops.
    fn composite_loss(g: &mut Graph, ids: &[crate::numerics::graph::NodeId]) -> crate::error::Result<crate::numerics::graph::NodeId> {
        let [a, b, v, alpha]: [crate::numerics::graph::NodeId; 4] =
            [ids[0], ids[1], ids[2], ids[3]];
        let prod = g.matmul(a, b)?; // [3, n]
        let shifted = g.shift_cols(prod, 1)?;
        let summed = g.add(prod, shifted)?;
        let scaled = g.col_scale(summed, alpha)?;
        let biased = g.add_col_vec(scaled, v)?;
        let act = g.tanh(biased);
        let t = g.transpose(act)?; // [n, 3]
        let soft = g.masked_softmax(t, &[true, true, true])?;
        let back = g.transpose(soft)?;
        let (pooled, _) = g.max_pool_rows(back)?;
        let sig = g.sigmoid(pooled);
        Ok(g.sum(sig))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn composite_graphs_pass_gradcheck(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 4;
            let a = Tensor::rand_uniform(vec![3, 2], -1.0, 1.0, &mut rng);
            let b = Tensor::rand_uniform(vec![2, n], -1.0, 1.0, &mut rng);
            let v = Tensor::rand_uniform(vec![3], -1.0, 1.0, &mut rng);
            let alpha = Tensor::rand_uniform(vec![n], 0.2, 1.0, &mut rng);
            let err = grad_check(composite_loss, &[a, b, v, alpha], DEFAULT_EPS).unwrap();
            prop_assert!(err < 1e-4, "rel error {}", err);
        }

        #[test]
        fn cosine_and_softmax_grads(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = Tensor::rand_uniform(vec![5], -1.0, 1.0, &mut rng);
            let w = Tensor::rand_uniform(vec![5], -1.0, 1.0, &mut rng);
            let err = grad_check(
                |g, ids| {
                    let c = g.cosine(ids[0], ids[1])?;
                    let sc = g.scale(c, 3.0);
                    let sig = g.sigmoid(sc);
                    g.binary_cross_entropy(sig, 1.0)
                },
                &[u, w],
                DEFAULT_EPS,
            )
            .unwrap();
            prop_assert!(err < 1e-4, "rel error {}", err);
        }

        #[test]
        fn masked_softmax_unmasked_sums_to_one(
            scores in proptest::collection::vec(-3.0_f64..3.0, 2..8),
            mask_seed in 0u64..64,
        ) {
            let n = scores.len();
            let mask: Vec<bool> = (0..n).map(|i| (mask_seed >> i) & 1 == 1).collect();
            prop_assume!(mask.iter().any(|&m| m));
            let mut g = Graph::new();
            let x = g.leaf(Tensor::vector(scores));
            let y = g.masked_softmax(x, &mask).unwrap();
            let out = g.value(y).data();
            let total: f64 = out
                .iter()
                .zip(&mask)
                .filter(|(_, &m)| m)
                .map(|(v, _)| v)
                .sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
            for (v, m) in out.iter().zip(&mask) {
                if !m {
                    prop_assert_eq!(*v, 0.0);
                }
            }
        }

        #[test]
        fn cosine_stays_in_unit_range(
            u in proptest::collection::vec(-1.0_f64..1.0, 4),
            v in proptest::collection::vec(-1.0_f64..1.0, 4),
        ) {
            let mut g = Graph::new();
            let a = g.leaf(Tensor::vector(u));
            let b = g.leaf(Tensor::vector(v));
            let c = g.cosine(a, b).unwrap();
            let val = g.value(c).item();
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&val));
        }
    }
}
