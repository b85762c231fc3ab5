//! Dense tensors, the differentiable graph, and the gradient checker.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{
    grad_check, grad_check_detailed, grad_samples, GradCheckReport, GradSample, DEFAULT_EPS,
};
pub use graph::{BinaryKind, Gradients, Graph, NodeId, ReduceKind, UnaryKind, PROB_FLOOR};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn rand_t(shape: &[usize], seed: u64) -> Tensor {
        Tensor::uniform(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Weighted sum with fixed pseudo-random weights, so every output
    /// element carries a distinct upstream gradient.
    fn probe(g: &mut Graph, x: NodeId, seed: u64) -> NodeId {
        let w = g.constant(rand_t(g.shape(x), seed ^ 0xabc));
        let p = g.mul(x, w).unwrap();
        g.sum_all(p)
    }

    #[test]
    fn matmul_identity_and_hand_values() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::eye(2));
        let a = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let c = g.matmul(i, a).unwrap();
        assert_eq!(g.value(c).data(), &[1., 2., 3., 4.]);

        let r = g.constant(t(&[1, 2], &[1., 2.]));
        let col = g.constant(t(&[2, 1], &[3., 4.]));
        let c = g.matmul(r, col).unwrap();
        assert_eq!(g.value(c).data(), &[11.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3] by [2, 3]"), "{err}");
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let params = [rand_t(&[3, 4], 1), rand_t(&[4, 2], 2)];
        let err = grad_check(&params, DEFAULT_EPS, |g, p| {
            let c = g.matmul(p[0], p[1])?;
            Ok(g.sum_all(c))
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn unary_values() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::scalar(0.0));
        let th = g.tanh(z);
        let sg = g.sigmoid(z);
        assert_eq!(g.value(th).item(), 0.0);
        assert_eq!(g.value(sg).item(), 0.5);
    }

    #[test]
    fn tanh_gradient_at_point() {
        let err = grad_check(&[Tensor::scalar(0.7)], DEFAULT_EPS, |g, p| Ok(g.tanh(p[0]))).unwrap();
        assert!(err < 1e-6, "{err}");
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(0.7));
        let y = g.tanh(x);
        let d = g.backward(y).unwrap().get(x).unwrap().item();
        assert!((d - (1.0 - 0.7f64.tanh().powi(2))).abs() < 1e-15);
    }

    #[test]
    fn log_of_non_positive_is_domain_error() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[1.0, 0.0]));
        assert!(matches!(g.unary(UnaryKind::Log, x), Err(Error::Domain(_))));
    }

    #[test]
    fn binary_values() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2], &[1., 2.]));
        let z = g.constant(t(&[2], &[0., 0.]));
        let s = g.add(a, z).unwrap();
        assert_eq!(g.value(s).data(), &[1., 2.]);
        let x = g.constant(t(&[2], &[2., 3.]));
        let y = g.constant(t(&[2], &[4., 5.]));
        let p = g.mul(x, y).unwrap();
        assert_eq!(g.value(p).data(), &[8., 15.]);
    }

    #[test]
    fn broadcast_bias_gradient_is_column_sum() {
        let mut g = Graph::new();
        let x = g.constant(rand_t(&[3, 2], 3));
        let b = g.param(t(&[2], &[0.1, -0.2]));
        let y = g.add(x, b).unwrap();
        let up = rand_t(&[3, 2], 4);
        let w = g.constant(up.clone());
        let p = g.mul(y, w).unwrap();
        let loss = g.sum_all(p);
        let grads = g.backward(loss).unwrap();
        let db = grads.get(b).unwrap();
        for j in 0..2 {
            let col: f64 = (0..3).map(|i| up.data()[i * 2 + j]).sum();
            assert!((db.data()[j] - col).abs() < 1e-15);
        }
        let x0 = rand_t(&[3, 2], 3);
        let err = grad_check(&[x0, t(&[2], &[0.1, -0.2])], DEFAULT_EPS, |g, p| {
            let y = g.add(p[0], p[1])?;
            Ok(probe(g, y, 4))
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn non_broadcastable_is_dimension_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3, 2]));
        let y = g.constant(Tensor::zeros(&[3]));
        assert!(matches!(g.add(x, y), Err(Error::Dimension(_))));
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[4]));
        let y = g.softmax(x, 0).unwrap();
        assert_eq!(g.value(y).data(), &[0.25; 4]);

        let x = g.constant(t(&[2], &[0.0, 3f64.ln()]));
        let y = g.softmax(x, 0).unwrap();
        assert!((g.value(y).data()[0] - 0.25).abs() < 1e-15);
        assert!((g.value(y).data()[1] - 0.75).abs() < 1e-15);

        let base = [0.3, -1.2, 2.0];
        let x = g.constant(t(&[3], &base));
        let shifted = g.constant(t(&[3], &base.map(|v| v + 1000.0)));
        let a = g.softmax(x, 0).unwrap();
        let b = g.softmax(shifted, 0).unwrap();
        assert!(g.value(a).max_abs_diff(g.value(b)) < 1e-12);
    }

    #[test]
    fn reduce_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2], &[1., 5., 3., 2.]));
        let m = g.reduce(ReduceKind::Max, x, 0).unwrap();
        assert_eq!(g.value(m).data(), &[3., 5.]);
        let s = g.reduce(ReduceKind::Sum, x, 1).unwrap();
        assert_eq!(g.value(s).data(), &[6., 5.]);
        let mean = g.reduce(ReduceKind::Mean, x, 1).unwrap();
        assert_eq!(g.value(mean).data(), &[3., 2.5]);
        assert!(matches!(
            g.reduce(ReduceKind::Sum, x, 2),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn max_pool_gradient_is_one_hot_at_argmax() {
        let x0 = rand_t(&[4, 3], 11);
        let mut g = Graph::new();
        let x = g.param(x0.clone());
        let m = g.reduce(ReduceKind::Max, x, 0).unwrap();
        let loss = g.sum_all(m);
        let dx = g.backward(loss).unwrap().get(x).unwrap().clone();
        for col in 0..3 {
            // brute force over positions
            let mut best = 0;
            for row in 1..4 {
                if x0.get(&[row, col]) > x0.get(&[best, col]) {
                    best = row;
                }
            }
            for row in 0..4 {
                let expect = if row == best { 1.0 } else { 0.0 };
                assert_eq!(dx.get(&[row, col]), expect);
            }
        }
    }

    #[test]
    fn max_ties_route_to_first() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[2., 2., 1.]));
        let m = g.reduce(ReduceKind::Max, x, 0).unwrap();
        let dx = g.backward(m).unwrap().get(x).unwrap().clone();
        assert_eq!(dx.data(), &[1., 0., 0.]);
    }

    #[test]
    fn backward_examples() {
        let mut g = Graph::new();
        let w = g.param(rand_t(&[2, 3], 5));
        let unused = g.param(rand_t(&[4], 6));
        let loss = g.sum_all(w);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[1.0; 6]);
        assert_eq!(grads.get(unused).unwrap(), &Tensor::zeros(&[4]));

        let x = rand_t(&[2, 2], 7);
        let err = grad_check(&[rand_t(&[2, 2], 8)], DEFAULT_EPS, |g, p| {
            let xc = g.constant(x.clone());
            let wx = g.matmul(p[0], xc)?;
            let th = g.tanh(wx);
            Ok(g.sum_all(th))
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let w = g.param(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn grad_check_exact_for_linear() {
        let err = grad_check(&[rand_t(&[5], 9)], DEFAULT_EPS, |g, p| {
            let three = g.constant(Tensor::scalar(3.0));
            let s = g.mul(p[0], three)?;
            Ok(g.sum_all(s))
        })
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn grad_check_detects_corrupted_backward() {
        // tanh with the derivative of sigmoid-like shape 1 - y instead of 1 - y²
        fn bad_df(x: f64) -> f64 {
            1.0 - x.tanh()
        }
        let err = grad_check(&[rand_t(&[6], 10)], DEFAULT_EPS, |g, p| {
            let y = g.map(p[0], f64::tanh, bad_df);
            Ok(g.sum_all(y))
        })
        .unwrap();
        assert!(err > 1e-2, "{err}");
    }

    #[test]
    fn grad_check_rejects_non_scalar_output() {
        let res = grad_check(&[Tensor::zeros(&[2])], DEFAULT_EPS, |_, p| Ok(p[0]));
        assert!(matches!(res, Err(Error::Contract(_))));
        let res = grad_check(&[Tensor::zeros(&[1])], 0.0, |_, p| Ok(p[0]));
        assert!(matches!(res, Err(Error::Config(_))));
    }

    #[test]
    fn structural_ops_roundtrip_values() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 3, 2], &(0..12).map(f64::from).collect::<Vec<_>>()));
        let s = g.select(x, 1, 1).unwrap();
        assert_eq!(g.value(s).data(), &[2., 3., 8., 9.]);
        let n = g.narrow(x, 2, 1, 1).unwrap();
        assert_eq!(g.shape(n), &[2, 3, 1]);
        assert_eq!(g.value(n).data(), &[1., 3., 5., 7., 9., 11.]);
        let c = g.concat(&[x, x], 2).unwrap();
        assert_eq!(g.shape(c), &[2, 3, 4]);
        assert_eq!(&g.value(c).data()[..4], &[0., 1., 0., 1.]);
        let u = g.unfold(x, 2).unwrap();
        assert_eq!(g.shape(u), &[2, 2, 4]);
        assert_eq!(&g.value(u).data()[..8], &[0., 1., 2., 3., 2., 3., 4., 5.]);
        let a = g.constant(t(&[2], &[1., 2.]));
        let b = g.constant(t(&[2], &[3., 4.]));
        let st = g.stack(&[a, b], 1).unwrap();
        assert_eq!(g.value(st).data(), &[1., 3., 2., 4.]);
    }

    #[test]
    fn gather_skip_row0_reads_zero_and_freezes_first_row() {
        let mut g = Graph::new();
        let table = g.param(rand_t(&[4, 2], 12));
        let rows = g.gather_rows(table, &[0, 2, 2, 0], &[2, 2], true).unwrap();
        assert_eq!(&g.value(rows).data()[..2], &[0., 0.]);
        let loss = g.sum_all(rows);
        let d = g.backward(loss).unwrap().get(table).unwrap().clone();
        assert_eq!(d.data(), &[0., 0., 0., 0., 2., 2., 0., 0.]);
        assert!(matches!(
            g.gather_rows(table, &[4], &[1], true),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn nll_of_uniform_is_ln4() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::full(&[3, 4], 0.25));
        let l = g.nll(p, &[0, 3, 2]).unwrap();
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-15);
        assert!(matches!(g.nll(p, &[0, 4, 1]), Err(Error::Contract(_))));
    }

    /// One graph builder per differentiable op, each reduced to a scalar
    /// through a random probe.
    type OpFn = Box<dyn Fn(&mut Graph, &[NodeId]) -> crate::Result<NodeId>>;

    fn op_case(op: usize, seed: u64) -> (Vec<Tensor>, OpFn) {
        let s = seed;
        let positive = |shape: &[usize]| rand_t(shape, s).map(|v| v.abs() + 0.5);
        match op {
            0 => (
                vec![rand_t(&[3, 4], s), rand_t(&[4, 2], s + 1)],
                Box::new(move |g, p| {
                    let y = g.matmul(p[0], p[1])?;
                    Ok(probe(g, y, s))
                }),
            ),
            1 => (
                vec![rand_t(&[2, 3, 2], s), rand_t(&[2, 2, 3], s + 1)],
                Box::new(move |g, p| {
                    let y = g.batch_matmul(p[0], p[1])?;
                    Ok(probe(g, y, s))
                }),
            ),
            2 => (
                vec![rand_t(&[2, 5], s)],
                Box::new(move |g, p| {
                    let y = g.transpose(p[0])?;
                    Ok(probe(g, y, s))
                }),
            ),
            3..=8 => {
                let kind = [
                    UnaryKind::Tanh,
                    UnaryKind::Sigmoid,
                    UnaryKind::Relu,
                    UnaryKind::Exp,
                    UnaryKind::Log,
                    UnaryKind::Neg,
                ][op - 3];
                let x = if kind == UnaryKind::Log {
                    positive(&[7])
                } else {
                    rand_t(&[7], s)
                };
                (
                    vec![x],
                    Box::new(move |g, p| {
                        let y = g.unary(kind, p[0])?;
                        Ok(probe(g, y, s))
                    }),
                )
            }
            9..=11 => {
                let kind = [BinaryKind::Add, BinaryKind::Sub, BinaryKind::Mul][op - 9];
                (
                    vec![
                        rand_t(&[3, 4], s),
                        rand_t(&[4], s + 1),
                        rand_t(&[3, 4], s + 2),
                    ],
                    Box::new(move |g, p| {
                        let a = g.binary(kind, p[0], p[1])?;
                        let b = g.binary(kind, a, p[2])?;
                        Ok(probe(g, b, s))
                    }),
                )
            }
            12 => (
                vec![rand_t(&[2, 3, 4], s)],
                Box::new(move |g, p| {
                    let a = g.softmax(p[0], 1)?;
                    let b = g.softmax(p[0], 2)?;
                    let c = g.add(a, b)?;
                    Ok(probe(g, c, s))
                }),
            ),
            13..=15 => {
                let kind = [ReduceKind::Max, ReduceKind::Sum, ReduceKind::Mean][op - 13];
                (
                    vec![rand_t(&[3, 4, 2], s)],
                    Box::new(move |g, p| {
                        let y = g.reduce(kind, p[0], 1)?;
                        Ok(probe(g, y, s))
                    }),
                )
            }
            16 => (
                vec![rand_t(&[5, 3], s)],
                Box::new(move |g, p| {
                    let y = g.gather_rows(p[0], &[1, 4, 1, 0, 2, 0], &[2, 3], false)?;
                    Ok(probe(g, y, s))
                }),
            ),
            17 => (
                vec![rand_t(&[2, 3], s), rand_t(&[2, 1], s + 1)],
                Box::new(move |g, p| {
                    let c = g.concat(&[p[0], p[1], p[0]], 1)?;
                    let n = g.narrow(c, 1, 2, 3)?;
                    Ok(probe(g, n, s))
                }),
            ),
            18 => (
                vec![rand_t(&[2, 5, 3], s)],
                Box::new(move |g, p| {
                    let u = g.unfold(p[0], 3)?;
                    Ok(probe(g, u, s))
                }),
            ),
            19 => (
                vec![rand_t(&[2, 4], s)],
                Box::new(move |g, p| {
                    let m =
                        g.mask_fill(p[0], &[true, true, false, true, true, false, false, false])?;
                    let y = g.softmax(m, 1)?;
                    Ok(probe(g, y, s))
                }),
            ),
            20 => (
                vec![rand_t(&[3, 4], s)],
                Box::new(move |g, p| {
                    let y = g.softmax(p[0], 1)?;
                    g.nll(y, &[0, 3, 1])
                }),
            ),
            21 => (
                vec![rand_t(&[2, 3], s), rand_t(&[2, 3], s + 1)],
                Box::new(move |g, p| {
                    let st = g.stack(&[p[0], p[1]], 1)?;
                    let sel = g.select(st, 2, 1)?;
                    let r = g.reshape(sel, &[4])?;
                    Ok(probe(g, r, s))
                }),
            ),
            _ => unreachable!(),
        }
    }

    const OP_CASES: usize = 22;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn every_op_passes_grad_check(seed in 0u64..1_000_000) {
            for op in 0..OP_CASES {
                let (params, build) = op_case(op, seed);
                let err = grad_check(&params, DEFAULT_EPS, |g, p| build(g, p)).unwrap();
                prop_assert!(err < 1e-4, "op case {} seed {}: {}", op, seed, err);
            }
        }

        #[test]
        fn softmax_slices_are_distributions(
            data in proptest::collection::vec(-10.0f64..10.0, 12),
            shift in -500.0f64..500.0,
        ) {
            let mut g = Graph::new();
            let x = g.constant(Tensor::new(vec![3, 4], data.clone()).unwrap());
            let xs = g.constant(Tensor::new(vec![3, 4], data.iter().map(|v| v + shift).collect()).unwrap());
            let y = g.softmax(x, 1).unwrap();
            let ys = g.softmax(xs, 1).unwrap();
            for r in 0..3 {
                let row = g.value(y).row(r);
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
            }
            prop_assert!(g.value(y).max_abs_diff(g.value(ys)) < 1e-12);
        }

        #[test]
        fn matmul_is_associative(seed in 0u64..1_000_000) {
            let mut g = Graph::new();
            let a = g.constant(rand_t(&[2, 3], seed));
            let b = g.constant(rand_t(&[3, 4], seed + 1));
            let c = g.constant(rand_t(&[4, 2], seed + 2));
            let ab = g.matmul(a, b).unwrap();
            let left = g.matmul(ab, c).unwrap();
            let bc = g.matmul(b, c).unwrap();
            let right = g.matmul(a, bc).unwrap();
            prop_assert!(g.value(left).max_abs_diff(g.value(right)) < 1e-9);
        }

        #[test]
        fn backward_is_deterministic(seed in 0u64..1_000_000) {
            let run = || {
                let (params, build) = op_case((seed % OP_CASES as u64) as usize, seed);
                let mut g = Graph::new();
                let ids: Vec<_> = params.into_iter().map(|p| g.param(p)).collect();
                let loss = build(&mut g, &ids).unwrap();
                let grads = g.backward(loss).unwrap();
                ids.iter().map(|&i| grads.get(i).unwrap().clone()).collect::<Vec<_>>()
            };
            let (a, b) = (run(), run());
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
            }
        }
    }
}
