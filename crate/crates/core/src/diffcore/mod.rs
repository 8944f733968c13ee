//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Operations execute eagerly and are recorded on a [`Tape`]; [`Tape::backward`]
//! walks the tape in reverse from a scalar root. Operands used by several
//! consumers accumulate their gradients.

mod check;
mod tape;
mod tensor;

pub use check::{finite_diff_check, GradCheck};
pub use tape::{CustomOp, Gradients, NodeId, OpKind, Tape};
pub use tensor::{log_softmax_slice, softmax_slice, Tensor};

#[cfg(test)]
mod props {
    use super::*;
    use crate::error::Result;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-2.0..2.0))
    }

    type Builder = fn(&mut Tape, NodeId, &[NodeId]) -> Result<NodeId>;

    /// Every op kind, each reduced to a scalar through a fixed random
    /// weighting so that all output coordinates matter.
    fn cases() -> Vec<(&'static str, Vec<usize>, Vec<Vec<usize>>, Builder)> {
        vec![
            ("add", vec![4], vec![vec![4]], |t, x, o| t.add(x, o[0])),
            ("sub", vec![4], vec![vec![4]], |t, x, o| t.sub(o[0], x)),
            ("mul", vec![4], vec![vec![4]], |t, x, o| t.mul(x, o[0])),
            ("matmul_left", vec![2, 3], vec![vec![3, 4]], |t, x, o| t.matmul(x, o[0])),
            ("matmul_right", vec![3, 4], vec![vec![2, 3]], |t, x, o| t.matmul(o[0], x)),
            ("matvec_matrix", vec![3, 4], vec![vec![4]], |t, x, o| t.matvec(x, o[0])),
            ("matvec_vector", vec![4], vec![vec![3, 4]], |t, x, o| t.matvec(o[0], x)),
            ("tanh", vec![5], vec![], |t, x, _| t.tanh(x)),
            ("exp", vec![5], vec![], |t, x, _| t.exp(x)),
            ("softmax", vec![2, 4], vec![], |t, x, _| t.softmax(x)),
            ("log_softmax", vec![2, 4], vec![], |t, x, _| t.log_softmax(x)),
            ("gather", vec![4, 3], vec![], |t, x, _| t.gather(x, vec![3, 0, 3])),
            ("concat", vec![2, 3], vec![vec![1, 3]], |t, x, o| t.concat(&[o[0], x])),
            ("mean", vec![6], vec![], |t, x, _| t.mean(x)),
            ("mean_rows", vec![3, 4], vec![], |t, x, _| t.mean_rows(x)),
            ("sum", vec![6], vec![], |t, x, _| t.sum(x)),
            ("scale", vec![3], vec![], |t, x, _| t.scale(x, -1.7)),
            ("reshape", vec![2, 3], vec![], |t, x, _| t.reshape(x, vec![6])),
        ]
    }

    #[test]
    fn every_op_matches_finite_differences() {
        for (name, shape, others, build) in cases() {
            for seed in 0..10u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = random_tensor(&mut rng, &shape);
                let others: Vec<Tensor> = others.iter().map(|s| random_tensor(&mut rng, s)).collect();
                let check = finite_diff_check(
                    |t, leaf| {
                        let ids: Vec<NodeId> = others.iter().map(|o| t.constant(o.clone())).collect();
                        let y = build(t, leaf, &ids)?;
                        let shape = t.value(y).shape().to_vec();
                        let mut wrng = ChaCha8Rng::seed_from_u64(1000 + seed);
                        let w = t.constant(random_tensor(&mut wrng, &shape));
                        let weighted = t.mul(y, w)?;
                        t.sum(weighted)
                    },
                    &x,
                    1e-5,
                )
                .unwrap();
                assert!(check.max_rel_error <= 1e-4, "{name} seed {seed}: {check:?}");
            }
        }
    }

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let s: Vec<f64> = (0..7).map(|_| rng.random_range(-20.0..20.0)).collect();
            let c = rng.random_range(-50.0..50.0);
            let p = softmax_slice(&s);
            let shifted: Vec<f64> = s.iter().map(|v| v + c).collect();
            let q = softmax_slice(&shifted);
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for (a, b) in p.iter().zip(&q) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn backward_is_bit_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut tape = Tape::new();
            let w = tape.leaf(random_tensor(&mut rng, &[4, 5]));
            let v = tape.leaf(random_tensor(&mut rng, &[5]));
            let h = tape.matvec(w, v).unwrap();
            let h = tape.tanh(h).unwrap();
            let l = tape.log_softmax(h).unwrap();
            let pick = tape.gather(l, vec![2]).unwrap();
            let root = tape.sum(pick).unwrap();
            let g = tape.backward(root).unwrap();
            (g.get(w).unwrap().clone(), g.get(v).unwrap().clone())
        };
        let (a, b) = (run(), run());
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.0), bits(&b.0));
        assert_eq!(bits(&a.1), bits(&b.1));
    }
}
