//! Per-timestep affine classifier head over the gloss vocabulary plus blank.

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    /// vocab size + 1 (blank at index 0)
    pub out_dim: usize,
}

impl ClassifierHead {
    pub fn init(store: &mut ParamStore, prefix: &str, in_dim: usize, vocab: usize, rng: &mut Rng) -> Self {
        let out_dim = vocab + 1;
        ClassifierHead {
            w: store.register(
                format!("{prefix}.w"),
                rng.tensor_xavier(vec![in_dim, out_dim], in_dim, out_dim),
            ),
            b: store.register(format!("{prefix}.b"), Tensor::zeros(vec![out_dim])),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, leaves: &[Var]) -> Result<Var> {
        let z = tape.matmul(x, leaves[self.w.0])?;
        tape.add_bias(z, leaves[self.b.0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_emit_bias_everywhere() {
        let mut store = ParamStore::new();
        let head = ClassifierHead {
            w: store.register("w", Tensor::zeros(vec![3, 4])),
            b: store.register("b", Tensor::new(vec![4], vec![0.1, 0.2, 0.3, 0.4]).unwrap()),
            in_dim: 3,
            out_dim: 4,
        };
        let mut rng = Rng::new(1);
        let mut tape = Tape::new();
        let leaves = store.leaves(&mut tape);
        let x = tape.constant(rng.tensor_normal(vec![5, 3], 1.0));
        let out = head.forward(&mut tape, x, &leaves).unwrap();
        for t in 0..5 {
            assert_eq!(tape.value(out).row(t), &[0.1, 0.2, 0.3, 0.4]);
        }
    }

    #[test]
    fn identity_weight_is_passthrough() {
        let mut store = ParamStore::new();
        let mut w = Tensor::zeros(vec![3, 3]);
        for i in 0..3 {
            w.set2(i, i, 1.0);
        }
        let head = ClassifierHead {
            w: store.register("w", w),
            b: store.register("b", Tensor::zeros(vec![3])),
            in_dim: 3,
            out_dim: 3,
        };
        let mut rng = Rng::new(2);
        let x_val = rng.tensor_normal(vec![2, 3], 1.0);
        let mut tape = Tape::new();
        let leaves = store.leaves(&mut tape);
        let x = tape.constant(x_val.clone());
        let out = head.forward(&mut tape, x, &leaves).unwrap();
        assert_eq!(tape.value(out).data(), x_val.data());
    }

    #[test]
    fn random_case_matches_dense_oracle() {
        let mut rng = Rng::new(3);
        let mut store = ParamStore::new();
        let head = ClassifierHead::init(&mut store, "cls", 4, 2, &mut rng);
        let x_val = rng.tensor_normal(vec![3, 4], 1.0);
        let mut tape = Tape::new();
        let leaves = store.leaves(&mut tape);
        let x = tape.constant(x_val.clone());
        let out = head.forward(&mut tape, x, &leaves).unwrap();
        let w = store.value(head.w);
        let b = store.value(head.b);
        for t in 0..3 {
            for o in 0..3 {
                let mut acc = b.data()[o];
                for i in 0..4 {
                    acc += x_val.at2(t, i) * w.at2(i, o);
                }
                assert!((tape.value(out).at2(t, o) - acc).abs() < 1e-12);
            }
        }
    }
}
