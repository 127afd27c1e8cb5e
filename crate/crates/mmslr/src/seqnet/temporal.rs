//! Temporal dimension reduction: conv1d(k=5) -> maxpool(2) -> conv1d(k=5)
//! -> maxpool(2), shrinking the frame axis to 1/4 (up to ceiling on odd
//! lengths) while preserving the channel dimension.

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const KERNEL: usize = 5;

#[derive(Debug, Clone)]
pub struct TemporalReducer {
    pub conv1_w: ParamId,
    pub conv1_b: ParamId,
    pub conv2_w: ParamId,
    pub conv2_b: ParamId,
    pub d: usize,
}

/// Output length after the two pool stages.
pub fn reduced_len(n: usize) -> usize {
    n.div_ceil(2).div_ceil(2)
}

impl TemporalReducer {
    pub fn init(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut Rng) -> Self {
        let fan = KERNEL * d;
        TemporalReducer {
            conv1_w: store.register(
                format!("{prefix}.conv1.w"),
                rng.tensor_xavier(vec![KERNEL, d, d], fan, fan),
            ),
            conv1_b: store.register(format!("{prefix}.conv1.b"), Tensor::zeros(vec![d])),
            conv2_w: store.register(
                format!("{prefix}.conv2.w"),
                rng.tensor_xavier(vec![KERNEL, d, d], fan, fan),
            ),
            conv2_b: store.register(format!("{prefix}.conv2.b"), Tensor::zeros(vec![d])),
            d,
        }
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b]
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, leaves: &[Var]) -> Result<Var> {
        let h = tape.conv1d_same(x, leaves[self.conv1_w.0], leaves[self.conv1_b.0])?;
        let h = tape.maxpool1d_2(h)?;
        let h = tape.conv1d_same(h, leaves[self.conv2_w.0], leaves[self.conv2_b.0])?;
        tape.maxpool1d_2(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_reducer(store: &mut ParamStore, d: usize) -> TemporalReducer {
        // center tap 1 makes each conv a passthrough
        let mut w = Tensor::zeros(vec![KERNEL, d, d]);
        for i in 0..d {
            w.data_mut()[((KERNEL / 2) * d + i) * d + i] = 1.0;
        }
        TemporalReducer {
            conv1_w: store.register("t.conv1.w", w.clone()),
            conv1_b: store.register("t.conv1.b", Tensor::zeros(vec![d])),
            conv2_w: store.register("t.conv2.w", w),
            conv2_b: store.register("t.conv2.b", Tensor::zeros(vec![d])),
            d,
        }
    }

    #[test]
    fn sixteen_frames_reduce_to_four() {
        let mut rng = Rng::new(1);
        let mut store = ParamStore::new();
        let reducer = TemporalReducer::init(&mut store, "t", 3, &mut rng);
        let mut tape = Tape::new();
        let leaves = store.leaves(&mut tape);
        let x = tape.constant(rng.tensor_normal(vec![16, 3], 1.0));
        let out = reducer.forward(&mut tape, x, &leaves).unwrap();
        assert_eq!(tape.value(out).shape(), &[4, 3]);
    }

    #[test]
    fn identity_convs_select_last_of_increasing_frames() {
        // n=4 strictly increasing: pool1 keeps frames {2,4}, pool2 keeps {4}
        let mut store = ParamStore::new();
        let reducer = identity_reducer(&mut store, 2);
        let mut tape = Tape::new();
        let leaves = store.leaves(&mut tape);
        let x = tape.constant(
            Tensor::from_rows(&[
                vec![1.0, 10.0],
                vec![2.0, 20.0],
                vec![3.0, 30.0],
                vec![4.0, 40.0],
            ])
            .unwrap(),
        );
        let out = reducer.forward(&mut tape, x, &leaves).unwrap();
        assert_eq!(tape.value(out).shape(), &[1, 2]);
        assert_eq!(tape.value(out).data(), &[4.0, 40.0]);
    }

    #[test]
    fn length_formula_holds_exhaustively() {
        let mut rng = Rng::new(2);
        let mut store = ParamStore::new();
        let reducer = TemporalReducer::init(&mut store, "t", 2, &mut rng);
        for n in 4..=64 {
            let mut tape = Tape::new();
            let leaves = store.leaves(&mut tape);
            let x = tape.constant(rng.tensor_normal(vec![n, 2], 1.0));
            let out = reducer.forward(&mut tape, x, &leaves).unwrap();
            assert_eq!(tape.value(out).rows(), reduced_len(n), "n = {n}");
        }
    }

    #[test]
    fn gradients_flow_through_reduction() {
        use crate::gradcheck::grad_check;
        let mut rng = Rng::new(3);
        let x = rng.tensor_normal(vec![8, 2], 1.0);
        let w1 = rng.tensor_xavier(vec![KERNEL, 2, 2], 10, 10);
        let b1 = rng.tensor_normal(vec![2], 0.1);
        let w2 = rng.tensor_xavier(vec![KERNEL, 2, 2], 10, 10);
        let b2 = rng.tensor_normal(vec![2], 0.1);
        let err = grad_check(
            |tape, vars| {
                let h = tape.conv1d_same(vars[0], vars[1], vars[2])?;
                let h = tape.maxpool1d_2(h)?;
                let h = tape.conv1d_same(h, vars[3], vars[4])?;
                let h = tape.maxpool1d_2(h)?;
                let sq = tape.mul(h, h)?;
                Ok(tape.reduce_sum(sq))
            },
            &[x, w1, b1, w2, b2],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "err = {err}");
    }
}
