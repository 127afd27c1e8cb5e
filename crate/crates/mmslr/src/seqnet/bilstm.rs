//! Single-layer bidirectional LSTM. Hidden size is d/2 per direction so the
//! concatenated output keeps width d before the output projection.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct BiLstmParams {
    pub wx_fwd: ParamId,
    pub wh_fwd: ParamId,
    pub b_fwd: ParamId,
    pub wx_bwd: ParamId,
    pub wh_bwd: ParamId,
    pub b_bwd: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub d: usize,
    pub hidden: usize,
}

struct CellVars {
    wx: Var,
    wh: Var,
    b: Var,
}

impl BiLstmParams {
    pub fn init(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut Rng) -> Result<Self> {
        if d % 2 != 0 {
            return Err(Error::Config(format!(
                "BiLSTM needs an even feature dim, got {d}"
            )));
        }
        let h = d / 2;
        let dir = |store: &mut ParamStore, rng: &mut Rng, tag: &str| {
            (
                store.register(
                    format!("{prefix}.{tag}.wx"),
                    rng.tensor_xavier(vec![d, 4 * h], d, 4 * h),
                ),
                store.register(
                    format!("{prefix}.{tag}.wh"),
                    rng.tensor_xavier(vec![h, 4 * h], h, 4 * h),
                ),
                store.register(format!("{prefix}.{tag}.b"), Tensor::zeros(vec![4 * h])),
            )
        };
        let (wx_fwd, wh_fwd, b_fwd) = dir(store, rng, "fwd");
        let (wx_bwd, wh_bwd, b_bwd) = dir(store, rng, "bwd");
        Ok(BiLstmParams {
            wx_fwd,
            wh_fwd,
            b_fwd,
            wx_bwd,
            wh_bwd,
            b_bwd,
            proj_w: store.register(
                format!("{prefix}.proj.w"),
                rng.tensor_xavier(vec![2 * h, d], 2 * h, d),
            ),
            proj_b: store.register(format!("{prefix}.proj.b"), Tensor::zeros(vec![d])),
            d,
            hidden: h,
        })
    }

    /// Run one direction over the given timestep order, returning hidden
    /// state rows in input order.
    fn run_direction(
        &self,
        tape: &mut Tape,
        xs: &[Var],
        cell: &CellVars,
        reverse: bool,
    ) -> Result<Vec<Var>> {
        let h = self.hidden;
        let n = xs.len();
        let mut hs: Vec<Option<Var>> = vec![None; n];
        let mut h_prev = tape.constant(Tensor::zeros(vec![1, h]));
        let mut c_prev = tape.constant(Tensor::zeros(vec![1, h]));
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for t in order {
            let zx = tape.matmul(xs[t], cell.wx)?;
            let zh = tape.matmul(h_prev, cell.wh)?;
            let z = tape.add(zx, zh)?;
            let z = tape.add_bias(z, cell.b)?;
            let i_gate = {
                let s = tape.slice_cols(z, 0, h)?;
                tape.sigmoid(s)
            };
            let f_gate = {
                let s = tape.slice_cols(z, h, 2 * h)?;
                tape.sigmoid(s)
            };
            let g_gate = {
                let s = tape.slice_cols(z, 2 * h, 3 * h)?;
                tape.tanh(s)
            };
            let o_gate = {
                let s = tape.slice_cols(z, 3 * h, 4 * h)?;
                tape.sigmoid(s)
            };
            let keep = tape.mul(f_gate, c_prev)?;
            let write = tape.mul(i_gate, g_gate)?;
            let c = tape.add(keep, write)?;
            let c_act = tape.tanh(c);
            let h_new = tape.mul(o_gate, c_act)?;
            hs[t] = Some(h_new);
            h_prev = h_new;
            c_prev = c;
        }
        Ok(hs.into_iter().map(|v| v.expect("all timesteps visited")).collect())
    }

    /// Full bidirectional pass: same length out, each frame conditioned on
    /// the whole sequence.
    pub fn forward(&self, tape: &mut Tape, x: Var, leaves: &[Var]) -> Result<Var> {
        let n = tape.value(x).rows();
        let xs: Vec<Var> = (0..n)
            .map(|t| tape.slice_rows(x, t, t + 1))
            .collect::<Result<_>>()?;
        let fwd_cell = CellVars {
            wx: leaves[self.wx_fwd.0],
            wh: leaves[self.wh_fwd.0],
            b: leaves[self.b_fwd.0],
        };
        let bwd_cell = CellVars {
            wx: leaves[self.wx_bwd.0],
            wh: leaves[self.wh_bwd.0],
            b: leaves[self.b_bwd.0],
        };
        let hs_fwd = self.run_direction(tape, &xs, &fwd_cell, false)?;
        let hs_bwd = self.run_direction(tape, &xs, &bwd_cell, true)?;
        let rows: Vec<Var> = hs_fwd
            .iter()
            .zip(&hs_bwd)
            .map(|(&f, &b)| tape.concat_cols(&[f, b]))
            .collect::<Result<_>>()?;
        let stacked = tape.concat_rows(&rows)?;
        let projected = tape.matmul(stacked, leaves[self.proj_w.0])?;
        tape.add_bias(projected, leaves[self.proj_b.0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(d: usize, seed: u64) -> (ParamStore, BiLstmParams, Rng) {
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let params = BiLstmParams::init(&mut store, "bilstm", d, &mut rng).unwrap();
        (store, params, rng)
    }

    #[test]
    fn odd_dim_rejected() {
        let mut rng = Rng::new(1);
        let mut store = ParamStore::new();
        assert!(BiLstmParams::init(&mut store, "b", 5, &mut rng).is_err());
    }

    #[test]
    fn zero_weights_emit_projected_zero() {
        let mut store = ParamStore::new();
        let d = 4;
        let h = 2;
        let z = |store: &mut ParamStore, name: &str, shape: Vec<usize>| {
            store.register(name, Tensor::zeros(shape))
        };
        let params = BiLstmParams {
            wx_fwd: z(&mut store, "wx_f", vec![d, 4 * h]),
            wh_fwd: z(&mut store, "wh_f", vec![h, 4 * h]),
            b_fwd: z(&mut store, "b_f", vec![4 * h]),
            wx_bwd: z(&mut store, "wx_b", vec![d, 4 * h]),
            wh_bwd: z(&mut store, "wh_b", vec![h, 4 * h]),
            b_bwd: z(&mut store, "b_b", vec![4 * h]),
            proj_w: z(&mut store, "pw", vec![2 * h, d]),
            proj_b: z(&mut store, "pb", vec![d]),
            d,
            hidden: h,
        };
        let mut rng = Rng::new(2);
        let mut tape = Tape::new();
        let leaves = store.leaves(&mut tape);
        let x = tape.constant(rng.tensor_normal(vec![3, d], 1.0));
        let out = params.forward(&mut tape, x, &leaves).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_direction_carries_last_frame_to_first_output() {
        let (store, params, mut rng) = setup(4, 3);
        let base = rng.tensor_normal(vec![4, 4], 1.0);
        let mut perturbed = base.clone();
        perturbed.data_mut()[3 * 4] += 1.0; // last frame, first channel

        let run = |input: &Tensor| -> Tensor {
            let mut tape = Tape::new();
            let leaves = store.leaves(&mut tape);
            let x = tape.constant(input.clone());
            let out = params.forward(&mut tape, x, &leaves).unwrap();
            tape.value(out).clone()
        };
        let a = run(&base);
        let b = run(&perturbed);
        let delta_first: f64 = (0..4).map(|c| (a.at2(0, c) - b.at2(0, c)).abs()).sum();
        assert!(delta_first > 0.0);
    }

    #[test]
    fn every_output_depends_on_every_input_frame() {
        let (store, params, mut rng) = setup(4, 4);
        let base = rng.tensor_normal(vec![3, 4], 1.0);
        let run = |input: &Tensor| -> Tensor {
            let mut tape = Tape::new();
            let leaves = store.leaves(&mut tape);
            let x = tape.constant(input.clone());
            let out = params.forward(&mut tape, x, &leaves).unwrap();
            tape.value(out).clone()
        };
        let a = run(&base);
        for t_in in 0..3 {
            let mut p = base.clone();
            p.data_mut()[t_in * 4 + 1] += 0.5;
            let b = run(&p);
            for t_out in 0..3 {
                let delta: f64 = (0..4).map(|c| (a.at2(t_out, c) - b.at2(t_out, c)).abs()).sum();
                assert!(delta > 0.0, "output {t_out} insensitive to input {t_in}");
            }
        }
    }

    #[test]
    fn lstm_parameter_gradients_match_finite_differences() {
        use crate::gradcheck::grad_check;
        let (store, params, mut rng) = setup(4, 5);
        let x = rng.tensor_normal(vec![3, 4], 1.0);
        let values: Vec<Tensor> = std::iter::once(x.clone())
            .chain(store.iter().map(|(_, t)| t.clone()))
            .collect();
        let err = grad_check(
            |tape, vars| {
                let leaves = vars[1..].to_vec();
                let out = params.forward(tape, vars[0], &leaves)?;
                Ok(tape.reduce_sum(out))
            },
            &values,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "err = {err}");
    }
}
