//! Cross-modal attention fusion of RGB and optical-flow feature streams,
//! plus the two baseline combination strategies it is compared against
//! (elementwise summation and logit-level ensembling).
//!
//! Convention: features are rows (n x d). Attention weights are
//! `A = softmax(Q K^T / sqrt(d_k))` over the key axis, so each row (one
//! query position) sums to 1.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Flow,
}

/// One modality's per-frame feature matrix (n frames x d dims).
#[derive(Debug, Clone)]
pub struct FeatureSequence {
    pub modality: Modality,
    pub frames: Tensor,
}

impl FeatureSequence {
    pub fn new(modality: Modality, frames: Tensor) -> Result<Self> {
        if frames.shape().len() != 2 {
            return Err(Error::InvalidShape {
                op: "FeatureSequence::new",
                shape: frames.shape().to_vec(),
                reason: "expected n x d matrix".into(),
            });
        }
        if !frames.all_finite() {
            return Err(Error::NonFinite { context: "feature sequence".into() });
        }
        Ok(FeatureSequence { modality, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

/// Check that two sequences form a valid fusion pair (equal n and d).
pub fn check_paired(r: &FeatureSequence, f: &FeatureSequence) -> Result<()> {
    if r.frames.shape() != f.frames.shape() {
        return Err(Error::ShapeMismatch {
            op: "fusion pair",
            lhs: r.frames.shape().to_vec(),
            rhs: f.frames.shape().to_vec(),
        });
    }
    Ok(())
}

/// Projection matrices for one attention direction: query/key/value maps
/// plus the output projection, all d x d, no biases.
#[derive(Debug, Clone, Copy)]
pub struct DirectionVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_out: Var,
}

/// Tape handles for the full fusion parameter set.
#[derive(Debug, Clone, Copy)]
pub struct FusionVars {
    /// flow queries, rgb keys/values -> flow-attended RGB stream
    pub fr: DirectionVars,
    /// rgb queries, flow keys/values -> rgb-attended flow stream
    pub rf: DirectionVars,
    pub w1: Var,
    pub w2: Var,
    pub w3: Var,
}

/// Registered fusion parameters: eight d x d matrices and three trainable
/// scalar mixing weights.
#[derive(Debug, Clone)]
pub struct FusionParams {
    pub fr_q: ParamId,
    pub fr_k: ParamId,
    pub fr_v: ParamId,
    pub fr_out: ParamId,
    pub rf_q: ParamId,
    pub rf_k: ParamId,
    pub rf_v: ParamId,
    pub rf_out: ParamId,
    pub w1: ParamId,
    pub w2: ParamId,
    pub w3: ParamId,
    pub d: usize,
}

impl FusionParams {
    /// Xavier-uniform matrices; mixing weights start at (1, 0.1, 0.1) so the
    /// initial model sits near the RGB-only baseline.
    pub fn init(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut Rng) -> Self {
        let mat = |store: &mut ParamStore, rng: &mut Rng, name: &str| {
            store.register(format!("{prefix}.{name}"), rng.tensor_xavier(vec![d, d], d, d))
        };
        FusionParams {
            fr_q: mat(store, rng, "fr.w_q"),
            fr_k: mat(store, rng, "fr.w_k"),
            fr_v: mat(store, rng, "fr.w_v"),
            fr_out: mat(store, rng, "fr.w_out"),
            rf_q: mat(store, rng, "rf.w_q"),
            rf_k: mat(store, rng, "rf.w_k"),
            rf_v: mat(store, rng, "rf.w_v"),
            rf_out: mat(store, rng, "rf.w_out"),
            w1: store.register(format!("{prefix}.w1"), Tensor::scalar(1.0)),
            w2: store.register(format!("{prefix}.w2"), Tensor::scalar(0.1)),
            w3: store.register(format!("{prefix}.w3"), Tensor::scalar(0.1)),
            d,
        }
    }

    pub fn vars(&self, leaves: &[Var]) -> FusionVars {
        FusionVars {
            fr: DirectionVars {
                w_q: leaves[self.fr_q.0],
                w_k: leaves[self.fr_k.0],
                w_v: leaves[self.fr_v.0],
                w_out: leaves[self.fr_out.0],
            },
            rf: DirectionVars {
                w_q: leaves[self.rf_q.0],
                w_k: leaves[self.rf_k.0],
                w_v: leaves[self.rf_v.0],
                w_out: leaves[self.rf_out.0],
            },
            w1: leaves[self.w1.0],
            w2: leaves[self.w2.0],
            w3: leaves[self.w3.0],
        }
    }
}

/// Single-direction cross attention: queries from one modality, keys and
/// values from the other. Returns the attended, output-projected stream.
pub fn cross_attend(tape: &mut Tape, query_src: Var, kv_src: Var, p: &DirectionVars) -> Result<Var> {
    let qs = tape.value(query_src);
    let ks = tape.value(kv_src);
    if qs.rows() == 0 {
        return Err(Error::InvalidInput { op: "cross_attend", reason: "empty sequence".into() });
    }
    if qs.shape() != ks.shape() {
        return Err(Error::ShapeMismatch {
            op: "cross_attend",
            lhs: qs.shape().to_vec(),
            rhs: ks.shape().to_vec(),
        });
    }
    let d_k = qs.cols();
    let q = tape.matmul(query_src, p.w_q)?;
    let k = tape.matmul(kv_src, p.w_k)?;
    let v = tape.matmul(kv_src, p.w_v)?;
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (d_k as f64).sqrt());
    let weights = tape.softmax(scaled, 1)?;
    let mixed = tape.matmul(weights, v)?;
    tape.matmul(mixed, p.w_out)
}

/// Cross-modal attention fusion: `mm = w1*r + w2*fr + w3*rf`. Raw flow
/// features contribute only through attention, never additively.
pub fn fuse_cma(tape: &mut Tape, r: Var, f: Var, p: &FusionVars) -> Result<Var> {
    let fr = cross_attend(tape, f, r, &p.fr)?;
    let rf = cross_attend(tape, r, f, &p.rf)?;
    let t1 = tape.scalar_mul(p.w1, r)?;
    let t2 = tape.scalar_mul(p.w2, fr)?;
    let t3 = tape.scalar_mul(p.w3, rf)?;
    let s = tape.add(t1, t2)?;
    tape.add(s, t3)
}

/// Baseline: elementwise summation of the two streams.
pub fn fuse_sum(tape: &mut Tape, r: Var, f: Var) -> Result<Var> {
    tape.add(r, f)
}

/// Baseline: average the per-timestep log-probabilities of two
/// independently trained branch outputs.
pub fn fuse_ensemble(tape: &mut Tape, logits_rgb: Var, logits_flow: Var) -> Result<Var> {
    if tape.value(logits_rgb).shape() != tape.value(logits_flow).shape() {
        return Err(Error::ShapeMismatch {
            op: "fuse_ensemble",
            lhs: tape.value(logits_rgb).shape().to_vec(),
            rhs: tape.value(logits_flow).shape().to_vec(),
        });
    }
    let la = tape.log_softmax(logits_rgb, 1)?;
    let lb = tape.log_softmax(logits_flow, 1)?;
    let s = tape.add(la, lb)?;
    Ok(tape.scale(s, 0.5))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(d: usize) -> Tensor {
        let mut t = Tensor::zeros(vec![d, d]);
        for i in 0..d {
            t.set2(i, i, 1.0);
        }
        t
    }

    fn identity_dir(tape: &mut Tape, d: usize) -> DirectionVars {
        DirectionVars {
            w_q: tape.param(identity(d)),
            w_k: tape.param(identity(d)),
            w_v: tape.param(identity(d)),
            w_out: tape.param(identity(d)),
        }
    }

    #[test]
    fn single_frame_attention_is_identity() {
        let mut tape = Tape::new();
        let dir = identity_dir(&mut tape, 3);
        let q = tape.param(Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap());
        let kv = tape.param(Tensor::new(vec![1, 3], vec![7.0, 8.0, 9.0]).unwrap());
        let out = cross_attend(&mut tape, q, kv, &dir).unwrap();
        assert_eq!(tape.value(out).data(), &[7.0, 8.0, 9.0]);
    }

    #[test]
    fn identical_kv_frames_split_attention_evenly() {
        let mut tape = Tape::new();
        let dir = identity_dir(&mut tape, 2);
        let q = tape.param(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let kv = tape.param(Tensor::new(vec![2, 2], vec![3.0, 4.0, 3.0, 4.0]).unwrap());
        let out = cross_attend(&mut tape, q, kv, &dir).unwrap();
        for r in 0..2 {
            assert!((tape.value(out).at2(r, 0) - 3.0).abs() < 1e-12);
            assert!((tape.value(out).at2(r, 1) - 4.0).abs() < 1e-12);
        }
    }

    /// Straight-line re-implementation with explicit loops, independent of
    /// the tensor engine.
    fn oracle_cross_attend(
        q_src: &[Vec<f64>],
        kv_src: &[Vec<f64>],
        wq: &[Vec<f64>],
        wk: &[Vec<f64>],
        wv: &[Vec<f64>],
        wo: &[Vec<f64>],
    ) -> Vec<Vec<f64>> {
        let n = q_src.len();
        let d = q_src[0].len();
        let proj = |x: &[Vec<f64>], w: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let mut out = vec![vec![0.0; d]; x.len()];
            for i in 0..x.len() {
                for j in 0..d {
                    for k in 0..d {
                        out[i][j] += x[i][k] * w[k][j];
                    }
                }
            }
            out
        };
        let q = proj(q_src, wq);
        let k = proj(kv_src, wk);
        let v = proj(kv_src, wv);
        let mut attn = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mut row = vec![0.0; n];
            for s in 0..n {
                let mut dot = 0.0;
                for c in 0..d {
                    dot += q[i][c] * k[s][c];
                }
                row[s] = dot / (d as f64).sqrt();
            }
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - mx).exp()).sum();
            for s in 0..n {
                attn[i][s] = (row[s] - mx).exp() / z;
            }
        }
        let mut mixed = vec![vec![0.0; d]; n];
        for i in 0..n {
            for c in 0..d {
                for s in 0..n {
                    mixed[i][c] += attn[i][s] * v[s][c];
                }
            }
        }
        proj(&mixed, wo)
    }

    #[test]
    fn cross_attend_matches_dense_oracle() {
        let mut rng = Rng::new(42);
        let n = 3;
        let d = 4;
        let randmat = |rng: &mut Rng, rows: usize| -> Vec<Vec<f64>> {
            (0..rows).map(|_| (0..d).map(|_| rng.normal()).collect()).collect()
        };
        let q_src = randmat(&mut rng, n);
        let kv_src = randmat(&mut rng, n);
        let wq = randmat(&mut rng, d);
        let wk = randmat(&mut rng, d);
        let wv = randmat(&mut rng, d);
        let wo = randmat(&mut rng, d);
        let expected = oracle_cross_attend(&q_src, &kv_src, &wq, &wk, &wv, &wo);

        let mut tape = Tape::new();
        let dir = DirectionVars {
            w_q: tape.param(Tensor::from_rows(&wq).unwrap()),
            w_k: tape.param(Tensor::from_rows(&wk).unwrap()),
            w_v: tape.param(Tensor::from_rows(&wv).unwrap()),
            w_out: tape.param(Tensor::from_rows(&wo).unwrap()),
        };
        let q = tape.param(Tensor::from_rows(&q_src).unwrap());
        let kv = tape.param(Tensor::from_rows(&kv_src).unwrap());
        let out = cross_attend(&mut tape, q, kv, &dir).unwrap();
        for i in 0..n {
            for c in 0..d {
                assert!(
                    (tape.value(out).at2(i, c) - expected[i][c]).abs() <= 1e-10,
                    "mismatch at ({i},{c})"
                );
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = Rng::new(9);
        let mut tape = Tape::new();
        let x = tape.param(rng.tensor_normal(vec![5, 3], 2.0));
        let y = tape.param(rng.tensor_normal(vec![5, 3], 2.0));
        let id = tape_identity(&mut tape, 3);
        let q = tape.matmul(x, id).unwrap();
        let kt = tape.transpose(y);
        let scores = tape.matmul(q, kt).unwrap();
        let w = tape.softmax(scores, 1).unwrap();
        for r in 0..5 {
            let sum: f64 = tape.value(w).row(r).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    fn tape_identity(tape: &mut Tape, d: usize) -> Var {
        tape.constant(identity(d))
    }

    fn fusion_vars_with(tape: &mut Tape, d: usize, w: (f64, f64, f64)) -> FusionVars {
        FusionVars {
            fr: identity_dir(tape, d),
            rf: identity_dir(tape, d),
            w1: tape.param(Tensor::scalar(w.0)),
            w2: tape.param(Tensor::scalar(w.1)),
            w3: tape.param(Tensor::scalar(w.2)),
        }
    }

    #[test]
    fn cma_w100_reduces_to_rgb() {
        let mut rng = Rng::new(5);
        let mut tape = Tape::new();
        let p = fusion_vars_with(&mut tape, 3, (1.0, 0.0, 0.0));
        let rt = rng.tensor_normal(vec![4, 3], 1.0);
        let r = tape.param(rt.clone());
        let f = tape.param(rng.tensor_normal(vec![4, 3], 1.0));
        let mm = fuse_cma(&mut tape, r, f, &p).unwrap();
        assert_eq!(tape.value(mm).data(), rt.data());
    }

    #[test]
    fn cma_w010_equals_fr_stream() {
        let mut rng = Rng::new(6);
        let mut tape = Tape::new();
        let p = fusion_vars_with(&mut tape, 3, (0.0, 1.0, 0.0));
        let r = tape.param(rng.tensor_normal(vec![3, 3], 1.0));
        let f = tape.param(rng.tensor_normal(vec![3, 3], 1.0));
        let fr = cross_attend(&mut tape, f, r, &p.fr).unwrap();
        let mm = fuse_cma(&mut tape, r, f, &p).unwrap();
        assert_eq!(tape.value(mm).data(), tape.value(fr).data());
    }

    #[test]
    fn cma_constant_ones_linear_combination() {
        // r = fr = rf = all-ones under identity params and constant input,
        // so w=(2,3,-1) gives mm = 4 * ones.
        let mut tape = Tape::new();
        let p = fusion_vars_with(&mut tape, 2, (2.0, 3.0, -1.0));
        let r = tape.param(Tensor::full(vec![3, 2], 1.0));
        let f = tape.param(Tensor::full(vec![3, 2], 1.0));
        let mm = fuse_cma(&mut tape, r, f, &p).unwrap();
        for &v in tape.value(mm).data() {
            assert!((v - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_baseline_identities() {
        let mut rng = Rng::new(7);
        let rt = rng.tensor_normal(vec![3, 4], 1.0);
        let mut tape = Tape::new();
        let r = tape.param(rt.clone());
        let z = tape.param(Tensor::zeros(vec![3, 4]));
        let mm = fuse_sum(&mut tape, r, z).unwrap();
        assert_eq!(tape.value(mm).data(), rt.data());

        let neg = tape.param(rt.map(|x| -x));
        let r2 = tape.param(rt.clone());
        let zero = fuse_sum(&mut tape, r2, neg).unwrap();
        assert!(tape.value(zero).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sum_matches_elementwise_oracle() {
        let mut rng = Rng::new(8);
        let a = rng.tensor_normal(vec![4, 5], 1.0);
        let b = rng.tensor_normal(vec![4, 5], 1.0);
        let mut tape = Tape::new();
        let va = tape.param(a.clone());
        let vb = tape.param(b.clone());
        let mm = fuse_sum(&mut tape, va, vb).unwrap();
        for i in 0..a.numel() {
            assert_eq!(tape.value(mm).data()[i], a.data()[i] + b.data()[i]);
        }
    }

    #[test]
    fn ensemble_identical_branches_is_either_log_prob() {
        let mut rng = Rng::new(10);
        let logits = rng.tensor_normal(vec![3, 4], 1.0);
        let mut tape = Tape::new();
        let a = tape.param(logits.clone());
        let b = tape.param(logits.clone());
        let out = fuse_ensemble(&mut tape, a, b).unwrap();
        let expect = logits.log_softmax2(1);
        for i in 0..logits.numel() {
            assert!((tape.value(out).data()[i] - expect.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn ensemble_uniform_branch_is_geometric_mean() {
        // hand computation on a d=3 distribution
        let a = Tensor::new(vec![1, 3], vec![(0.7f64).ln(), (0.2f64).ln(), (0.1f64).ln()]).unwrap();
        let b = Tensor::new(vec![1, 3], vec![0.0, 0.0, 0.0]).unwrap();
        let mut tape = Tape::new();
        let va = tape.param(a);
        let vb = tape.param(b);
        let out = fuse_ensemble(&mut tape, va, vb).unwrap();
        let p = tape.value(out).softmax2(1);
        // sqrt(pa * 1/3) renormalized
        let geo: Vec<f64> = [0.7f64, 0.2, 0.1].iter().map(|x| (x / 3.0).sqrt()).collect();
        let z: f64 = geo.iter().sum();
        for i in 0..3 {
            assert!((p.data()[i] - geo[i] / z).abs() < 1e-12);
        }
    }

    #[test]
    fn ensemble_preserves_agreeing_argmax() {
        let a = Tensor::new(vec![2, 3], vec![5.0, 1.0, 0.0, 0.0, 4.0, 1.0]).unwrap();
        let b = Tensor::new(vec![2, 3], vec![2.0, 0.0, 1.0, 1.0, 9.0, 0.0]).unwrap();
        let mut tape = Tape::new();
        let va = tape.param(a);
        let vb = tape.param(b);
        let out = fuse_ensemble(&mut tape, va, vb).unwrap();
        let v = tape.value(out);
        for (t, want) in [(0usize, 0usize), (1, 1)] {
            let row = v.row(t);
            let arg = row.iter().enumerate().max_by(|x, y| x.1.partial_cmp(y.1).unwrap()).unwrap().0;
            assert_eq!(arg, want);
        }
    }

    #[test]
    fn key_permutation_equivariance() {
        // shuffling kv frames leaves the attended output unchanged
        let mut rng = Rng::new(11);
        let d = 4;
        let wq = rng.tensor_normal(vec![d, d], 0.5);
        let wk = rng.tensor_normal(vec![d, d], 0.5);
        let wv = rng.tensor_normal(vec![d, d], 0.5);
        let wo = rng.tensor_normal(vec![d, d], 0.5);
        let q_src = rng.tensor_normal(vec![3, d], 1.0);
        let kv_rows: Vec<Vec<f64>> = (0..3).map(|r| {
            let _ = r;
            (0..d).map(|_| rng.normal()).collect()
        }).collect();

        let run = |order: &[usize]| -> Tensor {
            let kv: Vec<Vec<f64>> = order.iter().map(|&i| kv_rows[i].clone()).collect();
            let mut tape = Tape::new();
            let dir = DirectionVars {
                w_q: tape.param(wq.clone()),
                w_k: tape.param(wk.clone()),
                w_v: tape.param(wv.clone()),
                w_out: tape.param(wo.clone()),
            };
            let q = tape.param(q_src.clone());
            let kvv = tape.param(Tensor::from_rows(&kv).unwrap());
            let out = cross_attend(&mut tape, q, kvv, &dir).unwrap();
            tape.value(out).clone()
        };
        let a = run(&[0, 1, 2]);
        let b = run(&[2, 0, 1]);
        for i in 0..a.numel() {
            assert!((a.data()[i] - b.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_reach_all_fusion_params() {
        let mut rng = Rng::new(12);
        let mut store = ParamStore::new();
        let params = FusionParams::init(&mut store, "fusion", 4, &mut rng);
        let mut tape = Tape::new();
        let leaves = store.leaves(&mut tape);
        let vars = params.vars(&leaves);
        let r = tape.constant(rng.tensor_normal(vec![3, 4], 1.0));
        let f = tape.constant(rng.tensor_normal(vec![3, 4], 1.0));
        let mm = fuse_cma(&mut tape, r, f, &vars).unwrap();
        let sq = tape.mul(mm, mm).unwrap();
        let loss = tape.reduce_sum(sq);
        let grads = tape.backward(loss).unwrap();
        let collected = store.collect_grads(&leaves, &grads);
        for (i, g) in collected.iter().enumerate() {
            assert!(g.norm() > 0.0, "zero gradient for {}", store.name(ParamId(i)));
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut tape = Tape::new();
        let dir = identity_dir(&mut tape, 2);
        let q = tape.param(Tensor::zeros(vec![2, 2]));
        let kv = tape.param(Tensor::zeros(vec![3, 2]));
        assert!(cross_attend(&mut tape, q, kv, &dir).is_err());
    }
}
