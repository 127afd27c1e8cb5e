//! Self-verification suites: finite-difference checks for every composite
//! used by the pipelines, and an exhaustive brute-force oracle for the CTC
//! dynamic program. Shared by the CLI and the acceptance tests.

use crate::error::Result;
use crate::fusion::{fuse_cma, FusionParams};
use crate::gradcheck::grad_check;
use crate::losses::{cross_entropy, ctc_loss, ctc_required_frames, kl_distill, BLANK};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::seqnet::{BiLstmParams, TemporalReducer, TransformerConfig, TransformerParams};
use crate::tensor::Tensor;

pub const GRADCHECK_SEEDS: u64 = 10;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const H: f64 = 1e-5;

/// Worst relative error of one named composite across seeds.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_err: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_err <= GRADCHECK_TOLERANCE
    }
}

fn store_values(store: &ParamStore) -> Vec<Tensor> {
    store.iter().map(|(_, t)| t.clone()).collect()
}

fn check_fusion(seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let d = 4;
    let mut store = ParamStore::new();
    let fusion = FusionParams::init(&mut store, "f", d, &mut rng);
    let mut inputs = store_values(&store);
    let n_params = inputs.len();
    inputs.push(rng.tensor_normal(vec![3, d], 1.0)); // rgb
    inputs.push(rng.tensor_normal(vec![3, d], 1.0)); // flow
    grad_check(
        |tape, vars| {
            let fv = fusion.vars(vars);
            let mm = fuse_cma(tape, vars[n_params], vars[n_params + 1], &fv)?;
            let sq = tape.mul(mm, mm)?;
            Ok(tape.reduce_sum(sq))
        },
        &inputs,
        H,
    )
}

fn check_temporal(seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let d = 2;
    let mut store = ParamStore::new();
    let reducer = TemporalReducer::init(&mut store, "t", d, &mut rng);
    let mut inputs = store_values(&store);
    let n_params = inputs.len();
    inputs.push(rng.tensor_normal(vec![8, d], 1.0));
    grad_check(
        |tape, vars| {
            let h = reducer.forward(tape, vars[n_params], vars)?;
            let sq = tape.mul(h, h)?;
            Ok(tape.reduce_sum(sq))
        },
        &inputs,
        H,
    )
}

fn check_bilstm(seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let d = 4;
    let mut store = ParamStore::new();
    let lstm = BiLstmParams::init(&mut store, "l", d, &mut rng)?;
    let mut inputs = store_values(&store);
    let n_params = inputs.len();
    inputs.push(rng.tensor_normal(vec![3, d], 1.0));
    grad_check(
        |tape, vars| {
            let h = lstm.forward(tape, vars[n_params], vars)?;
            let sq = tape.mul(h, h)?;
            Ok(tape.reduce_sum(sq))
        },
        &inputs,
        H,
    )
}

fn check_ctc(seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let logits = rng.tensor_normal(vec![6, 4], 1.0);
    grad_check(|tape, vars| ctc_loss(tape, vars[0], &[1, 2, 1]), &[logits], H)
}

fn check_kl(seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let student = rng.tensor_normal(vec![4, 5], 1.0);
    let teacher = rng.tensor_normal(vec![4, 5], 1.0);
    // the teacher side is detached by contract, so it is held constant here:
    // finite differences over it would measure a dependency the analytic
    // gradient correctly ignores
    grad_check(
        |tape, vars| {
            let t = tape.constant(teacher.clone());
            kl_distill(tape, vars[0], t)
        },
        &[student],
        H,
    )
}

fn check_cross_entropy(seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let logits = rng.tensor_normal(vec![5, 6], 1.0);
    let targets = [2usize, 0, 4, 1, 3];
    let mask = [true, true, false, true, true];
    grad_check(
        |tape, vars| cross_entropy(tape, vars[0], &targets, &mask, 0.1),
        &[logits],
        H,
    )
}

fn check_transformer(seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let cfg = TransformerConfig {
        model_dim: 8,
        heads: 2,
        ff_dim: 16,
        enc_layers: 1,
        dec_layers: 1,
        dropout: 0.0,
    };
    let mut store = ParamStore::new();
    let tf = TransformerParams::init(&mut store, "tf", cfg, 4, 6, &mut rng)?;
    let src = rng.tensor_normal(vec![3, 4], 1.0);
    let inputs = store_values(&store);
    grad_check(
        |tape, vars| {
            let s = tape.constant(src.clone());
            let mem = tf.encode(tape, s, vars, None)?;
            let logits = tf.decode(tape, mem, &[1, 4, 2], vars, None)?;
            let sq = tape.mul(logits, logits)?;
            Ok(tape.reduce_sum(sq))
        },
        &inputs,
        H,
    )
}

/// Run every composite across [`GRADCHECK_SEEDS`] seeds.
pub fn gradcheck_suite() -> Result<Vec<CheckResult>> {
    let composites: [(&'static str, fn(u64) -> Result<f64>); 7] = [
        ("fusion_cross_modal_attention", check_fusion),
        ("temporal_reduction", check_temporal),
        ("bilstm", check_bilstm),
        ("ctc_loss", check_ctc),
        ("kl_distillation", check_kl),
        ("cross_entropy", check_cross_entropy),
        ("transformer_enc_dec", check_transformer),
    ];
    let mut results = Vec::with_capacity(composites.len());
    for (name, f) in composites {
        let mut max_err: f64 = 0.0;
        for seed in 0..GRADCHECK_SEEDS {
            max_err = max_err.max(f(seed)?);
        }
        results.push(CheckResult { name, max_err });
    }
    Ok(results)
}

/// `B(path)`: collapse repeats, then drop blanks.
fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for &c in path {
        if c != prev && c != BLANK {
            out.push(c);
        }
        prev = c;
    }
    out
}

/// Brute-force CTC: sum softmax path probabilities over every alignment
/// collapsing to `target`, in probability space.
fn brute_force_ctc(logits: &Tensor, target: &[usize]) -> f64 {
    let (t_len, classes) = (logits.rows(), logits.cols());
    let probs = logits.softmax2(1);
    let mut total = 0.0f64;
    let mut path = vec![0usize; t_len];
    loop {
        if collapse(&path) == target {
            let mut p = 1.0;
            for (t, &c) in path.iter().enumerate() {
                p *= probs.at2(t, c);
            }
            total += p;
        }
        // odometer increment over the classes^T path space
        let mut i = 0;
        loop {
            if i == t_len {
                return -total.ln();
            }
            path[i] += 1;
            if path[i] < classes {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

fn targets_up_to(vocab: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut all: Vec<Vec<usize>> = vec![Vec::new()];
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for t in &frontier {
            for g in 1..=vocab {
                let mut ext = t.clone();
                ext.push(g);
                next.push(ext);
            }
        }
        all.extend(next.iter().cloned());
        frontier = next;
    }
    all
}

/// Exhaustive DP-vs-brute-force sweep over all feasible cases with
/// `T <= 6`, gloss vocab `<= 3`, target length `<= 3`.
/// Returns (cases checked, max |log-space difference|).
pub fn ctc_oracle_sweep() -> Result<(usize, f64)> {
    let mut rng = Rng::new(99);
    let mut cases = 0usize;
    let mut max_diff: f64 = 0.0;
    for vocab in 1..=3usize {
        let classes = vocab + 1;
        for t_len in 1..=6usize {
            for target in targets_up_to(vocab, 3) {
                if ctc_required_frames(&target) > t_len {
                    continue;
                }
                let logits = rng.tensor_normal(vec![t_len, classes], 1.0);
                let mut tape = crate::tape::Tape::new();
                let lv = tape.constant(logits.clone());
                let dp = {
                    let l = ctc_loss(&mut tape, lv, &target)?;
                    tape.value(l).scalar_value()
                };
                let brute = brute_force_ctc(&logits, &target);
                max_diff = max_diff.max((dp - brute).abs());
                cases += 1;
            }
        }
    }
    Ok((cases, max_diff))
}
