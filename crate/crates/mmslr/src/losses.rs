//! Training losses: CTC alignment, KL distillation, the composite
//! recognition loss, and masked cross-entropy for translation.
//!
//! Blank id is 0 throughout; gloss ids start at 1.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{log_sum_exp, Tensor};
use serde::{Deserialize, Serialize};

pub const BLANK: usize = 0;

/// Components of the composite recognition loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ctc: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub alpha: f64,
    pub beta: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Recompute the weighted sum from the parts.
    pub fn recombine(&self) -> f64 {
        self.l_ctc + self.l1 + self.l2 + self.alpha * self.l3 + self.beta * self.l4
    }
}

/// Blank-augmented label sequence: blank between and around every label.
fn extend_labels(target: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(BLANK);
    for &t in target {
        ext.push(t);
        ext.push(BLANK);
    }
    ext
}

/// Minimum number of frames needed to emit `target`.
pub fn ctc_required_frames(target: &[usize]) -> usize {
    let repeats = target.windows(2).filter(|w| w[0] == w[1]).count();
    target.len() + repeats
}

/// Log-space forward DP over the blank-augmented labels.
/// Returns (log alpha table [T x S], log P(target)).
fn ctc_alpha(lp: &Tensor, ext: &[usize]) -> (Vec<f64>, f64) {
    let t_len = lp.rows();
    let s_len = ext.len();
    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = lp.at2(0, ext[0]);
    if s_len > 1 {
        alpha[1] = lp.at2(0, ext[1]);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = alpha[(t - 1) * s_len + s];
            if s >= 1 {
                acc = log_sum_exp(acc, alpha[(t - 1) * s_len + s - 1]);
            }
            // skip a blank only between distinct labels
            if s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2] {
                acc = log_sum_exp(acc, alpha[(t - 1) * s_len + s - 2]);
            }
            alpha[t * s_len + s] = acc + lp.at2(t, ext[s]);
        }
    }
    let mut log_p = alpha[(t_len - 1) * s_len + s_len - 1];
    if s_len > 1 {
        log_p = log_sum_exp(log_p, alpha[(t_len - 1) * s_len + s_len - 2]);
    }
    (alpha, log_p)
}

/// Backward DP (log beta, emission at t included).
fn ctc_beta(lp: &Tensor, ext: &[usize]) -> Vec<f64> {
    let t_len = lp.rows();
    let s_len = ext.len();
    let ninf = f64::NEG_INFINITY;
    let mut beta = vec![ninf; t_len * s_len];
    beta[(t_len - 1) * s_len + s_len - 1] = lp.at2(t_len - 1, ext[s_len - 1]);
    if s_len > 1 {
        beta[(t_len - 1) * s_len + s_len - 2] = lp.at2(t_len - 1, ext[s_len - 2]);
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta[(t + 1) * s_len + s];
            if s + 1 < s_len {
                acc = log_sum_exp(acc, beta[(t + 1) * s_len + s + 1]);
            }
            if s + 2 < s_len && ext[s] != BLANK && ext[s] != ext[s + 2] {
                acc = log_sum_exp(acc, beta[(t + 1) * s_len + s + 2]);
            }
            beta[t * s_len + s] = acc + lp.at2(t, ext[s]);
        }
    }
    beta
}

fn validate_ctc_target(target: &[usize], t_len: usize, vocab_with_blank: usize) -> Result<Vec<usize>> {
    if let Some(&bad) = target.iter().find(|&&g| g == BLANK || g >= vocab_with_blank) {
        return Err(Error::InvalidInput {
            op: "ctc_loss",
            reason: format!("gloss id {bad} out of range 1..{}", vocab_with_blank - 1),
        });
    }
    let required = ctc_required_frames(target);
    if required > t_len {
        return Err(Error::CtcInfeasible { required, available: t_len });
    }
    Ok(extend_labels(target))
}

/// CTC loss: -log P(target | log-softmax(logits)), differentiable through
/// the logits. An empty target is allowed and scores the all-blank path.
pub fn ctc_loss(tape: &mut Tape, logits: Var, target: &[usize]) -> Result<Var> {
    let lv = tape.value(logits);
    let (t_len, classes) = (lv.rows(), lv.cols());
    let ext = validate_ctc_target(target, t_len, classes)?;
    let lp = lv.log_softmax2(1);
    let (_, log_p) = ctc_alpha(&lp, &ext);
    let loss = -log_p;
    if !loss.is_finite() {
        return Err(Error::NonFinite { context: "ctc_loss forward".into() });
    }
    let lid = logits;
    Ok(tape.custom_op(Tensor::scalar(loss), &[logits], move |vals, g, sink| {
        let lv = &vals[lid.index()];
        let lp = lv.log_softmax2(1);
        let (alpha, log_p) = ctc_alpha(&lp, &ext);
        let beta = ctc_beta(&lp, &ext);
        let s_len = ext.len();
        let mut grad = Tensor::zeros(vec![t_len, classes]);
        for t in 0..t_len {
            // dL/d lp[t,k] = -exp(lse_{s: ext s = k}(alpha+beta) - logP - lp[t,k])
            let mut acc = vec![f64::NEG_INFINITY; classes];
            for s in 0..s_len {
                let v = alpha[t * s_len + s] + beta[t * s_len + s];
                acc[ext[s]] = log_sum_exp(acc[ext[s]], v);
            }
            for k in 0..classes {
                let dlp = if acc[k] == f64::NEG_INFINITY {
                    0.0
                } else {
                    -((acc[k] - log_p - lp.at2(t, k)).exp())
                };
                // chain through the internal log-softmax: sum_k dL/dlp = -1
                let y = lp.at2(t, k).exp();
                grad.set2(t, k, (dlp + y) * g.scalar_value());
            }
        }
        sink(lid.index(), grad);
    }))
}

/// Mean over timesteps of KL(softmax(student_t) || softmax(teacher_t)).
/// The teacher side is detached: no gradient flows into it.
pub fn kl_distill(tape: &mut Tape, student: Var, teacher: Var) -> Result<Var> {
    let ss = tape.value(student).shape().to_vec();
    let ts = tape.value(teacher).shape().to_vec();
    if ss != ts {
        return Err(Error::ShapeMismatch { op: "kl_distill", lhs: ss, rhs: ts });
    }
    let t_len = tape.value(student).rows();
    let teacher_const = tape.detach(teacher);
    let ls_s = tape.log_softmax(student, 1)?;
    let p_s = tape.exp(ls_s);
    let ls_t = tape.log_softmax(teacher_const, 1)?;
    let diff = tape.sub(ls_s, ls_t)?;
    let terms = tape.mul(p_s, diff)?;
    let total = tape.reduce_sum(terms);
    Ok(tape.scale(total, 1.0 / t_len as f64))
}

/// Composite recognition loss: `l_ctc + l1 + l2 + alpha*l3 + beta*l4`.
pub fn slr_total(
    tape: &mut Tape,
    l_ctc: Var,
    l1: Var,
    l2: Var,
    l3: Var,
    l4: Var,
    alpha: f64,
    beta: f64,
) -> Result<(Var, LossBreakdown)> {
    let breakdown = LossBreakdown {
        l_ctc: tape.value(l_ctc).scalar_value(),
        l1: tape.value(l1).scalar_value(),
        l2: tape.value(l2).scalar_value(),
        l3: tape.value(l3).scalar_value(),
        l4: tape.value(l4).scalar_value(),
        alpha,
        beta,
        total: 0.0,
    };
    let mut total = tape.add(l_ctc, l1)?;
    total = tape.add(total, l2)?;
    let a3 = tape.scale(l3, alpha);
    let b4 = tape.scale(l4, beta);
    total = tape.add(total, a3)?;
    total = tape.add(total, b4)?;
    let breakdown = LossBreakdown {
        total: tape.value(total).scalar_value(),
        ..breakdown
    };
    Ok((total, breakdown))
}

/// Mean negative log-likelihood over non-pad positions, with optional
/// label smoothing toward the uniform distribution.
pub fn cross_entropy(
    tape: &mut Tape,
    logits: Var,
    targets: &[usize],
    mask: &[bool],
    label_smoothing: f64,
) -> Result<Var> {
    let lv = tape.value(logits);
    let (n, vocab) = (lv.rows(), lv.cols());
    if targets.len() != n || mask.len() != n {
        return Err(Error::InvalidInput {
            op: "cross_entropy",
            reason: format!("{n} logit rows vs {} targets / {} mask", targets.len(), mask.len()),
        });
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= vocab) {
        return Err(Error::UnknownToken { id: bad, vocab });
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::InvalidInput { op: "cross_entropy", reason: "all positions masked".into() });
    }
    // -q/count per row, zeroed at pad positions
    let mut weights = Tensor::zeros(vec![n, vocab]);
    for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        for c in 0..vocab {
            let q = if c == t { 1.0 - label_smoothing } else { 0.0 } + label_smoothing / vocab as f64;
            weights.set2(r, c, -q / count as f64);
        }
    }
    let lp = tape.log_softmax(logits, 1)?;
    let w = tape.constant(weights);
    let picked = tape.mul(lp, w)?;
    Ok(tape.reduce_sum(picked))
}
