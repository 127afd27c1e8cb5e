//! Greedy CTC decoding: per-timestep argmax, collapse adjacent repeats,
//! drop blanks.

use crate::losses::BLANK;
use crate::tensor::Tensor;

pub fn greedy_ctc_decode(logits: &Tensor) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for t in 0..logits.rows() {
        let row = logits.row(t);
        let mut arg = 0;
        let mut best = f64::NEG_INFINITY;
        for (i, &v) in row.iter().enumerate() {
            if v > best {
                best = v;
                arg = i;
            }
        }
        if arg != prev && arg != BLANK {
            out.push(arg);
        }
        prev = arg;
    }
    out
}
