//! Standard transformer encoder-decoder with sinusoidal positions,
//! multi-head attention, post-layer-norm residuals, and a causal decoder
//! mask. Fused features enter through an optional linear adapter when their
//! dimension differs from the model dimension; positions are added after
//! the adapter.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

const LN_EPS: f64 = 1e-5;
const MASK_NEG: f64 = -1e30;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TransformerConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub dropout: f64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            model_dim: 128,
            heads: 4,
            ff_dim: 256,
            enc_layers: 2,
            dec_layers: 2,
            dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
struct AttnIds {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

#[derive(Debug, Clone)]
struct NormIds {
    gain: ParamId,
    shift: ParamId,
}

#[derive(Debug, Clone)]
struct FfIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct EncLayerIds {
    attn: AttnIds,
    norm1: NormIds,
    ff: FfIds,
    norm2: NormIds,
}

#[derive(Debug, Clone)]
struct DecLayerIds {
    self_attn: AttnIds,
    norm1: NormIds,
    cross_attn: AttnIds,
    norm2: NormIds,
    ff: FfIds,
    norm3: NormIds,
}

#[derive(Debug, Clone)]
pub struct TransformerParams {
    pub cfg: TransformerConfig,
    pub vocab: usize,
    pub feat_dim: usize,
    adapter: Option<(ParamId, ParamId)>,
    embed: ParamId,
    enc: Vec<EncLayerIds>,
    dec: Vec<DecLayerIds>,
    out_w: ParamId,
    out_b: ParamId,
}

fn init_attn(store: &mut ParamStore, prefix: &str, m: usize, rng: &mut Rng) -> AttnIds {
    let mat = |store: &mut ParamStore, rng: &mut Rng, name: &str| {
        store.register(format!("{prefix}.{name}"), rng.tensor_xavier(vec![m, m], m, m))
    };
    AttnIds {
        wq: mat(store, rng, "wq"),
        wk: mat(store, rng, "wk"),
        wv: mat(store, rng, "wv"),
        wo: mat(store, rng, "wo"),
    }
}

fn init_norm(store: &mut ParamStore, prefix: &str, m: usize) -> NormIds {
    NormIds {
        gain: store.register(format!("{prefix}.gain"), Tensor::full(vec![m], 1.0)),
        shift: store.register(format!("{prefix}.shift"), Tensor::zeros(vec![m])),
    }
}

fn init_ff(store: &mut ParamStore, prefix: &str, m: usize, ff: usize, rng: &mut Rng) -> FfIds {
    FfIds {
        w1: store.register(format!("{prefix}.w1"), rng.tensor_xavier(vec![m, ff], m, ff)),
        b1: store.register(format!("{prefix}.b1"), Tensor::zeros(vec![ff])),
        w2: store.register(format!("{prefix}.w2"), rng.tensor_xavier(vec![ff, m], ff, m)),
        b2: store.register(format!("{prefix}.b2"), Tensor::zeros(vec![m])),
    }
}

/// Sinusoidal position encodings, `[n, m]`.
pub fn sinusoidal_positions(n: usize, m: usize) -> Tensor {
    let mut t = Tensor::zeros(vec![n, m]);
    for pos in 0..n {
        for i in 0..m {
            let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / m as f64);
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            t.set2(pos, i, v);
        }
    }
    t
}

impl TransformerParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        cfg: TransformerConfig,
        feat_dim: usize,
        vocab: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let m = cfg.model_dim;
        if m % cfg.heads != 0 {
            return Err(Error::Config(format!(
                "model dim {m} not divisible by {} heads",
                cfg.heads
            )));
        }
        let adapter = if feat_dim != m {
            Some((
                store.register(
                    format!("{prefix}.adapter.w"),
                    rng.tensor_xavier(vec![feat_dim, m], feat_dim, m),
                ),
                store.register(format!("{prefix}.adapter.b"), Tensor::zeros(vec![m])),
            ))
        } else {
            None
        };
        let embed = store.register(
            format!("{prefix}.embed"),
            rng.tensor_normal(vec![vocab, m], 1.0 / (m as f64).sqrt()),
        );
        let enc = (0..cfg.enc_layers)
            .map(|l| {
                let p = format!("{prefix}.enc{l}");
                EncLayerIds {
                    attn: init_attn(store, &format!("{p}.attn"), m, rng),
                    norm1: init_norm(store, &format!("{p}.norm1"), m),
                    ff: init_ff(store, &format!("{p}.ff"), m, cfg.ff_dim, rng),
                    norm2: init_norm(store, &format!("{p}.norm2"), m),
                }
            })
            .collect();
        let dec = (0..cfg.dec_layers)
            .map(|l| {
                let p = format!("{prefix}.dec{l}");
                DecLayerIds {
                    self_attn: init_attn(store, &format!("{p}.self"), m, rng),
                    norm1: init_norm(store, &format!("{p}.norm1"), m),
                    cross_attn: init_attn(store, &format!("{p}.cross"), m, rng),
                    norm2: init_norm(store, &format!("{p}.norm2"), m),
                    ff: init_ff(store, &format!("{p}.ff"), m, cfg.ff_dim, rng),
                    norm3: init_norm(store, &format!("{p}.norm3"), m),
                }
            })
            .collect();
        Ok(TransformerParams {
            out_w: store.register(
                format!("{prefix}.out.w"),
                rng.tensor_xavier(vec![m, vocab], m, vocab),
            ),
            out_b: store.register(format!("{prefix}.out.b"), Tensor::zeros(vec![vocab])),
            cfg,
            vocab,
            feat_dim,
            adapter,
            embed,
            enc,
            dec,
        })
    }

    fn maybe_dropout(&self, tape: &mut Tape, x: Var, rng: &mut Option<&mut Rng>) -> Result<Var> {
        match rng {
            Some(rng) if self.cfg.dropout > 0.0 => {
                let numel = tape.value(x).numel();
                let mask: Vec<bool> = (0..numel).map(|_| !rng.bool(self.cfg.dropout)).collect();
                tape.dropout(x, self.cfg.dropout, &mask)
            }
            _ => Ok(x),
        }
    }

    fn mha(
        &self,
        tape: &mut Tape,
        q_in: Var,
        kv_in: Var,
        ids: &AttnIds,
        leaves: &[Var],
        causal: bool,
    ) -> Result<Var> {
        let m = self.cfg.model_dim;
        let heads = self.cfg.heads;
        let dh = m / heads;
        let q = tape.matmul(q_in, leaves[ids.wq.0])?;
        let k = tape.matmul(kv_in, leaves[ids.wk.0])?;
        let v = tape.matmul(kv_in, leaves[ids.wv.0])?;
        let lq = tape.value(q).rows();
        let lk = tape.value(k).rows();
        let mask = if causal {
            let mut t = Tensor::zeros(vec![lq, lk]);
            for i in 0..lq {
                for j in (i + 1)..lk {
                    t.set2(i, j, MASK_NEG);
                }
            }
            Some(tape.constant(t))
        } else {
            None
        };
        let mut head_outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * dh, (h + 1) * dh)?;
            let kh = tape.slice_cols(k, h * dh, (h + 1) * dh)?;
            let vh = tape.slice_cols(v, h * dh, (h + 1) * dh)?;
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt)?;
            let mut scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt());
            if let Some(mv) = mask {
                scaled = tape.add(scaled, mv)?;
            }
            let attn = tape.softmax(scaled, 1)?;
            head_outs.push(tape.matmul(attn, vh)?);
        }
        let merged = tape.concat_cols(&head_outs)?;
        tape.matmul(merged, leaves[ids.wo.0])
    }

    fn residual_norm(
        &self,
        tape: &mut Tape,
        x: Var,
        sub: Var,
        norm: &NormIds,
        leaves: &[Var],
        rng: &mut Option<&mut Rng>,
    ) -> Result<Var> {
        let sub = self.maybe_dropout(tape, sub, rng)?;
        let added = tape.add(x, sub)?;
        tape.layer_norm(added, leaves[norm.gain.0], leaves[norm.shift.0], LN_EPS)
    }

    fn ff(&self, tape: &mut Tape, x: Var, ids: &FfIds, leaves: &[Var]) -> Result<Var> {
        let h = tape.matmul(x, leaves[ids.w1.0])?;
        let h = tape.add_bias(h, leaves[ids.b1.0])?;
        let h = tape.relu(h);
        let h = tape.matmul(h, leaves[ids.w2.0])?;
        tape.add_bias(h, leaves[ids.b2.0])
    }

    /// Output projection (weight, bias) ids.
    pub fn output_param_ids(&self) -> (ParamId, ParamId) {
        (self.out_w, self.out_b)
    }

    /// Encode fused source features into memory states.
    pub fn encode(
        &self,
        tape: &mut Tape,
        src: Var,
        leaves: &[Var],
        mut rng: Option<&mut Rng>,
    ) -> Result<Var> {
        let sv = tape.value(src);
        if sv.rows() == 0 {
            return Err(Error::InvalidInput { op: "encode", reason: "empty source".into() });
        }
        if sv.cols() != self.feat_dim {
            return Err(Error::ShapeMismatch {
                op: "encode",
                lhs: sv.shape().to_vec(),
                rhs: vec![sv.rows(), self.feat_dim],
            });
        }
        let mut x = match self.adapter {
            Some((w, b)) => {
                let z = tape.matmul(src, leaves[w.0])?;
                tape.add_bias(z, leaves[b.0])?
            }
            None => src,
        };
        let n = tape.value(x).rows();
        let pos = tape.constant(sinusoidal_positions(n, self.cfg.model_dim));
        x = tape.add(x, pos)?;
        for layer in &self.enc {
            let attn = self.mha(tape, x, x, &layer.attn, leaves, false)?;
            x = self.residual_norm(tape, x, attn, &layer.norm1, leaves, &mut rng)?;
            let ff = self.ff(tape, x, &layer.ff, leaves)?;
            x = self.residual_norm(tape, x, ff, &layer.norm2, leaves, &mut rng)?;
        }
        Ok(x)
    }

    /// Teacher-forced decode: logits over the target vocabulary for every
    /// prefix position.
    pub fn decode(
        &self,
        tape: &mut Tape,
        memory: Var,
        target_prefix: &[usize],
        leaves: &[Var],
        mut rng: Option<&mut Rng>,
    ) -> Result<Var> {
        if target_prefix.is_empty() {
            return Err(Error::InvalidInput { op: "decode", reason: "empty target prefix".into() });
        }
        let m = self.cfg.model_dim;
        let emb = tape.embedding(leaves[self.embed.0], target_prefix)?;
        let mut x = tape.scale(emb, (m as f64).sqrt());
        let pos = tape.constant(sinusoidal_positions(target_prefix.len(), m));
        x = tape.add(x, pos)?;
        for layer in &self.dec {
            let sa = self.mha(tape, x, x, &layer.self_attn, leaves, true)?;
            x = self.residual_norm(tape, x, sa, &layer.norm1, leaves, &mut rng)?;
            let ca = self.mha(tape, x, memory, &layer.cross_attn, leaves, false)?;
            x = self.residual_norm(tape, x, ca, &layer.norm2, leaves, &mut rng)?;
            let ff = self.ff(tape, x, &layer.ff, leaves)?;
            x = self.residual_norm(tape, x, ff, &layer.norm3, leaves, &mut rng)?;
        }
        let z = tape.matmul(x, leaves[self.out_w.0])?;
        tape.add_bias(z, leaves[self.out_b.0])
    }
}
