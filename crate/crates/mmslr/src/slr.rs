//! End-to-end recognition pipeline: dual-stream temporal reduction,
//! fusion, BiLSTM, three classifier heads, composite CTC + distillation
//! loss, and greedy-decode evaluation.

use crate::config::{component_rng, FusionMode, KlTeacher, TrainConfig};
use crate::data::{LoadedSample, SampleSet};
use crate::decode::greedy_ctc_decode;
use crate::error::{Error, Result};
use crate::fusion::{fuse_cma, fuse_ensemble, fuse_sum, FusionParams};
use crate::losses::{ctc_loss, ctc_required_frames, kl_distill, slr_total, LossBreakdown};
use crate::metrics::{EditCounts, MetricReport};
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::record::{EpochRecord, RunRecord};
use crate::seqnet::{reduced_len, BiLstmParams, ClassifierHead, TemporalReducer};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Which components exist is a function of the fusion mode:
///
/// - `cma` / `sum`: both reducers, the fused BiLSTM + head, and one direct
///   classifier per reduced stream (the auxiliary supervision heads);
/// - `ensemble`: two full single-stream branches (reducer, BiLSTM, head),
///   combined only at evaluation time by log-prob averaging;
/// - `rgb_only` / `flow_only`: a single branch through the fused path.
#[derive(Debug)]
pub struct SlrModel {
    pub store: ParamStore,
    pub fusion_mode: FusionMode,
    pub d: usize,
    pub gloss_vocab: usize,
    reduce_rgb: Option<TemporalReducer>,
    reduce_flow: Option<TemporalReducer>,
    pub fusion: Option<FusionParams>,
    bilstm: Option<BiLstmParams>,
    bilstm_rgb: Option<BiLstmParams>,
    bilstm_flow: Option<BiLstmParams>,
    head: Option<ClassifierHead>,
    head_rgb: Option<ClassifierHead>,
    head_flow: Option<ClassifierHead>,
}

/// The three logit streams of one forward pass, each `[n/4, vocab+1]`.
/// `fused` is always present; in ensemble mode it is the averaged branch
/// log-probability stream used for decoding.
pub struct SlrStreams {
    pub fused: Var,
    pub rgb: Option<Var>,
    pub flow: Option<Var>,
}

impl SlrModel {
    pub fn init(d: usize, gloss_vocab: usize, fusion_mode: FusionMode, seed: u64) -> Result<SlrModel> {
        let mut store = ParamStore::new();
        let mode = fusion_mode;
        let wants_rgb = mode != FusionMode::FlowOnly;
        let wants_flow = mode != FusionMode::RgbOnly;
        let fused_path = matches!(
            mode,
            FusionMode::Cma | FusionMode::Sum | FusionMode::RgbOnly | FusionMode::FlowOnly
        );
        let aux_heads = matches!(mode, FusionMode::Cma | FusionMode::Sum);

        // every component draws from its own name-keyed stream so shared
        // components initialize identically across fusion modes
        let comp = |name: &str| component_rng(seed, name);

        let reduce_rgb = wants_rgb
            .then(|| TemporalReducer::init(&mut store, "reduce_rgb", d, &mut comp("reduce_rgb")));
        let reduce_flow = wants_flow
            .then(|| TemporalReducer::init(&mut store, "reduce_flow", d, &mut comp("reduce_flow")));
        let fusion = (mode == FusionMode::Cma)
            .then(|| FusionParams::init(&mut store, "fusion", d, &mut comp("fusion")));
        let bilstm = if fused_path {
            Some(BiLstmParams::init(&mut store, "bilstm", d, &mut comp("bilstm"))?)
        } else {
            None
        };
        let head = fused_path
            .then(|| ClassifierHead::init(&mut store, "head", d, gloss_vocab, &mut comp("head")));
        let (bilstm_rgb, bilstm_flow) = if mode == FusionMode::Ensemble {
            (
                Some(BiLstmParams::init(&mut store, "bilstm_rgb", d, &mut comp("bilstm_rgb"))?),
                Some(BiLstmParams::init(&mut store, "bilstm_flow", d, &mut comp("bilstm_flow"))?),
            )
        } else {
            (None, None)
        };
        let branch_heads = aux_heads || mode == FusionMode::Ensemble;
        let head_rgb = branch_heads.then(|| {
            ClassifierHead::init(&mut store, "head_rgb", d, gloss_vocab, &mut comp("head_rgb"))
        });
        let head_flow = branch_heads.then(|| {
            ClassifierHead::init(&mut store, "head_flow", d, gloss_vocab, &mut comp("head_flow"))
        });
        Ok(SlrModel {
            store,
            fusion_mode: mode,
            d,
            gloss_vocab,
            reduce_rgb,
            reduce_flow,
            fusion,
            bilstm,
            bilstm_rgb,
            bilstm_flow,
            head,
            head_rgb,
            head_flow,
        })
    }

    /// Pin the CMA mixing weights; `(1, 0, 0)` makes the fused path a pure
    /// function of the RGB stream.
    pub fn set_fusion_weights(&mut self, w: [f64; 3]) -> Result<()> {
        let fusion = self.fusion.as_ref().ok_or_else(|| {
            Error::Config(format!("fusion weights only exist in cma mode, not {}", self.fusion_mode))
        })?;
        self.store.set(fusion.w1, Tensor::scalar(w[0]));
        self.store.set(fusion.w2, Tensor::scalar(w[1]));
        self.store.set(fusion.w3, Tensor::scalar(w[2]));
        Ok(())
    }

    /// Parameter ids of the flow-side reducer (for `--freeze-flow-reduce`).
    fn flow_reduce_param_ids(&self) -> Vec<usize> {
        match &self.reduce_flow {
            Some(r) => r.param_ids().iter().map(|p| p.0).collect(),
            None => Vec::new(),
        }
    }

    /// Forward pass producing the three logit streams.
    pub fn forward(
        &self,
        tape: &mut Tape,
        leaves: &[Var],
        rgb: &Tensor,
        flow: &Tensor,
    ) -> Result<SlrStreams> {
        if rgb.rows() < 4 {
            return Err(Error::InvalidInput {
                op: "slr_forward",
                reason: format!("need at least 4 frames, got {}", rgb.rows()),
            });
        }
        let reduce = |tape: &mut Tape, reducer: &TemporalReducer, x: &Tensor| -> Result<Var> {
            let v = tape.constant(x.clone());
            reducer.forward(tape, v, leaves)
        };
        match self.fusion_mode {
            FusionMode::Cma | FusionMode::Sum => {
                if rgb.shape() != flow.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "slr_forward",
                        lhs: rgb.shape().to_vec(),
                        rhs: flow.shape().to_vec(),
                    });
                }
                let rr = reduce(tape, self.reduce_rgb.as_ref().unwrap(), rgb)?;
                let fr = reduce(tape, self.reduce_flow.as_ref().unwrap(), flow)?;
                let mm = match self.fusion_mode {
                    FusionMode::Cma => {
                        let vars = self.fusion.as_ref().unwrap().vars(leaves);
                        fuse_cma(tape, rr, fr, &vars)?
                    }
                    _ => fuse_sum(tape, rr, fr)?,
                };
                let seq = self.bilstm.as_ref().unwrap().forward(tape, mm, leaves)?;
                let fused = self.head.as_ref().unwrap().forward(tape, seq, leaves)?;
                let rgb_logits = self.head_rgb.as_ref().unwrap().forward(tape, rr, leaves)?;
                let flow_logits = self.head_flow.as_ref().unwrap().forward(tape, fr, leaves)?;
                Ok(SlrStreams { fused, rgb: Some(rgb_logits), flow: Some(flow_logits) })
            }
            FusionMode::Ensemble => {
                if rgb.shape() != flow.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "slr_forward",
                        lhs: rgb.shape().to_vec(),
                        rhs: flow.shape().to_vec(),
                    });
                }
                let rr = reduce(tape, self.reduce_rgb.as_ref().unwrap(), rgb)?;
                let fr = reduce(tape, self.reduce_flow.as_ref().unwrap(), flow)?;
                let rs = self.bilstm_rgb.as_ref().unwrap().forward(tape, rr, leaves)?;
                let fs = self.bilstm_flow.as_ref().unwrap().forward(tape, fr, leaves)?;
                let rgb_logits = self.head_rgb.as_ref().unwrap().forward(tape, rs, leaves)?;
                let flow_logits = self.head_flow.as_ref().unwrap().forward(tape, fs, leaves)?;
                let fused = fuse_ensemble(tape, rgb_logits, flow_logits)?;
                Ok(SlrStreams { fused, rgb: Some(rgb_logits), flow: Some(flow_logits) })
            }
            FusionMode::RgbOnly | FusionMode::FlowOnly => {
                let (reducer, x) = if self.fusion_mode == FusionMode::RgbOnly {
                    (self.reduce_rgb.as_ref().unwrap(), rgb)
                } else {
                    (self.reduce_flow.as_ref().unwrap(), flow)
                };
                let red = reduce(tape, reducer, x)?;
                let seq = self.bilstm.as_ref().unwrap().forward(tape, red, leaves)?;
                let fused = self.head.as_ref().unwrap().forward(tape, seq, leaves)?;
                Ok(SlrStreams { fused, rgb: None, flow: None })
            }
        }
    }
}

fn feasible(sample: &LoadedSample) -> bool {
    ctc_required_frames(&sample.gloss_ids) <= reduced_len(sample.rgb.len())
}

/// One optimizer update on a batch. Returns the pre-update mean loss
/// breakdown and the number of skipped (infeasible) samples. If every
/// sample is skipped, no update happens.
pub fn slr_train_step(
    model: &mut SlrModel,
    batch: &[&LoadedSample],
    cfg: &TrainConfig,
    opt: &mut Adam,
) -> Result<(Option<LossBreakdown>, usize)> {
    let mut tape = Tape::new();
    let leaves = model.store.leaves(&mut tape);
    let mut skipped = 0;
    let mut parts: Option<[Var; 5]> = None;
    let mut used = 0usize;
    for sample in batch {
        if !feasible(sample) {
            eprintln!("warning: skipping sample '{}': CTC-infeasible target", sample.id);
            skipped += 1;
            continue;
        }
        let streams = model.forward(&mut tape, &leaves, &sample.rgb.frames, &sample.flow.frames)?;
        let zero = tape.constant(Tensor::scalar(0.0));
        let sample_parts: [Var; 5] = match model.fusion_mode {
            FusionMode::Cma | FusionMode::Sum => {
                let (rgb_l, flow_l) = (streams.rgb.unwrap(), streams.flow.unwrap());
                let l_ctc = ctc_loss(&mut tape, streams.fused, &sample.gloss_ids)?;
                let l1 = ctc_loss(&mut tape, rgb_l, &sample.gloss_ids)?;
                let l2 = ctc_loss(&mut tape, flow_l, &sample.gloss_ids)?;
                let (l3, l4) = match cfg.kl_teacher {
                    KlTeacher::Fused => (
                        kl_distill(&mut tape, rgb_l, streams.fused)?,
                        kl_distill(&mut tape, flow_l, streams.fused)?,
                    ),
                    KlTeacher::Branch => (
                        kl_distill(&mut tape, streams.fused, rgb_l)?,
                        kl_distill(&mut tape, streams.fused, flow_l)?,
                    ),
                };
                [l_ctc, l1, l2, l3, l4]
            }
            FusionMode::Ensemble => {
                let l1 = ctc_loss(&mut tape, streams.rgb.unwrap(), &sample.gloss_ids)?;
                let l2 = ctc_loss(&mut tape, streams.flow.unwrap(), &sample.gloss_ids)?;
                [zero, l1, l2, zero, zero]
            }
            FusionMode::RgbOnly | FusionMode::FlowOnly => {
                let l_ctc = ctc_loss(&mut tape, streams.fused, &sample.gloss_ids)?;
                [l_ctc, zero, zero, zero, zero]
            }
        };
        used += 1;
        parts = Some(match parts {
            None => sample_parts,
            Some(acc) => {
                let mut next = acc;
                for i in 0..5 {
                    next[i] = tape.add(acc[i], sample_parts[i])?;
                }
                next
            }
        });
    }
    let Some(parts) = parts else {
        return Ok((None, skipped));
    };
    let inv = 1.0 / used as f64;
    let mean: Vec<Var> = parts.iter().map(|&p| tape.scale(p, inv)).collect();
    let (total, breakdown) = slr_total(
        &mut tape, mean[0], mean[1], mean[2], mean[3], mean[4], cfg.alpha, cfg.beta,
    )?;
    let grads = tape.backward(total)?;
    let mut grad_vec = model.store.collect_grads(&leaves, &grads);
    if cfg.freeze_flow_reduce {
        for id in model.flow_reduce_param_ids() {
            grad_vec[id].scale_in_place(0.0);
        }
    }
    opt.step(&mut model.store, &mut grad_vec);
    Ok((Some(breakdown), skipped))
}

/// Greedy-decode WER over a split, using the fused stream.
pub fn slr_evaluate(model: &SlrModel, samples: &[LoadedSample]) -> Result<MetricReport> {
    let mut counts = EditCounts::default();
    for sample in samples {
        let mut tape = Tape::new();
        let leaves = model.store.leaves(&mut tape);
        let streams = model.forward(&mut tape, &leaves, &sample.rgb.frames, &sample.flow.frames)?;
        let hyp = greedy_ctc_decode(tape.value(streams.fused));
        counts.accumulate(&crate::metrics::wer(&hyp, &sample.gloss_ids)?);
    }
    Ok(MetricReport { wer: counts.wer(), counts, bleu: None })
}

/// Full training run over a loaded dataset.
pub fn train_slr(set: &SampleSet, cfg: &TrainConfig) -> Result<(SlrModel, RunRecord)> {
    cfg.validate()?;
    let mut model = SlrModel::init(
        set.feature_dim(),
        set.vocab.gloss_vocab(),
        cfg.fusion_mode,
        cfg.seed,
    )?;
    let mut opt = Adam::new(&model.store, cfg.learning_rate, Some(cfg.grad_clip));
    let mut shuffle_rng = component_rng(cfg.seed, "shuffle");
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..set.train.len()).collect();
        shuffle_rng.shuffle(&mut order);
        let mut sums = [0.0f64; 6]; // l_ctc, l1, l2, l3, l4, total
        let mut steps = 0usize;
        let mut skipped = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&LoadedSample> = chunk.iter().map(|&i| &set.train[i]).collect();
            let (breakdown, skip) = slr_train_step(&mut model, &batch, cfg, &mut opt)?;
            skipped += skip;
            if let Some(b) = breakdown {
                sums[0] += b.l_ctc;
                sums[1] += b.l1;
                sums[2] += b.l2;
                sums[3] += b.l3;
                sums[4] += b.l4;
                sums[5] += b.total;
                steps += 1;
            }
        }
        let denom = steps.max(1) as f64;
        epochs.push(EpochRecord {
            epoch,
            mean_loss: LossBreakdown {
                l_ctc: sums[0] / denom,
                l1: sums[1] / denom,
                l2: sums[2] / denom,
                l3: sums[3] / denom,
                l4: sums[4] / denom,
                alpha: cfg.alpha,
                beta: cfg.beta,
                total: sums[5] / denom,
            },
            skipped,
        });
    }
    let final_train = Some(slr_evaluate(&model, &set.train)?);
    let final_dev = if set.dev.is_empty() {
        None
    } else {
        Some(slr_evaluate(&model, &set.dev)?)
    };
    let record = RunRecord {
        task: "slr".into(),
        config: cfg.clone(),
        epochs,
        final_train,
        final_dev,
    };
    Ok((model, record))
}
