//! Translation pipeline: pre-extracted features -> fusion -> transformer
//! encoder-decoder -> cross-entropy, with greedy autoregressive decoding
//! and corpus-BLEU evaluation.

use crate::config::{component_rng, FusionMode, TrainConfig};
use crate::data::vocab::{BOS, EOS};
use crate::data::{LoadedSample, SampleSet};
use crate::error::{Error, Result};
use crate::fusion::{fuse_cma, fuse_sum, FusionParams};
use crate::losses::{cross_entropy, LossBreakdown};
use crate::metrics::{bleu, EditCounts, MetricReport};
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::record::{EpochRecord, RunRecord};
use crate::rng::Rng;
use crate::seqnet::{TransformerConfig, TransformerParams};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug)]
pub struct SltModel {
    pub store: ParamStore,
    pub fusion_mode: FusionMode,
    pub d: usize,
    pub token_vocab: usize,
    pub fusion: Option<FusionParams>,
    pub transformer: TransformerParams,
}

impl SltModel {
    pub fn init(
        d: usize,
        token_vocab: usize,
        cfg: &TransformerConfig,
        fusion_mode: FusionMode,
        seed: u64,
    ) -> Result<SltModel> {
        if fusion_mode == FusionMode::Ensemble {
            return Err(Error::Config(
                "ensemble fusion has no single encoder input; not supported for translation".into(),
            ));
        }
        let mut store = ParamStore::new();
        let fusion = (fusion_mode == FusionMode::Cma)
            .then(|| FusionParams::init(&mut store, "fusion", d, &mut component_rng(seed, "fusion")));
        let transformer = TransformerParams::init(
            &mut store,
            "tf",
            cfg.clone(),
            d,
            token_vocab,
            &mut component_rng(seed, "transformer"),
        )?;
        Ok(SltModel { store, fusion_mode, d, token_vocab, fusion, transformer })
    }

    /// Pin the CMA mixing weights (see [`crate::slr::SlrModel::set_fusion_weights`]).
    pub fn set_fusion_weights(&mut self, w: [f64; 3]) -> Result<()> {
        let fusion = self.fusion.as_ref().ok_or_else(|| {
            Error::Config(format!("fusion weights only exist in cma mode, not {}", self.fusion_mode))
        })?;
        self.store.set(fusion.w1, Tensor::scalar(w[0]));
        self.store.set(fusion.w2, Tensor::scalar(w[1]));
        self.store.set(fusion.w3, Tensor::scalar(w[2]));
        Ok(())
    }

    fn fuse(&self, tape: &mut Tape, leaves: &[Var], rgb: &Tensor, flow: &Tensor) -> Result<Var> {
        match self.fusion_mode {
            FusionMode::Cma => {
                let r = tape.constant(rgb.clone());
                let f = tape.constant(flow.clone());
                let vars = self.fusion.as_ref().unwrap().vars(leaves);
                fuse_cma(tape, r, f, &vars)
            }
            FusionMode::Sum => {
                let r = tape.constant(rgb.clone());
                let f = tape.constant(flow.clone());
                fuse_sum(tape, r, f)
            }
            FusionMode::RgbOnly => Ok(tape.constant(rgb.clone())),
            FusionMode::FlowOnly => Ok(tape.constant(flow.clone())),
            FusionMode::Ensemble => unreachable!("rejected at init"),
        }
    }

    /// Teacher-forced forward: logits `[len(prefix), vocab]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        leaves: &[Var],
        rgb: &Tensor,
        flow: &Tensor,
        target_prefix: &[usize],
        mut rng: Option<&mut Rng>,
    ) -> Result<Var> {
        let mm = self.fuse(tape, leaves, rgb, flow)?;
        let memory = self.transformer.encode(tape, mm, leaves, rng.as_mut().map(|r| &mut **r))?;
        self.transformer.decode(tape, memory, target_prefix, leaves, rng)
    }
}

/// One optimizer update; returns the pre-update mean cross-entropy.
pub fn slt_train_step(
    model: &mut SltModel,
    batch: &[&LoadedSample],
    cfg: &TrainConfig,
    opt: &mut Adam,
    dropout_rng: &mut Rng,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput { op: "slt_train_step", reason: "empty batch".into() });
    }
    let mut tape = Tape::new();
    let leaves = model.store.leaves(&mut tape);
    let mut total: Option<Var> = None;
    for sample in batch {
        let mut prefix = vec![BOS];
        prefix.extend_from_slice(&sample.token_ids);
        let mut targets = sample.token_ids.clone();
        targets.push(EOS);
        let mask = vec![true; targets.len()];
        let logits = model.forward(
            &mut tape,
            &leaves,
            &sample.rgb.frames,
            &sample.flow.frames,
            &prefix,
            Some(dropout_rng),
        )?;
        let loss = cross_entropy(&mut tape, logits, &targets, &mask, cfg.label_smoothing)?;
        total = Some(match total {
            None => loss,
            Some(acc) => tape.add(acc, loss)?,
        });
    }
    let mean = tape.scale(total.unwrap(), 1.0 / batch.len() as f64);
    let value = tape.value(mean).scalar_value();
    let grads = tape.backward(mean)?;
    let mut grad_vec = model.store.collect_grads(&leaves, &grads);
    opt.step(&mut model.store, &mut grad_vec);
    Ok(value)
}

/// BOS-seeded greedy decode until EOS or `max_len` emitted tokens.
pub fn slt_translate(
    model: &SltModel,
    rgb: &Tensor,
    flow: &Tensor,
    max_len: usize,
) -> Result<Vec<usize>> {
    let mut prefix = vec![BOS];
    let mut out = Vec::new();
    while out.len() < max_len {
        let mut tape = Tape::new();
        let leaves = model.store.leaves(&mut tape);
        let logits = model.forward(&mut tape, &leaves, rgb, flow, &prefix, None)?;
        let row = tape.value(logits).row(prefix.len() - 1).to_vec();
        let next = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if next == EOS {
            break;
        }
        out.push(next);
        prefix.push(next);
    }
    Ok(out)
}

/// Greedy-decode the split and score corpus BLEU plus token-level WER.
pub fn slt_evaluate(model: &SltModel, samples: &[LoadedSample], cfg: &TrainConfig) -> Result<MetricReport> {
    let mut hyps = Vec::with_capacity(samples.len());
    let mut refs = Vec::with_capacity(samples.len());
    let mut counts = EditCounts::default();
    for sample in samples {
        let hyp = slt_translate(model, &sample.rgb.frames, &sample.flow.frames, cfg.max_decode_len)?;
        counts.accumulate(&crate::metrics::wer(&hyp, &sample.token_ids)?);
        hyps.push(hyp);
        refs.push(sample.token_ids.clone());
    }
    let scores = bleu(&hyps, &refs, cfg.smooth_bleu)?;
    Ok(MetricReport { wer: counts.wer(), counts, bleu: Some(scores) })
}

/// Full training run over a loaded dataset.
pub fn train_slt(set: &SampleSet, cfg: &TrainConfig) -> Result<(SltModel, RunRecord)> {
    cfg.validate()?;
    let mut model = SltModel::init(
        set.feature_dim(),
        set.vocab.token_vocab(),
        &cfg.transformer,
        cfg.fusion_mode,
        cfg.seed,
    )?;
    let mut opt = Adam::new(&model.store, cfg.learning_rate, Some(cfg.grad_clip));
    let mut shuffle_rng = component_rng(cfg.seed, "shuffle");
    let mut dropout_rng = component_rng(cfg.seed, "dropout");
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..set.train.len()).collect();
        shuffle_rng.shuffle(&mut order);
        let mut sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&LoadedSample> = chunk.iter().map(|&i| &set.train[i]).collect();
            sum += slt_train_step(&mut model, &batch, cfg, &mut opt, &mut dropout_rng)?;
            steps += 1;
        }
        epochs.push(EpochRecord {
            epoch,
            mean_loss: LossBreakdown {
                l_ctc: 0.0,
                l1: 0.0,
                l2: 0.0,
                l3: 0.0,
                l4: 0.0,
                alpha: cfg.alpha,
                beta: cfg.beta,
                total: sum / steps.max(1) as f64,
            },
            skipped: 0,
        });
    }
    let final_train = Some(slt_evaluate(&model, &set.train, cfg)?);
    let final_dev = if set.dev.is_empty() {
        None
    } else {
        Some(slt_evaluate(&model, &set.dev, cfg)?)
    };
    let record = RunRecord {
        task: "slt".into(),
        config: cfg.clone(),
        epochs,
        final_train,
        final_dev,
    };
    Ok((model, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Coupling, SyntheticTaskSpec};

    fn tiny_transformer() -> TransformerConfig {
        TransformerConfig {
            model_dim: 16,
            heads: 2,
            ff_dim: 32,
            enc_layers: 1,
            dec_layers: 1,
            dropout: 0.0,
        }
    }

    fn tiny_set(seed: u64, samples: usize) -> SampleSet {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticTaskSpec {
            seed,
            train_samples: samples,
            dev_samples: 0,
            test_samples: 0,
            gloss_vocab: 4,
            feature_dim: 8,
            noise_sigma: 0.05,
            coupling: Coupling::Independent,
            min_glosses: 2,
            max_glosses: 3,
            ..Default::default()
        };
        let manifest = generate_synthetic(&spec, dir.path()).unwrap();
        SampleSet::load(&manifest).unwrap()
    }

    #[test]
    fn ensemble_mode_is_rejected() {
        assert!(SltModel::init(8, 10, &tiny_transformer(), FusionMode::Ensemble, 1).is_err());
    }

    #[test]
    fn forward_is_deterministic_without_dropout() {
        let set = tiny_set(31, 1);
        let s = &set.train[0];
        let run = || {
            let model =
                SltModel::init(8, set.vocab.token_vocab(), &tiny_transformer(), FusionMode::Cma, 2)
                    .unwrap();
            let mut tape = Tape::new();
            let leaves = model.store.leaves(&mut tape);
            let v = model
                .forward(&mut tape, &leaves, &s.rgb.frames, &s.flow.frames, &[BOS, 4], None)
                .unwrap();
            tape.value(v).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rgb_passthrough_weights_ignore_flow() {
        let set = tiny_set(32, 1);
        let s = &set.train[0];
        let mut model =
            SltModel::init(8, set.vocab.token_vocab(), &tiny_transformer(), FusionMode::Cma, 3)
                .unwrap();
        model.set_fusion_weights([1.0, 0.0, 0.0]).unwrap();
        let logits_with = |flow: &Tensor| {
            let mut tape = Tape::new();
            let leaves = model.store.leaves(&mut tape);
            let v = model
                .forward(&mut tape, &leaves, &s.rgb.frames, flow, &[BOS, 4, 5], None)
                .unwrap();
            tape.value(v).clone()
        };
        let a = logits_with(&s.flow.frames);
        let b = logits_with(&s.flow.frames.map(|v| v * -2.0 + 1.0));
        assert_eq!(a, b);
    }

    #[test]
    fn initial_loss_is_near_uniform_nll() {
        let set = tiny_set(33, 2);
        let vocab = set.vocab.token_vocab();
        let cfg = TrainConfig {
            transformer: tiny_transformer(),
            label_smoothing: 0.0,
            ..Default::default()
        };
        let mut model = SltModel::init(8, vocab, &tiny_transformer(), FusionMode::Cma, 4).unwrap();
        // zero the output projection: logits are uniform regardless of state
        let (out_w, out_b) = model.transformer.output_param_ids();
        let w_shape = model.store.value(out_w).shape().to_vec();
        let b_shape = model.store.value(out_b).shape().to_vec();
        model.store.set(out_w, Tensor::zeros(w_shape));
        model.store.set(out_b, Tensor::zeros(b_shape));
        let mut opt = Adam::new(&model.store, cfg.learning_rate, Some(cfg.grad_clip));
        let mut rng = component_rng(4, "dropout");
        let batch: Vec<&LoadedSample> = set.train.iter().collect();
        let loss = slt_train_step(&mut model, &batch, &cfg, &mut opt, &mut rng).unwrap();
        let uniform = (vocab as f64).ln();
        assert!((loss - uniform).abs() < 1e-12, "loss {loss} vs ln V {uniform}");
    }

    #[test]
    fn padding_mask_leaves_loss_unchanged() {
        use crate::data::vocab::PAD;
        let set = tiny_set(34, 1);
        let s = &set.train[0];
        let model =
            SltModel::init(8, set.vocab.token_vocab(), &tiny_transformer(), FusionMode::Cma, 5)
                .unwrap();
        let loss_with_pads = |extra: usize| {
            let mut tape = Tape::new();
            let leaves = model.store.leaves(&mut tape);
            let mut prefix = vec![BOS];
            prefix.extend_from_slice(&s.token_ids);
            let mut targets = s.token_ids.clone();
            targets.push(EOS);
            let mut mask = vec![true; targets.len()];
            for _ in 0..extra {
                prefix.push(PAD);
                targets.push(PAD);
                mask.push(false);
            }
            let logits = model
                .forward(&mut tape, &leaves, &s.rgb.frames, &s.flow.frames, &prefix, None)
                .unwrap();
            let loss = cross_entropy(&mut tape, logits, &targets, &mask, 0.0).unwrap();
            tape.value(loss).scalar_value()
        };
        // causal mask keeps pad positions from leaking into real ones, and
        // the loss mask zeroes their contribution
        assert_eq!(loss_with_pads(0), loss_with_pads(3));
    }

    #[test]
    fn loss_trends_down_and_translate_is_deterministic() {
        let set = tiny_set(35, 4);
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 4,
            transformer: tiny_transformer(),
            ..Default::default()
        };
        let (model, record) = train_slt(&set, &cfg).unwrap();
        let first = record.epochs[0].mean_loss.total;
        let last = record.epochs.last().unwrap().mean_loss.total;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
        let s = &set.train[0];
        let a = slt_translate(&model, &s.rgb.frames, &s.flow.frames, 10).unwrap();
        let b = slt_translate(&model, &s.rgb.frames, &s.flow.frames, 10).unwrap();
        assert_eq!(a, b);
        let capped = slt_translate(&model, &s.rgb.frames, &s.flow.frames, 1).unwrap();
        assert!(capped.len() <= 1);
    }

    #[test]
    fn training_is_deterministic() {
        let set = tiny_set(36, 2);
        let cfg = TrainConfig {
            epochs: 2,
            transformer: tiny_transformer(),
            ..Default::default()
        };
        let (_, r1) = train_slt(&set, &cfg).unwrap();
        let (_, r2) = train_slt(&set, &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&r1).unwrap(),
            serde_json::to_string(&r2).unwrap()
        );
    }

    #[test]
    fn gradient_reaches_fusion_weights() {
        let set = tiny_set(37, 2);
        let cfg = TrainConfig { transformer: tiny_transformer(), ..Default::default() };
        let model =
            SltModel::init(8, set.vocab.token_vocab(), &tiny_transformer(), FusionMode::Cma, 6)
                .unwrap();
        let mut tape = Tape::new();
        let leaves = model.store.leaves(&mut tape);
        let s = &set.train[0];
        let mut prefix = vec![BOS];
        prefix.extend_from_slice(&s.token_ids);
        let mut targets = s.token_ids.clone();
        targets.push(EOS);
        let logits = model
            .forward(&mut tape, &leaves, &s.rgb.frames, &s.flow.frames, &prefix, None)
            .unwrap();
        let loss = cross_entropy(
            &mut tape,
            logits,
            &targets,
            &vec![true; targets.len()],
            cfg.label_smoothing,
        )
        .unwrap();
        let grads = tape.backward(loss).unwrap();
        let fusion = model.fusion.as_ref().unwrap();
        let g_w2 = grads.of(leaves[fusion.w2.0], &[1]);
        assert!(g_w2.norm() > 0.0, "no gradient into fusion weight w2");
    }
}
