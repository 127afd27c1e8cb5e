//! Synthetic two-modality recognition/translation task.
//!
//! Each sample is a sequence of glosses rendered as noisy prototype frames
//! in both streams. Coupling controls how much each stream knows on its own:
//!
//! - `independent`: every gloss has its own prototype in both streams, so
//!   either stream alone identifies the gloss.
//! - `xor`: gloss ids factor as `g = a * s + b` with `s = sqrt(G)`. The RGB
//!   prototype depends only on `a` and the flow prototype only on `b`, so
//!   each stream alone narrows a gloss to `s` candidates and only the joint
//!   observation pins it down. This makes fusion necessary by construction.
//!
//! Flow files are written with n-1 frames (one displacement field per frame
//! pair); the loader duplicates the final frame. Reruns with an identical
//! spec produce byte-identical output.

use crate::data::feature_file::write_feature_file;
use crate::data::manifest::{write_manifest, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::fusion::{FeatureSequence, Modality};
use crate::losses::ctc_required_frames;
use crate::rng::Rng;
use crate::seqnet::reduced_len;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coupling {
    Independent,
    Xor,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub seed: u64,
    pub train_samples: usize,
    pub dev_samples: usize,
    pub test_samples: usize,
    /// Gloss vocabulary size G. Must be a perfect square for xor coupling.
    pub gloss_vocab: usize,
    pub min_glosses: usize,
    pub max_glosses: usize,
    pub frames_per_gloss: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub coupling: Coupling,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            seed: 7,
            train_samples: 200,
            dev_samples: 50,
            test_samples: 0,
            gloss_vocab: 16,
            min_glosses: 1,
            max_glosses: 1,
            frames_per_gloss: 4,
            feature_dim: 32,
            noise_sigma: 0.3,
            coupling: Coupling::Xor,
        }
    }
}

fn integer_sqrt(n: usize) -> Option<usize> {
    let s = (n as f64).sqrt().round() as usize;
    (s * s == n).then_some(s)
}

impl SyntheticTaskSpec {
    fn validate(&self) -> Result<usize> {
        if self.gloss_vocab == 0 || self.feature_dim == 0 || self.frames_per_gloss == 0 {
            return Err(Error::Config("gloss_vocab, feature_dim, frames_per_gloss must be positive".into()));
        }
        if self.min_glosses == 0 || self.min_glosses > self.max_glosses {
            return Err(Error::Config(format!(
                "bad gloss count range {}..{}",
                self.min_glosses, self.max_glosses
            )));
        }
        if self.train_samples == 0 {
            return Err(Error::Config("need at least one training sample".into()));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::Config(format!("bad noise_sigma {}", self.noise_sigma)));
        }
        // the worst-case target must survive temporal reduction
        let worst_repeats = if self.gloss_vocab == 1 { self.max_glosses - 1 } else { 0 };
        let required = self.max_glosses + worst_repeats;
        let available = reduced_len(self.max_glosses * self.frames_per_gloss);
        if required > available {
            return Err(Error::Config(format!(
                "frames_per_gloss {} leaves {available} reduced frames for {required} labels",
                self.frames_per_gloss
            )));
        }
        match self.coupling {
            Coupling::Independent => Ok(0),
            Coupling::Xor => integer_sqrt(self.gloss_vocab).ok_or_else(|| {
                Error::Config(format!(
                    "xor coupling needs a perfect-square gloss_vocab, got {}",
                    self.gloss_vocab
                ))
            }),
        }
    }
}

/// Per-gloss prototype vectors for both streams.
pub(crate) fn prototypes(spec: &SyntheticTaskSpec, rng: &mut Rng) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = spec.feature_dim;
    let g_count = spec.gloss_vocab;
    let draw = |rng: &mut Rng| -> Vec<f64> { (0..d).map(|_| rng.normal() as f32 as f64).collect() };
    match spec.coupling {
        Coupling::Independent => {
            let rgb = (0..g_count).map(|_| draw(rng)).collect();
            let flow = (0..g_count).map(|_| draw(rng)).collect();
            (rgb, flow)
        }
        Coupling::Xor => {
            let s = integer_sqrt(g_count).expect("validated");
            let u: Vec<Vec<f64>> = (0..s).map(|_| draw(rng)).collect();
            let w: Vec<Vec<f64>> = (0..s).map(|_| draw(rng)).collect();
            let rgb = (0..g_count).map(|g| u[g / s].clone()).collect();
            let flow = (0..g_count).map(|g| w[g % s].clone()).collect();
            (rgb, flow)
        }
    }
}

fn gloss_name(g: usize) -> String {
    format!("g{g:02}")
}

fn word_name(g: usize) -> String {
    format!("w{g:02}")
}

/// Deterministic gloss-to-sentence template: one word per gloss, with the
/// first two words swapped when the gloss-id sum is odd (a fixed word-order
/// divergence so translation is not a pure relabeling).
fn render_translation(glosses: &[usize]) -> Vec<String> {
    let mut words: Vec<String> = glosses.iter().map(|&g| word_name(g)).collect();
    if words.len() >= 2 && glosses.iter().sum::<usize>() % 2 == 1 {
        words.swap(0, 1);
    }
    words
}

fn render_frames(
    protos: &[Vec<f64>],
    glosses: &[usize],
    frames_per_gloss: usize,
    sigma: f64,
    rng: &mut Rng,
) -> Tensor {
    let d = protos[0].len();
    let n = glosses.len() * frames_per_gloss;
    let mut data = Vec::with_capacity(n * d);
    for &g in glosses {
        for _ in 0..frames_per_gloss {
            for &p in &protos[g] {
                data.push((p + sigma * rng.normal()) as f32 as f64);
            }
        }
    }
    Tensor::new(vec![n, d], data).expect("render_frames shape")
}

fn sample_glosses(spec: &SyntheticTaskSpec, rng: &mut Rng) -> Vec<usize> {
    let len = spec.min_glosses + rng.range(spec.max_glosses - spec.min_glosses + 1);
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let mut g = rng.range(spec.gloss_vocab);
        // avoid adjacent repeats so every target fits after reduction
        while spec.gloss_vocab > 1 && out.last() == Some(&g) {
            g = rng.range(spec.gloss_vocab);
        }
        out.push(g);
    }
    out
}

/// Generate the dataset under `out_dir`: `rgb/`, `flow/`, `manifest.jsonl`,
/// and `task.json` recording the spec. Returns the manifest path.
pub fn generate_synthetic(spec: &SyntheticTaskSpec, out_dir: &Path) -> Result<std::path::PathBuf> {
    spec.validate()?;
    fs::create_dir_all(out_dir.join("rgb"))?;
    fs::create_dir_all(out_dir.join("flow"))?;
    let mut master = Rng::new(spec.seed);
    let mut proto_rng = master.split(1);
    let mut sample_rng = master.split(2);
    let (rgb_protos, flow_protos) = prototypes(spec, &mut proto_rng);

    let plan = [
        (Split::Train, "train", spec.train_samples),
        (Split::Dev, "dev", spec.dev_samples),
        (Split::Test, "test", spec.test_samples),
    ];
    let mut entries = Vec::new();
    for (split, tag, count) in plan {
        for i in 0..count {
            let id = format!("{tag}_{i:04}");
            let glosses = sample_glosses(spec, &mut sample_rng);
            debug_assert!(
                ctc_required_frames(&glosses) <= reduced_len(glosses.len() * spec.frames_per_gloss)
            );
            let rgb = render_frames(
                &rgb_protos,
                &glosses,
                spec.frames_per_gloss,
                spec.noise_sigma,
                &mut sample_rng,
            );
            let flow_full = render_frames(
                &flow_protos,
                &glosses,
                spec.frames_per_gloss,
                spec.noise_sigma,
                &mut sample_rng,
            );
            // emit n-1 flow frames: one displacement field per frame pair
            let n = flow_full.rows();
            let flow = Tensor::new(
                vec![n - 1, flow_full.cols()],
                flow_full.data()[..(n - 1) * flow_full.cols()].to_vec(),
            )?;
            let rgb_rel = format!("rgb/{id}.mmf");
            let flow_rel = format!("flow/{id}.mmf");
            write_feature_file(
                &FeatureSequence::new(Modality::Rgb, rgb)?,
                &out_dir.join(&rgb_rel),
            )?;
            write_feature_file(
                &FeatureSequence::new(Modality::Flow, flow)?,
                &out_dir.join(&flow_rel),
            )?;
            entries.push(ManifestEntry {
                id,
                rgb: rgb_rel,
                flow: flow_rel,
                gloss: glosses.iter().map(|&g| gloss_name(g)).collect(),
                translation: render_translation(&glosses),
                split,
            });
        }
    }
    let manifest_path = out_dir.join("manifest.jsonl");
    write_manifest(&manifest_path, &entries)?;
    fs::write(out_dir.join("task.json"), serde_json::to_vec_pretty(spec)?)?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::SampleSet;

    fn small_spec() -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            train_samples: 6,
            dev_samples: 2,
            test_samples: 1,
            gloss_vocab: 4,
            feature_dim: 8,
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_byte_identical_across_reruns() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let spec = small_spec();
        generate_synthetic(&spec, d1.path()).unwrap();
        generate_synthetic(&spec, d2.path()).unwrap();
        for rel in ["manifest.jsonl", "rgb/train_0003.mmf", "flow/dev_0001.mmf", "task.json"] {
            let a = fs::read(d1.path().join(rel)).unwrap();
            let b = fs::read(d2.path().join(rel)).unwrap();
            assert_eq!(a, b, "{rel} differs between reruns");
        }
    }

    #[test]
    fn generated_dataset_loads_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_synthetic(&small_spec(), dir.path()).unwrap();
        let set = SampleSet::load(&manifest).unwrap();
        assert_eq!(set.train.len(), 6);
        assert_eq!(set.dev.len(), 2);
        assert_eq!(set.test.len(), 1);
        for s in set.train.iter().chain(&set.dev).chain(&set.test) {
            assert_eq!(s.rgb.len() % 4, 0);
            assert_eq!(s.rgb.len(), s.flow.len());
            assert!(!s.gloss_ids.is_empty());
            assert_eq!(s.token_ids.len(), s.gloss_ids.len());
        }
    }

    #[test]
    fn flow_files_are_one_frame_short_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small_spec();
        generate_synthetic(&spec, dir.path()).unwrap();
        let rgb = crate::data::read_feature_file(&dir.path().join("rgb/train_0000.mmf"), Modality::Rgb).unwrap();
        let flow = crate::data::read_feature_file(&dir.path().join("flow/train_0000.mmf"), Modality::Flow).unwrap();
        assert_eq!(flow.len() + 1, rgb.len());
    }

    #[test]
    fn xor_needs_perfect_square_vocab() {
        let spec = SyntheticTaskSpec { gloss_vocab: 6, ..small_spec() };
        let dir = tempfile::tempdir().unwrap();
        let err = generate_synthetic(&spec, dir.path()).unwrap_err().to_string();
        assert!(err.contains("perfect-square"), "{err}");
    }

    #[test]
    fn xor_prototypes_are_single_stream_ambiguous() {
        // with G = 16, s = 4: each rgb prototype is shared by 4 glosses,
        // and only the (rgb, flow) pair identifies a gloss
        let spec = SyntheticTaskSpec { gloss_vocab: 16, ..small_spec() };
        let mut rng = Rng::new(3);
        let (rgb, flow) = prototypes(&spec, &mut rng);
        for g1 in 0..16 {
            for g2 in 0..16 {
                assert_eq!(rgb[g1] == rgb[g2], g1 / 4 == g2 / 4);
                assert_eq!(flow[g1] == flow[g2], g1 % 4 == g2 % 4);
                let joint_equal = rgb[g1] == rgb[g2] && flow[g1] == flow[g2];
                assert_eq!(joint_equal, g1 == g2);
            }
        }
    }

    #[test]
    fn independent_prototypes_are_distinct_per_stream() {
        let spec = SyntheticTaskSpec {
            coupling: Coupling::Independent,
            ..small_spec()
        };
        let mut rng = Rng::new(4);
        let (rgb, flow) = prototypes(&spec, &mut rng);
        for g1 in 0..spec.gloss_vocab {
            for g2 in (g1 + 1)..spec.gloss_vocab {
                assert_ne!(rgb[g1], rgb[g2]);
                assert_ne!(flow[g1], flow[g2]);
            }
        }
    }

    #[test]
    fn no_adjacent_gloss_repeats() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticTaskSpec { train_samples: 40, ..small_spec() };
        let manifest = generate_synthetic(&spec, dir.path()).unwrap();
        for e in crate::data::manifest::read_manifest(&manifest).unwrap() {
            for w in e.gloss.windows(2) {
                assert_ne!(w[0], w[1], "sample {} has an adjacent repeat", e.id);
            }
        }
    }
}
