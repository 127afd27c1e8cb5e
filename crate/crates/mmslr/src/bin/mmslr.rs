//! Command-line front end: dataset generation, training, evaluation,
//! fusion-strategy comparison, and self-verification.

use clap::{Args, Parser, Subcommand};
use mmslr::checkpoint::Checkpoint;
use mmslr::config::{FusionMode, KlTeacher, TrainConfig};
use mmslr::data::{generate_synthetic, Coupling, SampleSet, Split, VocabularyMap};
use mmslr::error::{Error, Result};
use mmslr::metrics::MetricReport;
use mmslr::record::RunRecord;
use mmslr::slr::slr_evaluate;
use mmslr::slt::slt_evaluate;
use mmslr::verify::{ctc_oracle_sweep, gradcheck_suite, GRADCHECK_TOLERANCE};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(name = "mmslr", about = "Cross-modal sign language recognition and translation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-modality dataset.
    Gen(GenArgs),
    /// Train a recognition or translation model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one dataset split.
    Eval(EvalArgs),
    /// Train every fusion mode over several seeds and tabulate dev WER.
    CompareFusion(CompareArgs),
    /// Finite-difference check of every differentiable composite.
    Gradcheck,
    /// Exhaustive brute-force equivalence sweep for the CTC loss.
    CtcOracle,
}

#[derive(Args)]
struct GenArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    train: usize,
    #[arg(long, default_value_t = 50)]
    dev: usize,
    #[arg(long, default_value_t = 0)]
    test: usize,
    #[arg(long, default_value_t = 16)]
    gloss_vocab: usize,
    #[arg(long, default_value_t = 1)]
    min_glosses: usize,
    #[arg(long, default_value_t = 1)]
    max_glosses: usize,
    #[arg(long, default_value_t = 4)]
    frames_per_gloss: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0.3)]
    sigma: f64,
    /// independent | xor
    #[arg(long, default_value = "xor")]
    coupling: String,
}

#[derive(Args)]
struct TrainArgs {
    /// slr | slt
    #[arg(long)]
    task: String,
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Run-record output path (JSON). Defaults next to the checkpoint.
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long, default_value = "cma")]
    fusion: FusionMode,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value = "fused")]
    kl_teacher: KlTeacher,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long)]
    freeze_flow_reduce: bool,
    #[arg(long, default_value_t = 0.1)]
    label_smoothing: f64,
    #[arg(long, default_value_t = 20)]
    max_decode_len: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// train | dev | test
    #[arg(long, default_value = "dev")]
    split: String,
    /// Load the checkpoint even if its content hash does not verify.
    #[arg(long)]
    force: bool,
    /// Where to write the JSON report (stdout text is always printed).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Where to write one JSON line per (mode, seed) run.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Resolve a path against MMSLR_DATA_DIR when it is relative and does not
/// exist as given.
fn resolve_data_path(path: &Path) -> PathBuf {
    if path.is_absolute() || path.exists() {
        return path.to_path_buf();
    }
    match std::env::var_os("MMSLR_DATA_DIR") {
        Some(root) => PathBuf::from(root).join(path),
        None => path.to_path_buf(),
    }
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "dev" => Ok(Split::Dev),
        "test" => Ok(Split::Test),
        other => Err(Error::Config(format!("unknown split '{other}'"))),
    }
}

fn print_report(report: &MetricReport) {
    println!(
        "WER {:.2}%  (S={} D={} I={} / N={})",
        report.wer,
        report.counts.substitutions,
        report.counts.deletions,
        report.counts.insertions,
        report.counts.reference_len
    );
    if let Some(bleu) = report.bleu {
        println!(
            "BLEU-1/2/3/4  {:.2} / {:.2} / {:.2} / {:.2}",
            bleu[0], bleu[1], bleu[2], bleu[3]
        );
    }
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let spec = mmslr::data::SyntheticTaskSpec {
        seed: args.seed,
        train_samples: args.train,
        dev_samples: args.dev,
        test_samples: args.test,
        gloss_vocab: args.gloss_vocab,
        min_glosses: args.min_glosses,
        max_glosses: args.max_glosses,
        frames_per_gloss: args.frames_per_gloss,
        feature_dim: args.dim,
        noise_sigma: args.sigma,
        coupling: match args.coupling.as_str() {
            "independent" => Coupling::Independent,
            "xor" => Coupling::Xor,
            other => return Err(Error::Config(format!("unknown coupling '{other}'"))),
        },
    };
    let manifest = generate_synthetic(&spec, &args.out)?;
    println!("wrote {}", manifest.display());
    Ok(())
}

fn train_config(args: &TrainArgs) -> TrainConfig {
    TrainConfig {
        seed: args.seed,
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.lr,
        alpha: args.alpha,
        beta: args.beta,
        fusion_mode: args.fusion,
        kl_teacher: args.kl_teacher,
        freeze_flow_reduce: args.freeze_flow_reduce,
        label_smoothing: args.label_smoothing,
        max_decode_len: args.max_decode_len,
        ..Default::default()
    }
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let manifest = resolve_data_path(&args.manifest);
    let set = SampleSet::load(&manifest)?;
    let cfg = train_config(args);
    let started = Instant::now();
    let (ckpt, record): (Checkpoint, RunRecord) = match args.task.as_str() {
        "slr" => {
            let (model, record) = mmslr::slr::train_slr(&set, &cfg)?;
            (Checkpoint::from_slr(&model, &cfg, &set.vocab)?, record)
        }
        "slt" => {
            let (model, record) = mmslr::slt::train_slt(&set, &cfg)?;
            (Checkpoint::from_slt(&model, &cfg, &set.vocab)?, record)
        }
        other => return Err(Error::Config(format!("unknown task '{other}'"))),
    };
    // wall time goes to stdout only: records must be byte-identical across
    // reruns of the same seed
    let elapsed = started.elapsed();
    ckpt.save(&args.out)?;
    let record_path = args.record.clone().unwrap_or_else(|| args.out.with_extension("run.json"));
    fs::write(&record_path, record.to_json()?)?;
    println!("trained {} for {} epochs in {:.1}s", args.task, cfg.epochs, elapsed.as_secs_f64());
    if let Some(report) = &record.final_train {
        print!("train: ");
        print_report(report);
    }
    if let Some(report) = &record.final_dev {
        print!("dev:   ");
        print_report(report);
    }
    println!("checkpoint: {}", args.out.display());
    println!("record:     {}", record_path.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let manifest = resolve_data_path(&args.manifest);
    let ckpt = Checkpoint::load(&args.ckpt, args.force)?;
    let set = load_with_vocab(&manifest, &ckpt.vocab)?;
    let split = parse_split(&args.split)?;
    let samples = set.split(split);
    if samples.is_empty() {
        return Err(Error::Config(format!("split '{}' is empty", args.split)));
    }
    let report = match ckpt.model_kind.as_str() {
        "slr" => slr_evaluate(&ckpt.build_slr()?, samples)?,
        "slt" => slt_evaluate(&ckpt.build_slt()?, samples, &ckpt.config)?,
        other => return Err(Error::Checkpoint(format!("unknown model kind '{other}'"))),
    };
    print_report(&report);
    if let Some(out) = &args.out {
        fs::write(out, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

/// Load a manifest but score against the checkpoint's vocabulary, so ids
/// line up with the trained heads.
fn load_with_vocab(manifest: &Path, vocab: &VocabularyMap) -> Result<SampleSet> {
    let entries = mmslr::data::manifest::read_manifest(manifest)?;
    let root = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut set = SampleSet {
        vocab: vocab.clone(),
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
    };
    for e in &entries {
        let sample = mmslr::data::manifest::load_sample(&root, e, vocab)?;
        match e.split {
            Split::Train => set.train.push(sample),
            Split::Dev => set.dev.push(sample),
            Split::Test => set.test.push(sample),
        }
    }
    Ok(set)
}

fn cmd_compare_fusion(args: &CompareArgs) -> Result<()> {
    let manifest = resolve_data_path(&args.manifest);
    let set = SampleSet::load(&manifest)?;
    if set.dev.is_empty() {
        return Err(Error::Config("compare-fusion needs a dev split".into()));
    }
    let mut lines = Vec::new();
    println!("{:<10} {:>8} {:>8}   per-seed dev WER", "mode", "mean", "sd");
    for mode in FusionMode::ALL {
        let mut wers = Vec::with_capacity(args.seeds as usize);
        for seed in 0..args.seeds {
            let cfg = TrainConfig {
                seed,
                epochs: args.epochs,
                batch_size: args.batch_size,
                learning_rate: args.lr,
                fusion_mode: mode,
                ..Default::default()
            };
            let (_, record) = mmslr::slr::train_slr(&set, &cfg)?;
            let wer = record.final_dev.as_ref().expect("dev split checked above").wer;
            lines.push(serde_json::json!({
                "mode": mode.as_str(),
                "seed": seed,
                "dev_wer": wer,
            }));
            wers.push(wer);
        }
        let mean = wers.iter().sum::<f64>() / wers.len() as f64;
        let var = wers.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / wers.len() as f64;
        let per_seed: Vec<String> = wers.iter().map(|w| format!("{w:.1}")).collect();
        println!("{:<10} {mean:>8.2} {:>8.2}   [{}]", mode.as_str(), var.sqrt(), per_seed.join(", "));
    }
    if let Some(out) = &args.out {
        let body: String = lines.iter().map(|l| format!("{l}\n")).collect();
        fs::write(out, body)?;
    }
    Ok(())
}

fn cmd_gradcheck() -> Result<()> {
    let results = gradcheck_suite()?;
    let mut failed = false;
    for r in &results {
        let status = if r.passed() { "pass" } else { "FAIL" };
        println!("{status}  {:<32} max rel err {:.3e}", r.name, r.max_err);
        failed |= !r.passed();
    }
    if failed {
        return Err(Error::NonFinite {
            context: format!("gradcheck exceeded tolerance {GRADCHECK_TOLERANCE}"),
        });
    }
    Ok(())
}

fn cmd_ctc_oracle() -> Result<()> {
    let (cases, max_diff) = ctc_oracle_sweep()?;
    let ok = max_diff <= 1e-9;
    println!(
        "{}  ctc dp vs brute force: {cases} cases, max |delta| {max_diff:.3e}",
        if ok { "pass" } else { "FAIL" }
    );
    if !ok {
        return Err(Error::NonFinite { context: "ctc oracle sweep exceeded 1e-9".into() });
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::CompareFusion(args) => cmd_compare_fusion(args),
        Command::Gradcheck => cmd_gradcheck(),
        Command::CtcOracle => cmd_ctc_oracle(),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
