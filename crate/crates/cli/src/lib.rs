//! Command-line front end. Every subcommand resolves an [`ExperimentConfig`],
//! writes it to `OUT/config.resolved` and puts its artifacts under a fixed
//! layout:
//!
//! ```text
//! OUT/config.resolved
//! OUT/corpus/        generated corpus
//! OUT/checkpoints/   decoder.ckpt, vocoder.ckpt, decoder_joint.ckpt
//! OUT/metrics/       TSV histories, metrics, latency and fit tables
//! OUT/synth/         generated waveforms
//! ```

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;

use lvtts::corpus::io::{read_corpus_splits, write_corpus};
use lvtts::corpus::synth::mix_seed;
use lvtts::corpus::{generate_corpus, Corpus, Split, FRAME_HOP};
use lvtts::eval::{
    f0_histogram, frame_metrics, histogram_tsv, latency_benchmark, latency_tsv, metrics_tsv, ransac_fit, ransac_tsv,
    spearman, MetricsReport,
};
use lvtts::nn::gradcheck::suite;
use lvtts::nn::{load_checkpoint, save_checkpoint, NnRng};
use lvtts::train::{
    conditioning, decoded_pair, evaluate_decoder, mean_frame_mcd, train_decoder, train_vocoder, vocoder_nll,
    CondSource, CouplingMode,
};
use lvtts::{Decoder, Error, Result, Vocoder};

pub use config::{ExperimentConfig, Table, SEED_ENV};

/// Relative-error bound every gradient check must stay under.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "lvtts", version, about = "Desk-scale neural TTS experiments")]
#[command(after_help = "Any config key can be overridden with --section.key=value, e.g. --run.seed=7.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Experiment config file (key = value with [section] headers).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; replaces run.out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Read the corpus from this directory instead of generating it.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
struct Models {
    /// Acoustic decoder checkpoint.
    #[arg(long)]
    decoder: Option<PathBuf>,
    /// Vocoder checkpoint.
    #[arg(long)]
    vocoder: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus into OUT/corpus.
    GenCorpus(Common),
    /// Train the acoustic decoder.
    TrainDecoder(Common),
    /// Train the vocoder under a coupling mode.
    TrainVocoder {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: Models,
        /// inv, imnv, imnv_pretrained or jmnv; replaces coupling.mode.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Generate waveforms for validation utterances.
    Synthesize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: Models,
    },
    /// Score checkpoints on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: Models,
    },
    /// Time decoding against generated duration and fit a robust line.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: Models,
    },
    /// Finite-difference check of every layer and both composed models.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Seeds per check.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
}

/// Maps an error to its process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Prerequisite(_) => 3,
        _ => 1,
    }
}

/// Splits `--section.key=value` overrides from the arguments clap sees.
fn is_override(arg: &str) -> bool {
    arg.strip_prefix("--")
        .and_then(|b| b.split_once('='))
        .is_some_and(|(k, _)| k.contains('.'))
}

/// Runs the CLI on full `argv` (program name first) and returns the exit code.
pub fn run(argv: Vec<String>) -> i32 {
    let (overrides, rest): (Vec<String>, Vec<String>) = argv.into_iter().partition(|a| is_override(a));
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command, &overrides) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("lvtts: {e}");
            exit_code(&e)
        }
    }
}

fn resolve(common: &Common, overrides: &[String], mode: Option<&str>) -> Result<ExperimentConfig> {
    let text = match &common.config {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut table = Table::parse(&text)?;
    if let Ok(seed) = std::env::var(SEED_ENV) {
        table.set("run.seed", &seed)?;
    }
    for o in overrides {
        table.apply_override(o)?;
    }
    if let Some(out) = &common.out {
        table.set("run.out", &out.display().to_string())?;
    }
    if let Some(m) = mode {
        table.set("coupling.mode", m)?;
    }
    ExperimentConfig::build(table)
}

struct Layout {
    root: PathBuf,
}

impl Layout {
    fn create(cfg: &ExperimentConfig) -> Result<Self> {
        let root = cfg.out.clone();
        fs::create_dir_all(&root)?;
        fs::write(root.join("config.resolved"), cfg.to_text())?;
        Ok(Self { root })
    }

    fn dir(&self, name: &str) -> Result<PathBuf> {
        let d = self.root.join(name);
        fs::create_dir_all(&d)?;
        Ok(d)
    }

    fn metric(&self, file: &str, body: &str) -> Result<()> {
        fs::write(self.dir("metrics")?.join(file), body)?;
        Ok(())
    }
}

/// Generated corpus restricted to `splits`, or the same splits read from disk.
fn load_corpus(cfg: &ExperimentConfig, dir: Option<&Path>, splits: &[Split]) -> Result<Corpus> {
    let corpus = match dir {
        Some(d) => read_corpus_splits(d, Some(splits))?,
        None => {
            let mut c = generate_corpus(&cfg.corpus)?;
            c.utterances.retain(|u| splits.contains(&u.split));
            c
        }
    };
    if corpus.input_dim() != cfg.decoder.input_dim {
        return Err(Error::Config(format!(
            "corpus input width {} does not match decoder input width {}",
            corpus.input_dim(),
            cfg.decoder.input_dim
        )));
    }
    Ok(corpus)
}

fn need_file(path: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    let p = path.ok_or_else(|| Error::Prerequisite(format!("{what} checkpoint not given")))?;
    if !p.is_file() {
        return Err(Error::Prerequisite(format!(
            "{what} checkpoint {} not found",
            p.display()
        )));
    }
    Ok(p.clone())
}

fn load_decoder(cfg: &ExperimentConfig, path: &Path) -> Result<Decoder> {
    let mut d = Decoder::zeros(&cfg.decoder)?;
    load_checkpoint(&mut d, path)?;
    Ok(d)
}

fn load_vocoder(cfg: &ExperimentConfig, path: &Path) -> Result<Vocoder> {
    let mut v = Vocoder::zeros(cfg.vocoder)?;
    load_checkpoint(&mut v, path)?;
    Ok(v)
}

fn optional_decoder(cfg: &ExperimentConfig, models: &Models) -> Result<Option<Decoder>> {
    models
        .decoder
        .as_ref()
        .map(|_| load_decoder(cfg, &need_file(models.decoder.as_ref(), "decoder")?))
        .transpose()
}

fn dispatch(command: Command, overrides: &[String]) -> Result<i32> {
    match command {
        Command::GenCorpus(common) => gen_corpus(&resolve(&common, overrides, None)?),
        Command::TrainDecoder(common) => {
            let cfg = resolve(&common, overrides, None)?;
            train_decoder_cmd(&cfg, common.corpus.as_deref())
        }
        Command::TrainVocoder { common, models, mode } => {
            let cfg = resolve(&common, overrides, mode.as_deref())?;
            train_vocoder_cmd(&cfg, common.corpus.as_deref(), &models)
        }
        Command::Synthesize { common, models } => {
            let cfg = resolve(&common, overrides, None)?;
            synthesize(&cfg, common.corpus.as_deref(), &models)
        }
        Command::Evaluate { common, models } => {
            let cfg = resolve(&common, overrides, None)?;
            evaluate(&cfg, common.corpus.as_deref(), &models)
        }
        Command::Benchmark { common, models } => {
            let cfg = resolve(&common, overrides, None)?;
            benchmark(&cfg, &models)
        }
        Command::Gradcheck { common, seeds } => {
            let cfg = resolve(&common, overrides, None)?;
            gradcheck(&cfg, seeds)
        }
    }
}

fn gen_corpus(cfg: &ExperimentConfig) -> Result<i32> {
    let layout = Layout::create(cfg)?;
    let corpus = generate_corpus(&cfg.corpus)?;
    let dir = layout.root.join("corpus");
    write_corpus(&corpus, &dir)?;
    for s in [Split::Train, Split::Valid, Split::Test] {
        let frames: usize = corpus.split(s).map(|u| u.frames()).sum();
        println!("{s}\t{} utterances\t{frames} frames", corpus.split(s).count());
    }
    println!("corpus written to {}", dir.display());
    Ok(0)
}

fn train_decoder_cmd(cfg: &ExperimentConfig, corpus_dir: Option<&Path>) -> Result<i32> {
    let layout = Layout::create(cfg)?;
    let corpus = load_corpus(cfg, corpus_dir, &[Split::Train, Split::Valid])?;
    let (model, history) = train_decoder(&cfg.decoder, &cfg.decoder_train(), &corpus)?;
    let ckpt = layout.dir("checkpoints")?.join("decoder.ckpt");
    save_checkpoint(&model, &ckpt)?;
    layout.metric("decoder_history.tsv", &history.to_tsv())?;
    let valid = evaluate_decoder(&model, &corpus, Split::Valid)?;
    layout.metric("decoder_valid.tsv", &metrics_tsv(&[("valid".into(), valid)]))?;
    println!(
        "{} decoder: {} epochs, best {}; valid MCD {:.4} dB, UV {:.2}%",
        cfg.decoder.arch, history.epochs_run, history.best_epoch, valid.mcd_db, valid.uv_accuracy_pct
    );
    println!("checkpoint {}", ckpt.display());
    Ok(0)
}

fn train_vocoder_cmd(cfg: &ExperimentConfig, corpus_dir: Option<&Path>, models: &Models) -> Result<i32> {
    let decoder = match cfg.mode {
        CouplingMode::Inv => None,
        _ => Some(load_decoder(cfg, &need_file(models.decoder.as_ref(), "decoder")?)?),
    };
    let init = match cfg.mode {
        CouplingMode::ImnvPretrained | CouplingMode::Jmnv => {
            Some(load_vocoder(cfg, &need_file(models.vocoder.as_ref(), "vocoder")?)?)
        }
        _ => None,
    };
    let layout = Layout::create(cfg)?;
    let corpus = load_corpus(cfg, corpus_dir, &[Split::Train, Split::Valid])?;
    let out = train_vocoder(
        cfg.vocoder,
        &cfg.vocoder_train(),
        &corpus,
        cfg.mode,
        decoder.as_ref(),
        init.as_ref(),
    )?;
    let ckpts = layout.dir("checkpoints")?;
    save_checkpoint(&out.vocoder, &ckpts.join("vocoder.ckpt"))?;
    if let Some(d) = &out.decoder {
        save_checkpoint(d, &ckpts.join("decoder_joint.ckpt"))?;
    }
    layout.metric("vocoder_history.tsv", &out.history.to_tsv())?;
    let best = out
        .history
        .series(Split::Valid, "nll")
        .get(out.history.best_epoch)
        .copied()
        .unwrap_or(f64::NAN);
    println!(
        "{} vocoder: {} epochs, best {}; valid NLL {best:.4} nats/sample (uniform {:.4})",
        cfg.mode,
        out.history.epochs_run,
        out.history.best_epoch,
        (cfg.vocoder.levels as f64).ln()
    );
    println!("checkpoint {}", ckpts.join("vocoder.ckpt").display());
    Ok(0)
}

fn synthesize(cfg: &ExperimentConfig, corpus_dir: Option<&Path>, models: &Models) -> Result<i32> {
    let vocoder = load_vocoder(cfg, &need_file(models.vocoder.as_ref(), "vocoder")?)?;
    let decoder = optional_decoder(cfg, models)?;
    let layout = Layout::create(cfg)?;
    let corpus = load_corpus(cfg, corpus_dir, &[Split::Train, Split::Valid])?;
    let source = match &decoder {
        Some(d) => CondSource::Decoder(d),
        None => CondSource::GroundTruth,
    };
    let dir = layout.dir("synth")?;
    let mut rng = NnRng::seed_from_u64(mix_seed(cfg.seed, 2));
    let mut table = String::from("utterance\tsamples\tduration_s\ttop_steps\tmid_steps\tsample_steps\tcond_frames\n");
    for u in corpus.split(Split::Valid).take(cfg.synth_utterances) {
        let conds = conditioning(&corpus, u, source)?;
        let (wave, stats) = vocoder.generate(&conds, conds.rows() * FRAME_HOP, &mut rng, cfg.synth_temperature)?;
        wave.save(&dir.join(format!("{}.lvwv", u.id)))?;
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            u.id,
            wave.len(),
            wave.duration_s(),
            stats.top_steps,
            stats.mid_steps,
            stats.sample_steps,
            stats.cond_frames_used
        ));
        println!("{}: {} samples", u.id, wave.len());
    }
    layout.metric("synthesis.tsv", &table)?;
    Ok(0)
}

fn evaluate(cfg: &ExperimentConfig, corpus_dir: Option<&Path>, models: &Models) -> Result<i32> {
    if models.decoder.is_none() && models.vocoder.is_none() {
        return Err(Error::Prerequisite("evaluate needs --decoder and/or --vocoder".into()));
    }
    let decoder = optional_decoder(cfg, models)?;
    let vocoder = match &models.vocoder {
        Some(_) => Some(load_vocoder(cfg, &need_file(models.vocoder.as_ref(), "vocoder")?)?),
        None => None,
    };
    let source = match (cfg.mode, &decoder) {
        (CouplingMode::Inv, _) => CondSource::GroundTruth,
        (_, Some(d)) => CondSource::Decoder(d),
        (_, None) if vocoder.is_some() => {
            return Err(Error::Prerequisite(format!(
                "scoring a {} vocoder needs the decoder that conditions it",
                cfg.mode
            )))
        }
        (_, None) => CondSource::GroundTruth,
    };
    let layout = Layout::create(cfg)?;
    let corpus = load_corpus(cfg, corpus_dir, &[Split::Test])?;

    let mut summary = MetricsReport::default();
    let mut rows = Vec::new();
    let (lo, hi) = cfg.hist_range_hz;
    let (mut ref_lf0, mut ref_uv, mut pred_lf0, mut pred_uv) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for u in corpus.split(Split::Test) {
        let mut r = MetricsReport::default();
        if let Some(d) = &decoder {
            let (pred, reference) = decoded_pair(d, &corpus, u)?;
            r = frame_metrics(&reference, &pred)?;
            for t in 0..pred.rows() {
                pred_lf0.push(pred.row(t)[lvtts::corpus::features::LOG_F0]);
                pred_uv.push(if pred.row(t)[lvtts::corpus::features::UV] >= 0.5 {
                    1.0
                } else {
                    0.0
                });
            }
        }
        for t in 0..u.acoustic.rows() {
            ref_lf0.push(u.acoustic.row(t)[lvtts::corpus::features::LOG_F0]);
            ref_uv.push(u.acoustic.row(t)[lvtts::corpus::features::UV]);
        }
        if let Some(v) = &vocoder {
            let one = Corpus {
                utterances: vec![u.clone()],
                stats: corpus.stats.clone(),
                label_dim: corpus.label_dim,
            };
            r.nll = vocoder_nll(v, &one, Split::Test, source)?;
        }
        rows.push((u.id.clone(), r));
    }
    if let Some(d) = &decoder {
        summary = evaluate_decoder(d, &corpus, Split::Test)?;
        let hist = f0_histogram(&pred_lf0, &pred_uv, cfg.hist_bins, (lo, hi))?;
        layout.metric("f0_histogram_pred.tsv", &histogram_tsv(&hist, (lo, hi)))?;
    }
    let hist = f0_histogram(&ref_lf0, &ref_uv, cfg.hist_bins, (lo, hi))?;
    layout.metric("f0_histogram_ref.tsv", &histogram_tsv(&hist, (lo, hi)))?;
    if let Some(v) = &vocoder {
        summary.nll = vocoder_nll(v, &corpus, Split::Test, source)?;
    }
    layout.metric("eval_utterances.tsv", &metrics_tsv(&rows))?;
    layout.metric("eval_summary.tsv", &metrics_tsv(&[("test".into(), summary)]))?;
    if decoder.is_some() {
        println!(
            "test MCD {:.4} dB (mean-frame baseline {:.4}), F0 RMSE {:.3} Hz, UV {:.2}%",
            summary.mcd_db,
            mean_frame_mcd(&corpus, Split::Test)?,
            summary.f0_rmse_hz,
            summary.uv_accuracy_pct
        );
    }
    if vocoder.is_some() {
        println!(
            "test NLL {:.4} nats/sample (uniform {:.4})",
            summary.nll,
            (cfg.vocoder.levels as f64).ln()
        );
    }
    Ok(0)
}

fn benchmark(cfg: &ExperimentConfig, models: &Models) -> Result<i32> {
    let decoder = load_decoder(cfg, &need_file(models.decoder.as_ref(), "decoder")?)?;
    let vocoder = if cfg.bench_with_vocoder {
        Some(load_vocoder(cfg, &need_file(models.vocoder.as_ref(), "vocoder")?)?)
    } else {
        None
    };
    let layout = Layout::create(cfg)?;
    let id = cfg.decoder.arch.to_string();
    let points = latency_benchmark(
        &id,
        &decoder,
        vocoder.as_ref(),
        &cfg.bench_lengths_s,
        cfg.bench_repetitions,
        cfg.seed,
    )?;
    let xs: Vec<f64> = points.iter().map(|p| p.generated_duration_s).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.wall_time_s).collect();
    let fit = ransac_fit(&xs, &ys, None, cfg.ransac_iterations, cfg.seed)?;
    let rho = spearman(&xs, &ys)?;
    layout.metric("latency.tsv", &latency_tsv(&points))?;
    layout.metric("ransac.tsv", &ransac_tsv(&[(id.clone(), fit.clone())]))?;
    println!(
        "{id}: slope {:.3e} s/s, intercept {:.3e} s, max latency {:.3e} s, spearman {rho:.3}",
        fit.slope, fit.intercept, fit.max_latency_at_longest
    );
    Ok(0)
}

fn gradcheck(cfg: &ExperimentConfig, seeds: u64) -> Result<i32> {
    if seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let layout = Layout::create(cfg)?;
    let mut table = String::from("layer\tmax_rel_err\tchecked\tworst\n");
    let mut ok = true;
    for (name, r) in suite(seeds) {
        let pass = r.max_relative_error < GRADCHECK_TOLERANCE;
        ok &= pass;
        println!(
            "{name:<14} {:.3e}  {}  ({} comparisons, worst {})",
            r.max_relative_error,
            if pass { "ok" } else { "FAIL" },
            r.checked,
            r.worst
        );
        table.push_str(&format!(
            "{name}\t{}\t{}\t{}\n",
            r.max_relative_error, r.checked, r.worst
        ));
    }
    layout.metric("gradcheck.tsv", &table)?;
    Ok(if ok { 0 } else { 1 })
}
