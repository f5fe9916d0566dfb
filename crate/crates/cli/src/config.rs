//! Experiment configuration: flat `key = value` text grouped under
//! `[section]` headers.
//!
//! Files are read into a `section.key -> value` table, command-line
//! overrides are merged on top, and the typed config is built from the
//! merged table. Keys left over after building are rejected. Presets
//! (`decoder.preset`, `*.optimizer`) are applied before the explicit keys of
//! their section, so the order of lines never matters.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use lvtts::corpus::SynthSpec;
use lvtts::decoder::{Arch, DecoderConfig};
use lvtts::train::{
    CouplingMode, LrSchedule, OptimizerConfig, OptimizerKind, StepSchedule, TrainConfig, VocoderTrainConfig,
};
use lvtts::vocoder::TierConfig;
use lvtts::{Error, Result};

/// Environment variable that replaces `run.seed`.
pub const SEED_ENV: &str = "LV_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderPreset {
    Desk,
    Small,
    Big,
}

impl FromStr for DecoderPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "small" => Ok(Self::Small),
            "big" => Ok(Self::Big),
            other => Err(Error::Config(format!("unknown decoder preset '{other}'"))),
        }
    }
}

impl std::fmt::Display for DecoderPreset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Desk => "desk",
            Self::Small => "small",
            Self::Big => "big",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Constant,
    Step,
    Noam,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "step" => Ok(Self::Step),
            "noam" => Ok(Self::Noam),
            other => Err(Error::Config(format!("unknown schedule '{other}'"))),
        }
    }
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Constant => "constant",
            Self::Step => "step",
            Self::Noam => "noam",
        })
    }
}

/// Optimizer family plus its constants. `noam_adam` is Adam with the
/// constants used alongside the warm-up schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerSection {
    pub name: &'static str,
    pub cfg: OptimizerConfig,
}

fn optimizer_preset(name: &str) -> Result<OptimizerSection> {
    let cfg = match name {
        "adam" => OptimizerConfig::adam(),
        "noam_adam" => OptimizerConfig::noam_adam(),
        "rmsprop" => OptimizerConfig::rmsprop(),
        other => return Err(Error::Config(format!("unknown optimizer '{other}'"))),
    };
    let name = match cfg.kind {
        OptimizerKind::Adam if name == "adam" => "adam",
        OptimizerKind::Adam => "noam_adam",
        OptimizerKind::RmsProp => "rmsprop",
    };
    Ok(OptimizerSection { name, cfg })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSection {
    pub lanes: usize,
    pub window: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub optimizer: OptimizerSection,
    pub schedule: ScheduleKind,
    pub lr: f64,
    pub gamma: f64,
    pub boundaries: Vec<usize>,
    pub warmup: u64,
    pub clip_norm: f64,
}

impl TrainSection {
    /// Concrete training config; `width` feeds the warm-up schedule.
    pub fn resolve(&self, width: usize, seed: u64) -> TrainConfig {
        let schedule = match self.schedule {
            ScheduleKind::Constant => LrSchedule::Constant(self.lr),
            ScheduleKind::Step => LrSchedule::Step(StepSchedule {
                base: self.lr,
                gamma: self.gamma,
                boundaries: self.boundaries.clone(),
            }),
            ScheduleKind::Noam => LrSchedule::Noam {
                width,
                warmup: self.warmup,
            },
        };
        TrainConfig {
            lanes: self.lanes,
            window: self.window,
            max_epochs: self.max_epochs,
            patience: self.patience,
            optimizer: self.optimizer.cfg,
            schedule,
            clip_norm: self.clip_norm,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub corpus: SynthSpec,
    pub decoder_preset: DecoderPreset,
    /// Built for the corpus input width `label_dim + 2`.
    pub decoder: DecoderConfig,
    pub vocoder: TierConfig,
    pub train_decoder: TrainSection,
    pub train_vocoder: TrainSection,
    pub mode: CouplingMode,
    pub fault_mismatched_norm: bool,
    pub synth_utterances: usize,
    pub synth_temperature: f64,
    pub bench_lengths_s: Vec<f64>,
    pub bench_repetitions: usize,
    pub bench_with_vocoder: bool,
    pub ransac_iterations: usize,
    pub hist_bins: usize,
    pub hist_range_hz: (f64, f64),
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::build(Table::default()).expect("defaults are valid")
    }
}

/// Raw `section.key -> value` pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table(BTreeMap<String, String>);

impl Table {
    /// Parses config text. Blank lines and lines starting with `#` or `;`
    /// are skipped; a key may appear only once per file.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut section: Option<String> = None;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let at = |m: &str| Error::Config(format!("line {}: {m}", no + 1));
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| at("unterminated section header"))?
                    .trim();
                if name.is_empty() || name.contains(char::is_whitespace) {
                    return Err(at("bad section name"));
                }
                section = Some(name.to_string());
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| at("expected key = value"))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(at("empty key"));
            }
            let sec = section.as_deref().ok_or_else(|| at("key outside any [section]"))?;
            let full = format!("{sec}.{k}");
            if map.insert(full.clone(), unquote(v.trim()).to_string()).is_some() {
                return Err(at(&format!("duplicate key {full}")));
            }
        }
        Ok(Self(map))
    }

    /// Sets `section.key`, replacing any earlier value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.split_once('.') {
            Some((s, k)) if !s.is_empty() && !k.is_empty() => {
                self.0.insert(key.to_string(), unquote(value.trim()).to_string());
                Ok(())
            }
            _ => Err(Error::Config(format!(
                "override key '{key}' must look like section.key"
            ))),
        }
    }

    /// Applies a `--section.key=value` argument.
    pub fn apply_override(&mut self, arg: &str) -> Result<()> {
        let body = arg
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("override '{arg}' must start with --")))?;
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{arg}' needs =value")))?;
        self.set(k, v)
    }

    fn take<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.0.remove(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'"))),
        }
    }

    fn take_with<T>(&mut self, key: &str, default: T, parse: impl Fn(&str) -> Result<T>) -> Result<T> {
        match self.0.remove(key) {
            None => Ok(default),
            Some(v) => parse(&v).map_err(|e| Error::Config(format!("{key}: {e}"))),
        }
    }
}

fn unquote(v: &str) -> &str {
    v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v)
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Config(format!("bad list item '{s}'"))))
        .collect()
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::Config(format!("'{other}' is not a boolean"))),
    }
}

fn join_list<T: std::fmt::Debug>(xs: &[T]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn preset_config(arch: Arch, preset: DecoderPreset, input_dim: usize) -> DecoderConfig {
    match (arch, preset) {
        (_, DecoderPreset::Desk) => DecoderConfig::desk(arch, input_dim),
        (Arch::Rnn, DecoderPreset::Small) => DecoderConfig::small_rnn(input_dim),
        (Arch::Rnn, DecoderPreset::Big) => DecoderConfig::big_rnn(input_dim),
        (Arch::Salad, DecoderPreset::Small) => DecoderConfig::small_salad(input_dim),
        (Arch::Salad, DecoderPreset::Big) => DecoderConfig::big_salad(input_dim),
    }
}

fn train_section(t: &mut Table, sec: &str, d: TrainSection) -> Result<TrainSection> {
    let key = |k: &str| format!("{sec}.{k}");
    let opt_name: String = t.take(&key("optimizer"), d.optimizer.name.to_string())?;
    let mut optimizer = optimizer_preset(&opt_name)?;
    optimizer.cfg.beta1 = t.take(&key("beta1"), optimizer.cfg.beta1)?;
    optimizer.cfg.beta2 = t.take(&key("beta2"), optimizer.cfg.beta2)?;
    optimizer.cfg.eps = t.take(&key("eps"), optimizer.cfg.eps)?;
    Ok(TrainSection {
        lanes: t.take(&key("lanes"), d.lanes)?,
        window: t.take(&key("window"), d.window)?,
        max_epochs: t.take(&key("max_epochs"), d.max_epochs)?,
        patience: t.take(&key("patience"), d.patience)?,
        optimizer,
        schedule: t.take(&key("schedule"), d.schedule)?,
        lr: t.take(&key("lr"), d.lr)?,
        gamma: t.take(&key("gamma"), d.gamma)?,
        boundaries: t.take_with(&key("boundaries"), d.boundaries, parse_list)?,
        warmup: t.take(&key("warmup"), d.warmup)?,
        clip_norm: t.take(&key("clip_norm"), d.clip_norm)?,
    })
}

fn decoder_train_defaults(arch: Arch) -> TrainSection {
    let base = TrainSection {
        lanes: 4,
        window: 40,
        max_epochs: 40,
        patience: 20,
        optimizer: optimizer_preset("adam").expect("known"),
        schedule: ScheduleKind::Constant,
        lr: 3e-3,
        gamma: 0.1,
        boundaries: vec![15, 35],
        warmup: 200,
        clip_norm: 1.0,
    };
    match arch {
        Arch::Rnn => base,
        Arch::Salad => TrainSection {
            max_epochs: 120,
            optimizer: optimizer_preset("noam_adam").expect("known"),
            schedule: ScheduleKind::Noam,
            ..base
        },
    }
}

fn vocoder_train_defaults() -> TrainSection {
    TrainSection {
        lanes: 8,
        window: 2,
        max_epochs: 20,
        patience: 10,
        optimizer: optimizer_preset("adam").expect("known"),
        schedule: ScheduleKind::Step,
        lr: 3e-3,
        gamma: 0.3,
        boundaries: vec![8, 16],
        warmup: 200,
        clip_norm: 1.0,
    }
}

impl ExperimentConfig {
    /// Parses file text, then applies `overrides` (`--section.key=value`) on top.
    pub fn from_text(text: &str, overrides: &[String]) -> Result<Self> {
        let mut t = Table::parse(text)?;
        for o in overrides {
            t.apply_override(o)?;
        }
        Self::build(t)
    }

    /// Builds from a merged table. Unknown keys are an error.
    pub fn build(mut t: Table) -> Result<Self> {
        let seed = t.take("run.seed", 1u64)?;
        let out = PathBuf::from(t.take("run.out", "lvtts-out".to_string())?);

        let c0 = SynthSpec::default();
        let corpus = SynthSpec {
            n_utterances: t.take("corpus.n_utterances", c0.n_utterances)?,
            frames_min: t.take("corpus.frames_min", c0.frames_min)?,
            frames_max: t.take("corpus.frames_max", c0.frames_max)?,
            phone_inventory: t.take("corpus.phone_inventory", c0.phone_inventory)?,
            label_dim: t.take("corpus.label_dim", c0.label_dim)?,
            voiced_fraction: t.take("corpus.voiced_fraction", c0.voiced_fraction)?,
            f0_min_hz: t.take("corpus.f0_min_hz", c0.f0_min_hz)?,
            f0_max_hz: t.take("corpus.f0_max_hz", c0.f0_max_hz)?,
            voiced_dur_min: t.take("corpus.voiced_dur_min", c0.voiced_dur_min)?,
            voiced_dur_max: t.take("corpus.voiced_dur_max", c0.voiced_dur_max)?,
            unvoiced_dur_min: t.take("corpus.unvoiced_dur_min", c0.unvoiced_dur_min)?,
            unvoiced_dur_max: t.take("corpus.unvoiced_dur_max", c0.unvoiced_dur_max)?,
            noise_floor: t.take("corpus.noise_floor", c0.noise_floor)?,
            seed: t.take("corpus.seed", c0.seed)?,
        };
        corpus.validate()?;

        let arch: Arch = t.take("decoder.arch", Arch::Rnn)?;
        let decoder_preset: DecoderPreset = t.take("decoder.preset", DecoderPreset::Desk)?;
        let d0 = preset_config(arch, decoder_preset, corpus.label_dim + 2);
        let decoder = DecoderConfig {
            embed: t.take("decoder.embed", d0.embed)?,
            hidden: t.take("decoder.hidden", d0.hidden)?,
            blocks: t.take("decoder.blocks", d0.blocks)?,
            heads: t.take("decoder.heads", d0.heads)?,
            d_ff: t.take("decoder.d_ff", d0.d_ff)?,
            attn_dropout: t.take("decoder.attn_dropout", d0.attn_dropout)?,
            ffn_dropout: t.take("decoder.ffn_dropout", d0.ffn_dropout)?,
            rnn_dropout: t.take("decoder.rnn_dropout", d0.rnn_dropout)?,
            ..d0
        };
        decoder.validate()?;

        let v0 = TierConfig::default();
        let vocoder = TierConfig {
            frame_top: t.take("vocoder.frame_top", v0.frame_top)?,
            frame_mid: t.take("vocoder.frame_mid", v0.frame_mid)?,
            hidden: t.take("vocoder.hidden", v0.hidden)?,
            levels: t.take("codec.levels", v0.levels)?,
            mu: t.take("codec.mu", v0.mu)?,
            ..v0
        };
        vocoder.validate()?;

        let train_decoder = train_section(&mut t, "train_decoder", decoder_train_defaults(arch))?;
        let train_vocoder = train_section(&mut t, "train_vocoder", vocoder_train_defaults())?;
        let mode = t.take("coupling.mode", CouplingMode::Inv)?;
        let fault_mismatched_norm = t.take_with("coupling.fault_mismatched_norm", false, parse_bool)?;

        let synth_utterances = t.take("synthesize.utterances", 2usize)?;
        let synth_temperature = t.take("synthesize.temperature", 1.0f64)?;
        if !(synth_temperature >= 0.0) {
            return Err(Error::Config("synthesize.temperature must be non-negative".into()));
        }

        let bench_lengths_s = t.take_with(
            "benchmark.lengths_s",
            vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0],
            parse_list,
        )?;
        if bench_lengths_s.is_empty() || bench_lengths_s.iter().any(|&l: &f64| !(l > 0.0)) {
            return Err(Error::Config("benchmark.lengths_s must be positive durations".into()));
        }
        let bench_repetitions = t.take("benchmark.repetitions", 3usize)?;
        let bench_with_vocoder = t.take_with("benchmark.with_vocoder", false, parse_bool)?;
        let ransac_iterations = t.take("benchmark.ransac_iterations", 200usize)?;

        let hist_bins = t.take("evaluate.hist_bins", 40usize)?;
        let hist_lo = t.take("evaluate.hist_lo_hz", 50.0f64)?;
        let hist_hi = t.take("evaluate.hist_hi_hz", 300.0f64)?;
        if hist_bins == 0 || !(hist_hi > hist_lo) {
            return Err(Error::Config("evaluate histogram needs bins ≥ 1 and hi > lo".into()));
        }

        if let Some(k) = t.0.keys().next() {
            return Err(Error::Config(format!("unknown key {k}")));
        }
        let cfg = Self {
            seed,
            out,
            corpus,
            decoder_preset,
            decoder,
            vocoder,
            train_decoder,
            train_vocoder,
            mode,
            fault_mismatched_norm,
            synth_utterances,
            synth_temperature,
            bench_lengths_s,
            bench_repetitions,
            bench_with_vocoder,
            ransac_iterations,
            hist_bins,
            hist_range_hz: (hist_lo, hist_hi),
        };
        cfg.decoder_train().validate()?;
        cfg.vocoder_train().train.validate()?;
        Ok(cfg)
    }

    pub fn decoder_train(&self) -> TrainConfig {
        self.train_decoder.resolve(self.decoder.embed, self.seed)
    }

    pub fn vocoder_train(&self) -> VocoderTrainConfig {
        VocoderTrainConfig {
            train: self.train_vocoder.resolve(self.vocoder.hidden, self.seed),
            fault_mismatched_norm: self.fault_mismatched_norm,
        }
    }

    /// Every key with its resolved value; parsing this text gives back `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut section = |name: &str, rows: Vec<(&str, String)>| {
            let _ = writeln!(s, "[{name}]");
            for (k, v) in rows {
                let _ = writeln!(s, "{k} = {v}");
            }
            s.push('\n');
        };
        section(
            "run",
            vec![("seed", self.seed.to_string()), ("out", self.out.display().to_string())],
        );
        let c = &self.corpus;
        section(
            "corpus",
            vec![
                ("seed", c.seed.to_string()),
                ("n_utterances", c.n_utterances.to_string()),
                ("frames_min", c.frames_min.to_string()),
                ("frames_max", c.frames_max.to_string()),
                ("phone_inventory", c.phone_inventory.to_string()),
                ("label_dim", c.label_dim.to_string()),
                ("voiced_fraction", format!("{:?}", c.voiced_fraction)),
                ("f0_min_hz", format!("{:?}", c.f0_min_hz)),
                ("f0_max_hz", format!("{:?}", c.f0_max_hz)),
                ("voiced_dur_min", c.voiced_dur_min.to_string()),
                ("voiced_dur_max", c.voiced_dur_max.to_string()),
                ("unvoiced_dur_min", c.unvoiced_dur_min.to_string()),
                ("unvoiced_dur_max", c.unvoiced_dur_max.to_string()),
                ("noise_floor", format!("{:?}", c.noise_floor)),
            ],
        );
        let d = &self.decoder;
        section(
            "decoder",
            vec![
                ("arch", d.arch.to_string()),
                ("preset", self.decoder_preset.to_string()),
                ("embed", d.embed.to_string()),
                ("hidden", d.hidden.to_string()),
                ("blocks", d.blocks.to_string()),
                ("heads", d.heads.to_string()),
                ("d_ff", d.d_ff.to_string()),
                ("attn_dropout", format!("{:?}", d.attn_dropout)),
                ("ffn_dropout", format!("{:?}", d.ffn_dropout)),
                ("rnn_dropout", format!("{:?}", d.rnn_dropout)),
            ],
        );
        let v = &self.vocoder;
        section(
            "vocoder",
            vec![
                ("frame_top", v.frame_top.to_string()),
                ("frame_mid", v.frame_mid.to_string()),
                ("hidden", v.hidden.to_string()),
            ],
        );
        section(
            "codec",
            vec![("mu", format!("{:?}", v.mu)), ("levels", v.levels.to_string())],
        );
        for (name, tr) in [
            ("train_decoder", &self.train_decoder),
            ("train_vocoder", &self.train_vocoder),
        ] {
            section(
                name,
                vec![
                    ("lanes", tr.lanes.to_string()),
                    ("window", tr.window.to_string()),
                    ("max_epochs", tr.max_epochs.to_string()),
                    ("patience", tr.patience.to_string()),
                    ("optimizer", tr.optimizer.name.to_string()),
                    ("beta1", format!("{:?}", tr.optimizer.cfg.beta1)),
                    ("beta2", format!("{:?}", tr.optimizer.cfg.beta2)),
                    ("eps", format!("{:?}", tr.optimizer.cfg.eps)),
                    ("schedule", tr.schedule.to_string()),
                    ("lr", format!("{:?}", tr.lr)),
                    ("gamma", format!("{:?}", tr.gamma)),
                    ("boundaries", join_list(&tr.boundaries)),
                    ("warmup", tr.warmup.to_string()),
                    ("clip_norm", format!("{:?}", tr.clip_norm)),
                ],
            );
        }
        section(
            "coupling",
            vec![
                ("mode", self.mode.to_string()),
                ("fault_mismatched_norm", self.fault_mismatched_norm.to_string()),
            ],
        );
        section(
            "synthesize",
            vec![
                ("utterances", self.synth_utterances.to_string()),
                ("temperature", format!("{:?}", self.synth_temperature)),
            ],
        );
        section(
            "benchmark",
            vec![
                ("lengths_s", join_list(&self.bench_lengths_s)),
                ("repetitions", self.bench_repetitions.to_string()),
                ("with_vocoder", self.bench_with_vocoder.to_string()),
                ("ransac_iterations", self.ransac_iterations.to_string()),
            ],
        );
        section(
            "evaluate",
            vec![
                ("hist_bins", self.hist_bins.to_string()),
                ("hist_lo_hz", format!("{:?}", self.hist_range_hz.0)),
                ("hist_hi_hz", format!("{:?}", self.hist_range_hz.1)),
            ],
        );
        s.pop();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_text(&c.to_text(), &[]).unwrap(), c);
    }

    #[test]
    fn later_override_wins() {
        let c =
            ExperimentConfig::from_text("[run]\nseed = 3\n", &["--run.seed=4".into(), "--run.seed=5".into()]).unwrap();
        assert_eq!(c.seed, 5);
    }

    #[test]
    fn preset_then_explicit_keys() {
        let c = ExperimentConfig::from_text("[decoder]\nembed = 64\npreset = small\n", &[]).unwrap();
        assert_eq!((c.decoder.embed, c.decoder.hidden), (64, 450));
    }

    #[test]
    fn salad_defaults_use_warmup() {
        let c = ExperimentConfig::from_text("[decoder]\narch = salad\n", &[]).unwrap();
        assert_eq!(c.train_decoder.schedule, ScheduleKind::Noam);
        assert_eq!(c.train_decoder.optimizer.name, "noam_adam");
    }
}
