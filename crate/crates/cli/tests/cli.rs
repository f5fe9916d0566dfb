use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lvtts_cli::{ExperimentConfig, SEED_ENV};

const SMALL: [&str; 3] = [
    "--corpus.n_utterances=12",
    "--train_decoder.max_epochs=1",
    "--train_vocoder.max_epochs=1",
];

fn lvtts(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lvtts"));
    cmd.args(args).env_remove(SEED_ENV);
    if let Some(s) = seed_env {
        cmd.env(SEED_ENV, s);
    }
    cmd.output().expect("binary runs")
}

fn small(head: &[&str]) -> Vec<String> {
    head.iter().chain(&SMALL).map(|s| s.to_string()).collect()
}

fn run_small(head: &[&str]) -> Output {
    let args = small(head);
    lvtts(&args.iter().map(String::as_str).collect::<Vec<_>>(), None)
}

fn resolved(out: &Path) -> ExperimentConfig {
    let text = fs::read_to_string(out.join("config.resolved")).unwrap();
    ExperimentConfig::from_text(&text, &[]).unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(lvtts(&["--help"], None).status.code(), Some(0));
    assert_eq!(lvtts(&["no-such-command"], None).status.code(), Some(2));
    assert_eq!(lvtts(&[], None).status.code(), Some(2));
}

#[test]
fn unknown_key_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let r = lvtts(&["gen-corpus", "--out", out, "--corpus.no_such_key=1"], None);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("corpus.no_such_key"));

    let cfg = tmp.path().join("bad.conf");
    fs::write(&cfg, "[vocoder]\nhidden = many\n").unwrap();
    let r = lvtts(&["gen-corpus", "--out", out, "--config", cfg.to_str().unwrap()], None);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn missing_prerequisites_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(
        run_small(&["train-vocoder", "--out", out, "--mode", "imnv"])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(
        run_small(&[
            "train-vocoder",
            "--out",
            out,
            "--mode",
            "jmnv",
            "--decoder",
            "nope.ckpt"
        ])
        .status
        .code(),
        Some(3)
    );
    assert_eq!(run_small(&["evaluate", "--out", out]).status.code(), Some(3));
    assert_eq!(run_small(&["synthesize", "--out", out]).status.code(), Some(3));
    assert_eq!(
        run_small(&["benchmark", "--out", out, "--decoder", "missing.ckpt"])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn seed_precedence_file_env_override() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("run.conf");
    fs::write(&conf, "[run]\nseed = 3\n\n[corpus]\nn_utterances = 12\n").unwrap();
    let c = conf.to_str().unwrap();
    let out = tmp.path().join("out");
    let o = out.to_str().unwrap();

    assert!(lvtts(&["gen-corpus", "--config", c, "--out", o], None).status.success());
    assert_eq!(resolved(&out).seed, 3);
    assert!(lvtts(&["gen-corpus", "--config", c, "--out", o], Some("5"))
        .status
        .success());
    assert_eq!(resolved(&out).seed, 5);
    assert!(
        lvtts(&["gen-corpus", "--config", c, "--out", o, "--run.seed=7"], Some("5"))
            .status
            .success()
    );
    let cfg = resolved(&out);
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.corpus.n_utterances, 12);
    assert_eq!(cfg.out, out);
}

#[test]
fn resolved_config_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let r = lvtts(
        &[
            "gen-corpus",
            "--out",
            out,
            "--corpus.n_utterances=12",
            "--decoder.arch=salad",
            "--train_vocoder.boundaries=2,5",
        ],
        None,
    );
    assert!(r.status.success());
    let cfg = resolved(tmp.path());
    assert_eq!(cfg.train_vocoder.boundaries, vec![2, 5]);
    assert_eq!(ExperimentConfig::from_text(&cfg.to_text(), &[]).unwrap(), cfg);
}

#[test]
fn pipeline_writes_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let o = root.to_str().unwrap();
    assert!(run_small(&["gen-corpus", "--out", o]).status.success());
    let corpus = root.join("corpus");
    let c = corpus.to_str().unwrap();
    assert!(run_small(&["train-decoder", "--out", o, "--corpus", c])
        .status
        .success());
    let dec = root.join("checkpoints/decoder.ckpt");
    let d = dec.to_str().unwrap();
    assert!(run_small(&[
        "train-vocoder",
        "--out",
        o,
        "--corpus",
        c,
        "--mode",
        "imnv",
        "--decoder",
        d
    ])
    .status
    .success());
    let voc = root.join("checkpoints/vocoder.ckpt");
    let v = voc.to_str().unwrap();
    assert!(run_small(&[
        "train-vocoder",
        "--out",
        o,
        "--corpus",
        c,
        "--mode",
        "jmnv",
        "--decoder",
        d,
        "--vocoder",
        v
    ])
    .status
    .success());
    assert!(root.join("checkpoints/decoder_joint.ckpt").is_file());
    assert!(
        run_small(&["synthesize", "--out", o, "--corpus", c, "--vocoder", v, "--decoder", d])
            .status
            .success()
    );
    assert!(fs::read_dir(root.join("synth")).unwrap().count() > 0);
    let r = run_small(&[
        "evaluate",
        "--out",
        o,
        "--corpus",
        c,
        "--decoder",
        d,
        "--vocoder",
        v,
        "--coupling.mode=imnv",
    ]);
    assert!(r.status.success());
    let r = run_small(&[
        "benchmark",
        "--out",
        o,
        "--decoder",
        d,
        "--benchmark.lengths_s=0.1,0.2,0.3",
        "--benchmark.repetitions=1",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for f in [
        "decoder_history.tsv",
        "decoder_valid.tsv",
        "vocoder_history.tsv",
        "synthesis.tsv",
        "eval_summary.tsv",
        "eval_utterances.tsv",
        "f0_histogram_ref.tsv",
        "f0_histogram_pred.tsv",
        "latency.tsv",
        "ransac.tsv",
    ] {
        assert!(root.join("metrics").join(f).is_file(), "missing {f}");
    }
    let latency = fs::read_to_string(root.join("metrics/latency.tsv")).unwrap();
    assert_eq!(latency.lines().count(), 4);
}

#[test]
fn gradcheck_subcommand_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let r = lvtts(
        &["gradcheck", "--out", tmp.path().to_str().unwrap(), "--seeds", "1"],
        None,
    );
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stdout));
    let tsv = fs::read_to_string(tmp.path().join("metrics/gradcheck.tsv")).unwrap();
    assert!(tsv.lines().count() > 10);
}
