use lvtts::corpus::{generate_corpus, Split, SynthSpec};
use lvtts::decoder::{Arch, DecoderConfig};
use lvtts::nn::{load_checkpoint, save_checkpoint};
use lvtts::train::{
    train_decoder, train_vocoder, vocoder_nll, CondSource, CouplingMode, LrSchedule, OptimizerConfig, TrainConfig,
    VocoderTrainConfig,
};
use lvtts::vocoder::TierConfig;
use lvtts::{Decoder, Error};

fn spec() -> SynthSpec {
    SynthSpec {
        n_utterances: 12,
        ..SynthSpec::default()
    }
}

fn tc(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        lanes: 2,
        window: 20,
        max_epochs: epochs,
        patience: 5,
        optimizer: OptimizerConfig::adam(),
        schedule: LrSchedule::Constant(3e-3),
        clip_norm: 1.0,
        seed,
    }
}

#[test]
fn decoder_training_is_seeded_and_never_reads_test() {
    let corpus = generate_corpus(&spec()).unwrap();
    for arch in [Arch::Rnn, Arch::Salad] {
        let cfg = DecoderConfig::desk(arch, corpus.input_dim());
        let (m1, h1) = train_decoder(&cfg, &tc(3, 1), &corpus).unwrap();
        let (m2, h2) = train_decoder(&cfg, &tc(3, 1), &corpus).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
        assert!(!h1.splits_read.contains(&Split::Test));
        let mse = h1.series(Split::Train, "mse");
        assert_eq!(mse.len(), 3);
        assert!(mse.last().unwrap() < mse.first().unwrap());
        let (m3, _) = train_decoder(&cfg, &tc(3, 2), &corpus).unwrap();
        assert_ne!(m1, m3);
    }
}

#[test]
fn checkpoint_reload_reproduces_decoding() {
    let corpus = generate_corpus(&spec()).unwrap();
    let cfg = DecoderConfig::desk(Arch::Rnn, corpus.input_dim());
    let (m, _) = train_decoder(&cfg, &tc(1, 3), &corpus).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.ckpt");
    save_checkpoint(&m, &path).unwrap();
    let mut back = Decoder::zeros(&cfg).unwrap();
    load_checkpoint(&mut back, &path).unwrap();
    let x = corpus.decoder_input(corpus.split(Split::Valid).next().unwrap());
    assert_eq!(m.decode(&x).unwrap().0, back.decode(&x).unwrap().0);
}

#[test]
fn vocoder_modes_and_prerequisites() {
    let corpus = generate_corpus(&spec()).unwrap();
    let tier = TierConfig::default();
    let vc = VocoderTrainConfig {
        train: TrainConfig {
            lanes: 4,
            window: 2,
            ..tc(1, 1)
        },
        fault_mismatched_norm: false,
    };
    for mode in [CouplingMode::Imnv, CouplingMode::ImnvPretrained, CouplingMode::Jmnv] {
        assert!(matches!(
            train_vocoder(tier, &vc, &corpus, mode, None, None),
            Err(Error::Prerequisite(_))
        ));
    }
    let inv = train_vocoder(tier, &vc, &corpus, CouplingMode::Inv, None, None).unwrap();
    assert!(inv.decoder.is_none());
    assert!(!inv.history.splits_read.contains(&Split::Test));
    let nll = vocoder_nll(&inv.vocoder, &corpus, Split::Valid, CondSource::GroundTruth).unwrap();
    assert!(nll.is_finite() && nll < (256f64).ln());

    let dcfg = DecoderConfig::desk(Arch::Rnn, corpus.input_dim());
    let (dec, _) = train_decoder(&dcfg, &tc(1, 1), &corpus).unwrap();
    let joint = train_vocoder(tier, &vc, &corpus, CouplingMode::Jmnv, Some(&dec), Some(&inv.vocoder)).unwrap();
    assert!(joint.decoder.as_ref().is_some_and(|d| *d != dec));
    assert_ne!(joint.vocoder, inv.vocoder);
}
