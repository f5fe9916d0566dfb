use lvtts::nn::tensor::SampleFrameTensor;
use lvtts::nn::{NnRng, Parameterized};
use lvtts::vocoder::{teacher_forced_nll, teacher_forced_nll_chunked, TierConfig, VocoderModel};
use rand::{Rng, SeedableRng};

fn tiny() -> TierConfig {
    TierConfig {
        frame_top: 8,
        frame_mid: 2,
        hidden: 4,
        cond_dim: 3,
        levels: 16,
        mu: 255.0,
    }
}

fn jittered(cfg: TierConfig, seed: u64) -> VocoderModel<f64> {
    let mut rng = NnRng::seed_from_u64(seed);
    let mut m = VocoderModel::new(cfg, &mut rng).unwrap();
    m.visit_mut("", &mut |_, t| {
        for v in t.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    });
    m
}

fn random_input(cfg: &TierConfig, n: usize, seed: u64) -> (Vec<usize>, SampleFrameTensor<f64>) {
    let mut rng = NnRng::seed_from_u64(seed);
    let classes = (0..n).map(|_| rng.random_range(0..cfg.levels)).collect();
    let rows = n.div_ceil(80);
    let conds = (0..rows * cfg.cond_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    (classes, SampleFrameTensor::new(&[rows, cfg.cond_dim], conds).unwrap())
}

// Plain-loop re-implementation of the three tiers for the first top frame.
mod scalar {
    use super::*;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn gru(c: &lvtts::nn::GruCell<f64>, x: &[f64], h: &[f64]) -> Vec<f64> {
        let n = h.len();
        let wi = c.w_ih.data();
        let wh = c.w_hh.data();
        let row = |w: &[f64], r: usize, v: &[f64]| -> f64 { (0..v.len()).map(|j| w[r * v.len() + j] * v[j]).sum() };
        (0..n)
            .map(|u| {
                let r = sig(row(wi, u, x) + c.b_ih.data()[u] + row(wh, u, h) + c.b_hh.data()[u]);
                let z = sig(row(wi, n + u, x) + c.b_ih.data()[n + u] + row(wh, n + u, h) + c.b_hh.data()[n + u]);
                let cand = (row(wi, 2 * n + u, x)
                    + c.b_ih.data()[2 * n + u]
                    + r * (row(wh, 2 * n + u, h) + c.b_hh.data()[2 * n + u]))
                    .tanh();
                (1.0 - z) * cand + z * h[u]
            })
            .collect()
    }

    fn conv_single(c: &lvtts::nn::Conv1d<f64>, x: &[f64], ci: usize, co: usize) -> Vec<f64> {
        let k = x.len() / ci;
        (0..co)
            .map(|o| {
                let mut acc = c.bias.data()[o];
                for i in 0..ci {
                    for j in 0..k {
                        acc += c.kernel.data()[(o * ci + i) * k + j] * x[j * ci + i];
                    }
                }
                acc
            })
            .collect()
    }

    fn upsample(c: &lvtts::nn::TransposedConv1d<f64>, x: &[f64], r: usize) -> Vec<Vec<f64>> {
        let co = c.bias.len();
        (0..r)
            .map(|j| {
                (0..co)
                    .map(|o| {
                        c.bias.data()[o]
                            + (0..x.len())
                                .map(|i| x[i] * c.kernel.data()[(i * co + o) * r + j])
                                .sum::<f64>()
                    })
                    .collect()
            })
            .collect()
    }

    fn dense(l: &lvtts::nn::LinearLayer<f64>, x: &[f64]) -> Vec<f64> {
        let out = l.b.len();
        (0..out)
            .map(|o| l.b.data()[o] + (0..x.len()).map(|i| l.w.data()[o * x.len() + i] * x[i]).sum::<f64>())
            .collect()
    }

    pub fn first_frame_nll(m: &VocoderModel<f64>, classes: &[usize], cond: &[f64]) -> f64 {
        let c = m.cfg;
        let q = c.levels as f64;
        let value = |k: usize| (k as f64 + 0.5) * 2.0 / q - 1.0;
        let mut vals = vec![value(c.levels / 2); c.frame_top];
        vals.extend(classes[..c.frame_top].iter().map(|&k| value(k)));
        let h = c.hidden;
        let a: Vec<f64> = conv_single(&m.top_input, &vals[..c.frame_top], 1, h)
            .iter()
            .zip(conv_single(&m.top_cond, cond, c.cond_dim, h))
            .map(|(x, y)| x + y)
            .collect();
        let z = vec![0.0; h];
        let h1 = gru(&m.top_rnn[0], &a, &z);
        let h2 = gru(&m.top_rnn[1], &h1, &z);
        let mids = upsample(&m.top_up, &h2, c.frame_top / c.frame_mid);
        let (mut g1, mut g2) = (z.clone(), z.clone());
        let mut total = 0.0;
        for (j, mc) in mids.iter().enumerate() {
            let m0 = c.frame_top + j * c.frame_mid;
            let a: Vec<f64> = conv_single(&m.mid_input, &vals[m0 - c.frame_mid..m0], 1, h)
                .iter()
                .zip(mc)
                .map(|(x, y)| x + y)
                .collect();
            g1 = gru(&m.mid_rnn[0], &a, &g1);
            g2 = gru(&m.mid_rnn[1], &g1, &g2);
            let sc = upsample(&m.mid_up, &g2, c.frame_mid);
            for (s, cv) in sc.iter().enumerate() {
                let t = m0 + s;
                let mut x = vals[t - c.frame_mid..t].to_vec();
                x.extend_from_slice(cv);
                let hid: Vec<f64> = dense(&m.sample_hidden, &x).into_iter().map(|v| v.max(0.0)).collect();
                let logits = dense(&m.sample_out, &hid);
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
                total += lse - logits[classes[t - c.frame_top]];
            }
        }
        total / c.frame_top as f64
    }
}

#[test]
fn first_frame_matches_scalar_recomputation() {
    let cfg = tiny();
    for seed in 0..5 {
        let m = jittered(cfg, seed);
        let (classes, conds) = random_input(&cfg, 8, seed + 100);
        let fast = teacher_forced_nll(&m, &classes, &conds).unwrap();
        let slow = scalar::first_frame_nll(&m, &classes, conds.row(0));
        assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
    }
}

#[test]
fn untrained_zero_model_scores_ln_q() {
    let cfg = TierConfig::default();
    let m = VocoderModel::<f64>::zeros(cfg).unwrap();
    let (classes, conds) = random_input(&cfg, 160, 3);
    let nll = teacher_forced_nll(&m, &classes, &conds).unwrap();
    assert!((nll - 256f64.ln()).abs() < 1e-12);
    assert!((nll - 5.545).abs() < 1e-3);
}

#[test]
fn chunked_evaluation_matches_full_sequence() {
    let cfg = tiny();
    let m = jittered(cfg, 7);
    let (classes, conds) = random_input(&cfg, 400, 8);
    let full = teacher_forced_nll(&m, &classes, &conds).unwrap();
    for chunk in [80, 160, 240] {
        let part = teacher_forced_nll_chunked(&m, &classes, &conds, chunk).unwrap();
        assert!((full - part).abs() < 1e-10, "chunk {chunk}: {full} vs {part}");
    }
}

#[test]
fn training_pass_loss_equals_evaluation() {
    let cfg = tiny();
    let m = jittered(cfg, 11);
    let (classes, conds) = random_input(&cfg, 160, 12);
    let mut s1 = m.initial_state();
    let mut s2 = m.initial_state();
    let (a, na) = m.nll_sum(&classes, &conds, &mut s1).unwrap();
    let mut g = m.zeros_like();
    let (b, nb, _) = m
        .forward_backward(&classes, &conds, &mut s2, &mut g, 1.0, false)
        .unwrap();
    assert_eq!(na, nb);
    assert!((a - b).abs() < 1e-10);
    assert_eq!(s1, s2);
}

#[test]
fn causality_probe() {
    let cfg = tiny();
    let mut rng = NnRng::seed_from_u64(99);
    for trial in 0..10 {
        let m = jittered(cfg, trial);
        let (classes, conds) = random_input(&cfg, 240, 1000 + trial);
        let base = m
            .teacher_forced_logits(&classes, &conds, &mut m.initial_state())
            .unwrap();

        let p = rng.random_range(1..240);
        let mut changed = classes.clone();
        for c in &mut changed[p..] {
            *c = (*c + 5) % cfg.levels;
        }
        let probe = m
            .teacher_forced_logits(&changed, &conds, &mut m.initial_state())
            .unwrap();
        assert_eq!(base[..p], probe[..p], "sample change at {p} leaked backwards");
        assert_ne!(base[p + 1..], probe[p + 1..]);

        let k = rng.random_range(1..3);
        let mut cc = conds.clone();
        for v in cc.row_mut(k) {
            *v += 0.5;
        }
        let probe = m.teacher_forced_logits(&classes, &cc, &mut m.initial_state()).unwrap();
        assert_eq!(base[..k * 80], probe[..k * 80], "frame {k} leaked backwards");
        assert_ne!(base[k * 80..], probe[k * 80..]);
    }
}

#[test]
fn hierarchy_timing_and_frame_consumption() {
    let cfg = TierConfig::default();
    let m = jittered(cfg, 2);
    let (_, conds) = random_input(&cfg, 400, 5);
    for n in [1, 79, 80, 81, 160, 333, 400] {
        let (wav, st) = m.generate(&conds, n, &mut NnRng::seed_from_u64(1), 1.0).unwrap();
        assert_eq!(wav.samples().len(), n);
        assert_eq!(st.sample_steps, n);
        assert_eq!(st.top_steps, n.div_ceil(cfg.frame_top));
        assert_eq!(st.mid_steps, n.div_ceil(cfg.frame_mid));
        assert_eq!(st.cond_frames_used, n.div_ceil(80));
    }
    assert!(m.generate(&conds, 401, &mut NnRng::seed_from_u64(1), 1.0).is_err());
    assert!(m
        .generate(
            &SampleFrameTensor::zeros(&[0, 43]),
            0,
            &mut NnRng::seed_from_u64(1),
            1.0
        )
        .is_err());
}

#[test]
fn generation_is_deterministic_and_in_range() {
    let cfg = TierConfig::default();
    let m = jittered(cfg, 4);
    let (_, conds) = random_input(&cfg, 320, 6);
    let a = m.generate(&conds, 320, &mut NnRng::seed_from_u64(42), 1.0).unwrap().0;
    let b = m.generate(&conds, 320, &mut NnRng::seed_from_u64(42), 1.0).unwrap().0;
    assert_eq!(a.samples(), b.samples());
    assert!(a.samples().iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn vanishing_temperature_is_greedy() {
    let cfg = TierConfig::default();
    let m = jittered(cfg, 8);
    let (_, conds) = random_input(&cfg, 160, 9);
    let greedy = m.generate(&conds, 160, &mut NnRng::seed_from_u64(0), 0.0).unwrap().0;
    let cold = m.generate(&conds, 160, &mut NnRng::seed_from_u64(123), 1e-9).unwrap().0;
    assert_eq!(greedy.samples(), cold.samples());
}
