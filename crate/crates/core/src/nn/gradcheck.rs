//! Central finite-difference verification of the hand-written backward passes.
//!
//! Every check builds a small randomly seeded instance, reduces its output to a
//! scalar through a fixed random projection, and compares analytic gradients
//! of parameters and inputs with `(L(θ+ε) − L(θ−ε)) / 2ε`.

use rand::{Rng, SeedableRng};

use crate::decoder::{AcousticDecoder, Arch, DecoderConfig};
use crate::nn::attention::MultiHeadAttention;
use crate::nn::block::DecoderBlock;
use crate::nn::conv::{Conv1d, TransposedConv1d};
use crate::nn::ffn::FeedForwardNet;
use crate::nn::linear::LinearLayer;
use crate::nn::norm::LayerNorm;
use crate::nn::params::Parameterized;
use crate::nn::recurrent::{GruCell, LstmCell};
use crate::nn::tensor::SampleFrameTensor;
use crate::nn::NnRng;
use crate::vocoder::{TierConfig, VocoderModel};

/// Denominator floor of the relative error, so entries whose true gradient is
/// essentially zero are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-7;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floored(analytic, numeric, REL_ERR_FLOOR)
}

pub fn relative_error_floored(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Result of one finite-difference comparison.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst: String,
    pub checked: usize,
}

impl GradCheckReport {
    fn merge(&mut self, rel: f64, what: impl FnOnce() -> String) {
        self.checked += 1;
        if rel > self.max_relative_error || self.worst.is_empty() {
            if rel >= self.max_relative_error {
                self.max_relative_error = rel;
                self.worst = what();
            }
        }
    }
}

/// Compares analytic gradients against central differences.
///
/// `loss(model, inputs)` is the scalar objective and `analytic(model, inputs)`
/// returns its gradient as `(parameter grads, input grads)`.
pub fn check_gradients<M, L, A>(model: &M, inputs: &[f64], eps: f64, loss: L, analytic: A) -> GradCheckReport
where
    M: Parameterized<f64>,
    L: Fn(&M, &[f64]) -> f64,
    A: Fn(&M, &[f64]) -> (M, Vec<f64>),
{
    assert!((1e-6..=1e-2).contains(&eps), "eps outside [1e-6, 1e-2]");
    let (pgrad, igrad) = analytic(model, inputs);
    let mut names = Vec::new();
    pgrad.visit("", &mut |n, t| {
        names.extend(std::iter::repeat_n(n.to_string(), t.len()))
    });
    let analytic_params = pgrad.flat();
    let theta = model.flat();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    // Rounding in the loss itself grows with its magnitude, so the floor does too.
    let floor = REL_ERR_FLOOR * loss(model, inputs).abs().max(1.0);
    let mut probe = model.clone();
    let mut th = theta.clone();
    for i in 0..theta.len() {
        th[i] = theta[i] + eps;
        probe.set_flat(&th);
        let up = loss(&probe, inputs);
        th[i] = theta[i] - eps;
        probe.set_flat(&th);
        let down = loss(&probe, inputs);
        th[i] = theta[i];
        let numeric = (up - down) / (2.0 * eps);
        let rel = relative_error_floored(analytic_params[i], numeric, floor);
        report.merge(rel, || {
            format!(
                "{}[{}] analytic {:e} numeric {:e}",
                names[i], i, analytic_params[i], numeric
            )
        });
    }
    let mut x = inputs.to_vec();
    for i in 0..inputs.len() {
        x[i] = inputs[i] + eps;
        let up = loss(model, &x);
        x[i] = inputs[i] - eps;
        let down = loss(model, &x);
        x[i] = inputs[i];
        let numeric = (up - down) / (2.0 * eps);
        let rel = relative_error_floored(igrad[i], numeric, floor);
        report.merge(rel, || {
            format!("input[{i}] analytic {:e} numeric {:e}", igrad[i], numeric)
        });
    }
    report
}

pub(crate) fn random_vec(rng: &mut NnRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Randomises every parameter, including biases that default to zero.
pub(crate) fn jitter<M: Parameterized<f64>>(model: &mut M, rng: &mut NnRng, scale: f64) {
    model.visit_mut("", &mut |_, t| {
        for v in t.data_mut() {
            *v += rng.random_range(-scale..scale);
        }
    });
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn check_linear(seed: u64, eps: f64) -> GradCheckReport {
    let mut rng = NnRng::seed_from_u64(seed);
    let mut layer = LinearLayer::<f64>::new(3, 2, &mut rng);
    jitter(&mut layer, &mut rng, 0.3);
    let x = random_vec(&mut rng, 3, 1.0);
    let proj = random_vec(&mut rng, 2, 1.0);
    check_gradients(
        &layer,
        &x,
        eps,
        |m, x| dot(&m.forward_vec(x), &proj),
        |m, x| {
            let mut g = m.zeros_like();
            let mut dx = vec![0.0; 3];
            m.backward_vec(x, &proj, &mut g, Some(&mut dx));
            (g, dx)
        },
    )
}

/// GRU unrolled over three steps; inputs are the three `x_t` followed by `h_0`.
pub fn check_gru(seed: u64, dim: usize, eps: f64) -> GradCheckReport {
    let steps = 3;
    let mut rng = NnRng::seed_from_u64(seed);
    let mut cell = GruCell::<f64>::new(dim, dim, &mut rng);
    jitter(&mut cell, &mut rng, 0.3);
    let inputs = random_vec(&mut rng, steps * dim + dim, 1.0);
    let projs: Vec<Vec<f64>> = (0..steps).map(|_| random_vec(&mut rng, dim, 1.0)).collect();
    check_gradients(
        &cell,
        &inputs,
        eps,
        |m, inp| {
            let mut h = inp[steps * dim..].to_vec();
            let mut l = 0.0;
            for t in 0..steps {
                h = m.step_unchecked(&inp[t * dim..(t + 1) * dim], &h);
                l += dot(&h, &projs[t]);
            }
            l
        },
        |m, inp| {
            let mut h = inp[steps * dim..].to_vec();
            let mut caches = Vec::new();
            for t in 0..steps {
                let (h2, c) = m.step_cached(&inp[t * dim..(t + 1) * dim], &h);
                caches.push(c);
                h = h2;
            }
            let mut g = m.zeros_like();
            let mut dinp = vec![0.0; inp.len()];
            let mut dh = vec![0.0; dim];
            for t in (0..steps).rev() {
                for (d, &p) in dh.iter_mut().zip(&projs[t]) {
                    *d += p;
                }
                let (dx, dhp) = m.backward_step(&caches[t], &dh, &mut g);
                dinp[t * dim..(t + 1) * dim].copy_from_slice(&dx);
                dh = dhp;
            }
            dinp[steps * dim..].copy_from_slice(&dh);
            (g, dinp)
        },
    )
}

/// LSTM unrolled over three steps; inputs are the `x_t`, then `h_0`, then `c_0`.
pub fn check_lstm(seed: u64, dim: usize, eps: f64) -> GradCheckReport {
    let steps = 3;
    let mut rng = NnRng::seed_from_u64(seed);
    let mut cell = LstmCell::<f64>::new(dim, dim, &mut rng);
    jitter(&mut cell, &mut rng, 0.3);
    let inputs = random_vec(&mut rng, steps * dim + 2 * dim, 1.0);
    let projs: Vec<Vec<f64>> = (0..steps).map(|_| random_vec(&mut rng, dim, 1.0)).collect();
    let base = steps * dim;
    check_gradients(
        &cell,
        &inputs,
        eps,
        |m, inp| {
            let mut h = inp[base..base + dim].to_vec();
            let mut c = inp[base + dim..].to_vec();
            let mut l = 0.0;
            for t in 0..steps {
                let (h2, c2) = m.step_unchecked(&inp[t * dim..(t + 1) * dim], &h, &c);
                h = h2;
                c = c2;
                l += dot(&h, &projs[t]);
            }
            l
        },
        |m, inp| {
            let mut h = inp[base..base + dim].to_vec();
            let mut c = inp[base + dim..].to_vec();
            let mut caches = Vec::new();
            for t in 0..steps {
                let (h2, c2, cache) = m.step_cached(&inp[t * dim..(t + 1) * dim], &h, &c);
                caches.push(cache);
                h = h2;
                c = c2;
            }
            let mut g = m.zeros_like();
            let mut dinp = vec![0.0; inp.len()];
            let mut dh = vec![0.0; dim];
            let mut dc = vec![0.0; dim];
            for t in (0..steps).rev() {
                for (d, &p) in dh.iter_mut().zip(&projs[t]) {
                    *d += p;
                }
                let (dx, dhp, dcp) = m.backward_step(&caches[t], &dh, &dc, &mut g);
                dinp[t * dim..(t + 1) * dim].copy_from_slice(&dx);
                dh = dhp;
                dc = dcp;
            }
            dinp[base..base + dim].copy_from_slice(&dh);
            dinp[base + dim..].copy_from_slice(&dc);
            (g, dinp)
        },
    )
}

pub fn check_conv1d(seed: u64, eps: f64) -> GradCheckReport {
    let (ci, co, k, stride, t) = (2, 3, 3, 2, 9);
    let mut rng = NnRng::seed_from_u64(seed);
    let mut conv = Conv1d::<f64>::new(ci, co, k, stride, &mut rng);
    jitter(&mut conv, &mut rng, 0.3);
    let x = random_vec(&mut rng, t * ci, 1.0);
    let to = conv.output_len(t);
    let proj = random_vec(&mut rng, to * co, 1.0);
    check_gradients(
        &conv,
        &x,
        eps,
        |m, x| {
            let mut y = vec![0.0; to * co];
            m.forward_seq(x, t, &mut y);
            dot(&y, &proj)
        },
        |m, x| {
            let mut g = m.zeros_like();
            let mut dx = vec![0.0; x.len()];
            m.backward_seq(x, t, &proj, &mut g, Some(&mut dx));
            (g, dx)
        },
    )
}

pub fn check_tconv(seed: u64, eps: f64) -> GradCheckReport {
    let (ci, co, r) = (3, 2, 4);
    let mut rng = NnRng::seed_from_u64(seed);
    let mut tc = TransposedConv1d::<f64>::new(ci, co, r, &mut rng);
    jitter(&mut tc, &mut rng, 0.3);
    let x = random_vec(&mut rng, ci, 1.0);
    let proj = random_vec(&mut rng, r * co, 1.0);
    check_gradients(
        &tc,
        &x,
        eps,
        |m, x| {
            let mut y = vec![0.0; r * co];
            m.forward_step(x, &mut y);
            dot(&y, &proj)
        },
        |m, x| {
            let mut g = m.zeros_like();
            let mut dx = vec![0.0; ci];
            m.backward_step(x, &proj, &mut g, &mut dx);
            (g, dx)
        },
    )
}

fn seq(x: &[f64], t: usize) -> SampleFrameTensor<f64> {
    SampleFrameTensor::new(&[t, x.len() / t], x.to_vec()).expect("shape")
}

pub fn check_layernorm(seed: u64, eps: f64) -> GradCheckReport {
    let (t, h) = (3, 5);
    let mut rng = NnRng::seed_from_u64(seed);
    let mut ln = LayerNorm::<f64>::new(h);
    jitter(&mut ln, &mut rng, 0.3);
    let x = random_vec(&mut rng, t * h, 1.0);
    let proj = random_vec(&mut rng, t * h, 1.0);
    check_gradients(
        &ln,
        &x,
        eps,
        |m, x| dot(m.forward(&seq(x, t)).0.data(), &proj),
        |m, x| {
            let (_, c) = m.forward(&seq(x, t));
            let mut g = m.zeros_like();
            let dx = m.backward(&c, &seq(&proj, t), &mut g);
            (g, dx.into_data())
        },
    )
}

pub fn check_mha(seed: u64, width: usize, heads: usize, t: usize, eps: f64) -> GradCheckReport {
    let mut rng = NnRng::seed_from_u64(seed);
    let mut mha = MultiHeadAttention::<f64>::new(width, heads, 0.0, &mut rng).expect("divisible width");
    jitter(&mut mha, &mut rng, 0.2);
    let x = random_vec(&mut rng, t * width, 1.0);
    let proj = random_vec(&mut rng, t * width, 1.0);
    check_gradients(
        &mha,
        &x,
        eps,
        |m, x| dot(m.forward_cached(&seq(x, t), None).0.data(), &proj),
        |m, x| {
            let (_, c) = m.forward_cached(&seq(x, t), None);
            let mut g = m.zeros_like();
            let dx = m.backward(&c, &seq(&proj, t), &mut g);
            (g, dx.into_data())
        },
    )
}

pub fn check_ffn(seed: u64, eps: f64) -> GradCheckReport {
    let (t, h, dff) = (3, 4, 8);
    let mut rng = NnRng::seed_from_u64(seed);
    let mut ffn = FeedForwardNet::<f64>::new(h, dff, &mut rng);
    jitter(&mut ffn, &mut rng, 0.2);
    let x = random_vec(&mut rng, t * h, 1.0);
    let proj = random_vec(&mut rng, t * h, 1.0);
    check_gradients(
        &ffn,
        &x,
        eps,
        |m, x| dot(m.forward(&seq(x, t)).data(), &proj),
        |m, x| {
            let (_, c) = m.forward_cached(&seq(x, t));
            let mut g = m.zeros_like();
            let dx = m.backward(&c, &seq(&proj, t), &mut g);
            (g, dx.into_data())
        },
    )
}

/// Block check in training mode: the dropout masks are made reproducible by
/// reseeding the mask generator for every evaluation.
pub fn check_block(seed: u64, eps: f64) -> GradCheckReport {
    let (t, h, heads, dff) = (3, 4, 2, 8);
    let mut rng = NnRng::seed_from_u64(seed);
    let mut block = DecoderBlock::<f64>::new(h, heads, dff, 0.1, 0.3, &mut rng).expect("block");
    jitter(&mut block, &mut rng, 0.2);
    let x = random_vec(&mut rng, t * h, 1.0);
    let proj = random_vec(&mut rng, t * h, 1.0);
    let mask_seed = seed ^ 0x5eed;
    check_gradients(
        &block,
        &x,
        eps,
        |m, x| {
            let mut r = NnRng::seed_from_u64(mask_seed);
            dot(m.forward_cached(&seq(x, t), Some(&mut r)).0.data(), &proj)
        },
        |m, x| {
            let mut r = NnRng::seed_from_u64(mask_seed);
            let (_, c) = m.forward_cached(&seq(x, t), Some(&mut r));
            let mut g = m.zeros_like();
            let dx = m.backward(&c, &seq(&proj, t), &mut g);
            (g, dx.into_data())
        },
    )
}

/// The composed three-tier vocoder: teacher-forced NLL over an 80-sample
/// window that starts from a state carried over from an earlier window.
/// Inputs are the conditioning frames.
pub fn check_vocoder(seed: u64, eps: f64) -> GradCheckReport {
    let cfg = TierConfig {
        frame_top: 8,
        frame_mid: 2,
        hidden: 4,
        cond_dim: 3,
        levels: 16,
        mu: 255.0,
    };
    let mut rng = NnRng::seed_from_u64(seed);
    let mut model = VocoderModel::<f64>::new(cfg, &mut rng).expect("config");
    jitter(&mut model, &mut rng, 0.2);
    // keep the sample-tier ReLUs away from their kink
    model.sample_hidden.b.data_mut().iter_mut().for_each(|b| *b += 2.0);
    let warm: Vec<usize> = (0..80).map(|_| rng.random_range(0..16)).collect();
    let classes: Vec<usize> = (0..80).map(|_| rng.random_range(0..16)).collect();
    let warm_conds = SampleFrameTensor::new(&[1, 3], random_vec(&mut rng, 3, 1.0)).expect("shape");
    let conds = random_vec(&mut rng, 3, 1.0);
    let mut start = model.initial_state();
    model.nll_sum(&warm, &warm_conds, &mut start).expect("warm-up");
    let tensor = |x: &[f64]| SampleFrameTensor::new(&[1, 3], x.to_vec()).expect("shape");
    check_gradients(
        &model,
        &conds,
        eps,
        |m, x| m.nll_sum(&classes, &tensor(x), &mut start.clone()).expect("nll").0,
        |m, x| {
            let mut g = m.zeros_like();
            let (_, _, dc) = m
                .forward_backward(&classes, &tensor(x), &mut start.clone(), &mut g, 1.0, true)
                .expect("backward");
            (g, dc.expect("cond grad").into_data())
        },
    )
}

/// A tiny decoder in training mode over a 4-frame window that starts from a
/// carried state; dropout masks are reseeded for every evaluation.
pub fn check_decoder(arch: Arch, seed: u64, eps: f64) -> GradCheckReport {
    let (t, l) = (4, 3);
    let cfg = DecoderConfig {
        embed: 4,
        hidden: 3,
        blocks: 2,
        heads: 2,
        d_ff: 6,
        out_dim: 2,
        ..DecoderConfig::desk(arch, l)
    };
    let mut rng = NnRng::seed_from_u64(seed);
    let mut model = AcousticDecoder::<f64>::new(&cfg, &mut rng).expect("config");
    jitter(&mut model, &mut rng, 0.2);
    // keep the embedding ReLUs away from their kink
    let embed = match &mut model {
        AcousticDecoder::Rnn(m) => &mut m.embed,
        AcousticDecoder::Salad(m) => &mut m.embed,
    };
    embed.b.data_mut().iter_mut().for_each(|b| *b += 1.5);
    let mut start = model.initial_state();
    let warm = SampleFrameTensor::new(&[3, l], random_vec(&mut rng, 3 * l, 1.0)).expect("shape");
    model.forward(&warm, &mut start, None).expect("warm-up");
    let x = random_vec(&mut rng, t * l, 1.0);
    let proj = random_vec(&mut rng, t * cfg.out_dim, 1.0);
    let mask_seed = seed ^ 0xdec0;
    let input = |x: &[f64]| SampleFrameTensor::new(&[t, l], x.to_vec()).expect("shape");
    check_gradients(
        &model,
        &x,
        eps,
        |m, x| {
            let mut r = NnRng::seed_from_u64(mask_seed);
            let (y, _, _) = m.forward(&input(x), &mut start.clone(), Some(&mut r)).expect("forward");
            dot(y.data(), &proj)
        },
        |m, x| {
            let mut r = NnRng::seed_from_u64(mask_seed);
            let (_, c, _) = m.forward(&input(x), &mut start.clone(), Some(&mut r)).expect("forward");
            let mut g = m.zeros_like();
            let dy = SampleFrameTensor::new(&[t, cfg.out_dim], proj.clone()).expect("shape");
            let dx = m.backward(&c, &dy, &mut g).expect("backward");
            (g, dx.into_data())
        },
    )
}

/// Step used by [`suite`].
pub const SUITE_EPS: f64 = 1e-4;

/// Every layer check plus both composed models, worst case over `seeds`
/// seeds `0..seeds`, in a fixed order.
pub fn suite(seeds: u64) -> Vec<(&'static str, GradCheckReport)> {
    let checks: [(&str, fn(u64) -> GradCheckReport); 12] = [
        ("linear", |s| check_linear(s, SUITE_EPS)),
        ("gru", |s| check_gru(s, 4, SUITE_EPS)),
        ("lstm", |s| check_lstm(s, 3, SUITE_EPS)),
        ("conv1d", |s| check_conv1d(s, SUITE_EPS)),
        ("tconv1d", |s| check_tconv(s, SUITE_EPS)),
        ("layernorm", |s| check_layernorm(s, SUITE_EPS)),
        ("attention", |s| check_mha(s, 4, 2, 3, SUITE_EPS)),
        ("ffn", |s| check_ffn(s, SUITE_EPS)),
        ("block", |s| check_block(s, SUITE_EPS)),
        ("vocoder", |s| check_vocoder(s, SUITE_EPS)),
        ("decoder_rnn", |s| check_decoder(Arch::Rnn, s, SUITE_EPS)),
        ("decoder_salad", |s| check_decoder(Arch::Salad, s, SUITE_EPS)),
    ];
    checks
        .iter()
        .map(|(name, f)| {
            let worst = (0..seeds)
                .map(f)
                .reduce(|a, b| {
                    if b.max_relative_error > a.max_relative_error {
                        GradCheckReport {
                            checked: a.checked + b.checked,
                            ..b
                        }
                    } else {
                        GradCheckReport {
                            checked: a.checked + b.checked,
                            ..a
                        }
                    }
                })
                .expect("at least one seed");
            (*name, worst)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = 1e-4;

    #[test]
    fn linear_layer_is_tight() {
        for seed in 0..10 {
            let r = check_linear(seed, EPS);
            assert!(r.max_relative_error < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn recurrent_cells() {
        for seed in 0..10 {
            let r = check_gru(seed, 4, EPS);
            assert!(r.max_relative_error < 1e-4, "gru {r:?}");
            let r = check_lstm(seed, 3, EPS);
            assert!(r.max_relative_error < 1e-4, "lstm {r:?}");
        }
    }

    #[test]
    fn convolutions() {
        for seed in 0..10 {
            let r = check_conv1d(seed, EPS);
            assert!(r.max_relative_error < 1e-4, "conv {r:?}");
            let r = check_tconv(seed, EPS);
            assert!(r.max_relative_error < 1e-4, "tconv {r:?}");
        }
    }

    #[test]
    fn attention_and_block() {
        for seed in 0..10 {
            let r = check_mha(seed, 4, 2, 3, EPS);
            assert!(r.max_relative_error < 1e-4, "mha {r:?}");
            let r = check_layernorm(seed, EPS);
            assert!(r.max_relative_error < 1e-4, "ln {r:?}");
            let r = check_ffn(seed, EPS);
            assert!(r.max_relative_error < 1e-4, "ffn {r:?}");
            let r = check_block(seed, EPS);
            assert!(r.max_relative_error < 1e-4, "block {r:?}");
        }
    }

    #[test]
    fn composed_vocoder() {
        for seed in 0..10 {
            let r = check_vocoder(seed, EPS);
            assert!(r.max_relative_error < 1e-4, "vocoder {r:?}");
        }
    }

    #[test]
    fn decoders() {
        for seed in 0..10 {
            let r = check_decoder(Arch::Rnn, seed, EPS);
            assert!(r.max_relative_error < 1e-4, "rnn {r:?}");
            let r = check_decoder(Arch::Salad, seed, EPS);
            assert!(r.max_relative_error < 1e-4, "salad {r:?}");
        }
    }
}
