#![allow(dead_code)]

use mgsf::beamform::{beam_energies, design_bank, BeamSelector, BeamformerBank, LoadingPolicy};
use mgsf::dsp::{mc_spectra, GlobalStats, SpectrumAnalyzer, StftConfig};
use mgsf::geometry::{look_directions, ArrayGeometry, PhysicalConstants};
use mgsf::mcmodel::{Architecture, ClassifierConfig, Model, WtsfConfig};
use mgsf::nnet::{Matrix, Param};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use mgsf::simkit::{diffuse_noise, plane_wave_render, toy_source};
use rustfft::{num_complex::Complex64, FftPlanner};
use std::f64::consts::PI;

pub const FD_EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central difference of `f` with respect to `x[i]`.
pub fn central_diff(x: &mut [f64], i: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + FD_EPS;
    let up = f(x);
    x[i] = orig - FD_EPS;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * FD_EPS)
}

/// Max relative error between `analytic` and central differences of `f`
/// over up to `samples` coordinates (all when fewer).
pub fn check_vector(
    x: &mut Vec<f64>,
    analytic: &[f64],
    samples: usize,
    rng: &mut impl Rng,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let idx: Vec<usize> = if x.len() <= samples {
        (0..x.len()).collect()
    } else {
        (0..samples).map(|_| rng.gen_range(0..x.len())).collect()
    };
    idx.into_iter()
        .map(|i| rel_err(analytic[i], central_diff(x, i, &mut f)))
        .fold(0.0, f64::max)
}

/// Same for a parameter tensor; `f` sees the perturbed values.
pub fn check_param(
    p: &mut Param,
    samples: usize,
    rng: &mut impl Rng,
    mut f: impl FnMut(&Param) -> f64,
) -> f64 {
    let analytic = p.grad.clone();
    let mut values = p.value.clone();
    let err = check_vector(&mut values, &analytic, samples, rng, |v| {
        let mut q = p.clone();
        q.value.copy_from_slice(v);
        f(&q)
    });
    err
}

/// Mean frame cross-entropy of the whole model.
pub fn model_loss(model: &Model, x: &Matrix, labels: &[usize]) -> f64 {
    let (logits, _) = model.forward(x).unwrap();
    mgsf::nnet::softmax_xent(&logits, labels).unwrap().0
}

/// Max relative error over every parameter tensor of a model (sampled).
pub fn check_model(model: &mut Model, x: &Matrix, labels: &[usize], samples: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    model.zero_grad();
    let (logits, tape) = model.forward(x).unwrap();
    let (_, g) = mgsf::nnet::softmax_xent(&logits, labels).unwrap();
    model.backward(&tape, &g).unwrap();
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|(_, p)| p.grad.clone()).collect();
    let mut worst: f64 = 0.0;
    for (pi, grads) in analytic.iter().enumerate() {
        let n = grads.len();
        let idx: Vec<usize> = if n <= samples {
            (0..n).collect()
        } else {
            (0..samples).map(|_| rng.gen_range(0..n)).collect()
        };
        for i in idx {
            let mut probe = model.clone();
            let mut eval = |delta: f64| {
                let orig = probe.params()[pi].1.value[i];
                probe.params_mut()[pi].1.value[i] = orig + delta;
                let l = model_loss(&probe, x, labels);
                probe.params_mut()[pi].1.value[i] = orig;
                l
            };
            let numeric = (eval(FD_EPS) - eval(-FD_EPS)) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(grads[i], numeric));
        }
    }
    worst
}

pub fn pair(id: &str, spacing: f64) -> ArrayGeometry {
    ArrayGeometry::pair(id, spacing).unwrap()
}

pub fn small_bank(geoms: &[ArrayGeometry], directions: usize) -> BeamformerBank {
    design_bank(
        geoms,
        &look_directions(directions),
        &StftConfig::dft_feature(),
        LoadingPolicy::default(),
        &PhysicalConstants::default(),
    )
    .unwrap()
}

/// A multi-channel model with small classifier dims and randomly perturbed
/// parameters so no gradient is structurally zero.
pub fn perturbed_model(arch: Architecture, geoms: &[ArrayGeometry], seed: u64) -> Model {
    let mut r = rng(seed);
    let cfg = ClassifierConfig {
        hidden: 5,
        layers: 2,
        classes: 3,
    };
    let base = Model::lfbe_baseline(cfg, &mut r).unwrap();
    if arch == Architecture::LfbeBaseline {
        return base;
    }
    let k = StftConfig::dft_feature().num_bins();
    let single = Model::single_dft_from(&base, GlobalStats::identity(2 * k)).unwrap();
    if arch == Architecture::SingleDft {
        return single;
    }
    let bank = small_bank(geoms, 4);
    Model::multichannel_from(
        &single,
        &bank,
        arch,
        WtsfConfig {
            filters: 3,
            noise_std: 0.05,
            ..WtsfConfig::default()
        },
        &mut r,
    )
    .unwrap()
}

/// Worst deviation from `sinc(omega d / c)` up to 4 kHz and the frame count.
pub fn max_coherence_error(spacing: f64, directions: usize, samples: usize) -> (f64, usize) {
    let g = pair("p", spacing);
    let noise = diffuse_noise(&g, samples, &PhysicalConstants::default(), 5, directions).unwrap();
    let (coh, frames) = empirical_coherence(&noise[0], &noise[1], 256, 128);
    let mut worst: f64 = 0.0;
    for (k, c) in coh.iter().enumerate().skip(1) {
        let hz = k as f64 * 16000.0 / 256.0;
        if hz > 4000.0 {
            break;
        }
        let x = 2.0 * PI * hz * spacing / 343.0;
        worst = worst.max((c - x.sin() / x).abs());
    }
    (worst, frames)
}

/// Welch estimate of the real coherence between two channels.
pub fn empirical_coherence(a: &[f64], b: &[f64], nfft: usize, hop: usize) -> (Vec<f64>, usize) {
    let fft = FftPlanner::new().plan_fft_forward(nfft);
    let win: Vec<f64> = (0..nfft).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / nfft as f64).cos()).collect();
    let bins = nfft / 2 + 1;
    let (mut saa, mut sbb) = (vec![0.0; bins], vec![0.0; bins]);
    let mut sab = vec![Complex64::new(0.0, 0.0); bins];
    let mut frames = 0;
    let mut start = 0;
    while start + nfft <= a.len() {
        let mut fa: Vec<Complex64> = (0..nfft).map(|n| Complex64::new(a[start + n] * win[n], 0.0)).collect();
        let mut fb: Vec<Complex64> = (0..nfft).map(|n| Complex64::new(b[start + n] * win[n], 0.0)).collect();
        fft.process(&mut fa);
        fft.process(&mut fb);
        for k in 0..bins {
            saa[k] += fa[k].norm_sqr();
            sbb[k] += fb[k].norm_sqr();
            sab[k] += fa[k] * fb[k].conj();
        }
        frames += 1;
        start += hop;
    }
    ((0..bins).map(|k| sab[k].re / (saa[k] * sbb[k]).sqrt()).collect(), frames)
}

/// Fractions of frames where the max-energy beam (unsmoothed, smoothed over
/// `window` frames) is the source direction.
pub fn beam_selection_rates(window: usize, seed: u64) -> (f64, f64) {
    let g = ArrayGeometry::seven_mic_circular();
    let dirs = look_directions(12);
    let cfg = StftConfig::dft_feature();
    let consts = PhysicalConstants::default();
    let bank = design_bank(&[g.clone()], &dirs, &cfg, LoadingPolicy::default(), &consts).unwrap();
    let analyzer = SpectrumAnalyzer::new(&cfg);
    let (mut raw_hits, mut smooth_hits, mut total) = (0, 0, 0);
    for (d, dir) in dirs.iter().enumerate() {
        let src = toy_source(d % 4, 16000, -6.0, 16000.0, &mut rng(seed + d as u64));
        let frames = mc_spectra(&plane_wave_render(&src, &g, *dir, &consts), &analyzer).unwrap();
        let mut sel = BeamSelector::new(window).unwrap();
        for f in &frames {
            let e = beam_energies(&bank, 0, f).unwrap();
            let raw = e.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            raw_hits += (raw == d) as usize;
            smooth_hits += (sel.select(&e).unwrap() == d) as usize;
            total += 1;
        }
    }
    (raw_hits as f64 / total as f64, smooth_hits as f64 / total as f64)
}
