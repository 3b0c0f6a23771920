mod common;

use common::*;
use mgsf::geometry::{ArrayGeometry, Direction, PhysicalConstants};
use mgsf::simkit::*;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

fn consts() -> PhysicalConstants {
    PhysicalConstants::default()
}

fn white(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

#[test]
fn endfire_73mm_pair_lags_three_samples() {
    // 0.073 / 343 * 16000 = 3.405 samples
    let g = pair("p", 0.073);
    let src = white(8000, 1);
    let ch = plane_wave_render(&src, &g, Direction::horizontal(0.0), &consts());
    let xcorr = |lag: i64| -> f64 {
        (200..7800).map(|n| ch[0][n] * ch[1][(n as i64 + lag) as usize]).sum()
    };
    let best = (-8..=8).max_by(|&a, &b| xcorr(a).total_cmp(&xcorr(b))).unwrap();
    // the +x sensor hears the +x wave first, so channel 0 lags it
    let p = g.positions();
    let lead = if p[1][0] > p[0][0] { -3 } else { 3 };
    assert_eq!(best, lead);
}

#[test]
fn fractional_delay_matches_analytic_sinusoid() {
    let f = 1234.5;
    let fs = 16000.0;
    let x: Vec<f64> = (0..2000).map(|n| (2.0 * PI * f * n as f64 / fs).sin()).collect();
    for d in [0.25, 2.7, -1.5, 3.405] {
        let y = fractional_delay(&x, d);
        for n in 100..1900 {
            let want = (2.0 * PI * f * (n as f64 - d) / fs).sin();
            assert!((y[n] - want).abs() < 1e-3, "d={d} n={n}");
        }
    }
    assert_eq!(fractional_delay(&x, 2.0)[10], x[8]);
}

#[test]
fn plane_wave_keeps_energy_within_one_percent() {
    // band-limited source so the interpolator passband covers it
    let fs = 16000.0;
    let mut r = rng(2);
    let tones: Vec<(f64, f64)> = (0..30).map(|_| (r.gen_range(100.0..6000.0), r.gen_range(0.0..6.28))).collect();
    let src: Vec<f64> = (0..16000)
        .map(|n| tones.iter().map(|(f, p)| (2.0 * PI * f * n as f64 / fs + p).sin()).sum())
        .collect();
    let e = |x: &[f64]| x[500..15500].iter().map(|v| v * v).sum::<f64>();
    let e0 = e(&src);
    let g = ArrayGeometry::seven_mic_circular();
    for az in [0.3, 1.9, 4.0] {
        for c in plane_wave_render(&src, &g, Direction::new(az, 0.2).unwrap(), &consts()) {
            assert!((e(&c) / e0 - 1.0).abs() < 0.01);
        }
    }
}

#[test]
fn diffuse_coherence_follows_sinc() {
    let (err, frames) = max_coherence_error(0.073, 256, 1 << 21);
    assert!(frames >= 10_000);
    assert!(err <= 0.05, "{err}");
}

#[test]
fn sparser_lattices_still_fit_below_4k() {
    for (spacing, dirs) in [(0.036, 64), (0.073, 64)] {
        let (err, _) = max_coherence_error(spacing, dirs, 1 << 19);
        assert!(err <= 0.05, "{spacing} m, {dirs} directions: {err}");
    }
}

#[test]
fn diffuse_noise_has_unit_variance_and_is_seeded() {
    let g = ArrayGeometry::seven_mic_circular();
    let a = diffuse_noise(&g, 48000, &consts(), 9, 128).unwrap();
    for c in &a {
        let v = c.iter().map(|x| x * x).sum::<f64>() / c.len() as f64;
        assert!((v - 1.0).abs() <= 0.02, "{v}");
    }
    assert_eq!(a, diffuse_noise(&g, 48000, &consts(), 9, 128).unwrap());
    assert_ne!(a, diffuse_noise(&g, 48000, &consts(), 10, 128).unwrap());
}

#[test]
fn mixing_hits_the_requested_snr() {
    let g = pair("p", 0.036);
    let target = plane_wave_render(&white(16000, 3), &g, Direction::horizontal(1.0), &consts());
    let noise = diffuse_noise(&g, 16000, &consts(), 4, 64).unwrap();
    for snr in [5.0, 15.0, 25.0] {
        let mix = mix_at_snr(&target, &noise, snr).unwrap();
        let resid: Vec<f64> = mix[0].iter().zip(&target[0]).map(|(m, t)| m - t).collect();
        let p = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let measured = 10.0 * (p(&target[0]) / p(&resid)).log10();
        assert!((measured - snr).abs() < 1e-9);
    }
}

#[test]
fn clean_plane_wave_selects_its_beam() {
    let (raw, smooth) = beam_selection_rates(10, 30);
    assert!(raw >= 0.90, "{raw}");
    assert!(smooth >= 0.98, "{smooth}");
}

#[test]
fn toy_corpus_is_deterministic_and_labeled() {
    let cfg = ToyConfig::new(vec![pair("a", 0.073), pair("b", 0.036)], vec![5.0, 25.0], 1, 77);
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let m1 = make_toy_dataset(&cfg, d1.path()).unwrap();
    let m2 = make_toy_dataset(&cfg, d2.path()).unwrap();
    assert_eq!(m1.entries, m2.entries);
    assert_eq!(m1.entries.len(), 2 * 2 * 4);
    m1.validate(4).unwrap();
    for (a, b) in m1.entries.iter().zip(&m2.entries) {
        assert_eq!(
            std::fs::read(m1.resolve(a)).unwrap(),
            std::fs::read(m2.resolve(b)).unwrap()
        );
    }
}
