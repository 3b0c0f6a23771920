//! WebAssembly bindings behind `www/index.html`.
//!
//! Three views of a superdirective design: the polar beam pattern at one
//! frequency, white-noise gain and directivity across the feature bins, and
//! the simulated diffuse-field coherence of a sensor pair against the sinc
//! model. The plain functions are what the native tests exercise; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use std::f64::consts::{PI, TAU};

use mgsf::beamform::{diffuse_coherence, sd_weights, sinc};
use mgsf::dsp::StftConfig;
use mgsf::geometry::{array_manifold, ArrayGeometry, Direction, PhysicalConstants};
use mgsf::simkit::diffuse_noise;
use num_complex::Complex64;
use rustfft::FftPlanner;
use wasm_bindgen::prelude::*;

/// Response floor so nulls stay plottable.
pub const FLOOR_DB: f64 = -60.0;
/// Welch segment length for the coherence estimate.
pub const COHERENCE_NFFT: usize = 256;

/// `pair:MM` for a two-sensor line array or `circular7` for the device layout.
pub fn geometry(spec: &str) -> Result<ArrayGeometry, String> {
    if spec == "circular7" {
        return Ok(ArrayGeometry::seven_mic_circular());
    }
    let mm: f64 = spec
        .strip_prefix("pair:")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("unknown array '{spec}', expected pair:MM or circular7"))?;
    ArrayGeometry::pair("pair", mm / 1000.0).map_err(|e| e.to_string())
}

fn weights(geom: &ArrayGeometry, look_deg: f64, hz: f64, loading: f64) -> Result<Vec<Complex64>, String> {
    let look = Direction::from_degrees(look_deg, 0.0).map_err(|e| e.to_string())?;
    sd_weights(geom, &look, TAU * hz, loading, &PhysicalConstants::default()).map_err(|e| e.to_string())
}

/// Power response `|w^H v(theta)|^2` in dB at `points` azimuths from 0 to
/// 360 degrees (exclusive), clipped at [`FLOOR_DB`].
pub fn beam_pattern_db(spec: &str, look_deg: f64, hz: f64, loading: f64, points: usize) -> Result<Vec<f64>, String> {
    if points == 0 {
        return Err("need at least one azimuth".into());
    }
    let geom = geometry(spec)?;
    let w = weights(&geom, look_deg, hz, loading)?;
    let consts = PhysicalConstants::default();
    Ok((0..points)
        .map(|i| {
            let dir = Direction::horizontal(TAU * i as f64 / points as f64);
            let v = array_manifold(&geom, &dir, TAU * hz, &consts);
            let y: Complex64 = w.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
            (10.0 * y.norm_sqr().log10()).max(FLOOR_DB)
        })
        .collect())
}

/// `[hz; K]`, `[WNG dB; K]`, `[DI dB; K]` concatenated over the feature bins.
/// Both gains follow from the distortionless constraint: WNG is
/// `1 / ||w||^2` and DI is `1 / (w^H Gamma w)` with the unloaded coherence.
pub fn wng_di_db(spec: &str, look_deg: f64, loading: f64) -> Result<Vec<f64>, String> {
    let geom = geometry(spec)?;
    let cfg = StftConfig::dft_feature();
    let consts = PhysicalConstants::default();
    let k = cfg.num_bins();
    let mut out = vec![0.0; 3 * k];
    for bin in 1..=k {
        let hz = cfg.bin_hz(bin);
        let w = weights(&geom, look_deg, hz, loading)?;
        let gamma = diffuse_coherence(&geom, TAU * hz, &consts);
        let m = w.len();
        let mut noise = Complex64::new(0.0, 0.0);
        for i in 0..m {
            for j in 0..m {
                noise += w[i].conj() * gamma.get(i, j) * w[j];
            }
        }
        let norm: f64 = w.iter().map(|c| c.norm_sqr()).sum();
        out[bin - 1] = hz;
        out[k + bin - 1] = -10.0 * norm.log10();
        out[2 * k + bin - 1] = -10.0 * noise.re.log10();
    }
    Ok(out)
}

/// `[hz; B]`, `[sinc model; B]`, `[Welch estimate; B]` for `B = nfft/2 + 1`
/// bins of a pair spaced `mm` apart in simulated diffuse noise.
pub fn coherence_curves(mm: f64, noise_directions: usize, seconds: f64, seed: u64) -> Result<Vec<f64>, String> {
    let geom = ArrayGeometry::pair("pair", mm / 1000.0).map_err(|e| e.to_string())?;
    let consts = PhysicalConstants::default();
    let n = (seconds * consts.sample_rate).round() as usize;
    if n < 2 * COHERENCE_NFFT {
        return Err(format!("{seconds} s is too short for a coherence estimate"));
    }
    let noise = diffuse_noise(&geom, n, &consts, seed, noise_directions).map_err(|e| e.to_string())?;
    let nfft = COHERENCE_NFFT;
    let bins = nfft / 2 + 1;
    let fft = FftPlanner::new().plan_fft_forward(nfft);
    let win: Vec<f64> = (0..nfft).map(|i| 0.5 - 0.5 * (TAU * i as f64 / nfft as f64).cos()).collect();
    let (mut saa, mut sbb) = (vec![0.0; bins], vec![0.0; bins]);
    let mut sab = vec![Complex64::new(0.0, 0.0); bins];
    let mut start = 0;
    while start + nfft <= n {
        let frame = |c: &[f64]| -> Vec<Complex64> {
            let mut buf: Vec<Complex64> = (0..nfft).map(|i| Complex64::new(c[start + i] * win[i], 0.0)).collect();
            fft.process(&mut buf);
            buf
        };
        let (fa, fb) = (frame(&noise[0]), frame(&noise[1]));
        for b in 0..bins {
            saa[b] += fa[b].norm_sqr();
            sbb[b] += fb[b].norm_sqr();
            sab[b] += fa[b] * fb[b].conj();
        }
        start += nfft / 2;
    }
    let spacing = mm / 1000.0;
    let mut out = Vec::with_capacity(3 * bins);
    out.extend((0..bins).map(|b| b as f64 * consts.sample_rate / nfft as f64));
    out.extend((0..bins).map(|b| {
        let hz = b as f64 * consts.sample_rate / nfft as f64;
        sinc(2.0 * PI * hz * spacing / consts.speed_of_sound)
    }));
    out.extend((0..bins).map(|b| sab[b].re / (saa[b] * sbb[b]).sqrt().max(1e-300)));
    Ok(out)
}

#[wasm_bindgen]
pub fn beam_pattern(spec: &str, look_deg: f64, hz: f64, loading: f64, points: usize) -> Result<Vec<f64>, JsValue> {
    beam_pattern_db(spec, look_deg, hz, loading, points).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn gains(spec: &str, look_deg: f64, loading: f64) -> Result<Vec<f64>, JsValue> {
    wng_di_db(spec, look_deg, loading).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn coherence(mm: f64, noise_directions: usize, seconds: f64, seed: u32) -> Result<Vec<f64>, JsValue> {
    coherence_curves(mm, noise_directions, seconds, seed as u64).map_err(|e| JsValue::from_str(&e))
}
