//! Free-field multi-channel synthesis: fractional-delay plane waves, diffuse
//! noise, SNR mixing and a labeled toy corpus over several array geometries.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use crate::error::{check_len, Error, Result};
use crate::geometry::{steering_delays, ArrayGeometry, Direction, PhysicalConstants};
use crate::trainer::{DatasetManifest, ManifestEntry, Split};
use crate::wav::{write_wav, Audio, SampleFormat};

pub const FRACTIONAL_DELAY_TAPS: usize = 64;
pub const DEFAULT_NOISE_DIRECTIONS: usize = 256;

/// Blackman-windowed sinc taps for a delay of `delay` samples, indexed from
/// `floor(delay) - 31`.
fn fractional_delay_taps(delay: f64) -> (i64, Vec<f64>) {
    let n = FRACTIONAL_DELAY_TAPS as i64;
    let first = delay.floor() as i64 - (n / 2 - 1);
    let half = n as f64 / 2.0;
    let taps = (0..n)
        .map(|i| {
            let x = (first + i) as f64 - delay;
            if x == 0.0 {
                return 1.0;
            }
            if x.abs() >= half {
                return 0.0;
            }
            let w = 0.42 + 0.5 * (PI * x / half).cos() + 0.08 * (2.0 * PI * x / half).cos();
            w * (PI * x).sin() / (PI * x)
        })
        .collect();
    (first, taps)
}

/// Delays `x` by a possibly fractional, possibly negative number of samples.
/// Samples outside the input are zero.
pub fn fractional_delay(x: &[f64], delay: f64) -> Vec<f64> {
    if delay == delay.round() {
        let d = delay as i64;
        return (0..x.len() as i64)
            .map(|n| {
                let j = n - d;
                if j >= 0 && (j as usize) < x.len() {
                    x[j as usize]
                } else {
                    0.0
                }
            })
            .collect();
    }
    let (first, taps) = fractional_delay_taps(delay);
    let len = x.len() as i64;
    (0..len)
        .map(|n| {
            let mut acc = 0.0;
            for (i, &h) in taps.iter().enumerate() {
                let j = n - (first + i as i64);
                if j >= 0 && j < len {
                    acc += h * x[j as usize];
                }
            }
            acc
        })
        .collect()
}

/// Channel `m` is the source delayed by its steering delay (relative to the
/// array origin). No level differences between channels.
pub fn plane_wave_render(
    source: &[f64],
    geom: &ArrayGeometry,
    dir: Direction,
    consts: &PhysicalConstants,
) -> Vec<Vec<f64>> {
    steering_delays(geom, &dir, consts)
        .iter()
        .map(|&tau| fractional_delay(source, tau * consts.sample_rate))
        .collect()
}

/// Area-uniform Fibonacci lattice on the unit sphere.
pub fn fibonacci_sphere(n: usize) -> Vec<Direction> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / n as f64;
            let az = (i as f64 * golden).rem_euclid(2.0 * PI);
            Direction::new(az, z.clamp(-1.0, 1.0).asin()).expect("valid lattice direction")
        })
        .collect()
}

/// Spherically isotropic noise: independent white Gaussian plane waves from
/// `num_directions` lattice directions, delayed exactly in the frequency
/// domain over one period of `num_samples`, then scaled so the mean channel
/// variance is 1.
pub fn diffuse_noise(
    geom: &ArrayGeometry,
    num_samples: usize,
    consts: &PhysicalConstants,
    seed: u64,
    num_directions: usize,
) -> Result<Vec<Vec<f64>>> {
    if num_samples < 2 {
        return Err(Error::Config(format!("{num_samples} noise samples")));
    }
    if num_directions == 0 {
        return Err(Error::Config("zero noise directions".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = geom.num_sensors();
    let n = num_samples;
    let half = n / 2;
    let mut spectra = vec![vec![Complex64::new(0.0, 0.0); n]; m];
    let dirs = fibonacci_sphere(num_directions);
    let step = 2.0 * PI * consts.sample_rate / n as f64;
    for dir in dirs {
        let taus = steering_delays(geom, &dir, consts);
        let rot: Vec<Complex64> = taus.iter().map(|&t| Complex64::from_polar(1.0, -step * t)).collect();
        let mut phasor = vec![Complex64::new(1.0, 0.0); m];
        for k in 1..=half {
            for (p, r) in phasor.iter_mut().zip(&rot) {
                *p *= r;
            }
            let s = if k == half && n % 2 == 0 {
                Complex64::new(rng.sample::<f64, _>(StandardNormal), 0.0)
            } else {
                Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
            };
            for (spec, p) in spectra.iter_mut().zip(&phasor) {
                let v = if k == half && n % 2 == 0 {
                    Complex64::new((s * p).re, 0.0)
                } else {
                    s * p
                };
                spec[k] += v;
            }
        }
    }
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let mut out: Vec<Vec<f64>> = spectra
        .into_iter()
        .map(|mut spec| {
            for k in 1..n.div_ceil(2) {
                spec[n - k] = spec[k].conj();
            }
            ifft.process(&mut spec);
            spec.into_iter().map(|c| c.re).collect()
        })
        .collect();
    let var: f64 = out
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>() / n as f64)
        .sum::<f64>()
        / m as f64;
    let scale = 1.0 / var.sqrt();
    for c in &mut out {
        c.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(out)
}

fn mean_power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Scales the noise so the channel-0 power ratio equals `snr_db` and adds it.
/// `snr_db = +inf` drops the noise.
pub fn mix_at_snr(target: &[Vec<f64>], noise: &[Vec<f64>], snr_db: f64) -> Result<Vec<Vec<f64>>> {
    check_len("mix channel count", target.len(), noise.len())?;
    for (t, n) in target.iter().zip(noise) {
        check_len("mix channel length", t.len(), n.len())?;
    }
    let pt = target.first().map_or(0.0, |c| mean_power(c));
    if !(pt > 0.0) {
        return Err(Error::Empty("target has zero power on channel 0"));
    }
    if snr_db == f64::INFINITY {
        return Ok(target.to_vec());
    }
    if !snr_db.is_finite() {
        return Err(Error::Config(format!("SNR {snr_db} dB")));
    }
    let pn = mean_power(&noise[0]);
    if !(pn > 0.0) {
        return Err(Error::Empty("noise has zero power on channel 0"));
    }
    let g = (pt / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    Ok(target
        .iter()
        .zip(noise)
        .map(|(t, n)| t.iter().zip(n).map(|(a, b)| a + g * b).collect())
        .collect())
}

/// Settings of the synthetic classification corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub classes: usize,
    /// Utterances per (geometry, SNR, class) cell.
    pub per_class: usize,
    pub geometries: Vec<ArrayGeometry>,
    pub snr_grid: Vec<f64>,
    pub duration_s: f64,
    /// Level of the class cue relative to the shared carrier.
    pub cue_level_db: f64,
    pub noise_directions: usize,
    /// Fixed horizontal source azimuth in radians; `None` draws one per
    /// utterance.
    pub azimuth: Option<f64>,
    pub split: Split,
    pub seed: u64,
    pub consts: PhysicalConstants,
}

impl ToyConfig {
    pub fn new(geometries: Vec<ArrayGeometry>, snr_grid: Vec<f64>, per_class: usize, seed: u64) -> Self {
        Self {
            classes: 4,
            per_class,
            geometries,
            snr_grid,
            duration_s: 1.0,
            cue_level_db: -6.0,
            noise_directions: 64,
            azimuth: None,
            split: Split::Train,
            seed,
            consts: PhysicalConstants::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > 8 {
            return Err(Error::Config(format!("{} classes, supported 2..=8", self.classes)));
        }
        if self.geometries.is_empty() || self.snr_grid.is_empty() || self.per_class == 0 {
            return Err(Error::Config("toy corpus needs geometries, SNRs and a count".into()));
        }
        if !(self.duration_s > 0.05 && self.duration_s <= 10.0) {
            return Err(Error::Config(format!("duration {} s", self.duration_s)));
        }
        if self.snr_grid.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            return Err(Error::Config("SNR must be finite or +inf".into()));
        }
        Ok(())
    }
}

/// Cue center frequency of class `c`.
pub fn class_center_hz(c: usize) -> f64 {
    500.0 * 1.4f64.powi(c as i32)
}

/// Mono source: a broadband carrier with a slow amplitude modulation shared
/// by all classes, plus class-specific chirped tone bursts around
/// [`class_center_hz`], with burst rate and sweep direction also set by the
/// class. Unit power.
pub fn toy_source(class: usize, num_samples: usize, cue_level_db: f64, fs: f64, rng: &mut impl Rng) -> Vec<f64> {
    let n = num_samples;
    let mut spec: Vec<Complex64> = (0..n)
        .map(|k| {
            let f = k.min(n - k) as f64 * fs / n as f64;
            let shape = if (100.0..6000.0).contains(&f) {
                1.0 / (1.0 + (f / 800.0).powi(2)).sqrt()
            } else {
                0.0
            };
            Complex64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * shape
        })
        .collect();
    for k in 1..n.div_ceil(2) {
        spec[n - k] = spec[k].conj();
    }
    spec[0] = Complex64::new(0.0, 0.0);
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    let rate = rng.gen_range(3.0..6.0);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let mut carrier: Vec<f64> = spec
        .iter()
        .enumerate()
        .map(|(i, c)| c.re * (1.0 + 0.6 * (2.0 * PI * rate * i as f64 / fs + phase).sin()))
        .collect();
    normalize_power(&mut carrier);

    let fc = class_center_hz(class);
    let burst = (0.06 + 0.02 * (class % 2) as f64) * fs;
    let sweep = if class % 2 == 0 { 0.08 } else { -0.08 } * fc;
    let mut cue = vec![0.0; n];
    let mut start = rng.gen_range(0.0..0.1) * fs;
    while (start as usize) < n {
        let len = burst as usize;
        let ph0 = rng.gen_range(0.0..2.0 * PI);
        for i in 0..len {
            let idx = start as usize + i;
            if idx >= n {
                break;
            }
            let u = i as f64 / len as f64;
            let env = 0.5 - 0.5 * (2.0 * PI * u).cos();
            let t = i as f64 / fs;
            let inst = 2.0 * PI * ((fc - sweep / 2.0) * t + sweep * t * t / (2.0 * len as f64 / fs));
            cue[idx] += env * (inst + ph0).sin();
        }
        start += burst + rng.gen_range(0.03..0.09) * fs * (1.0 + class as f64 * 0.25);
    }
    normalize_power(&mut cue);
    let g = 10f64.powf(cue_level_db / 20.0);
    let mut out: Vec<f64> = carrier.iter().zip(&cue).map(|(a, b)| a + g * b).collect();
    normalize_power(&mut out);
    out
}

fn normalize_power(x: &mut [f64]) {
    let p = mean_power(x);
    if p > 0.0 {
        let s = 1.0 / p.sqrt();
        x.iter_mut().for_each(|v| *v *= s);
    }
}

/// Fixed output level (channel-0 RMS of the mixture) of rendered utterances.
const OUTPUT_RMS: f64 = 0.05;

/// One rendered utterance and its scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyUtterance {
    pub class: usize,
    pub direction: Direction,
    pub snr_db: f64,
    pub channels: Vec<Vec<f64>>,
}

/// Deterministic in `(seed, stream)`.
pub fn render_toy_utterance(
    cfg: &ToyConfig,
    geom: &ArrayGeometry,
    class: usize,
    snr_db: f64,
    stream: u64,
) -> Result<ToyUtterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let fs = cfg.consts.sample_rate;
    let n = (cfg.duration_s * fs).round() as usize;
    let source = toy_source(class, n, cfg.cue_level_db, fs, &mut rng);
    let drawn = rng.gen_range(0.0..2.0 * PI);
    let direction = Direction::horizontal(cfg.azimuth.unwrap_or(drawn));
    let target = plane_wave_render(&source, geom, direction, &cfg.consts);
    let noise = diffuse_noise(geom, n, &cfg.consts, rng.gen(), cfg.noise_directions)?;
    let mut channels = mix_at_snr(&target, &noise, snr_db)?;
    let s = OUTPUT_RMS / mean_power(&channels[0]).sqrt();
    for c in &mut channels {
        c.iter_mut().for_each(|v| *v *= s);
    }
    Ok(ToyUtterance {
        class,
        direction,
        snr_db,
        channels,
    })
}

pub fn snr_tag(snr_db: f64) -> String {
    if snr_db == f64::INFINITY {
        "inf".into()
    } else {
        format!("{snr_db}")
    }
}

/// Writes float WAVs plus `manifest.csv` into `out_dir` and returns the manifest.
pub fn make_toy_dataset(cfg: &ToyConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let mut entries = Vec::new();
    let split_code = match cfg.split {
        Split::Train => 0u64,
        Split::Test => 1u64,
    };
    for (gi, geom) in cfg.geometries.iter().enumerate() {
        for (si, &snr) in cfg.snr_grid.iter().enumerate() {
            for class in 0..cfg.classes {
                for i in 0..cfg.per_class {
                    let stream = (((split_code * 64 + gi as u64) * 64 + si as u64) * 16 + class as u64)
                        * 1_000_000
                        + i as u64;
                    let utt = render_toy_utterance(cfg, geom, class, snr, stream)?;
                    let name = format!(
                        "{}_{}_snr{}_c{}_{:04}.wav",
                        cfg.split,
                        geom.id(),
                        snr_tag(snr),
                        class,
                        i
                    );
                    let audio = Audio::new(cfg.consts.sample_rate as u32, utt.channels)?;
                    write_wav(out_dir.join(&name), &audio, SampleFormat::Float32)?;
                    entries.push(ManifestEntry {
                        path: PathBuf::from(name),
                        label: class,
                        geometry_id: geom.id().to_string(),
                        snr_db: snr,
                        split: cfg.split,
                    });
                }
            }
        }
    }
    let manifest = DatasetManifest::new(entries, out_dir.to_path_buf());
    manifest.save(out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
