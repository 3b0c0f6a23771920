//! Streaming time-frequency analysis.
//!
//! Two feature paths share the framing and DFT code here:
//!
//! * the multi-channel DFT feature: 12.5 ms periodic-Hann frames every 10 ms,
//!   256-point DFT, bins `1..=127` (DC and Nyquist dropped), normalized with
//!   global per-bin statistics;
//! * the single-channel LFBE baseline: 25 ms frames every 10 ms, 512-point DFT,
//!   64 mel bands, log with a floor, causal mean subtraction.
//!
//! Normalized multi-channel frames are laid out channel-major, bin-minor,
//! with `(re, im)` interleaved: index `2 * (m * K + (k - 1)) + part`.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{check_len, Error, Result};

/// Variance floor applied by [`GlobalStats`].
pub const VAR_FLOOR: f64 = 1e-8;
/// Floor applied before every log.
pub const LOG_FLOOR: f64 = 1e-10;
pub const DEFAULT_MEAN_DECAY: f64 = 0.997;

const STATS_MAGIC: &[u8; 4] = b"MGST";
const STATS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi n / N)`.
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Rectangular => vec![1.0; len],
            WindowKind::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub sample_rate: f64,
    pub window_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub window: WindowKind,
}

impl StftConfig {
    pub fn new(
        sample_rate: f64,
        window_len: usize,
        hop: usize,
        fft_size: usize,
        window: WindowKind,
    ) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(Error::Config(format!("sample rate {sample_rate}")));
        }
        if hop == 0 || hop > window_len || window_len > fft_size {
            return Err(Error::Config(format!(
                "need 0 < hop ({hop}) <= window ({window_len}) <= fft size ({fft_size})"
            )));
        }
        if !fft_size.is_power_of_two() || fft_size < 4 {
            return Err(Error::Config(format!("fft size {fft_size} is not a power of two")));
        }
        Ok(Self {
            sample_rate,
            window_len,
            hop,
            fft_size,
            window,
        })
    }

    /// 16 kHz, 200-sample window, 160-sample hop, 256-point DFT: K = 127.
    pub fn dft_feature() -> Self {
        Self::new(16000.0, 200, 160, 256, WindowKind::Hann).unwrap()
    }

    /// 16 kHz, 400-sample window, 160-sample hop, 512-point DFT.
    pub fn lfbe() -> Self {
        Self::new(16000.0, 400, 160, 512, WindowKind::Hann).unwrap()
    }

    /// Number of retained bins, `fft_size / 2 - 1`.
    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 - 1
    }

    /// Center frequency in Hz of retained bin `k` (1-based, as in the DFT).
    pub fn bin_hz(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate / self.fft_size as f64
    }

    /// Angular frequencies (rad/s) of the retained bins `1..=K`.
    pub fn bin_omegas(&self) -> Vec<f64> {
        (1..=self.num_bins())
            .map(|k| 2.0 * PI * self.bin_hz(k))
            .collect()
    }
}

/// Causal framer holding the tail of the stream between pushes.
#[derive(Debug, Clone)]
pub struct Framer {
    window: Vec<f64>,
    hop: usize,
    pending: Vec<f64>,
}

impl Framer {
    pub fn new(cfg: &StftConfig) -> Self {
        Self {
            window: cfg.window.coefficients(cfg.window_len),
            hop: cfg.hop,
            pending: Vec::new(),
        }
    }

    /// Append samples and return every frame that is now complete.
    pub fn push(&mut self, samples: &[f64]) -> Vec<Vec<f64>> {
        self.pending.extend_from_slice(samples);
        let len = self.window.len();
        let mut frames = Vec::new();
        let mut start = 0;
        while start + len <= self.pending.len() {
            frames.push(apply_window(&self.pending[start..start + len], &self.window));
            start += self.hop;
        }
        self.pending.drain(..start.min(self.pending.len()));
        frames
    }
}

fn apply_window(samples: &[f64], window: &[f64]) -> Vec<f64> {
    samples.iter().zip(window).map(|(x, w)| x * w).collect()
}

/// Batch framing: frame `t` covers samples `[t * hop, t * hop + window_len)`.
pub fn frame_stream(samples: &[f64], cfg: &StftConfig) -> Vec<Vec<f64>> {
    let window = cfg.window.coefficients(cfg.window_len);
    if samples.len() < cfg.window_len {
        return Vec::new();
    }
    let count = (samples.len() - cfg.window_len) / cfg.hop + 1;
    (0..count)
        .map(|t| apply_window(&samples[t * cfg.hop..t * cfg.hop + cfg.window_len], &window))
        .collect()
}

pub fn num_frames(num_samples: usize, cfg: &StftConfig) -> usize {
    if num_samples < cfg.window_len {
        0
    } else {
        (num_samples - cfg.window_len) / cfg.hop + 1
    }
}

/// Retained DFT bins `1..fft_size/2` of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSpectrum {
    pub bins: Vec<Complex64>,
}

impl FrameSpectrum {
    pub fn zeros(k: usize) -> Self {
        Self {
            bins: vec![Complex64::new(0.0, 0.0); k],
        }
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// `[re_1, im_1, re_2, im_2, ...]`.
    pub fn to_interleaved(&self) -> Vec<f64> {
        self.bins.iter().flat_map(|c| [c.re, c.im]).collect()
    }
}

/// Forward DFT of zero-padded frames.
#[derive(Clone)]
pub struct SpectrumAnalyzer {
    cfg: StftConfig,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectrumAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectrumAnalyzer").field("cfg", &self.cfg).finish()
    }
}

impl SpectrumAnalyzer {
    pub fn new(cfg: &StftConfig) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Self { cfg: *cfg, fft }
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    /// All `fft_size` bins, including DC and Nyquist.
    pub fn full_dft(&self, frame: &[f64]) -> Result<Vec<Complex64>> {
        check_len("dft frame length", self.cfg.window_len, frame.len())?;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.cfg.fft_size];
        for (b, &x) in buf.iter_mut().zip(frame) {
            b.re = x;
        }
        self.fft.process(&mut buf);
        Ok(buf)
    }

    pub fn dft_frame(&self, frame: &[f64]) -> Result<FrameSpectrum> {
        let full = self.full_dft(frame)?;
        Ok(FrameSpectrum {
            bins: full[1..self.cfg.fft_size / 2].to_vec(),
        })
    }

    /// `|X_k|^2` over the retained bins.
    pub fn power_spectrum(&self, frame: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .dft_frame(frame)?
            .bins
            .iter()
            .map(|c| c.norm_sqr())
            .collect())
    }
}

/// Per-dimension global mean and (population) variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Welford accumulator behind [`GlobalStats`].
#[derive(Debug, Clone)]
pub struct StatsAccumulator {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl StatsAccumulator {
    pub fn new(dims: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dims],
            m2: vec![0.0; dims],
        }
    }

    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        check_len("stats vector", self.mean.len(), x.len())?;
        self.count += 1;
        let n = self.count as f64;
        for ((mean, m2), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *mean;
            *mean += delta / n;
            *m2 += delta * (v - *mean);
        }
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finish(&self) -> Result<GlobalStats> {
        if self.count == 0 {
            return Err(Error::Empty("no vectors for global statistics"));
        }
        let n = self.count as f64;
        Ok(GlobalStats {
            mean: self.mean.clone(),
            var: self.m2.iter().map(|m2| (m2 / n).max(VAR_FLOOR)).collect(),
        })
    }
}

/// Pool real/imag statistics per bin across every channel of every frame.
/// `frames[t][m]` is channel `m` of frame `t`.
pub fn compute_global_stats(frames: &[Vec<FrameSpectrum>]) -> Result<GlobalStats> {
    let k = frames
        .iter()
        .flat_map(|f| f.first())
        .map(|s| s.len())
        .next()
        .ok_or(Error::Empty("no frames for global statistics"))?;
    let mut acc = StatsAccumulator::new(2 * k);
    for frame in frames {
        for spec in frame {
            acc.push(&spec.to_interleaved())?;
        }
    }
    acc.finish()
}

impl GlobalStats {
    pub fn identity(dims: usize) -> Self {
        Self {
            mean: vec![0.0; dims],
            var: vec![1.0; dims],
        }
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    /// In-place `(x - mean) / sqrt(var)`, cycling the statistics over `x`.
    pub fn normalize_in_place(&self, x: &mut [f64]) -> Result<()> {
        if x.len() % self.dims() != 0 {
            return Err(Error::Dimension {
                context: "normalize: vector not a multiple of stats dims",
                expected: self.dims(),
                actual: x.len(),
            });
        }
        for chunk in x.chunks_mut(self.dims()) {
            for ((v, m), s) in chunk.iter_mut().zip(&self.mean).zip(&self.var) {
                *v = (*v - m) / s.sqrt();
            }
        }
        Ok(())
    }

    pub fn denormalize_in_place(&self, x: &mut [f64]) -> Result<()> {
        if x.len() % self.dims() != 0 {
            return Err(Error::Dimension {
                context: "denormalize: vector not a multiple of stats dims",
                expected: self.dims(),
                actual: x.len(),
            });
        }
        for chunk in x.chunks_mut(self.dims()) {
            for ((v, m), s) in chunk.iter_mut().zip(&self.mean).zip(&self.var) {
                *v = *v * s.sqrt() + m;
            }
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(STATS_MAGIC)?;
        w.write_all(&STATS_VERSION.to_le_bytes())?;
        w.write_all(&(self.dims() as u32).to_le_bytes())?;
        for v in self.mean.iter().chain(&self.var) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("stats file truncated in header".into()))?;
        if &magic != STATS_MAGIC {
            return Err(Error::Format("not a global stats file (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != STATS_VERSION {
            return Err(Error::Version {
                found: version,
                expected: STATS_VERSION,
            });
        }
        let dims = read_u32(&mut r)? as usize;
        let mut read_vec = || -> Result<Vec<f64>> {
            (0..dims)
                .map(|_| {
                    let mut b = [0u8; 8];
                    r.read_exact(&mut b)
                        .map_err(|_| Error::Format("stats file truncated".into()))?;
                    Ok(f64::from_le_bytes(b))
                })
                .collect()
        };
        let mean = read_vec()?;
        let var = read_vec()?;
        Ok(Self { mean, var })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::read(path)?.as_slice())
    }
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("file truncated".into()))?;
    Ok(u32::from_le_bytes(b))
}

/// Normalize one multi-channel frame into the interleaved real layout.
pub fn normalize_dft(channels: &[FrameSpectrum], stats: &GlobalStats) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(channels.iter().map(|c| 2 * c.len()).sum());
    for spec in channels {
        check_len("normalize_dft bins", stats.dims(), 2 * spec.len())?;
        out.extend(spec.to_interleaved());
    }
    stats.normalize_in_place(&mut out)?;
    Ok(out)
}

/// Inverse of [`normalize_dft`].
pub fn denormalize_dft(frame: &[f64], stats: &GlobalStats) -> Result<Vec<FrameSpectrum>> {
    let mut raw = frame.to_vec();
    stats.denormalize_in_place(&mut raw)?;
    Ok(raw
        .chunks(stats.dims())
        .map(|ch| FrameSpectrum {
            bins: ch.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect(),
        })
        .collect())
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters sampled on the retained DFT bins.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// `num_filters` rows of `K` weights.
    pub weights: Vec<Vec<f64>>,
    /// Band edges in Hz, `num_filters + 2` values.
    pub edges_hz: Vec<f64>,
}

impl MelFilterbank {
    /// Filters whose triangle is narrower than one bin fall back to a unit
    /// weight on the bin nearest their center, so no row is empty.
    pub fn new(num_filters: usize, cfg: &StftConfig, f_min: f64, f_max: f64) -> Result<Self> {
        if num_filters == 0 {
            return Err(Error::Config("zero mel filters".into()));
        }
        if !(f_min >= 0.0 && f_min < f_max && f_max <= cfg.sample_rate / 2.0) {
            return Err(Error::Config(format!(
                "mel band edges {f_min}..{f_max} Hz invalid for fs {}",
                cfg.sample_rate
            )));
        }
        let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let edges_hz: Vec<f64> = (0..num_filters + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (num_filters + 1) as f64))
            .collect();
        let k = cfg.num_bins();
        let bin_hz: Vec<f64> = (1..=k).map(|b| cfg.bin_hz(b)).collect();
        let weights = (0..num_filters)
            .map(|j| {
                let (l, c, r) = (edges_hz[j], edges_hz[j + 1], edges_hz[j + 2]);
                let mut row: Vec<f64> = bin_hz
                    .iter()
                    .map(|&f| {
                        if f > l && f <= c {
                            (f - l) / (c - l)
                        } else if f > c && f < r {
                            (r - f) / (r - c)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                if row.iter().all(|&w| w == 0.0) {
                    let nearest = bin_hz
                        .iter()
                        .enumerate()
                        .min_by(|a, b| (a.1 - c).abs().total_cmp(&(b.1 - c).abs()))
                        .map(|(i, _)| i)
                        .unwrap_or(0);
                    row[nearest] = 1.0;
                }
                row
            })
            .collect();
        Ok(Self { weights, edges_hz })
    }

    pub fn num_filters(&self) -> usize {
        self.weights.len()
    }

    pub fn num_bins(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn center_hz(&self) -> &[f64] {
        &self.edges_hz[1..self.edges_hz.len() - 1]
    }

    pub fn apply(&self, power: &[f64]) -> Result<Vec<f64>> {
        check_len("mel filterbank input", self.num_bins(), power.len())?;
        Ok(self
            .weights
            .iter()
            .map(|row| row.iter().zip(power).map(|(w, p)| w * p).sum())
            .collect())
    }
}

/// `log(max(fbank . |X|^2, LOG_FLOOR))` of one windowed frame.
pub fn lfbe_frame(
    frame: &[f64],
    analyzer: &SpectrumAnalyzer,
    fbank: &MelFilterbank,
) -> Result<Vec<f64>> {
    let power = analyzer.power_spectrum(frame)?;
    Ok(fbank
        .apply(&power)?
        .into_iter()
        .map(|e| e.max(LOG_FLOOR).ln())
        .collect())
}

/// Exponentially decaying running-mean subtraction, `mu_0 = x_0`.
#[derive(Debug, Clone)]
pub struct CausalMeanNormalizer {
    decay: f64,
    mean: Option<Vec<f64>>,
}

impl CausalMeanNormalizer {
    pub fn new(decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::Config(format!("mean decay {decay} not in [0, 1)")));
        }
        Ok(Self { decay, mean: None })
    }

    pub fn push(&mut self, x: &[f64]) -> Vec<f64> {
        let a = self.decay;
        match &mut self.mean {
            None => {
                self.mean = Some(x.to_vec());
                vec![0.0; x.len()]
            }
            Some(mu) => mu
                .iter_mut()
                .zip(x)
                .map(|(m, &v)| {
                    *m = a * *m + (1.0 - a) * v;
                    v - *m
                })
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        self.mean = None;
    }
}

pub fn causal_mean_normalize(stream: &[Vec<f64>], decay: f64) -> Result<Vec<Vec<f64>>> {
    let mut n = CausalMeanNormalizer::new(decay)?;
    Ok(stream.iter().map(|x| n.push(x)).collect())
}

/// Streaming multi-channel front-end: samples in, normalized MC frames out.
#[derive(Debug, Clone)]
pub struct DftFrontend {
    framers: Vec<Framer>,
    analyzer: SpectrumAnalyzer,
    stats: GlobalStats,
}

impl DftFrontend {
    pub fn new(cfg: &StftConfig, channels: usize, stats: GlobalStats) -> Result<Self> {
        check_len("frontend stats dims", 2 * cfg.num_bins(), stats.dims())?;
        Ok(Self {
            framers: (0..channels).map(|_| Framer::new(cfg)).collect(),
            analyzer: SpectrumAnalyzer::new(cfg),
            stats,
        })
    }

    /// Push one chunk per channel (equal lengths) and return completed frames.
    pub fn push(&mut self, chunk: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        check_len("frontend channel count", self.framers.len(), chunk.len())?;
        let per_channel: Vec<Vec<Vec<f64>>> = self
            .framers
            .iter_mut()
            .zip(chunk)
            .map(|(f, c)| f.push(c))
            .collect();
        let t = per_channel.iter().map(Vec::len).min().unwrap_or(0);
        (0..t)
            .map(|i| {
                let spectra = per_channel
                    .iter()
                    .map(|frames| self.analyzer.dft_frame(&frames[i]))
                    .collect::<Result<Vec<_>>>()?;
                normalize_dft(&spectra, &self.stats)
            })
            .collect()
    }
}

/// Samples whose summed squared synthesis window falls below this are set
/// to zero; only the outermost few samples of a signal are that weak.
pub const SYNTHESIS_FLOOR: f64 = 1e-3;

/// Least-squares overlap-add: inverse DFT of each frame (DC and Nyquist set
/// to zero), weighted by the analysis window and divided by the summed
/// squared window. Unmodified spectra of a DC-free signal come back up to the
/// dropped bins.
pub fn overlap_add(frames: &[FrameSpectrum], cfg: &StftConfig, num_samples: usize) -> Result<Vec<f64>> {
    overlap_add_with_edges(frames, None, cfg, num_samples)
}

/// Per-frame `[DC, Nyquist]` DFT values of one channel, the two bins a
/// [`FrameSpectrum`] leaves out.
pub fn edge_bins(samples: &[f64], analyzer: &SpectrumAnalyzer) -> Result<Vec<[f64; 2]>> {
    let half = analyzer.config().fft_size / 2;
    frame_stream(samples, analyzer.config())
        .iter()
        .map(|f| {
            let full = analyzer.full_dft(f)?;
            Ok([full[0].re, full[half].re])
        })
        .collect()
}

/// [`overlap_add`] with the DC and Nyquist bins restored from `edges`, which
/// makes unmodified spectra reconstruct exactly where the window is not weak.
pub fn overlap_add_with_edges(
    frames: &[FrameSpectrum],
    edges: Option<&[[f64; 2]]>,
    cfg: &StftConfig,
    num_samples: usize,
) -> Result<Vec<f64>> {
    if let Some(e) = edges {
        check_len("edge bin frames", frames.len(), e.len())?;
    }
    let k = cfg.num_bins();
    let n = cfg.fft_size;
    let window = cfg.window.coefficients(cfg.window_len);
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let mut out = vec![0.0; num_samples];
    let mut norm = vec![0.0; num_samples];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (t, frame) in frames.iter().enumerate() {
        check_len("synthesis frame bins", k, frame.len())?;
        buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
        for (i, &x) in frame.bins.iter().enumerate() {
            buf[i + 1] = x;
            buf[n - i - 1] = x.conj();
        }
        if let Some(e) = edges {
            buf[0] = Complex64::new(e[t][0], 0.0);
            buf[n / 2] = Complex64::new(e[t][1], 0.0);
        }
        ifft.process(&mut buf);
        let start = t * cfg.hop;
        for (i, w) in window.iter().enumerate() {
            let idx = start + i;
            if idx >= num_samples {
                break;
            }
            out[idx] += w * buf[i].re / n as f64;
            norm[idx] += w * w;
        }
    }
    for (o, q) in out.iter_mut().zip(&norm) {
        *o = if *q >= SYNTHESIS_FLOOR { *o / q } else { 0.0 };
    }
    Ok(out)
}

/// Raw (unnormalized) spectra `[t][m]` of a multi-channel signal.
pub fn mc_spectra(
    channels: &[Vec<f64>],
    analyzer: &SpectrumAnalyzer,
) -> Result<Vec<Vec<FrameSpectrum>>> {
    let framed: Vec<Vec<Vec<f64>>> = channels
        .iter()
        .map(|c| frame_stream(c, analyzer.config()))
        .collect();
    let t = framed.iter().map(Vec::len).min().unwrap_or(0);
    (0..t)
        .map(|i| framed.iter().map(|f| analyzer.dft_frame(&f[i])).collect())
        .collect()
}

/// Batch counterpart of [`DftFrontend`].
pub fn dft_features(
    channels: &[Vec<f64>],
    cfg: &StftConfig,
    stats: &GlobalStats,
) -> Result<Vec<Vec<f64>>> {
    let analyzer = SpectrumAnalyzer::new(cfg);
    mc_spectra(channels, &analyzer)?
        .iter()
        .map(|f| normalize_dft(f, stats))
        .collect()
}

/// Single-channel LFBE features with causal mean subtraction.
pub fn lfbe_features(
    samples: &[f64],
    cfg: &StftConfig,
    fbank: &MelFilterbank,
    decay: f64,
) -> Result<Vec<Vec<f64>>> {
    let analyzer = SpectrumAnalyzer::new(cfg);
    let mut norm = CausalMeanNormalizer::new(decay)?;
    frame_stream(samples, cfg)
        .iter()
        .map(|f| Ok(norm.push(&lfbe_frame(f, &analyzer, fbank)?)))
        .collect()
}
