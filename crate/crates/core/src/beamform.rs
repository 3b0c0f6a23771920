//! Superdirective beamformer design for a spherically isotropic noise field,
//! application in complex and real-matrix form, and max-energy beam selection
//! with moving-sum trajectory smoothing.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::dsp::{read_u32, FrameSpectrum, StftConfig};
use crate::error::{check_len, Error, Result};
use crate::geometry::{array_manifold, ArrayGeometry, Direction, PhysicalConstants};

pub const DEFAULT_LOADING: f64 = 0.01;
pub const DEFAULT_WNG_CAP_DB: f64 = 10.0;
pub const DEFAULT_SMOOTHING_FRAMES: usize = 10;
pub const LOADING_SEARCH_MIN: f64 = 1e-6;
pub const LOADING_SEARCH_MAX: f64 = 1e2;
const LOADING_SEARCH_STEPS: usize = 40;

const BANK_MAGIC: &[u8; 4] = b"MGBF";
const BANK_VERSION: u32 = 1;

/// Unnormalized sinc, `sin(x) / x` with `sinc(0) = 1`.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Real symmetric `M x M` diffuse-field coherence at one frequency, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceMatrix {
    pub size: usize,
    pub data: Vec<f64>,
}

impl CoherenceMatrix {
    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.data[m * self.size + n]
    }
}

pub fn diffuse_coherence(
    geom: &ArrayGeometry,
    omega: f64,
    consts: &PhysicalConstants,
) -> CoherenceMatrix {
    let dist = geom.pairwise_distances();
    let m = dist.len();
    let mut data = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            data[i * m + j] = sinc(omega * dist[i][j] / consts.speed_of_sound);
        }
    }
    CoherenceMatrix { size: m, data }
}

/// Cholesky factor of a real SPD matrix; `None` when a pivot collapses
/// relative to the diagonal scale.
fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 1e-13 * scale) {
            return None;
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[f64], n: usize, b: &[Complex64]) -> Vec<Complex64> {
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            let v = y[k] * l[i * n + k];
            y[i] -= v;
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            let v = y[k] * l[k * n + i];
            y[i] -= v;
        }
        y[i] /= l[i * n + i];
    }
    y
}

/// MVDR weights for a given real noise covariance and steering vector:
/// `w = R^-1 v / (v^H R^-1 v)`.
fn mvdr_weights(cov: &[f64], n: usize, v: &[Complex64], hz: f64) -> Result<Vec<Complex64>> {
    let l = cholesky(cov, n).ok_or(Error::Singular { bin: None, hz })?;
    let z = cholesky_solve(&l, n, v);
    let denom: Complex64 = v.iter().zip(&z).map(|(a, b)| a.conj() * b).sum();
    if !(denom.re > 0.0) || !denom.re.is_finite() {
        return Err(Error::Singular { bin: None, hz });
    }
    Ok(z.into_iter().map(|x| x / denom.re).collect())
}

/// Superdirective weights at angular frequency `omega` with diagonal loading.
pub fn sd_weights(
    geom: &ArrayGeometry,
    dir: &Direction,
    omega: f64,
    loading: f64,
    consts: &PhysicalConstants,
) -> Result<Vec<Complex64>> {
    if !(loading >= 0.0) {
        return Err(Error::Config(format!("diagonal loading {loading}")));
    }
    let mut cov = diffuse_coherence(geom, omega, consts);
    for i in 0..cov.size {
        cov.data[i * cov.size + i] += loading;
    }
    let v = array_manifold(geom, dir, omega, consts);
    mvdr_weights(&cov.data, cov.size, &v, omega / std::f64::consts::TAU)
}

/// `||w||^2`, the inverse white-noise gain under the distortionless constraint.
pub fn weight_norm_sqr(w: &[Complex64]) -> f64 {
    w.iter().map(|c| c.norm_sqr()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadingSearch {
    pub loading: f64,
    /// True when even the maximum loading leaves `||w||^2` above the cap.
    pub cap_unreachable: bool,
}

/// Smallest diagonal loading in `[1e-6, 1e2]` whose weights satisfy
/// `||w||^2 <= cap`, found by 40 bisection steps on a log scale.
pub fn adjust_loading(
    geom: &ArrayGeometry,
    dir: &Direction,
    omega: f64,
    cap: f64,
    consts: &PhysicalConstants,
) -> Result<LoadingSearch> {
    if !(cap > 0.0) {
        return Err(Error::Config(format!("white-noise-gain cap {cap}")));
    }
    let norm_at = |s: f64| sd_weights(geom, dir, omega, s, consts).map(|w| weight_norm_sqr(&w));
    if norm_at(LOADING_SEARCH_MIN)? <= cap {
        return Ok(LoadingSearch {
            loading: LOADING_SEARCH_MIN,
            cap_unreachable: false,
        });
    }
    if norm_at(LOADING_SEARCH_MAX)? > cap {
        return Ok(LoadingSearch {
            loading: LOADING_SEARCH_MAX,
            cap_unreachable: true,
        });
    }
    let (mut lo, mut hi) = (LOADING_SEARCH_MIN.ln(), LOADING_SEARCH_MAX.ln());
    for _ in 0..LOADING_SEARCH_STEPS {
        let mid = 0.5 * (lo + hi);
        if norm_at(mid.exp())? <= cap {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(LoadingSearch {
        loading: hi.exp(),
        cap_unreachable: false,
    })
}

/// `Y = w^H X`.
pub fn apply_beamformer(w: &[Complex64], x: &[Complex64]) -> Result<Complex64> {
    check_len("beamformer channel count", w.len(), x.len())?;
    Ok(w.iter().zip(x).map(|(a, b)| a.conj() * b).sum())
}

/// Real-valued `2M x 2` form of `w^H`, rows in `(re, im)` pairs per channel:
/// channel `m` contributes rows `[Re w_m, -Im w_m]` and `[Im w_m, Re w_m]`,
/// so that `B^T [Re X_1, Im X_1, ...]^T = [Re Y, Im Y]^T`.
pub fn real_form(w: &[Complex64]) -> Vec<[f64; 2]> {
    w.iter()
        .flat_map(|c| [[c.re, -c.im], [c.im, c.re]])
        .collect()
}

/// `B^T x` for a real-form block and an interleaved `(re, im)` input.
pub fn apply_real_form(block: &[[f64; 2]], x: &[f64]) -> Result<[f64; 2]> {
    check_len("real-form input length", block.len(), x.len())?;
    let mut y = [0.0; 2];
    for (row, &v) in block.iter().zip(x) {
        y[0] += row[0] * v;
        y[1] += row[1] * v;
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LoadingPolicy {
    Fixed(f64),
    /// Per-bin loading from [`adjust_loading`] with cap `10^(db/10)`.
    WngCapDb(f64),
}

impl Default for LoadingPolicy {
    fn default() -> Self {
        LoadingPolicy::Fixed(DEFAULT_LOADING)
    }
}

/// Weights for every (geometry, direction, bin); bins are `1..=K` of the
/// feature DFT.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerBank {
    geometry_ids: Vec<String>,
    channels: Vec<usize>,
    directions: Vec<Direction>,
    num_bins: usize,
    /// `weights[g]` holds `D * K * M_g` values in `(d, k, m)` order.
    weights: Vec<Vec<Complex64>>,
}

impl BeamformerBank {
    pub fn from_parts(
        geometry_ids: Vec<String>,
        channels: Vec<usize>,
        directions: Vec<Direction>,
        num_bins: usize,
        weights: Vec<Vec<Complex64>>,
    ) -> Result<Self> {
        if geometry_ids.is_empty() || directions.is_empty() || num_bins == 0 {
            return Err(Error::Empty("beamformer bank needs G, D, K >= 1"));
        }
        check_len("bank geometry ids", channels.len(), geometry_ids.len())?;
        check_len("bank weight blocks", channels.len(), weights.len())?;
        for (w, &m) in weights.iter().zip(&channels) {
            if m == 0 {
                return Err(Error::Empty("bank geometry with zero channels"));
            }
            check_len("bank weights", directions.len() * num_bins * m, w.len())?;
        }
        Ok(Self {
            geometry_ids,
            channels,
            directions,
            num_bins,
            weights,
        })
    }

    /// One geometry, one sensor, one direction, unit weights.
    pub fn pass_through(num_bins: usize) -> Self {
        Self::from_parts(
            vec!["mono".into()],
            vec![1],
            vec![Direction::horizontal(0.0)],
            num_bins,
            vec![vec![Complex64::new(1.0, 0.0); num_bins]],
        )
        .expect("valid pass-through bank")
    }

    pub fn num_geometries(&self) -> usize {
        self.channels.len()
    }

    pub fn num_directions(&self) -> usize {
        self.directions.len()
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn channels(&self, g: usize) -> usize {
        self.channels[g]
    }

    pub fn geometry_ids(&self) -> &[String] {
        &self.geometry_ids
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    /// Weights of geometry `g`, direction `d`, retained bin index `k` (0-based).
    pub fn weight(&self, g: usize, d: usize, k: usize) -> &[Complex64] {
        let m = self.channels[g];
        let start = (d * self.num_bins + k) * m;
        &self.weights[g][start..start + m]
    }

    pub fn num_weight_vectors(&self) -> usize {
        self.num_directions() * self.num_bins * self.num_geometries()
    }

    pub fn geometry_index(&self, id: &str) -> Option<usize> {
        self.geometry_ids.iter().position(|g| g == id)
    }

    /// Layout: magic `MGBF`, version, G, D, K, `M_g` for each geometry, then
    /// little-endian f64 `(re, im)` pairs in `(g, d, k, m)` order.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(BANK_MAGIC)?;
        for v in [
            BANK_VERSION,
            self.num_geometries() as u32,
            self.num_directions() as u32,
            self.num_bins as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for &m in &self.channels {
            w.write_all(&(m as u32).to_le_bytes())?;
        }
        for c in self.weights.iter().flatten() {
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
        Ok(())
    }

    /// The file stores no ids or angles: geometries come back as `g0, g1, ...`
    /// and directions as the uniform horizontal grid of size D.
    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("bank file truncated in header".into()))?;
        if &magic != BANK_MAGIC {
            return Err(Error::Format("not a beamformer bank file (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != BANK_VERSION {
            return Err(Error::Version {
                found: version,
                expected: BANK_VERSION,
            });
        }
        let g = read_u32(&mut r)? as usize;
        let d = read_u32(&mut r)? as usize;
        let k = read_u32(&mut r)? as usize;
        if g == 0 || d == 0 || k == 0 || g > 1 << 16 || d > 1 << 16 || k > 1 << 20 {
            return Err(Error::Format(format!("implausible bank dims G={g} D={d} K={k}")));
        }
        let channels = (0..g)
            .map(|_| read_u32(&mut r).map(|m| m as usize))
            .collect::<Result<Vec<_>>>()?;
        if channels.iter().any(|&m| m == 0 || m > 1 << 12) {
            return Err(Error::Format("implausible bank channel count".into()));
        }
        let mut weights = Vec::with_capacity(g);
        let mut buf = [0u8; 16];
        for &m in &channels {
            let n = d * k * m;
            let mut block = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::Format("bank file truncated in weights".into()))?;
                let re = f64::from_le_bytes(buf[..8].try_into().unwrap());
                let im = f64::from_le_bytes(buf[8..].try_into().unwrap());
                block.push(Complex64::new(re, im));
            }
            weights.push(block);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after bank weights".into()));
        }
        Self::from_parts(
            (0..g).map(|i| format!("g{i}")).collect(),
            channels,
            crate::geometry::look_directions(d),
            k,
            weights,
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::read(path)?.as_slice())
    }
}

/// Per-bin design summary returned alongside a bank.
#[derive(Debug, Clone, PartialEq)]
pub struct BinDesign {
    pub geometry: usize,
    pub direction: usize,
    pub bin: usize,
    pub loading: f64,
    pub weight_norm_sqr: f64,
    pub cap_unreachable: bool,
}

pub fn design_bank(
    geometries: &[ArrayGeometry],
    directions: &[Direction],
    cfg: &StftConfig,
    policy: LoadingPolicy,
    consts: &PhysicalConstants,
) -> Result<BeamformerBank> {
    design_bank_with_report(geometries, directions, cfg, policy, consts).map(|(b, _)| b)
}

pub fn design_bank_with_report(
    geometries: &[ArrayGeometry],
    directions: &[Direction],
    cfg: &StftConfig,
    policy: LoadingPolicy,
    consts: &PhysicalConstants,
) -> Result<(BeamformerBank, Vec<BinDesign>)> {
    if geometries.is_empty() || directions.is_empty() {
        return Err(Error::Empty("design_bank needs geometries and directions"));
    }
    let omegas = cfg.bin_omegas();
    let mut weights = Vec::with_capacity(geometries.len());
    let mut report = Vec::new();
    for (gi, geom) in geometries.iter().enumerate() {
        let mut block = Vec::with_capacity(directions.len() * omegas.len() * geom.num_sensors());
        for (di, dir) in directions.iter().enumerate() {
            for (ki, &omega) in omegas.iter().enumerate() {
                let (loading, cap_unreachable) = match policy {
                    LoadingPolicy::Fixed(s) => (s, false),
                    LoadingPolicy::WngCapDb(db) => {
                        let cap = 10f64.powf(db / 10.0);
                        let found = adjust_loading(geom, dir, omega, cap, consts)
                            .map_err(|e| with_bin(e, ki + 1))?;
                        (found.loading, found.cap_unreachable)
                    }
                };
                let w = sd_weights(geom, dir, omega, loading, consts)
                    .map_err(|e| with_bin(e, ki + 1))?;
                report.push(BinDesign {
                    geometry: gi,
                    direction: di,
                    bin: ki + 1,
                    loading,
                    weight_norm_sqr: weight_norm_sqr(&w),
                    cap_unreachable,
                });
                block.extend(w);
            }
        }
        weights.push(block);
    }
    let bank = BeamformerBank::from_parts(
        geometries.iter().map(|g| g.id().to_string()).collect(),
        geometries.iter().map(ArrayGeometry::num_sensors).collect(),
        directions.to_vec(),
        omegas.len(),
        weights,
    )?;
    Ok((bank, report))
}

fn with_bin(e: Error, bin: usize) -> Error {
    match e {
        Error::Singular { hz, .. } => Error::Singular {
            bin: Some(bin),
            hz,
        },
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectorConfig {
    /// Moving-sum length in frames; 1 disables smoothing.
    pub window: usize,
    /// Divide each beam's energy by its mean `||w||^2` over bins.
    pub normalize_by_gain: bool,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_SMOOTHING_FRAMES,
            normalize_by_gain: false,
        }
    }
}

/// Causal max-energy beam selection over a moving window of frames.
#[derive(Debug, Clone)]
pub struct BeamSelector {
    window: usize,
    history: VecDeque<Vec<f64>>,
    current: usize,
}

impl BeamSelector {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("smoothing window must be >= 1 frame".into()));
        }
        Ok(Self {
            window,
            history: VecDeque::with_capacity(window),
            current: 0,
        })
    }

    pub fn current(&self) -> usize {
        self.current
    }

    /// Feed one frame of per-beam energies; ties go to the lowest index.
    pub fn select(&mut self, energies: &[f64]) -> Result<usize> {
        if energies.is_empty() {
            return Err(Error::Empty("no beam energies"));
        }
        if let Some(first) = self.history.front() {
            check_len("beam count", first.len(), energies.len())?;
        }
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(energies.to_vec());
        let mut best = 0;
        let mut best_sum = f64::NEG_INFINITY;
        for d in 0..energies.len() {
            let s: f64 = self.history.iter().map(|e| e[d]).sum();
            if s > best_sum {
                best_sum = s;
                best = d;
            }
        }
        self.current = best;
        Ok(best)
    }
}

/// Per-frame energies `sum_k |w_{g,d,k}^H X_k|^2` of every beam of geometry `g`.
pub fn beam_energies(bank: &BeamformerBank, g: usize, frame: &[FrameSpectrum]) -> Result<Vec<f64>> {
    check_len("frame channel count", bank.channels(g), frame.len())?;
    let k = bank.num_bins();
    for ch in frame {
        check_len("frame bins", k, ch.len())?;
    }
    let mut x = vec![Complex64::new(0.0, 0.0); frame.len()];
    Ok((0..bank.num_directions())
        .map(|d| {
            (0..k)
                .map(|ki| {
                    for (xm, ch) in x.iter_mut().zip(frame) {
                        *xm = ch.bins[ki];
                    }
                    bank.weight(g, d, ki)
                        .iter()
                        .zip(&x)
                        .map(|(w, v)| w.conj() * v)
                        .sum::<Complex64>()
                        .norm_sqr()
                })
                .sum()
        })
        .collect())
}

/// Run every beam of geometry `g`, select one per frame, and emit its spectrum.
pub fn enhance_utterance(
    bank: &BeamformerBank,
    g: usize,
    frames: &[Vec<FrameSpectrum>],
    cfg: &SelectorConfig,
) -> Result<(Vec<FrameSpectrum>, Vec<usize>)> {
    if g >= bank.num_geometries() {
        return Err(Error::Config(format!("geometry index {g} not in bank")));
    }
    let mut selector = BeamSelector::new(cfg.window)?;
    let k = bank.num_bins();
    let gains: Vec<f64> = (0..bank.num_directions())
        .map(|d| {
            if cfg.normalize_by_gain {
                (0..k).map(|ki| weight_norm_sqr(bank.weight(g, d, ki))).sum::<f64>() / k as f64
            } else {
                1.0
            }
        })
        .collect();
    let mut out = Vec::with_capacity(frames.len());
    let mut trace = Vec::with_capacity(frames.len());
    for frame in frames {
        let mut e = beam_energies(bank, g, frame)?;
        for (v, gain) in e.iter_mut().zip(&gains) {
            *v /= gain;
        }
        let d = selector.select(&e)?;
        let mut x = vec![Complex64::new(0.0, 0.0); frame.len()];
        let bins = (0..k)
            .map(|ki| {
                for (xm, ch) in x.iter_mut().zip(frame) {
                    *xm = ch.bins[ki];
                }
                apply_beamformer(bank.weight(g, d, ki), &x)
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(FrameSpectrum { bins });
        trace.push(d);
    }
    Ok((out, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::look_directions;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{PI, TAU};

    fn c() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    #[test]
    fn coherence_examples() {
        let g = ArrayGeometry::pair("p", 0.072).unwrap();
        let cm = diffuse_coherence(&g, TAU * 1000.0, &c());
        assert_eq!(cm.get(0, 0), 1.0);
        assert_eq!(cm.get(0, 1), cm.get(1, 0));
        // oracle: x = 2 pi 1000 0.072 / 343 = 1.318926..., sin(x)/x
        let x = TAU * 1000.0 * 0.072 / 343.0;
        assert_abs_diff_eq!(x, 1.3189, epsilon = 1e-4);
        assert_abs_diff_eq!(cm.get(0, 1), 0.7343, epsilon = 1e-4);
        let f0 = 343.0 / (2.0 * 0.072);
        assert_abs_diff_eq!(f0, 2381.9, epsilon = 0.1);
        assert_abs_diff_eq!(diffuse_coherence(&g, TAU * f0, &c()).get(0, 1), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn distortionless_and_delay_and_sum_limit() {
        let g = ArrayGeometry::seven_mic_circular();
        for (az, f) in [(0.3, 300.0), (2.0, 2500.0), (5.0, 7900.0)] {
            let dir = Direction::horizontal(az);
            let w = sd_weights(&g, &dir, TAU * f, 0.01, &c()).unwrap();
            let v = array_manifold(&g, &dir, TAU * f, &c());
            let y = apply_beamformer(&w, &v).unwrap();
            assert!((y - Complex64::new(1.0, 0.0)).norm() <= 1e-9);
            let das = sd_weights(&g, &dir, TAU * f, 1e9, &c()).unwrap();
            for (a, b) in das.iter().zip(&v) {
                assert!((a - b / 7.0).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn two_mic_closed_form_oracle() {
        let g = ArrayGeometry::pair("p", 0.036).unwrap();
        let dir = Direction::horizontal(0.0);
        let omega = TAU * 500.0;
        let s2 = 0.01;
        let w = sd_weights(&g, &dir, omega, s2, &c()).unwrap();
        // explicit 2x2 inverse of [[a, b], [b, a]]
        let a = 1.0 + s2;
        let b = sinc(omega * 0.036 / 343.0);
        let det = a * a - b * b;
        let inv = [[a / det, -b / det], [-b / det, a / det]];
        let v = array_manifold(&g, &dir, omega, &c());
        let z = [
            v[0] * inv[0][0] + v[1] * inv[0][1],
            v[0] * inv[1][0] + v[1] * inv[1][1],
        ];
        let denom = (v[0].conj() * z[0] + v[1].conj() * z[1]).re;
        for m in 0..2 {
            let expect = z[m] / denom;
            assert!((w[m] - expect).norm() <= 1e-10 * expect.norm());
        }
    }

    #[test]
    fn singular_without_loading_names_the_bin() {
        // coincident sensors cannot be built as a geometry; exercise the solver
        // on their all-ones coherence directly
        let ones = vec![1.0; 4];
        let v = [Complex64::new(1.0, 0.0); 2];
        let err = mvdr_weights(&ones, 2, &v, 62.5).unwrap_err();
        match with_bin(err, 1) {
            e @ Error::Singular { bin: Some(1), .. } => {
                assert!(e.to_string().contains("bin 1"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(ArrayGeometry::new("dup", vec![[0.0; 3], [0.0; 3]]).is_err());
        let g = ArrayGeometry::single("s");
        assert!(sd_weights(&g, &Direction::horizontal(0.0), 1.0, -1.0, &c()).is_err());
        // unloaded design still works for well-separated sensors
        let w = sd_weights(&ArrayGeometry::pair("p", 0.05).unwrap(), &Direction::horizontal(0.0), TAU * 1000.0, 0.0, &c()).unwrap();
        assert!(w.iter().all(|x| x.re.is_finite()));
    }

    #[test]
    fn loading_search() {
        let g = ArrayGeometry::pair("p", 0.036).unwrap();
        let dir = Direction::horizontal(0.0);
        let omega = TAU * 400.0;
        let n_min = weight_norm_sqr(&sd_weights(&g, &dir, omega, LOADING_SEARCH_MIN, &c()).unwrap());
        let r = adjust_loading(&g, &dir, omega, n_min * 1.01, &c()).unwrap();
        assert_eq!(r.loading, LOADING_SEARCH_MIN);

        let cap = 0.5 + 1e-4;
        let r = adjust_loading(&g, &dir, omega, cap, &c()).unwrap();
        assert!(!r.cap_unreachable);
        let w = sd_weights(&g, &dir, omega, r.loading, &c()).unwrap();
        assert!(weight_norm_sqr(&w) <= cap);
        assert!(weight_norm_sqr(&w) >= 0.5 - 1e-12);
        assert!(r.loading > 1.0);

        let r = adjust_loading(&g, &dir, omega, 0.4, &c()).unwrap();
        assert!(r.cap_unreachable);
        assert_eq!(r.loading, LOADING_SEARCH_MAX);

        let cap = 10.0;
        let r = adjust_loading(&g, &dir, omega, cap, &c()).unwrap();
        let w = sd_weights(&g, &dir, omega, r.loading, &c()).unwrap();
        assert!(weight_norm_sqr(&w) <= cap);
        // slightly less loading breaks the cap
        let w = sd_weights(&g, &dir, omega, r.loading * 0.999, &c()).unwrap();
        assert!(weight_norm_sqr(&w) > cap);
    }

    #[test]
    fn norm_is_monotone_in_loading() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let pos: Vec<[f64; 3]> = (0..4)
                .map(|_| [rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), 0.0])
                .collect();
            let Ok(g) = ArrayGeometry::new("r", pos) else { continue };
            let dir = Direction::horizontal(rng.gen_range(0.0..TAU));
            let omega = TAU * rng.gen_range(100.0..8000.0);
            let mut prev = f64::INFINITY;
            for i in 0..=40 {
                let s = 1e-6 * 10f64.powf(i as f64 * 0.2);
                let n = weight_norm_sqr(&sd_weights(&g, &dir, omega, s, &c()).unwrap());
                assert!(n <= prev * (1.0 + 1e-9), "norm rose at loading {s}");
                prev = n;
            }
        }
    }

    #[test]
    fn apply_examples() {
        let x = [Complex64::new(0.3, -1.0), Complex64::new(2.0, 0.5)];
        let w = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        assert_eq!(apply_beamformer(&w, &x).unwrap(), x[0]);
        let w = [Complex64::new(0.0, 1.0), Complex64::new(0.0, 0.0)];
        let y = apply_beamformer(&w, &[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]).unwrap();
        assert_eq!(y, Complex64::new(0.0, -1.0));
        assert!(apply_beamformer(&w, &x[..1]).is_err());
    }

    #[test]
    fn real_form_examples() {
        let (a, b, cc, d) = (0.7, -1.3, 2.0, 0.4);
        let block = real_form(&[Complex64::new(a, b)]);
        let y = apply_real_form(&block, &[cc, d]).unwrap();
        assert_abs_diff_eq!(y[0], a * cc + b * d, epsilon = 1e-15);
        assert_abs_diff_eq!(y[1], a * d - b * cc, epsilon = 1e-15);
        let block = real_form(&[Complex64::new(2.0, 0.0)]);
        assert_eq!(block, vec![[2.0, -0.0], [0.0, 2.0]]);
        assert_eq!(apply_real_form(&block, &[1.5, -0.5]).unwrap(), [3.0, -1.0]);
    }

    #[test]
    fn real_form_matches_complex_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..2000 {
            let m = rng.gen_range(1..8);
            let w: Vec<Complex64> = (0..m)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let x: Vec<Complex64> = (0..m)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let y = apply_beamformer(&w, &x).unwrap();
            let xi: Vec<f64> = x.iter().flat_map(|c| [c.re, c.im]).collect();
            let r = apply_real_form(&real_form(&w), &xi).unwrap();
            let scale = y.norm().max(1e-300);
            assert!((Complex64::new(r[0], r[1]) - y).norm() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn bank_counts_and_determinism() {
        let g = ArrayGeometry::pair("p73", 0.073).unwrap();
        let cfg = StftConfig::dft_feature();
        let dirs = look_directions(12);
        let b1 = design_bank(&[g.clone()], &dirs, &cfg, LoadingPolicy::default(), &c()).unwrap();
        let b2 = design_bank(&[g], &dirs, &cfg, LoadingPolicy::default(), &c()).unwrap();
        assert_eq!(b1.num_weight_vectors(), 1524);
        assert_eq!(b1.to_bytes(), b2.to_bytes());
        assert!(design_bank(&[], &dirs, &cfg, LoadingPolicy::default(), &c()).is_err());
    }

    #[test]
    fn wng_capped_bank_respects_cap() {
        let g = ArrayGeometry::pair("p36", 0.036).unwrap();
        let cfg = StftConfig::dft_feature();
        let (_, report) = design_bank_with_report(
            &[g],
            &look_directions(4),
            &cfg,
            LoadingPolicy::WngCapDb(DEFAULT_WNG_CAP_DB),
            &c(),
        )
        .unwrap();
        for r in report {
            assert!(r.cap_unreachable || r.weight_norm_sqr <= 10.0 + 1e-9);
        }
    }

    #[test]
    fn bank_file_round_trip_and_corruption() {
        let cfg = StftConfig::dft_feature();
        let geoms = [
            ArrayGeometry::pair("a", 0.073).unwrap(),
            ArrayGeometry::seven_mic_circular(),
        ];
        let bank = design_bank(&geoms, &look_directions(3), &cfg, LoadingPolicy::default(), &c()).unwrap();
        let bytes = bank.to_bytes();
        assert_eq!(&bytes[..4], b"MGBF");
        assert_eq!(bytes.len(), 4 + 16 + 8 + 16 * 3 * 127 * 9);
        let back = BeamformerBank::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.geometry_ids(), &["g0".to_string(), "g1".to_string()]);
        assert!(BeamformerBank::read_from(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[1] = 0;
        assert!(BeamformerBank::read_from(bad.as_slice()).is_err());
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(matches!(
            BeamformerBank::read_from(v.as_slice()),
            Err(Error::Version { found: 9, .. })
        ));
    }

    #[test]
    fn selector_examples() {
        let mut s = BeamSelector::new(10).unwrap();
        let e: Vec<f64> = (0..12).map(|d| if d == 3 { 5.0 } else { 1.0 }).collect();
        for _ in 0..20 {
            assert_eq!(s.select(&e).unwrap(), 3);
        }

        let mut s = BeamSelector::new(10).unwrap();
        let base: Vec<f64> = (0..12).map(|d| if d == 2 { 4.0 } else { 1.0 }).collect();
        for t in 0..30 {
            let mut e = base.clone();
            if t == 15 {
                e[5] = 20.0;
            }
            assert_eq!(s.select(&e).unwrap(), 2, "frame {t}");
        }
        let mut s = BeamSelector::new(1).unwrap();
        assert_eq!(s.select(&[0.0; 4]).unwrap(), 0);
        assert!(s.select(&[0.0; 3]).is_err());
        assert!(BeamSelector::new(0).is_err());
    }

    #[test]
    fn selector_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let perm = [4usize, 2, 0, 5, 1, 3];
        let mut a = BeamSelector::new(4).unwrap();
        let mut b = BeamSelector::new(4).unwrap();
        for _ in 0..200 {
            let e: Vec<f64> = (0..6).map(|_| rng.gen::<f64>()).collect();
            let mut p = vec![0.0; 6];
            for (i, &j) in perm.iter().enumerate() {
                p[j] = e[i];
            }
            let ia = a.select(&e).unwrap();
            let ib = b.select(&p).unwrap();
            assert_eq!(perm[ia], ib);
        }
    }

    #[test]
    fn enhance_pass_through_and_silence() {
        let bank = BeamformerBank::pass_through(127);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let frames: Vec<Vec<FrameSpectrum>> = (0..5)
            .map(|_| {
                vec![FrameSpectrum {
                    bins: (0..127)
                        .map(|_| Complex64::new(rng.gen(), rng.gen()))
                        .collect(),
                }]
            })
            .collect();
        let (out, trace) = enhance_utterance(&bank, 0, &frames, &SelectorConfig::default()).unwrap();
        for (o, f) in out.iter().zip(&frames) {
            assert_eq!(o, &f[0]);
        }
        assert!(trace.iter().all(|&d| d == 0));

        let cfg = StftConfig::dft_feature();
        let bank = design_bank(
            &[ArrayGeometry::pair("p", 0.073).unwrap()],
            &look_directions(12),
            &cfg,
            LoadingPolicy::default(),
            &c(),
        )
        .unwrap();
        let zero = vec![vec![FrameSpectrum::zeros(127); 2]; 4];
        let (out, trace) = enhance_utterance(&bank, 0, &zero, &SelectorConfig::default()).unwrap();
        assert!(out.iter().all(|f| f.bins.iter().all(|c| c.norm() == 0.0)));
        assert!(trace.iter().all(|&d| d == 0));
        let mono = vec![vec![FrameSpectrum::zeros(127)]; 2];
        assert!(enhance_utterance(&bank, 0, &mono, &SelectorConfig::default()).is_err());
    }

    #[test]
    fn coherence_is_psd() {
        use nalgebra::DMatrix;
        let g = ArrayGeometry::seven_mic_circular();
        for f in [0.0, 62.5, 500.0, 1000.0, 3000.0, 7937.5] {
            let cm = diffuse_coherence(&g, TAU * f, &c());
            assert!(cm.data.iter().all(|&v| (-0.2173..=1.0).contains(&v)));
            let m = DMatrix::from_row_slice(7, 7, &cm.data);
            let eig = m.symmetric_eigenvalues();
            assert!(eig.iter().all(|&e| e >= -1e-10), "f={f} eig={eig}");
        }
        let _ = PI;
    }
}
