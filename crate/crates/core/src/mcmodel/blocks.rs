use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::beamform::{real_form, BeamformerBank};
use crate::dsp::{MelFilterbank, LOG_FLOOR};
use crate::error::{check_len, Error, Result};
use crate::geometry::Direction;
use crate::nnet::{
    log_bwd, log_fwd, maxpool_bwd, maxpool_fwd, relu_bwd, relu_fwd, Affine, Conv1xD, Lstm,
    LstmCache, LstmState, Matrix, MaxPool, Param,
};

/// Block-affine input layer: one real `2 x 2M_g` transform plus a `(re, im)`
/// bias per (geometry, direction, bin), followed by the power.
///
/// The output grid has rows `(t, k)` and columns `g * D + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialFilterLayer {
    pub(crate) geometry_ids: Vec<String>,
    pub(crate) channels: Vec<usize>,
    pub(crate) directions: Vec<Direction>,
    pub(crate) num_bins: usize,
    /// Per geometry, `(K * D * 2) x 2M_g`, rows ordered `(k, d, re|im)`.
    pub weights: Vec<Param>,
    /// Per geometry, `1 x (K * D * 2)`.
    pub bias: Vec<Param>,
}

#[derive(Debug, Clone)]
pub struct SfCache {
    active: Vec<bool>,
    /// Pre-power outputs per geometry, `T * K * D * 2` (empty if inactive).
    pre: Vec<Vec<f64>>,
    frames: usize,
}

impl SfCache {
    pub fn active(&self) -> &[bool] {
        &self.active
    }
}

impl SpatialFilterLayer {
    /// Blocks are the real forms of the bank weights; biases are zero.
    pub fn from_bank(bank: &BeamformerBank) -> Self {
        let (k_len, d_len) = (bank.num_bins(), bank.num_directions());
        let mut weights = Vec::new();
        let mut bias = Vec::new();
        for g in 0..bank.num_geometries() {
            let m2 = 2 * bank.channels(g);
            let mut w = Param::zeros(k_len * d_len * 2, m2);
            for k in 0..k_len {
                for d in 0..d_len {
                    let block = real_form(bank.weight(g, d, k));
                    let row = (k * d_len + d) * 2;
                    for (j, pair) in block.iter().enumerate() {
                        w.value[row * m2 + j] = pair[0];
                        w.value[(row + 1) * m2 + j] = pair[1];
                    }
                }
            }
            weights.push(w);
            bias.push(Param::zeros(1, k_len * d_len * 2));
        }
        Self {
            geometry_ids: bank.geometry_ids().to_vec(),
            channels: (0..bank.num_geometries()).map(|g| bank.channels(g)).collect(),
            directions: bank.directions().to_vec(),
            num_bins: k_len,
            weights,
            bias,
        }
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

    pub fn geometry_ids(&self) -> &[String] {
        &self.geometry_ids
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    pub fn num_blocks(&self) -> usize {
        self.num_geometries() * self.num_directions() * self.num_bins
    }

    /// With an id, only that geometry is active. Without one, every geometry
    /// whose channel count matches the input is active.
    pub fn active_geometries(&self, channels: usize, id: Option<&str>) -> Result<Vec<bool>> {
        let active: Vec<bool> = match id {
            Some(id) => {
                let g = self
                    .geometry_ids
                    .iter()
                    .position(|x| x == id)
                    .ok_or_else(|| Error::Geometry(format!("geometry '{id}' not in layer")))?;
                check_len("frame channels for geometry", self.channels[g], channels)?;
                (0..self.num_geometries()).map(|i| i == g).collect()
            }
            None => self.channels.iter().map(|&m| m == channels).collect(),
        };
        if !active.iter().any(|&a| a) {
            return Err(Error::Geometry(format!(
                "no geometry in the layer has {channels} channels"
            )));
        }
        Ok(active)
    }

    fn frame_channels(&self, x: &Matrix) -> Result<usize> {
        let per = 2 * self.num_bins;
        if x.cols == 0 || x.cols % per != 0 {
            return Err(Error::Dimension {
                context: "MC frame width not a multiple of 2K",
                expected: per,
                actual: x.cols,
            });
        }
        Ok(x.cols / per)
    }

    /// `x` holds normalized MC frames, `T x (M * 2K)`.
    pub fn forward(&self, x: &Matrix, id: Option<&str>) -> Result<(Matrix, SfCache)> {
        let m = self.frame_channels(x)?;
        let active = self.active_geometries(m, id)?;
        let (k_len, d_len, g_len) = (self.num_bins, self.num_directions(), self.num_geometries());
        let mut grid = Matrix::zeros(x.rows * k_len, g_len * d_len);
        let mut pre = vec![Vec::new(); g_len];
        let m2 = 2 * m;
        let mut xk = vec![0.0; m2];
        for g in (0..g_len).filter(|&g| active[g]) {
            let w = &self.weights[g].value;
            let b = &self.bias[g].value;
            let mut y = vec![0.0; x.rows * k_len * d_len * 2];
            for t in 0..x.rows {
                let row = x.row(t);
                for k in 0..k_len {
                    gather_bin(row, k, k_len, &mut xk);
                    let out = grid.row_mut(t * k_len + k);
                    for d in 0..d_len {
                        let r = (k * d_len + d) * 2;
                        let re = b[r] + dot(&w[r * m2..(r + 1) * m2], &xk);
                        let im = b[r + 1] + dot(&w[(r + 1) * m2..(r + 2) * m2], &xk);
                        let yi = ((t * k_len + k) * d_len + d) * 2;
                        y[yi] = re;
                        y[yi + 1] = im;
                        out[g * d_len + d] = re * re + im * im;
                    }
                }
            }
            pre[g] = y;
        }
        Ok((
            grid,
            SfCache {
                active,
                pre,
                frames: x.rows,
            },
        ))
    }

    /// Accumulates weight and bias gradients of the active geometries.
    pub fn backward(&mut self, x: &Matrix, cache: &SfCache, ggrid: &Matrix) -> Result<()> {
        let (k_len, d_len) = (self.num_bins, self.num_directions());
        check_len("sf grad rows", cache.frames * k_len, ggrid.rows)?;
        check_len("sf grad cols", self.num_geometries() * d_len, ggrid.cols)?;
        let m2 = x.cols / k_len;
        let mut xk = vec![0.0; m2];
        for g in (0..self.num_geometries()).filter(|&g| cache.active[g]) {
            let y = &cache.pre[g];
            let Param { grad: gw, .. } = &mut self.weights[g];
            let gb = &mut self.bias[g].grad;
            for t in 0..cache.frames {
                let row = x.row(t);
                for k in 0..k_len {
                    gather_bin(row, k, k_len, &mut xk);
                    let gp = ggrid.row(t * k_len + k);
                    for d in 0..d_len {
                        let r = (k * d_len + d) * 2;
                        let yi = ((t * k_len + k) * d_len + d) * 2;
                        let s = 2.0 * gp[g * d_len + d];
                        for o in 0..2 {
                            let gy = s * y[yi + o];
                            if gy == 0.0 {
                                continue;
                            }
                            gb[r + o] += gy;
                            for (acc, &xv) in gw[(r + o) * m2..(r + o + 1) * m2].iter_mut().zip(&xk) {
                                *acc += gy * xv;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Bin `k` of every channel as `[re_0, im_0, re_1, im_1, ...]`.
fn gather_bin(row: &[f64], k: usize, k_len: usize, out: &mut [f64]) {
    for (m, pair) in out.chunks_mut(2).enumerate() {
        let base = m * 2 * k_len + 2 * k;
        pair[0] = row[base];
        pair[1] = row[base + 1];
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Fully connected combination of the whole per-frame grid into K values.
#[derive(Debug, Clone, PartialEq)]
pub struct EsfHead {
    /// `K x (K * G * D)`; input index `(k, g, d)`.
    pub combine: Affine,
}

#[derive(Debug, Clone)]
pub struct EsfCache {
    input: Matrix,
    pre: Matrix,
}

impl EsfHead {
    /// Output `k` starts as the mean of the `G * D` beam powers at bin `k`.
    pub fn block_average(num_bins: usize, num_geometries: usize, num_directions: usize) -> Self {
        let width = num_geometries * num_directions;
        let cols = num_bins * width;
        let mut w = Param::zeros(num_bins, cols);
        for k in 0..num_bins {
            for c in 0..width {
                w.value[k * cols + k * width + c] = 1.0 / width as f64;
            }
        }
        Self {
            combine: Affine {
                w,
                b: Param::zeros(1, num_bins),
            },
        }
    }

    pub fn forward(&self, grid: &Matrix, frames: usize) -> Result<(Matrix, EsfCache)> {
        let input = grid.clone().reshape(frames, grid.data.len() / frames.max(1))?;
        let pre = self.combine.forward(&input)?;
        Ok((relu_fwd(&pre), EsfCache { input, pre }))
    }

    pub fn backward(&mut self, cache: &EsfCache, gy: &Matrix, grid_cols: usize) -> Result<Matrix> {
        let gpre = relu_bwd(&cache.pre, gy);
        let gin = self.combine.backward(&cache.input, &gpre)?;
        let rows = gin.data.len() / grid_cols;
        gin.reshape(rows, grid_cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolScope {
    /// Max over every filter of every active geometry.
    Row,
    /// Max over filters within each geometry, then the mean over active geometries.
    PerGeometry,
}

impl PoolScope {
    pub fn tag(self) -> u8 {
        match self {
            PoolScope::Row => 0,
            PoolScope::PerGeometry => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(PoolScope::Row),
            1 => Ok(PoolScope::PerGeometry),
            _ => Err(Error::Format(format!("unknown pool scope tag {tag}"))),
        }
    }
}

impl std::str::FromStr for PoolScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row" => Ok(PoolScope::Row),
            "per_geometry" | "per-geometry" => Ok(PoolScope::PerGeometry),
            _ => Err(Error::Config(format!("unknown pool scope '{s}'"))),
        }
    }
}

/// `1 x D` filters shared over frequency and geometry, then a max-pool.
#[derive(Debug, Clone, PartialEq)]
pub struct WtsfHead {
    pub conv: Conv1xD,
    pub scope: PoolScope,
}

#[derive(Debug, Clone)]
pub struct WtsfCache {
    conv_out: Matrix,
    pools: Vec<MaxPool>,
    /// Active geometry indices, in pooling order.
    geoms: Vec<usize>,
}

impl WtsfHead {
    /// Filter `f` selects direction `f mod D`, plus Gaussian noise.
    pub fn one_hot(
        num_filters: usize,
        num_directions: usize,
        noise_std: f64,
        scope: PoolScope,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if num_filters == 0 || num_directions == 0 {
            return Err(Error::Config("WTSF needs F, D >= 1".into()));
        }
        let mut w = Param::zeros(num_filters, num_directions);
        let noise = Normal::new(0.0, noise_std.max(0.0))
            .map_err(|e| Error::Config(format!("filter noise: {e}")))?;
        for f in 0..num_filters {
            for d in 0..num_directions {
                let base = if d == f % num_directions { 1.0 } else { 0.0 };
                let n = if noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
                w.value[f * num_directions + d] = base + n;
            }
        }
        Ok(Self {
            conv: Conv1xD::new(w, Param::zeros(1, num_filters))?,
            scope,
        })
    }

    pub fn num_filters(&self) -> usize {
        self.conv.num_filters()
    }

    pub fn forward(&self, grid: &Matrix, active: &[bool], frames: usize) -> Result<(Matrix, WtsfCache)> {
        let f = self.num_filters();
        let conv_out = self.conv.forward(grid)?;
        check_len("wtsf active mask", conv_out.cols / f, active.len())?;
        let geoms: Vec<usize> = (0..active.len()).filter(|&g| active[g]).collect();
        let rows = conv_out.rows;
        let (pooled, pools) = match self.scope {
            PoolScope::Row => {
                let mask: Vec<bool> = (0..conv_out.cols).map(|c| active[c / f]).collect();
                let (p, pool) = maxpool_fwd(&conv_out, Some(&mask))?;
                (p, vec![pool])
            }
            PoolScope::PerGeometry => {
                let mut acc = Matrix::zeros(rows, 1);
                let mut pools = Vec::with_capacity(geoms.len());
                let scale = 1.0 / geoms.len() as f64;
                for &g in &geoms {
                    let sub = column_block(&conv_out, g * f, f);
                    let (p, pool) = maxpool_fwd(&sub, None)?;
                    for (a, v) in acc.data.iter_mut().zip(&p.data) {
                        *a += scale * v;
                    }
                    pools.push(pool);
                }
                (acc, pools)
            }
        };
        let k_len = rows / frames.max(1);
        Ok((
            pooled.reshape(frames, k_len)?,
            WtsfCache {
                conv_out,
                pools,
                geoms,
            },
        ))
    }

    pub fn backward(&mut self, grid: &Matrix, cache: &WtsfCache, gy: &Matrix) -> Result<Matrix> {
        let f = self.num_filters();
        let rows = cache.conv_out.rows;
        let gcol = Matrix::from_vec(rows, 1, gy.data.clone())?;
        let gconv = match self.scope {
            PoolScope::Row => maxpool_bwd(&cache.pools[0], &gcol)?,
            PoolScope::PerGeometry => {
                let scale = 1.0 / cache.geoms.len() as f64;
                let gscaled = Matrix::from_vec(rows, 1, gcol.data.iter().map(|v| v * scale).collect())?;
                let mut out = Matrix::zeros(rows, cache.conv_out.cols);
                for (pool, &g) in cache.pools.iter().zip(&cache.geoms) {
                    let sub = maxpool_bwd(pool, &gscaled)?;
                    for r in 0..rows {
                        out.row_mut(r)[g * f..(g + 1) * f].copy_from_slice(sub.row(r));
                    }
                }
                out
            }
        };
        self.conv.backward(grid, &gconv)
    }
}

fn column_block(m: &Matrix, start: usize, width: usize) -> Matrix {
    let mut out = Matrix::zeros(m.rows, width);
    for r in 0..m.rows {
        out.row_mut(r).copy_from_slice(&m.row(r)[start..start + width]);
    }
    out
}

/// Mel-initialized affine, ReLU and floored log, followed by a fixed
/// per-dimension standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct FeNetwork {
    pub mel: Affine,
    pub out_mean: Vec<f64>,
    pub out_scale: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FeCache {
    input: Matrix,
    pre: Matrix,
    rect: Matrix,
}

impl FeNetwork {
    pub fn from_mel(fbank: &MelFilterbank) -> Self {
        let (n, k) = (fbank.num_filters(), fbank.num_bins());
        let w = Param::new(n, k, fbank.weights.iter().flatten().copied().collect());
        Self {
            mel: Affine {
                w,
                b: Param::zeros(1, n),
            },
            out_mean: vec![0.0; n],
            out_scale: vec![1.0; n],
        }
    }

    pub fn output_dim(&self) -> usize {
        self.mel.output_dim()
    }

    /// Log-mel values before the output standardization.
    pub fn raw(&self, power: &Matrix) -> Result<Matrix> {
        Ok(log_fwd(&relu_fwd(&self.mel.forward(power)?), LOG_FLOOR))
    }

    /// Sets the output standardization from the mean and deviation of `raw` outputs.
    pub fn calibrate(&mut self, raw: &[Matrix]) -> Result<()> {
        let n = self.output_dim();
        let mut acc = crate::dsp::StatsAccumulator::new(n);
        for m in raw {
            for r in 0..m.rows {
                acc.push(m.row(r))?;
            }
        }
        let stats = acc.finish()?;
        self.out_mean = stats.mean;
        self.out_scale = stats.var.iter().map(|v| 1.0 / v.sqrt()).collect();
        Ok(())
    }

    pub fn forward(&self, power: &Matrix) -> Result<(Matrix, FeCache)> {
        let pre = self.mel.forward(power)?;
        let rect = relu_fwd(&pre);
        let mut out = log_fwd(&rect, LOG_FLOOR);
        for r in 0..out.rows {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.out_mean).zip(&self.out_scale) {
                *v = (*v - m) * s;
            }
        }
        Ok((
            out,
            FeCache {
                input: power.clone(),
                pre,
                rect,
            },
        ))
    }

    pub fn backward(&mut self, cache: &FeCache, gy: &Matrix) -> Result<Matrix> {
        let mut g = gy.clone();
        for r in 0..g.rows {
            for (v, s) in g.row_mut(r).iter_mut().zip(&self.out_scale) {
                *v *= s;
            }
        }
        let g = log_bwd(&cache.rect, &g, LOG_FLOOR);
        let g = relu_bwd(&cache.pre, &g);
        self.mel.backward(&cache.input, &g)
    }
}

/// Stacked LSTMs and an output affine producing class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierStack {
    pub layers: Vec<Lstm>,
    pub output: Affine,
}

#[derive(Debug, Clone)]
pub struct ClassifierCache {
    lstm: Vec<LstmCache>,
    top: Matrix,
}

impl ClassifierStack {
    pub fn init(
        input: usize,
        hidden: usize,
        num_layers: usize,
        classes: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if num_layers == 0 || hidden == 0 || input == 0 {
            return Err(Error::Config("classifier needs L, H and input dims >= 1".into()));
        }
        if classes < 2 {
            return Err(Error::Config(format!("classifier needs >= 2 classes, got {classes}")));
        }
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            layers.push(Lstm::init(if l == 0 { input } else { hidden }, hidden, rng));
        }
        Ok(Self {
            layers,
            output: Affine::glorot(hidden, classes, rng),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden()
    }

    pub fn num_classes(&self) -> usize {
        self.output.output_dim()
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ClassifierCache)> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, _, cache) = layer.forward(&h, &LstmState::zeros(layer.hidden()))?;
            caches.push(cache);
            h = out;
        }
        let logits = self.output.forward(&h)?;
        Ok((
            logits,
            ClassifierCache {
                lstm: caches,
                top: h,
            },
        ))
    }

    pub fn backward(&mut self, cache: &ClassifierCache, glogits: &Matrix) -> Result<Matrix> {
        let mut g = self.output.backward(&cache.top, glogits)?;
        for (layer, c) in self.layers.iter_mut().zip(&cache.lstm).rev() {
            g = layer.backward(c, &g)?;
        }
        Ok(g)
    }

    /// Frame-by-frame evaluation carrying the LSTM states.
    pub fn stream(&self) -> ClassifierStream<'_> {
        ClassifierStream {
            stack: self,
            states: self.layers.iter().map(|l| LstmState::zeros(l.hidden())).collect(),
        }
    }
}

pub struct ClassifierStream<'a> {
    stack: &'a ClassifierStack,
    states: Vec<LstmState>,
}

impl ClassifierStream<'_> {
    /// Logits for one frame.
    pub fn push(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = Matrix::from_vec(1, x.len(), x.to_vec())?;
        for (layer, state) in self.stack.layers.iter().zip(self.states.iter_mut()) {
            let (out, next, _) = layer.forward(&h, state)?;
            *state = next;
            h = out;
        }
        Ok(self.stack.output.forward(&h)?.data)
    }
}
