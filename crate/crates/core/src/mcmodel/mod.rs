//! The trainable architectures: an LFBE baseline, a single-channel DFT model
//! with a learnable feature extractor, and the two multi-channel spatial
//! filtering networks (elastic and weight-tied) built on top of it.

mod blocks;
mod checkpoint;

pub use blocks::{
    ClassifierCache, ClassifierStack, ClassifierStream, EsfCache, EsfHead, FeCache, FeNetwork,
    PoolScope, SfCache, SpatialFilterLayer, WtsfCache, WtsfHead,
};
pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::Rng;

use crate::beamform::BeamformerBank;
use crate::dsp::{
    dft_features, lfbe_features, GlobalStats, MelFilterbank, StftConfig, DEFAULT_MEAN_DECAY,
};
use crate::error::{check_len, Error, Result};
use crate::nnet::{pow_pairs_fwd, softmax_rows, Matrix, Param};

/// Feature dimension of both the LFBE front-end and the FE network.
pub const FEATURE_DIM: usize = 64;
pub const MEL_MIN_HZ: f64 = 0.0;
pub const MEL_MAX_HZ: f64 = 8000.0;
pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_LAYERS: usize = 2;
pub const DEFAULT_CLASSES: usize = 4;
pub const DEFAULT_FILTERS: usize = 12;
pub const DEFAULT_FILTER_NOISE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    LfbeBaseline,
    SingleDft,
    Esf,
    Wtsf,
}

impl Architecture {
    pub fn tag(self) -> u8 {
        match self {
            Architecture::LfbeBaseline => 0,
            Architecture::SingleDft => 1,
            Architecture::Esf => 2,
            Architecture::Wtsf => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Architecture::LfbeBaseline),
            1 => Ok(Architecture::SingleDft),
            2 => Ok(Architecture::Esf),
            3 => Ok(Architecture::Wtsf),
            _ => Err(Error::Format(format!("unknown architecture tag {tag}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::LfbeBaseline => "lfbe-baseline",
            Architecture::SingleDft => "single-dft",
            Architecture::Esf => "esf",
            Architecture::Wtsf => "wtsf",
        }
    }

    pub fn is_multichannel(self) -> bool {
        matches!(self, Architecture::Esf | Architecture::Wtsf)
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lfbe-baseline" | "lfbe" => Ok(Architecture::LfbeBaseline),
            "single-dft" => Ok(Architecture::SingleDft),
            "esf" => Ok(Architecture::Esf),
            "wtsf" => Ok(Architecture::Wtsf),
            _ => Err(Error::Config(format!("unknown architecture '{s}'"))),
        }
    }
}

/// Which parameters an optimizer step may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    SpatialFilter,
    Head,
    FeatureExtractor,
    Classifier,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub layers: usize,
    pub classes: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            layers: DEFAULT_LAYERS,
            classes: DEFAULT_CLASSES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WtsfConfig {
    pub filters: usize,
    pub noise_std: f64,
    pub scope: PoolScope,
}

impl Default for WtsfConfig {
    fn default() -> Self {
        Self {
            filters: DEFAULT_FILTERS,
            noise_std: DEFAULT_FILTER_NOISE,
            scope: PoolScope::Row,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Esf(EsfHead),
    Wtsf(WtsfHead),
}

/// A complete model from input features to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: Architecture,
    /// Feature analysis configuration of the model input.
    pub stft: StftConfig,
    /// Causal mean decay of the LFBE path.
    pub mean_decay: f64,
    /// DFT normalization statistics (all but the LFBE baseline).
    pub stats: Option<GlobalStats>,
    pub sf: Option<SpatialFilterLayer>,
    pub head: Option<Head>,
    pub fe: Option<FeNetwork>,
    pub classifier: ClassifierStack,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    input: Matrix,
    sf: Option<(Matrix, SfCache)>,
    esf: Option<EsfCache>,
    wtsf: Option<WtsfCache>,
    fe: Option<FeCache>,
    classifier: ClassifierCache,
}

impl Model {
    pub fn lfbe_baseline(cfg: ClassifierConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            arch: Architecture::LfbeBaseline,
            stft: StftConfig::lfbe(),
            mean_decay: DEFAULT_MEAN_DECAY,
            stats: None,
            sf: None,
            head: None,
            fe: None,
            classifier: ClassifierStack::init(FEATURE_DIM, cfg.hidden, cfg.layers, cfg.classes, rng)?,
        })
    }

    /// FE network from mel filters; classifier copied from a baseline model.
    pub fn single_dft_from(baseline: &Model, stats: GlobalStats) -> Result<Self> {
        if baseline.arch != Architecture::LfbeBaseline {
            return Err(Error::Architecture(format!(
                "single-dft initialization needs an lfbe-baseline model, got {}",
                baseline.arch
            )));
        }
        let stft = StftConfig::dft_feature();
        check_len("DFT stats dims", 2 * stft.num_bins(), stats.dims())?;
        let fbank = MelFilterbank::new(FEATURE_DIM, &stft, MEL_MIN_HZ, MEL_MAX_HZ)?;
        Ok(Self {
            arch: Architecture::SingleDft,
            stft,
            mean_decay: baseline.mean_decay,
            stats: Some(stats),
            sf: None,
            head: None,
            fe: Some(FeNetwork::from_mel(&fbank)),
            classifier: baseline.classifier.clone(),
        })
    }

    /// SF layer from the bank, a head, and the FE network and classifier of a
    /// single-dft model.
    pub fn multichannel_from(
        single: &Model,
        bank: &BeamformerBank,
        arch: Architecture,
        wtsf: WtsfConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if single.arch != Architecture::SingleDft {
            return Err(Error::Architecture(format!(
                "multi-channel initialization needs a single-dft model, got {}",
                single.arch
            )));
        }
        let k = single.stft.num_bins();
        check_len("bank bins", k, bank.num_bins())?;
        let sf = SpatialFilterLayer::from_bank(bank);
        let head = match arch {
            Architecture::Esf => Head::Esf(EsfHead::block_average(
                k,
                sf.num_geometries(),
                sf.num_directions(),
            )),
            Architecture::Wtsf => Head::Wtsf(WtsfHead::one_hot(
                wtsf.filters,
                sf.num_directions(),
                wtsf.noise_std,
                wtsf.scope,
                rng,
            )?),
            other => {
                return Err(Error::Architecture(format!(
                    "{other} is not a multi-channel architecture"
                )))
            }
        };
        Ok(Self {
            arch,
            stft: single.stft,
            mean_decay: single.mean_decay,
            stats: single.stats.clone(),
            sf: Some(sf),
            head: Some(head),
            fe: single.fe.clone(),
            classifier: single.classifier.clone(),
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    /// Input channel counts the model accepts.
    pub fn accepted_channels(&self) -> Vec<usize> {
        match &self.sf {
            Some(sf) => {
                let mut c = sf.channels().to_vec();
                c.sort_unstable();
                c.dedup();
                c
            }
            None => vec![1],
        }
    }

    /// Model input features from raw audio channels. Single-channel
    /// architectures use channel 0.
    pub fn features(&self, channels: &[Vec<f64>]) -> Result<Matrix> {
        let first = channels.first().ok_or(Error::Empty("no audio channels"))?;
        let rows = match self.arch {
            Architecture::LfbeBaseline => {
                let fbank = MelFilterbank::new(FEATURE_DIM, &self.stft, MEL_MIN_HZ, MEL_MAX_HZ)?;
                lfbe_features(first, &self.stft, &fbank, self.mean_decay)?
            }
            Architecture::SingleDft => {
                dft_features(std::slice::from_ref(first), &self.stft, self.dft_stats()?)?
            }
            Architecture::Esf | Architecture::Wtsf => {
                if !self.accepted_channels().contains(&channels.len()) {
                    return Err(Error::Geometry(format!(
                        "{} input channels, model accepts {:?}",
                        channels.len(),
                        self.accepted_channels()
                    )));
                }
                dft_features(channels, &self.stft, self.dft_stats()?)?
            }
        };
        if rows.is_empty() {
            return Err(Error::Empty("utterance shorter than one frame"));
        }
        Matrix::from_rows(&rows)
    }

    fn dft_stats(&self) -> Result<&GlobalStats> {
        self.stats
            .as_ref()
            .ok_or_else(|| Error::Architecture(format!("{} model without DFT stats", self.arch)))
    }

    /// Beam power grid and its cache, `(T * K) x (G * D)`.
    pub fn sf_grid(&self, x: &Matrix) -> Result<(Matrix, SfCache)> {
        self.sf
            .as_ref()
            .ok_or_else(|| Error::Architecture(format!("{} has no SF layer", self.arch)))?
            .forward(x, None)
    }

    /// Per-bin power entering the FE network, `T x K`.
    pub fn fe_input(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_parts(x)?.0)
    }

    fn forward_parts(
        &self,
        x: &Matrix,
    ) -> Result<(Matrix, Option<(Matrix, SfCache)>, Option<EsfCache>, Option<WtsfCache>)> {
        match self.arch {
            Architecture::LfbeBaseline => {
                check_len("LFBE feature dim", FEATURE_DIM, x.cols)?;
                Ok((x.clone(), None, None, None))
            }
            Architecture::SingleDft => {
                check_len("single-channel DFT width", 2 * self.stft.num_bins(), x.cols)?;
                Ok((pow_pairs_fwd(x)?, None, None, None))
            }
            Architecture::Esf | Architecture::Wtsf => {
                let (grid, cache) = self.sf_grid(x)?;
                match self.head.as_ref() {
                    Some(Head::Esf(h)) => {
                        let (p, c) = h.forward(&grid, x.rows)?;
                        Ok((p, Some((grid, cache)), Some(c), None))
                    }
                    Some(Head::Wtsf(h)) => {
                        let (p, c) = h.forward(&grid, cache.active(), x.rows)?;
                        Ok((p, Some((grid, cache)), None, Some(c)))
                    }
                    None => Err(Error::Architecture(format!("{} model without head", self.arch))),
                }
            }
        }
    }

    /// Classifier input features, `T x 64`.
    pub fn front_end(&self, x: &Matrix) -> Result<Matrix> {
        let (p, ..) = self.forward_parts(x)?;
        match &self.fe {
            Some(fe) => Ok(fe.forward(&p)?.0),
            None => Ok(p),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, Tape)> {
        if x.rows == 0 {
            return Err(Error::Empty("zero input frames"));
        }
        let (p, sf, esf, wtsf) = self.forward_parts(x)?;
        let (feat, fe) = match &self.fe {
            Some(net) => {
                let (f, c) = net.forward(&p)?;
                (f, Some(c))
            }
            None => (p, None),
        };
        let (logits, classifier) = self.classifier.forward(&feat)?;
        Ok((
            logits,
            Tape {
                input: x.clone(),
                sf,
                esf,
                wtsf,
                fe,
                classifier,
            },
        ))
    }

    /// Accumulates gradients of every parameter from the logit gradient.
    pub fn backward(&mut self, tape: &Tape, glogits: &Matrix) -> Result<()> {
        let g = self.classifier.backward(&tape.classifier, glogits)?;
        let g = match (&mut self.fe, &tape.fe) {
            (Some(net), Some(c)) => net.backward(c, &g)?,
            _ => return Ok(()),
        };
        match self.arch {
            Architecture::SingleDft | Architecture::LfbeBaseline => Ok(()),
            Architecture::Esf | Architecture::Wtsf => {
                let (grid, sf_cache) = tape
                    .sf
                    .as_ref()
                    .ok_or_else(|| Error::Architecture("tape without SF cache".into()))?;
                let ggrid = match (&mut self.head, &tape.esf, &tape.wtsf) {
                    (Some(Head::Esf(h)), Some(c), _) => h.backward(c, &g, grid.cols)?,
                    (Some(Head::Wtsf(h)), _, Some(c)) => h.backward(grid, c, &g)?,
                    _ => return Err(Error::Architecture("tape does not match head".into())),
                };
                self.sf
                    .as_mut()
                    .ok_or_else(|| Error::Architecture("no SF layer".into()))?
                    .backward(&tape.input, sf_cache, &ggrid)
            }
        }
    }

    /// Per-frame class posteriors.
    pub fn posteriors(&self, x: &Matrix) -> Result<Matrix> {
        Ok(softmax_rows(&self.forward(x)?.0))
    }

    /// Every parameter in checkpoint order.
    pub fn params(&self) -> Vec<(ParamGroup, &Param)> {
        let mut out = Vec::new();
        if let Some(sf) = &self.sf {
            for (w, b) in sf.weights.iter().zip(&sf.bias) {
                out.push((ParamGroup::SpatialFilter, w));
                out.push((ParamGroup::SpatialFilter, b));
            }
        }
        match &self.head {
            Some(Head::Esf(h)) => {
                out.push((ParamGroup::Head, &h.combine.w));
                out.push((ParamGroup::Head, &h.combine.b));
            }
            Some(Head::Wtsf(h)) => {
                out.push((ParamGroup::Head, &h.conv.kernel.w));
                out.push((ParamGroup::Head, &h.conv.kernel.b));
            }
            None => {}
        }
        if let Some(fe) = &self.fe {
            out.push((ParamGroup::FeatureExtractor, &fe.mel.w));
            out.push((ParamGroup::FeatureExtractor, &fe.mel.b));
        }
        for l in &self.classifier.layers {
            out.push((ParamGroup::Classifier, &l.input.w));
            out.push((ParamGroup::Classifier, &l.input.b));
            out.push((ParamGroup::Classifier, &l.recurrent));
        }
        out.push((ParamGroup::Classifier, &self.classifier.output.w));
        out.push((ParamGroup::Classifier, &self.classifier.output.b));
        out
    }

    /// Mutable counterpart of [`Model::params`], same order.
    pub fn params_mut(&mut self) -> Vec<(ParamGroup, &mut Param)> {
        let mut out = Vec::new();
        if let Some(sf) = &mut self.sf {
            for (w, b) in sf.weights.iter_mut().zip(sf.bias.iter_mut()) {
                out.push((ParamGroup::SpatialFilter, w));
                out.push((ParamGroup::SpatialFilter, b));
            }
        }
        match &mut self.head {
            Some(Head::Esf(h)) => {
                out.push((ParamGroup::Head, &mut h.combine.w));
                out.push((ParamGroup::Head, &mut h.combine.b));
            }
            Some(Head::Wtsf(h)) => {
                out.push((ParamGroup::Head, &mut h.conv.kernel.w));
                out.push((ParamGroup::Head, &mut h.conv.kernel.b));
            }
            None => {}
        }
        if let Some(fe) = &mut self.fe {
            out.push((ParamGroup::FeatureExtractor, &mut fe.mel.w));
            out.push((ParamGroup::FeatureExtractor, &mut fe.mel.b));
        }
        for l in &mut self.classifier.layers {
            out.push((ParamGroup::Classifier, &mut l.input.w));
            out.push((ParamGroup::Classifier, &mut l.input.b));
            out.push((ParamGroup::Classifier, &mut l.recurrent));
        }
        out.push((ParamGroup::Classifier, &mut self.classifier.output.w));
        out.push((ParamGroup::Classifier, &mut self.classifier.output.b));
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    /// Parameter count per group.
    pub fn param_counts(&self) -> Vec<(ParamGroup, usize)> {
        let mut out: Vec<(ParamGroup, usize)> = Vec::new();
        for (g, p) in self.params() {
            match out.iter_mut().find(|(h, _)| *h == g) {
                Some((_, n)) => *n += p.len(),
                None => out.push((g, p.len())),
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }
}

/// Majority vote over per-frame argmax decisions; ties go to the lowest class.
pub fn utterance_decision(posteriors: &Matrix) -> usize {
    let mut votes = vec![0usize; posteriors.cols];
    for r in 0..posteriors.rows {
        votes[argmax(posteriors.row(r))] += 1;
    }
    argmax_count(&votes)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn argmax_count(v: &[usize]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
