//! Stage-wise training (LFBE classifier, then FE + classifier on one DFT
//! channel, then the whole multi-channel network) and grouped evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::beamform::BeamformerBank;
use crate::dsp::{mc_spectra, StatsAccumulator, SpectrumAnalyzer, StftConfig};
use crate::error::{Error, Result};
use crate::geometry::{geometry_dissimilarity, ArrayGeometry};
use crate::mcmodel::{
    utterance_decision, Architecture, ClassifierConfig, Model, ParamGroup, WtsfConfig,
};
use crate::nnet::{adam_step, softmax_rows, softmax_xent, AdamConfig, Matrix};
use crate::wav::read_wav;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Format(format!("unknown split '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Relative paths resolve against the manifest directory.
    pub path: PathBuf,
    pub label: usize,
    pub geometry_id: String,
    /// `+inf` for clean utterances.
    pub snr_db: f64,
    pub split: Split,
}

/// CSV rows `path,label,geometry_id,snr_db,split`, with an optional header.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub root: PathBuf,
}

fn parse_snr(s: &str) -> Result<f64> {
    let v: f64 = match s.trim() {
        "inf" | "+inf" | "clean" => f64::INFINITY,
        t => t
            .parse()
            .map_err(|_| Error::Format(format!("bad SNR '{t}'")))?,
    };
    if v.is_nan() || v == f64::NEG_INFINITY {
        return Err(Error::Format(format!("bad SNR '{s}'")));
    }
    Ok(v)
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, root: PathBuf) -> Self {
        Self { entries, root }
    }

    pub fn from_csv_str(text: &str, root: PathBuf) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut entries = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Format(format!("manifest: {e}")))?;
            if i == 0 && rec.get(0) == Some("path") {
                continue;
            }
            if rec.len() != 5 {
                return Err(Error::Format(format!(
                    "manifest line {}: expected 5 fields, got {}",
                    i + 1,
                    rec.len()
                )));
            }
            entries.push(ManifestEntry {
                path: PathBuf::from(&rec[0]),
                label: rec[1]
                    .parse()
                    .map_err(|_| Error::Format(format!("manifest line {}: bad label", i + 1)))?,
                geometry_id: rec[2].to_string(),
                snr_db: parse_snr(&rec[3])?,
                split: rec[4].parse()?,
            });
        }
        Ok(Self { entries, root })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_csv_str(&std::fs::read_to_string(path)?, root)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("path,label,geometry_id,snr_db,split\n");
        for e in &self.entries {
            let snr = if e.snr_db == f64::INFINITY {
                "inf".to_string()
            } else {
                e.snr_db.to_string()
            };
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.path.display(),
                e.label,
                e.geometry_id,
                snr,
                e.split
            ));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.root.join(&entry.path)
        }
    }

    pub fn select(&self, split: Split, geometries: Option<&[String]>) -> Vec<&ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .filter(|e| geometries.map_or(true, |g| g.contains(&e.geometry_id)))
            .collect()
    }

    /// Checks labels against the class count.
    pub fn validate(&self, classes: usize) -> Result<()> {
        for e in &self.entries {
            if e.label >= classes {
                return Err(Error::Label {
                    label: e.label,
                    classes,
                });
            }
        }
        Ok(())
    }
}

/// Model input features of one utterance, stored in single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
    pub label: usize,
    pub geometry_id: String,
    pub snr_db: f64,
}

impl Example {
    pub fn matrix(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v as f64).collect(),
        }
    }
}

fn load_audio(manifest: &DatasetManifest, entry: &ManifestEntry, fs: f64) -> Result<Vec<Vec<f64>>> {
    let audio = read_wav(manifest.resolve(entry))?;
    if (audio.sample_rate as f64 - fs).abs() > 0.5 {
        return Err(Error::Config(format!(
            "{}: sample rate {} Hz, expected {fs}",
            entry.path.display(),
            audio.sample_rate
        )));
    }
    Ok(audio.channels)
}

/// Features of each entry as the model expects them.
pub fn load_examples(model: &Model, manifest: &DatasetManifest, entries: &[&ManifestEntry]) -> Result<Vec<Example>> {
    entries
        .iter()
        .map(|e| {
            let channels = load_audio(manifest, e, model.stft.sample_rate)?;
            let x = model.features(&channels)?;
            Ok(Example {
                rows: x.rows,
                cols: x.cols,
                data: x.data.iter().map(|&v| v as f32).collect(),
                label: e.label,
                geometry_id: e.geometry_id.clone(),
                snr_db: e.snr_db,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Utterances per optimizer step.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub classifier: ClassifierConfig,
    /// Restricts training entries to these geometry ids.
    pub geometries: Option<Vec<String>>,
    pub val_fraction: f64,
    /// Epochs without validation improvement before the rate halves.
    pub patience: usize,
    /// Epochs without validation improvement before stopping.
    pub early_stop: usize,
    /// Global gradient-norm clip; `None` disables it.
    pub clip_norm: Option<f64>,
    /// Groups the optimizer updates; `None` means all.
    pub trainable: Option<Vec<ParamGroup>>,
    pub wtsf: WtsfConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 8,
            max_epochs: 10,
            seed: 0,
            classifier: ClassifierConfig::default(),
            geometries: None,
            val_fraction: 0.1,
            patience: 2,
            early_stop: 5,
            clip_norm: Some(5.0),
            trainable: None,
            wtsf: WtsfConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("lr, batch size and epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("validation fraction {}", self.val_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_utt_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub initial_train_loss: f64,
    pub epochs: Vec<EpochStats>,
    /// Epoch (1-based) whose parameters were kept; 0 means the initial ones.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainReport {
    pub fn final_train_loss(&self) -> f64 {
        self.epochs.last().map_or(self.initial_train_loss, |e| e.train_loss)
    }
}

/// Mean frame cross-entropy of one utterance; every frame carries its label.
pub fn utterance_loss(model: &Model, ex: &Example) -> Result<f64> {
    let (logits, _) = model.forward(&ex.matrix())?;
    Ok(softmax_xent(&logits, &vec![ex.label; logits.rows])?.0)
}

pub fn mean_loss(model: &Model, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for ex in examples {
        total += utterance_loss(model, ex)?;
    }
    Ok(total / examples.len() as f64)
}

/// Accumulates gradients of the mean loss over `batch`; returns that loss.
pub fn accumulate_batch(model: &mut Model, batch: &[&Example]) -> Result<f64> {
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for ex in batch {
        let (logits, tape) = model.forward(&ex.matrix())?;
        let (loss, mut g) = softmax_xent(&logits, &vec![ex.label; logits.rows])?;
        g.data.iter_mut().for_each(|v| *v *= scale);
        model.backward(&tape, &g)?;
        total += loss * scale;
    }
    Ok(total)
}

/// One optimizer step over the trainable groups with optional norm clipping.
pub fn apply_update(model: &mut Model, adam: &AdamConfig, trainable: Option<&[ParamGroup]>, clip: Option<f64>) {
    let mut params: Vec<_> = model
        .params_mut()
        .into_iter()
        .filter(|(g, _)| trainable.map_or(true, |t| t.contains(g)))
        .map(|(_, p)| p)
        .collect();
    if let Some(c) = clip {
        let norm = params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        if norm > c {
            params.iter_mut().for_each(|p| p.scale_grad(c / norm));
        }
    }
    for p in params {
        adam_step(p, adam);
    }
}

fn split_validation(mut examples: Vec<Example>, fraction: f64, seed: u64) -> (Vec<Example>, Vec<Example>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001);
    examples.shuffle(&mut rng);
    let n_val = ((examples.len() as f64) * fraction).round() as usize;
    let n_val = n_val.min(examples.len().saturating_sub(1));
    let train = examples.split_off(n_val);
    (train, examples)
}

/// Utterance accuracy from majority-voted frame decisions.
pub fn utterance_accuracy(model: &Model, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut correct = 0usize;
    for ex in examples {
        let post = model.posteriors(&ex.matrix())?;
        if utterance_decision(&post) == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Adam with rate halving on validation plateaus, early stopping and
/// best-validation restoration. Deterministic in `cfg.seed`.
pub fn fit(model: &mut Model, examples: Vec<Example>, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Empty("no training utterances"));
    }
    let (train, val) = split_validation(examples, cfg.val_fraction, cfg.seed);
    let val_ref: &[Example] = if val.is_empty() { &train } else { &val };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let mut adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    for (_, p) in model.params_mut() {
        p.zero_grad();
        p.reset_optimizer();
    }
    let initial_train_loss = mean_loss(model, &train)?;
    let mut best_val = mean_loss(model, val_ref)?;
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut since_halving = 0;
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            model.zero_grad();
            total += accumulate_batch(model, &batch)? * batch.len() as f64;
            apply_update(model, &adam, cfg.trainable.as_deref(), cfg.clip_norm);
        }
        let train_loss = total / train.len() as f64;
        let val_loss = mean_loss(model, val_ref)?;
        let val_utt_acc = utterance_accuracy(model, val_ref)?;
        epochs.push(EpochStats {
            epoch,
            lr: adam.lr,
            train_loss,
            val_loss,
            val_utt_acc,
        });
        if !train_loss.is_finite() {
            return Err(Error::Config(format!("training diverged at epoch {epoch}")));
        }
        if val_loss < best_val {
            best_val = val_loss;
            best = model.clone();
            best_epoch = epoch;
            since_best = 0;
            since_halving = 0;
        } else {
            since_best += 1;
            since_halving += 1;
            if since_best >= cfg.early_stop {
                break;
            }
            if since_halving >= cfg.patience {
                adam.lr *= 0.5;
                since_halving = 0;
            }
        }
    }
    *model = best;
    model.zero_grad();
    Ok(TrainReport {
        initial_train_loss,
        epochs,
        best_epoch,
        best_val_loss: best_val,
    })
}

fn training_entries<'a>(manifest: &'a DatasetManifest, cfg: &TrainConfig) -> Result<Vec<&'a ManifestEntry>> {
    manifest.validate(cfg.classifier.classes)?;
    let entries = manifest.select(Split::Train, cfg.geometries.as_deref());
    if entries.is_empty() {
        return Err(Error::Empty("no training entries in manifest"));
    }
    Ok(entries)
}

/// Classifier on single-channel LFBE features (channel 0).
pub fn stage1_train_lfbe(manifest: &DatasetManifest, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    let entries = training_entries(manifest, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::lfbe_baseline(cfg.classifier, &mut rng)?;
    let examples = load_examples(&model, manifest, &entries)?;
    let report = fit(&mut model, examples, cfg)?;
    Ok((model, report))
}

/// Channel-pooled DFT statistics of the training entries.
pub fn dft_stats(manifest: &DatasetManifest, entries: &[&ManifestEntry], cfg: &StftConfig) -> Result<crate::dsp::GlobalStats> {
    let analyzer = SpectrumAnalyzer::new(cfg);
    let mut acc = StatsAccumulator::new(2 * cfg.num_bins());
    for e in entries {
        let channels = load_audio(manifest, e, cfg.sample_rate)?;
        for frame in mc_spectra(&channels, &analyzer)? {
            for spec in &frame {
                acc.push(&spec.to_interleaved())?;
            }
        }
    }
    acc.finish()
}

/// FE network and classifier on one DFT channel, classifier initialized
/// from stage 1.
pub fn stage2_train_single_dft(
    manifest: &DatasetManifest,
    stage1: &Model,
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    if stage1.architecture() != Architecture::LfbeBaseline {
        return Err(Error::Architecture(format!(
            "stage 2 needs a stage-1 ({}) checkpoint, got {}",
            Architecture::LfbeBaseline,
            stage1.architecture()
        )));
    }
    let entries = training_entries(manifest, cfg)?;
    let stats = dft_stats(manifest, &entries, &StftConfig::dft_feature())?;
    let mut model = Model::single_dft_from(stage1, stats)?;
    let examples = load_examples(&model, manifest, &entries)?;
    calibrate_fe(&mut model, &examples)?;
    let report = fit(&mut model, examples, cfg)?;
    Ok((model, report))
}

/// Sets the FE output standardization from the training features.
pub fn calibrate_fe(model: &mut Model, examples: &[Example]) -> Result<()> {
    let raw = {
        let fe = model
            .fe
            .as_ref()
            .ok_or_else(|| Error::Architecture("model has no FE network".into()))?;
        examples
            .iter()
            .map(|ex| fe.raw(&model.fe_input(&ex.matrix())?))
            .collect::<Result<Vec<_>>>()?
    };
    model.fe.as_mut().expect("checked above").calibrate(&raw)
}

/// Whole-network training on multi-channel DFT input, initialized from
/// stage 2 and the beamformer bank.
pub fn stage3_joint_train_mc(
    manifest: &DatasetManifest,
    stage2: &Model,
    bank: &BeamformerBank,
    arch: Architecture,
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    if stage2.architecture() != Architecture::SingleDft {
        return Err(Error::Architecture(format!(
            "stage 3 needs a stage-2 ({}) checkpoint, got {}",
            Architecture::SingleDft,
            stage2.architecture()
        )));
    }
    let entries = training_entries(manifest, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::multichannel_from(stage2, bank, arch, cfg.wtsf, &mut rng)?;
    let examples = load_examples(&model, manifest, &entries)?;
    let report = fit(&mut model, examples, cfg)?;
    Ok((model, report))
}

/// Outcome for one test utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct UttResult {
    pub label: usize,
    pub predicted: usize,
    pub frames: usize,
    pub frames_correct: usize,
    pub geometry_id: String,
    pub snr_db: f64,
}

pub fn evaluate_examples(model: &Model, examples: &[Example]) -> Result<Vec<UttResult>> {
    examples
        .iter()
        .map(|ex| {
            let post = softmax_rows(&model.forward(&ex.matrix())?.0);
            let frames_correct = (0..post.rows)
                .filter(|&r| crate::mcmodel::argmax(post.row(r)) == ex.label)
                .count();
            Ok(UttResult {
                label: ex.label,
                predicted: utterance_decision(&post),
                frames: post.rows,
                frames_correct,
                geometry_id: ex.geometry_id.clone(),
                snr_db: ex.snr_db,
            })
        })
        .collect()
}

/// Per-utterance results on the test split (optionally restricted by geometry).
pub fn evaluate(model: &Model, manifest: &DatasetManifest, geometries: Option<&[String]>) -> Result<Vec<UttResult>> {
    manifest.validate(model.num_classes())?;
    let entries = manifest.select(Split::Test, geometries);
    let examples = load_examples(model, manifest, &entries)?;
    evaluate_examples(model, &examples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKey {
    All,
    Snr,
    Geometry,
    SnrGeometry,
}

impl FromStr for GroupKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(GroupKey::All),
            "snr" => Ok(GroupKey::Snr),
            "geometry" => Ok(GroupKey::Geometry),
            "snr+geometry" | "geometry+snr" => Ok(GroupKey::SnrGeometry),
            _ => Err(Error::Config(format!("unknown grouping '{s}'"))),
        }
    }
}

fn group_name(key: GroupKey, r: &UttResult) -> String {
    let snr = || format!("snr={}", crate::simkit::snr_tag(r.snr_db));
    match key {
        GroupKey::All => "all".into(),
        GroupKey::Snr => snr(),
        GroupKey::Geometry => format!("geometry={}", r.geometry_id),
        GroupKey::SnrGeometry => format!("geometry={}/{}", r.geometry_id, snr()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupMetrics {
    pub group: String,
    pub utterances: usize,
    pub frames: usize,
    pub frame_acc: f64,
    pub utt_acc: f64,
    /// Relative error-rate reduction against the baseline; `None` without a
    /// baseline or when the baseline error is zero.
    pub rerr: Option<f64>,
}

pub fn relative_error_reduction(err_base: f64, err_model: f64) -> Option<f64> {
    (err_base > 0.0).then(|| (err_base - err_model) / err_base)
}

/// Groups only appear if they contain utterances.
pub fn group_metrics(results: &[UttResult], key: GroupKey, baseline: Option<&[UttResult]>) -> Vec<GroupMetrics> {
    let collect = |rs: &[UttResult]| {
        let mut map: BTreeMap<String, (usize, usize, usize, usize)> = BTreeMap::new();
        for r in rs {
            let e = map.entry(group_name(key, r)).or_default();
            e.0 += 1;
            e.1 += r.frames;
            e.2 += r.frames_correct;
            e.3 += usize::from(r.predicted == r.label);
        }
        map
    };
    let base = baseline.map(collect);
    collect(results)
        .into_iter()
        .map(|(group, (n, frames, fc, uc))| {
            let utt_acc = uc as f64 / n as f64;
            let rerr = base.as_ref().and_then(|b| b.get(&group)).and_then(|&(bn, _, _, buc)| {
                relative_error_reduction(1.0 - buc as f64 / bn as f64, 1.0 - utt_acc)
            });
            GroupMetrics {
                group,
                utterances: n,
                frames,
                frame_acc: if frames > 0 { fc as f64 / frames as f64 } else { f64::NAN },
                utt_acc,
                rerr,
            }
        })
        .collect()
}

/// `group,frames,frame_acc,utt_acc,rerr`; an absent RERR is an empty field.
pub fn metrics_csv(rows: &[GroupMetrics]) -> String {
    let mut out = String::from("group,frames,frame_acc,utt_acc,rerr\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{}\n",
            r.group,
            r.frames,
            r.frame_acc,
            r.utt_acc,
            r.rerr.map(|v| format!("{v:.6}")).unwrap_or_default()
        ));
    }
    out
}

/// Smallest dissimilarity between `test` and any same-size training geometry.
pub fn mismatch_level(test: &ArrayGeometry, training: &[ArrayGeometry]) -> Option<f64> {
    training
        .iter()
        .filter_map(|g| geometry_dissimilarity(g, test).ok())
        .min_by(f64::total_cmp)
}

/// Rows `geometry_id,dissimilarity,rerr` for every test geometry with a
/// defined RERR.
pub fn plot_data_csv(
    per_geometry: &[GroupMetrics],
    test_geometries: &[ArrayGeometry],
    training: &[ArrayGeometry],
) -> String {
    let mut out = String::from("geometry_id,dissimilarity,rerr\n");
    for g in test_geometries {
        let name = format!("geometry={}", g.id());
        let Some(row) = per_geometry.iter().find(|r| r.group == name) else {
            continue;
        };
        if let (Some(x), Some(y)) = (mismatch_level(g, training), row.rerr) {
            out.push_str(&format!("{},{x:.6},{y:.6}\n", g.id()));
        }
    }
    out
}
