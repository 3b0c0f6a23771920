//! Desk-scale geometry-mismatch experiment on the toy corpus.
//!
//! Trains the single-channel LFBE baseline, a two-geometry WTSF and ESF, and
//! a one-geometry WTSF, then evaluates all four on the training geometries
//! and on a held-out geometry per SNR.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::beamform::{design_bank, LoadingPolicy};
use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::geometry::{look_directions, ArrayGeometry};
use crate::mcmodel::{Architecture, Model};
use crate::simkit::{make_toy_dataset, snr_tag, ToyConfig};
use crate::trainer::{
    evaluate, stage1_train_lfbe, stage2_train_single_dft, stage3_joint_train_mc, DatasetManifest,
    Split, TrainConfig, TrainReport, UttResult,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TrendConfig {
    /// Geometries of the multi-geometry models; the first listed one that
    /// matches `single_geometry` trains the one-geometry model.
    pub train_geometries: Vec<ArrayGeometry>,
    pub single_geometry: String,
    pub held_out: ArrayGeometry,
    pub snr_grid: Vec<f64>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub cue_level_db: f64,
    pub duration_s: f64,
    pub directions: usize,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub stage3: TrainConfig,
    pub seed: u64,
}

impl Default for TrendConfig {
    fn default() -> Self {
        let stage = |epochs, lr| TrainConfig {
            max_epochs: epochs,
            lr,
            ..TrainConfig::default()
        };
        Self {
            train_geometries: vec![
                ArrayGeometry::pair("g73", 0.073).expect("valid pair"),
                ArrayGeometry::pair("g36", 0.036).expect("valid pair"),
            ],
            single_geometry: "g36".into(),
            held_out: ArrayGeometry::pair("g63", 0.063).expect("valid pair"),
            snr_grid: vec![5.0, 15.0, 25.0],
            train_per_class: 24,
            test_per_class: 16,
            cue_level_db: -6.0,
            duration_s: 1.0,
            directions: 12,
            stage1: stage(12, 2e-3),
            stage2: stage(6, 1e-3),
            stage3: stage(6, 5e-4),
            seed: 17,
        }
    }
}

/// Accuracy of one model on one (geometry, SNR) cell; `snr = None` pools SNRs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendRow {
    pub model: String,
    pub geometry: String,
    pub snr_db: Option<f64>,
    pub utterances: usize,
    pub utt_acc: f64,
    pub frame_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendReport {
    pub rows: Vec<TrendRow>,
    pub reports: Vec<(String, TrainReport)>,
    pub seconds: f64,
    pub wtsf_gain_at_low_snr: f64,
    pub multi_geometry_drop: f64,
    pub single_geometry_drop: f64,
    pub wtsf_minus_esf: f64,
}

impl TrendReport {
    pub fn wtsf_beats_baseline(&self) -> bool {
        self.wtsf_gain_at_low_snr >= 0.05
    }

    pub fn multi_geometry_is_robust(&self) -> bool {
        self.multi_geometry_drop <= 0.5 * self.single_geometry_drop
    }

    pub fn wtsf_not_below_esf(&self) -> bool {
        self.wtsf_minus_esf >= -0.01
    }

    /// `model,geometry,snr,utterances,utt_acc,frame_acc`; pooled rows use `all`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,geometry,snr,utterances,utt_acc,frame_acc\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6}\n",
                r.model,
                r.geometry,
                r.snr_db.map_or("all".into(), snr_tag),
                r.utterances,
                r.utt_acc,
                r.frame_acc
            ));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        format!(
            "quantity,value\nwtsf_gain_at_low_snr,{:.6}\nmulti_geometry_drop,{:.6}\n\
             single_geometry_drop,{:.6}\nwtsf_minus_esf,{:.6}\nseconds,{:.1}\n",
            self.wtsf_gain_at_low_snr,
            self.multi_geometry_drop,
            self.single_geometry_drop,
            self.wtsf_minus_esf,
            self.seconds
        )
    }
}

fn accuracy(results: &[UttResult], keep: impl Fn(&UttResult) -> bool) -> (usize, f64, f64) {
    let sel: Vec<&UttResult> = results.iter().filter(|r| keep(r)).collect();
    let n = sel.len();
    if n == 0 {
        return (0, f64::NAN, f64::NAN);
    }
    let utt = sel.iter().filter(|r| r.predicted == r.label).count() as f64 / n as f64;
    let frames: usize = sel.iter().map(|r| r.frames).sum();
    let fc: usize = sel.iter().map(|r| r.frames_correct).sum();
    (n, utt, fc as f64 / frames.max(1) as f64)
}

fn corpus(cfg: &TrendConfig, dir: &Path) -> Result<DatasetManifest> {
    let mut train = ToyConfig::new(cfg.train_geometries.clone(), cfg.snr_grid.clone(), cfg.train_per_class, cfg.seed);
    train.cue_level_db = cfg.cue_level_db;
    train.duration_s = cfg.duration_s;
    let mut test = train.clone();
    test.split = Split::Test;
    test.per_class = cfg.test_per_class;
    test.geometries.push(cfg.held_out.clone());
    let mut entries = Vec::new();
    for (sub, toy) in [("train", &train), ("test", &test)] {
        let m = make_toy_dataset(toy, dir.join(sub))?;
        entries.extend(m.entries.into_iter().map(|mut e| {
            e.path = PathBuf::from(sub).join(&e.path);
            e
        }));
    }
    let manifest = DatasetManifest::new(entries, dir.to_path_buf());
    manifest.save(dir.join("manifest.csv"))?;
    Ok(manifest)
}

/// Runs the whole experiment inside `work_dir` and writes `trend.csv` and
/// `trend_summary.csv` there.
pub fn run_trend(cfg: &TrendConfig, work_dir: impl AsRef<Path>) -> Result<TrendReport> {
    let start = Instant::now();
    let dir = work_dir.as_ref();
    let single = cfg
        .train_geometries
        .iter()
        .find(|g| g.id() == cfg.single_geometry)
        .ok_or_else(|| Error::Config(format!("'{}' is not a training geometry", cfg.single_geometry)))?
        .clone();
    let manifest = corpus(cfg, dir)?;

    let with_seed = |t: &TrainConfig| TrainConfig {
        seed: cfg.seed,
        ..t.clone()
    };
    let (s1, r1) = stage1_train_lfbe(&manifest, &with_seed(&cfg.stage1))?;
    let (s2, r2) = stage2_train_single_dft(&manifest, &s1, &with_seed(&cfg.stage2))?;
    let consts = crate::geometry::PhysicalConstants::default();
    let dirs = look_directions(cfg.directions);
    let stft = StftConfig::dft_feature();
    let bank2 = design_bank(&cfg.train_geometries, &dirs, &stft, LoadingPolicy::default(), &consts)?;
    let bank1 = design_bank(std::slice::from_ref(&single), &dirs, &stft, LoadingPolicy::default(), &consts)?;
    let (wtsf2, rw2) = stage3_joint_train_mc(&manifest, &s2, &bank2, Architecture::Wtsf, &with_seed(&cfg.stage3))?;
    let (esf2, re2) = stage3_joint_train_mc(&manifest, &s2, &bank2, Architecture::Esf, &with_seed(&cfg.stage3))?;
    let one = TrainConfig {
        geometries: Some(vec![single.id().to_string()]),
        ..with_seed(&cfg.stage3)
    };
    let (wtsf1, rw1) = stage3_joint_train_mc(&manifest, &s2, &bank1, Architecture::Wtsf, &one)?;

    let models: [(&str, &Model); 4] = [
        ("lfbe", &s1),
        ("wtsf_g2", &wtsf2),
        ("esf_g2", &esf2),
        ("wtsf_g1", &wtsf1),
    ];
    let mut rows = Vec::new();
    let mut results = Vec::new();
    let mut geoms: Vec<String> = cfg.train_geometries.iter().map(|g| g.id().to_string()).collect();
    geoms.push(cfg.held_out.id().to_string());
    for (name, model) in models {
        let res = evaluate(model, &manifest, None)?;
        for g in &geoms {
            for snr in cfg.snr_grid.iter().map(|&s| Some(s)).chain([None]) {
                let (n, utt, frame) =
                    accuracy(&res, |r| &r.geometry_id == g && snr.map_or(true, |s| r.snr_db == s));
                rows.push(TrendRow {
                    model: name.into(),
                    geometry: g.clone(),
                    snr_db: snr,
                    utterances: n,
                    utt_acc: utt,
                    frame_acc: frame,
                });
            }
        }
        results.push(res);
    }

    let trained: Vec<&str> = cfg.train_geometries.iter().map(|g| g.id()).collect();
    let held = cfg.held_out.id();
    let low = cfg.snr_grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let matched = |r: &UttResult| trained.contains(&r.geometry_id.as_str());
    let acc = |i: usize, keep: &dyn Fn(&UttResult) -> bool| accuracy(&results[i], keep).1;
    let wtsf_gain_at_low_snr =
        acc(1, &|r| matched(r) && r.snr_db == low) - acc(0, &|r| matched(r) && r.snr_db == low);
    let multi_geometry_drop = acc(1, &matched) - acc(1, &|r| r.geometry_id == held);
    let single_geometry_drop = acc(3, &|r| r.geometry_id == single.id()) - acc(3, &|r| r.geometry_id == held);
    let wtsf_minus_esf = acc(1, &matched) - acc(2, &matched);

    let report = TrendReport {
        rows,
        reports: vec![
            ("lfbe".into(), r1),
            ("single_dft".into(), r2),
            ("wtsf_g2".into(), rw2),
            ("esf_g2".into(), re2),
            ("wtsf_g1".into(), rw1),
        ],
        seconds: start.elapsed().as_secs_f64(),
        wtsf_gain_at_low_snr,
        multi_geometry_drop,
        single_geometry_drop,
        wtsf_minus_esf,
    };
    std::fs::write(dir.join("trend.csv"), report.to_csv())?;
    std::fs::write(dir.join("trend_summary.csv"), report.summary_csv())?;
    Ok(report)
}
