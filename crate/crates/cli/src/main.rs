//! `mgsf`: design beamformer banks, simulate corpora, enhance recordings,
//! train and evaluate spatial-filtering models, and inspect artifacts.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mgsf::beamform::{
    design_bank_with_report, enhance_utterance, BeamformerBank, LoadingPolicy, SelectorConfig,
    DEFAULT_LOADING, DEFAULT_SMOOTHING_FRAMES,
};
use mgsf::dsp::{edge_bins, mc_spectra, overlap_add_with_edges, GlobalStats, SpectrumAnalyzer, StftConfig};
use mgsf::geometry::{look_directions, ArrayGeometry, PhysicalConstants};
use mgsf::mcmodel::{
    Architecture, ClassifierConfig, Model, PoolScope, WtsfConfig, DEFAULT_CLASSES, DEFAULT_FILTERS,
    DEFAULT_FILTER_NOISE, DEFAULT_HIDDEN, DEFAULT_LAYERS,
};
use mgsf::simkit::{make_toy_dataset, ToyConfig};
use mgsf::trainer::{
    evaluate, group_metrics, metrics_csv, plot_data_csv, stage1_train_lfbe, stage2_train_single_dft,
    stage3_joint_train_mc, DatasetManifest, GroupKey, Split, TrainConfig, TrainReport,
};
use mgsf::wav::{read_wav, write_wav, Audio, SampleFormat};
use mgsf::Error;
use serde::Deserialize;

use config::{load_config, FileConfig};

/// Stdout writes that tolerate a closed pipe, e.g. `mgsf ... | head`.
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

macro_rules! outln {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

#[derive(Parser, Debug)]
#[command(name = "mgsf", version, about = "Multi-geometry spatial filtering front-end tools")]
struct Cli {
    /// Seed for every random draw (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; computation is single-threaded, so only 1 changes nothing.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML file with defaults: top-level `seed`/`threads` and one table per
    /// subcommand using the long flag names.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Design a superdirective bank and write an MGBF file.
    DesignBank(DesignBankArgs),
    /// Render the labeled toy corpus (float WAVs plus manifest.csv).
    Simulate(SimulateArgs),
    /// Beamform a recording with max-energy beam selection.
    Enhance(EnhanceArgs),
    /// Run one training stage.
    Train(TrainArgs),
    /// Score a checkpoint on the test split.
    Eval(EvalArgs),
    /// Describe a checkpoint, bank, stats, geometry or WAV file.
    Inspect(InspectArgs),
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct DesignBankArgs {
    /// JSON file, `pair:ID:MM`, `circular7` or `mono`.
    #[arg(long, num_args = 1..)]
    geometry: Vec<String>,
    /// Uniform horizontal look directions (default 12).
    #[arg(long)]
    directions: Option<usize>,
    /// Fixed diagonal loading (default 0.01).
    #[arg(long, conflicts_with = "wng_cap", allow_negative_numbers = true)]
    loading: Option<f64>,
    /// Per-bin loading search capping ||w||^2 at this many dB.
    #[arg(long, allow_negative_numbers = true)]
    wng_cap: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct SimulateArgs {
    /// JSON file, `pair:ID:MM`, `circular7` or `mono`.
    #[arg(long, num_args = 1..)]
    geometry: Vec<String>,
    /// SNRs in dB; `inf` renders clean audio (default 5 15 25).
    #[arg(long, num_args = 1.., allow_negative_numbers = true)]
    snr: Vec<f64>,
    /// Utterances per (geometry, SNR, class) (default 8).
    #[arg(long)]
    per_class: Option<usize>,
    /// Number of classes (default 4).
    #[arg(long)]
    classes: Option<usize>,
    /// Seconds per utterance (default 1).
    #[arg(long)]
    duration: Option<f64>,
    /// Class cue level relative to the carrier in dB (default -6).
    #[arg(long, allow_negative_numbers = true)]
    cue_db: Option<f64>,
    /// Plane waves making up the diffuse noise (default 64).
    #[arg(long)]
    noise_directions: Option<usize>,
    /// Fixed source azimuth in degrees instead of a random one.
    #[arg(long, allow_negative_numbers = true)]
    azimuth: Option<f64>,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// Merge into an existing manifest.csv in --out instead of replacing it.
    #[arg(long)]
    append: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct EnhanceArgs {
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// CSV with the selected beam per frame.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Bank geometry index; by default the only one matching the channel count.
    #[arg(long)]
    geometry_index: Option<usize>,
    /// Smoothing window in frames (default 10; 1 disables).
    #[arg(long)]
    smoothing: Option<usize>,
    /// Write 16-bit PCM instead of float.
    #[arg(long)]
    pcm16: bool,
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct TrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// 1: LFBE classifier, 2: FE network on one DFT channel, 3: multi-channel.
    #[arg(long)]
    stage: Option<u8>,
    /// Checkpoint of the previous stage (stages 2 and 3).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Beamformer bank for the SF layer (stage 3).
    #[arg(long)]
    bank: Option<PathBuf>,
    /// esf or wtsf (stage 3, default wtsf).
    #[arg(long)]
    arch: Option<String>,
    /// Train only on these manifest geometry ids.
    #[arg(long, num_args = 1..)]
    geometries: Vec<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    /// WTSF filters (default 12).
    #[arg(long)]
    filters: Option<usize>,
    #[arg(long)]
    filter_noise: Option<f64>,
    /// row or per_geometry.
    #[arg(long)]
    pool: Option<String>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Gradient-norm clip; 0 disables (default 5).
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-epoch CSV log.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct EvalArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Reference checkpoint for the RERR column.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// all, snr, geometry or snr+geometry (default snr+geometry).
    #[arg(long)]
    group: Option<String>,
    /// Restrict to these manifest geometry ids.
    #[arg(long, num_args = 1..)]
    geometries: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dissimilarity-vs-RERR CSV; needs --baseline, --test-geometry and --train-geometry.
    #[arg(long)]
    plot_data: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    test_geometry: Vec<String>,
    #[arg(long, num_args = 1..)]
    train_geometry: Vec<String>,
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct InspectArgs {
    path: Option<PathBuf>,
}

/// Invalid input versus a failure while running.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_)
            | Error::Geometry(_)
            | Error::Direction(_)
            | Error::Format(_)
            | Error::Version { .. }
            | Error::Label { .. }
            | Error::Architecture(_)
            | Error::Json(_)
            | Error::Wav(_) => CliError::Usage(msg),
            Error::Io(ref io) if io.kind() == std::io::ErrorKind::NotFound => CliError::Usage(msg),
            _ => CliError::Runtime(msg),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn required<T>(v: Option<T>, flag: &str) -> CliResult<T> {
    v.ok_or_else(|| usage(format!("missing required --{flag}")))
}

fn with_path(path: &Path, e: Error) -> CliError {
    match CliError::from(e) {
        CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
        CliError::Runtime(m) => CliError::Runtime(format!("{}: {m}", path.display())),
    }
}

fn parse_geometry(spec: &str) -> CliResult<ArrayGeometry> {
    match spec {
        "circular7" => return Ok(ArrayGeometry::seven_mic_circular()),
        "mono" => return Ok(ArrayGeometry::single("mono")),
        _ => {}
    }
    if let Some(rest) = spec.strip_prefix("pair:") {
        let (id, mm) = rest
            .split_once(':')
            .ok_or_else(|| usage(format!("geometry '{spec}': expected pair:ID:MM")))?;
        let mm: f64 = mm
            .parse()
            .map_err(|_| usage(format!("geometry '{spec}': spacing '{mm}' is not a number")))?;
        return Ok(ArrayGeometry::pair(id, mm / 1000.0)?);
    }
    let path = Path::new(spec);
    ArrayGeometry::load(path).map_err(|e| with_path(path, e))
}

fn parse_geometries(specs: &[String]) -> CliResult<Vec<ArrayGeometry>> {
    if specs.is_empty() {
        return Err(usage("at least one --geometry is required"));
    }
    specs.iter().map(|s| parse_geometry(s)).collect()
}

fn design_bank_cmd(a: DesignBankArgs) -> CliResult<()> {
    let geoms = parse_geometries(&a.geometry)?;
    let out = required(a.out, "out")?;
    let d = a.directions.unwrap_or(12);
    if d == 0 {
        return Err(usage("--directions must be at least 1"));
    }
    let policy = match (a.loading, a.wng_cap) {
        (Some(_), Some(_)) => return Err(usage("--loading and --wng-cap are exclusive")),
        (_, Some(db)) => LoadingPolicy::WngCapDb(db),
        (l, None) => LoadingPolicy::Fixed(l.unwrap_or(DEFAULT_LOADING)),
    };
    let cfg = StftConfig::dft_feature();
    let (bank, report) =
        design_bank_with_report(&geoms, &look_directions(d), &cfg, policy, &PhysicalConstants::default())?;
    bank.save(&out).map_err(|e| with_path(&out, e))?;
    outln!(
        "wrote {} (G={}, D={}, K={})",
        out.display(),
        bank.num_geometries(),
        bank.num_directions(),
        bank.num_bins()
    );
    outln!("bin,hz,wng_db_min,wng_db_mean,wng_db_max,loading_max,cap_unreachable");
    for k in 1..=bank.num_bins() {
        let rows: Vec<_> = report.iter().filter(|r| r.bin == k).collect();
        let wng: Vec<f64> = rows.iter().map(|r| -10.0 * r.weight_norm_sqr.log10()).collect();
        let min = wng.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = wng.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = wng.iter().sum::<f64>() / wng.len() as f64;
        let loading = rows.iter().map(|r| r.loading).fold(0.0, f64::max);
        let unreachable = rows.iter().filter(|r| r.cap_unreachable).count();
        outln!(
            "{k},{:.1},{min:.3},{mean:.3},{max:.3},{loading:.3e},{unreachable}",
            cfg.bin_hz(k)
        );
    }
    Ok(())
}

fn simulate_cmd(a: SimulateArgs, seed: u64) -> CliResult<()> {
    let geoms = parse_geometries(&a.geometry)?;
    let out = required(a.out, "out")?;
    let snrs = if a.snr.is_empty() { vec![5.0, 15.0, 25.0] } else { a.snr };
    let mut cfg = ToyConfig::new(geoms, snrs, a.per_class.unwrap_or(8), seed);
    cfg.classes = a.classes.unwrap_or(DEFAULT_CLASSES);
    cfg.duration_s = a.duration.unwrap_or(cfg.duration_s);
    cfg.cue_level_db = a.cue_db.unwrap_or(cfg.cue_level_db);
    cfg.noise_directions = a.noise_directions.unwrap_or(cfg.noise_directions);
    cfg.azimuth = a.azimuth.map(f64::to_radians);
    cfg.split = match a.split.unwrap_or(SplitArg::Train) {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let manifest_path = out.join("manifest.csv");
    let previous = if a.append && manifest_path.exists() {
        Some(DatasetManifest::load(&manifest_path).map_err(|e| with_path(&manifest_path, e))?)
    } else {
        None
    };
    let mut manifest = make_toy_dataset(&cfg, &out)?;
    let written = manifest.entries.len();
    if let Some(prev) = previous {
        let mut entries: Vec<_> = prev
            .entries
            .into_iter()
            .filter(|e| !manifest.entries.iter().any(|n| n.path == e.path))
            .collect();
        entries.append(&mut manifest.entries);
        manifest.entries = entries;
        manifest.save(&manifest_path)?;
    }
    outln!(
        "wrote {written} utterances; {} lists {}",
        manifest_path.display(),
        manifest.entries.len()
    );
    Ok(())
}

fn enhance_cmd(a: EnhanceArgs) -> CliResult<()> {
    let bank_path = required(a.bank, "bank")?;
    let input = required(a.input, "input")?;
    let output = required(a.output, "output")?;
    let bank = BeamformerBank::load(&bank_path).map_err(|e| with_path(&bank_path, e))?;
    let audio = read_wav(&input).map_err(|e| with_path(&input, e))?;
    let m = audio.num_channels();
    let g = match a.geometry_index {
        Some(g) if g >= bank.num_geometries() => {
            return Err(usage(format!("--geometry-index {g}: bank has {}", bank.num_geometries())))
        }
        Some(g) => g,
        None => {
            let matching: Vec<usize> = (0..bank.num_geometries()).filter(|&g| bank.channels(g) == m).collect();
            match matching.as_slice() {
                [g] => *g,
                [] => return Err(usage(format!("no bank geometry has {m} channels"))),
                _ => return Err(usage(format!("several bank geometries have {m} channels; pass --geometry-index"))),
            }
        }
    };
    if bank.channels(g) != m {
        return Err(usage(format!(
            "input has {m} channels, bank geometry {g} has {}",
            bank.channels(g)
        )));
    }
    let cfg = StftConfig::dft_feature();
    if (audio.sample_rate as f64 - cfg.sample_rate).abs() > 0.5 {
        return Err(usage(format!("sample rate {} Hz, expected 16000", audio.sample_rate)));
    }
    // pad so the last frame reaches the final sample; trimmed again below
    let n = audio.num_samples();
    let frames_needed = n.saturating_sub(cfg.window_len).div_ceil(cfg.hop) + 1;
    let padded: Vec<Vec<f64>> = audio
        .channels
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c.resize((frames_needed - 1) * cfg.hop + cfg.window_len, 0.0);
            c
        })
        .collect();
    let analyzer = SpectrumAnalyzer::new(&cfg);
    let frames = mc_spectra(&padded, &analyzer)?;
    let selector = SelectorConfig {
        window: a.smoothing.unwrap_or(DEFAULT_SMOOTHING_FRAMES),
        ..SelectorConfig::default()
    };
    let (spectra, trace) = enhance_utterance(&bank, g, &frames, &selector)?;
    // DC and Nyquist carry no direction, so they come from the first channel
    let edges = edge_bins(&padded[0], &analyzer)?;
    let y = overlap_add_with_edges(&spectra, Some(&edges), &cfg, n)?;
    let format = if a.pcm16 { SampleFormat::Pcm16 } else { SampleFormat::Float32 };
    write_wav(&output, &Audio::new(audio.sample_rate, vec![y])?, format)?;
    if let Some(path) = a.trace {
        let mut csv = String::from("frame,beam,azimuth_deg\n");
        for (t, &d) in trace.iter().enumerate() {
            let _ = writeln!(csv, "{t},{d},{:.3}", bank.directions()[d].azimuth().to_degrees());
        }
        std::fs::write(&path, csv).map_err(|e| with_path(&path, e.into()))?;
    }
    outln!("wrote {} ({} frames)", output.display(), trace.len());
    Ok(())
}

fn epoch_log(report: &TrainReport) -> String {
    let mut s = String::from("epoch,lr,train_loss,val_loss,val_utt_acc\n");
    let _ = writeln!(s, "0,,{:.6},,", report.initial_train_loss);
    for e in &report.epochs {
        let _ = writeln!(
            s,
            "{},{:.3e},{:.6},{:.6},{:.6}",
            e.epoch, e.lr, e.train_loss, e.val_loss, e.val_utt_acc
        );
    }
    s
}

fn train_cmd(a: TrainArgs, seed: u64) -> CliResult<()> {
    let manifest_path = required(a.manifest, "manifest")?;
    let out = required(a.out, "out")?;
    let manifest = DatasetManifest::load(&manifest_path).map_err(|e| with_path(&manifest_path, e))?;
    let defaults = TrainConfig::default();
    let pool: PoolScope = match &a.pool {
        Some(p) => p.parse()?,
        None => WtsfConfig::default().scope,
    };
    let cfg = TrainConfig {
        lr: a.lr.unwrap_or(defaults.lr),
        batch_size: a.batch.unwrap_or(defaults.batch_size),
        max_epochs: a.epochs.unwrap_or(defaults.max_epochs),
        seed,
        classifier: ClassifierConfig {
            hidden: a.hidden.unwrap_or(DEFAULT_HIDDEN),
            layers: a.layers.unwrap_or(DEFAULT_LAYERS),
            classes: a.classes.unwrap_or(DEFAULT_CLASSES),
        },
        geometries: (!a.geometries.is_empty()).then_some(a.geometries),
        val_fraction: a.val_fraction.unwrap_or(defaults.val_fraction),
        clip_norm: match a.clip {
            Some(c) if c <= 0.0 => None,
            Some(c) => Some(c),
            None => defaults.clip_norm,
        },
        wtsf: WtsfConfig {
            filters: a.filters.unwrap_or(DEFAULT_FILTERS),
            noise_std: a.filter_noise.unwrap_or(DEFAULT_FILTER_NOISE),
            scope: pool,
        },
        ..defaults
    };
    let load_init = || -> CliResult<Model> {
        let p = required(a.init.clone(), "init")?;
        Model::load(&p).map_err(|e| with_path(&p, e))
    };
    let (model, report) = match a.stage {
        Some(1) => stage1_train_lfbe(&manifest, &cfg)?,
        Some(2) => stage2_train_single_dft(&manifest, &load_init()?, &cfg)?,
        Some(3) => {
            let init = load_init()?;
            let bank_path = required(a.bank.clone(), "bank")?;
            let bank = BeamformerBank::load(&bank_path).map_err(|e| with_path(&bank_path, e))?;
            let arch: Architecture = a.arch.as_deref().unwrap_or("wtsf").parse()?;
            stage3_joint_train_mc(&manifest, &init, &bank, arch, &cfg)?
        }
        Some(s) => return Err(usage(format!("--stage {s}: expected 1, 2 or 3"))),
        None => return Err(usage("missing required --stage")),
    };
    model.save(&out).map_err(|e| with_path(&out, e))?;
    if let Some(log) = &a.log {
        std::fs::write(log, epoch_log(&report)).map_err(|e| with_path(log, e.into()))?;
    }
    outln!(
        "{}: loss {:.4} -> {:.4} (best epoch {}, val loss {:.4}); wrote {}",
        model.architecture(),
        report.initial_train_loss,
        report.final_train_loss(),
        report.best_epoch,
        report.best_val_loss,
        out.display()
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> CliResult<()> {
    let manifest_path = required(a.manifest, "manifest")?;
    let model_path = required(a.model, "model")?;
    let out = required(a.out, "out")?;
    let manifest = DatasetManifest::load(&manifest_path).map_err(|e| with_path(&manifest_path, e))?;
    let model = Model::load(&model_path).map_err(|e| with_path(&model_path, e))?;
    let key: GroupKey = a.group.as_deref().unwrap_or("snr+geometry").parse()?;
    let only = (!a.geometries.is_empty()).then_some(a.geometries.as_slice());
    let results = evaluate(&model, &manifest, only)?;
    let base = match &a.baseline {
        Some(p) => {
            let b = Model::load(p).map_err(|e| with_path(p, e))?;
            Some(evaluate(&b, &manifest, only)?)
        }
        None => None,
    };
    let rows = group_metrics(&results, key, base.as_deref());
    std::fs::write(&out, metrics_csv(&rows)).map_err(|e| with_path(&out, e.into()))?;
    out!("{}", metrics_csv(&rows));
    if let Some(plot) = &a.plot_data {
        if base.is_none() {
            return Err(usage("--plot-data needs --baseline"));
        }
        let test = parse_geometries(&a.test_geometry)?;
        let train = parse_geometries(&a.train_geometry)?;
        let per_geometry = group_metrics(&results, GroupKey::Geometry, base.as_deref());
        std::fs::write(plot, plot_data_csv(&per_geometry, &test, &train)).map_err(|e| with_path(plot, e.into()))?;
    }
    Ok(())
}

fn inspect_model(model: &Model) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "model checkpoint: {}", model.architecture());
    let c = &model.classifier;
    let _ = writeln!(
        s,
        "classifier: input {}, hidden {}, layers {}, classes {}",
        c.input_dim(),
        c.hidden(),
        c.layers.len(),
        c.num_classes()
    );
    if let Some(sf) = &model.sf {
        let _ = writeln!(
            s,
            "spatial filter: G={}, D={}, K={}, channels {:?}",
            sf.num_geometries(),
            sf.num_directions(),
            sf.num_bins(),
            sf.channels()
        );
    }
    let _ = writeln!(s, "accepted channel counts: {:?}", model.accepted_channels());
    for (group, n) in model.param_counts() {
        let _ = writeln!(s, "params {group:?}: {n}");
    }
    let _ = writeln!(s, "params total: {}", model.num_params());
    s
}

fn inspect_cmd(a: InspectArgs) -> CliResult<()> {
    let path = required(a.path, "path")?;
    let bytes = std::fs::read(&path).map_err(|e| with_path(&path, e.into()))?;
    let text = match bytes.get(..4) {
        Some(b"MCAM") => inspect_model(&Model::from_bytes(&bytes).map_err(|e| with_path(&path, e))?),
        Some(b"MGBF") => {
            let bank = BeamformerBank::read_from(bytes.as_slice()).map_err(|e| with_path(&path, e))?;
            let mut s = format!(
                "beamformer bank: G={}, D={}, K={}\n",
                bank.num_geometries(),
                bank.num_directions(),
                bank.num_bins()
            );
            for g in 0..bank.num_geometries() {
                let _ = writeln!(s, "geometry {g}: {} channels", bank.channels(g));
            }
            s
        }
        Some(b"MGST") => {
            let st = GlobalStats::read_from(bytes.as_slice()).map_err(|e| with_path(&path, e))?;
            format!("DFT statistics: {} dims\n", st.dims())
        }
        Some(b"RIFF") => {
            let audio = read_wav(&path).map_err(|e| with_path(&path, e))?;
            format!(
                "wav: {} Hz, {} channels, {} samples\n",
                audio.sample_rate,
                audio.num_channels(),
                audio.num_samples()
            )
        }
        _ => {
            let g = std::str::from_utf8(&bytes)
                .ok()
                .and_then(|t| ArrayGeometry::from_json_str(t).ok())
                .ok_or_else(|| usage(format!("{}: unrecognized file type", path.display())))?;
            let mut s = format!("geometry '{}': {} sensors\n", g.id(), g.num_sensors());
            for row in g.pairwise_distances() {
                let cells: Vec<String> = row.iter().map(|d| format!("{:.4}", d)).collect();
                let _ = writeln!(s, "  {}", cells.join(" "));
            }
            s
        }
    };
    out!("{text}");
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let file: FileConfig = match &cli.config {
        Some(p) => load_config(p)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let threads = cli.threads.or(file.threads).unwrap_or(1);
    if threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    match cli.command {
        Command::DesignBank(a) => design_bank_cmd(config::merge_design_bank(a, file.design_bank)),
        Command::Simulate(a) => simulate_cmd(config::merge_simulate(a, file.simulate), seed),
        Command::Enhance(a) => enhance_cmd(config::merge_enhance(a, file.enhance)),
        Command::Train(a) => train_cmd(config::merge_train(a, file.train), seed),
        Command::Eval(a) => eval_cmd(config::merge_eval(a, file.eval)),
        Command::Inspect(a) => inspect_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
