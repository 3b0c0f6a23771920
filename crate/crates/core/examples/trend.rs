//! Runs the geometry-mismatch experiment and prints the accuracy table.
//!
//! `cargo run --release --example trend -- [work_dir] [cue_db] [train_per_class] [seed]`

use mgsf::trend::{run_trend, TrendConfig};

fn main() -> mgsf::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let work = args.get(1).cloned().unwrap_or_else(|| "trend_out".into());
    let mut cfg = TrendConfig::default();
    if let Some(v) = args.get(2) {
        cfg.cue_level_db = v.parse().expect("cue level in dB");
    }
    if let Some(v) = args.get(3) {
        cfg.train_per_class = v.parse().expect("utterances per class");
    }
    if let Some(v) = args.get(4) {
        cfg.seed = v.parse().expect("seed");
    }
    std::fs::create_dir_all(&work)?;
    let report = run_trend(&cfg, &work)?;
    for (name, r) in &report.reports {
        let last = r.epochs.last();
        println!(
            "{name}: initial {:.3}, best val {:.3} at epoch {}, last val acc {:.3}",
            r.initial_train_loss,
            r.best_val_loss,
            r.best_epoch,
            last.map_or(f64::NAN, |e| e.val_utt_acc)
        );
    }
    print!("{}", report.to_csv());
    print!("{}", report.summary_csv());
    Ok(())
}
