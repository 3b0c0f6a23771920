//! TOML defaults. Command-line flags always win over the file.

use std::path::Path;

use serde::Deserialize;

use crate::{usage, CliResult, DesignBankArgs, EnhanceArgs, EvalArgs, SimulateArgs, TrainArgs};

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub design_bank: Option<DesignBankArgs>,
    pub simulate: Option<SimulateArgs>,
    pub enhance: Option<EnhanceArgs>,
    pub train: Option<TrainArgs>,
    pub eval: Option<EvalArgs>,
}

pub fn load_config(path: &Path) -> CliResult<FileConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Fills every unset flag from the file; lists count as unset when empty.
macro_rules! merge {
    ($name:ident, $ty:ty, opts: [$($o:ident),*], lists: [$($l:ident),*], flags: [$($f:ident),*]) => {
        pub fn $name(mut cli: $ty, file: Option<$ty>) -> $ty {
            if let Some(file) = file {
                $(if cli.$o.is_none() {
                    cli.$o = file.$o;
                })*
                $(if cli.$l.is_empty() {
                    cli.$l = file.$l;
                })*
                $(cli.$f |= file.$f;)*
            }
            cli
        }
    };
}

merge!(merge_design_bank, DesignBankArgs, opts: [directions, loading, wng_cap, out], lists: [geometry], flags: []);
merge!(
    merge_simulate,
    SimulateArgs,
    opts: [per_class, classes, duration, cue_db, noise_directions, azimuth, split, out],
    lists: [geometry, snr],
    flags: [append]
);
merge!(
    merge_enhance,
    EnhanceArgs,
    opts: [bank, input, output, trace, geometry_index, smoothing],
    lists: [],
    flags: [pcm16]
);
merge!(
    merge_train,
    TrainArgs,
    opts: [
        manifest, stage, init, bank, arch, epochs, lr, batch, hidden, layers, classes, filters,
        filter_noise, pool, val_fraction, clip, out, log
    ],
    lists: [geometries],
    flags: []
);
merge!(
    merge_eval,
    EvalArgs,
    opts: [manifest, model, baseline, group, out, plot_data],
    lists: [geometries, test_geometry, train_geometry],
    flags: []
);
