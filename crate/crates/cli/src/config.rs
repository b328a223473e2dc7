//! Pipeline configuration: defaults, TOML file, and `key=value` overrides
//! applied in that order (later wins).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spikesearch::arch::FASHION_INPUT;
use spikesearch::convert::{BitConfig, Rounding};
use spikesearch::dataset::DatasetFiles;
use spikesearch::mapper::ChipModel;
use spikesearch::retrieval::SearchConfig;
use spikesearch::snn::{InitialPotential, Readout};
use spikesearch::sweep::Dynamics;
use spikesearch::{Architecture, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Channel string such as `32-64-10`.
    pub arch: String,
    pub master_seed: u64,
    /// Independently trained networks; seed index 0 is the primary model.
    pub seeds: usize,
    pub data: DataConfig,
    pub train: TrainSection,
    pub convert: ConvertSection,
    pub chip: ChipModel,
    pub sim: SimSection,
    pub search: SearchSection,
    pub sweep: SweepSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            arch: "32-64-10".into(),
            master_seed: 0,
            seeds: 5,
            data: DataConfig::default(),
            train: TrainSection::default(),
            convert: ConvertSection::default(),
            chip: ChipModel::default(),
            sim: SimSection::default(),
            search: SearchSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dir: PathBuf,
    pub files: DatasetFiles,
    pub validation_fraction: f64,
    /// Use only the first `n` training images (before the split).
    pub train_limit: Option<usize>,
    /// Use only the first `n` test images.
    pub test_limit: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data/fashion-mnist"),
            files: DatasetFiles::default(),
            validation_fraction: 0.1,
            train_limit: None,
            test_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub momentum: f64,
    pub dropout_rate: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            lr_decay: t.lr_decay,
            decay_every: t.decay_every,
            momentum: t.momentum,
            dropout_rate: t.dropout_rate,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            lr_decay: self.lr_decay,
            decay_every: self.decay_every,
            momentum: self.momentum,
            dropout_rate: self.dropout_rate,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvertSection {
    pub weight_bits: u32,
    pub bias_bits: u32,
    /// Calibration images drawn from the training split.
    pub calibration: usize,
    pub rounding: Rounding,
}

impl Default for ConvertSection {
    fn default() -> Self {
        Self {
            weight_bits: 9,
            bias_bits: 9,
            calibration: 1024,
            rounding: Rounding::Truncate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    /// Time-step counts evaluated on the full test set and corpus.
    pub steps: Vec<u32>,
    pub leak_shift: u32,
    pub initial_potential: InitialPotential,
    /// How penultimate-layer probes become embeddings.
    pub readout: Readout,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            steps: vec![16, 128],
            leak_shift: 0,
            initial_potential: InitialPotential::HalfThreshold,
            readout: Readout::Integrated,
        }
    }
}

impl SimSection {
    pub fn dynamics(&self) -> Dynamics {
        Dynamics {
            leak_shift: self.leak_shift,
            initial_potential: self.initial_potential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub ks: Vec<usize>,
    /// Truncated ranking depth for mAP (not comparable to full depth).
    pub depth: Option<usize>,
    /// Evaluate only the first `n` test queries.
    pub queries: Option<usize>,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            ks: vec![1, 3],
            depth: None,
            queries: None,
        }
    }
}

impl SearchSection {
    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            ks: self.ks.clone(),
            depth: self.depth,
            ..SearchConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub steps: Vec<u32>,
    /// Test images evaluated per (T, seed).
    pub subset: usize,
    /// Training-split images forming the sweep's retrieval corpus; 0 skips
    /// retrieval metrics in the sweep.
    pub corpus: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            steps: vec![4, 8, 16, 32, 64, 128],
            subset: 2000,
            corpus: 5000,
        }
    }
}

impl Config {
    pub fn architecture(&self) -> Result<Architecture, CliError> {
        Architecture::parse(&self.arch, FASHION_INPUT).map_err(|e| CliError::config("arch", e.to_string()))
    }

    pub fn bits(&self) -> Result<BitConfig, CliError> {
        BitConfig::new(self.convert.weight_bits, self.convert.bias_bits)
            .map_err(|e| CliError::config("convert.weight_bits", e.to_string()))
    }

    /// Checks every field and normalizes step lists (sorted, deduplicated).
    pub fn validate(mut self) -> Result<Self, CliError> {
        self.architecture()?;
        if self.seeds == 0 {
            return Err(CliError::config("seeds", "must be at least 1"));
        }
        for (field, bits) in [
            ("convert.weight_bits", self.convert.weight_bits),
            ("convert.bias_bits", self.convert.bias_bits),
        ] {
            if !(2..=31).contains(&bits) {
                return Err(CliError::config(field, format!("must be between 2 and 31, got {bits}")));
            }
        }
        if self.convert.calibration == 0 {
            return Err(CliError::config("convert.calibration", "must be at least 1"));
        }
        let f = self.data.validation_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(CliError::config("data.validation_fraction", "must lie strictly between 0 and 1"));
        }
        if self.data.train_limit == Some(0) || self.data.test_limit == Some(0) {
            return Err(CliError::config("data", "limits must be positive"));
        }
        self.to_train_config_checked()?;
        normalize_steps("sim.steps", &mut self.sim.steps)?;
        normalize_steps("sweep.steps", &mut self.sweep.steps)?;
        if self.sim.leak_shift >= 31 {
            return Err(CliError::config("sim.leak_shift", "must be below 31"));
        }
        if self.search.ks.is_empty() || self.search.ks.contains(&0) {
            return Err(CliError::config("search.ks", "needs at least one k, all k ≥ 1"));
        }
        self.search.ks.sort_unstable();
        self.search.ks.dedup();
        let max_k = *self.search.ks.last().unwrap_or(&1);
        if let Some(d) = self.search.depth {
            if d < max_k {
                return Err(CliError::config("search.depth", format!("depth {d} is below the largest k {max_k}")));
            }
        }
        if self.search.queries == Some(0) {
            return Err(CliError::config("search.queries", "must be positive"));
        }
        if self.sweep.subset == 0 {
            return Err(CliError::config("sweep.subset", "must be positive"));
        }
        self.chip.validate().map_err(|e| CliError::config("chip", e.to_string()))?;
        Ok(self)
    }

    fn to_train_config_checked(&self) -> Result<(), CliError> {
        self.train
            .to_train_config(0)
            .validate()
            .map_err(|e| CliError::config("train", e.to_string()))
    }

    /// Builds a config from an optional TOML file plus `key=value` overrides.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::config(path.display().to_string(), e.to_string()))?
            }
            None => toml::Table::new(),
        };
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let cfg: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::config("config", e.to_string()))?;
        cfg.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }
}

fn normalize_steps(field: &str, steps: &mut Vec<u32>) -> Result<(), CliError> {
    if steps.is_empty() || steps.contains(&0) {
        return Err(CliError::config(field, "needs at least one time-step count, all ≥ 1"));
    }
    steps.sort_unstable();
    steps.dedup();
    Ok(())
}

/// Sets a dotted `key=value` in `table`; the value is parsed as TOML and
/// falls back to a plain string.
pub fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::config(item, "override must look like key=value"))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(key, format!("`{part}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
