//! Stage bodies shared by the individual subcommands and the pipeline.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spikesearch::ann::{AnnModel, TrainReport};
use spikesearch::convert::{self, ConversionReport, ConvertConfig, SnnModel};
use spikesearch::dataset::{self, LabeledImages, SplitSpec, NUM_CLASSES};
use spikesearch::mapper::{self, DeploymentError, Placement};
use spikesearch::retrieval::{self, EmbeddingSet, Index, SearchMetrics};
use spikesearch::sweep::{self, OpCountReport, SweepConfig, SweepResult};

use crate::config::Config;
use crate::error::CliError;
use crate::manifest::{sha256_file, write_atomic};
use crate::seeds::{derive_seed, Stage};

/// Normalized dataset with the stratified train/validation split applied.
#[derive(Debug, Clone)]
pub struct Data {
    pub train: LabeledImages,
    pub validation: LabeledImages,
    pub test: LabeledImages,
    pub summary: DatasetSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub train_images: usize,
    pub test_images: usize,
    pub train_split: usize,
    pub validation_split: usize,
    pub split_seed: u64,
    pub train_class_counts: Vec<usize>,
    pub test_class_counts: Vec<usize>,
    pub source_sha256: BTreeMap<String, String>,
}

fn class_counts(labels: &[u8]) -> Vec<usize> {
    let mut c = vec![0; NUM_CLASSES];
    for &l in labels {
        c[l as usize] += 1;
    }
    c
}

pub fn data_files(cfg: &Config) -> Vec<std::path::PathBuf> {
    let f = &cfg.data.files;
    [&f.train_images, &f.train_labels, &f.test_images, &f.test_labels]
        .iter()
        .map(|name| cfg.data.dir.join(name))
        .collect()
}

pub fn load_data(cfg: &Config) -> Result<Data, CliError> {
    let (train_raw, test_raw) = dataset::load_fashion_mnist(&cfg.data.dir, &cfg.data.files)?;
    let mut full = dataset::normalize(&train_raw);
    let mut test = dataset::normalize(&test_raw);
    if let Some(n) = cfg.data.train_limit {
        full = full.head(n);
    }
    if let Some(n) = cfg.data.test_limit {
        test = test.head(n);
    }
    let split_seed = derive_seed(cfg.master_seed, Stage::Split, 0);
    let (train, validation) = dataset::split(
        &full,
        SplitSpec {
            validation_fraction: cfg.data.validation_fraction,
            seed: split_seed,
        },
    )?;
    let mut source_sha256 = BTreeMap::new();
    for path in data_files(cfg) {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        source_sha256.insert(name, sha256_file(&path)?);
    }
    let summary = DatasetSummary {
        train_images: full.len(),
        test_images: test.len(),
        train_split: train.len(),
        validation_split: validation.len(),
        split_seed,
        train_class_counts: class_counts(&full.labels),
        test_class_counts: class_counts(&test.labels),
        source_sha256,
    };
    Ok(Data {
        train,
        validation,
        test,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub seed_index: usize,
    pub seed: u64,
    pub test_accuracy: f64,
    pub report: TrainReport,
}

pub fn train_seed(
    cfg: &Config,
    data: &Data,
    index: usize,
    mut on_epoch: impl FnMut(&spikesearch::ann::EpochStats),
) -> Result<(AnnModel, TrainSummary), CliError> {
    let seed = derive_seed(cfg.master_seed, Stage::Train, index as u64);
    let init = AnnModel::initialised(cfg.architecture()?, seed);
    let tc = cfg.train.to_train_config(seed);
    let (model, report) = init.train(&data.train, &data.validation, &tc, |s| on_epoch(s))?;
    let test_accuracy = model.evaluate(&data.test)?;
    Ok((
        model,
        TrainSummary {
            seed_index: index,
            seed,
            test_accuracy,
            report,
        },
    ))
}

pub fn calibration_set(cfg: &Config, data: &Data, index: usize) -> LabeledImages {
    data.train
        .sample(cfg.convert.calibration, derive_seed(cfg.master_seed, Stage::Calibration, index as u64))
}

pub fn convert_model(cfg: &Config, ann: &AnnModel, calibration: &LabeledImages) -> Result<(SnnModel, ConversionReport), CliError> {
    let cc = ConvertConfig {
        bits: cfg.bits()?,
        rounding: cfg.convert.rounding,
    };
    Ok(convert::convert(ann, calibration, &cc)?)
}

/// Steps before a worst-case constant input could overflow a 32-bit potential.
pub fn overflow_headroom(snn: &SnnModel) -> u64 {
    (0..snn.num_spiking_layers())
        .map(|l| {
            let per_step = snn.max_step_current(l).max(1) as u64;
            i32::MAX as u64 / per_step
        })
        .min()
        .unwrap_or(u64::MAX)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingSummary {
    pub deployable: bool,
    pub cores_used: usize,
    pub cores_available: usize,
    pub layer_cores: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<DeploymentError>,
}

impl MappingSummary {
    pub fn from_result(cfg: &Config, result: &Result<Placement, DeploymentError>) -> Self {
        match result {
            Ok(p) => Self {
                deployable: true,
                cores_used: p.cores_used(),
                cores_available: p.chip.cores_per_chip,
                layer_cores: p.layer_cores.clone(),
                error: None,
            },
            Err(e) => Self {
                deployable: false,
                cores_used: 0,
                cores_available: cfg.chip.cores_per_chip,
                layer_cores: Vec::new(),
                error: Some(e.clone()),
            },
        }
    }
}

pub fn penultimate_layer(ann: &AnnModel) -> usize {
    ann.arch.layers.len() - 2
}

pub fn ann_embeddings(ann: &AnnModel, images: &LabeledImages) -> Result<EmbeddingSet, CliError> {
    let layer = penultimate_layer(ann);
    let dim = ann.arch.shapes()[layer + 1].len();
    let data = ann.layer_outputs(images, layer)?;
    Ok(EmbeddingSet::new(dim, data, images.labels.clone(), "ann")?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub steps: u32,
    pub test_accuracy: f64,
    pub test_ops: OpCountReport,
}

pub fn snn_source(steps: u32) -> String {
    format!("snn({steps})")
}

pub fn search(corpus: EmbeddingSet, queries: &EmbeddingSet, cfg: &Config) -> Result<SearchMetrics, CliError> {
    let queries = match cfg.search.queries {
        Some(n) if n < queries.len() => queries.subset(&(0..n).collect::<Vec<_>>()),
        _ => queries.clone(),
    };
    let index = Index::build(corpus)?;
    Ok(retrieval::evaluate(&index, &queries, &cfg.search.search_config())?)
}

pub fn sweep_config(cfg: &Config) -> SweepConfig {
    SweepConfig {
        steps: cfg.sweep.steps.clone(),
        dynamics: cfg.sim.dynamics(),
        readout: cfg.sim.readout,
        search: (cfg.sweep.corpus > 0).then(|| cfg.search.search_config()),
    }
}

pub fn sweep_sets(cfg: &Config, data: &Data) -> (LabeledImages, Option<LabeledImages>) {
    let eval = data
        .test
        .sample(cfg.sweep.subset, derive_seed(cfg.master_seed, Stage::SweepSubset, 0));
    let corpus = (cfg.sweep.corpus > 0).then(|| {
        data.train
            .sample(cfg.sweep.corpus, derive_seed(cfg.master_seed, Stage::SweepCorpus, 0))
    });
    (eval, corpus)
}

pub fn run_sweep(cfg: &Config, data: &Data, models: &[(u64, &SnnModel)]) -> Result<SweepResult, CliError> {
    let (eval, corpus) = sweep_sets(cfg, data);
    Ok(sweep::sweep_time_steps(models, &eval, corpus.as_ref(), &sweep_config(cfg))?)
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn load_ann(path: &Path) -> Result<AnnModel, CliError> {
    Ok(AnnModel::from_bytes(&read_file(path)?)?)
}

pub fn load_snn(path: &Path) -> Result<SnnModel, CliError> {
    Ok(SnnModel::from_bytes(&read_file(path)?)?)
}

pub fn placement(cfg: &Config, snn: &SnnModel) -> Result<Placement, DeploymentError> {
    mapper::assign_cores(&snn.arch, &cfg.chip)
}
