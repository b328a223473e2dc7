//! Time-step sweeps, op-count energy proxies and report tables.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convert::SnnModel;
use crate::dataset::LabeledImages;
use crate::retrieval::{self, EmbeddingSet, Index, RetrievalError, SearchConfig};
use crate::snn::{classify, embed, InitialPotential, OpCounters, ProbeRecord, Readout, SimConfig, SimError, Simulator};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("time-step list is empty")]
    NoSteps,
    #[error("evaluation set is empty")]
    EmptyEval,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const SIM_CHUNK: usize = 512;

/// Simulation outputs of a labelled image set at several time-step counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSet {
    pub steps: Vec<u32>,
    /// `predictions[j][i]`: class of image `i` after `steps[j]` steps.
    pub predictions: Vec<Vec<usize>>,
    /// Flattened penultimate embeddings per checkpoint, when requested.
    pub embeddings: Option<Vec<Vec<f32>>>,
    pub embedding_dim: usize,
    pub ops: Vec<OpCountReport>,
    pub labels: Vec<u8>,
    pub seconds: f64,
}

impl SimulatedSet {
    pub fn accuracy(&self, j: usize) -> f64 {
        crate::ann::accuracy(&self.predictions[j], &self.labels)
    }

    /// Moves the embeddings of checkpoint `j` out of the set.
    pub fn take_embedding_set(&mut self, j: usize, source: &str) -> Option<Result<EmbeddingSet, RetrievalError>> {
        let data = std::mem::take(self.embeddings.as_mut()?.get_mut(j)?);
        Some(EmbeddingSet::new(self.embedding_dim, data, self.labels.clone(), source))
    }

    pub fn embedding_set(&self, j: usize, source: &str) -> Option<Result<EmbeddingSet, RetrievalError>> {
        let emb = self.embeddings.as_ref()?;
        Some(EmbeddingSet::new(self.embedding_dim, emb[j].clone(), self.labels.clone(), source))
    }
}

/// Neuron dynamics shared by every simulation of a set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dynamics {
    pub leak_shift: u32,
    pub initial_potential: InitialPotential,
}

/// Runs every image once up to the largest of `steps` (sorted ascending)
/// and reads classification, embeddings and op counts at each checkpoint.
pub fn simulate_set(
    snn: &SnnModel,
    images: &LabeledImages,
    steps: &[u32],
    dynamics: Dynamics,
    readout: Option<Readout>,
) -> Result<SimulatedSet, SweepError> {
    if steps.is_empty() {
        return Err(SweepError::NoSteps);
    }
    let started = Instant::now();
    let sim = Simulator::new(snn);
    let output = snn.num_spiking_layers() - 1;
    let penultimate = output - 1;
    let cfg = SimConfig {
        num_time_steps: *steps.last().unwrap_or(&1),
        leak_shift: dynamics.leak_shift,
        probe_layers: vec![penultimate, output],
        record_raster: false,
        initial_potential: dynamics.initial_potential,
    };
    let threshold = snn.threshold(penultimate);
    let dim = snn.shapes()[penultimate].len();
    let n = images.len();
    let mut predictions = vec![Vec::with_capacity(n); steps.len()];
    let mut embeddings = readout.map(|_| vec![Vec::with_capacity(n * dim); steps.len()]);
    let mut records: Vec<Vec<ProbeRecord>> = vec![Vec::with_capacity(n); steps.len()];
    // Chunked so that per-image intermediates stay bounded on large sets.
    for start in (0..n).step_by(SIM_CHUNK) {
        let per_image: Vec<Result<Vec<(usize, Option<Vec<f32>>, ProbeRecord)>, SimError>> = (start..(start + SIM_CHUNK).min(n))
            .into_par_iter()
            .map(|i| {
                let records = sim.run_checkpoints(images.image(i), &cfg, steps)?;
                records
                    .into_iter()
                    .map(|mut r| {
                        let class = classify(&r, output)?;
                        let e = readout.map(|ro| embed(&r, penultimate, threshold, ro)).transpose()?;
                        r.probes.clear();
                        Ok((class, e, r))
                    })
                    .collect()
            })
            .collect();
        for item in per_image {
            for (j, (class, e, r)) in item?.into_iter().enumerate() {
                predictions[j].push(class);
                if let (Some(all), Some(e)) = (embeddings.as_mut(), e) {
                    all[j].extend_from_slice(&e);
                }
                records[j].push(r);
            }
        }
    }
    let macs = snn.arch.dense_macs();
    Ok(SimulatedSet {
        steps: steps.to_vec(),
        predictions,
        embeddings,
        embedding_dim: dim,
        ops: records.iter().zip(steps).map(|(r, &t)| count_ops(r, t, macs)).collect(),
        labels: images.labels.clone(),
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Aggregate operation counts over a batch of single-image runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpCountReport {
    pub steps: u32,
    pub inferences: usize,
    pub synaptic_events: u64,
    pub neuron_updates: u64,
    pub spikes_per_layer: Vec<u64>,
    pub total_spikes: u64,
    /// Multiply-accumulates of one float forward pass.
    pub ann_macs: u64,
}

impl OpCountReport {
    pub fn events_per_inference(&self) -> f64 {
        self.synaptic_events as f64 / self.inferences.max(1) as f64
    }

    pub fn updates_per_inference(&self) -> f64 {
        self.neuron_updates as f64 / self.inferences.max(1) as f64
    }

    pub fn spikes_per_inference(&self) -> f64 {
        self.total_spikes as f64 / self.inferences.max(1) as f64
    }

    /// Synaptic events per inference over the float network's MACs.
    pub fn events_per_mac(&self) -> f64 {
        self.events_per_inference() / self.ann_macs.max(1) as f64
    }
}

pub fn count_ops(records: &[ProbeRecord], steps: u32, ann_macs: u64) -> OpCountReport {
    let layers = records.iter().map(|r| r.layer_spikes.len()).max().unwrap_or(0);
    let mut ops = OpCounters::default();
    let mut spikes_per_layer = vec![0u64; layers];
    for r in records {
        ops += r.ops;
        for (acc, s) in spikes_per_layer.iter_mut().zip(&r.layer_spikes) {
            *acc += s;
        }
    }
    OpCountReport {
        steps,
        inferences: records.len(),
        synaptic_events: ops.synaptic_events,
        neuron_updates: ops.neuron_updates,
        total_spikes: spikes_per_layer.iter().sum(),
        spikes_per_layer,
        ann_macs,
    }
}

/// Metrics of one model at one time-step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub steps: u32,
    pub seed: u64,
    pub accuracy: f64,
    pub top1: Option<f64>,
    pub top3: Option<f64>,
    pub map: Option<f64>,
    pub mean_spikes_per_layer: Vec<f64>,
    pub synaptic_events_per_inference: f64,
    pub neuron_updates_per_inference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub seed: u64,
    pub images: usize,
    pub seconds_per_inference: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation (`n - 1`; 0 for a single value).
pub fn mean_std(values: &[f64]) -> MeanStd {
    if values.is_empty() {
        return MeanStd { mean: 0.0, std: 0.0 };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MeanStd { mean, std }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub steps: u32,
    pub seeds: usize,
    pub accuracy: MeanStd,
    pub top1: Option<MeanStd>,
    pub top3: Option<MeanStd>,
    pub map: Option<MeanStd>,
    pub synaptic_events: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
    /// Wall-clock is kept apart from the metrics so that those stay reproducible.
    pub timings: Vec<Timing>,
}

impl SweepResult {
    pub fn summary(&self) -> Vec<SweepPoint> {
        let mut steps: Vec<u32> = self.records.iter().map(|r| r.steps).collect();
        steps.sort_unstable();
        steps.dedup();
        steps
            .into_iter()
            .map(|t| {
                let rs: Vec<&SweepRecord> = self.records.iter().filter(|r| r.steps == t).collect();
                let opt = |f: fn(&SweepRecord) -> Option<f64>| {
                    let v: Option<Vec<f64>> = rs.iter().map(|r| f(r)).collect();
                    v.map(|v| mean_std(&v))
                };
                SweepPoint {
                    steps: t,
                    seeds: rs.len(),
                    accuracy: mean_std(&rs.iter().map(|r| r.accuracy).collect::<Vec<_>>()),
                    top1: opt(|r| r.top1),
                    top3: opt(|r| r.top3),
                    map: opt(|r| r.map),
                    synaptic_events: mean_std(&rs.iter().map(|r| r.synaptic_events_per_inference).collect::<Vec<_>>()),
                }
            })
            .collect()
    }

    pub fn point(&self, steps: u32) -> Option<SweepPoint> {
        self.summary().into_iter().find(|p| p.steps == steps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub steps: Vec<u32>,
    pub dynamics: Dynamics,
    pub readout: Readout,
    /// Retrieval metrics need a corpus; `None` skips them.
    pub search: Option<SearchConfig>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            steps: vec![4, 8, 16, 32, 64, 128],
            dynamics: Dynamics::default(),
            readout: Readout::default(),
            search: Some(SearchConfig::default()),
        }
    }
}

/// Sweeps every `(seed, model)` over `cfg.steps` on `eval`; retrieval
/// metrics use `corpus` embeddings from the same model and time-step count.
pub fn sweep_time_steps(
    models: &[(u64, &SnnModel)],
    eval: &LabeledImages,
    corpus: Option<&LabeledImages>,
    cfg: &SweepConfig,
) -> Result<SweepResult, SweepError> {
    if cfg.steps.is_empty() {
        return Err(SweepError::NoSteps);
    }
    if eval.is_empty() {
        return Err(SweepError::EmptyEval);
    }
    let mut steps = cfg.steps.clone();
    steps.sort_unstable();
    steps.dedup();
    let search = cfg.search.as_ref().zip(corpus);
    let readout = search.map(|_| cfg.readout);
    let mut result = SweepResult {
        records: Vec::new(),
        timings: Vec::new(),
    };
    for &(seed, snn) in models {
        let queries = simulate_set(snn, eval, &steps, cfg.dynamics, readout)?;
        let base = match search {
            Some((_, c)) => Some(simulate_set(snn, c, &steps, cfg.dynamics, readout)?),
            None => None,
        };
        for (j, &t) in steps.iter().enumerate() {
            let (mut top1, mut top3, mut map) = (None, None, None);
            if let (Some((scfg, _)), Some(base)) = (search, base.as_ref()) {
                let tag = format!("snn({t})");
                if let (Some(c), Some(q)) = (base.embedding_set(j, &tag), queries.embedding_set(j, &tag)) {
                    let index = Index::build(c?)?;
                    let m = retrieval::evaluate(&index, &q?, scfg)?;
                    top1 = m.top(1);
                    top3 = m.top(3);
                    map = Some(m.map);
                }
            }
            let ops = &queries.ops[j];
            let n = ops.inferences.max(1) as f64;
            result.records.push(SweepRecord {
                steps: t,
                seed,
                accuracy: queries.accuracy(j),
                top1,
                top3,
                map,
                mean_spikes_per_layer: ops.spikes_per_layer.iter().map(|&s| s as f64 / n).collect(),
                synaptic_events_per_inference: ops.events_per_inference(),
                neuron_updates_per_inference: ops.updates_per_inference(),
            });
        }
        result.timings.push(Timing {
            seed,
            images: eval.len(),
            seconds_per_inference: queries.seconds / eval.len() as f64,
        });
    }
    result.records.sort_by_key(|r| (r.steps, r.seed));
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SweepCsvRow {
    steps: u32,
    seed: u64,
    accuracy: f64,
    top1: Option<f64>,
    top3: Option<f64>,
    map: Option<f64>,
    synaptic_events_per_inference: f64,
    neuron_updates_per_inference: f64,
    mean_spikes_per_layer: String,
}

/// One row per `(steps, seed)`; spikes per layer are `;`-separated.
pub fn sweep_csv(result: &SweepResult) -> Result<String, SweepError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record([
        "steps",
        "seed",
        "accuracy",
        "top1",
        "top3",
        "map",
        "synaptic_events_per_inference",
        "neuron_updates_per_inference",
        "mean_spikes_per_layer",
    ])?;
    for r in &result.records {
        w.serialize(SweepCsvRow {
            steps: r.steps,
            seed: r.seed,
            accuracy: r.accuracy,
            top1: r.top1,
            top3: r.top3,
            map: r.map,
            synaptic_events_per_inference: r.synaptic_events_per_inference,
            neuron_updates_per_inference: r.neuron_updates_per_inference,
            mean_spikes_per_layer: r
                .mean_spikes_per_layer
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        })?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv output is utf-8"))
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRecord>, SweepError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in rdr.deserialize::<SweepCsvRow>() {
        let row = row?;
        out.push(SweepRecord {
            steps: row.steps,
            seed: row.seed,
            accuracy: row.accuracy,
            top1: row.top1,
            top3: row.top3,
            map: row.map,
            mean_spikes_per_layer: row
                .mean_spikes_per_layer
                .split(';')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().unwrap_or(f64::NAN))
                .collect(),
            synaptic_events_per_inference: row.synaptic_events_per_inference,
            neuron_updates_per_inference: row.neuron_updates_per_inference,
        });
    }
    Ok(out)
}

fn opt(v: Option<MeanStd>) -> (String, String) {
    v.map(|m| (m.mean.to_string(), m.std.to_string()))
        .unwrap_or_default()
}

/// Plot data: one row per time-step count with mean and std of each metric.
pub fn curve_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from(
        "steps,seeds,accuracy_mean,accuracy_std,top1_mean,top1_std,top3_mean,top3_std,map_mean,map_std,events_mean,events_std\n",
    );
    for p in points {
        let (t1m, t1s) = opt(p.top1);
        let (t3m, t3s) = opt(p.top3);
        let (mm, ms) = opt(p.map);
        let _ = writeln!(
            out,
            "{},{},{},{},{t1m},{t1s},{t3m},{t3s},{mm},{ms},{},{}",
            p.steps, p.seeds, p.accuracy.mean, p.accuracy.std, p.synaptic_events.mean, p.synaptic_events.std
        );
    }
    out
}

/// One row of the model comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub accuracy: f64,
    pub top1: f64,
    pub top3: f64,
    pub map: f64,
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("model,accuracy,top1,top3,map\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.model, r.accuracy, r.top1, r.top3, r.map);
    }
    out
}

pub fn comparison_markdown(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(
        "| Model | Test accuracy (%) | Top-1 (%) | Top-3 (%) | mAP |\n|---|---:|---:|---:|---:|\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {:.2} | {:.2} | {:.2} | {:.4} |",
            r.model,
            r.accuracy * 100.0,
            r.top1 * 100.0,
            r.top3 * 100.0,
            r.map
        );
    }
    out
}

fn pct(v: Option<MeanStd>) -> String {
    v.map(|m| format!("{:.2} ± {:.2}", m.mean * 100.0, m.std * 100.0))
        .unwrap_or_else(|| "n/a".into())
}

pub fn curve_markdown(points: &[SweepPoint]) -> String {
    let mut out = String::from(
        "| T | Seeds | Accuracy (%) | Top-1 (%) | Top-3 (%) | mAP | Synaptic events / inference |\n|---:|---:|---:|---:|---:|---:|---:|\n",
    );
    for p in points {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {:.0} |",
            p.steps,
            p.seeds,
            pct(Some(p.accuracy)),
            pct(p.top1),
            pct(p.top3),
            p.map
                .map(|m| format!("{:.4} ± {:.4}", m.mean, m.std))
                .unwrap_or_else(|| "n/a".into()),
            p.synaptic_events.mean
        );
    }
    out
}

pub fn ops_markdown(reports: &[OpCountReport]) -> String {
    let mut out = String::from(
        "| T | Spikes / inference | Synaptic events / inference | Neuron updates / inference | Float MACs | Events / MAC |\n|---:|---:|---:|---:|---:|---:|\n",
    );
    for r in reports {
        let _ = writeln!(
            out,
            "| {} | {:.0} | {:.0} | {:.0} | {} | {:.4} |",
            r.steps,
            r.spikes_per_inference(),
            r.events_per_inference(),
            r.updates_per_inference(),
            r.ann_macs,
            r.events_per_mac()
        );
    }
    out
}
