//! `metrics.json` and `report.md` assembled from the stored stage artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spikesearch::retrieval::SearchMetrics;
use spikesearch::sweep::{self, ComparisonRow, OpCountReport, SweepPoint, SweepResult};

use crate::config::Config;
use crate::error::CliError;
use crate::manifest::write_atomic;
use crate::pipeline::{
    seed_convert_json, train_summaries, ConvertSummary, DATASET_JSON, FLOORPLAN_CSV, MAPPING_JSON, METRICS_JSON,
    REPORT_MD, SEARCH_JSON, SIMULATION_JSON, SWEEP_JSON,
};
use crate::stages::{self, DatasetSummary, MappingSummary, SimulationSummary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnMetrics {
    pub test_accuracy: Vec<f64>,
    pub min: f64,
    pub median: f64,
    pub best_epochs: Vec<usize>,
    pub parameter_count: usize,
    pub dense_macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerConversion {
    pub layer: usize,
    pub param_scale: f64,
    pub threshold: i32,
    pub mean_spikerate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnnMetrics {
    pub steps: u32,
    pub test_accuracy: f64,
    pub accuracy_drop_vs_ann: f64,
    pub ops: OpCountReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub arch: String,
    pub seeds: usize,
    pub dataset: DatasetSummary,
    pub ann: AnnMetrics,
    pub conversion: Vec<LayerConversion>,
    pub snn: Vec<SnnMetrics>,
    pub retrieval: BTreeMap<String, SearchMetrics>,
    pub mapping: MappingSummary,
    pub sweep: Vec<SweepPoint>,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => 0.0,
        n if n % 2 == 1 => v[n / 2],
        n => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

pub fn collect_metrics(dir: &Path, cfg: &Config) -> Result<Metrics, CliError> {
    let arch = cfg.architecture()?;
    let train = train_summaries(dir, cfg.seeds)?;
    let test_accuracy: Vec<f64> = train.iter().map(|t| t.test_accuracy).collect();
    let ann = AnnMetrics {
        min: test_accuracy.iter().copied().fold(f64::INFINITY, f64::min),
        median: median(&test_accuracy),
        best_epochs: train.iter().map(|t| t.report.best_epoch).collect(),
        test_accuracy,
        parameter_count: arch.parameter_count(),
        dense_macs: arch.dense_macs(),
    };
    let primary = ann.test_accuracy[0];
    let conv: ConvertSummary = stages::read_json(&dir.join(seed_convert_json(0)))?;
    let conversion = conv
        .report
        .layers
        .iter()
        .map(|l| LayerConversion {
            layer: l.layer,
            param_scale: l.param_scale,
            threshold: l.threshold,
            mean_spikerate: l.mean_spikerate,
        })
        .collect();
    let sims: Vec<SimulationSummary> = stages::read_json(&dir.join(SIMULATION_JSON))?;
    let snn = sims
        .into_iter()
        .map(|s| SnnMetrics {
            steps: s.steps,
            accuracy_drop_vs_ann: primary - s.test_accuracy,
            test_accuracy: s.test_accuracy,
            ops: s.test_ops,
        })
        .collect();
    let sweep: SweepResult = stages::read_json(&dir.join(SWEEP_JSON))?;
    Ok(Metrics {
        arch: cfg.arch.clone(),
        seeds: cfg.seeds,
        dataset: stages::read_json(&dir.join(DATASET_JSON))?,
        ann,
        conversion,
        snn,
        retrieval: stages::read_json(&dir.join(SEARCH_JSON))?,
        mapping: stages::read_json(&dir.join(MAPPING_JSON))?,
        sweep: sweep.summary(),
    })
}

pub fn render_markdown(m: &Metrics, floorplan: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Spiking image search report\n");
    let _ = writeln!(
        out,
        "Architecture `{}`, {} independently trained seeds. Training split {} images, validation {}, test {}.\n",
        m.arch, m.seeds, m.dataset.train_split, m.dataset.validation_split, m.dataset.test_images
    );

    let _ = writeln!(out, "## Float baseline\n");
    let _ = writeln!(out, "| Seed | Test accuracy (%) | Best epoch |\n|---:|---:|---:|");
    for (i, (a, e)) in m.ann.test_accuracy.iter().zip(&m.ann.best_epochs).enumerate() {
        let _ = writeln!(out, "| {i} | {:.2} | {e} |", a * 100.0);
    }
    let _ = writeln!(
        out,
        "\nMedian {:.2} %, minimum {:.2} %. {} parameters, {} multiply-accumulates per image.\n",
        m.ann.median * 100.0,
        m.ann.min * 100.0,
        m.ann.parameter_count,
        m.ann.dense_macs
    );

    let _ = writeln!(out, "## Conversion (seed 0)\n");
    let _ = writeln!(out, "| Layer | param_scale | Threshold | Mean calibration rate |\n|---:|---:|---:|---:|");
    for l in &m.conversion {
        let _ = writeln!(out, "| {} | {:.4} | {} | {:.4} |", l.layer, l.param_scale, l.threshold, l.mean_spikerate);
    }

    let _ = writeln!(out, "\n## Classification and retrieval (seed 0)\n");
    let mut rows = Vec::new();
    if let Some(r) = m.retrieval.get("ann") {
        rows.push(row("ANN", m.ann.test_accuracy[0], r));
    }
    for s in &m.snn {
        if let Some(r) = m.retrieval.get(&stages::snn_source(s.steps)) {
            rows.push(row(&format!("SNN ({})", s.steps), s.test_accuracy, r));
        }
    }
    out.push_str(&sweep::comparison_markdown(&rows));
    if let Some(r) = m.retrieval.get("ann") {
        let depth = r
            .map_depth
            .map(|d| format!("truncated at depth {d} (not comparable to full depth)"))
            .unwrap_or_else(|| "over the full corpus".into());
        let _ = writeln!(
            out,
            "\n{} queries against a corpus of {} training-split embeddings; mAP {depth}.",
            r.queries, r.corpus
        );
    }

    let _ = writeln!(out, "\n## Time-step tradeoff\n");
    out.push_str(&sweep::curve_markdown(&m.sweep));

    let _ = writeln!(out, "\n## Operation counts (seed 0, full test set)\n");
    let ops: Vec<OpCountReport> = m.snn.iter().map(|s| s.ops.clone()).collect();
    out.push_str(&sweep::ops_markdown(&ops));
    let _ = writeln!(
        out,
        "\nOperation counts stand in for energy measurements, which need power instrumentation of physical hardware."
    );

    let _ = writeln!(out, "\n## Core placement\n");
    if m.mapping.deployable {
        let _ = writeln!(
            out,
            "{} of {} cores used; per layer: {:?}.\n\n```\n{}```",
            m.mapping.cores_used, m.mapping.cores_available, m.mapping.layer_cores, floorplan
        );
    } else if let Some(e) = &m.mapping.error {
        let _ = writeln!(out, "Not deployable: {e}.");
    }
    out
}

fn row(name: &str, accuracy: f64, r: &SearchMetrics) -> ComparisonRow {
    ComparisonRow {
        model: name.into(),
        accuracy,
        top1: r.top(1).unwrap_or(f64::NAN),
        top3: r.top(3).unwrap_or(f64::NAN),
        map: r.map,
    }
}

pub fn write_report(dir: &Path, cfg: &Config) -> Result<(), CliError> {
    let metrics = collect_metrics(dir, cfg)?;
    stages::write_json(&dir.join(METRICS_JSON), &metrics)?;
    let floorplan = std::fs::read_to_string(dir.join(FLOORPLAN_CSV)).unwrap_or_default();
    write_atomic(&dir.join(REPORT_MD), render_markdown(&metrics, &floorplan).as_bytes())
}
