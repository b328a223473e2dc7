//! Resumable end-to-end run: every stage declares its config fragment,
//! inputs and outputs, and is skipped when the manifest shows the same key
//! and every recorded output still hashes to its recorded value.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use spikesearch::convert::ConversionReport;
use spikesearch::mapper::{placement_csv, render_floorplan};
use spikesearch::retrieval::{EmbeddingSet, SearchMetrics};
use spikesearch::sweep::{self, simulate_set, SweepResult};

use crate::config::Config;
use crate::error::CliError;
use crate::manifest::{sha256_file, sha256_hex, write_atomic, RunManifest, StageRecord};
use crate::report;
use crate::stages::{self, Data, MappingSummary, SimulationSummary, TrainSummary};

pub const DATASET_JSON: &str = "dataset.json";
pub const MODEL_ANNW: &str = "model.annw";
pub const MODEL_SNNW: &str = "model.snnw";
pub const PLACEMENT_CSV: &str = "placement.csv";
pub const FLOORPLAN_CSV: &str = "floorplan.csv";
pub const MAPPING_JSON: &str = "mapping.json";
pub const ANN_TRAIN_EMB: &str = "ann.train.emb";
pub const ANN_TEST_EMB: &str = "ann.test.emb";
pub const TRAIN_EMB: &str = "train.emb";
pub const TEST_EMB: &str = "test.emb";
pub const SIMULATION_JSON: &str = "simulation.json";
pub const SEARCH_JSON: &str = "search.json";
pub const SWEEP_JSON: &str = "sweep.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const CURVE_CSV: &str = "curve.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const REPORT_MD: &str = "report.md";
pub const TIMINGS_JSON: &str = "timings.json";

pub fn seed_annw(s: usize) -> String {
    format!("models/seed{s}.annw")
}

pub fn seed_snnw(s: usize) -> String {
    format!("models/seed{s}.snnw")
}

pub fn seed_train_json(s: usize) -> String {
    format!("models/seed{s}.train.json")
}

pub fn seed_convert_json(s: usize) -> String {
    format!("models/seed{s}.convert.json")
}

pub fn snn_emb(steps: u32, split: &str) -> String {
    format!("snn{steps}.{split}.emb")
}

fn label_file(emb: &str) -> String {
    format!("{emb}.labels")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ran,
    Skipped,
}

/// Wall-clock per stage, kept out of the metrics so those stay reproducible.
pub type Timings = BTreeMap<String, f64>;

pub struct Pipeline {
    pub dir: PathBuf,
    pub cfg: Config,
    pub force: bool,
    manifest: RunManifest,
    data: Option<Data>,
    log: Box<dyn FnMut(&str)>,
    pub outcomes: Vec<(String, Outcome)>,
}

impl Pipeline {
    pub fn new(dir: &Path, cfg: Config, force: bool) -> Self {
        let manifest = match RunManifest::load(dir) {
            Some(mut m) => {
                m.config = cfg.clone();
                m.master_seed = cfg.master_seed;
                m
            }
            None => RunManifest::new(&cfg),
        };
        Self {
            dir: dir.to_path_buf(),
            cfg,
            force,
            manifest,
            data: None,
            log: Box::new(|_| {}),
            outcomes: Vec::new(),
        }
    }

    pub fn with_log(mut self, log: impl FnMut(&str) + 'static) -> Self {
        self.log = Box::new(log);
        self
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn data(&mut self) -> Result<&Data, CliError> {
        if self.data.is_none() {
            self.data = Some(stages::load_data(&self.cfg)?);
        }
        Ok(self.data.as_ref().expect("loaded above"))
    }

    fn hash_inputs(&self, inputs: &[PathBuf]) -> Result<BTreeMap<String, String>, CliError> {
        let mut out = BTreeMap::new();
        for p in inputs {
            let name = p.strip_prefix(&self.dir).unwrap_or(p).display().to_string();
            out.insert(name, sha256_file(p)?);
        }
        Ok(out)
    }

    fn up_to_date(&self, name: &str, key: &str) -> bool {
        let Some(rec) = self.manifest.stages.get(name) else {
            return false;
        };
        rec.key == key
            && rec
                .outputs
                .iter()
                .all(|(rel, hash)| sha256_file(&self.dir.join(rel)).map(|h| &h == hash).unwrap_or(false))
    }

    /// Runs `body` unless the stage is up to date.
    fn stage(
        &mut self,
        name: &str,
        fragment: serde_json::Value,
        inputs: Vec<PathBuf>,
        outputs: Vec<String>,
        body: impl FnOnce(&mut Self) -> Result<(), CliError>,
    ) -> Result<Outcome, CliError> {
        let input_hashes = self.hash_inputs(&inputs).map_err(|e| e.in_stage(name))?;
        let key = sha256_hex(serde_json::to_string(&json!({ "stage": name, "config": fragment, "inputs": input_hashes }))?.as_bytes());
        if !self.force && self.up_to_date(name, &key) {
            (self.log)(&format!("[{name}] up to date"));
            self.outcomes.push((name.to_string(), Outcome::Skipped));
            return Ok(Outcome::Skipped);
        }
        (self.log)(&format!("[{name}] running"));
        let started = Instant::now();
        body(self).map_err(|e| e.in_stage(name))?;
        let seconds = started.elapsed().as_secs_f64();
        let mut output_hashes = BTreeMap::new();
        for rel in &outputs {
            output_hashes.insert(rel.clone(), sha256_file(&self.dir.join(rel)).map_err(|e| e.in_stage(name))?);
        }
        self.manifest.stages.insert(
            name.to_string(),
            StageRecord {
                key,
                inputs: input_hashes,
                outputs: output_hashes,
                finished_unix: crate::manifest::unix_now(),
                seconds,
            },
        );
        self.manifest.save(&self.dir)?;
        self.record_timing(name, seconds)?;
        (self.log)(&format!("[{name}] done in {seconds:.1}s"));
        self.outcomes.push((name.to_string(), Outcome::Ran));
        Ok(Outcome::Ran)
    }

    fn record_timing(&self, name: &str, seconds: f64) -> Result<(), CliError> {
        let path = self.path(TIMINGS_JSON);
        let mut t: Timings = stages::read_json(&path).unwrap_or_default();
        t.insert(name.to_string(), seconds);
        stages::write_json(&path, &t)
    }

    /// Runs every stage in dependency order.
    pub fn run(&mut self) -> Result<(), CliError> {
        std::fs::create_dir_all(self.dir.join("models")).map_err(|e| CliError::io(&self.dir, e))?;
        self.manifest.save(&self.dir)?;
        self.ingest()?;
        for s in 0..self.cfg.seeds {
            self.train(s)?;
        }
        for s in 0..self.cfg.seeds {
            self.convert(s)?;
        }
        self.map()?;
        self.embed_ann()?;
        self.embed_snn()?;
        self.search()?;
        self.sweep()?;
        self.report()?;
        Ok(())
    }

    fn ingest(&mut self) -> Result<Outcome, CliError> {
        let fragment = json!({ "data": self.cfg.data, "master_seed": self.cfg.master_seed });
        let inputs = stages::data_files(&self.cfg);
        self.stage("ingest", fragment, inputs, vec![DATASET_JSON.into()], |p| {
            let summary = p.data()?.summary.clone();
            stages::write_json(&p.path(DATASET_JSON), &summary)
        })
    }

    fn train(&mut self, s: usize) -> Result<Outcome, CliError> {
        let fragment = json!({ "arch": self.cfg.arch, "train": self.cfg.train, "master_seed": self.cfg.master_seed });
        let mut outputs = vec![seed_annw(s), seed_train_json(s)];
        if s == 0 {
            outputs.push(MODEL_ANNW.into());
        }
        let inputs = vec![self.path(DATASET_JSON)];
        self.stage(&format!("train.seed{s}"), fragment, inputs, outputs, move |p| {
            let cfg = p.cfg.clone();
            let data = p.data()?.clone();
            let mut log = std::mem::replace(&mut p.log, Box::new(|_| {}));
            let result = stages::train_seed(&cfg, &data, s, |e| {
                log(&format!(
                    "  seed {s} epoch {} loss {:.4} val {:.4}",
                    e.epoch, e.mean_loss, e.validation_accuracy
                ))
            });
            p.log = log;
            let (model, summary) = result?;
            (p.log)(&format!("  seed {s} test accuracy {:.4}", summary.test_accuracy));
            let bytes = model.to_bytes()?;
            write_atomic(&p.path(&seed_annw(s)), &bytes)?;
            if s == 0 {
                write_atomic(&p.path(MODEL_ANNW), &bytes)?;
            }
            stages::write_json(&p.path(&seed_train_json(s)), &summary)
        })
    }

    fn convert(&mut self, s: usize) -> Result<Outcome, CliError> {
        let fragment = json!({ "convert": self.cfg.convert, "master_seed": self.cfg.master_seed });
        let mut outputs = vec![seed_snnw(s), seed_convert_json(s)];
        if s == 0 {
            outputs.push(MODEL_SNNW.into());
        }
        let inputs = vec![self.path(DATASET_JSON), self.path(&seed_annw(s))];
        self.stage(&format!("convert.seed{s}"), fragment, inputs, outputs, move |p| {
            let ann = stages::load_ann(&p.path(&seed_annw(s)))?;
            let cfg = p.cfg.clone();
            let calib = stages::calibration_set(&cfg, p.data()?, s);
            let (snn, report) = stages::convert_model(&cfg, &ann, &calib)?;
            let headroom = stages::overflow_headroom(&snn);
            let max_steps = cfg.sim.steps.iter().chain(&cfg.sweep.steps).copied().max().unwrap_or(1) as u64;
            if headroom < max_steps {
                (p.log)(&format!(
                    "  warning: a saturated layer could overflow 32-bit potentials after {headroom} steps"
                ));
            }
            let bytes = snn.to_bytes()?;
            write_atomic(&p.path(&seed_snnw(s)), &bytes)?;
            if s == 0 {
                write_atomic(&p.path(MODEL_SNNW), &bytes)?;
            }
            stages::write_json(&p.path(&seed_convert_json(s)), &ConvertSummary { report, overflow_headroom_steps: headroom })
        })
    }

    fn map(&mut self) -> Result<Outcome, CliError> {
        let fragment = json!({ "chip": self.cfg.chip });
        let inputs = vec![self.path(MODEL_SNNW)];
        let outputs = vec![PLACEMENT_CSV.into(), FLOORPLAN_CSV.into(), MAPPING_JSON.into()];
        self.stage("map", fragment, inputs, outputs, |p| {
            let snn = stages::load_snn(&p.path(MODEL_SNNW))?;
            let result = stages::placement(&p.cfg, &snn);
            stages::write_json(&p.path(MAPPING_JSON), &MappingSummary::from_result(&p.cfg, &result))?;
            let placement = result.map_err(CliError::Deployment)?;
            write_atomic(&p.path(PLACEMENT_CSV), placement_csv(&placement).as_bytes())?;
            write_atomic(&p.path(FLOORPLAN_CSV), render_floorplan(&placement).as_bytes())
        })
    }

    fn embed_ann(&mut self) -> Result<Outcome, CliError> {
        let inputs = vec![self.path(DATASET_JSON), self.path(MODEL_ANNW)];
        let outputs = vec![
            ANN_TRAIN_EMB.into(),
            label_file(ANN_TRAIN_EMB),
            ANN_TEST_EMB.into(),
            label_file(ANN_TEST_EMB),
        ];
        self.stage("embed.ann", json!({}), inputs, outputs, |p| {
            let ann = stages::load_ann(&p.path(MODEL_ANNW))?;
            let data = p.data()?;
            let train = stages::ann_embeddings(&ann, &data.train)?;
            let test = stages::ann_embeddings(&ann, &data.test)?;
            train.write(&p.path(ANN_TRAIN_EMB))?;
            test.write(&p.path(ANN_TEST_EMB))?;
            Ok(())
        })
    }

    fn snn_outputs(&self) -> Vec<String> {
        let mut out = vec![SIMULATION_JSON.to_string()];
        for &t in &self.cfg.sim.steps {
            for split in ["train", "test"] {
                let e = snn_emb(t, split);
                out.push(label_file(&e));
                out.push(e);
            }
        }
        out.push(TRAIN_EMB.into());
        out.push(TEST_EMB.into());
        out
    }

    fn embed_snn(&mut self) -> Result<Outcome, CliError> {
        let fragment = json!({ "sim": self.cfg.sim });
        let inputs = vec![self.path(DATASET_JSON), self.path(MODEL_SNNW)];
        let outputs = self.snn_outputs();
        self.stage("embed.snn", fragment, inputs, outputs, |p| {
            let snn = stages::load_snn(&p.path(MODEL_SNNW))?;
            let cfg = p.cfg.clone();
            let steps = cfg.sim.steps.clone();
            let data = p.data()?.clone();
            let mut summaries = Vec::new();
            for (split, images) in [("test", &data.test), ("train", &data.train)] {
                let mut set = simulate_set(&snn, images, &steps, cfg.sim.dynamics(), Some(cfg.sim.readout))?;
                (p.log)(&format!(
                    "  simulated {} {split} images in {:.1}s",
                    images.len(),
                    set.seconds
                ));
                for (j, &t) in steps.iter().enumerate() {
                    if split == "test" {
                        summaries.push(SimulationSummary {
                            steps: t,
                            test_accuracy: set.accuracy(j),
                            test_ops: set.ops[j].clone(),
                        });
                    }
                    let emb = set
                        .take_embedding_set(j, &stages::snn_source(t))
                        .expect("embeddings requested")?;
                    emb.write(&p.path(&snn_emb(t, split)))?;
                }
            }
            // The aliases share the largest T's label sidecar, named in their manifest.
            let last = *steps.last().expect("validated non-empty");
            for (alias, split) in [(TRAIN_EMB, "train"), (TEST_EMB, "test")] {
                link_or_copy(&p.path(&snn_emb(last, split)), &p.path(alias))?;
            }
            stages::write_json(&p.path(SIMULATION_JSON), &summaries)
        })
    }

    fn search(&mut self) -> Result<Outcome, CliError> {
        let fragment = json!({ "search": self.cfg.search });
        let mut inputs = vec![self.path(ANN_TRAIN_EMB), self.path(ANN_TEST_EMB)];
        for &t in &self.cfg.sim.steps {
            inputs.push(self.path(&snn_emb(t, "train")));
            inputs.push(self.path(&snn_emb(t, "test")));
        }
        self.stage("search", fragment, inputs, vec![SEARCH_JSON.into()], |p| {
            let mut out: BTreeMap<String, SearchMetrics> = BTreeMap::new();
            let mut sources = vec![("ann".to_string(), ANN_TRAIN_EMB.to_string(), ANN_TEST_EMB.to_string())];
            for &t in &p.cfg.sim.steps {
                sources.push((stages::snn_source(t), snn_emb(t, "train"), snn_emb(t, "test")));
            }
            for (name, corpus, queries) in sources {
                let corpus = EmbeddingSet::read(&p.path(&corpus))?;
                let queries = EmbeddingSet::read(&p.path(&queries))?;
                let m = stages::search(corpus, &queries, &p.cfg)?;
                (p.log)(&format!(
                    "  {name}: top1 {:.4} top3 {:.4} mAP {:.4}",
                    m.top(1).unwrap_or(f64::NAN),
                    m.top(3).unwrap_or(f64::NAN),
                    m.map
                ));
                out.insert(name, m);
            }
            stages::write_json(&p.path(SEARCH_JSON), &out)
        })
    }

    fn sweep(&mut self) -> Result<Outcome, CliError> {
        let fragment = json!({
            "sweep": self.cfg.sweep,
            "dynamics": self.cfg.sim.dynamics(),
            "readout": self.cfg.sim.readout,
            "search": self.cfg.search,
            "master_seed": self.cfg.master_seed,
        });
        let mut inputs = vec![self.path(DATASET_JSON)];
        for s in 0..self.cfg.seeds {
            inputs.push(self.path(&seed_snnw(s)));
        }
        let outputs = vec![SWEEP_JSON.into(), SWEEP_CSV.into(), CURVE_CSV.into()];
        self.stage("sweep", fragment, inputs, outputs, |p| {
            let cfg = p.cfg.clone();
            let models = (0..cfg.seeds)
                .map(|s| stages::load_snn(&p.path(&seed_snnw(s))))
                .collect::<Result<Vec<_>, _>>()?;
            let seeded: Vec<(u64, &spikesearch::SnnModel)> = models.iter().enumerate().map(|(s, m)| (s as u64, m)).collect();
            let data = p.data()?.clone();
            let result = stages::run_sweep(&cfg, &data, &seeded)?;
            write_sweep(&p.dir, &result)?;
            let mut t: Timings = stages::read_json(&p.path(TIMINGS_JSON)).unwrap_or_default();
            for timing in &result.timings {
                t.insert(format!("sweep.seed{}.seconds_per_inference", timing.seed), timing.seconds_per_inference);
            }
            stages::write_json(&p.path(TIMINGS_JSON), &t)
        })
    }

    fn report(&mut self) -> Result<Outcome, CliError> {
        let fragment = serde_json::to_value(&self.cfg)?;
        let mut inputs = vec![
            self.path(DATASET_JSON),
            self.path(MAPPING_JSON),
            self.path(SIMULATION_JSON),
            self.path(SEARCH_JSON),
            self.path(SWEEP_JSON),
            self.path(FLOORPLAN_CSV),
        ];
        for s in 0..self.cfg.seeds {
            inputs.push(self.path(&seed_train_json(s)));
            inputs.push(self.path(&seed_convert_json(s)));
        }
        self.stage("report", fragment, inputs, vec![METRICS_JSON.into(), REPORT_MD.into()], |p| {
            report::write_report(&p.dir, &p.cfg)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvertSummary {
    pub report: ConversionReport,
    pub overflow_headroom_steps: u64,
}

pub fn write_sweep(dir: &Path, result: &SweepResult) -> Result<(), CliError> {
    let deterministic = SweepResult {
        records: result.records.clone(),
        timings: Vec::new(),
    };
    stages::write_json(&dir.join(SWEEP_JSON), &deterministic)?;
    write_atomic(&dir.join(SWEEP_CSV), sweep::sweep_csv(result)?.as_bytes())?;
    write_atomic(&dir.join(CURVE_CSV), sweep::curve_csv(&result.summary()).as_bytes())
}

fn link_or_copy(src: &Path, dst: &Path) -> Result<(), CliError> {
    let _ = std::fs::remove_file(dst);
    if std::fs::hard_link(src, dst).is_ok() {
        return Ok(());
    }
    std::fs::copy(src, dst).map(|_| ()).map_err(|e| CliError::io(dst, e))
}

/// Training summaries of every seed in a run directory.
pub fn train_summaries(dir: &Path, seeds: usize) -> Result<Vec<TrainSummary>, CliError> {
    (0..seeds).map(|s| stages::read_json(&dir.join(seed_train_json(s)))).collect()
}
