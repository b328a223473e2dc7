use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spikesearch::mapper::{placement_csv, render_floorplan};
use spikesearch::retrieval::EmbeddingSet;
use spikesearch::snn::{SimConfig, Simulator};
use spikesearch::sweep::simulate_set;
use spikesearch::ChipModel;
use spikesearch_cli::manifest::write_atomic;
use spikesearch_cli::pipeline::{self, Pipeline};
use spikesearch_cli::stages::{self, MappingSummary};
use spikesearch_cli::{probe, report, CliError, Config};

#[derive(Parser)]
#[command(name = "spikesearch", version, about = "Spiking-network image search on Fashion-MNIST")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted override such as `convert.weight_bits=8`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory holding the four IDX files.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Master seed from which every stage seed is derived.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and split the dataset, write its summary.
    Ingest {
        #[arg(long, default_value = "dataset.json")]
        out: PathBuf,
    },
    /// Train one float network.
    Train {
        #[arg(long, default_value_t = 0)]
        seed_index: usize,
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value = "model.annw")]
        out: PathBuf,
    },
    /// Convert a float network to an integer spiking network.
    Convert {
        #[arg(long)]
        ann: PathBuf,
        /// Number of calibration images drawn from the training split.
        #[arg(long)]
        calib: Option<usize>,
        #[arg(long)]
        weight_bits: Option<u32>,
        #[arg(long)]
        bias_bits: Option<u32>,
        #[arg(long, default_value_t = 0)]
        seed_index: usize,
        #[arg(long, default_value = "model.snnw")]
        out: PathBuf,
    },
    /// Place a spiking network onto cores.
    Map {
        #[arg(long)]
        model: PathBuf,
        /// `default` or a TOML file describing the chip.
        #[arg(long, default_value = "default")]
        chip: String,
        #[arg(long)]
        floorplan: Option<PathBuf>,
        #[arg(long)]
        placement: Option<PathBuf>,
    },
    /// Simulate one image and dump its probe record.
    Run {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 16)]
        steps: u32,
        /// Comma-separated layers: `penultimate`, `output` or spiking-layer indices.
        #[arg(long, default_value = "penultimate,output")]
        probe: String,
        #[arg(long, default_value_t = 0)]
        image_index: usize,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        raster: bool,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write penultimate-layer embeddings of a split.
    Embed {
        /// `.annw` or `.snnw`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        /// Time steps for spiking models.
        #[arg(long, default_value_t = 128)]
        steps: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cosine nearest-neighbour evaluation of query embeddings against a corpus.
    Search {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Comma-separated k values for top-k accuracy.
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
        /// Accepted for compatibility; top-k and mAP are always reported.
        #[arg(long, default_value = "top1,top3,map")]
        metrics: String,
        /// Truncated mAP depth; results are not comparable to full depth.
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        query_limit: Option<usize>,
        #[arg(long, default_value = "search.json")]
        out: PathBuf,
    },
    /// Accuracy, retrieval and op counts over a range of time steps and seeds.
    Sweep {
        /// Models are read from `<prefix><seed>.snnw`.
        #[arg(long)]
        model_prefix: String,
        #[arg(long, value_delimiter = ',')]
        steps: Vec<u32>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        subset: Option<usize>,
        /// Retrieval corpus size; 0 skips retrieval.
        #[arg(long)]
        corpus: Option<usize>,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
    },
    /// Rebuild metrics.json and report.md from a run directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage, skipping those already up to date.
    Pipeline {
        #[arg(long, default_value = "runs/default")]
        run_dir: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Json,
    Bin,
}

fn log(msg: &str) {
    eprintln!("{msg}");
}

impl Global {
    fn load(&self, mut extra: Vec<String>) -> Result<Config, CliError> {
        let mut overrides = self.overrides.clone();
        if let Some(dir) = &self.data_dir {
            overrides.push(format!("data.dir={}", toml_string(&dir.display().to_string())));
        }
        if let Some(seed) = self.seed {
            overrides.push(format!("master_seed={seed}"));
        }
        overrides.append(&mut extra);
        Config::load(self.config.as_deref(), &overrides)
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn opt<T: std::fmt::Display>(key: &str, value: Option<T>) -> Option<String> {
    value.map(|v| format!("{key}={v}"))
}

fn pick(data: &stages::Data, split: Split) -> &spikesearch::LabeledImages {
    match split {
        Split::Train => &data.train,
        Split::Validation => &data.validation,
        Split::Test => &data.test,
    }
}

fn write_out(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    use std::io::Write;
    match out {
        Some(path) => write_atomic(path, bytes),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| CliError::io(Path::new("<stdout>"), e)),
    }
}

fn json_bytes<T: serde::Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn load_chip(spec: &str) -> Result<ChipModel, CliError> {
    if spec == "default" {
        return Ok(ChipModel::default());
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let chip: ChipModel = toml::from_str(&text).map_err(|e| CliError::config("chip", e.to_string()))?;
    chip.validate().map_err(|e| CliError::config("chip", e.to_string()))?;
    Ok(chip)
}

fn parse_probes(spec: &str, output: usize) -> Result<Vec<usize>, CliError> {
    spec.split(',')
        .map(|s| match s.trim() {
            "penultimate" => Ok(output - 1),
            "output" => Ok(output),
            other => other
                .parse()
                .map_err(|_| CliError::config("probe", format!("unknown probe layer `{other}`"))),
        })
        .collect()
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match cli.command {
        Command::Ingest { out } => {
            let cfg = g.load(vec![])?;
            let data = stages::load_data(&cfg)?;
            stages::write_json(&out, &data.summary)?;
            log(&format!(
                "train {} / validation {} / test {}",
                data.train.len(),
                data.validation.len(),
                data.test.len()
            ));
        }
        Command::Train {
            seed_index,
            arch,
            epochs,
            out,
        } => {
            let extra = [
                arch.map(|a| format!("arch={}", toml_string(&a))),
                opt("train.epochs", epochs),
            ];
            let cfg = g.load(extra.into_iter().flatten().collect())?;
            let data = stages::load_data(&cfg)?;
            let (model, summary) = stages::train_seed(&cfg, &data, seed_index, |e| {
                log(&format!(
                    "epoch {} loss {:.4} validation {:.4}",
                    e.epoch, e.mean_loss, e.validation_accuracy
                ))
            })?;
            write_atomic(&out, &model.to_bytes()?)?;
            stages::write_json(&out.with_extension("train.json"), &summary)?;
            log(&format!("test accuracy {:.4}", summary.test_accuracy));
        }
        Command::Convert {
            ann,
            calib,
            weight_bits,
            bias_bits,
            seed_index,
            out,
        } => {
            let extra = [
                opt("convert.calibration", calib),
                opt("convert.weight_bits", weight_bits),
                opt("convert.bias_bits", bias_bits),
            ];
            let cfg = g.load(extra.into_iter().flatten().collect())?;
            let model = stages::load_ann(&ann)?;
            let data = stages::load_data(&cfg)?;
            let calibration = stages::calibration_set(&cfg, &data, seed_index);
            let (snn, report) = stages::convert_model(&cfg, &model, &calibration)?;
            write_atomic(&out, &snn.to_bytes()?)?;
            let summary = pipeline::ConvertSummary {
                overflow_headroom_steps: stages::overflow_headroom(&snn),
                report,
            };
            stages::write_json(&out.with_extension("convert.json"), &summary)?;
            for l in &summary.report.layers {
                log(&format!(
                    "layer {} threshold {} param_scale {:.4}",
                    l.layer, l.threshold, l.param_scale
                ));
            }
        }
        Command::Map {
            model,
            chip,
            floorplan,
            placement,
        } => {
            let mut cfg = g.load(vec![])?;
            cfg.chip = load_chip(&chip)?;
            let snn = stages::load_snn(&model)?;
            let result = stages::placement(&cfg, &snn);
            let summary = MappingSummary::from_result(&cfg, &result);
            match result {
                Ok(p) => {
                    if let Some(path) = floorplan {
                        write_atomic(&path, render_floorplan(&p).as_bytes())?;
                    }
                    if let Some(path) = placement {
                        write_atomic(&path, placement_csv(&p).as_bytes())?;
                    }
                    write_out(None, &json_bytes(&summary)?)?;
                }
                Err(e) => {
                    // Machine-readable diagnostic on stdout, human one on stderr.
                    write_out(None, &json_bytes(&e)?)?;
                    return Err(e.into());
                }
            }
        }
        Command::Run {
            model,
            steps,
            probe: probes,
            image_index,
            split,
            format,
            raster,
            out,
        } => {
            let cfg = g.load(vec![])?;
            let snn = stages::load_snn(&model)?;
            let data = stages::load_data(&cfg)?;
            let images = pick(&data, split);
            if image_index >= images.len() {
                return Err(CliError::config(
                    "image-index",
                    format!("{image_index} is out of range for {} images", images.len()),
                ));
            }
            let mut sim_cfg = SimConfig::new(steps).probe(&parse_probes(&probes, snn.num_spiking_layers() - 1)?);
            sim_cfg.leak_shift = cfg.sim.leak_shift;
            sim_cfg.initial_potential = cfg.sim.initial_potential;
            sim_cfg.record_raster = raster;
            let record = Simulator::new(&snn).run(images.image(image_index), &sim_cfg)?;
            let bytes = match format {
                Format::Json => json_bytes(&record)?,
                Format::Bin => {
                    if raster {
                        return Err(CliError::config("format", "rasters are only written as JSON"));
                    }
                    probe::encode(&record)
                }
            };
            write_out(out.as_deref(), &bytes)?;
        }
        Command::Embed {
            model,
            split,
            steps,
            out,
        } => {
            let cfg = g.load(vec![])?;
            let data = stages::load_data(&cfg)?;
            let images = pick(&data, split);
            let set = if model.extension().is_some_and(|e| e == "annw") {
                stages::ann_embeddings(&stages::load_ann(&model)?, images)?
            } else {
                let snn = stages::load_snn(&model)?;
                let mut sim = simulate_set(&snn, images, &[steps], cfg.sim.dynamics(), Some(cfg.sim.readout))?;
                log(&format!("accuracy at T={steps}: {:.4}", sim.accuracy(0)));
                sim.take_embedding_set(0, &stages::snn_source(steps))
                    .expect("embeddings requested")?
            };
            set.write(&out)?;
        }
        Command::Search {
            corpus,
            queries,
            k,
            metrics: _,
            depth,
            query_limit,
            out,
        } => {
            let mut extra = vec![];
            if !k.is_empty() {
                extra.push(format!("search.ks={k:?}"));
            }
            extra.extend(opt("search.depth", depth));
            extra.extend(opt("search.queries", query_limit));
            let cfg = g.load(extra)?;
            let corpus = EmbeddingSet::read(&corpus)?;
            let queries = EmbeddingSet::read(&queries)?;
            let m = stages::search(corpus, &queries, &cfg)?;
            stages::write_json(&out, &m)?;
            for t in &m.top_k {
                log(&format!("top{} {:.4}", t.k, t.accuracy));
            }
            log(&format!("mAP {:.4}", m.map));
        }
        Command::Sweep {
            model_prefix,
            steps,
            seeds,
            subset,
            corpus,
            out,
        } => {
            let mut extra = vec![];
            if !steps.is_empty() {
                extra.push(format!("sweep.steps={steps:?}"));
            }
            extra.extend(opt("seeds", seeds));
            extra.extend(opt("sweep.subset", subset));
            extra.extend(opt("sweep.corpus", corpus));
            let cfg = g.load(extra)?;
            let models = (0..cfg.seeds)
                .map(|s| stages::load_snn(Path::new(&format!("{model_prefix}{s}.snnw"))))
                .collect::<Result<Vec<_>, _>>()?;
            let seeded: Vec<_> = models.iter().enumerate().map(|(s, m)| (s as u64, m)).collect();
            let data = stages::load_data(&cfg)?;
            let result = stages::run_sweep(&cfg, &data, &seeded)?;
            write_atomic(&out, spikesearch::sweep::sweep_csv(&result)?.as_bytes())?;
            write_atomic(
                &out.with_extension("curve.csv"),
                spikesearch::sweep::curve_csv(&result.summary()).as_bytes(),
            )?;
        }
        Command::Report { input, out } => {
            let manifest = spikesearch_cli::manifest::RunManifest::load(&input);
            let cfg = match manifest {
                Some(m) if g.config.is_none() && g.overrides.is_empty() => m.config,
                _ => g.load(vec![])?,
            };
            report::write_report(&input, &cfg)?;
            if let Some(out) = out {
                let text = stages::read_file(&input.join(pipeline::REPORT_MD))?;
                write_atomic(&out, &text)?;
            }
        }
        Command::Pipeline { run_dir, force } => {
            let cfg = g.load(vec![])?;
            let mut p = Pipeline::new(&run_dir, cfg, force).with_log(log);
            p.run()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
