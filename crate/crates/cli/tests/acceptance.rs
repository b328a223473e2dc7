//! Acceptance checks, one line per criterion.
//!
//! Criteria about the trained system read a full default run directory
//! (`runs/default` under the workspace root, or `SPIKESEARCH_RUN_DIR`); the
//! pipeline is resumed first, so a finished run only re-hashes its artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikesearch::arch::{Activation, Architecture, LayerSpec, Shape, FASHION_INPUT};
use spikesearch::convert::{InputEncoding, SnnLayer};
use spikesearch::mapper::{assign_layers, render_floorplan, LayerResources};
use spikesearch::retrieval::SearchMetrics;
use spikesearch::sweep::{simulate_set, SweepResult};
use spikesearch::{convert, AnnModel, InitialPotential, BitConfig, ChipModel, ConvertConfig, LabeledImages, SimConfig, Simulator, SnnModel};
use spikesearch_cli::pipeline::{self, Pipeline};
use spikesearch_cli::stages::{self, SimulationSummary, TrainSummary};
use spikesearch_cli::Config;

type Check = Result<(bool, String), String>;

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

struct FullRun {
    dir: PathBuf,
    cfg: Config,
    train: Vec<TrainSummary>,
    timings: BTreeMap<String, f64>,
    sims: Vec<SimulationSummary>,
    search: BTreeMap<String, SearchMetrics>,
    sweep: SweepResult,
}

fn full_run() -> Result<FullRun, String> {
    let dir = std::env::var_os("SPIKESEARCH_RUN_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs/default"));
    let cfg = Config::load(None, &[]).map_err(|e| e.to_string())?;
    let mut p = Pipeline::new(&dir, cfg.clone(), false).with_log(|m| eprintln!("{m}"));
    p.run().map_err(|e| format!("pipeline over {}: {e}", dir.display()))?;
    let read = |name: &str| dir.join(name);
    Ok(FullRun {
        train: pipeline::train_summaries(&dir, cfg.seeds).map_err(|e| e.to_string())?,
        timings: stages::read_json(&read(pipeline::TIMINGS_JSON)).map_err(|e| e.to_string())?,
        sims: stages::read_json(&read(pipeline::SIMULATION_JSON)).map_err(|e| e.to_string())?,
        search: stages::read_json(&read(pipeline::SEARCH_JSON)).map_err(|e| e.to_string())?,
        sweep: stages::read_json(&read(pipeline::SWEEP_JSON)).map_err(|e| e.to_string())?,
        dir,
        cfg,
    })
}

fn pct(x: f64) -> String {
    format!("{:.2}%", x * 100.0)
}

fn sim_at(run: &FullRun, steps: u32) -> Result<&SimulationSummary, String> {
    run.sims
        .iter()
        .find(|s| s.steps == steps)
        .ok_or_else(|| format!("no simulation at T={steps}"))
}

fn c1_ann_baseline(run: &FullRun) -> Check {
    const EACH: f64 = 0.885;
    const MEDIAN: f64 = 0.895;
    const MINUTES: f64 = 45.0;
    let acc: Vec<f64> = run.train.iter().map(|t| t.test_accuracy).collect();
    let mut sorted = acc.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let slowest = (0..run.cfg.seeds)
        .map(|s| run.timings.get(&format!("train.seed{s}")).copied().unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    let ok = acc.len() == 5 && acc.iter().all(|&a| a >= EACH) && median >= MEDIAN && slowest <= MINUTES * 60.0;
    Ok((
        ok,
        format!(
            "seeds [{}] each >= {}, median {} >= {}, slowest training {:.1} min <= {MINUTES} min",
            acc.iter().map(|&a| pct(a)).collect::<Vec<_>>().join(", "),
            pct(EACH),
            pct(median),
            pct(MEDIAN),
            slowest / 60.0
        ),
    ))
}

fn c2_fidelity(run: &FullRun) -> Check {
    let ann = run.train[0].test_accuracy;
    let snn = sim_at(run, 128)?.test_accuracy;
    let gap = (ann - snn).abs();
    Ok((
        gap <= 0.01,
        format!("ANN {} vs SNN(128) {} on 10k test images, |gap| {:.2} pt <= 1.00 pt", pct(ann), pct(snn), gap * 100.0),
    ))
}

fn c3_low_steps(run: &FullRun) -> Check {
    let ann = run.train[0].test_accuracy;
    let snn = sim_at(run, 16)?.test_accuracy;
    let drop = ann - snn;
    Ok((
        drop < 0.05,
        format!("ANN {} vs SNN(16) {}, drop {:.2} pt < 5.00 pt", pct(ann), pct(snn), drop * 100.0),
    ))
}

fn c4_retrieval(run: &FullRun) -> Check {
    let ann = run.search.get("ann").ok_or("no ANN retrieval metrics")?;
    let snn = run.search.get("snn(128)").ok_or("no SNN(128) retrieval metrics")?;
    let top = |m: &SearchMetrics, k| m.top(k).unwrap_or(f64::NAN);
    let d1 = (top(ann, 1) - top(snn, 1)).abs();
    let d3 = (top(ann, 3) - top(snn, 3)).abs();
    let dmap = (ann.map - snn.map).abs();
    let full_depth = ann.map_depth.is_none() && snn.map_depth.is_none();
    let ok = d1 <= 0.02
        && d3 <= 0.02
        && (0.45..=0.60).contains(&ann.map)
        && dmap <= 0.05
        && full_depth
        && ann.queries >= 2000
        && snn.queries >= 2000;
    Ok((
        ok,
        format!(
            "top1 ANN {} / SNN {} (|d| {:.2} <= 2 pt), top3 ANN {} / SNN {} (|d| {:.2} <= 2 pt), \
             mAP ANN {:.4} in [0.45, 0.60], SNN {:.4} (|d| {:.4} <= 0.05), {} queries x {} corpus, full depth {}",
            pct(top(ann, 1)),
            pct(top(snn, 1)),
            d1 * 100.0,
            pct(top(ann, 3)),
            pct(top(snn, 3)),
            d3 * 100.0,
            ann.map,
            snn.map,
            dmap,
            ann.queries,
            ann.corpus,
            full_depth
        ),
    ))
}

fn c5_curve(run: &FullRun) -> Check {
    let point = |t| run.sweep.point(t).ok_or_else(|| format!("no sweep point at T={t}"));
    let (p4, p16, p64, p128) = (point(4)?, point(16)?, point(64)?, point(128)?);
    let rise = p16.accuracy.mean - p4.accuracy.mean;
    let tail = (p128.accuracy.mean - p64.accuracy.mean).abs();
    let spread = p128.accuracy.std;
    let ok = rise > 0.10 && tail < 0.02 && spread < 0.01 && p128.seeds == 5;
    Ok((
        ok,
        format!(
            "acc(16)-acc(4) {:.2} pt > 10 pt, |acc(128)-acc(64)| {:.2} pt < 2 pt, std(128) over {} seeds {:.2} pt < 1 pt",
            rise * 100.0,
            tail * 100.0,
            p128.seeds,
            spread * 100.0
        ),
    ))
}

fn c9_ops(run: &FullRun) -> Check {
    let snn = stages::load_snn(&run.dir.join(pipeline::seed_snnw(0))).map_err(|e| e.to_string())?;
    let data = stages::load_data(&run.cfg).map_err(|e| e.to_string())?;
    let (eval, _) = stages::sweep_sets(&run.cfg, &data);
    let stored = run
        .sweep
        .records
        .iter()
        .find(|r| r.seed == 0 && r.steps == 16)
        .ok_or("no sweep record for seed 0 at T=16")?;
    let recomputed = simulate_set(&snn, &eval, &[16], run.cfg.sim.dynamics(), None).map_err(|e| e.to_string())?;
    let again = &recomputed.ops[0];
    let reproducible = again.events_per_inference() == stored.synaptic_events_per_inference
        && again.updates_per_inference() == stored.neuron_updates_per_inference;
    let report_exists = run.dir.join(pipeline::REPORT_MD).exists() && sim_at(run, 16).is_ok();
    let macs = snn.arch.dense_macs() as f64;
    let events = sim_at(run, 16)?.test_ops.events_per_inference();
    let ok = reproducible && report_exists && events < 16.0 * macs;
    Ok((
        ok,
        format!(
            "op-count report present {report_exists}; recomputed T=16 events/inference {} == stored {} ({}); \
             events/inference {events:.0} < 16 x {macs:.0} MACs",
            again.events_per_inference(),
            stored.synaptic_events_per_inference,
            if reproducible { "bit-identical" } else { "DIFFERENT" }
        ),
    ))
}

/// One pixel feeding a single dense neuron with weight 0 and bias `d`.
fn constant_drive(d: i32, threshold: i32) -> SnnModel {
    SnnModel {
        arch: Architecture {
            name: "1".into(),
            input: Shape::new(1, 1, 1),
            layers: vec![LayerSpec::dense(1, Activation::Relu)],
        },
        bits: BitConfig::default(),
        input: InputEncoding {
            param_scale: 255.0,
            threshold: 255,
        },
        layers: vec![SnnLayer {
            weight: vec![0],
            bias: vec![d],
            threshold,
            param_scale: 1.0,
        }],
        final_slope: 1.0,
    }
}

fn c6_dynamics() -> Check {
    const T: u32 = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0i64;
    let mut failures = 0;
    for _ in 0..200 {
        let theta: i32 = rng.gen_range(1..=5000);
        let d: i32 = rng.gen_range(0..=2 * theta);
        let snn = constant_drive(d, theta);
        for (init, v0) in [(InitialPotential::Zero, 0), (InitialPotential::HalfThreshold, theta / 2)] {
            let cfg = SimConfig {
                initial_potential: init,
                ..SimConfig::new(T).probe(&[1])
            };
            let record = Simulator::new(&snn).run(&[0.0], &cfg).map_err(|e| e.to_string())?;
            let count = record.probes[0].spike_counts[0] as i64;
            let ok = if d >= theta {
                count == T as i64
            } else {
                let closed = (v0 as i64 + d as i64 * T as i64) / theta as i64;
                worst = worst.max((count - closed).abs());
                (count - closed).abs() <= 1
            };
            failures += usize::from(!ok);
        }
    }
    Ok((
        failures == 0,
        format!(
            "200 random (d, theta) pairs at T={T}, started from v0 = 0 and v0 = theta/2: {failures} mismatches; \
             largest |count - floor((v0 + dT)/theta)| {worst} <= 1 for d < theta, count == T for d >= theta"
        ),
    ))
}

/// Straight transcription of the conversion loop for dense layers, kept
/// separate from the library code it checks.
struct Oracle {
    thresholds: Vec<i32>,
    param_scales: Vec<f64>,
    weights: Vec<Vec<i32>>,
    biases: Vec<Vec<i32>>,
}

fn oracle_convert(ann: &AnnModel, calib: &[Vec<f64>], w_max: i32, b_max: i32) -> Oracle {
    let clamp_threshold = |m: f64| (m.trunc() as i64).max(1) as i32;
    let mut thresholds = vec![];
    let mut param_scales = vec![w_max as f64];
    let (mut weights, mut biases) = (vec![], vec![]);
    // input layer
    let dvdt: Vec<Vec<f64>> = calib.iter().map(|x| x.iter().map(|p| p * w_max as f64).collect()).collect();
    let max = dvdt.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    let mut threshold = clamp_threshold(max);
    thresholds.push(threshold);
    let mut rates: Vec<Vec<f64>> = dvdt
        .iter()
        .map(|r| r.iter().map(|v| (v / threshold as f64).min(1.0)).collect())
        .collect();
    let mut slope = w_max as f64 / threshold as f64;
    let mut n_in = ann.arch.input.len();
    for (spec, params) in ann.arch.layers.iter().zip(&ann.params) {
        let n_out = spec.output_shape(Shape::flat(n_in)).len();
        let bias: Vec<f64> = params.bias.iter().map(|&b| b as f64 * slope).collect();
        let weight_norm = params.weight.iter().map(|w| (*w as f64).abs()).fold(0.0, f64::max);
        let bias_norm = bias.iter().map(|b| b.abs()).fold(0.0, f64::max);
        let weight_ratio = if weight_norm > 0.0 { w_max as f64 / weight_norm } else { f64::INFINITY };
        let bias_ratio = if bias_norm > 0.0 { b_max as f64 / bias_norm } else { f64::INFINITY };
        let param_scale = weight_ratio.min(bias_ratio);
        let wq: Vec<i32> = params.weight.iter().map(|&w| (w as f64 * param_scale).trunc() as i32).collect();
        let bq: Vec<i32> = bias.iter().map(|&b| (b * param_scale).trunc() as i32).collect();
        // weight[i * n_out + o] connects input i to output o
        let dvdt: Vec<Vec<f64>> = rates
            .iter()
            .map(|r| {
                (0..n_out)
                    .map(|o| {
                        let mut s = 0.0;
                        for (i, ri) in r.iter().enumerate() {
                            s += wq[i * n_out + o] as f64 * ri;
                        }
                        (s + bq[o] as f64).max(0.0)
                    })
                    .collect()
            })
            .collect();
        let max = dvdt.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
        threshold = clamp_threshold(max);
        rates = dvdt
            .iter()
            .map(|r| r.iter().map(|v| (v / threshold as f64).min(1.0)).collect())
            .collect();
        slope *= param_scale / threshold as f64;
        thresholds.push(threshold);
        param_scales.push(param_scale);
        weights.push(wq);
        biases.push(bq);
        n_in = n_out;
    }
    Oracle {
        thresholds,
        param_scales,
        weights,
        biases,
    }
}

fn c7_algorithm() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let bits = BitConfig::default();
    let (w_max, b_max) = (bits.w_max(), bits.b_max());
    let networks = 25;
    let mut mismatches = 0;
    let mut out_of_range = 0;
    for _ in 0..networks {
        let inputs = rng.gen_range(2..=8);
        let hidden = rng.gen_range(1..=6);
        let outputs = rng.gen_range(2..=4);
        let arch = Architecture {
            name: "toy".into(),
            input: Shape::flat(inputs),
            layers: vec![LayerSpec::dense(hidden, Activation::Relu), LayerSpec::dense(outputs, Activation::None)],
        };
        let mut ann = AnnModel::zeros(arch);
        for p in &mut ann.params {
            p.weight.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
            p.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.3..0.3));
        }
        let samples = rng.gen_range(1..=20);
        let pixels: Vec<f32> = (0..samples * inputs).map(|_| rng.gen::<f32>()).collect();
        let calib_rows: Vec<Vec<f64>> = pixels.chunks(inputs).map(|r| r.iter().map(|&p| p as f64).collect()).collect();
        let calib = LabeledImages {
            shape: Shape::flat(inputs),
            pixels,
            labels: vec![0; samples],
        };
        let (snn, _) = convert(&ann, &calib, &ConvertConfig::default()).map_err(|e| e.to_string())?;
        let want = oracle_convert(&ann, &calib_rows, w_max, b_max);
        let got_thresholds: Vec<i32> = (0..snn.num_spiking_layers()).map(|l| snn.threshold(l)).collect();
        let got_scales: Vec<u64> = std::iter::once(snn.input.param_scale)
            .chain(snn.layers.iter().map(|l| l.param_scale))
            .map(f64::to_bits)
            .collect();
        let want_scales: Vec<u64> = want.param_scales.iter().map(|s| s.to_bits()).collect();
        let same = got_thresholds == want.thresholds
            && got_scales == want_scales
            && snn.layers.iter().map(|l| &l.weight).eq(want.weights.iter())
            && snn.layers.iter().map(|l| &l.bias).eq(want.biases.iter());
        mismatches += usize::from(!same);
        out_of_range += snn
            .layers
            .iter()
            .flat_map(|l| &l.weight)
            .filter(|w| w.abs() > w_max)
            .count();
    }
    Ok((
        mismatches == 0 && out_of_range == 0,
        format!(
            "{networks} random dense-dense networks: {mismatches} differ from the scratch transcription \
             (thresholds, param_scale bits, integer weights and biases); {out_of_range} weights outside +/-{w_max}"
        ),
    ))
}

#[derive(Clone, Copy)]
struct CoreLoad {
    layer: Option<usize>,
    neurons: usize,
    bytes: usize,
}

/// Tries every neuron-to-core assignment (with pruning) under the rule that a
/// core hosts neurons of one layer only.
fn exhaustive_feasible(neurons: &[(usize, usize)], chip: &ChipModel) -> bool {
    fn place(i: usize, neurons: &[(usize, usize)], chip: &ChipModel, cores: &mut [CoreLoad]) -> bool {
        let Some(&(layer, fan_in)) = neurons.get(i) else {
            return true;
        };
        if fan_in > chip.fan_in_limit {
            return false;
        }
        let bytes = fan_in * chip.bytes_per_synapse;
        let mut tried_empty = false;
        for c in 0..cores.len() {
            let load = cores[c];
            if load.layer.is_some_and(|l| l != layer)
                || load.neurons + 1 > chip.max_neurons_per_core
                || load.bytes + bytes > chip.synaptic_mem_bytes
            {
                continue;
            }
            // empty cores are interchangeable
            if load.layer.is_none() {
                if tried_empty {
                    continue;
                }
                tried_empty = true;
            }
            cores[c] = CoreLoad {
                layer: Some(layer),
                neurons: load.neurons + 1,
                bytes: load.bytes + bytes,
            };
            if place(i + 1, neurons, chip, cores) {
                return true;
            }
            cores[c] = load;
        }
        false
    }
    let mut cores = vec![
        CoreLoad {
            layer: None,
            neurons: 0,
            bytes: 0,
        };
        chip.cores_per_chip
    ];
    place(0, neurons, chip, &mut cores)
}

fn c8_mapper() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut agree, mut feasible) = (0, 0);
    let instances = 50;
    for _ in 0..instances {
        let cores = rng.gen_range(1..=3);
        let chip = ChipModel {
            cores_per_chip: cores,
            grid_columns: cores,
            grid_rows: 1,
            fan_in_limit: rng.gen_range(2..=8),
            synaptic_mem_bytes: rng.gen_range(4..=24),
            bytes_per_synapse: rng.gen_range(1..=2),
            max_neurons_per_core: rng.gen_range(1..=6),
            ..ChipModel::default()
        };
        let mut layers = Vec::new();
        let mut budget = 12;
        for layer in 0..rng.gen_range(1..=3) {
            if budget == 0 {
                break;
            }
            let n = rng.gen_range(1..=budget.min(6));
            budget -= n;
            layers.push(LayerResources::uniform(layer, n, rng.gen_range(0..=9), &chip));
        }
        let neurons: Vec<(usize, usize)> = layers
            .iter()
            .flat_map(|r| std::iter::repeat((r.layer, r.fan_in_per_neuron)).take(r.neuron_count))
            .collect();
        let greedy = assign_layers(&layers, &chip).is_ok();
        let exact = exhaustive_feasible(&neurons, &chip);
        agree += usize::from(greedy == exact);
        feasible += usize::from(exact);
    }
    let chip = ChipModel::default();
    let fan_in_rejected = (1..=64).all(|n| {
        matches!(
            assign_layers(&[LayerResources::uniform(1, n, 4097, &chip)], &chip),
            Err(spikesearch::DeploymentError::FanInExceeded { .. })
        )
    });
    let fan_in_boundary = assign_layers(&[LayerResources::uniform(1, 1, 4096, &chip)], &chip).is_ok();
    let mut cells_ok = true;
    for _ in 0..50 {
        let layers: Vec<LayerResources> = (0..rng.gen_range(1..=6))
            .map(|l| LayerResources::uniform(l, rng.gen_range(1..=20_000), rng.gen_range(0..=600), &chip))
            .collect();
        if let Ok(p) = assign_layers(&layers, &chip) {
            let text = render_floorplan(&p);
            let rows: Vec<&str> = text.lines().collect();
            cells_ok &= rows.len() == 8 && rows.iter().all(|r| r.split(',').count() == 16);
            cells_ok &= text.lines().flat_map(|r| r.split(',')).count() == 128;
        }
    }
    let arch = Architecture::parse("32-64-10", FASHION_INPUT).map_err(|e| e.to_string())?;
    let default_plan = spikesearch::assign_cores(&arch, &chip).map_err(|e| e.to_string())?;
    cells_ok &= render_floorplan(&default_plan).lines().flat_map(|r| r.split(',')).count() == 128;
    Ok((
        agree == instances && fan_in_rejected && fan_in_boundary && cells_ok,
        format!(
            "greedy == exhaustive on {agree}/{instances} tiny instances ({feasible} feasible); \
             fan-in 4097 rejected {fan_in_rejected}, 4096 accepted {fan_in_boundary}; floorplans of 128 cells {cells_ok}"
        ),
    ))
}

fn small_config(data_dir: &Path) -> Result<Config, String> {
    let sets = [
        "arch=\"8-16-10\"".to_string(),
        "seeds=2".into(),
        "data.train_limit=1200".into(),
        "data.test_limit=300".into(),
        "train.epochs=1".into(),
        "convert.calibration=64".into(),
        "sim.steps=[4, 16]".into(),
        "sweep.steps=[4, 16]".into(),
        "sweep.subset=100".into(),
        "sweep.corpus=200".into(),
        format!("data.dir=\"{}\"", data_dir.display()),
    ];
    Config::load(None, &sets).map_err(|e| e.to_string())
}

fn c10_determinism() -> Check {
    let cfg = small_config(&workspace_root().join("data/fashion-mnist"))?;
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        Pipeline::new(dir.path(), cfg.clone(), true)
            .run()
            .map_err(|e| e.to_string())?;
        outputs.push(std::fs::read(dir.path().join(pipeline::METRICS_JSON)).map_err(|e| e.to_string())?);
    }
    let same = outputs[0] == outputs[1];
    Ok((
        same,
        format!(
            "two independent runs of a reduced config: metrics.json ({} bytes) {}",
            outputs[0].len(),
            if same { "byte-identical" } else { "DIFFERS" }
        ),
    ))
}

fn main() -> ExitCode {
    if let Err(e) = std::env::set_current_dir(workspace_root()) {
        eprintln!("cannot enter the workspace root: {e}");
        return ExitCode::FAILURE;
    }
    let mut results: Vec<(u32, &str, Check)> = vec![
        (6, "spike-count dynamics", c6_dynamics()),
        (7, "conversion oracle", c7_algorithm()),
        (8, "mapper verdicts", c8_mapper()),
        (10, "end-to-end determinism", c10_determinism()),
    ];
    match full_run() {
        Ok(run) => {
            results.push((1, "ANN baseline", c1_ann_baseline(&run)));
            results.push((2, "conversion fidelity at T=128", c2_fidelity(&run)));
            results.push((3, "degradation at T=16", c3_low_steps(&run)));
            results.push((4, "retrieval parity", c4_retrieval(&run)));
            results.push((5, "time-step curve", c5_curve(&run)));
            results.push((9, "op-count substitute for energy", c9_ops(&run)));
        }
        Err(e) => {
            for (n, name) in [
                (1, "ANN baseline"),
                (2, "conversion fidelity at T=128"),
                (3, "degradation at T=16"),
                (4, "retrieval parity"),
                (5, "time-step curve"),
                (9, "op-count substitute for energy"),
            ] {
                results.push((n, name, Err(e.clone())));
            }
        }
    }
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, name, check) in &results {
        let (ok, detail) = match check {
            Ok((ok, detail)) => (*ok, detail.clone()),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!ok);
        println!("{} criterion {n:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
