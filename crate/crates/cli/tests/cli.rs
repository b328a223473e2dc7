use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikesearch::dataset::{write_idx, IMAGE_MAGIC, LABEL_MAGIC};
use spikesearch_cli::pipeline::{self, Outcome, Pipeline};
use spikesearch_cli::{probe, CliError, Config};
use tempfile::TempDir;

/// Ten classes, each a bright vertical bar at its own column plus noise.
fn synthetic_split(n: usize, rng: &mut ChaCha8Rng) -> (Vec<u8>, Vec<u8>) {
    let mut images = Vec::with_capacity(n * 784);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = (i % 10) as u8;
        labels.push(class);
        let col = 2 + 2 * class as usize;
        for r in 0..28 {
            for c in 0..28 {
                let base = if (col..col + 3).contains(&c) && (4..24).contains(&r) { 200 } else { 0 };
                images.push((base + rng.gen_range(0..40)).min(255) as u8);
            }
        }
    }
    (images, labels)
}

fn write_dataset(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (prefix, n) in [("train", 600usize), ("t10k", 200)] {
        let (images, labels) = synthetic_split(n, &mut rng);
        std::fs::write(
            dir.join(format!("{prefix}-images-idx3-ubyte.gz")),
            write_idx(IMAGE_MAGIC, &[n, 28, 28], &images),
        )
        .unwrap();
        std::fs::write(
            dir.join(format!("{prefix}-labels-idx1-ubyte.gz")),
            write_idx(LABEL_MAGIC, &[n], &labels),
        )
        .unwrap();
    }
}

struct Fixture {
    _tmp: TempDir,
    data: PathBuf,
    run: PathBuf,
}

fn fixture() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    std::fs::create_dir_all(&data).unwrap();
    write_dataset(&data);
    Fixture { _tmp: tmp, data, run }
}

fn small_overrides(data: &Path, arch: &str) -> Vec<String> {
    vec![
        format!("arch=\"{arch}\""),
        "seeds=1".into(),
        "train.epochs=1".into(),
        "convert.calibration=32".into(),
        "sim.steps=[4, 16]".into(),
        "sweep.steps=[4, 16]".into(),
        "sweep.subset=40".into(),
        "sweep.corpus=80".into(),
        format!("data.dir=\"{}\"", data.display()),
    ]
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spikesearch"))
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn defaults_match_documented_values() {
    let cfg = Config::load(None, &[]).unwrap();
    assert_eq!(cfg.arch, "32-64-10");
    assert_eq!(cfg.seeds, 5);
    assert_eq!(cfg.master_seed, 0);
    assert_eq!(cfg.chip.cores_per_chip, 128);
    assert_eq!(cfg.chip.fan_in_limit, 4096);
    assert_eq!(cfg.sim.steps, vec![16, 128]);
    let bits = cfg.bits().unwrap();
    assert_eq!((bits.num_weight_bits, bits.num_bias_bits), (9, 9));
}

#[test]
fn overrides_win_over_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, "arch = \"16-10\"\n[convert]\nweight_bits = 6\n").unwrap();
    let cfg = Config::load(Some(&path), &["convert.weight_bits=7".into()]).unwrap();
    assert_eq!(cfg.arch, "16-10");
    assert_eq!(cfg.bits().unwrap().num_weight_bits, 7);
}

#[test]
fn invalid_configuration_is_a_config_error() {
    for bad in ["convert.weight_bits=0", "arch=\"32-x-10\"", "no_such_key=1", "sim.steps=[]"] {
        let err = Config::load(None, &[bad.to_string()]).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{bad}: {err}");
    }
}

#[test]
fn binary_exit_codes() {
    let f = fixture();
    let out = bin()
        .args(["convert", "--ann", "missing.annw", "--weight-bits", "0"])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));

    let empty = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["ingest", "--out"])
        .arg(f.run.join("d.json"))
        .arg("--data-dir")
        .arg(empty.path())
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));

    std::fs::create_dir_all(&f.run).unwrap();
    let out = bin()
        .args(["ingest", "--out"])
        .arg(f.run.join("d.json"))
        .arg("--data-dir")
        .arg(&f.data)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pipeline_resumes_and_reruns_tampered_stage() {
    let f = fixture();
    let cfg = Config::load(None, &small_overrides(&f.data, "8-16-10")).unwrap();

    let mut first = Pipeline::new(&f.run, cfg.clone(), false);
    first.run().unwrap();
    assert!(first.outcomes.iter().all(|(_, o)| *o == Outcome::Ran));
    for name in [pipeline::METRICS_JSON, pipeline::REPORT_MD, pipeline::SEARCH_JSON, pipeline::SWEEP_JSON] {
        assert!(f.run.join(name).exists(), "{name}");
    }
    let metrics = std::fs::read(f.run.join(pipeline::METRICS_JSON)).unwrap();

    let mut second = Pipeline::new(&f.run, cfg.clone(), false);
    second.run().unwrap();
    assert!(second.outcomes.iter().all(|(_, o)| *o == Outcome::Skipped), "{:?}", second.outcomes);

    let target = f.run.join(pipeline::seed_snnw(0));
    let mut bytes = std::fs::read(&target).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    std::fs::write(&target, bytes).unwrap();

    let mut third = Pipeline::new(&f.run, cfg, false);
    third.run().unwrap();
    let ran: Vec<&str> = third
        .outcomes
        .iter()
        .filter(|(_, o)| *o == Outcome::Ran)
        .map(|(n, _)| n.as_str())
        .collect();
    assert_eq!(ran, ["convert.seed0"]);
    assert_eq!(std::fs::read(f.run.join(pipeline::METRICS_JSON)).unwrap(), metrics);
}

#[test]
fn changed_config_invalidates_downstream_only() {
    let f = fixture();
    let cfg = Config::load(None, &small_overrides(&f.data, "8-16-10")).unwrap();
    Pipeline::new(&f.run, cfg.clone(), false).run().unwrap();

    let mut changed = cfg.clone();
    changed.convert.weight_bits = 7;
    let mut p = Pipeline::new(&f.run, changed, false);
    p.run().unwrap();
    let outcome = |name: &str| p.outcomes.iter().find(|(n, _)| n == name).map(|(_, o)| *o);
    assert_eq!(outcome("ingest"), Some(Outcome::Skipped));
    assert_eq!(outcome("train.seed0"), Some(Outcome::Skipped));
    assert_eq!(outcome("convert.seed0"), Some(Outcome::Ran));
}

#[test]
fn oversized_network_stops_at_mapping() {
    let f = fixture();
    let mut sets = small_overrides(&f.data, "32-64-128-256-10");
    sets.push("data.train_limit=100".into());
    sets.push("data.test_limit=20".into());
    sets.push("convert.calibration=8".into());
    let cfg = Config::load(None, &sets).unwrap();
    let err = Pipeline::new(&f.run, cfg, false).run().unwrap_err();
    assert_eq!(err.exit_code(), 4, "{err}");
    assert!(matches!(err, CliError::Deployment(_) | CliError::Stage { .. }), "{err}");

    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(f.run.join(pipeline::MAPPING_JSON)).unwrap()).unwrap();
    assert_eq!(summary["deployable"], false);
    assert!(summary["error"].is_object());
    assert!(!f.run.join(pipeline::METRICS_JSON).exists());

    let out = bin()
        .args(["map", "--model"])
        .arg(f.run.join(pipeline::MODEL_SNNW))
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 4);
    let diagnostic: serde_json::Value = serde_json::from_slice(&out.stdout).expect("JSON diagnostic on stdout");
    assert!(diagnostic.is_object());
}

#[test]
fn run_writes_binary_probe_records() {
    let f = fixture();
    let cfg = Config::load(None, &small_overrides(&f.data, "8-16-10")).unwrap();
    Pipeline::new(&f.run, cfg, false).run().unwrap();
    let model = f.run.join(pipeline::MODEL_SNNW);

    let bin_path = f.run.join("probe.bin");
    let json_path = f.run.join("probe.json");
    for (format, path) in [("bin", &bin_path), ("json", &json_path)] {
        let out = bin()
            .args(["run", "--steps", "16", "--image-index", "3", "--format", format, "--model"])
            .arg(&model)
            .arg("--data-dir")
            .arg(&f.data)
            .arg("--out")
            .arg(path)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let bytes = std::fs::read(&bin_path).unwrap();
    assert_eq!(&bytes[..4], b"SPRB");
    let decoded = probe::decode(&bytes).unwrap();
    let from_json: spikesearch::ProbeRecord = serde_json::from_slice(&std::fs::read(&json_path).unwrap()).unwrap();
    assert_eq!(decoded, from_json);
    assert_eq!(decoded.steps, 16);
    assert_eq!(probe::encode(&decoded), bytes);

    let out = bin()
        .args(["run", "--image-index", "100000", "--model"])
        .arg(&model)
        .arg("--data-dir")
        .arg(&f.data)
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);
}
