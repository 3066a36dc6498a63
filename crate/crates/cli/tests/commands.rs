use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_loadgan");

const TINY_CONFIG: &str = r#"{
  "network": { "latent_dim": 4, "hidden_units": 4, "num_layers": 1 },
  "batch_size": 16,
  "ae_epochs": 2,
  "sup_epochs": 2,
  "adv_epochs": 2,
  "checkpoint_every": 1,
  "score_samples": 32,
  "seed": 3
}"#;

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn profile_rows(path: &Path) -> Vec<Vec<f64>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("household_id,date,h00,"));
    lines
        .map(|l| l.split(',').skip(2).map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn assert_normalized(rows: &[Vec<f64>]) {
    for r in rows {
        assert_eq!(r.len(), 24);
        let min = r.iter().copied().fold(f64::INFINITY, f64::min);
        let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((min, max), (0.0, 1.0));
    }
}

fn day(household: &str, date: &str, hours: impl Iterator<Item = u32>, kwh: impl Fn(u32) -> f64) -> String {
    hours
        .map(|h| format!("{household},{date}T{h:02}:00:00Z,{}\n", kwh(h)))
        .collect()
}

#[test]
fn ingest_keeps_full_days_and_counts_the_rest() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("readings.csv");
    let mut csv = String::from("household_id,timestamp,kwh\n");
    csv += &day("a", "2020-01-01", 0..24, |h| 0.3 + (h as f64 * 0.7).sin().abs());
    csv += &day("a", "2020-01-02", 0..20, |h| h as f64);
    csv += &day("a", "2020-01-03", 0..24, |_| 0.8);
    csv += &day("b", "2020-01-01", (0..24).chain(5..6), |h| h as f64 * 0.1);
    csv += &day("b", "2020-01-02", 0..24, |h| (24 - h) as f64);
    fs::write(&input, csv).unwrap();
    let output = dir.path().join("profiles.csv");
    let report = dir.path().join("report.json");
    let out = run(&["ingest", "--input", p(&input), "--output", p(&output), "--report", p(&report)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let rows = profile_rows(&output);
    assert_eq!(rows.len(), 2);
    assert_normalized(&rows);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(report["days_seen"], 5);
    assert_eq!(report["kept"], 2);
    assert_eq!(report["dropped_incomplete"], 1);
    assert_eq!(report["dropped_flat"], 1);
    assert_eq!(report["dropped_excess"], 1);
    assert!(dir.path().join("profiles.csv.manifest.json").exists());
}

#[test]
fn ingest_input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let output = dir.path().join("out.csv");
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&run(&["ingest", "--input", p(&missing), "--output", p(&output)])), 2);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "household_id,timestamp,kwh\na,2020-01-01T00:00:00,-1\n").unwrap();
    let out = run(&["ingest", "--input", p(&bad), "--output", p(&output)]);
    assert_eq!(code(&out), 2);
    assert!(!output.exists());

    let wrong_header = dir.path().join("header.csv");
    fs::write(&wrong_header, "id,time,value\n").unwrap();
    assert_eq!(code(&run(&["ingest", "--input", p(&wrong_header), "--output", p(&output)])), 2);
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&run(&["no-such-command"])), 2);
    assert_eq!(code(&run(&["synthdata", "--n", "ten", "--output", "x.csv"])), 2);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn synthdata_is_seeded_and_normalized() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert_eq!(code(&run(&["synthdata", "--n", "300", "--seed", "4", "--output", p(&a)])), 0);
    assert_eq!(code(&run(&["synthdata", "--n", "300", "--seed", "4", "--output", p(&b)])), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let rows = profile_rows(&a);
    assert_eq!(rows.len(), 300);
    assert_normalized(&rows);

    let zero = dir.path().join("zero.csv");
    assert_eq!(code(&run(&["synthdata", "--n", "0", "--output", p(&zero)])), 2);
}

#[test]
fn train_rejects_bad_inputs_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let empty = dir.path().join("empty.csv");
    let header: Vec<String> = (0..24).map(|h| format!("h{h:02}")).collect();
    fs::write(&empty, format!("household_id,date,{}\n", header.join(","))).unwrap();
    assert_eq!(code(&run(&["train", "--profiles", p(&empty), "--out-dir", p(&out_dir)])), 2);

    let narrow = dir.path().join("narrow.csv");
    fs::write(&narrow, "household_id,date,h00,h01\na,2020-01-01,0,1\n").unwrap();
    assert_eq!(code(&run(&["train", "--profiles", p(&narrow), "--out-dir", p(&out_dir)])), 2);

    let profiles = dir.path().join("profiles.csv");
    assert_eq!(code(&run(&["synthdata", "--n", "40", "--output", p(&profiles)])), 0);
    let config = dir.path().join("config.json");
    fs::write(&config, r#"{ "batch_size": 16, "learning_rate": 0.1 }"#).unwrap();
    let args = ["train", "--profiles", p(&profiles), "--config", p(&config), "--out-dir", p(&out_dir)];
    assert_eq!(code(&run(&args)), 2);
    fs::write(&config, r#"{ "batch_size": 0 }"#).unwrap();
    assert_eq!(code(&run(&args)), 2);
}

#[test]
fn diverging_training_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let profiles = dir.path().join("profiles.csv");
    assert_eq!(code(&run(&["synthdata", "--n", "40", "--output", p(&profiles)])), 0);
    let config = dir.path().join("config.json");
    let cfg = TINY_CONFIG.replace("\"seed\": 3", "\"seed\": 3, \"lr\": 1e308, \"grad_clip\": 1e308");
    fs::write(&config, cfg).unwrap();
    let out_dir = dir.path().join("run");
    let out = run(&["train", "--profiles", p(&profiles), "--config", p(&config), "--out-dir", p(&out_dir)]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_generate_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let profiles = dir.path().join("profiles.csv");
    assert_eq!(code(&run(&["synthdata", "--n", "60", "--seed", "2", "--output", p(&profiles)])), 0);
    let config = dir.path().join("config.json");
    fs::write(&config, TINY_CONFIG).unwrap();
    let out_dir = dir.path().join("run");
    let args = ["train", "--profiles", p(&profiles), "--config", p(&config), "--out-dir", p(&out_dir)];
    let out = run(&[&args[..], &["--log-every", "0"]].concat());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "best.ckpt",
        "holdout.csv",
        "ae_loss.csv",
        "sup_loss.csv",
        "joint_loss.csv",
        "scores.csv",
        "manifest.json",
        "checkpoints/epoch-000001.ckpt",
        "checkpoints/epoch-000002.ckpt",
    ] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
    let scores = fs::read_to_string(out_dir.join("scores.csv")).unwrap();
    assert!(scores.starts_with("epoch,frechet\n"));
    assert_eq!(scores.lines().count(), 3);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 3);

    let ckpt = out_dir.join("best.ckpt");
    let gen = dir.path().join("gen.csv");
    let out = run(&["generate", "--checkpoint", p(&ckpt), "--n", "50", "--seed", "1", "--output", p(&gen)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = profile_rows(&gen);
    assert_eq!(rows.len(), 50);
    assert!(rows.iter().flatten().all(|v| (0.0..=1.0).contains(v)));

    let eval_dir = dir.path().join("eval");
    let holdout = out_dir.join("holdout.csv");
    let out = run(&["evaluate", "--real", p(&holdout), "--gen", p(&gen), "--out-dir", p(&eval_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics: serde_json::Value =
        serde_json::from_slice(&fs::read(eval_dir.join("metrics.json")).unwrap()).unwrap();
    let js = metrics["js_distance"].as_f64().unwrap();
    assert!((0.0..=std::f64::consts::LN_2.sqrt()).contains(&js));
    for name in ["cdf_real.csv", "cdf_gen.csv", "pairs.csv", "pca.csv", "manifest.json"] {
        assert!(eval_dir.join(name).exists(), "missing {name}");
    }
    let cdf = fs::read_to_string(eval_dir.join("cdf_gen.csv")).unwrap();
    assert!(cdf.starts_with("value,cdf\n"));
    assert_eq!(cdf.lines().count(), 102);
    let pca = fs::read_to_string(eval_dir.join("pca.csv")).unwrap();
    assert!(pca.starts_with("pc1,pc2,provenance\n"));
}

#[test]
fn generate_rejects_bad_checkpoints_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen.csv");
    let corrupt = dir.path().join("corrupt.ckpt");
    fs::write(&corrupt, "{\"format_version\": 1, \"epoch\": ").unwrap();
    let out = run(&["generate", "--checkpoint", p(&corrupt), "--n", "5", "--output", p(&gen)]);
    assert_eq!(code(&out), 2);
    let future = dir.path().join("future.ckpt");
    fs::write(&future, "{\"format_version\": 99}").unwrap();
    assert_eq!(code(&run(&["generate", "--checkpoint", p(&future), "--n", "5", "--output", p(&gen)])), 2);
    let missing = dir.path().join("missing.ckpt");
    assert_eq!(code(&run(&["generate", "--checkpoint", p(&missing), "--n", "5", "--output", p(&gen)])), 2);
    assert!(!gen.exists());
}

#[test]
fn evaluate_rejects_empty_sets() {
    let dir = tempfile::tempdir().unwrap();
    let real = dir.path().join("real.csv");
    assert_eq!(code(&run(&["synthdata", "--n", "20", "--output", p(&real)])), 0);
    let empty = dir.path().join("empty.csv");
    let header: Vec<String> = (0..24).map(|h| format!("h{h:02}")).collect();
    fs::write(&empty, format!("household_id,date,{}\n", header.join(","))).unwrap();
    let out_dir = dir.path().join("eval");
    assert_eq!(
        code(&run(&["evaluate", "--real", p(&real), "--gen", p(&empty), "--out-dir", p(&out_dir)])),
        2
    );
}
