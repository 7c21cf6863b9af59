use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hda_core::classifier::load_manifest;
use hda_core::seeds::prediction_loss;
use hda_core::{load_container, CampaignReport, ClassifierHandle};
use tempfile::TempDir;

const HDA: &str = env!("CARGO_BIN_EXE_hda");

const SMALL: &str = "
[ga]
population = 60
max_iterations = 40
outputs = 5

[robust]
samples = 200

[sample]
count = 20
";

fn hda(dir: &Path, args: &[&str]) -> Output {
    Command::new(HDA).args(args).current_dir(dir).output().expect("spawn hda")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = hda(dir, args);
    assert!(
        out.status.success(),
        "hda {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// A synthetic bundle plus a config with a small GA.
fn bundle(samples: usize) -> TempDir {
    let tmp = TempDir::new().unwrap();
    let n = samples.to_string();
    ok(tmp.path(), &["synth", "--out", ".", "--samples", &n]);
    let cfg = tmp.path().join("hda.toml");
    let mut text = fs::read_to_string(&cfg).unwrap();
    text.push_str(SMALL);
    fs::write(&cfg, text).unwrap();
    tmp
}

const PIPELINE: [&str; 9] = ["rsep", "pca-fit", "kde-fit", "seeds", "gen", "pgd", "robust", "eval", "sample"];

fn pipeline(dir: &Path, out: &str) {
    for cmd in PIPELINE {
        ok(dir, &[cmd, "--config", "hda.toml", "--k", "4", "--out", out]);
    }
}

#[test]
fn full_pipeline_emits_consistent_report() {
    let tmp = bundle(300);
    let dir = tmp.path();
    pipeline(dir, "run");
    let run = dir.join("run");

    let report: CampaignReport = serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.method, "hda");
    assert_eq!(report.seeds, 4);
    assert_eq!(report.total_cases, 4 * 5);
    assert!(report.fid.is_some());

    // Re-score every emitted case with the model directly.
    let h = ClassifierHandle::builtin(load_manifest(dir.join("model.manifest")).unwrap());
    let cases = load_container(run.join("cases.hdat")).unwrap();
    assert_eq!(cases.shape(), &[20, 1, 8, 8]);
    let probs = h.predict_probs(&cases).unwrap();
    let mut rdr = csv::Reader::from_path(run.join("cases.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 20);
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (seed_col, label_col, loss_col, linf_col) = (col("seed_index"), col("label"), col("loss"), col("linf"));
    let images = load_container(dir.join("images.hdat")).unwrap();
    let mut aes = 0;
    for (i, row) in rows.iter().enumerate() {
        let y: usize = row[label_col].parse().unwrap();
        let seed: usize = row[seed_col].parse().unwrap();
        let j = prediction_loss(probs.row(i), y).unwrap();
        let logged: f64 = row[loss_col].parse().unwrap();
        assert!((j - logged).abs() < 1e-6, "case {i}: J {j} vs logged {logged}");
        aes += usize::from(j >= 0.0);
        let x = images.row(seed);
        let linf = cases
            .row(i)
            .iter()
            .zip(x)
            .fold(0.0f64, |m, (a, b)| m.max(f64::from((a - b).abs())));
        assert!(linf <= report.radius + 1e-6);
        assert!((linf - row[linf_col].parse::<f64>().unwrap()).abs() < 1e-6);
        assert!(cases.row(i).iter().all(|p| (0.0..=1.0).contains(p)));
    }
    assert_eq!(aes, report.total_aes);

    let hash = |cmd: &str| {
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(run.join(format!("{cmd}.manifest.json"))).unwrap()).unwrap();
        v["config_hash"].as_str().unwrap().to_string()
    };
    let first = hash("rsep");
    for cmd in PIPELINE {
        assert_eq!(hash(cmd), first, "{cmd} manifest hash");
    }
    for f in ["eval.json", "robustness.csv", "pgd_report.json", "samples.hdat", "ranking.csv"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
}

#[test]
fn rerun_reproduces_csv_outputs_byte_for_byte() {
    let tmp = bundle(200);
    let dir = tmp.path();
    pipeline(dir, "a");
    pipeline(dir, "b");
    let mut compared = 0;
    for entry in fs::read_dir(dir.join("a")).unwrap().chain(fs::read_dir(dir.join("a/traces")).unwrap()) {
        let p: PathBuf = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "csv" || e == "hdat") {
            let rel = p.strip_prefix(dir.join("a")).unwrap();
            assert_eq!(fs::read(&p).unwrap(), fs::read(dir.join("b").join(rel)).unwrap(), "{rel:?} differs");
            compared += 1;
        }
    }
    assert!(compared >= 10, "only {compared} files compared");
}

#[test]
fn seed_count_above_dataset_size_exits_2() {
    let tmp = bundle(100);
    ok(tmp.path(), &["pca-fit", "--config", "hda.toml"]);
    ok(tmp.path(), &["kde-fit", "--config", "hda.toml"]);
    let out = hda(tmp.path(), &["seeds", "--config", "hda.toml", "--k", "101"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds"));
}

#[test]
fn unknown_config_key_exits_2() {
    let tmp = bundle(50);
    let cfg = tmp.path().join("hda.toml");
    let text = fs::read_to_string(&cfg).unwrap().replace("[ga]\n", "[ga]\npopulaton = 10\n");
    fs::write(&cfg, text).unwrap();
    let out = hda(tmp.path(), &["rsep", "--config", "hda.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("populaton"));
}

#[test]
fn missing_upstream_artifact_exits_2() {
    let tmp = bundle(50);
    let out = hda(tmp.path(), &["gen", "--config", "hda.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hda seeds"));
}

#[test]
fn dead_model_server_exits_1() {
    let tmp = bundle(50);
    let cfg = tmp.path().join("hda.toml");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("model = \"model.manifest\"", "command = \"exit 3\"");
    fs::write(&cfg, text).unwrap();
    ok(tmp.path(), &["pca-fit", "--config", "hda.toml"]);
    ok(tmp.path(), &["kde-fit", "--config", "hda.toml"]);
    let out = hda(tmp.path(), &["seeds", "--config", "hda.toml", "--k", "2"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn served_model_matches_builtin_backend() {
    let tmp = bundle(60);
    let manifest = tmp.path().join("model.manifest");
    let local = ClassifierHandle::builtin(load_manifest(&manifest).unwrap());
    let served = ClassifierHandle::spawn_server(&format!("'{HDA}' serve --model '{}'", manifest.display())).unwrap();
    assert_eq!(served.class_count(), local.class_count());
    assert_eq!(served.input_shape(), local.input_shape());
    assert!(served.supports_gradient());

    let images = load_container(tmp.path().join("images.hdat")).unwrap();
    let a = local.predict_probs(&images).unwrap();
    let b = served.predict_probs(&images).unwrap();
    for i in 0..a.rows() {
        for (p, q) in a.row(i).iter().zip(b.row(i)) {
            assert!((p - q).abs() < 1e-6, "row {i}: {p} vs {q}");
        }
    }
    for i in 0..10 {
        let ga = local.loss_gradient(images.row(i), i % 2).unwrap();
        let gb = served.loss_gradient(images.row(i), i % 2).unwrap();
        for (p, q) in ga.iter().zip(&gb) {
            assert!((p - q).abs() < 1e-5, "gradient {i}: {p} vs {q}");
        }
    }
}

#[test]
fn serve_replays_golden_transcript() {
    let tmp = bundle(20);
    let manifest = tmp.path().join("model.manifest");
    let mut child = Command::new(HDA)
        .args(["serve", "--model", manifest.to_str().unwrap()])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    {
        use std::io::Write;
        let zeros = hda_core::classifier::protocol::encode_f32(&[0.0; 64]);
        let mut stdin = child.stdin.take().unwrap();
        writeln!(stdin, r#"{{"op":"hello","version":1}}"#).unwrap();
        writeln!(stdin, r#"{{"op":"frobnicate","id":7,"shape":[1,1,8,8],"data_b64":"{zeros}"}}"#).unwrap();
        writeln!(stdin, "not json").unwrap();
    }
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3, "{text}");
    assert_eq!(
        lines[0],
        r#"{"classes":2,"gradient":true,"input_shape":[1,8,8],"op":"hello","version":1}"#
    );
    assert_eq!(lines[1], r#"{"error":"model server error: unknown op `frobnicate`","id":7}"#);
    assert!(lines[2].starts_with(r#"{"error":"malformed request"#) && lines[2].ends_with(r#""id":null}"#));
}
