use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dystan::dataset::{read_cache, synth_raw, write_cache, write_recordings, SynthConfig, CSV_HEADER};
use serde_json::{json, Value};
use tempfile::TempDir;

fn dystan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dystan")).args(args).output().expect("failed to launch dystan")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\nstdout:\n{}\nstderr:\n{}", o.status.code(), stdout(o), stderr(o));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn tiny_config(epochs: usize) -> Value {
    json!({
        "model": {
            "in_channels": 13, "seq_len": 100,
            "shared_conv": [{"filters": 4, "kernel": 5}, {"filters": 4, "kernel": 3}],
            "branch_conv": {"filters": 4, "kernel": 3},
            "dcsu_hidden": 4, "attention_heads": 2, "lstm_hidden": 4, "head_hidden": 8,
            "dropout": 0.2, "num_sed": 4, "num_soc": 3, "variant": "FULL",
            "bn_eps": 1e-5, "bn_momentum": 0.1
        },
        "train": {"lr": 0.003, "batch_size": 16, "max_epochs": epochs, "seed": 0, "select_metric": "joint_accuracy"},
        "cv": {"folds": 5, "group_by_participant": false, "parallel_folds": false}
    })
}

struct Fixture {
    dir: TempDir,
    cache: PathBuf,
    config: PathBuf,
}

fn fixture(epochs: usize) -> Fixture {
    let dir = TempDir::new().unwrap();
    let cache = dir.path().join("synth.cache");
    ok(&dystan(&["synth", "--out", s(&cache), "--per-class", "10", "--noise", "0.1", "--coupling", "0.3", "--seed", "3"]));
    let config = dir.path().join("run.json");
    fs::write(&config, tiny_config(epochs).to_string()).unwrap();
    Fixture { dir, cache, config }
}

fn train(f: &Fixture, model: &str, out: &Path, seed: &str) -> Output {
    dystan(&["train", "--data", s(&f.cache), "--model", model, "--config", s(&f.config), "--out", s(out), "--seed", seed])
}

fn write_segments(path: &Path, count: usize) {
    let raw = synth_raw(&SynthConfig { samples_per_joint_class: 1, noise_std: 0.05, coupling: 0.3, seed: 9 }).unwrap();
    write_recordings(fs::File::create(path).unwrap(), &raw[..count]).unwrap();
}

#[test]
fn preprocess_one_segment_gives_47_windows() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("one.csv");
    let cache = dir.path().join("one.cache");
    write_segments(&csv, 1);
    let o = dystan(&["preprocess", "--input", s(&csv), "--output", s(&cache)]);
    ok(&o);
    assert!(stdout(&o).starts_with("47 windows from 1 recordings"), "{}", stdout(&o));
    assert!(stdout(&o).contains("AL     A           47"), "{}", stdout(&o));
    assert_eq!(read_cache(&cache).unwrap().len(), 47);
    let m = read_json(&dir.path().join("one.cache.manifest.json"));
    assert_eq!(m["command"], "preprocess");
    assert_eq!(m["config"]["keep_other"], false);
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn preprocess_header_only_writes_empty_cache() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("empty.csv");
    let cache = dir.path().join("empty.cache");
    fs::write(&csv, format!("{}\n", CSV_HEADER.join(","))).unwrap();
    let o = dystan(&["preprocess", "--input", s(&csv), "--output", s(&cache)]);
    ok(&o);
    assert!(stderr(&o).contains("warning"), "{}", stderr(&o));
    assert!(read_cache(&cache).unwrap().is_empty());
}

#[test]
fn preprocess_corrupt_row_names_the_line() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("bad.csv");
    write_segments(&csv, 1);
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut fields: Vec<String> = lines[4].split(',').map(String::from).collect();
    let col = CSV_HEADER.iter().position(|h| *h == "ay").unwrap();
    fields[col] = "not-a-number".into();
    lines[4] = fields.join(",");
    fs::write(&csv, lines.join("\n") + "\n").unwrap();
    let o = dystan(&["preprocess", "--input", s(&csv), "--output", s(&dir.path().join("bad.cache"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));
}

#[test]
fn synth_is_deterministic_and_coupling_matters() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str, coupling: &str| {
        let p = dir.path().join(name);
        ok(&dystan(&["synth", "--out", s(&p), "--per-class", "10", "--noise", "0.2", "--coupling", coupling, "--seed", "5"]));
        p
    };
    let a = run("a.cache", "0.5");
    let b = run("b.cache", "0.5");
    let c = run("c.cache", "0");
    assert_eq!(read_cache(&a).unwrap().len(), 120);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let m = read_json(&dir.path().join("a.cache.manifest.json"));
    assert_eq!(
        m["config"],
        json!({"samples_per_joint_class": 10, "noise_std": 0.2, "coupling": 0.5, "seed": 5})
    );
    assert_eq!(m["seed"], 5);
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[test]
fn train_writes_every_artifact_and_aggregate_recomputes() {
    let f = fixture(2);
    let out = f.dir.path().join("run");
    let o = train(&f, "full", &out, "11");
    ok(&o);
    for fold in 0..5 {
        for what in ["best.ckpt", "report.json", "epochs.csv", "predictions.csv", "sed_embeddings.bin", "soc_embeddings.bin", "standardization.json"] {
            assert!(out.join(format!("fold{fold}_{what}")).is_file(), "missing fold{fold}_{what}");
        }
        let log = fs::read_to_string(out.join(format!("fold{fold}_epochs.csv"))).unwrap();
        assert_eq!(log.lines().count(), 3);
    }

    let reports: Vec<Value> = (0..5).map(|i| read_json(&out.join(format!("fold{i}_report.json")))).collect();
    for (i, r) in reports.iter().enumerate() {
        assert_eq!(r["fold"], i);
        assert_eq!(r["seed"], 11 + i as u64);
        assert_eq!(r["variant"], "FULL");
    }
    let agg = read_json(&out.join("aggregate.json"));
    assert_eq!(agg["folds"], 5);
    let paths = [
        ("joint_accuracy", vec!["joint_accuracy"]),
        ("sed_accuracy", vec!["sed", "accuracy"]),
        ("soc_macro_f1", vec!["soc", "macro_f1"]),
        ("sed_intra_class_distance", vec!["sed", "intra_class_distance"]),
        ("soc_silhouette", vec!["soc", "silhouette"]),
    ];
    for (name, path) in paths {
        let vals: Vec<f64> = reports.iter().map(|r| path.iter().fold(r, |v, k| &v[*k]).as_f64().unwrap()).collect();
        let (mean, std) = mean_std(&vals);
        let m = &agg["metrics"][name];
        assert!((m["mean"].as_f64().unwrap() - mean).abs() < 1e-12, "{name} mean");
        assert!((m["std"].as_f64().unwrap() - std).abs() < 1e-12, "{name} std");
        assert_eq!(m["n"], 5);
    }

    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["config"]["train"]["seed"], 11);
    assert_eq!(manifest["config"]["model"]["variant"], "FULL");
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 5 * 7 + 1);
    assert!(manifest["finished_unix_ms"].as_u64() >= manifest["started_unix_ms"].as_u64());
    assert!(!out.join("manifest.json.tmp").exists());
}

#[test]
fn manifest_snapshot_reproduces_the_run() {
    let f = fixture(2);
    let first = f.dir.path().join("first");
    ok(&train(&f, "nsn", &first, "4"));
    let manifest = read_json(&first.join("manifest.json"));
    let snapshot = f.dir.path().join("snapshot.json");
    fs::write(&snapshot, manifest["config"].to_string()).unwrap();
    let second = f.dir.path().join("second");
    ok(&dystan(&[
        "train", "--data", s(&f.cache), "--model", "nsn", "--config", s(&snapshot), "--out", s(&second), "--seed", "4",
    ]));
    let again = read_json(&second.join("manifest.json"));
    assert_eq!(manifest["config"], again["config"]);
    let hashes = |m: &Value| -> Vec<String> {
        m["artifacts"].as_array().unwrap().iter().map(|a| a["sha256"].as_str().unwrap().to_string()).collect()
    };
    let (a, b) = (hashes(&manifest), hashes(&again));
    let names: Vec<String> =
        manifest["artifacts"].as_array().unwrap().iter().map(|a| a["path"].as_str().unwrap().to_string()).collect();
    for ((x, y), name) in a.iter().zip(&b).zip(&names) {
        // Epoch logs carry wall-clock times; everything else must match.
        if !name.ends_with("epochs.csv") {
            assert_eq!(x, y, "{name} differs");
        }
    }
}

#[test]
fn unknown_model_is_a_usage_error() {
    let f = fixture(1);
    let o = train(&f, "dystan2", &f.dir.path().join("x"), "1");
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("dystan2") && err.contains("Usage: dystan train"), "{err}");
    assert!(!f.dir.path().join("x").exists());
}

#[test]
fn config_file_must_be_complete() {
    let f = fixture(1);
    let mut cfg = tiny_config(1);
    cfg["train"].as_object_mut().unwrap().remove("batch_size");
    fs::write(&f.config, cfg.to_string()).unwrap();
    let o = train(&f, "full", &f.dir.path().join("x"), "1");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("batch_size"), "{}", stderr(&o));

    let mut cfg = tiny_config(1);
    cfg["cv"]["shuffle"] = json!(true);
    fs::write(&f.config, cfg.to_string()).unwrap();
    let o = train(&f, "full", &f.dir.path().join("x"), "1");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("shuffle"), "{}", stderr(&o));

    let mut cfg = tiny_config(1);
    cfg["model"]["dropout"] = json!(1.5);
    fs::write(&f.config, cfg.to_string()).unwrap();
    let o = train(&f, "full", &f.dir.path().join("x"), "1");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("configuration error"), "{}", stderr(&o));
}

#[test]
fn non_finite_loss_exits_3() {
    let f = fixture(2);
    let mut windows = read_cache(&f.cache).unwrap();
    windows[7].features[130] = f64::NAN;
    write_cache(&f.cache, &windows).unwrap();
    let o = train(&f, "full", &f.dir.path().join("x"), "1");
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("numeric failure: non-finite"), "{}", stderr(&o));
    assert!(!f.dir.path().join("x").join("manifest.json").exists());
}

#[test]
fn missing_inputs_exit_2() {
    let dir = TempDir::new().unwrap();
    let o = dystan(&["report", "--run", s(&dir.path().join("nope"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not exist"));
    let o = dystan(&["train", "--data", s(&dir.path().join("none.cache")), "--model", "full", "--out", s(&dir.path().join("o")), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = dystan(&["preprocess", "--input", s(&dir.path().join("none.csv")), "--output", s(&dir.path().join("o.cache"))]);
    assert_eq!(o.status.code(), Some(2));
    let o = dystan(&["synth", "--out", s(&dir.path().join("o.cache")), "--per-class", "2", "--noise", "0.1", "--coupling", "2", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_renderings_agree() {
    let f = fixture(2);
    let out = f.dir.path().join("run");
    ok(&train(&f, "cs", &out, "2"));
    let text = stdout(&dystan(&["report", "--run", s(&out), "--format", "text"]));
    let csv_out = dystan(&["report", "--run", s(&out), "--format", "csv"]);
    ok(&csv_out);
    let csv = stdout(&csv_out);

    let mut csv_values = std::collections::HashMap::new();
    for line in csv.lines().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        assert_eq!(parts.len(), 3, "{line}");
        csv_values.insert((parts[0].to_string(), parts[1].to_string()), parts[2].to_string());
    }

    // Confusion rows in the text rendering sum to 1 up to rounding and
    // match the full-precision csv values.
    let lines: Vec<&str> = text.lines().collect();
    let mut fold = None;
    let mut task = "";
    let mut names: Vec<String> = Vec::new();
    let mut rows_checked = 0;
    let mut scalars_checked = 0;
    for (i, line) in lines.iter().enumerate() {
        if let Some(rest) = line.strip_prefix("fold ") {
            fold = rest.split_whitespace().next().map(String::from);
            continue;
        }
        let t = line.trim_start();
        if t.starts_with("sed confusion") || t.starts_with("soc confusion") {
            task = &t[..3];
            names = lines[i + 1].split_whitespace().map(String::from).collect();
            continue;
        }
        let Some(fold) = &fold else { continue };
        let tokens: Vec<&str> = t.split_whitespace().collect();
        if line.starts_with("    ") {
            // Header rows hold class names only.
            let Some(vals) = tokens[1..].iter().map(|v| v.parse::<f64>().ok()).collect::<Option<Vec<f64>>>() else {
                continue;
            };
            assert_eq!(vals.len(), names.len(), "{t}");
            let sum: f64 = vals.iter().sum();
            assert!((sum - 1.0).abs() <= 0.005 * names.len() as f64 + 1e-9, "row {t} sums to {sum}");
            for (j, v) in vals.iter().enumerate() {
                let key = (format!("fold{fold}"), format!("{task}_confusion[{}][{}]", tokens[0], names[j]));
                let full: f64 = csv_values[&key].parse().unwrap();
                assert_eq!(format!("{full:.2}"), format!("{v:.2}"), "{key:?}");
            }
            rows_checked += 1;
        } else if let [name, value] = tokens[..] {
            let full = &csv_values[&(format!("fold{fold}"), name.to_string())];
            let shown = if full == "NA" { "undefined".to_string() } else { format!("{:.4}", full.parse::<f64>().unwrap()) };
            assert_eq!(shown, value, "fold{fold} {name}");
            scalars_checked += 1;
        }
    }
    assert_eq!(rows_checked, 5 * (4 + 3));
    assert_eq!(scalars_checked, 5 * 11);

    for line in text.lines().skip_while(|l| !l.starts_with("aggregate")).skip(1).take_while(|l| !l.is_empty()) {
        let mut it = line.split_whitespace();
        let name = it.next().unwrap();
        let mean = it.next().unwrap();
        let std = it.nth(1).unwrap();
        let get = |suffix: &str| csv_values[&("aggregate".to_string(), format!("{name}_{suffix}"))].parse::<f64>().unwrap();
        assert_eq!(format!("{:.4}", get("mean")), mean);
        assert_eq!(format!("{:.4}", get("std")), std);
    }
    assert!(text.contains("model CS"));
}

#[test]
fn cbg_is_labelled_as_a_stand_in() {
    let f = fixture(1);
    let out = f.dir.path().join("cbg");
    ok(&train(&f, "cbg", &out, "1"));
    let text = stdout(&dystan(&["report", "--run", s(&out)]));
    assert!(text.starts_with("model CBG (stand-in single-task baseline)"), "{text}");
}

#[test]
fn parallel_folds_match_sequential() {
    let f = fixture(1);
    let a = f.dir.path().join("seq");
    let b = f.dir.path().join("par");
    ok(&train(&f, "na", &a, "8"));
    ok(&dystan(&[
        "train", "--data", s(&f.cache), "--model", "na", "--config", s(&f.config), "--out", s(&b), "--seed", "8", "--parallel-folds",
    ]));
    for i in 0..5 {
        for what in ["best.ckpt", "report.json", "predictions.csv"] {
            let name = format!("fold{i}_{what}");
            assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name}");
        }
    }
    assert_eq!(read_json(&b.join("manifest.json"))["config"]["cv"]["parallel_folds"], true);
}

#[test]
fn grouped_folds_keep_participants_apart() {
    let f = fixture(1);
    let out = f.dir.path().join("grouped");
    ok(&dystan(&[
        "train", "--data", s(&f.cache), "--model", "nb", "--config", s(&f.config), "--out", s(&out), "--seed", "1",
        "--group-by-participant",
    ]));
    let windows = read_cache(&f.cache).unwrap();
    let mut seen = std::collections::HashMap::new();
    for i in 0..5 {
        let p = dystan::metrics::read_predictions(out.join(format!("fold{i}_predictions.csv"))).unwrap();
        for id in p.window_id {
            let prev = seen.insert(windows[id].participant_id.clone(), i);
            assert!(prev.is_none() || prev == Some(i), "participant {} in folds {prev:?} and {i}", windows[id].participant_id);
        }
    }
}

#[test]
fn ablate_tabulates_four_variants_on_one_split() {
    let f = fixture(1);
    let out = f.dir.path().join("ablation");
    let o = dystan(&["ablate", "--data", s(&f.cache), "--config", s(&f.config), "--out", s(&out), "--seed", "6"]);
    ok(&o);
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "model,sed_accuracy,sed_macro_f1,soc_accuracy,soc_macro_f1,joint_accuracy,split_sha256");
    assert_eq!(lines.len(), 5);
    let mut hashes = Vec::new();
    for (line, model) in lines[1..].iter().zip(["FULL", "NSN", "NB", "NA"]) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[0], model);
        assert_eq!(cells.len(), 7);
        for cell in &cells[1..6] {
            let (mean, std) = cell.split_once('±').expect("mean±std cell");
            mean.parse::<f64>().unwrap();
            std.parse::<f64>().unwrap();
        }
        hashes.push(cells[6].to_string());
        let agg = read_json(&out.join(model.to_lowercase()).join("aggregate.json"));
        assert_eq!(agg["split_sha256"], cells[6]);
        let joint = &agg["metrics"]["joint_accuracy"];
        assert_eq!(cells[5], format!("{:.4}±{:.4}", joint["mean"].as_f64().unwrap(), joint["std"].as_f64().unwrap()));
    }
    assert!(hashes.iter().all(|h| *h == hashes[0]));

    let text = fs::read_to_string(out.join("ablation.txt")).unwrap();
    let body: Vec<&str> = text.lines().skip(1).take(4).collect();
    for (row, model) in body.iter().zip(["FULL", "NSN", "NB", "NA"]) {
        assert!(row.starts_with(model) && row.matches('±').count() == 5, "{row}");
    }
    assert!(text.lines().next().unwrap().starts_with("Model  Sedentary Acc."));
    assert!(text.contains("ordering FULL >= NA >= NB on mean joint accuracy: "));
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["config"]["variants"], json!(["FULL", "NSN", "NB", "NA"]));
}
