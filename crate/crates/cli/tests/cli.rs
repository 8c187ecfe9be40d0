//! End-to-end tests of the command-line surface and its file formats.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gamelearn"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gamelearn-cli-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn gen_game(dir: &Path, seed: u64) -> PathBuf {
    let path = dir.join(format!("game-{seed}.json"));
    run_ok(
        bin()
            .args(["gen-game", "--seed", &seed.to_string(), "--out"])
            .arg(&path),
    );
    path
}

#[test]
fn gen_game_is_deterministic_and_in_range() {
    let dir = tmp_dir("gen-game");
    let a = std::fs::read_to_string(gen_game(&dir, 3)).unwrap();
    let b = std::fs::read_to_string(gen_game(&dir, 3)).unwrap();
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["players"], 2);
    assert_eq!(v["actions"], serde_json::json!([2, 2]));
    for tensor in v["payoffs"].as_array().unwrap() {
        let entries = tensor.as_array().unwrap();
        assert_eq!(entries.len(), 4);
        for e in entries {
            let x = e.as_f64().unwrap();
            assert!((1.0..=2.0).contains(&x));
        }
    }
}

#[test]
fn gen_data_emits_jsonl_with_header() {
    let dir = tmp_dir("gen-data");
    let game = gen_game(&dir, 5);
    let data = dir.join("data.jsonl");
    let truth = dir.join("truth.json");
    run_ok(
        bin()
            .args([
                "gen-data", "--lambda", "2", "--m", "7", "--seed", "11", "--game",
            ])
            .arg(&game)
            .arg("--out")
            .arg(&data)
            .arg("--truth-out")
            .arg(&truth),
    );
    let text = std::fs::read_to_string(&data).unwrap();
    let mut lines = text.lines();
    let header: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(header["players"], 2);
    assert_eq!(header["M"], 7);
    assert_eq!(header["R"], 0.7);
    assert_eq!(header["seed"], 11);
    let mut count = 0;
    for line in lines {
        let sample: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(sample["a"].as_array().unwrap().len(), 2);
        assert_eq!(sample["v"].as_array().unwrap().len(), 2);
        count += 1;
    }
    assert_eq!(count, 7);

    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&truth).unwrap()).unwrap();
    assert_eq!(truth["lambda"], 2.0);
    assert!(truth["game"]["payoffs"].is_array());
    assert!(truth["profile"].is_array());
}

#[test]
fn learn_all_methods_produce_estimates() {
    let dir = tmp_dir("learn");
    let game = gen_game(&dir, 8);
    let data = dir.join("data.jsonl");
    let truth = dir.join("truth.json");
    run_ok(
        bin()
            .args([
                "gen-data", "--lambda", "1", "--m", "8", "--seed", "4", "--game",
            ])
            .arg(&game)
            .arg("--out")
            .arg(&data)
            .arg("--truth-out")
            .arg(&truth),
    );

    for method in ["naive", "naive-lqre", "naive-nash", "lqre"] {
        let est_path = dir.join(format!("est-{method}.json"));
        let mut cmd = bin();
        cmd.args([
            "learn",
            "--method",
            method,
            "--lambda",
            "1",
            "--epsilon",
            "0.25",
            "--delta",
            "0.5",
        ])
        .arg("--data")
        .arg(&data)
        .arg("--truth")
        .arg(&truth)
        .arg("--out")
        .arg(&est_path);
        let out = run_ok(&mut cmd);
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(stderr.contains("error vs truth:"), "{stderr}");
        let est: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&est_path).unwrap()).unwrap();
        assert_eq!(est["method"], method);
        assert_eq!(est["payoffs"].as_array().unwrap().len(), 2);
        assert_eq!(est["profile"].as_array().unwrap().len(), 2);
        // Profile entries form distributions.
        for sigma in est["profile"].as_array().unwrap() {
            let sum: f64 = sigma
                .as_array()
                .unwrap()
                .iter()
                .map(|x| x.as_f64().unwrap())
                .sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn learn_naive_nash_requires_truth() {
    let dir = tmp_dir("nash-truth");
    let game = gen_game(&dir, 9);
    let data = dir.join("data.jsonl");
    run_ok(
        bin()
            .args(["gen-data", "--m", "5", "--seed", "2", "--game"])
            .arg(&game)
            .arg("--out")
            .arg(&data),
    );
    let out = bin()
        .args(["learn", "--method", "naive-nash", "--data"])
        .arg(&data)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--truth"));
}

#[test]
fn learn_can_dump_the_compiled_wcsp() {
    let dir = tmp_dir("dump");
    let game = gen_game(&dir, 12);
    let data = dir.join("data.jsonl");
    run_ok(
        bin()
            .args(["gen-data", "--m", "6", "--seed", "3", "--game"])
            .arg(&game)
            .arg("--out")
            .arg(&data),
    );
    let dump = dir.join("wcsp.json");
    run_ok(
        bin()
            .args([
                "learn",
                "--method",
                "naive",
                "--epsilon",
                "0.25",
                "--delta",
                "0.5",
                "--data",
            ])
            .arg(&data)
            .arg("--dump-wcsp")
            .arg(&dump)
            .arg("--out")
            .arg(dir.join("est.json")),
    );
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&dump).unwrap()).unwrap();
    let vars = v["variables"].as_array().unwrap();
    assert!(vars.iter().any(|x| x["id"] == "s0_0"));
    assert!(v["constraints"]
        .as_array()
        .unwrap()
        .iter()
        .any(|c| c["kind"] == "soft"));
}

#[test]
fn experiment_emits_csv_and_json() {
    let dir = tmp_dir("experiment");
    let csv_path = dir.join("table3.csv");
    let json_path = dir.join("table3.json");
    let out = run_ok(bin().args([
        "experiment",
        "--table",
        "3",
        "--games",
        "2",
        "--seed",
        "5",
        "--m",
        "4",
        "--epsilon",
        "0.25",
        "--delta",
        "0.5",
        "--true-lambda-values",
        "0.5,1.5",
        "--threads",
        "2",
        "--out-csv",
        csv_path.to_str().unwrap(),
        "--out-json",
        json_path.to_str().unwrap(),
    ]));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("method,axis_value,mean_error,stderr"));
    assert!(stdout.contains("improvement_pct,0.5,"));
    let file_csv = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(stdout, file_csv);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(v["axis"], "wrong_lambda");
    // 4 methods x 2 axis values.
    assert_eq!(v["rows"].as_array().unwrap().len(), 8);
    assert_eq!(v["cells"].as_array().unwrap().len(), 16);
}
