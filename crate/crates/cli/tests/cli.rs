use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fedcrit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedcrit"))
        .args(args)
        .output()
        .expect("binary runs")
}

const CONFIG: &str = r#"{
    "federation": {
        "n_clients": 4, "clients_per_round": 2, "local_steps": 2, "batch_size": 8,
        "lr0": 0.1, "lr_decay": 0.98, "rounds": 3, "master_seed": 1, "arch": [3, 6, 2]
    },
    "dataset": {"kind": "csv", "train": "train.csv", "test": "test.csv"},
    "data_schedule": {"ratio": 0.5, "recover_round": 1}
}"#;

fn write_data(dir: &Path) {
    let status = fedcrit(&[
        "gen-data", "--classes", "2", "--dim", "3", "--n", "120", "--spread", "0.5", "--seed", "4", "--out",
    ]
    .iter()
    .copied()
    .chain([dir.join("train.csv").to_str().unwrap()])
    .collect::<Vec<_>>());
    assert!(status.status.success());
    fs::copy(dir.join("train.csv"), dir.join("test.csv")).unwrap();
    fs::write(dir.join("config.json"), CONFIG).unwrap();
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_writes_balanced_csv() {
    let dir = tempfile::tempdir().unwrap();
    write_data(dir.path());
    let text = fs::read_to_string(dir.path().join("train.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 120);
    assert!(rows.iter().all(|r| r.split(',').count() == 4));
    assert_eq!(rows.iter().filter(|r| r.starts_with("0,")).count(), 60);
}

#[test]
fn run_writes_metrics_and_record() {
    let dir = tempfile::tempdir().unwrap();
    write_data(dir.path());
    let out = dir.path().join("out");
    let result = fedcrit(&["run", "--config", path(&dir.path().join("config.json")), "--out", path(&out)]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(out.join("run.json").exists());
    assert!(String::from_utf8_lossy(&result.stdout).contains("final_accuracy="));

    let again = dir.path().join("again");
    fedcrit(&["run", "--config", path(&dir.path().join("config.json")), "--out", path(&again)]);
    assert_eq!(fs::read(out.join("metrics.csv")).unwrap(), fs::read(again.join("metrics.csv")).unwrap());
}

#[test]
fn sweep_writes_one_directory_per_run() {
    let dir = tempfile::tempdir().unwrap();
    write_data(dir.path());
    let out = dir.path().join("sweep");
    let result = fedcrit(&[
        "sweep",
        "--config",
        path(&dir.path().join("config.json")),
        "--recover-rounds",
        "0,2,never",
        "--seeds",
        "1,2",
        "--out",
        path(&out),
    ]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    for m in ["0", "2", "never"] {
        for s in [1, 2] {
            assert!(out.join(format!("recover_{m}_seed_{s}/metrics.csv")).exists());
        }
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let first: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(first, vec!["0", "2", "never"]);
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    write_data(dir.path());
    let out = dir.path().join("out");

    let bad = dir.path().join("bad.json");
    fs::write(&bad, CONFIG.replace("\"rounds\": 3", "\"rounds\": 3, \"epochs\": 2")).unwrap();
    let r = fedcrit(&["run", "--config", path(&bad), "--out", path(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).starts_with("error:"));

    let dup = fedcrit(&[
        "sweep", "--config", path(&dir.path().join("config.json")), "--recover-rounds", "1,1", "--seeds", "1",
        "--out", path(&out),
    ]);
    assert_eq!(dup.status.code(), Some(2));

    fs::write(dir.path().join("test.csv"), "0,1.0,2.0,3.0\n1,oops,0,0\n").unwrap();
    let r = fedcrit(&["run", "--config", path(&dir.path().join("config.json")), "--out", path(&out)]);
    assert_eq!(r.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&r.stderr).contains("test.csv:2:"), "{}", String::from_utf8_lossy(&r.stderr));

    let r = fedcrit(&["run", "--config", path(&dir.path().join("missing.json")), "--out", path(&out)]);
    assert_eq!(r.status.code(), Some(4));
}
