use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hsi_ae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsi-ae"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn error_line(o: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let last = text.lines().last().expect("stderr has an error line");
    serde_json::from_str(last).expect("error line is JSON")
}

fn record_line(init: usize, run: usize, value: f64) -> String {
    serde_json::json!({
        "experiment_id": 0, "init_id": init, "run_id": run, "init_seed": init, "run_seed": 10 * init + run,
        "init_checksum": format!("{init:016x}"), "iterations": 1, "initial_loss": 1.0, "final_loss": value,
        "recon_rmse": value, "recon_sad": value, "abundance_rmse": null, "endmember_sad": null,
        "abundance_rmse_per_endmember": null, "permutation": null, "diverged": false, "trace_file": null
    })
    .to_string()
}

fn write_fixture(path: &Path) {
    let lines: Vec<String> = [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]]
        .iter()
        .enumerate()
        .flat_map(|(i, g)| {
            g.iter()
                .enumerate()
                .map(move |(j, v)| record_line(i + 1, j + 1, *v))
        })
        .collect();
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

const CONFIG: &str = r#"
architecture = "basic"
loss = "MSE"
dataset = "scene.toml"
encoder = "2E"
batch_size = 10
learning_rate = 0.001
epochs = 3
init = "XGU"
N = 2
k = 2
master_seed = 5
"#;

fn generate(dir: &Path) {
    let scene = dir.join("scene.toml");
    let o = hsi_ae(&[
        "gen",
        "--out",
        scene.to_str().unwrap(),
        "--bands",
        "12",
        "--endmembers",
        "3",
        "--width",
        "6",
        "--height",
        "5",
        "--noise",
        "0.01",
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    fs::write(dir.join("config.toml"), CONFIG).unwrap();
}

#[test]
fn plan_prints_required_trials() {
    let o = hsi_ae(&["plan", "--p-hat", "0.5", "--confidence", "0.95"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().any(|l| l == "n_req=5"), "{}", stdout(&o));
}

#[test]
fn plan_with_zero_success_is_a_data_error() {
    let o = hsi_ae(&["plan", "--p-hat", "0", "--confidence", "0.95"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_line(&o)["error"], "unreachable_threshold");
}

#[test]
fn analyze_hand_example() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("records.jsonl");
    write_fixture(&records);
    let out = dir.path().join("stats");
    let o = hsi_ae(&[
        "analyze",
        "--records",
        records.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("H = 7.200000"), "{}", stdout(&o));
    assert!(stdout(&o).contains("H0 rejected"));
    assert!(out.join("stat_report.toml").exists());
    assert!(out.join("posthoc_matrix.csv").exists());
}

#[test]
fn experiment_then_analyze_and_report() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let config = dir.path().join("config.toml");
    let run = dir.path().join("run");
    let o = hsi_ae(&[
        "experiment",
        "--config",
        config.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let records = run.join("records.jsonl");
    let text = fs::read_to_string(&records).unwrap();
    assert_eq!(text.lines().count(), 5, "meta line plus 2 x 2 records");

    let stats = dir.path().join("stats");
    let o = hsi_ae(&[
        "analyze",
        "--records",
        records.to_str().unwrap(),
        "--out",
        stats.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("kruskal-wallis"));

    let report = dir.path().join("report");
    let o = hsi_ae(&[
        "report",
        "--records",
        records.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
        "--threshold",
        "1.0",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trials = fs::read_to_string(report.join("trials.csv")).unwrap();
    assert!(trials.starts_with("threshold,p_hat,n_req,status"));
    assert!(trials.contains("1,1,1,ok"), "{trials}");
}

#[test]
fn experiment_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let config = dir.path().join("config.toml");
    let mut bodies = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = hsi_ae(&[
            "experiment",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        let text = fs::read_to_string(out.join("records.jsonl")).unwrap();
        bodies.push(text.lines().skip(1).collect::<Vec<_>>().join("\n"));
    }
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn usage_errors_exit_with_two() {
    let o = hsi_ae(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_line(&o)["exit_code"], 2);

    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let config = dir.path().join("config.toml");
    let out = dir.path().join("run");
    let o = hsi_ae(&[
        "experiment",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--set",
        "bogus=1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_line(&o)["error"], "config");
}

#[test]
fn missing_data_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let o = hsi_ae(&[
        "analyze",
        "--records",
        missing.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let err = error_line(&o);
    assert_eq!(err["error"], "missing_data");
    assert!(err["message"].as_str().unwrap().contains("nope.jsonl"));
}

#[test]
fn convert_attaches_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    // 4 bands, 2 endmembers, 3 pixels
    fs::write(p.join("em.csv"), "1,0.8,0.6,0.4\n0.1,0.3,0.5,0.7\n").unwrap();
    fs::write(p.join("ab.csv"), "1,0\n0.5,0.5\n0,1\n").unwrap();
    fs::write(
        p.join("px.csv"),
        "b1,b2,b3,b4\n1,0.8,0.6,0.4\n0.55,0.55,0.55,0.55\n0.1,0.3,0.5,0.7\n",
    )
    .unwrap();
    let out = p.join("scene.toml");
    let path = |n: &str| p.join(n).to_str().unwrap().to_string();
    let o = hsi_ae(&[
        "convert",
        "--input",
        &path("px.csv"),
        "--out",
        out.to_str().unwrap(),
        "--endmembers",
        &path("em.csv"),
        "--abundances",
        &path("ab.csv"),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("4 bands, 3 pixels"));
    let header = fs::read_to_string(&out).unwrap();
    assert!(header.contains("endmember_count = 2"), "{header}");
}
