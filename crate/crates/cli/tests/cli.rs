use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use driver_model::RouteMap;
use driver_model_cli::{commands, run, PipelineConfig};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_drivermodel"));
    c.env("RUST_LOG", "error");
    c
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

#[test]
fn gen_data_twice_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    run(["drivermodel", "--out", out, "gen-route"]).unwrap();
    run(["drivermodel", "--out", out, "gen-refs"]).unwrap();
    run(["drivermodel", "--out", out, "gen-data", "--drivers", "71", "--seed", "7"]).unwrap();
    let first = snapshot(&tmp.path().join("data"));
    assert_eq!(first.keys().filter(|p| p.extension().is_some_and(|e| e == "csv")).count(), 71);
    run(["drivermodel", "--out", out, "gen-data", "--drivers", "71", "--seed", "7"]).unwrap();
    assert!(first == snapshot(&tmp.path().join("data")));

    run(["drivermodel", "--out", out, "gen-data", "--drivers", "71", "--seed", "8"]).unwrap();
    let other = snapshot(&tmp.path().join("data"));
    let name = PathBuf::from("driver_000.csv");
    assert_ne!(first[&name], other[&name]);
}

#[test]
fn missing_history_names_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.csv");
    let out = bin()
        .args(["predict", "--history"])
        .arg(&missing)
        .args(["--model"])
        .arg(tmp.path().join("model.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("missing.csv"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
}

#[test]
fn exit_codes_follow_the_help_text() {
    let out = bin().args(["gen-data", "--wings", "2"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let help = bin().arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8(help.stdout).unwrap().contains("Exit codes:"));

    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "n_drivers = 3\nn_test = 3\n").unwrap();
    let out = bin().arg("--config").arg(&cfg).arg("gen-refs").output().unwrap();
    assert_eq!(out.status.code(), Some(4));

    // gen-refs before gen-route: the route file is missing
    let out = bin().arg("--out").arg(tmp.path().join("empty")).arg("gen-refs").output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr).unwrap().contains("route.toml"));
}

fn tiny_config(dir: &Path) -> PipelineConfig {
    let route_file = dir.join("short.toml");
    RouteMap::open_road(600.0, 12.0).unwrap().save(&route_file).unwrap();
    let text = format!(
        r#"
        seed = 11
        out_dir = "{out}"
        route = "{route}"
        n_refs = 2
        n_drivers = 6
        n_test = 2

        [window]
        t_h = 2.0
        t_p = 0.5

        [ga]
        population = 6
        generations = 2

        [model]
        n_e = 4
        n_d = 4

        [train]
        epochs = 2
        samples_per_epoch = 40
        batch_size = 8
        "#,
        out = dir.join("out").display(),
        route = route_file.display()
    );
    let path = dir.join("tiny.toml");
    std::fs::write(&path, text).unwrap();
    PipelineConfig::load(&path).unwrap()
}

#[test]
fn tiny_pipeline_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let report = commands::repro(&cfg).unwrap();
    assert_eq!(report.rows.len(), 2);
    let out = tmp.path().join("out");
    for f in [
        "route.toml",
        "refs/references.json",
        "data/drivers.json",
        "calib/calibrations.json",
        "calib/param_summary.csv",
        "model/model.json",
        "model/loss.csv",
        "model/split.json",
        "eval/scores.csv",
        "eval/distributions.csv",
        "eval/comparison.txt",
        "eval/comparison.csv",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let first = snapshot(&out);
    commands::repro(&cfg).unwrap();
    assert!(first == snapshot(&out), "a second run changed the outputs");

    // later stages leave their inputs alone
    commands::calibrate_all(&cfg).unwrap();
    commands::train_model(&cfg).unwrap();
    assert!(first == snapshot(&out));

    let split: commands::SplitRecord =
        serde_json::from_slice(&first[&PathBuf::from("model/split.json")]).unwrap();
    let history = out.join("data").join(format!("{}.csv", split.test[0]));
    let forecast = bin()
        .arg("predict")
        .arg("--history")
        .arg(&history)
        .arg("--model")
        .arg(out.join("model/model.json"))
        .output()
        .unwrap();
    assert!(forecast.status.success());
    let text = String::from_utf8(forecast.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("step,t,v,err"));
    assert_eq!(text.lines().count(), 1 + 5);
}
