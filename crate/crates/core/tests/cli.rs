//! End-to-end runs of the `gipeps` binary.

use std::path::Path;
use std::process::Command;

use gipeps::transfer::CSV_HEADER;

fn gipeps(args: &[&str], dir: &Path) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_gipeps")).args(args).current_dir(dir).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

const WILSON: &str = r#"{
  "experiment": "wilson",
  "model": { "kind": "minimal", "alpha": 1.0, "beta": 0.4, "gamma": 0.7, "delta": 0.5 },
  "lattice": [4, 4],
  "loops": [[1, 1], [2, 1], [2, 2]],
  "seed": 1,
  "output": { "csv": "out/w.csv", "json": "out/w.json" }
}"#;

#[test]
fn csv_header_is_stable() {
    assert_eq!(CSV_HEADER, "experiment,W,R_or_c,sector_label,value,residual,backend,chi,seed");
}

#[test]
fn run_writes_csv_and_record() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("w.json"), WILSON).unwrap();
    let (code, stdout, stderr) = gipeps(&["run", "w.json"], dir.path());
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("config_hash"));
    let csv = std::fs::read_to_string(dir.path().join("out/w.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 4);
    for line in &lines[1..] {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 9);
        assert_eq!(cols[0], "wilson");
        // network contraction agrees with the brute-force state
        assert!(cols[5].parse::<f64>().unwrap() < 1e-10, "{line}");
    }
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/w.json")).unwrap()).unwrap();
    assert_eq!(record["rows"].as_array().unwrap().len(), 3);
    assert_eq!(record["config_hash"].as_str().unwrap().len(), 64);

    // dense runs reproduce bitwise
    std::fs::rename(dir.path().join("out/w.csv"), dir.path().join("first.csv")).unwrap();
    assert_eq!(gipeps(&["run", "w.json"], dir.path()).0, 0);
    assert_eq!(
        std::fs::read(dir.path().join("first.csv")).unwrap(),
        std::fs::read(dir.path().join("out/w.csv")).unwrap()
    );
}

#[test]
fn config_error_exits_one_naming_field() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"experiment": "wilson", "model": {"kind": "toric"}}"#).unwrap();
    let (code, _, stderr) = gipeps(&["run", "bad.json"], dir.path());
    assert_eq!(code, 1);
    assert!(stderr.contains("`lattice`"), "{stderr}");
    let (code, _, stderr) = gipeps(&["run", "missing.json"], dir.path());
    assert_eq!(code, 1);
    assert!(stderr.contains("missing.json"), "{stderr}");
}

#[test]
fn failed_run_leaves_truncation_marker() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = WILSON.replace("[2, 2]]", "[2, 2], [4, 4]]");
    std::fs::write(dir.path().join("w.json"), cfg).unwrap();
    let (code, _, _) = gipeps(&["run", "w.json"], dir.path());
    assert_eq!(code, 1);
    let csv = std::fs::read_to_string(dir.path().join("out/w.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    assert!(csv.lines().last().unwrap().starts_with("# truncated"));
}

#[test]
fn sweep_numbers_outputs_and_merges() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("w.json"), WILSON).unwrap();
    let args = ["sweep", "w.json", "--param", "model.gamma", "--values", "0.0,0.5,1.0", "--merged", "all.csv"];
    let (code, stdout, stderr) = gipeps(&args, dir.path());
    assert_eq!(code, 0, "{stderr}");
    assert_eq!(stdout.lines().count(), 3);
    for i in 0..3 {
        assert!(dir.path().join(format!("out/w_{i:03}.csv")).exists());
        assert!(dir.path().join(format!("out/w_{i:03}.json")).exists());
    }
    let merged = std::fs::read_to_string(dir.path().join("all.csv")).unwrap();
    assert_eq!(merged.lines().next().unwrap(), format!("sweep_value,{CSV_HEADER}"));
    assert_eq!(merged.lines().count(), 1 + 9);
    assert!(merged.lines().nth(1).unwrap().starts_with("0.0,wilson"));

    let (code, stdout, _) =
        gipeps(&["sweep", "w.json", "--param", "model.gamma", "--values", "", "--merged", "none.csv"], dir.path());
    assert_eq!(code, 0);
    assert!(stdout.is_empty());
    assert_eq!(std::fs::read_to_string(dir.path().join("none.csv")).unwrap().lines().count(), 1);

    let (code, _, stderr) = gipeps(&["sweep", "w.json", "--param", "model.nope", "--values", "1"], dir.path());
    assert_eq!(code, 1);
    assert!(stderr.contains("model.nope"), "{stderr}");
}

#[test]
fn verify_subcommand_passes_on_small_lattice() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, stderr) = gipeps(&["verify", "--size", "2x2", "--output", "report.json"], dir.path());
    assert_eq!(code, 0, "{stderr}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let checks = report["checks"].as_array().unwrap();
    assert!(checks.iter().all(|c| c["pass"] == true));
    assert!(checks.iter().all(|c| c.get("name").is_some() && c.get("tolerance").is_some()));
}
