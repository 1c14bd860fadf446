//! End-to-end checks of the command-line interface.

use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pro-sim"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.txt");
    fs::write(&path, body).unwrap();
    path
}

const TINY: &str = "
n_vehicles = 16
n_cbr_pairs = 3
sim_duration_s = 12
area_width_m = 1000
area_height_m = 1000
block_size_m = 500
seed = 5
";

#[test]
fn single_run_writes_results_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("out");
    let status = bin()
        .args(["--config"])
        .arg(&cfg)
        .args(["--algo", "greedy", "--quiet", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "scenario_id,algorithm,seed,n_vehicles,n_cbr_pairs,generated,delivered,pdr,avg_delay_s,\
         throughput,drop_queue,drop_sinr,drop_void,drop_limit"
    );
    let row = lines.next().unwrap();
    assert!(row.starts_with("default,greedy,5,16,3,"));
    assert_eq!(lines.next(), None);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let status = bin()
            .args(["--config"])
            .arg(&cfg)
            .args(["--algo", "exor", "--quiet", "--trace", "--out"])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        let results = fs::read(out.join("results.csv")).unwrap();
        let trace = fs::read(out.join("trace_default_exor_5.log")).unwrap();
        outputs.push((results, trace));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn sweep_row_counts_match_spec() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "
n_vehicles = 20
n_cbr_pairs = 2
sim_duration_s = 6
area_width_m = 1000
area_height_m = 1000
block_size_m = 500
algorithms = greedy
sweep_param = density
sweep_values = 12,16
replications = 3
",
    );
    let out = tmp.path().join("out");
    let status = bin()
        .args(["--config"])
        .arg(&cfg)
        .args(["--sweep", "density", "--quiet", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    // 1 algorithm x 2 values x 3 replications + header.
    assert_eq!(results.lines().count(), 7);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3); // header + 2 cells
}

#[test]
fn bad_config_fails_with_key_name() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "transmission_range_m = -4\n");
    let output = bin()
        .args(["--config"])
        .arg(&cfg)
        .args(["--quiet"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("transmission_range_m"), "{stderr}");
}

#[test]
fn missing_config_file_fails() {
    let output = bin()
        .args(["--config", "/no/such/file.txt"])
        .output()
        .unwrap();
    assert!(!output.status.success());
}
