//! End-to-end runs of the `passive-decoy` binary.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_passive-decoy"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// Parses CSV text into a header and rows of raw fields.
fn csv_table(text: &[u8]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rdr = csv::Reader::from_reader(text);
    let header = rdr.headers().unwrap().iter().map(str::to_owned).collect();
    let rows = rdr.records().map(|r| r.unwrap().iter().map(str::to_owned).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<Option<f64>> {
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| (!r[i].is_empty()).then(|| r[i].parse().unwrap())).collect()
}

fn delta_fidelity(distance: &str) -> Vec<f64> {
    let o = run(&["sweep", "--set", "axis=delta", "--set", &format!("distance={distance}")]);
    assert_eq!(code(&o), 0);
    let (h, rows) = csv_table(&o.stdout);
    column(&h, &rows, "fidelity").into_iter().map(Option::unwrap).collect()
}

#[test]
fn delta_sweep_has_eleven_rows_and_unit_fidelity_at_zero() {
    let f = delta_fidelity("30");
    assert_eq!(f.len(), 11);
    assert_eq!(f[0], 1.0);
    assert!(f.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn shorter_link_keeps_higher_fidelity() {
    let (f30, f50) = (delta_fidelity("30"), delta_fidelity("50"));
    for k in 1..f30.len() {
        assert!(f30[k] > f50[k], "δ index {k}: {} vs {}", f30[k], f50[k]);
    }
}

#[test]
fn distance_sweep_is_nonincreasing_and_has_fixed_schema() {
    let o = run(&["sweep", "--set", "stop=200", "--set", "step=5"]);
    assert_eq!(code(&o), 0);
    let (h, rows) = csv_table(&o.stdout);
    let expected = [
        "distance",
        "r_c",
        "r_nc",
        "r",
        "y1_l",
        "e1_u",
        "delta1c_l",
        "q_t",
        "q_c",
        "q_nc",
        "e_t",
        "e_c",
        "e_nc",
        "flags",
    ];
    assert_eq!(h, expected);
    let r: Vec<f64> = column(&h, &rows, "r").into_iter().map(Option::unwrap).collect();
    assert_eq!(r.len(), 41);
    assert!(r.windows(2).all(|w| w[1] <= w[0]));
    assert!(r[0] > 0.0 && *r.last().unwrap() == 0.0);
}

#[test]
fn csv_floats_carry_seventeen_significant_digits() {
    let o = run(&["sweep", "--set", "stop=0"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(!text.contains('\r'));
    let row = text.lines().nth(1).unwrap();
    let r = row.split(',').nth(3).unwrap();
    let mantissa = r.split('e').next().unwrap();
    assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 17, "{r}");
}

#[test]
fn jsonl_rows_use_csv_field_names() {
    let csv = run(&["compare", "--set", "stop=20"]);
    let jsonl = run(&["compare", "--set", "stop=20", "--format", "jsonl"]);
    let (h, rows) = csv_table(&csv.stdout);
    let text = String::from_utf8(jsonl.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), rows.len());
    let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    let keys: Vec<&String> = first.as_object().unwrap().keys().collect();
    let mut sorted = h.clone();
    sorted.sort();
    assert_eq!(keys, sorted.iter().collect::<Vec<_>>());
    let csv_r: f64 = rows[0][2].parse().unwrap();
    assert_eq!(first["r_passive"].as_f64().unwrap(), csv_r);
}

#[test]
fn compare_orders_passive_above_two_intensity_and_within_three_intensity_cutoff() {
    let o = run(&["compare", "--set", "compare_deltas=0.02"]);
    assert_eq!(code(&o), 0);
    let (h, rows) = csv_table(&o.stdout);
    assert_eq!(rows.len(), 150);
    let rp = column(&h, &rows, "r_passive");
    let r2 = column(&h, &rows, "r_active2");
    let fp = column(&h, &rows, "fidelity_passive");
    let f2 = column(&h, &rows, "fidelity_active2");
    for i in 0..rows.len() {
        if rp[i].unwrap() > 0.0 && r2[i].unwrap() > 0.0 {
            assert!(fp[i].unwrap() >= f2[i].unwrap(), "row {i}");
        }
    }
    let cp = column(&h, &rows, "cutoff_passive")[0].unwrap();
    let c3 = column(&h, &rows, "cutoff_active3")[0].unwrap();
    assert!(cp <= c3, "{cp} > {c3}");
}

#[test]
fn compare_without_fluctuation_has_unit_fidelities() {
    let o = run(&["compare", "--set", "compare_deltas=0", "--set", "stop=90", "--set", "step=10"]);
    let (h, rows) = csv_table(&o.stdout);
    for name in ["fidelity_passive", "fidelity_active2", "fidelity_active3"] {
        assert!(column(&h, &rows, name).iter().all(|f| *f == Some(1.0)), "{name}");
    }
}

#[test]
fn beyond_cutoff_delta_sweep_exits_three() {
    let o = run(&["sweep", "--set", "axis=delta", "--set", "distance=400"]);
    assert_eq!(code(&o), 3);
    let (_, rows) = csv_table(&o.stdout);
    assert_eq!(rows.len(), 1);
    assert!(rows[0].last().unwrap().starts_with("error:beyond_cutoff"));
}

#[test]
fn configuration_errors_exit_two() {
    for args in [
        vec!["sweep", "--set", "bogus=1"],
        vec!["sweep", "--set", "mu1=-0.5"],
        vec!["sweep", "--set", "step=0"],
        vec!["sweep", "--format", "xml"],
        vec!["compare", "--set", "compare_deltas=0.7"],
        vec!["sweep", "--config", "/nonexistent/run.conf"],
    ] {
        let o = run(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn config_file_with_overrides_and_output_path() {
    let dir = tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, "# delta sweep at 50 km\naxis = delta\ndistance = 30 # replaced below\nstop = 0.05\n")
        .unwrap();
    let out = dir.path().join("rows.csv");
    let o = run(&["sweep", "--config", conf.to_str().unwrap(), "--set", "distance=50", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    let (h, rows) = csv_table(&std::fs::read(&out).unwrap());
    assert_eq!(rows.len(), 6);
    let f = column(&h, &rows, "fidelity");
    let direct = delta_fidelity("50");
    assert_eq!(f[5].unwrap(), direct[5]);
}

#[test]
fn printed_config_round_trips() {
    let dir = tempdir().unwrap();
    let first = run(&["config", "--set", "mu2=2.5e-4", "--set", "realization_set=full_box", "--set", "step=0.3"]);
    assert_eq!(code(&first), 0);
    let path = dir.path().join("echo.conf");
    std::fs::write(&path, &first.stdout).unwrap();
    let second = run(&["config", "--config", path.to_str().unwrap()]);
    assert_eq!(first.stdout, second.stdout);
}

fn validate(dir: &Path, extra: &[&str]) -> (i32, String) {
    let out = dir.join(format!("report-{}.jsonl", extra.len()));
    let mut args = vec!["validate", "--seed", "1", "--format", "jsonl", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = run(&args);
    (code(&o), std::fs::read_to_string(out).unwrap())
}

#[test]
fn default_validation_passes_and_is_deterministic() {
    let dir = tempdir().unwrap();
    let (c1, r1) = validate(dir.path(), &[]);
    assert_eq!(c1, 0, "{r1}");
    let (c2, r2) = validate(dir.path(), &["--set", "seed=1"]);
    assert_eq!(c2, 0);
    assert_eq!(r1, r2);
    assert!(r1.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
}

#[test]
fn negative_control_fails_validation() {
    let dir = tempdir().unwrap();
    let (c, report) = validate(
        dir.path(),
        &["--set", "negative_control=true", "--set", "mc_trials=20000", "--set", "battery_instances=20"],
    );
    assert_eq!(c, 1);
    let failing: Vec<&str> = report.lines().filter(|l| l.contains(r#""passed":false"#)).collect();
    assert_eq!(failing.len(), 1, "{report}");
    assert!(failing[0].contains("mis-specified"));
}
