//! End-to-end runs of the `bitmat` binary and the roll-call golden fixture.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bitmat::io::{load_matrix, FitFile};
use bitmat::rollcall::{preprocess_rollcall, read_rollcall, PrepOptions};
use serde_json::Value;

mod common;

use common::{GOLDEN_BILLS, GOLDEN_ROWS};

fn bitmat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bitmat"))
        .args(args)
        .env_remove("BITMAT_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = bitmat(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn rollcall_fixture_matches_golden_cells() {
    let records = read_rollcall(fs::File::open(fixture("rollcall_small.csv")).unwrap()).unwrap();
    let m = preprocess_rollcall(&records, &PrepOptions::default()).unwrap();
    assert_eq!(m.meta.col_labels(), GOLDEN_BILLS);
    let senators: Vec<&str> = GOLDEN_ROWS.iter().map(|r| r.0).collect();
    assert_eq!(m.meta.row_labels(), senators);
    for (i, (_, cells)) in GOLDEN_ROWS.iter().enumerate() {
        for (j, c) in cells.chars().enumerate() {
            let want = match c {
                '.' => None,
                d => Some(d.to_digit(2).unwrap() as u8),
            };
            assert_eq!(m.data.value(i, j), want, "cell ({}, {})", senators[i], GOLDEN_BILLS[j]);
        }
    }
    let c = &m.counts;
    assert_eq!((c.senators_in, c.bills_in), (10, 12));
    assert_eq!(c.senators_short_service, 1);
    assert_eq!(c.senators_never_voted, 0);
    assert_eq!(c.bills_no_votes, 1);
    assert_eq!(c.bills_constant, 1);
    assert_eq!(c.bills_unoriented, 2);
    assert_eq!(c.senators_emptied, 1);
    assert_eq!((c.senators_out, c.bills_out), (8, 8));
    assert!((c.missing_fraction - 8.0 / 64.0).abs() < 1e-15);

    let dropped: Vec<(u8, &str, &str)> = m.audit.iter().map(|a| (a.step, a.kind, a.id.as_str())).collect();
    for want in [
        (1, "senator", "Lugar"),
        (2, "bill", "B04"),
        (3, "bill", "B03"),
        (4, "bill", "B05"),
        (4, "bill", "B06"),
        (5, "senator", "Heinrich"),
    ] {
        assert!(dropped.contains(&want), "missing audit entry {want:?} in {dropped:?}");
    }
    assert_eq!(dropped.len(), 6);
}

#[test]
fn rollcall_prep_command_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture("rollcall_small.csv");
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("senate{run}.csv"));
        ok(&["rollcall-prep", "--input", s(&input), "--output", s(&out)]);
        let audit = dir.path().join(format!("senate{run}.audit.json"));
        outputs.push((fs::read(&out).unwrap(), fs::read(audit).unwrap()));
        let (data, meta) = load_matrix(&out).unwrap();
        assert_eq!((data.n_rows(), data.n_cols()), (8, 8));
        assert_eq!(meta.row_labels()[0], "Alexander");
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn empty_matrix_file_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.csv");
    fs::write(&input, "").unwrap();
    let out = bitmat(&["fit", "--input", s(&input), "--output", s(&dir.path().join("fit.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn unlinked_forms_are_reported_as_disconnected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("design.json");
    let data = dir.path().join("forms.csv");
    ok(&[
        "make-design",
        "--kind",
        "linking",
        "--rows",
        "30",
        "--cols",
        "12",
        "--shared",
        "0",
        "--output",
        s(&config),
    ]);
    ok(&["simulate", "--input", s(&config), "--output", s(&data)]);
    let out = bitmat(&["fit", "--input", s(&data), "--output", s(&dir.path().join("fit.json"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("2 components"));
}

#[test]
fn linking_design_reports_forty_percent_missing() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&[
        "make-design",
        "--kind",
        "linking",
        "--rows",
        "2000",
        "--cols",
        "120",
        "--shared",
        "40",
        "--output",
        s(&dir.path().join("link.json")),
    ]);
    let stats: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        (stats["n_rows"].as_u64(), stats["n_cols"].as_u64()),
        (Some(4000), Some(200))
    );
    assert_eq!(stats["connected"], Value::Bool(true));
    assert!(
        (stats["design"]["missing_fraction"].as_f64().unwrap() - 0.40).abs() < 1e-12,
        "{stats}"
    );
}

#[test]
fn fit_infer_and_rank_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("design.json");
    let data = dir.path().join("data.csv");
    let fit_path = dir.path().join("fit.json");
    ok(&[
        "make-design",
        "--kind",
        "block",
        "--rows",
        "60",
        "--cols",
        "16",
        "--seed",
        "3",
        "--output",
        s(&config),
    ]);
    ok(&["simulate", "--input", s(&config), "--output", s(&data)]);
    assert!(dir.path().join("data.truth.json").exists());
    ok(&["fit", "--input", s(&data), "--output", s(&fit_path)]);
    let fit = FitFile::load(&fit_path).unwrap();
    assert_eq!((fit.n_rows, fit.n_cols), (60, 16));

    let out = ok(&[
        "infer",
        "--input",
        s(&fit_path),
        "--form",
        "row 0",
        "--form",
        "rowdiff 0 1",
        "--form",
        "entry 2 3",
        "--method",
        "exact",
        "--data",
        s(&data),
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "form,estimate,se,ci_lower,ci_upper,z,p,log10_p,method"
    );
    assert_eq!(lines.count(), 3);

    let bad = bitmat(&["infer", "--input", s(&fit_path), "--form", "rowdiff 4 4"]);
    assert!(!bad.status.success());

    let out = ok(&["rank", "--input", s(&fit_path), "--top", "3"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn coverage_outputs_have_the_documented_shape_and_repeat_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("study.json");
    ok(&[
        "make-design",
        "--kind",
        "block",
        "--rows",
        "50",
        "--cols",
        "8",
        "--replications",
        "6",
        "--seed",
        "9",
        "--output",
        s(&config),
    ]);
    let mut runs = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("run{run}"));
        ok(&["coverage", "--input", s(&config), "--output", s(&out)]);
        let mut files = Vec::new();
        for name in ["summary.json", "variance.csv", "histogram.csv", "coverage.csv"] {
            files.push(fs::read(out.join(name)).unwrap());
        }
        runs.push(files);
    }
    assert_eq!(runs[0], runs[1]);

    let summary: Value = serde_json::from_slice(&runs[0][0]).unwrap();
    for key in ["mse_m", "mse_theta", "mse_beta"] {
        assert!(summary[key].is_f64(), "{key}");
    }
    assert_eq!(summary["coverage_theta"].as_array().unwrap().len(), 50);
    assert_eq!(summary["coverage_beta"].as_array().unwrap().len(), 8);
    let targets = summary["coverage_m"].as_array().unwrap().len();
    assert!(targets > 0 && targets <= 50 * 8);
}
