//! CSV ingestion, report files and the `welsch` binary end to end.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{normal, rng};
use welsch_regression::io::{bias_table, load_csv, provenance_path, read_table, write_report, Provenance, TabularFile};
use welsch_regression::simulation::BiasPoint;
use welsch_regression::Error;

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn welsch(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_welsch"))
        .args(args)
        .current_dir(dir)
        .env_remove("WELSCH_OUT_DIR")
        .output()
        .unwrap()
}

/// y = 1 + 2·x1 − x2 + noise, with a categorical column when `with_text`.
fn regression_csv(n: usize, seed: u64, with_text: bool) -> String {
    let mut r = rng(seed);
    let mut body = String::from(if with_text { "sex,x1,x2,y\n" } else { "x1,x2,y\n" });
    for i in 0..n {
        let (x1, x2) = (3.0 + 2.0 * normal(&mut r), normal(&mut r) - 5.0);
        let mut y = 1.0 + 2.0 * x1 - x2 + 0.5 * normal(&mut r);
        if i % 10 == 0 {
            y += 60.0;
        }
        if with_text {
            body.push_str(["M,", "F,", "I,"][i % 3]);
        }
        body.push_str(&format!("{x1},{x2},{y}\n"));
    }
    body
}

#[test]
fn three_row_file_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "d.csv", "x1,x2,y\n1,2,3\n2,0,1\n4,1,0\n");
    let (data, rec) = load_csv(&TabularFile::new(&path), false, false).unwrap();
    assert_eq!((data.n(), data.p()), (3, 2));
    assert_eq!(data.y(), &[3.0, 1.0, 0.0]);
    let (with_b0, _) = load_csv(&TabularFile::new(&path), false, true).unwrap();
    assert_eq!(with_b0.p(), 3);
    assert_eq!(rec.features, vec!["x1", "x2"]);
}

#[test]
fn standardized_columns_have_zero_mean_unit_sd() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "d.csv", &regression_csv(137, 1, false));
    let (data, _) = load_csv(&TabularFile::new(&path), true, false).unwrap();
    let n = data.n() as f64;
    for j in 0..data.p() {
        let col: Vec<f64> = (0..data.n()).map(|i| data.x().row(i)[j]).collect();
        let m = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(m.abs() <= 1e-12, "{m}");
        assert!((sd - 1.0).abs() <= 1e-12, "{sd}");
    }
}

#[test]
fn malformed_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let missing_target = write(dir.path(), "a.csv", "x1,x2\n1,2\n");
    assert!(matches!(load_csv(&TabularFile::new(&missing_target), true, true), Err(Error::Data { .. })));

    let bad = write(dir.path(), "b.csv", "x1,y\n1,2\n3,oops\n");
    let msg = load_csv(&TabularFile::new(&bad), true, true).unwrap_err().to_string();
    assert!(msg.contains("row 3") && msg.contains("`y`"), "{msg}");

    let empty = write(dir.path(), "c.csv", "");
    assert!(load_csv(&TabularFile::new(&empty), true, true).is_err());

    let text = write(dir.path(), "d.csv", &regression_csv(20, 2, true));
    let msg = load_csv(&TabularFile::new(&text), true, true).unwrap_err().to_string();
    assert!(msg.contains("sex"), "{msg}");
    let (data, rec) = load_csv(&TabularFile::new(&text).dropping_non_numeric(true), true, true).unwrap();
    assert_eq!((data.n(), data.p()), (20, 3));
    assert_eq!(rec.dropped, vec!["sex"]);
}

#[test]
fn bias_table_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let points: Vec<BiasPoint> = [(0.0, 0), (0.02, 20)]
        .iter()
        .flat_map(|&(proportion, outliers)| {
            [("welsch", 1.0 / 3.0 + proportion), ("huber", std::f64::consts::PI * proportion)]
                .map(|(estimator, bias)| BiasPoint { proportion, outliers, estimator: estimator.into(), bias })
        })
        .collect();
    let path = dir.path().join("bias.csv");
    write_report(&bias_table(&points), &path, &Provenance::new("test", Some(1), vec![1u8])).unwrap();
    let (header, rows) = read_table(&path).unwrap();
    assert_eq!(header, vec!["proportion", "outliers", "bias_welsch", "bias_huber"]);
    for (row, chunk) in rows.iter().zip(points.chunks(2)) {
        assert_eq!(row[0].parse::<f64>().unwrap(), chunk[0].proportion);
        assert_eq!(row[1].parse::<usize>().unwrap(), chunk[0].outliers);
        assert_eq!(row[2].parse::<f64>().unwrap(), chunk[0].bias);
        assert_eq!(row[3].parse::<f64>().unwrap(), chunk[1].bias);
    }
    assert!(provenance_path(&path).exists());
}

#[test]
fn fit_with_auto_tau_writes_coefficients_and_residuals() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "train.csv", &regression_csv(300, 3, true));
    let out = welsch(
        dir.path(),
        &["fit", "--data", "train.csv", "--drop-non-numeric", "--loss", "welsch", "--tau", "auto", "--out", "res/fit"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_table(&dir.path().join("res/fit.coefficients.csv")).unwrap();
    assert_eq!(header[0], "term");
    let original: Vec<f64> = rows.iter().map(|r| r.last().unwrap().parse().unwrap()).collect();
    // Original-unit coefficients recover (1, 2, −1) despite 10% shifted rows.
    for (got, want) in original.iter().zip([1.0, 2.0, -1.0]) {
        assert!((got - want).abs() < 0.25, "{original:?}");
    }
    let (_, res) = read_table(&dir.path().join("res/fit.residuals.csv")).unwrap();
    assert_eq!(res.len(), 300);
    assert!(dir.path().join("res/fit.cv.csv").exists());
    assert!(provenance_path(&dir.path().join("res/fit.coefficients.csv")).exists());
}

#[test]
fn bias_curve_preset_writes_proportion_columns() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["bias-curve", "--preset", "fig1a-desk", "--seed", "7", "--replicates", "3", "--out", "bias.csv"];
    let out = welsch(dir.path(), &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_table(&dir.path().join("bias.csv")).unwrap();
    assert_eq!(header[0], "proportion");
    assert!(header.iter().any(|h| h == "bias_welsch") && header.iter().any(|h| h == "bias_huber"));
    assert_eq!(rows.len(), 6);
    let prov = fs::read_to_string(provenance_path(&dir.path().join("bias.csv"))).unwrap();
    assert!(prov.contains("seed = 7"), "{prov}");

    let first = fs::read(dir.path().join("bias.csv")).unwrap();
    assert!(welsch(dir.path(), &args).status.success());
    assert_eq!(first, fs::read(dir.path().join("bias.csv")).unwrap());
}

#[test]
fn defaulted_seed_is_recorded_and_config_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = welsch(dir.path(), &["rate", "--replicates", "2", "--out", "rate.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let prov = fs::read_to_string(dir.path().join("rate.csv.provenance.toml")).unwrap();
    assert!(prov.contains("seed = 20240601"), "{prov}");

    write(dir.path(), "run.toml", "seed = 5\nreplicates = 2\nout = \"from_config.csv\"\n");
    let out = welsch(dir.path(), &["--config", "run.toml", "rate", "--seed", "6"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let prov = fs::read_to_string(dir.path().join("from_config.csv.provenance.toml")).unwrap();
    assert!(prov.contains("seed = 6") && !prov.contains("seed = 5"), "{prov}");
}

#[test]
fn diagnose_clean_fit_reports_large_basin_fraction() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "clean.csv", &{
        let mut r = rng(4);
        let mut s = String::from("x1,x2,x3,y\n");
        for _ in 0..400 {
            let x: Vec<f64> = (0..3).map(|_| normal(&mut r)).collect();
            s.push_str(&format!("{},{},{},{}\n", x[0], x[1], x[2], x[0] - x[1] + 0.5 * x[2] + normal(&mut r)));
        }
        s
    });
    for args in [vec!["diagnose", "--data", "clean.csv", "--tau", "0.1"], vec!["diagnose", "--tau", "0.1"]] {
        let out = welsch(dir.path(), &args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let stdout = String::from_utf8_lossy(&out.stdout);
        let frac: f64 =
            stdout.lines().find_map(|l| l.strip_prefix("basin_fraction: ")).unwrap().trim().parse().unwrap();
        assert!(frac >= 0.9, "{args:?}: {stdout}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| welsch(dir.path(), args).status.code().unwrap();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["no-such-command"]), 2);
    assert_eq!(code(&["bias-curve", "--preset", "nope"]), 2);
    assert_eq!(code(&["fit", "--data", "missing.csv"]), 1);
    write(dir.path(), "bad.toml", "sed = 1\n");
    let out = welsch(dir.path(), &["--config", "bad.toml", "rate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sed"));
    write(dir.path(), "neg.toml", "[fit]\nloss = { family = \"welsch\", tau = -1.0 }\n");
    write(dir.path(), "d.csv", &regression_csv(30, 9, false));
    let out = welsch(dir.path(), &["--config", "neg.toml", "fit", "--data", "d.csv"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
