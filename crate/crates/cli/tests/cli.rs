use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn transden(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_transden"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn transden")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = transden(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn simulate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let base = [
        "simulate",
        "--n-paths",
        "8",
        "--horizon",
        "1",
        "--lag",
        "0.5",
        "--seed",
        "11",
    ];
    ok(&[&base[..], &["--out", "a"]].concat(), dir.path());
    ok(&[&base[..], &["--out", "b"]].concat(), dir.path());
    ok(
        &[
            "simulate",
            "--n-paths",
            "8",
            "--horizon",
            "1",
            "--lag",
            "0.5",
            "--seed",
            "12",
            "--out",
            "c",
        ],
        dir.path(),
    );
    let read = |d: &str| std::fs::read(dir.path().join(d).join("ensemble.bin")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    let ens = transden::io::load_ensemble(&dir.path().join("a/ensemble.bin")).unwrap();
    assert_eq!(ens.n_paths(), 8);
    assert_eq!(ens.grid().n_steps(), 150);
    assert!(ens.seed().is_some());
}

#[test]
fn fit_from_saved_csv_ensemble() {
    let dir = TempDir::new().unwrap();
    ok(
        &[
            "simulate",
            "--model",
            "cir",
            "--n-paths",
            "30",
            "--horizon",
            "3",
            "--format",
            "csv",
            "--out",
            "sim",
        ],
        dir.path(),
    );
    let stdout = ok(
        &[
            "fit",
            "--input",
            "sim/ensemble.csv",
            "--m1",
            "3",
            "--m2",
            "4",
            "--out",
            "fit",
        ],
        dir.path(),
    );
    assert!(stdout.contains("\"m1\":3") && stdout.contains("\"seed\":"));
    let fit = transden::io::load_fit(&dir.path().join("fit/fit.json")).unwrap();
    assert_eq!(fit.dims(), (3, 4));
    let grid = std::fs::read_to_string(dir.path().join("fit/estimate.csv")).unwrap();
    assert!(grid.starts_with("x\\y,"));
    assert_eq!(grid.lines().count(), 101);
    assert!(dir.path().join("fit/truth.csv").exists());
}

#[test]
fn select_writes_criterion_table() {
    let dir = TempDir::new().unwrap();
    ok(
        &[
            "select",
            "--n-paths",
            "40",
            "--horizon",
            "3",
            "--cap-m1",
            "4",
            "--cap-m2",
            "5",
            "--out",
            "s",
        ],
        dir.path(),
    );
    let table = std::fs::read_to_string(dir.path().join("s/selection.csv")).unwrap();
    assert_eq!(
        table.lines().next().unwrap(),
        "m1,m2,sq_norm,penalty,criterion,truncated,chosen"
    );
    assert_eq!(table.lines().filter(|l| l.ends_with(",true")).count(), 1);
}

#[test]
fn benchmark_reports_are_byte_identical() {
    let (d1, d2) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let args = [
        "benchmark",
        "--n-paths",
        "20",
        "--horizon",
        "2",
        "--reps",
        "3",
        "--cap-m1",
        "4",
        "--cap-m2",
        "5",
        "--seed",
        "5",
        "--out",
        "r",
    ];
    ok(&args, d1.path());
    ok(&args, d2.path());
    for f in ["report.csv", "report.json"] {
        let a = std::fs::read_to_string(d1.path().join("r").join(f)).unwrap();
        let b = std::fs::read_to_string(d2.path().join("r").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
    let csv = std::fs::read_to_string(d1.path().join("r/report.csv")).unwrap();
    assert!(csv.contains("# aggregate"));
    assert!(csv.lines().last().unwrap().ends_with(",5"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("run.conf"), "model = cir\nN = 12\nT = 2\n").unwrap();
    let stdout = ok(
        &[
            "simulate",
            "--config",
            "run.conf",
            "--n-paths",
            "9",
            "--out",
            "o",
        ],
        dir.path(),
    );
    assert!(stdout.contains("\"n_paths\":9"));
    let ens = transden::io::load_ensemble(&dir.path().join("o/ensemble.bin")).unwrap();
    assert_eq!(ens.model(), Some(transden::sim::Model::Cir));
}

#[test]
fn errors_are_single_line_and_nonzero() {
    let dir = TempDir::new().unwrap();
    for args in [
        &["simulate", "--model", "heston"][..],
        &["select", "--kappa", "-1"][..],
        &["fit", "--input", "missing.bin", "--m1", "2", "--m2", "2"][..],
    ] {
        let out = transden(args, dir.path());
        assert!(!out.status.success());
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
        assert!(err.starts_with("error["), "{err}");
    }
    std::fs::write(dir.path().join("bad.conf"), "bogus = 3\n").unwrap();
    let out = transden(&["simulate", "--config", "bad.conf"], dir.path());
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .starts_with("error[configuration]"));
}

#[test]
fn exact_price_of_unit_payoff_is_discount_factor() {
    let dir = TempDir::new().unwrap();
    let stdout = ok(
        &["price", "--x", "0.3", "--payoff", "unit", "--rate", "0.05"],
        dir.path(),
    );
    let v: f64 = stdout
        .split("\"price\":")
        .nth(1)
        .unwrap()
        .trim()
        .trim_end_matches('}')
        .parse()
        .unwrap();
    assert!((v - (-0.05f64).exp()).abs() < 1e-6, "{v}");
}
