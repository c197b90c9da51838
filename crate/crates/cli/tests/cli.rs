use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn minres(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_minres"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

/// Rows of a CSV file, header excluded, split into fields.
fn rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("level,ndof,max_error,Ln_error,W1n_error,energy,eta")
    );
    lines
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn uniform_bfs_rows_quadruple() {
    let dir = tempfile::tempdir().unwrap();
    let out = minres(
        &[
            "run", "--preset", "ma2d", "--mode", "uniform", "--levels", "5",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = rows(&dir.path().join("ma2d_uniform.csv"));
    assert_eq!(rows.len(), 5);
    let ndof: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    // ratios climb towards 4 as the interior takes over
    let ratios: Vec<f64> = ndof.windows(2).map(|w| w[1] / w[0]).collect();
    assert!(ratios.windows(2).all(|r| r[1] > r[0]), "{ratios:?}");
    assert!(
        ratios.iter().all(|&r| r < 4.0) && *ratios.last().unwrap() > 3.0,
        "{ratios:?}"
    );
    for r in &rows {
        let e: f64 = r[2].parse().unwrap();
        assert!(e > 0.0 && e < 1.0);
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("tail eoc"));
}

#[test]
fn pucci_has_no_error_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = minres(
        &[
            "run",
            "--preset",
            "pucci-lshape",
            "--mode",
            "adaptive",
            "--max-ndof",
            "700",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = rows(&dir.path().join("pucci-lshape_adaptive.csv"));
    assert!(rows.len() >= 2);
    for r in &rows {
        assert!(
            r[2].is_empty() && r[3].is_empty() && r[4].is_empty(),
            "{r:?}"
        );
        assert!(r[5].parse::<f64>().unwrap() > 0.0);
        assert!(r[6].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn sweep_writes_one_csv_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = minres(
        &[
            "run",
            "--preset",
            "linear2d",
            "--levels",
            "2",
            "--sweep",
            "sigma=1,10,100,1000",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for v in ["1", "10", "100", "1000"] {
        let path = dir.path().join(format!("linear2d_uniform_sigma{v}.csv"));
        assert_eq!(rows(&path).len(), 2, "{}", path.display());
    }
}

#[test]
fn config_file_and_vtk_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"preset":"hjb-finite-2d","mode":"adaptive","max_ndof":200,"output":{"csv":"hjb.csv","vtk":true}}"#,
    )
    .unwrap();
    let out = minres(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let n = rows(&dir.path().join("hjb.csv")).len();
    assert!(n >= 1);
    for level in 0..n {
        let vtk = fs::read_to_string(dir.path().join(format!("hjb_level{level:02}.vtk"))).unwrap();
        assert!(vtk.contains("eta_boundary"));
    }
}

#[test]
fn invalid_configurations_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"preset":"ma2d","levls":3}"#).unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["run", "--config", cfg.to_str().unwrap()],
        vec!["run", "--preset", "nope"],
        vec![
            "run",
            "--preset",
            "ma2d",
            "--mode",
            "adaptive",
            "--config",
            "/nonexistent.json",
        ],
        vec!["run", "--preset", "pucci-lshape", "--sweep", "theta=0.5,2"],
    ];
    let codes: Vec<Option<i32>> = cases
        .iter()
        .map(|c| minres(c, dir.path()).status.code())
        .collect();
    assert_eq!(codes, [Some(2), Some(2), Some(1), Some(2)]);

    fs::write(
        &cfg,
        r#"{"preset":"ma2d","mode":"adaptive","space":{"kind":"bfs_rectangle"}}"#,
    )
    .unwrap();
    let out = minres(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("adaptive refinement"));
    // nothing was solved, so nothing was written
    assert!(!dir
        .path()
        .join("pucci-lshape_uniform_theta0.5.csv")
        .exists());
}

#[test]
fn solver_failure_exits_with_3_and_keeps_partial_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("strict.json");
    fs::write(
        &cfg,
        r#"{"preset":"ma2d","mode":"uniform","levels":2,"params":{"kkt_tol":1e-30}}"#,
    )
    .unwrap();
    let out = minres(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("partial results"));
    let csv = dir.path().join("ma2d_uniform.csv");
    assert!(rows(&csv).is_empty());
}

#[test]
fn csv_output_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "run",
        "--preset",
        "ma2d",
        "--mode",
        "adaptive",
        "--max-ndof",
        "1000",
    ];
    for d in [&a, &b] {
        let out = minres(&args, d.path());
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let x = fs::read(a.path().join("ma2d_adaptive.csv")).unwrap();
    let y = fs::read(b.path().join("ma2d_adaptive.csv")).unwrap();
    assert!(!x.is_empty());
    assert_eq!(x, y);
}
