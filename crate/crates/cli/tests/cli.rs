use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(file)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_credit-spde"))
        .args(args)
        .output()
        .unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let cfg = dir.join("run.cfg");
    let text = format!(
        "portfolio = {}\nindex = {}\nscheme = decoupled\ngrid_nodes = 201\ndt = 1/100\nn_sims = 400\n\
         rho_grid = 0.2,0.5\nmaturities = 5\ntranches = 0-3,3-6\nforward_starts = 0,1\n",
        data("portfolio.csv").display(),
        data("index.csv").display()
    );
    std::fs::write(&cfg, text).unwrap();
    cfg
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn missing_input_file_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "portfolio = /no/such/file.csv\nindex = /no/such/index.csv\n",
    )
    .unwrap();
    let out = run(&[
        "calibrate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/"));
}

#[test]
fn unknown_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "sigma = 0.2\ncorrelaton = 0.3\n").unwrap();
    let out = run(&[
        "price-tranches",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("correlaton"));
}

#[test]
fn malformed_value_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "rho = high\n").unwrap();
    let out = run(&["price-tranches", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rho"));
}

#[test]
fn calibrate_recovers_index_quotes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = dir.path().join("o");
    let out = run(&[
        "calibrate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        o.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for row in csv_rows(&o.join("calibration.csv")) {
        let residual: f64 = row[3].parse().unwrap();
        assert!(residual.abs() < 0.05, "{row:?}");
    }
    assert_eq!(csv_rows(&o.join("x0.csv")).len(), 125);
}

#[test]
fn deterministic_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let outputs: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|name| {
            let o = dir.path().join(name);
            let out = run(&[
                "price-tranches",
                "--deterministic",
                "--seed",
                "9",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                o.to_str().unwrap(),
            ]);
            assert!(
                out.status.success(),
                "{}",
                String::from_utf8_lossy(&out.stderr)
            );
            std::fs::read(o.join("tranches.csv")).unwrap()
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn spot_starting_forward_matches_spot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = dir.path().join("o");
    for cmd in ["price-tranches", "price-forward"] {
        let out = run(&[
            cmd,
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            o.to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let spot = csv_rows(&o.join("tranches.csv"));
    let fwd = csv_rows(&o.join("forwards.csv"));
    let mut checked = 0;
    for f in fwd.iter().filter(|f| f[1] == "0" && f[0] != "0-3%") {
        let s = spot.iter().find(|s| s[0] == f[0] && s[2] == f[3]).unwrap();
        let a: f64 = s[5].parse().unwrap();
        let b: f64 = f[4].parse().unwrap();
        assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{s:?} {f:?}");
        assert_eq!(f[4], f[6]);
        checked += 1;
    }
    assert_eq!(checked, 2);
}
