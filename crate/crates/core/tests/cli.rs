use std::path::Path;
use std::process::{Command, Output};

use pearcey::kernels::MatrixKernel;

fn pearcey(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pearcey"))
        .args(args)
        .current_dir(dir)
        .env_remove("PEARCEY_THREADS")
        .output()
        .expect("binary runs")
}

fn rows(text: &str) -> Vec<Vec<String>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn gap_with_empty_regions_is_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.json"), r#"{"kernel": {"taus": [0.0]}, "regions": [[]]}"#).unwrap();
    let out = pearcey(&["gap", "s.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("gap_probability,dimension,nodes_per_interval\n"));
    assert_eq!(rows(&text)[0][0].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn malformed_regions_give_exit_two_and_no_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"kernel": {"taus": [0.0]}, "regions": [[[1.0]]]}"#).unwrap();
    let out = pearcey(&["pde-check", "bad.json", "--output", "out.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out.csv").exists());

    std::fs::write(dir.path().join("swap.json"), r#"{"kernel": {"taus": [0.0]}, "regions": [[[1.0, -1.0]]]}"#).unwrap();
    assert_eq!(pearcey(&["pde-check", "swap.json", "-o", "out.csv"], dir.path()).status.code(), Some(2));
    assert_eq!(pearcey(&["gap", "missing.json", "-o", "out.csv"], dir.path()).status.code(), Some(2));
    assert!(!dir.path().join("out.csv").exists());
}

#[test]
fn unknown_flag_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = pearcey(&["roots", "--frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn converge_writes_monotone_errors_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let out = pearcey(&["converge", "--n", "50,200,800", "--grid", "5", "-o", "c.csv", "--svg", "c.svg"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("c.csv")).unwrap();
    let r = rows(&text);
    assert_eq!(r.len(), 3);
    let err: Vec<f64> = r.iter().map(|row| row[1].parse().unwrap()).collect();
    assert!(err[1] < err[0] && err[2] < err[1]);
    assert!(std::fs::read_to_string(dir.path().join("c.svg")).unwrap().contains("<polyline"));
}

#[test]
fn output_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("mc.json"),
        r#"{"finite_n": {"starts": [-0.2, 0.2], "ends": [-1.0, 1.0], "taus": [0.5]},
            "regions": [[[-0.1, 0.1]]],
            "simulation": {"level": 4, "accepted": 2000, "seed": 11}}"#,
    )
    .unwrap();
    let one = pearcey(&["simulate", "mc.json", "--threads", "1"], dir.path());
    let many = Command::new(env!("CARGO_BIN_EXE_pearcey"))
        .args(["simulate", "mc.json"])
        .current_dir(dir.path())
        .env("PEARCEY_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(one.status.code(), Some(0), "{}", String::from_utf8_lossy(&one.stderr));
    assert_eq!(one.stdout, many.stdout);
    let r = rows(std::str::from_utf8(&one.stdout).unwrap());
    // 17 significant digits
    assert_eq!(r[0][0].split('e').next().unwrap().len(), 18);
}

#[test]
fn roots_and_function_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = pearcey(&["roots", "--order", "2"], dir.path());
    let r = rows(std::str::from_utf8(&out.stdout).unwrap());
    assert_eq!(r.len(), 2);
    assert!((r[0][2].parse::<f64>().unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(pearcey(&["roots", "--order", "9"], dir.path()).status.code(), Some(2));

    let out = pearcey(&["fn", "--tau", "-0.5", "--points", "5", "--derivs", "1"], dir.path());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("x,phi_d0,phi_d1,psi_d0,psi_d1\n"));
    assert_eq!(rows(&text).len(), 5);

    let out = pearcey(&["kernel", "--taus", "-0.3,0.4", "--i", "1", "--j", "0", "--points", "3"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(rows(std::str::from_utf8(&out.stdout).unwrap()).len(), 9);
    assert_eq!(pearcey(&["kernel", "--taus", "0", "--i", "1"], dir.path()).status.code(), Some(2));
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = pearcey(&["selftest"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!String::from_utf8_lossy(&out.stderr).contains("FAIL"));
}

#[test]
fn documented_scenarios_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/scenarios");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let sc = pearcey::cli::Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let k = sc.build_kernel().unwrap();
        sc.regions_for(k.num_times()).unwrap();
        seen += 1;
    }
    assert!(seen >= 5);
}
