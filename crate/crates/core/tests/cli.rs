use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_weingarten");

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

fn config(psi: &str, center: &str, extra: &str) -> String {
    format!(
        "k = 2\ncap_radius = 1.0471975511965976\nrings = 16\nsectors = 32\npsi = \"{psi}\"\n{extra}\n\
         [sphere]\ncenter = {center}\nradius = 1.0\n"
    )
}

fn solve(dir: &Path, body: &str, args: &[&str]) -> Output {
    let cfg = write_config(dir, body);
    let out = dir.join("out");
    Command::new(BIN)
        .arg("solve")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(args)
        .output()
        .unwrap()
}

fn obj_vertices(path: &Path) -> Vec<[f64; 3]> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter_map(|l| l.strip_prefix("v "))
        .map(|l| {
            let x: Vec<f64> = l.split(' ').map(|t| t.parse().unwrap()).collect();
            [x[0], x[1], x[2]]
        })
        .collect()
}

#[test]
fn cap_oracle_mesh_lies_on_sphere() {
    // Off center the returned sphere misses the discrete equation by its
    // truncation error, which the diagnostics report.
    for (center, code) in [([0.0, 0.0, 0.0], 0), ([0.0, 0.0, 0.3], 5)] {
        let dir = tempfile::tempdir().unwrap();
        let out = solve(dir.path(), &config("1", &format!("{center:?}"), ""), &[]);
        assert_eq!(out.status.code(), Some(code), "{}", String::from_utf8_lossy(&out.stderr));
        let verts = obj_vertices(&dir.path().join("out/mesh.obj"));
        assert_eq!(verts.len(), 1 + 16 * 32);
        for v in verts {
            let d = (0..3).map(|i| (v[i] - center[i]).powi(2)).sum::<f64>().sqrt();
            assert!((d - 1.0).abs() < 1e-10, "{d}");
        }
        for f in ["solution.csv", "subsolution.csv", "mesh.vtk", "history.csv", "report.toml"] {
            assert!(dir.path().join("out").join(f).exists(), "{f}");
        }
    }
}

#[test]
fn serrin_violation_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = solve(dir.path(), &config("1.1", "[0.0, 0.0, 0.3]", ""), &[]);
    assert_eq!(out.status.code(), Some(3));
    let report = std::fs::read_to_string(dir.path().join("out/report.toml")).unwrap();
    assert!(report.contains("status = \"serrin-violation\""));
    assert!(!report.contains("[continuation]"));
    assert!(!dir.path().join("out/mesh.obj").exists());
}

#[test]
fn nonconstant_psi_solves() {
    let dir = tempfile::tempdir().unwrap();
    let out = solve(dir.path(), &config("0.7 - 0.2*nz", "[0.0, 0.0, 0.3]", ""), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report: toml::Table = std::fs::read_to_string(dir.path().join("out/report.toml")).unwrap().parse().unwrap();
    assert_eq!(report["diagnostics"]["passed"].as_bool(), Some(true));
    assert_eq!(report["partial"].as_bool(), Some(false));
    let history = std::fs::read_to_string(dir.path().join("out/history.csv")).unwrap();
    assert!(history.lines().count() > 2);
}

#[test]
fn continuation_failure_flags_partial_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let extra = "[homotopy]\nmin_step = 0.09\nmax_newton_iterations = 1\n";
    let body = config("0.7 - 0.2*nz", "[0.0, 0.0, 0.3]", "") + extra;
    let out = solve(dir.path(), &body, &[]);
    assert_eq!(out.status.code(), Some(4));
    let report: toml::Table = std::fs::read_to_string(dir.path().join("out/report.toml")).unwrap().parse().unwrap();
    assert_eq!(report["status"].as_str(), Some("continuation-failure"));
    assert_eq!(report["partial"].as_bool(), Some(true));
    assert!(dir.path().join("out/solution.csv").exists());
}

#[test]
fn config_errors_exit_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let out = solve(dir.path(), &config("1", "[0.0, 0.0, 0.0]", "").replace("k = 2", "k = 0"), &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(":1:") && err.contains("'k'"), "{err}");

    let out = solve(dir.path(), &config("1", "[0.0, 0.0, 0.0]", "").replace("radius = 1.0\n", ""), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("radius"));

    let out = solve(dir.path(), &config("1", "[0.0, 0.0, 0.0]", ""), &["--sectors", "33"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sectors"));
}

#[test]
fn rings_override_and_coarse_mesh_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let out = solve(dir.path(), &config("1", "[0.0, 0.0, 0.0]", ""), &["--rings", "8", "--sectors", "16"]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stdout).contains("mesh_median"));
    assert_eq!(obj_vertices(&dir.path().join("out/mesh.obj")).len(), 1 + 8 * 16);
}

#[test]
fn check_command() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config("0.7 - 0.2*nz", "[0.0, 0.0, 0.3]", ""));
    let out = Command::new(BIN).arg("check").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let report: toml::Table = String::from_utf8_lossy(&out.stdout).parse().unwrap();
    assert_eq!(report["subsolution_admissible"].as_bool(), Some(true));
    assert_eq!(report["serrin"]["passed"].as_bool(), Some(true));

    let cfg = write_config(dir.path(), &config("1.1", "[0.0, 0.0, 0.3]", ""));
    let out = Command::new(BIN).arg("check").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn selftest_passes() {
    let out = Command::new(BIN).arg("selftest").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}

#[test]
fn help_documents_psi_grammar() {
    let out = Command::new(BIN).arg("--help").output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("nx") && text.contains("EXIT CODES"));
}
