use serde_json::Value;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use tempfile::TempDir;

fn cempc(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cempc"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("bounds.json")).unwrap()).unwrap()
}

fn num(v: &Value, key: &str) -> f64 {
    v[key].as_f64().unwrap_or_else(|| panic!("{key} is not a number: {}", v[key]))
}

/// Smaller sweeps for the file-level tests.
fn small_config(dir: &Path, preset: &str) -> std::path::PathBuf {
    let out = Command::new(env!("CARGO_BIN_EXE_cempc")).args(["config-reference", "--preset", preset]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout)
        .unwrap()
        .replace("scenarios = 100", "scenarios = 6")
        .replace("horizons = [10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24, 25]", "horizons = [5, 8]");
    let path = dir.join("small.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn zero_mismatch_report_has_degenerate_ratio() {
    let dir = TempDir::new().unwrap();
    let out = cempc(&["bounds", "--preset", "lq", "--epsilon", "0"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path());
    assert_eq!(num(&r, "alpha.value"), 0.0);
    assert_eq!(num(&r, "beta_star.value"), 0.0);
    assert_eq!(num(&r, "beta.value"), 0.0);
    assert_eq!(num(&r, "ratio"), 1.0 / (1.0 - num(&r, "epsilon_n")));
    assert_eq!(r["run.config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn tanh_report_is_expansive_and_unstable_at_the_reference_horizon() {
    let dir = TempDir::new().unwrap();
    let out = cempc(&["bounds", "--preset", "tanh", "--epsilon", "0.01"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let r = report(dir.path());
    assert_eq!(r["asymptotic.class"], "expansive");
    assert_eq!(num(&r, "lipschitz.state"), 1.005);
    assert!(num(&r, "stability.margin") < 0.0);
    assert!(r["ratio"].is_null());
}

#[test]
fn variant_flags_reach_the_report() {
    let dir = TempDir::new().unwrap();
    let out = cempc(
        &["bounds", "--preset", "lq", "--variant", "alpha_first_order=corrected", "--variant", "beta_cross_term=corrected"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path());
    assert_eq!(r["variant.alpha_first_order"], "corrected");
    assert_eq!(r["variant.beta_cross_term"], "corrected");
    assert_eq!(r["variant.beta_star_scaling"], "corrected");

    // The printed star scaling keeps a state-cost factor and loses the certificate here.
    let out = cempc(&["bounds", "--preset", "lq", "--variant", "beta_star_scaling=printed"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(report(dir.path())["variant.beta_star_scaling"], "printed");
}

#[test]
fn solve_at_the_origin_is_identically_zero() {
    let dir = TempDir::new().unwrap();
    let out = cempc(&["solve", "--x0", "0,0"], dir.path());
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("solve.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 11);
    for row in rows {
        assert!(row.split(',').skip(1).all(|c| c.is_empty() || c == "0"), "{row}");
    }
}

#[test]
fn ratio_sweep_on_the_linear_preset_carries_the_overlay() {
    let dir = TempDir::new().unwrap();
    let config = small_config(dir.path(), "lq");
    let out = cempc(&["sweep", "ratio", "--config", config.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let agg = fs::read_to_string(dir.path().join("ratio_aggregates.csv")).unwrap();
    let mut lines = agg.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "theoretical_overlay").unwrap();
    let max = header.iter().position(|h| *h == "max").unwrap();
    let mut rows = 0;
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let overlay: f64 = cells[col].parse().unwrap();
        assert!(overlay >= 1.0 && overlay >= cells[max].parse::<f64>().unwrap(), "{line}");
        rows += 1;
    }
    assert_eq!(rows, 10);
}

#[test]
fn optimal_horizon_without_mismatch_is_the_upper_end() {
    let dir = TempDir::new().unwrap();
    let out = cempc(&["optimal-horizon", "--preset", "lq", "--epsilon", "0", "--horizon", "10..25"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("optimal_horizon.csv")).unwrap();
    assert!(csv.contains("# optimal_horizon=25,"), "{csv}");
}

#[test]
fn reruns_are_byte_identical_and_the_written_config_reloads() {
    let dir = TempDir::new().unwrap();
    let config = small_config(dir.path(), "tanh");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for kind in ["input-perturb", "scalable", "horizon"] {
        for d in [&a, &b] {
            let out = cempc(&["sweep", kind, "--config", config.to_str().unwrap(), "--seed", "3"], d);
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        }
    }
    let names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 10);
    for name in names.iter().filter(|n| *n != "config.toml") {
        assert!(fs::read(a.join(name)).unwrap() == fs::read(b.join(name)).unwrap(), "{name:?} differs");
    }
    let first = fs::read_to_string(a.join("horizon.csv")).unwrap();
    assert!(first.starts_with("# config_hash=") && first.contains("seed=3"));

    // Re-running from the written configuration reproduces the same bytes.
    let c = dir.path().join("c");
    let written = a.join("config.toml");
    let out = cempc(&["sweep", "horizon", "--config", written.to_str().unwrap()], &c);
    assert!(out.status.success());
    assert!(fs::read(a.join("horizon.csv")).unwrap() == fs::read(c.join("horizon.csv")).unwrap());
    let without_dir = |d: &Path| -> String {
        let text = fs::read_to_string(d.join("config.toml")).unwrap();
        text.lines().filter(|l| !l.starts_with("output_dir")).collect::<Vec<_>>().join("\n")
    };
    assert_eq!(without_dir(&a), without_dir(&b));
    assert_eq!(without_dir(&a), without_dir(&c));
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.toml");
    for (text, needle) in [
        ("seed = 1\n[model]\nkind = \"tanh\"\n", "missing field"),
        ("this is not toml", "expected"),
    ] {
        fs::write(&bad, text).unwrap();
        let out = cempc(&["bounds", "--config", bad.to_str().unwrap()], dir.path());
        assert_eq!(out.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&out.stderr).contains(needle));
    }
    let out = cempc(&["solve", "--x0", "1,2,3"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("x0:"));
    let out = cempc(&["sweep", "ratio", "--epsilon", "0.001"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sweep.levels"));
}

#[test]
fn unstable_ratio_sweep_exits_with_code_three() {
    let dir = TempDir::new().unwrap();
    let config = small_config(dir.path(), "tanh");
    let out = cempc(&["sweep", "ratio", "--config", config.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_reference_is_a_loadable_configuration() {
    let dir = TempDir::new().unwrap();
    let path = small_config(dir.path(), "tanh");
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.contains("# Exit codes"));
    let out = cempc(&["constants", "--config", path.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("constants.json")).unwrap()).unwrap();
    assert_eq!(doc["source"], "empirical");
    assert!(doc["constants"]["gamma"]["gamma_bar"].as_f64().unwrap() > 0.0);
}
