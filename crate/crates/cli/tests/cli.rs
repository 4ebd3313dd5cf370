use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfe_descent::planner::ScenarioFile;
use mfe_descent::terrain::TerrainModel;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mfe-descent"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn benchmark() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../benchmark")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_spec(dir: &Path, count: usize) -> PathBuf {
    let spec = serde_json::json!({
        "count": count,
        "base": -800.0,
        "peak_min": 1000.0,
        "peak_max": 7000.0,
        "spread_min": 1500.0,
        "spread_max": 4000.0,
        "bbox": [-10000.0, 30000.0, -10000.0, 30000.0],
    });
    let p = dir.join(format!("spec_{count}.json"));
    std::fs::write(&p, spec.to_string()).unwrap();
    p
}

fn feasible_count(out: &Output) -> usize {
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().find(|l| l.starts_with("feasible points:")).expect("count line");
    line.split_whitespace().nth(2).unwrap().parse().unwrap()
}

#[test]
fn terrain_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), 6);
    let gen = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let o = run(&["terrain", path_str(&spec), "--seed", seed, "--out", path_str(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out).unwrap()
    };
    assert_eq!(gen("7", "a.json"), gen("7", "b.json"));
    assert_ne!(gen("7", "a.json"), gen("8", "c.json"));
    assert!(dir.path().join("a.json.manifest.json").exists());
}

#[test]
fn flat_terrain_raster_sits_at_the_base() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), 0);
    let (out, raster) = (dir.path().join("t.json"), dir.path().join("r.csv"));
    let o = run(&[
        "terrain", path_str(&spec), "--out", path_str(&out), "--raster", path_str(&raster), "--raster-size", "11",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(raster).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x_m,y_m,height_m"));
    let rows: Vec<f64> = lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(rows.len(), 121);
    assert!(rows.iter().all(|&h| (h + 800.0).abs() < 1e-9));
}

#[test]
fn raster_never_exceeds_the_highest_peak() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), 12);
    let (out, raster) = (dir.path().join("t.json"), dir.path().join("r.csv"));
    let o = run(&[
        "terrain", path_str(&spec), "--seed", "3", "--out", path_str(&out), "--raster", path_str(&raster),
        "--raster-size", "41",
    ]);
    assert!(o.status.success());
    let model = TerrainModel::load(&out).unwrap();
    let text = std::fs::read_to_string(raster).unwrap();
    let top = text
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(top <= model.max_peak() + 1e-6, "{top} > {}", model.max_peak());
}

#[test]
fn altitude_needs_a_unit_and_a_valid_range() {
    let dir = tempfile::tempdir().unwrap();
    for alt in ["20000m", "6000", "6000 furlongs"] {
        let o = run(&["envelope", "--altitude", alt, "--out", path_str(dir.path())]);
        assert_eq!(o.status.code(), Some(1), "altitude {alt}");
    }
}

#[test]
fn unknown_failure_and_mode_are_usage_or_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["envelope", "--altitude", "6000m", "--failure", "wing-gone", "--out", path_str(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let scenario = benchmark().join("scenario.json");
    let o = run(&["plan", path_str(&scenario), "--mode", "sideways", "--out", path_str(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["fly"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_envelope_is_reported_by_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut file = ScenarioFile::load(benchmark().join("scenario.json")).unwrap();
    file.terrain = std::path::absolute(benchmark().join("terrain.json")).unwrap();
    file.envelopes = vec![dir.path().join("nowhere_envelope.json")];
    let scenario = dir.path().join("scenario.json");
    std::fs::write(&scenario, file.to_json()).unwrap();
    let o = run(&["plan", path_str(&scenario), "--out", path_str(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere_envelope.json"));
}

#[test]
fn jammed_slice_is_smaller_and_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = |failure: &str, name: &str| {
        let out = dir.path().join(name);
        let o = run(&["envelope", "--failure", failure, "--altitude", "6000m", "--gamma-deg", "0", "--out", path_str(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (feasible_count(&o), out)
    };
    let (healthy, healthy_dir) = sweep("none", "healthy");
    let (jammed, jammed_dir) = sweep("rudder-jam:10", "jammed");
    let (_, again_dir) = sweep("rudder-jam:10", "again");
    assert!(jammed < healthy, "{jammed} vs {healthy}");
    let read = |d: &Path| std::fs::read(d.join("envelope.json")).unwrap();
    assert_eq!(read(&jammed_dir), read(&again_dir));
    assert!(healthy_dir.join("boundary_gamma_+0_deg.csv").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(jammed_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "envelope");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn piecewise_plan_validates_and_manifest_hashes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = benchmark().join("scenario.json");
    let out = dir.path().join("plan");
    let o = run(&["plan", path_str(&scenario), "--mode", "piecewise", "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("segment,t_s,x_m,y_m,h_m,psi_deg,v_kt"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["nodes_per_segment"], 5);
    assert_eq!(summary["validation"]["passed"], true);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    for rec in manifest["outputs"].as_array().unwrap() {
        let bytes = std::fs::read(rec["path"].as_str().unwrap()).unwrap();
        let digest: String = sha256_hex(&bytes);
        assert_eq!(rec["sha256"], digest.as_str());
    }

    let report = dir.path().join("report.json");
    let o = run(&[
        "validate", path_str(&scenario), "--trajectory", path_str(&out.join("trajectory.json")), "--out", path_str(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(r["passed"], true);
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
