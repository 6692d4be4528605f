use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hmlmc(sub: &str, dir: &Path, config: &str, extra: &[&str]) -> Output {
    let path = dir.join("run.toml");
    std::fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_hmlmc"))
        .arg(sub)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .env_remove("HMLMC_WORKERS")
        .output()
        .unwrap()
}

fn read_csv(path: &Path) -> (String, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let rows = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    (header, rows)
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("out/summary.json")).unwrap()).unwrap()
}

fn stderr_record(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("json error record");
    serde_json::from_str(line).unwrap()
}

#[test]
fn exhaustive_closure() {
    let dir = tempfile::tempdir().unwrap();
    let out = hmlmc("exhaustive", dir.path(), "mode = \"exhaustive\"\n[sampling]\np_vac = 0.5\nnq = 8\n[exhaustive]\nn = 1\n", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("out/idos.csv"));
    assert_eq!(header, "energy_eV,idos_mean,idos_variance,dos");
    assert!((rows.last().unwrap()[1] - 1.0).abs() < 1e-12);
    let s = summary(dir.path());
    assert!((s["weight_sum"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(s["configurations_evaluated"], 4);
}

#[test]
fn mlmc_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "mode = \"mlmc\"\nseed = 11\n[sampling]\np_vac = 0.1\nnq = 16\n[levels]\nc = 1\nsamples = [6, 3, 2]\n[qoi]\ngrid_points = 512\nwindow = [-6.0, 4.0]\n";
    let out = hmlmc("run", dir.path(), cfg, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = read_csv(&dir.path().join("out/idos.csv"));
    assert_eq!(rows.len(), 512);
    assert!(rows.iter().all(|r| r.len() == 4 && r[2] >= 0.0));
    let levels: Vec<Value> = std::fs::read_to_string(dir.path().join("out/levels.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(levels.len(), 3);
    for (i, l) in levels.iter().enumerate() {
        assert_eq!(l["level"], i + 1);
        assert_eq!(l["n"], 2 << i);
        assert_eq!(l["q"], 16 / (2 << i));
        for key in ["nsamples", "mean_level_variance", "wall_time_s", "cache_hits"] {
            assert!(!l[key].is_null(), "{key}");
        }
    }
    let s = summary(dir.path());
    for key in ["mode", "master_seed", "workers", "model", "energy_grid", "config", "total_time_s", "rates", "complexity"] {
        assert!(s.get(key).is_some(), "{key}");
    }
    assert_eq!(s["master_seed"], 11);
}

#[test]
fn seed_override_changes_values() {
    let cfg = "mode = \"mc\"\nseed = 1\n[sampling]\np_vac = 0.2\nnq = 8\n[levels]\nsizes = [2]\nsamples = [5]\n[qoi]\ngrid_points = 256\n";
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(hmlmc("run", a.path(), cfg, &[]).status.success());
    assert!(hmlmc("run", b.path(), cfg, &["--seed", "1"]).status.success());
    assert!(hmlmc("run", c.path(), cfg, &["--seed", "2"]).status.success());
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("out/idos.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert_eq!(summary(c.path())["master_seed"], 2);
}

#[test]
fn bands_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = hmlmc("bands", dir.path(), "mode = \"bands\"\n[bands]\nn = 1\nq = 6\n", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("out/bands.csv"));
    assert_eq!(header, "kx,ky,band,energy_eV");
    assert_eq!(rows.len(), 36 * 2);
    let gamma: Vec<f64> = rows.iter().filter(|r| r[0] == 0.0 && r[1] == 0.0).map(|r| r[3]).collect();
    assert!((gamma[0] + 6.5602).abs() < 5e-5 && (gamma[1] - 14.8434).abs() < 5e-5);
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = hmlmc("run", dir.path(), "mode = \"mc\"\n[sampling]\np_vacc = 0.1\n", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_record(&out)["error"]["kind"], "config");
}

#[test]
fn invalid_values_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = hmlmc("run", dir.path(), "mode = \"mlmc\"\n[sampling]\nnq = 12\n[levels]\nsamples = [2, 2, 2]\n", &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "mode = \"mc\"\n[sampling]\np_vac = 0.1\nnq = 4\n[levels]\nsizes = [2]\nsamples = [2]\n[qoi]\nenergy_range = [-1.0, 1.0]\ngrid_points = 64\n";
    let out = hmlmc("run", dir.path(), cfg, &[]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let rec = stderr_record(&out);
    assert_eq!(rec["error"]["kind"], "numerical");
    assert!(rec["error"]["message"].as_str().unwrap().contains("replicate"));
}

#[test]
fn rates_mode_reports_fits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "mode = \"rates\"\n[sampling]\np_vac = 0.1\nnq = 16\n[levels]\nsizes = [2, 4, 8]\nsamples = [8]\n[qoi]\ngrid_points = 512\n";
    let out = hmlmc("rates", dir.path(), cfg, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(dir.path());
    assert!(s["rates"]["s"].is_number());
    assert!(s["rates"]["c"].is_number());
}
