use polent_cli::scenario::PRESETS;
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn polent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polent")).args(args).output().expect("binary runs")
}

fn run_into(dir: &Path, args: &[&str]) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    all.extend(["--out", dir.to_str().unwrap()]);
    let out = polent(&all);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn json(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&read(dir, name)).unwrap()
}

fn preset_text(name: &str) -> String {
    PRESETS.iter().find(|(n, _)| *n == name).unwrap().1.to_string()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn data_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().filter(|l| !l.starts_with('#')).skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn state_metrics_for_presets() {
    let dir = tempfile::tempdir().unwrap();
    for (preset, lo, hi) in [("ideal", 1.0 - 1e-9, 1.0 + 1e-9), ("paper-repro-ent", 0.88, 0.94), ("paper-repro-ref", 0.49, 0.53)] {
        run_into(dir.path(), &["state", "--preset", preset]);
        let v = json(dir.path(), "state.json");
        let f = v["metrics"]["fully_entangled_fraction"].as_f64().unwrap();
        assert!((lo..=hi).contains(&f), "{preset}: {f}");
        assert_eq!(v["provenance"]["tool"], "polent");
        assert_eq!(v["provenance"]["config_sha256"].as_str().unwrap().len(), 64);
        assert_eq!(v["density_matrix"]["data"].as_array().unwrap().len(), 16);
    }
}

#[test]
fn state_csv_format() {
    let dir = tempfile::tempdir().unwrap();
    run_into(dir.path(), &["state", "--preset", "ideal", "--format", "csv"]);
    let csv = read(dir.path(), "state.csv");
    assert!(csv.starts_with("# tool = polent\n"));
    assert!(csv.contains("\nfully_entangled_fraction,1\n"), "{csv}");
}

#[test]
fn counts_are_reproducible_and_carry_provenance() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_into(a.path(), &["counts", "--preset", "paper-repro-ent"]);
    run_into(b.path(), &["counts", "--preset", "paper-repro-ent"]);
    let csv = read(a.path(), "counts.csv");
    assert_eq!(csv, read(b.path(), "counts.csv"));
    for key in ["tool", "version", "config_sha256", "seed", "command"] {
        assert!(csv.lines().any(|l| l.starts_with(&format!("# {key} = "))), "{key}");
    }
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 16);
    let diag: u64 = rows.iter().filter(|r| ["HH", "HV", "VH", "VV"].contains(&r[0].as_str())).map(|r| r[3].parse::<u64>().unwrap()).sum();
    assert!((diag as f64 - 1.0e4).abs() <= 0.2e4, "{diag}");

    run_into(b.path(), &["counts", "--preset", "paper-repro-ent", "--seed", "2"]);
    assert_ne!(csv, read(b.path(), "counts.csv"));
}

#[test]
fn every_verb_is_byte_reproducible() {
    let verbs: [&[&str]; 5] = [
        &["state", "--preset", "paper-repro-ent"],
        &["tomo", "--preset", "paper-repro-ent"],
        &["fwm", "--preset", "paper-repro-ent"],
        &["fringe", "--preset", "paper-repro-ref"],
        &["sweep", "--preset", "paper-repro-ref"],
    ];
    for args in verbs {
        let a = polent(args);
        let b = polent(args);
        assert!(a.status.success(), "{args:?}: {}", String::from_utf8_lossy(&a.stderr));
        assert!(!a.stdout.is_empty());
        assert_eq!(a.stdout, b.stdout, "{args:?}");
        assert!(String::from_utf8_lossy(&a.stdout).contains("polent"), "{args:?}: provenance missing");
    }
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = preset_text("paper-repro-ent").replace("seed = 1\n", "");
    let cfg = write_config(dir.path(), &text);
    let out = polent(&["counts", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
    assert!(polent(&["state", "--config", cfg.to_str().unwrap()]).status.success());
}

#[test]
fn invalid_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = preset_text("ideal").replace("duration_s =", "surplus = 3\nduration_s =");
    let cfg = write_config(dir.path(), &text);
    let out = polent(&["state", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("surplus"));

    let text = preset_text("ideal").replace("bandwidth_nm = 0.14", "bandwidth_nm = -0.14");
    let cfg = write_config(dir.path(), &text);
    assert_eq!(polent(&["state", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(polent(&["state", "--preset", "nonexistent"]).status.code(), Some(2));
    assert_eq!(polent(&["state"]).status.code(), Some(2));
}

#[test]
fn zero_pump_gives_dark_count_records() {
    let dir = tempfile::tempdir().unwrap();
    let text = preset_text("paper-repro-ent").replace("peak_power_mw = 128.0", "peak_power_mw = 0.0");
    let cfg = write_config(dir.path(), &text);
    run_into(dir.path(), &["counts", "--config", cfg.to_str().unwrap()]);
    let rows = data_rows(&read(dir.path(), "counts.csv"));
    let sum = |col: usize| rows.iter().map(|r| r[col].parse::<u64>().unwrap()).sum::<u64>() as f64;
    // Noise-only coincidences are all accidental: (dark + noise)² per gate.
    let expected = 16.0 * (1e-5f64 + 3e-5).powi(2) * 1e8 * 120.0;
    assert!((sum(3) - expected).abs() < 5.0 * expected.sqrt(), "{}", sum(3));
    assert!((sum(4) - expected).abs() < 5.0 * expected.sqrt(), "{}", sum(4));
    // (dark + noise) × 100 MHz × 120 s ≈ 4.8e5 singles per setting, less dead time.
    assert!((sum(1) / 16.0 - 4.8e5).abs() < 0.05 * 4.8e5, "{}", sum(1));
}

#[test]
fn tomography_from_counts_file() {
    let dir = tempfile::tempdir().unwrap();
    run_into(dir.path(), &["counts", "--preset", "paper-repro-ent"]);
    let counts = dir.path().join("counts.csv");
    let counts = counts.to_str().unwrap();
    run_into(dir.path(), &["tomo", "--preset", "paper-repro-ent", "--counts", counts]);
    let raw = json(dir.path(), "tomo.json");
    run_into(dir.path(), &["tomo", "--preset", "paper-repro-ent", "--counts", counts, "--subtract-accidentals"]);
    let sub = json(dir.path(), "tomo.json");
    let f0 = raw["metrics"]["fully_entangled_fraction"].as_f64().unwrap();
    let f1 = sub["metrics"]["fully_entangled_fraction"].as_f64().unwrap();
    assert!(f1 - f0 > 0.005 && f1 - f0 < 0.02, "{f0} -> {f1}");
    for key in ["loglik", "iterations", "clipped", "condition_number"] {
        assert!(raw["fit"][key].is_number(), "{key}");
    }
    let std = raw["error_bars"]["fully_entangled_fraction"]["std"].as_f64().unwrap();
    assert!(std > 0.001 && std < 0.05, "{std}");
    assert!(raw["true_metrics"]["fully_entangled_fraction"].is_number());
}

#[test]
fn malformed_counts_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "label,singles_s,singles_i,coincidences,accidentals,duration_s\nHH,1,2,x,4,60\n").unwrap();
    let out = polent(&["tomo", "--preset", "paper-repro-ent", "--counts", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    let partial = dir.path().join("partial.csv");
    std::fs::write(&partial, "label,singles_s,singles_i,coincidences,accidentals,duration_s\nHH,1,2,3,4,60\n").unwrap();
    assert_eq!(polent(&["tomo", "--preset", "paper-repro-ent", "--counts", partial.to_str().unwrap()]).status.code(), Some(4));
    let missing = dir.path().join("missing.csv");
    assert_eq!(polent(&["tomo", "--preset", "paper-repro-ent", "--counts", missing.to_str().unwrap()]).status.code(), Some(4));
}

#[test]
fn iteration_cap_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = preset_text("paper-repro-ent")
        .replace("max_iterations = 10000", "max_iterations = 2")
        .replace("convergence_tol = 1e-9", "convergence_tol = 1e-15")
        .replace("\"linear_inversion_clipped\"", "\"maximally_mixed\"");
    let cfg = write_config(dir.path(), &text);
    assert_eq!(polent(&["tomo", "--config", cfg.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn fwm_spectra() {
    let dir = tempfile::tempdir().unwrap();
    run_into(dir.path(), &["fwm", "--preset", "paper-repro-ent"]);
    let te = data_rows(&read(dir.path(), "fwm_te.csv"));
    let tm = data_rows(&read(dir.path(), "fwm_tm.csv"));
    assert_eq!(te.len(), 161);
    let at_zero = |rows: &[Vec<String>]| rows.iter().find(|r| r[0].parse::<f64>().unwrap() == 0.0).unwrap().clone();
    let (te0, tm0) = (at_zero(&te), at_zero(&tm));
    assert_eq!(te0[2].parse::<f64>().unwrap(), 0.0);
    assert!((tm0[2].parse::<f64>().unwrap() + 14.0).abs() < 0.1);
    let peak = te.iter().map(|r| r[1].parse::<f64>().unwrap()).fold(0.0, f64::max);
    assert_eq!(peak, te0[1].parse::<f64>().unwrap());
}

#[test]
fn fringe_outputs() {
    let dir = tempfile::tempdir().unwrap();
    run_into(dir.path(), &["fringe", "--preset", "paper-repro-ent"]);
    let fit = json(dir.path(), "fringe_fit.json");
    assert!((fit["fit"]["theta_out_deg"].as_f64().unwrap() - 86.7).abs() < 0.2);
    assert_eq!(data_rows(&read(dir.path(), "fringe.csv")).len(), 37);

    run_into(dir.path(), &["fringe", "--preset", "paper-repro-ref", "--wavelength-nm", "1546.4"]);
    let fit = json(dir.path(), "fringe_fit.json");
    assert!((fit["fit"]["theta_out_deg"].as_f64().unwrap() + 11.0).abs() < 0.2, "{fit}");
}

fn sweep_fef(csv: &str) -> Vec<(f64, f64)> {
    data_rows(csv)
        .into_iter()
        .filter(|r| r[2] == "fully_entangled_fraction")
        .map(|r| (r[1].parse().unwrap(), r[3].parse().unwrap()))
        .collect()
}

#[test]
fn sweeps() {
    let dir = tempfile::tempdir().unwrap();
    run_into(dir.path(), &["sweep", "--preset", "ideal", "--param", "layout.spr.insertion_loss_db", "--values", "0,1,2,4,7"]);
    let fef = sweep_fef(&read(dir.path(), "sweep.csv"));
    assert_eq!(fef.len(), 5);
    assert!(fef.iter().all(|(_, f)| (f - fef[0].1).abs() < 1e-12), "{fef:?}");

    run_into(dir.path(), &["sweep", "--preset", "paper-repro-ent", "--param", "layout.output_ssc.rotation_signal_deg", "--values", "0,3,6,9,12,15"]);
    let fef = sweep_fef(&read(dir.path(), "sweep.csv"));
    assert!(fef.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12), "{fef:?}");

    let out = polent(&["sweep", "--preset", "ideal", "--param", "layout.spr.insertion_loss_db", "--values="]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let out = polent(&["sweep", "--preset", "ideal", "--param", "layout.nope", "--values", "1"]);
    assert_eq!(out.status.code(), Some(2));
}
