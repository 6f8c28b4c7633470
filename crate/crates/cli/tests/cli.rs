//! CLI behavior: exit codes, config errors with positions, file formats.

use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_markov-poisson"))
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

#[test]
fn validate_passes_on_defaults_and_emits_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let status = bin()
        .arg("--config")
        .arg(tmp.path().join("missing.toml"))
        .arg("--out-dir")
        .arg(&out)
        .arg("validate")
        .status()
        .unwrap();
    assert!(status.success());
    let text = fs::read_to_string(out.join("validate.csv")).unwrap();
    assert!(text.starts_with("check,quantity,value,threshold,pass"));
    assert!(out.join("validate_meta.txt").exists());
}

#[test]
fn validate_fails_with_exit_2_on_disconnected_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let kernel = tmp.path().join("kernel.csv");
    write(
        &kernel,
        "row,col,prob\n0,1,1.0\n1,0,1.0\n2,3,1.0\n3,2,1.0\n",
    );
    let config = tmp.path().join("run.toml");
    write(
        &config,
        &format!(
            "[chain]\ntriplets = '{}'\nn_states = 4\n\n[truncation]\ninitial_size = 4\n",
            kernel.display()
        ),
    );
    let status = bin()
        .arg("--config")
        .arg(&config)
        .arg("--out-dir")
        .arg(tmp.path().join("out"))
        .arg("validate")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn config_parse_errors_carry_positions_and_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    write(&config, "[chain]\ngallery = \n");
    let output = bin()
        .arg("--config")
        .arg(&config)
        .arg("validate")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("line 2") || err.contains("2,"), "no position in: {err}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    write(&config, "[chain]\ngallerry = \"two_state\"\n");
    let output = bin().arg("--config").arg(&config).arg("validate").output().unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn mc_commands_require_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let output = bin()
        .arg("--config")
        .arg(tmp.path().join("missing.toml"))
        .arg("--out-dir")
        .arg(tmp.path().join("out"))
        .arg("simulate")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("seed"));
}

#[test]
fn solve_on_triplet_chain_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let kernel = tmp.path().join("kernel.csv");
    // A 3-state ring with some backtracking.
    write(
        &kernel,
        "row,col,prob\n0,1,0.7\n0,0,0.3\n1,2,0.6\n1,0,0.4\n2,0,1.0\n",
    );
    let fcsv = tmp.path().join("f.csv");
    write(&fcsv, "state,value\n0,0.0\n1,1.0\n2,2.0\n");
    let config = tmp.path().join("run.toml");
    write(
        &config,
        &format!(
            "[chain]\ntriplets = '{}'\nn_states = 3\n\n[function]\nform = \"csv\"\ncsv = '{}'\n\n[truncation]\ninitial_size = 3\n",
            kernel.display(),
            fcsv.display()
        ),
    );
    let out = tmp.path().join("out");
    let status = bin()
        .arg("--config")
        .arg(&config)
        .arg("--out-dir")
        .arg(&out)
        .arg("solve")
        .arg("--method")
        .arg("gz")
        .status()
        .unwrap();
    assert!(status.success());
    let text = fs::read_to_string(out.join("solve.csv")).unwrap();
    assert!(text.starts_with("state,g,residual"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn lyapunov_queue_mode_exits_clean_and_renders() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    write(
        &config,
        "[chain]\ngallery = \"birth_death\"\np = 0.3\n\n[lyapunov]\nmode = \"queue\"\nincrements = [[1, 0.3], [-1, 0.7]]\n",
    );
    let out = tmp.path().join("out");
    let status = bin()
        .arg("--config")
        .arg(&config)
        .arg("--out-dir")
        .arg(&out)
        .arg("lyapunov")
        .status()
        .unwrap();
    assert!(status.success());
    let rendered = fs::read_to_string(out.join("lyapunov.txt")).unwrap();
    assert!(rendered.contains("VERIFIED"));
}

#[test]
fn lyapunov_drift_violation_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    // v(x) = x cannot dominate w(x) = x on the birth-death walk.
    write(
        &config,
        "[chain]\ngallery = \"birth_death\"\np = 0.3\n\n[lyapunov]\nmode = \"drift\"\nv = [0.0, 1.0]\nw = [0.0, 1.0]\nk = [0]\n",
    );
    let status = bin()
        .arg("--config")
        .arg(&config)
        .arg("--out-dir")
        .arg(tmp.path().join("out"))
        .arg("lyapunov")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn demo_example2_declares_divergence_for_heavy_tails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let status = bin()
        .arg("--config")
        .arg(tmp.path().join("missing.toml"))
        .arg("--out-dir")
        .arg(&out)
        .arg("demo-example2")
        .arg("--alpha")
        .arg("1.5")
        .status()
        .unwrap();
    assert!(status.success());
    let checks = fs::read_to_string(out.join("demo-example2_checks.csv")).unwrap();
    assert!(checks.contains("potential_series,diverged"), "{checks}");
    assert!(checks.lines().skip(1).all(|l| l.ends_with("true")), "{checks}");
    // The partial-sum trajectory is plot-ready.
    let traj = fs::read_to_string(out.join("demo-example2_partial_sums.csv")).unwrap();
    assert!(traj.starts_with("n,partial_sum"));
    assert!(traj.lines().count() > 5);
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out1 = tmp.path().join("a");
    let out2 = tmp.path().join("b");
    for (out, seed) in [(&out1, "5"), (&out2, "5")] {
        let status = bin()
            .arg("--config")
            .arg(tmp.path().join("missing.toml"))
            .arg("--seed")
            .arg(seed)
            .arg("--out-dir")
            .arg(out)
            .arg("simulate")
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = fs::read(out1.join("simulate.csv")).unwrap();
    let b = fs::read(out2.join("simulate.csv")).unwrap();
    assert_eq!(a, b);
}
