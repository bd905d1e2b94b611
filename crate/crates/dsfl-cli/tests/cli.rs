//! End-to-end checks of the command-line surface: exit codes, artifact
//! files, determinism of seeded runs.

use std::path::PathBuf;
use std::process::Command;

fn dsfl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dsfl"))
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dsfl-cli-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn synth_reports_design_figures() {
    let out = tmp_dir("synth");
    let result = dsfl()
        .args([
            "synth",
            "--order",
            "4",
            "--osr",
            "50",
            "--out",
            out.join("d").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(result.status.success(), "synth must exit 0");
    let report = std::fs::read_to_string(out.join("d/report.txt")).unwrap();
    // Peak SQNR in the 95 +- 3 dB window and STF peaking near 8.3 dB.
    let sqnr: f64 = report
        .lines()
        .find(|l| l.starts_with("peak SQNR:"))
        .and_then(|l| l.split_whitespace().nth(2))
        .unwrap()
        .parse()
        .unwrap();
    assert!((sqnr - 95.0).abs() <= 3.0, "reported SQNR {sqnr}");
    assert!(report.contains("STF peaking"));
    assert!(out.join("d/ntf.json").exists());

    // Round-trip the emitted NTF.
    let text = std::fs::read_to_string(out.join("d/ntf.json")).unwrap();
    let ntf = dsfl_core::tf::TransferFunction::<f64>::from_json(&text).unwrap();
    assert_eq!(ntf.order(), 4);
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn synth_first_order_canonical() {
    let out = tmp_dir("synth1");
    let result = dsfl()
        .args([
            "synth",
            "--order",
            "1",
            "--osr",
            "50",
            "--no-zero-opt",
            "--h-inf",
            "2.0",
            "--kind",
            "dt",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(result.status.success());
    let text = std::fs::read_to_string(out.join("ntf.json")).unwrap();
    let ntf = dsfl_core::tf::TransferFunction::<f64>::from_json(&text).unwrap();
    assert_eq!(ntf.zeros().len(), 1);
    assert_eq!(ntf.zeros()[0].re, 1.0);
    assert_eq!(ntf.poles()[0].re, 0.0);
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn argument_errors_exit_2() {
    let result = dsfl()
        .args(["synth", "--order", "9", "--osr", "50"])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(2), "order 9 must exit 2");

    let result = dsfl().args(["sim", "--osr", "0"]).output().unwrap();
    assert_eq!(result.status.code(), Some(2), "OSR 0 must exit 2");

    let result = dsfl()
        .args(["kspace", "dr", "definitely-missing.ksp"])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(
        stderr.contains("definitely-missing.ksp"),
        "error must name the file: {stderr}"
    );
}

#[test]
fn kspace_gen_dr_recon_flow() {
    let dir = tmp_dir("ksp");
    let file = dir.join("phantom.ksp");
    let result = dsfl()
        .args([
            "kspace",
            "gen",
            "--out",
            file.to_str().unwrap(),
            "--dr",
            "90",
        ])
        .output()
        .unwrap();
    assert!(result.status.success());

    let result = dsfl()
        .args(["kspace", "dr", file.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(result.status.success());
    let stdout = String::from_utf8_lossy(&result.stdout);
    let dr: f64 = stdout
        .lines()
        .find(|l| l.starts_with("k-space dynamic range:"))
        .and_then(|l| l.split_whitespace().nth(3))
        .unwrap()
        .parse()
        .unwrap();
    assert!((dr - 90.0).abs() <= 1.0, "generated phantom DR {dr}");

    let pgm = dir.join("image.pgm");
    let result = dsfl()
        .args([
            "kspace",
            "recon",
            file.to_str().unwrap(),
            "--out-pgm",
            pgm.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(result.status.success());
    let bytes = std::fs::read(&pgm).unwrap();
    assert!(bytes.starts_with(b"P5\n64 64\n65535\n"));
    assert_eq!(bytes.len(), 15 + 64 * 64 * 2);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sim_outputs_are_deterministic() {
    let a = tmp_dir("sim-a");
    let b = tmp_dir("sim-b");
    for out in [&a, &b] {
        let result = dsfl()
            .args([
                "sim",
                "--order",
                "2",
                "--kind",
                "dt",
                "--osr",
                "25",
                "--n",
                "8192",
                "--amp-dbfs=-8",
                "--thermal",
                "1e-6",
                "--jitter-ps",
                "1.5",
                "--seed",
                "42",
                "--out",
                out.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(
            result.status.success(),
            "sim failed: {}",
            String::from_utf8_lossy(&result.stderr)
        );
    }
    let bits_a = std::fs::read(a.join("bitstream.csv")).unwrap();
    let bits_b = std::fs::read(b.join("bitstream.csv")).unwrap();
    assert_eq!(bits_a, bits_b, "identical config + seed must give identical CSV");
    let spec_a = std::fs::read(a.join("spectrum.csv")).unwrap();
    let spec_b = std::fs::read(b.join("spectrum.csv")).unwrap();
    assert_eq!(spec_a, spec_b);
    std::fs::remove_dir_all(&a).ok();
    std::fs::remove_dir_all(&b).ok();
}

#[test]
fn link_config_rejects_unknown_keys() {
    let dir = tmp_dir("linkcfg");
    let cfg = dir.join("link.cfg");
    std::fs::write(&cfg, "f_lo = 120M\nnot_a_key = 3\n").unwrap();
    let result = dsfl()
        .args(["link", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("not_a_key"), "must name the bad key: {stderr}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn help_is_available_everywhere() {
    for args in [
        vec!["--help"],
        vec!["synth", "--help"],
        vec!["sim", "--help"],
        vec!["link", "--help"],
        vec!["kspace", "--help"],
        vec!["sweep-fig5", "--help"],
    ] {
        let result = dsfl().args(&args).output().unwrap();
        assert!(result.status.success(), "--help failed for {args:?}");
        assert!(!result.stdout.is_empty());
    }
}
