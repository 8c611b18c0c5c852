//! End-to-end checks of the command surface: flags, files, exit codes.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_batchsim"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("batchsim-smoke-{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn help_names_every_documented_flag() {
    for (sub, flags) in [
        (
            "replay",
            vec![
                "--trace",
                "--keystore",
                "--systems",
                "--policy",
                "--window",
                "--min-batch",
                "--max-batch",
                "--top1",
                "--pricing",
                "--d",
                "--config",
                "--seed",
                "--out",
                "--parallel",
                "--emit-plots",
            ],
        ),
        (
            "bench",
            vec![
                "--fixed-batch",
                "--systems",
                "--rate",
                "--duration",
                "--seed",
            ],
        ),
        ("attack", vec!["--scenario", "--runs", "--seed"]),
        ("rewrite", vec!["--in", "--dispatcher", "--out"]),
    ] {
        let out = bin().args([sub, "--help"]).output().unwrap();
        let text = String::from_utf8_lossy(&out.stdout).to_string();
        for flag in flags {
            assert!(text.contains(flag), "{sub} --help is missing {flag}");
        }
    }
    for analyze in ["nmin", "profit", "payments", "costs", "service"] {
        let out = bin().args(["analyze", analyze, "--help"]).output().unwrap();
        assert!(out.status.success(), "analyze {analyze} --help failed");
    }
}

#[test]
fn missing_trace_exits_2() {
    let out = bin()
        .args([
            "replay",
            "--trace",
            "/nonexistent/t.csv",
            "--keystore",
            "/nonexistent/k.csv",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_flag_exits_1() {
    let out = bin().args(["replay", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin()
        .args(["bench", "--pricing", "bogus:5", "--fixed-batch", "5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn b1_on_non_token_trace_exits_3() {
    let dir = temp_dir("b1-violation");
    // Generate a constant-cost (non-token) workload first.
    let status = bin()
        .args([
            "bench",
            "--fixed-batch",
            "5",
            "--windows",
            "1",
            "--systems",
            "b0",
        ])
        .args(["--callee", "work:3", "--seed", "4", "--out"])
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());
    let out = bin()
        .args(["replay", "--systems", "b1", "--callee", "work:3", "--trace"])
        .arg(dir.join("trace.csv"))
        .arg("--keystore")
        .arg(dir.join("keystore.csv"))
        .arg("--out")
        .arg(dir.join("reports"))
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn config_file_merges_under_flags() {
    let dir = temp_dir("config-merge");
    // Fixed-batch workload of 3 calls per window.
    let status = bin()
        .args([
            "bench",
            "--fixed-batch",
            "3",
            "--windows",
            "1",
            "--systems",
            "b0",
        ])
        .args(["--seed", "9", "--out"])
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());

    std::fs::write(
        dir.join("run.conf"),
        "min-batch=2\nwindow=60\nmax-batch=10\n",
    )
    .unwrap();
    // The explicit --window flag must win over the config file; min-batch
    // and max-batch come from the file.
    let status = bin()
        .args([
            "replay",
            "--systems",
            "ibatch",
            "--window",
            "120",
            "--trace",
        ])
        .arg(dir.join("trace.csv"))
        .arg("--keystore")
        .arg(dir.join("keystore.csv"))
        .arg("--config")
        .arg(dir.join("run.conf"))
        .arg("--out")
        .arg(dir.join("reports"))
        .status()
        .unwrap();
    assert!(status.success());
    let report = std::fs::read_to_string(dir.join("reports/report_ibatch.csv")).unwrap();
    assert!(
        report.contains("policy,,120sec-min2"),
        "policy line wrong:\n{report}"
    );
    // Three calls with min-batch 2 from the config: one batch forms.
    assert!(report.contains("batches,formed,1"), "{report}");
}

#[test]
fn attack_scenario_file_round() {
    let dir = temp_dir("attack");
    std::fs::write(dir.join("scenario.txt"), "r1,0\nr2,1\nr3,2\nforge,3\n").unwrap();
    let out = bin()
        .args(["attack", "--seed", "21", "--scenario"])
        .arg(dir.join("scenario.txt"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 5); // header + 4 rows
    assert!(text.contains("caller-refusal"));
    assert!(text.contains("chain-reject"));
}

#[test]
fn rewrite_round_trips_through_files() {
    use batchsim::core::Address;
    use batchsim::rewriter::{fixtures, ContractIR};

    let dir = temp_dir("rewrite");
    let input = dir.join("erc20.json");
    std::fs::write(&input, fixtures::erc20().to_json()).unwrap();
    let out_path = dir.join("erc20_byd.json");
    let status = bin()
        .args(["rewrite", "--in"])
        .arg(&input)
        .args(["--dispatcher", &Address([0xdd; 20]).to_hex()])
        .arg("--out")
        .arg(&out_path)
        .status()
        .unwrap();
    assert!(status.success());
    let rewritten = ContractIR::from_json(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert!(rewritten.function("transferByD").is_some());
    assert_eq!(rewritten.dispatcher, Some(Address([0xdd; 20])));
}

#[test]
fn analyze_service_prints_bounds() {
    let out = bin()
        .args([
            "analyze",
            "service",
            "--u",
            "10",
            "--n",
            "60",
            "--x",
            "3",
            "--gas-price",
            "20",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("u_min      = 6"), "{text}");
}
