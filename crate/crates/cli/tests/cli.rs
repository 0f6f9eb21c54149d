//! End-to-end checks of the command-line interface: exit codes, produced
//! files, and determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_twophase"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("twophase-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

#[test]
fn convert_counter_clock_gated() {
    let out = tmpdir("convert");
    let output = run(bin()
        .arg("convert")
        .arg(fixture("counter3.v"))
        .args(["--variant", "clock-gated", "--retime", "min-delay"])
        .arg("--out")
        .arg(&out));
    assert!(output.status.success(), "{output:?}");
    for artifact in [
        "counter3.twophase.json",
        "counter3.twophase.v",
        "counter3.trace.json",
        "counter3.stages.json",
    ] {
        assert!(out.join(artifact).exists(), "{artifact} missing");
    }
}

#[test]
fn convert_is_deterministic() {
    let out1 = tmpdir("det1");
    let out2 = tmpdir("det2");
    for out in [&out1, &out2] {
        let output = run(bin()
            .arg("convert")
            .arg(fixture("gcd_fsm.v"))
            .args(["--variant", "recirc-mux"])
            .arg("--out")
            .arg(out));
        assert!(output.status.success(), "{output:?}");
    }
    for artifact in ["gcd_fsm.twophase.json", "gcd_fsm.twophase.v", "gcd_fsm.trace.json"] {
        let a = std::fs::read(out1.join(artifact)).unwrap();
        let b = std::fs::read(out2.join(artifact)).unwrap();
        assert_eq!(a, b, "{artifact} differs between runs");
    }
}

#[test]
fn async_fixture_rejected_under_clock_gated_accepted_under_recirc() {
    let out = tmpdir("async");
    let gated = run(bin()
        .arg("convert")
        .arg(fixture("async_regs.v"))
        .args(["--variant", "clock-gated"])
        .arg("--out")
        .arg(&out));
    assert_eq!(gated.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&gated.stderr);
    assert!(stderr.contains("ra"), "error names the instance: {stderr}");
    assert!(stderr.contains("recirc-mux"), "error points at the other variant");

    let recirc = run(bin()
        .arg("convert")
        .arg(fixture("async_regs.v"))
        .args(["--variant", "recirc-mux"])
        .arg("--out")
        .arg(&out));
    assert_eq!(recirc.status.code(), Some(0), "{recirc:?}");
}

#[test]
fn verify_clean_and_mutated() {
    let out = tmpdir("verify");
    let convert = run(bin()
        .arg("convert")
        .arg(fixture("enable_counter3.v"))
        .args(["--variant", "clock-gated"])
        .arg("--out")
        .arg(&out));
    assert!(convert.status.success());

    let transformed = out.join("enable_counter3.twophase.json");
    let clean = run(bin()
        .arg("verify")
        .arg(&transformed)
        .arg(fixture("enable_counter3.v"))
        .args(["--cycles", "200", "--seeds", "4"])
        .arg("--out")
        .arg(&out));
    assert_eq!(clean.status.code(), Some(0), "{clean:?}");
    assert!(out.join("enable_counter3.verify.json").exists());

    // Swap one clock gate onto the wrong clock and expect a violation.
    let text = std::fs::read_to_string(&transformed).unwrap();
    let broken = text.replacen("\"A\": \"clk_2\"", "\"A\": \"clk_1\"", 1);
    assert_ne!(text, broken, "mutation applied");
    let breaking = out.join("broken.json");
    std::fs::write(&breaking, broken).unwrap();
    let dirty = run(bin()
        .arg("verify")
        .arg(&breaking)
        .args(["--cycles", "50", "--seeds", "1"])
        .arg("--out")
        .arg(&out));
    assert_eq!(dirty.status.code(), Some(1), "{dirty:?}");
    let stdout = String::from_utf8_lossy(&dirty.stdout);
    assert!(stdout.contains("violation"), "{stdout}");
}

#[test]
fn sta_reports_borrow_and_infeasibility() {
    let out = tmpdir("sta");
    let ok = run(bin()
        .arg("sta")
        .arg(fixture("fig1_ring.v"))
        .args(["--period", "10"])
        .arg("--lib")
        .arg(fixture("timing_cells.json"))
        .arg("--out")
        .arg(&out));
    assert_eq!(ok.status.code(), Some(0), "{ok:?}");
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.contains("act TB 2.000"), "{stdout}");
    assert!(out.join("fig1_ring.timing.json").exists());

    let slow = run(bin()
        .arg("sta")
        .arg(fixture("fig1_ring_slow.v"))
        .args(["--period", "10"])
        .arg("--lib")
        .arg(fixture("timing_cells.json"))
        .arg("--out")
        .arg(&out));
    assert_eq!(slow.status.code(), Some(1), "{slow:?}");
    let stderr = String::from_utf8_lossy(&slow.stderr);
    assert!(stderr.contains("infeasible"), "{stderr}");
}

#[test]
fn report_prints_table() {
    let output = run(bin()
        .arg("report")
        .arg(fixture("counter3.v"))
        .arg(fixture("fig1_ring.v"))
        .args(["--period", "10"])
        .arg("--lib")
        .arg(fixture("timing_cells.json")));
    // counter3 uses unknown cells under the timing library; run per-library instead.
    assert_eq!(output.status.code(), Some(2));

    let output = run(bin()
        .arg("report")
        .arg(fixture("fig1_ring.v"))
        .args(["--period", "10"])
        .arg("--lib")
        .arg(fixture("timing_cells.json")));
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("design"));
    assert!(stdout.contains("fig1_ring"));
}

#[test]
fn parse_round_trips() {
    let out = tmpdir("parse");
    let canonical = out.join("counter3.json");
    let to_json = run(bin()
        .arg("parse")
        .arg(fixture("counter3.v"))
        .args(["--format", "canonical"])
        .arg("-o")
        .arg(&canonical));
    assert!(to_json.status.success(), "{to_json:?}");

    let back = out.join("counter3.v");
    let to_v = run(bin()
        .arg("parse")
        .arg(&canonical)
        .args(["--format", "verilog"])
        .arg("-o")
        .arg(&back));
    assert!(to_v.status.success(), "{to_v:?}");

    let again = out.join("counter3_again.json");
    let to_json2 = run(bin()
        .arg("parse")
        .arg(&back)
        .args(["--format", "canonical"])
        .arg("-o")
        .arg(&again));
    assert!(to_json2.status.success(), "{to_json2:?}");
    let a = std::fs::read_to_string(&canonical).unwrap();
    let b = std::fs::read_to_string(&again).unwrap();
    assert_eq!(a, b, "canonical form stable across Verilog round trip");
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let out = tmpdir("config");
    let config = out.join("config.json");
    std::fs::write(
        &config,
        format!(
            "{{\"variant\": \"recirc-mux\", \"retime\": \"off\", \"out\": \"{}\"}}",
            out.display()
        ),
    )
    .unwrap();

    // Config alone: recirc-mux.
    let from_file = run(bin()
        .arg("convert")
        .arg(fixture("counter3.v"))
        .arg("--config")
        .arg(&config));
    assert!(from_file.status.success(), "{from_file:?}");
    let stdout = String::from_utf8_lossy(&from_file.stdout);
    assert!(stdout.contains("recirc-mux"), "{stdout}");

    // Flag overrides the file.
    let flag_wins = run(bin()
        .arg("convert")
        .arg(fixture("counter3.v"))
        .arg("--config")
        .arg(&config)
        .args(["--variant", "clock-gated"]));
    assert!(flag_wins.status.success());
    let stdout = String::from_utf8_lossy(&flag_wins.stdout);
    assert!(stdout.contains("clock-gated"), "{stdout}");
}

#[test]
fn usage_errors_exit_2() {
    let unknown_flag = run(bin().arg("convert").arg("--nope"));
    assert_eq!(unknown_flag.status.code(), Some(2));

    let missing_file = run(bin().arg("convert").arg("does_not_exist.v"));
    assert_eq!(missing_file.status.code(), Some(2));

    let out = tmpdir("badsyntax");
    let bad = out.join("bad.v");
    std::fs::write(&bad, "module m (a;\n").unwrap();
    let parse_error = run(bin().arg("parse").arg(&bad));
    assert_eq!(parse_error.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&parse_error.stderr);
    assert!(stderr.contains("bad.v:"), "span in `{stderr}`");
}
