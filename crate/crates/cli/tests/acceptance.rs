//! Process-level checks of the usdn-sim binary: the determinism
//! criterion (number 10 of the acceptance checklist; 1 through 9 live in
//! the core crate's acceptance tests) plus exit-code and file-layout
//! behavior of each subcommand.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_usdn-sim"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

const REPORT_FILES: [&str; 3] = ["summary.csv", "per_node.csv", "traffic_ratio.csv"];

#[test]
fn criterion_10_two_processes_write_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = [tmp.path().join("first"), tmp.path().join("second")];
    for out in &dirs {
        let status = bin()
            .arg("run")
            .arg("--scenario")
            .arg(scenario("usdn-default.cfg"))
            .args(["--seed", "42"])
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let mut identical = true;
    let mut matches_golden = true;
    for file in REPORT_FILES {
        let a = fs::read(dirs[0].join(file)).unwrap();
        let b = fs::read(dirs[1].join(file)).unwrap();
        identical &= a == b;
        let golden = Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("tests/golden")
            .join(file);
        matches_golden &= a == fs::read(&golden).unwrap();
    }
    let pass = identical && matches_golden;
    println!(
        "criterion 10 {}: two runs of the default scenario at seed 42 byte-identical \
         ({identical}) and equal to the frozen golden output ({matches_golden})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

#[test]
fn run_writes_events_only_when_asked() {
    let tmp = tempfile::tempdir().unwrap();
    let quiet = tmp.path().join("quiet");
    let chatty = tmp.path().join("chatty");
    let sc = scenario("sweep-ftlife.cfg");
    for (out, events) in [(&quiet, false), (&chatty, true)] {
        let mut cmd = bin();
        cmd.arg("run")
            .arg("--scenario")
            .arg(&sc)
            .args(["--seed", "1"])
            .arg("--out")
            .arg(out);
        if events {
            cmd.arg("--events");
        }
        assert!(cmd.status().unwrap().success());
    }
    for file in REPORT_FILES {
        assert!(quiet.join(file).exists());
    }
    assert!(!quiet.join("events.csv").exists());
    let events = fs::read_to_string(chatty.join("events.csv")).unwrap();
    assert!(events.starts_with("t_s,kind,node,src,"));
    assert!(events.lines().count() > 1000);
}

#[test]
fn sweep_accumulates_sorted_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let status = bin()
        .arg("sweep")
        .arg("--scenario")
        .arg(scenario("sweep-ftlife.cfg"))
        .args(["--axis", "ft_lifetime_s"])
        .args(["--values", "300,60"])
        .args(["--seeds", "2"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("axis,value,scenario,seed,"));
    let keys: Vec<(u64, u64)> = lines[1..]
        .iter()
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            assert_eq!(cols[0], "ft_lifetime_s");
            (cols[1].parse().unwrap(), cols[3].parse().unwrap())
        })
        .collect();
    assert_eq!(keys, [(60, 1), (60, 2), (300, 1), (300, 2)]);
}

#[test]
fn exit_codes_distinguish_bad_configs_from_io_trouble() {
    let ok = bin()
        .arg("validate")
        .arg("--scenario")
        .arg(scenario("usdn-default.cfg"))
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("30 nodes"));

    let missing = bin()
        .arg("validate")
        .arg("--scenario")
        .arg(scenario("no-such-file.cfg"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.cfg");
    fs::write(&bad, "name = \"x\"\nduration_s = -5.0\n").unwrap();
    let invalid = bin().arg("validate").arg("--scenario").arg(&bad).output().unwrap();
    assert_eq!(invalid.status.code(), Some(2));

    let unsweepable = bin()
        .arg("sweep")
        .arg("--scenario")
        .arg(scenario("baseline-rpl.cfg"))
        .args(["--axis", "nsu_period_s", "--values", "60", "--seeds", "1"])
        .arg("--out")
        .arg(tmp.path().join("never"))
        .output()
        .unwrap();
    assert_eq!(unsweepable.status.code(), Some(2));
}
