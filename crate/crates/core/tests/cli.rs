use std::path::Path;
use std::process::Command;

fn wcde() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wcde"))
}

fn run_grid(out: &Path) {
    let status = wcde()
        .args(["grid", "--p-values", "0.1,0.5", "--phi-values", "-0.1,0", "--reps", "20", "--n", "500"])
        .args(["--truth-pop-size", "50000", "--seed", "7", "--workers", "1", "--render", "--out-dir"])
        .arg(out)
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn grid_output_is_byte_identical_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_grid(&a);
    run_grid(&b);
    for name in ["table.csv", "truth.csv", "figure.csv", "figure.svg", "manifest.json"] {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
    let table = std::fs::read_to_string(a.join("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 2 * 2 * 5);
    // Figure data keeps p = 0.5 only: 2 phi values x 2 series.
    let figure = std::fs::read_to_string(a.join("figure.csv")).unwrap();
    assert_eq!(figure.lines().count(), 1 + 4);

    let fig = dir.path().join("fig.csv");
    let status = wcde()
        .arg("figure")
        .arg(a.join("table.csv"))
        .args(["--p", "0.1", "--output"])
        .arg(&fig)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(std::fs::read_to_string(&fig).unwrap().lines().count(), 5);
    assert!(!fig.with_extension("svg").exists());
}

#[test]
fn estimate_reads_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.tsv");
    std::fs::write(
        &data,
        "t\tm\ty\tv\n1\t1\t3\t0\n1\t1\t5\t1\n1\t0\t1\t0\n1\t0\t2\t1\n0\t1\t1\t0\n0\t1\t2\t1\n0\t0\t0\t0\n0\t0\t1\t1\n",
    )
    .unwrap();
    let out = wcde().arg("estimate").arg(&data).args(["--delimiter", "tab", "--p-star", "0.5"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let tags: Vec<&str> = lines.iter().map(|v| v["estimand"].as_str().unwrap()).collect();
    assert_eq!(tags, ["ATE", "WCDE", "NDE", "NIE", "WCDE", "ATE", "WCDE"]);
    assert_eq!(lines[0]["estimate"], 1.75);
}

#[test]
fn errors_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    std::fs::write(&data, "t,m,y\n1,0,1\n7,0,1\n").unwrap();
    let out = wcde().arg("estimate").arg(&data).output().unwrap();
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "parse");
    assert!(err["message"].as_str().unwrap().contains('3'));

    let out = wcde().args(["truth", "--phi-values", "0.9", "--truth-pop-size", "10"]).output().unwrap();
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config");
}

#[test]
fn design_and_truth_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("design.csv");
    let out = wcde()
        .args(["design", "--p", "0.5", "--phi", "-0.05", "--n", "2000", "--output"])
        .arg(&records)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 3);

    // The written design records can be re-estimated through the design path.
    let again = wcde().arg("estimate").arg(&records).output().unwrap();
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));

    let truth = wcde()
        .args(["truth", "--p-values", "0.5", "--phi-values", "0", "--truth-pop-size", "1000"])
        .output()
        .unwrap();
    assert!(truth.status.success());
    let text = String::from_utf8(truth.stdout).unwrap();
    assert!(text.starts_with("p,phi,estimand,value,mc_se\n"));
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn partial_config_file_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(&config, r#"{"identical_mediators": true}"#).unwrap();
    let out = wcde()
        .args(["truth", "--p-values", "0.3", "--phi-values", "0", "--truth-pop-size", "5000", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let iie = text.lines().find(|l| l.contains(",IIE,")).unwrap();
    assert_eq!(iie.split(',').nth(3), Some("0"));
}
