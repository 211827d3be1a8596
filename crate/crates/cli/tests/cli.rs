use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csbubble")).args(args).current_dir(cwd).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const UNEQUAL: &str = "\
[torus]
a1 = [1.0, 0.0]
a2 = [0.0, 1.0]

[vortices]
species1 = [[0.5, 0.5], [0.5, 0.5]]
species2 = [[0.5, 0.5]]
";

#[test]
fn unknown_command_prints_usage_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn every_subcommand_has_help() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["green", "critpoints", "dsq", "approx", "solve", "sweep", "linops-bound", "report"] {
        let o = run(&[cmd, "--help"], dir.path());
        assert_eq!(o.status.code(), Some(0), "{cmd}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("--preset"), "{cmd}");
    }
}

#[test]
fn missing_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["dsq"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["dsq", "--preset", "torus9"], dir.path()).status.code(), Some(2));
    let o = run(&["green", "--preset", "square-k1", "--threads", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn rectangle_dsq_report_has_three_points_with_one_negative() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["dsq", "--preset", "rectangle", "--grid", "32", "-o", "out"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("out/dsq.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let points = v["points"].as_array().unwrap();
    assert_eq!(points.len(), 3);
    let mut signs: Vec<String> = points.iter().map(|p| p["sign"].as_str().unwrap().to_string()).collect();
    signs.sort();
    assert_eq!(signs, ["+", "+", "-"]);
    for p in points {
        let kind = p["report"]["kind"].as_str().unwrap();
        assert_eq!(p["sign"] == "-", kind == "maximum", "{kind}");
    }
    for i in 1..=3 {
        assert!(dir.path().join(format!("out/dsq_{i}.csv")).exists());
    }
}

#[test]
fn unequal_vortex_counts_are_rejected_for_bubbling_commands() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), UNEQUAL).unwrap();
    for cmd in ["critpoints", "dsq", "sweep"] {
        let o = run(&[cmd, "bad.toml"], dir.path());
        assert_eq!(o.status.code(), Some(2), "{cmd}");
        let msg = stderr(&o);
        assert!(msg.contains("N1 = N2") && msg.contains("vortices.species2"), "{msg}");
    }
    let o = run(&["green", "bad.toml", "--grid", "16", "-o", "g"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn malformed_config_names_line_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{UNEQUAL}\n[grid]\nn = 64\nresolution = 3\n");
    std::fs::write(dir.path().join("bad.toml"), text).unwrap();
    let o = run(&["green", "bad.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("bad.toml") && msg.contains("line 11") && msg.contains("resolution"), "{msg}");

    std::fs::write(dir.path().join("n.toml"), format!("{UNEQUAL}\n[grid]\nn = 48\n")).unwrap();
    let msg = stderr(&run(&["green", "n.toml"], dir.path()));
    assert!(msg.contains("grid.n"), "{msg}");
}

#[test]
fn saddle_center_is_a_computation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = csbubble::config::preset("rectangle").unwrap();
    let mut cfg = cfg;
    cfg.centers = vec![[0.8, 0.3]];
    cfg.grid.n = 32;
    std::fs::write(dir.path().join("saddle.toml"), cfg.to_toml().unwrap()).unwrap();
    let o = run(&["sweep", "saddle.toml", "-o", "out"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no admissible height"), "{}", stderr(&o));
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn repeated_runs_give_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        for args in [
            vec!["sweep", "--preset", "square-k1", "--grid", "32", "--max-steps", "2", "-o", out],
            vec!["dsq", "--preset", "rectangle", "--grid", "32", "-o", out],
            vec!["linops-bound", "--preset", "square-k1", "--grid", "32", "-o", out],
            vec!["approx", "--preset", "square-k1", "--grid", "32", "-o", out],
        ] {
            let o = run(&args, dir.path());
            assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
        }
    }
    for name in
        ["checkpoint.json", "sweep.csv", "dsq.json", "dsq_1.csv", "linops_bound.csv", "approx.csv", "approx.json"]
    {
        assert_eq!(read(&dir.path().join("a"), name), read(&dir.path().join("b"), name), "{name}");
    }
}

#[test]
fn resumed_sweep_matches_an_uninterrupted_one() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["sweep", "--preset", "square-k1", "--grid", "32"];
    let go = |extra: &[&str]| {
        let args: Vec<&str> = base.iter().chain(extra).copied().collect();
        let o = run(&args, dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    };
    go(&["--max-steps", "3", "-o", "full"]);
    go(&["--max-steps", "1", "-o", "split"]);
    go(&["--max-steps", "2", "--resume", "-o", "split"]);
    let (a, b) = (dir.path().join("full"), dir.path().join("split"));
    assert_eq!(read(&a, "checkpoint.json"), read(&b, "checkpoint.json"));
    assert_eq!(read(&a, "sweep.csv"), read(&b, "sweep.csv"));

    let o = run(&["report", "--preset", "square-k1", "-o", "full"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("a5"));
    assert!(a.join("certificate.json").exists() && a.join("masses.svg").exists());
}

#[test]
fn resume_without_checkpoint_fails_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sweep", "--preset", "square-k1", "--grid", "32", "--resume", "-o", "none"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("checkpoint.json"), "{}", stderr(&o));
}

#[test]
fn green_and_solve_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["green", "--preset", "square-k1", "--grid", "16", "-o", "g"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&read(&dir.path().join("g"), "green.json")).unwrap();
    assert!(v["splitting_difference"].as_f64().unwrap() < 1e-12);
    let csv = String::from_utf8(read(&dir.path().join("g"), "green.csv")).unwrap();
    assert_eq!(csv.lines().count(), 16 * 16 + 1);

    let o = run(&["solve", "--preset", "square-k1", "--grid", "32", "-o", "s"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rec: serde_json::Value = serde_json::from_slice(&read(&dir.path().join("s"), "solve.json")).unwrap();
    assert!(rec["identity_defects"][0].as_f64().unwrap() < 1e-6);
    let csv = String::from_utf8(read(&dir.path().join("s"), "solution.csv")).unwrap();
    assert!(csv.starts_with("x1,x2,u1,u2"));
}
