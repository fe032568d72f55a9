use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coagdrift"))
        .args(args)
        .current_dir(dir)
        .env_remove("COAGDRIFT_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn meta_value(path: &Path, key: &str) -> serde_json::Value {
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    doc[key].clone()
}

fn read_rows(path: &Path) -> (String, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    (header, lines.map(|l| l.split(',').map(str::to_string).collect()).collect())
}

#[test]
fn threshold_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["threshold", "--v", "0.5"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("m0_bar = 0.0165855"), "{}", stdout(&o));

    let o = run(&["threshold", "--v", "0.5", "--m0", "0.01"], dir.path());
    assert!(stdout(&o).contains("tau_star = 3.4315"));
    let o = run(&["threshold", "--v", "0.5", "--m0", "0.02"], dir.path());
    assert!(stdout(&o).contains("inadmissible"));

    let o = run(&["threshold", "--v", "1.5"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("v = 1.5"));
}

#[test]
fn solve_verify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve", "--v", "0.5", "--m0", "0.005", "--out", "p.csv", "--gnuplot"], dir.path());
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    let meta = dir.path().join("p.json");
    let f0 = meta_value(&meta, "report")["F0"].as_f64().unwrap();
    assert!((f0 / 0.004975 - 1.0).abs() < 1e-6);
    assert_eq!(meta_value(&meta, "certified"), serde_json::Value::Bool(true));
    assert!(dir.path().join("p.gp").exists());

    let (header, rows) = read_rows(&dir.path().join("p.csv"));
    assert_eq!(header, "z,F,tau");
    assert_eq!(rows.len(), 2049);
    assert_eq!(rows[0][0].parse::<f64>().unwrap(), 0.0);
    for row in &rows {
        for cell in row {
            let x: f64 = cell.parse().unwrap();
            assert_eq!(&format!("{x:.16e}"), cell);
        }
    }

    let o = run(&["verify", "p.csv"], dir.path());
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));

    // the same profile with F doubled fails the mass check
    let text = fs::read_to_string(dir.path().join("p.csv")).unwrap();
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            out.push_str(line);
        } else {
            let c: Vec<&str> = line.split(',').collect();
            let f: f64 = c[1].parse().unwrap();
            out.push_str(&format!("{},{:.16e},{}", c[0], 2.0 * f, c[2]));
        }
        out.push('\n');
    }
    fs::write(dir.path().join("q.csv"), out).unwrap();
    fs::copy(&meta, dir.path().join("q.json")).unwrap();
    let o = run(&["verify", "q.csv"], dir.path());
    assert_eq!(code(&o), 4);
    assert!(stdout(&o).lines().any(|l| l.starts_with("FAIL M0")));
}

#[test]
fn solve_above_threshold_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve", "--v", "0.5", "--m0", "0.02"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("m0_bar = 0.0165"));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn forced_solve_far_beyond_threshold_is_uncertified() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve", "--v", "0.5", "--m0", "0.4999", "--force", "--nodes", "257", "--out", "x.csv"], dir.path());
    assert_eq!(code(&o), 4, "{}{}", stdout(&o), stderr(&o));
    let meta = dir.path().join("x.json");
    assert_eq!(meta_value(&meta, "certified"), serde_json::Value::Bool(false));
    assert_eq!(meta_value(&meta, "exploratory"), serde_json::Value::Bool(true));
    assert!(meta_value(&meta, "tau_star").is_null());
}

#[test]
fn exponential_file_verifies_residual_but_not_power_law() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["exponential", "--v", "0.5", "--out", "e.csv"], dir.path());
    assert_eq!(code(&o), 0);
    let o = run(&["verify", "e.csv"], dir.path());
    let out = stdout(&o);
    assert_eq!(code(&o), 4);
    assert!(out.lines().any(|l| l.starts_with("PASS residual")));
    assert!(out.contains("non-power-law"));
}

#[test]
fn malformed_files_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    run(&["exponential", "--v", "0.5", "--nodes", "65", "--out", "e.csv"], dir.path());
    fs::write(dir.path().join("bad.csv"), "z,F\n0,1\n").unwrap();
    fs::copy(dir.path().join("e.json"), dir.path().join("bad.json")).unwrap();
    assert_eq!(code(&run(&["verify", "bad.csv"], dir.path())), 2);
    assert_eq!(code(&run(&["verify", "missing.csv"], dir.path())), 2);

    let text = fs::read_to_string(dir.path().join("e.csv")).unwrap();
    let truncated: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
    fs::write(dir.path().join("short.csv"), truncated).unwrap();
    fs::copy(dir.path().join("e.json"), dir.path().join("short.json")).unwrap();
    let o = run(&["verify", "short.csv"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("metadata declares 65 nodes"));
}

fn simulate_exponential(dir: &Path, cells: &str, out: &str) -> Vec<Vec<f64>> {
    let o = run(
        &[
            "simulate",
            "--profile",
            "e.csv",
            "--t1",
            "2",
            "--cells",
            cells,
            "--xmax",
            "60",
            "--fft",
            "--snapshots",
            "1.5",
            "--out-dir",
            out,
        ],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = read_rows(&dir.join(out).join("diagnostics.csv"));
    assert_eq!(header, "t,m0,m1,u,self_similar_error");
    assert!(dir.join(out).join("snapshot_t1.5.csv").exists());
    assert!(dir.join(out).join("snapshot_t2.csv").exists());
    rows.iter().map(|r| r.iter().map(|c| c.parse().unwrap()).collect()).collect()
}

#[test]
fn simulate_exponential_profile() {
    let dir = tempfile::tempdir().unwrap();
    run(&["exponential", "--v", "0.5", "--out", "e.csv"], dir.path());
    let coarse = simulate_exponential(dir.path(), "1024", "a");
    let fine = simulate_exponential(dir.path(), "2048", "b");
    let m1_start = coarse[0][2];
    for row in &coarse {
        let (t, m1, u) = (row[0], row[2], row[3]);
        assert!((u * t / 0.5 - 1.0).abs() < 1e-2);
        assert!((m1 / m1_start - 1.0).abs() < 1e-2);
    }
    let ratio = coarse.last().unwrap()[4] / fine.last().unwrap()[4];
    assert!((1.6..=2.4).contains(&ratio), "ratio {ratio}");
}

#[test]
fn simulate_rejects_bad_times() {
    let dir = tempfile::tempdir().unwrap();
    run(&["exponential", "--v", "0.5", "--nodes", "129", "--out", "e.csv"], dir.path());
    let o = run(&["simulate", "--profile", "e.csv", "--t0", "2", "--t1", "1"], dir.path());
    assert_eq!(code(&o), 2);
    let o = run(&["simulate", "--profile", "e.csv", "--t1", "2", "--xmax", "5", "--strict"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn out_dir_from_environment_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("runs");
    let o = Command::new(env!("CARGO_BIN_EXE_coagdrift"))
        .args(["sweep", "--v", "0.5", "--m0", "0.003,0.005,0.03", "--nodes", "513"])
        .current_dir(dir.path())
        .env("COAGDRIFT_OUT_DIR", &target)
        .output()
        .unwrap();
    // the last point is above the threshold, so the sweep reports a domain error
    assert_eq!(code(&o), 2, "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("0.003,0,true"));
    assert!(out.contains("0.005,0,true"));
    assert!(target.join("profile_v0.5_m00.003.csv").exists());
    assert!(target.join("profile_v0.5_m00.005.json").exists());
    assert!(!target.join("profile_v0.5_m00.03.csv").exists());
}
