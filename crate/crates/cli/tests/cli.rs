use std::path::Path;
use std::process::Command;

fn solve() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_solve"));
    c.env_remove("LEKI_OUT_DIR");
    c
}

const SMALL: &str = "dims = [6]\nensemble_sizes = [4]\ntrials = 3\n[stopping]\nmax_iterations = 15\n";

fn write_small(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn run_is_byte_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_small(tmp.path());
    let mut trees = Vec::new();
    for workers in ["1", "3"] {
        let out = tmp.path().join(format!("w{workers}"));
        let st = solve()
            .args(["run", cfg.to_str().unwrap(), "--preset", "nonlinear", "--workers", workers, "--json", "--out"])
            .arg(&out)
            .output()
            .unwrap();
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
        trees.push(read_tree(&out));
    }
    assert_eq!(trees[0], trees[1]);
    let names: Vec<&str> = trees[0].iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.contains(&"nonlinear/summary.csv"));
    assert!(names.contains(&"nonlinear/summary.json"));
    assert!(names.contains(&"nonlinear/records/nonlinear_d6_J4_leki_trial002.csv"));
    assert_eq!(names.iter().filter(|n| n.contains("records/") && n.ends_with(".csv")).count(), 6);
}

#[test]
fn seed_flag_changes_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_small(tmp.path());
    let run = |seed: &str, dir: &str| {
        let out = tmp.path().join(dir);
        let st = solve()
            .args(["run", cfg.to_str().unwrap(), "--preset", "linear", "--seed", seed, "--out"])
            .arg(&out)
            .status()
            .unwrap();
        assert!(st.success());
        std::fs::read(out.join("linear/trials.csv")).unwrap()
    };
    assert_ne!(run("1", "a"), run("2", "b"));
    assert_eq!(run("1", "c"), run("1", "d"));
}

#[test]
fn env_var_sets_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_small(tmp.path());
    let target = tmp.path().join("from-env");
    let st = solve()
        .env("LEKI_OUT_DIR", &target)
        .args(["run", cfg.to_str().unwrap(), "--preset", "linear"])
        .current_dir(tmp.path())
        .status()
        .unwrap();
    assert!(st.success());
    assert!(target.join("linear/summary.csv").exists());
    assert!(!tmp.path().join("results").exists());
}

#[test]
fn configuration_errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "trials = 0\n").unwrap();
    let st = solve()
        .args(["run", bad.to_str().unwrap(), "--preset", "linear", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).contains("configuration error"));

    let missing = solve().args(["run", "/nonexistent.toml"]).status().unwrap();
    assert_eq!(missing.code(), Some(2));
    let nothing = solve().arg("run").status().unwrap();
    assert!(!nothing.success());
}

#[test]
fn aggregate_recomputes_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_small(tmp.path());
    let out = tmp.path().join("o");
    assert!(solve()
        .args(["run", cfg.to_str().unwrap(), "--preset", "linear", "--out"])
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let again = tmp.path().join("again.csv");
    let st = solve()
        .args(["aggregate", out.join("linear/trials.csv").to_str().unwrap(), "--out"])
        .arg(&again)
        .output()
        .unwrap();
    assert!(st.status.success());
    assert_eq!(
        std::fs::read(&again).unwrap(),
        std::fs::read(out.join("linear/summary.csv")).unwrap()
    );
    assert!(String::from_utf8_lossy(&st.stdout).contains("leki"));
}

#[test]
fn check_passes() {
    let st = solve().arg("check").output().unwrap();
    assert!(st.status.success());
    let text = String::from_utf8_lossy(&st.stdout);
    assert!(text.lines().count() >= 10);
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}
