use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mccssp"))
        .args(args)
        .env_remove("MCCSSP_SOLVER")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
        .display()
        .to_string()
}

/// CSV body without the comment line and without the named columns.
fn deterministic_columns(csv: &str, drop: &[&str]) -> Vec<Vec<String>> {
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let keep: Vec<usize> = (0..header.len())
        .filter(|&i| !drop.contains(&header[i]))
        .collect();
    lines
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            keep.iter().map(|&i| cells[i].to_string()).collect()
        })
        .collect()
}

#[test]
fn solve_agrees_with_the_oracle() {
    let out = run(&["solve", &data("risky_safe.json"), "--oracle"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(text.contains("status optimal"), "{text}");
    assert!(text.contains("oracle agrees"), "{text}");
}

#[test]
fn both_backends_solve_the_example() {
    for solver in ["highs", "microlp"] {
        let out = run(&["solve", &data("risky_safe.json"), "--solver", solver]);
        assert!(out.status.success(), "{solver}");
        assert!(stdout(&out).contains("objective 1.000000"), "{solver}");
    }
}

#[test]
fn errors_exit_with_status_one() {
    for args in [
        vec!["solve".to_string(), "no/such/file.json".to_string()],
        vec![
            "solve".to_string(),
            data("risky_safe.json"),
            "--solver".to_string(),
            "bogus".to_string(),
        ],
        vec![
            "grid-bench".to_string(),
            "--agents".to_string(),
            "4..1".to_string(),
        ],
    ] {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = run(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(
            String::from_utf8_lossy(&out.stderr).contains("error"),
            "{args:?}"
        );
    }
}

#[test]
fn grid_bench_is_reproducible() {
    let args = [
        "grid-bench",
        "--agents",
        "1..2",
        "--horizon",
        "1..3",
        "--repeats",
        "1",
        "--seed",
        "3",
    ];
    let a = stdout(&run(&args));
    let b = stdout(&run(&args));
    let timing = ["build_s", "solve_s"];
    let rows = deterministic_columns(&a, &timing);
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.last().unwrap() == "optimal"));
    assert_eq!(rows, deterministic_columns(&b, &timing));
}

#[test]
fn intersection_sweep_is_reproducible() {
    let args = [
        "intersect-sim",
        "--deltas",
        "0.01",
        "--horizons",
        "1",
        "--hv-fractions",
        "0",
        "--reps",
        "2",
        "--duration",
        "10",
    ];
    let a = stdout(&run(&args));
    let b = stdout(&run(&args));
    let timing = ["mean_plan_s", "max_plan_s"];
    let rows = deterministic_columns(&a, &timing);
    assert_eq!(rows.len(), 4, "{a}");
    assert_eq!(rows, deterministic_columns(&b, &timing));
}

#[test]
fn plan_time_reports_each_horizon() {
    let out = run(&[
        "plan-time",
        "--horizon",
        "1,2",
        "--executing",
        "2",
        "--snapshots",
        "2",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = deterministic_columns(&stdout(&out), &["mean_plan_s", "max_plan_s"]);
    assert_eq!(rows.len(), 2);
}

fn write_trajectories(dir: &Path, name: &str, heading: [f64; 2]) -> PathBuf {
    let mut csv = String::from("id,t,x,y\n");
    for (id, offset) in [("a", -0.2), ("b", 0.0), ("c", 0.3)] {
        for i in 0..30 {
            let s = i as f64;
            let (x, y) = (
                heading[0] * s - heading[1] * offset,
                heading[1] * s + heading[0] * offset,
            );
            csv.push_str(&format!("{id},{},{x},{y}\n", i as f64 * 0.1));
        }
    }
    let path = dir.join(name);
    fs::write(&path, csv).unwrap();
    path
}

#[test]
fn flow_tube_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut tubes = Vec::new();
    for (name, heading) in [("east", [1.0, 0.0]), ("north", [0.0, 1.0])] {
        let csv = write_trajectories(dir.path(), &format!("{name}.csv"), heading);
        let tube = dir.path().join(format!("{name}.json"));
        let out = run(&[
            "pft",
            "fit",
            csv.to_str().unwrap(),
            "--label",
            name,
            "--out",
            tube.to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        tubes.push(tube.display().to_string());
    }

    let prefix = dir.path().join("prefix.csv");
    fs::write(&prefix, "t,x,y\n0,0,0\n0.1,1,0\n0.2,2,0\n0.3,3,0\n").unwrap();
    let out = run(&[
        "pft",
        "intent",
        "--tubes",
        &tubes[0],
        &tubes[1],
        "--prefix",
        prefix.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).contains("east"));

    let table = dir.path().join("table.bin");
    let args = [
        "pft",
        "risk-table",
        "--tubes",
        &tubes[0],
        &tubes[1],
        "--samples",
        "100",
        "--out",
        table.to_str().unwrap(),
    ];
    assert!(run(&args).status.success());
    let first = fs::read(&table).unwrap();
    assert!(run(&args).status.success());
    assert_eq!(first, fs::read(&table).unwrap());
}

#[test]
fn selftest_passes() {
    let out = run(&["selftest"]);
    assert!(
        out.status.success(),
        "{}{}",
        stdout(&out),
        String::from_utf8_lossy(&out.stderr)
    );
}
