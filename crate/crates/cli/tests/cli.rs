use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn batchsym(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_batchsym")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn unknown_scenario_is_a_usage_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = batchsym(&["simulate", "--scenario", "no_such_scenario", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fig6_stagger"));
    assert!(!out.exists());
}

#[test]
fn invalid_scenario_file_reports_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(
        &path,
        "gpus = 0\nduration_s = 1.0\n[[models]]\nname = \"m\"\nalpha_ms = 1.0\nbeta_ms = 5.0\nslo_ms = 3.0\n[workload]\nrate_rps = 10.0\narrival = { kind = \"poisson\" }\n",
    )
    .unwrap();
    let out = dir.path().join("run");
    let o = batchsym(&["simulate", "--scenario", path.to_str().unwrap(), "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.lines().filter(|l| l.trim_start().starts_with("- ")).count() >= 2, "{err}");
    assert!(!out.exists());
}

#[test]
fn stochastic_scenario_without_seed_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("noseed.toml");
    fs::write(
        &path,
        "gpus = 1\nduration_s = 0.1\n[[models]]\nname = \"m\"\nalpha_ms = 1.0\nbeta_ms = 5.0\nslo_ms = 30.0\n[workload]\nrate_rps = 10.0\narrival = { kind = \"poisson\" }\n",
    )
    .unwrap();
    let o = batchsym(&["trace", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = batchsym(&["trace", "--scenario", path.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn bad_arguments_exit_with_two() {
    assert_eq!(batchsym(&["simulate"]).status.code(), Some(2));
    assert_eq!(batchsym(&["goodput", "--scenario", "fig6_stagger", "--policy", "sometimes"]).status.code(), Some(2));
    assert_eq!(batchsym(&["goodput", "--scenario", "fig6_stagger", "--p99", "1.5"]).status.code(), Some(2));
    assert_eq!(batchsym(&["analytic", "--gpus", "8"]).status.code(), Some(2));
}

#[test]
fn simulate_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = batchsym(&["simulate", "--scenario", "fig6_stagger", "--out", out.to_str().unwrap(), "--check-invariants"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut names: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["batch_hist.csv", "latency.csv", "requests.csv", "summary.json", "trace.csv", "utilization.csv"]);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["stats"]["bad_rate"], 0.0);
    assert!(summary["counters"]["invariant_checks"].as_u64().unwrap() > 0);
    let hist = fs::read_to_string(out.join("batch_hist.csv")).unwrap();
    assert_eq!(hist, "model,batch_size,count\ntoy,4,40\n");
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = batchsym(&["simulate", "--scenario", "table2_inceptionresnet", "--seed", "7", "--rate", "800", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(read_all(&a), read_all(&b));
}

#[test]
fn skip_scenario_drops_only_under_eager() {
    let deferred = stdout(&batchsym(&["trace", "--scenario", "fig7_skip"]));
    let eager = stdout(&batchsym(&["trace", "--scenario", "fig7_skip", "--policy", "eager"]));
    assert!(!deferred.lines().any(|l| l.contains(",drop,")));
    let drops: Vec<_> = eager.lines().filter(|l| l.contains(",drop,")).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(&drops[..3], &["35", "37", "38"]);
}

#[test]
fn analytic_table() {
    let o = batchsym(&["analytic", "--alpha", "1.053", "--beta", "5.072", "--slo", "25", "--gpus", "8"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("model,mode,gpus,slo_ms,batch,throughput_rps\n"));
    assert!(text.contains(",no_coordination,8,25,7,"));
    assert!(text.contains(",staggered,8,25,16,"));
}

#[test]
fn partition_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("problem.csv");
    fs::write(&problem, "# subclusters = 2\nmodel,rate_rps,static_mem_mb,dynamic_mem_mb\na,10,5,1\nb,20,6,2\nc,10,3,1\n").unwrap();
    let out = dir.path().join("assignment.csv");
    let o = batchsym(&["partition", "--problem", problem.to_str().unwrap(), "--budget", "0.2", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["feasible"], true);
    assert_eq!(report["delta_r"], 0.0);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 4);
    // a and c share a sub-cluster, b is on its own.
    let side = |m: &str| text.lines().find(|l| l.starts_with(&format!("{m},"))).unwrap().split(',').nth(1).unwrap().to_string();
    assert_eq!(side("a"), side("c"));
    assert_ne!(side("a"), side("b"));

    fs::write(&problem, "# subclusters = 2\n# r_max = 5\nmodel,rate_rps,static_mem_mb,dynamic_mem_mb\na,10,5,1\n").unwrap();
    let o = batchsym(&["partition", "--problem", problem.to_str().unwrap(), "--budget", "0.1", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_writes_one_row_per_policy_and_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_batchsym"))
        .args(["sweep", "--scenario", "fig4b_timeout_sweep", "--seed", "2", "--dimension", "timeout", "--grid", "0.2,0.9", "--out", out.to_str().unwrap()])
        .env("BATCHSYM_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "dimension,value,policy,offered_rps,goodput_rps,bad_rate,idle_fraction,median_batch,relative");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].contains(",deferred,") && lines[1].ends_with(",1.000000"));
}
