use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tal(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tal"))
        .args(args)
        .current_dir(dir)
        .env_remove("TAL_OUTPUT_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn error_record(o: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&o.stderr);
    serde_json::from_str(stderr.lines().last().unwrap()).unwrap()
}

const SMALL_SPEC: &str = "seeds = [0, 1]\n[dataset]\nclasses = 4\ntasks = 2\nper_class = 30\ntest_per_class = 20\n[schedule]\nepochs = 2\n";

#[test]
fn calibrate_prints_key_values() {
    let dir = tempfile::tempdir().unwrap();
    let o = tal(&["calibrate", "--classes", "10", "--exponent", "1"], dir.path());
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("x*=0.05263157894736842\n"), "{out}");
    assert!(out.contains("alpha=19\n"));
    assert!(out.contains("method=closed-form-linear\n"));
    let o = tal(&["calibrate", "--classes", "100", "--exponent", "5"], dir.path());
    assert!(stdout(&o).contains("method=newton-bisection"));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn calibrate_domain_error_is_a_library_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = tal(&["calibrate", "--classes", "1"], dir.path());
    assert_eq!(o.status.code(), Some(4));
    let rec = error_record(&o);
    assert_eq!(rec["error"], "library");
    assert_eq!(rec["code"], 4);
}

#[test]
fn usage_errors_exit_two_with_record() {
    let dir = tempfile::tempdir().unwrap();
    let o = tal(&["no-such-command"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_record(&o)["error"], "usage");
}

#[test]
fn help_documents_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = tal(&["--help"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    for line in ["0  success", "3  configuration error", "6  verification failed", "TAL_OUTPUT_DIR"] {
        assert!(text.contains(line), "missing {line:?}");
    }
}

#[test]
fn missing_spec_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = tal(&["train", "--spec", "missing.cfg", "--output-dir", "out"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(!dir.path().join("out").exists());
    assert!(!dir.path().join("tal-output").exists());
}

#[test]
fn invalid_spec_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in [
        ("typo.toml", "[loss]\nlamda = 0.9\n"),
        ("domain.toml", "[loss]\nlambda = 0.3\n"),
        ("split.toml", "[dataset]\nclasses = 7\ntasks = 2\n"),
        ("seeds.toml", "seeds = []\n"),
    ] {
        fs::write(dir.path().join(name), text).unwrap();
        let o = tal(&["train", "--spec", name, "--output-dir", "out"], dir.path());
        assert_eq!(o.status.code(), Some(3), "{name}");
        assert_eq!(error_record(&o)["error"], "config");
        assert!(!dir.path().join("out").exists(), "{name}");
    }
}

#[test]
fn train_writes_tables_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.toml"), SMALL_SPEC).unwrap();
    let o = tal(&["train", "--spec", "s.toml", "--output-dir", "out"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    let accuracy = fs::read_to_string(out.join("accuracy.csv")).unwrap();
    assert_eq!(accuracy.matches("seed,loss").count(), 1);
    // Two seeds, two tasks: 1 + 2 accuracy cells per seed.
    assert_eq!(accuracy.lines().count(), 1 + 2 * 3);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    let events = fs::read_to_string(out.join("events.jsonl")).unwrap();
    for line in events.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["value"].as_f64().unwrap() >= 0.0);
    }

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seeds"], serde_json::json!([0, 1]));
    assert_eq!(manifest["spec_sha256"].as_str().unwrap().len(), 64);
    // Defaults are echoed even though the spec omitted them.
    assert_eq!(manifest["parameters"]["loss"]["lambda"], 0.995);
    assert_eq!(manifest["parameters"]["schedule"]["batch_size"], 32);
    assert!(manifest.to_string().find("time").is_none());
    for file in ["accuracy.csv", "per_class.csv", "q_trajectory.csv", "events.jsonl", "summary.csv"] {
        assert!(manifest["files"][file].is_string(), "{file}");
    }
}

#[test]
fn resolved_spec_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.toml"), SMALL_SPEC).unwrap();
    assert!(tal(&["train", "--spec", "s.toml", "--output-dir", "a"], dir.path()).status.success());
    let o = tal(&["train", "--spec", "a/spec.resolved.toml", "--output-dir", "b"], dir.path());
    assert!(o.status.success());
    for file in ["accuracy.csv", "per_class.csv", "q_trajectory.csv", "events.jsonl"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(file)).unwrap(),
            fs::read(dir.path().join("b").join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn output_dir_precedence() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.toml"), format!("output_dir = \"from_spec\"\n{SMALL_SPEC}")).unwrap();
    let env_run = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_tal"))
            .args(args)
            .current_dir(dir.path())
            .env("TAL_OUTPUT_DIR", "from_env")
            .output()
            .unwrap()
    };
    assert!(env_run(&["train", "--spec", "s.toml"]).status.success());
    assert!(dir.path().join("from_spec/summary.csv").exists());
    assert!(env_run(&["verify-theorem1", "--pairs", "5"]).status.success());
    assert!(dir.path().join("from_env/theorem1.csv").exists());
    assert!(env_run(&["verify-theorem1", "--pairs", "5", "--output-dir", "flag"]).status.success());
    assert!(dir.path().join("flag/theorem1.csv").exists());
}

#[test]
fn simulate_stream_counts_match_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["simulate-stream", "--classes", "6", "--tasks", "3", "--per-class", "50", "--replay", "5", "--output-dir", "s"];
    assert!(tal(&args, dir.path()).status.success());
    let curves = fs::read_to_string(dir.path().join("s/s_curves.csv")).unwrap();
    let steps = 6 * 50 + 5 * (2 + 4);
    let last: Vec<usize> = curves
        .lines()
        .skip(1)
        .filter(|l| l.starts_with(&format!("{},", steps - 1)))
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    // Classes of task t are replayed in each of the later tasks.
    assert_eq!(last, vec![60, 60, 55, 55, 50, 50]);
    let q = fs::read_to_string(dir.path().join("s/q_trajectory.csv")).unwrap();
    assert_eq!(q.lines().count(), 1 + (steps + 1) * 6);
}

#[test]
fn ordering_check_passes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = tal(&["verify-theorem1", "--pairs", "40", "--lambdas", "0.9,0.99,0.999", "--output-dir", "t"], dir.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("checks=120 violations=0"));
    let rows = fs::read_to_string(dir.path().join("t/theorem1.csv")).unwrap();
    assert_eq!(rows.lines().count(), 121);
    assert!(rows.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn ablate_covers_grid_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let spec = format!("{SMALL_SPEC}[ablation]\nlambdas = [0.99]\nexponents = [0.5, 2.0]\n");
    fs::write(dir.path().join("a.toml"), spec).unwrap();
    for out in ["x", "y"] {
        assert!(tal(&["ablate", "--spec", "a.toml", "--output-dir", out], dir.path()).status.success());
    }
    let x = fs::read_to_string(dir.path().join("x/ablation.csv")).unwrap();
    assert_eq!(x, fs::read_to_string(dir.path().join("y/ablation.csv")).unwrap());
    assert_eq!(x.lines().count(), 1 + 1 + 2);
    assert!(x.contains("tal,0.99,0.5,true,"));
    assert!(x.lines().nth(1).unwrap().starts_with("ce,-,-,false,"));
}

#[test]
fn plotdata_reshapes_and_refuses_in_place() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.toml"), SMALL_SPEC).unwrap();
    assert!(tal(&["train", "--spec", "s.toml", "--output-dir", "run"], dir.path()).status.success());
    let before = fs::read(dir.path().join("run/manifest.json")).unwrap();
    assert!(tal(&["plotdata", "--input", "run", "--output-dir", "plots"], dir.path()).status.success());
    let long = fs::read_to_string(dir.path().join("plots/long.csv")).unwrap();
    assert!(long.starts_with("seed,loss,series,x,group,value\n"));
    for series in ["accuracy", "forgetting", "precision", "recall", "asymmetry", "q"] {
        assert!(long.contains(&format!(",{series},")), "{series}");
    }
    let o = tal(&["plotdata", "--input", "run", "--output-dir", "run"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(fs::read(dir.path().join("run/manifest.json")).unwrap(), before);
    let o = tal(&["plotdata", "--input", "nowhere", "--output-dir", "p2"], dir.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bench_loss_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["bench-loss", "--batches", "4,8", "--classes", "3,6", "--work", "2000", "--trials", "2", "--output-dir", "b"];
    let o = tal(&args, dir.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("slope_ns_per_entry"));
    let csv = fs::read_to_string(dir.path().join("b/bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let o = tal(&["bench-loss", "--classes", "1", "--output-dir", "b2"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
