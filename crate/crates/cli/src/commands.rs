use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;
use tal_core::bench::bench_losses;
use tal_core::calibration::{solve_calibration_numeric, solve_calibration_relaxed};
use tal_core::loss::label_histogram;
use tal_core::metrics::MetricsReport;
use tal_core::sim::ablate;
use tal_core::stream::{random_dominance_pair, verify_imbalance_pair};
use tal_core::{
    generate_stream, update_batched, Exponent, MemoryKernel, QState, QTrajectory, TaskSchedule,
};

use crate::error::{CliError, CliResult};
use crate::output::{resolve_output_dir, Artifacts, Manifest};
use crate::spec::LoadedSpec;

fn buffer(write: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    write(&mut buf).expect("writing to memory");
    buf
}

/// Concatenates per-seed tables, keeping only the first header.
fn concat_tables(reports: &[MetricsReport], header: bool, write: fn(&MetricsReport, &mut Vec<u8>) -> io::Result<()>) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        let buf = buffer(|b| write(r, b));
        let skip = if header && i > 0 { buf.iter().position(|&c| c == b'\n').map_or(buf.len(), |p| p + 1) } else { 0 };
        out.extend_from_slice(&buf[skip..]);
    }
    out
}

fn report_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

pub fn calibrate(classes: usize, exponent: f64, numeric: bool) -> CliResult<()> {
    let c = if numeric {
        solve_calibration_numeric(classes, exponent)?
    } else {
        solve_calibration_relaxed(classes, exponent)?
    };
    let iterations = match c.method {
        tal_core::SolveMethod::Newton { iterations } => iterations,
        _ => 0,
    };
    println!("classes={}", c.class_count);
    println!("exponent={}", c.exponent);
    println!("x*={}", c.x_star);
    println!("alpha={}", c.alpha);
    println!("residual={:e}", c.residual);
    println!("method={}", c.method.label());
    println!("iterations={iterations}");
    Ok(())
}

pub struct StreamArgs {
    pub classes: usize,
    pub tasks: usize,
    pub per_class: usize,
    pub replay: usize,
    pub seed: u64,
    pub lambda: f64,
    pub exponent: f64,
    pub batch_size: usize,
}

pub fn simulate_stream(args: &StreamArgs, output_dir: Option<PathBuf>) -> CliResult<()> {
    let schedule = TaskSchedule::uniform(args.classes, args.tasks, args.per_class, args.replay, args.seed)?;
    let kernel = MemoryKernel::new(args.lambda)?;
    kernel.ensure_training_domain()?;
    let exponent = Exponent::new(args.exponent)?;
    if args.batch_size == 0 {
        return Err(CliError::Usage("batch size must be positive".into()));
    }
    let trace = generate_stream(&schedule, args.seed)?;

    let mut q = QState::zeros(trace.class_count());
    let mut trajectory = QTrajectory::new();
    trajectory.record(&q);
    for batch in trace.batches(args.batch_size) {
        let counts = label_histogram(batch, trace.class_count())?;
        q = update_batched(&q, &kernel, exponent, &counts, batch.len())?;
        trajectory.record(&q);
    }

    let mut files = Artifacts::new();
    files.add("stream.csv", buffer(|b| trace.write_labels_csv(b)));
    files.add("s_curves.csv", buffer(|b| trace.write_s_curves_csv(b)));
    files.add("q_trajectory.csv", buffer(|b| trajectory.write_csv(b)));
    let manifest = Manifest::new(
        "simulate-stream",
        vec![args.seed],
        json!({
            "classes": args.classes,
            "tasks": args.tasks,
            "per_class": args.per_class,
            "replay_per_class": args.replay,
            "lambda": args.lambda,
            "exponent": args.exponent,
            "batch_size": args.batch_size,
        }),
    );
    let dir = resolve_output_dir(output_dir, None);
    report_paths(&files.commit(&dir, manifest)?);
    println!("steps={} final_q={:?}", trace.len(), q.values());
    Ok(())
}

pub struct TheoremArgs {
    pub pairs: usize,
    pub length: usize,
    pub lambdas: Vec<f64>,
    pub seed: u64,
}

pub fn verify_theorem1(args: &TheoremArgs, output_dir: Option<PathBuf>) -> CliResult<()> {
    if args.length < 2 || args.pairs == 0 || args.lambdas.is_empty() {
        return Err(CliError::Usage("need at least one pair, one λ and length ≥ 2".into()));
    }
    let kernels = args.lambdas.iter().map(|&l| MemoryKernel::new(l)).collect::<Result<Vec<_>, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut table = String::from("pair,lambda,positives,strict_dominance,q_a,q_b,phi_a,phi_b,identity_error,consistent\n");
    let (mut violations, mut max_identity) = (0usize, 0.0f64);
    for pair in 0..args.pairs {
        let positives = rng.random_range(1..args.length);
        let (a, b) = random_dominance_pair(&mut rng, args.length, positives)?;
        for kernel in &kernels {
            let v = verify_imbalance_pair(kernel, &a, &b)?;
            let ok = v.dominance_held && v.consistent(true) && v.identity_error < 1e-10;
            violations += usize::from(!ok);
            max_identity = max_identity.max(v.identity_error);
            table.push_str(&format!(
                "{pair},{},{positives},{},{},{},{},{},{},{ok}\n",
                kernel.lambda(),
                v.strict_dominance,
                v.q_a,
                v.q_b,
                v.phi_a,
                v.phi_b,
                v.identity_error
            ));
        }
    }
    let mut files = Artifacts::new();
    files.add("theorem1.csv", table.into_bytes());
    let manifest = Manifest::new(
        "verify-theorem1",
        vec![args.seed],
        json!({ "pairs": args.pairs, "length": args.length, "lambdas": args.lambdas }),
    );
    let dir = resolve_output_dir(output_dir, None);
    report_paths(&files.commit(&dir, manifest)?);
    let checks = args.pairs * kernels.len();
    println!("checks={checks} violations={violations} max_identity_error={max_identity:e}");
    if violations > 0 {
        return Err(CliError::Verification(format!("{violations} of {checks} checks failed")));
    }
    Ok(())
}

/// The resolved spec without `output_dir`, so a rerun from it writes wherever it is pointed.
fn resolved_spec(loaded: &LoadedSpec) -> Vec<u8> {
    let mut spec = loaded.spec.clone();
    spec.output_dir = None;
    spec.resolved_toml().into_bytes()
}

fn spec_manifest(command: &str, loaded: &LoadedSpec) -> Manifest {
    let spec = &loaded.spec;
    let mut parameters = serde_json::to_value(spec).expect("spec serializes");
    parameters.as_object_mut().expect("spec is a table").remove("output_dir");
    let mut m = Manifest::new(command, spec.seeds.clone(), parameters);
    m.spec_sha256 = Some(loaded.sha256.clone());
    m
}

pub fn train(spec_path: &Path, output_dir: Option<PathBuf>) -> CliResult<()> {
    let loaded = LoadedSpec::load(spec_path)?;
    let exp = loaded.spec.experiment();
    let reports = loaded
        .spec
        .seeds
        .par_iter()
        .map(|&seed| exp.run(seed))
        .collect::<Result<Vec<_>, _>>()?;

    let mut summary = String::from("seed,loss,a_mean,a_last,age_asymmetry_rho,q_recall_rho\n");
    let rho = |r: tal_core::Result<f64>| r.map_or_else(|_| "undefined".to_string(), |v| v.to_string());
    for r in &reports {
        summary.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.seed,
            r.loss,
            r.a_mean(),
            r.a_last(),
            rho(r.final_asymmetry().map(|a| a.age_correlation)),
            rho(r.q_recall_correlation())
        ));
    }
    let mut files = Artifacts::new();
    files.add("summary.csv", summary.into_bytes());
    files.add("spec.resolved.toml", resolved_spec(&loaded));
    files.add("accuracy.csv", concat_tables(&reports, true, |r, b| r.write_accuracy_csv(b)));
    files.add("per_class.csv", concat_tables(&reports, true, |r, b| r.write_per_class_csv(b)));
    files.add("q_trajectory.csv", concat_tables(&reports, true, |r, b| r.write_q_csv(b)));
    files.add("events.jsonl", concat_tables(&reports, false, |r, b| r.write_events_jsonl(b)));

    let dir = resolve_output_dir(output_dir, loaded.output_dir());
    report_paths(&files.commit(&dir, spec_manifest("train", &loaded))?);
    let n = reports.len() as f64;
    println!(
        "loss={} seeds={} mean_a_mean={:.4} mean_a_last={:.4}",
        exp.train.loss.kind.label(),
        reports.len(),
        reports.iter().map(|r| r.a_mean()).sum::<f64>() / n,
        reports.iter().map(|r| r.a_last()).sum::<f64>() / n
    );
    Ok(())
}

pub fn run_ablation(spec_path: &Path, output_dir: Option<PathBuf>) -> CliResult<()> {
    let loaded = LoadedSpec::load(spec_path)?;
    let report = ablate(&loaded.spec.experiment(), &loaded.spec.grid(), &loaded.spec.seeds)?;
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
    let mut per_seed = String::from("loss,lambda,r,seed,a_mean,a_last\n");
    for c in &report.cells {
        for (seed, m, l) in &c.per_seed {
            per_seed.push_str(&format!("{},{},{},{seed},{m},{l}\n", c.kind.label(), opt(c.lambda), opt(c.r)));
        }
    }
    let mut files = Artifacts::new();
    files.add("ablation.csv", buffer(|b| report.write_csv(b)));
    files.add("ablation_per_seed.csv", per_seed.into_bytes());
    files.add("spec.resolved.toml", resolved_spec(&loaded));
    let dir = resolve_output_dir(output_dir, loaded.output_dir());
    report_paths(&files.commit(&dir, spec_manifest("ablate", &loaded))?);
    if let Some(base) = report.baseline() {
        println!("baseline ce a_last={:.4}", base.a_last.0);
    }
    let best = report
        .cells
        .iter()
        .filter(|c| c.lambda.is_some())
        .max_by(|a, b| a.a_last.0.total_cmp(&b.a_last.0));
    if let Some(b) = best {
        println!("best tal lambda={} r={} a_last={:.4}", opt(b.lambda), opt(b.r), b.a_last.0);
    }
    Ok(())
}

pub struct BenchArgs {
    pub batches: Vec<usize>,
    pub classes: Vec<usize>,
    pub work: usize,
    pub trials: usize,
    pub seed: u64,
}

pub fn bench_loss(args: &BenchArgs, output_dir: Option<PathBuf>) -> CliResult<()> {
    if args.batches.is_empty() || args.classes.is_empty() || args.trials == 0 {
        return Err(CliError::Usage("batch sizes, class counts and trials must be non-empty".into()));
    }
    if args.batches.contains(&0) || args.classes.iter().any(|&c| c < 2) {
        return Err(CliError::Usage("batch sizes must be positive and class counts at least 2".into()));
    }
    let table = bench_losses(&args.batches, &args.classes, args.work, args.trials, args.seed)?;
    let (ce, tal) = table.slopes();
    let mut files = Artifacts::new();
    files.add("bench.csv", buffer(|b| table.write_csv(b)));
    let manifest = Manifest::new(
        "bench-loss",
        vec![args.seed],
        json!({ "batches": args.batches, "classes": args.classes, "work": args.work, "trials": args.trials }),
    );
    let dir = resolve_output_dir(output_dir, None);
    report_paths(&files.commit(&dir, manifest)?);
    let mut out = io::stdout().lock();
    table.write_csv(&mut out).map_err(|e| CliError::io("<stdout>", e))?;
    writeln!(out, "slope_ns_per_entry ce={ce:.4} tal={tal:.4} ratio={:.3}", tal / ce)
        .map_err(|e| CliError::io("<stdout>", e))?;
    Ok(())
}
