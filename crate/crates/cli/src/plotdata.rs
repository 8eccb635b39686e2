//! Reshapes `train` outputs into one long table for plotting tools:
//! `seed,loss,series,x,group,value`.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{CliError, CliResult};
use crate::output::{resolve_output_dir, Artifacts, Manifest};

#[derive(Debug, Deserialize)]
struct AccuracyRow {
    seed: u64,
    loss: String,
    after_task: usize,
    eval_task: usize,
    accuracy: f64,
}

#[derive(Debug, Deserialize)]
struct PerClassRow {
    seed: u64,
    loss: String,
    task: usize,
    class_id: usize,
    precision: String,
    recall: String,
    q_value: f64,
}

#[derive(Debug, Deserialize)]
struct QRow {
    seed: u64,
    loss: String,
    step: u64,
    class_id: usize,
    q_value: f64,
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Option<Vec<T>>> {
    if !path.exists() {
        return Ok(None);
    }
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map(Some)
        .map_err(|e| CliError::config(path, e.to_string()))
}

/// `"undefined"` and other non-numbers map to `None`.
fn defined(v: &str) -> Option<f64> {
    v.parse().ok()
}

struct Long(String);

impl Long {
    fn push(&mut self, seed: u64, loss: &str, series: &str, x: impl std::fmt::Display, group: usize, value: f64) {
        self.0.push_str(&format!("{seed},{loss},{series},{x},{group},{value}\n"));
    }
}

pub fn plotdata(input: &Path, output_dir: Option<PathBuf>) -> CliResult<()> {
    let accuracy: Option<Vec<AccuracyRow>> = read_rows(&input.join("accuracy.csv"))?;
    let per_class: Option<Vec<PerClassRow>> = read_rows(&input.join("per_class.csv"))?;
    let q: Option<Vec<QRow>> = read_rows(&input.join("q_trajectory.csv"))?;
    if accuracy.is_none() && per_class.is_none() && q.is_none() {
        return Err(CliError::config(input, "no accuracy.csv, per_class.csv or q_trajectory.csv found"));
    }
    let dir = resolve_output_dir(output_dir, None);
    if dir.exists() && input.exists() && dir.canonicalize().ok() == input.canonicalize().ok() {
        return Err(CliError::Usage("output directory must differ from the input directory".into()));
    }

    let mut long = Long(String::from("seed,loss,series,x,group,value\n"));
    if let Some(rows) = &accuracy {
        // Accuracy on each task right after it was learned, for the drop series.
        let mut learned: BTreeMap<(u64, &str, usize), f64> = BTreeMap::new();
        for r in rows {
            if r.after_task == r.eval_task {
                learned.insert((r.seed, &r.loss, r.eval_task), r.accuracy);
            }
        }
        for r in rows {
            long.push(r.seed, &r.loss, "accuracy", r.after_task, r.eval_task, r.accuracy);
        }
        for r in rows {
            if let Some(first) = learned.get(&(r.seed, r.loss.as_str(), r.eval_task)) {
                long.push(r.seed, &r.loss, "forgetting", r.after_task, r.eval_task, first - r.accuracy);
            }
        }
    }
    if let Some(rows) = &per_class {
        for r in rows {
            let (p, rec) = (defined(&r.precision), defined(&r.recall));
            if let Some(p) = p {
                long.push(r.seed, &r.loss, "precision", r.task, r.class_id, p);
            }
            if let Some(rec) = rec {
                long.push(r.seed, &r.loss, "recall", r.task, r.class_id, rec);
            }
            if let (Some(p), Some(rec)) = (p, rec) {
                long.push(r.seed, &r.loss, "asymmetry", r.task, r.class_id, p - rec);
            }
            long.push(r.seed, &r.loss, "q_task_end", r.task, r.class_id, r.q_value);
        }
    }
    if let Some(rows) = &q {
        for r in rows {
            long.push(r.seed, &r.loss, "q", r.step, r.class_id, r.q_value);
        }
    }

    let mut files = Artifacts::new();
    files.add("long.csv", long.0.into_bytes());
    let seeds: Vec<u64> = {
        let mut s: Vec<u64> = accuracy.iter().flatten().map(|r| r.seed).collect();
        s.extend(per_class.iter().flatten().map(|r| r.seed));
        s.extend(q.iter().flatten().map(|r| r.seed));
        s.sort_unstable();
        s.dedup();
        s
    };
    let sources: Vec<&str> = [
        ("accuracy.csv", accuracy.is_some()),
        ("per_class.csv", per_class.is_some()),
        ("q_trajectory.csv", q.is_some()),
    ]
    .iter()
    .filter(|(_, present)| *present)
    .map(|(name, _)| *name)
    .collect();
    let manifest = Manifest::new("plotdata", seeds, serde_json::json!({ "sources": sources }));
    for p in files.commit(&dir, manifest)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
