//! CSV outputs and the JSON run summary.
//!
//! File naming: `probe_<task>_<space>.csv`, `retrieval_<space>.csv`,
//! `sweep_<kind>.csv`. The report walks a run directory (and its direct
//! subdirectories, one per model) and collates every such file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::probe::{ProbeResult, Task};
use super::retrieval::RetrievalScores;
use super::sweep::CosineSweepResult;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub task: String,
    pub space: String,
    pub metric: String,
    pub value: f64,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub space: String,
    pub k: usize,
    pub metric: String,
    pub value: f64,
    pub n_queries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub space: String,
    pub kind: String,
    pub parameter: f64,
    pub mean_dc: f64,
    pub n_tracks: usize,
}

/// File-name safe form of a space name (`V^++` -> `Vpp`, `Z^p` -> `Zp`).
pub fn space_slug(space: &str) -> String {
    space.replace("++", "pp").chars().filter(|c| c.is_ascii_alphanumeric()).collect()
}

pub fn probe_rows(task: Task, r: &ProbeResult) -> Vec<ProbeRow> {
    r.metrics
        .iter()
        .map(|(m, v)| ProbeRow {
            task: task.name().into(),
            space: r.space.clone(),
            metric: m.clone(),
            value: *v,
            n_test: r.n_test_tracks,
        })
        .collect()
}

pub fn retrieval_rows(scores: &[RetrievalScores]) -> Vec<RetrievalRow> {
    scores
        .iter()
        .flat_map(|s| {
            [("tag_precision", s.tag_precision), ("key_score", s.key_score), ("tempo_acc1", s.tempo_acc1)].map(|(m, v)| RetrievalRow {
                space: s.space.clone(),
                k: s.k,
                metric: m.into(),
                value: v,
                n_queries: s.n_queries,
            })
        })
        .collect()
}

pub fn sweep_rows(r: &CosineSweepResult) -> Vec<SweepRow> {
    r.spaces
        .iter()
        .enumerate()
        .flat_map(|(s, space)| {
            r.grid.iter().zip(&r.curves[s]).map(move |(&p, &d)| SweepRow {
                space: space.clone(),
                kind: r.kind.name().into(),
                parameter: p,
                mean_dc: d,
                n_tracks: r.n_tracks,
            })
        })
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null)
}

fn insert_path(root: &mut Map<String, Value>, keys: &[&str], value: Value) {
    let mut node = root;
    for k in &keys[..keys.len() - 1] {
        node = node
            .entry(k.to_string())
            .or_insert_with(|| Value::Object(Map::new()))
            .as_object_mut()
            .unwrap();
    }
    node.insert(keys[keys.len() - 1].to_string(), value);
}

fn collate_dir(dir: &Path) -> Result<Option<Value>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    let mut probing = Map::new();
    let mut retrieval = Map::new();
    let mut sweeps = Map::new();
    let mut sources = Vec::new();
    for f in &files {
        let name = f.file_name().unwrap().to_string_lossy().to_string();
        if name.starts_with("probe_") {
            for r in read_csv::<ProbeRow>(f)? {
                insert_path(&mut probing, &[&r.task, &r.space, &r.metric], num(r.value));
            }
        } else if name.starts_with("retrieval_") {
            for r in read_csv::<RetrievalRow>(f)? {
                insert_path(&mut retrieval, &[&r.space, &r.metric, &r.k.to_string()], num(r.value));
            }
        } else if name.starts_with("sweep_") {
            let mut curves: BTreeMap<(String, String), Vec<Value>> = BTreeMap::new();
            for r in read_csv::<SweepRow>(f)? {
                curves
                    .entry((r.kind.clone(), r.space.clone()))
                    .or_default()
                    .push(json!({"parameter": r.parameter, "mean_dc": num(r.mean_dc), "n_tracks": r.n_tracks}));
            }
            for ((kind, space), pts) in curves {
                insert_path(&mut sweeps, &[&kind, &space], Value::Array(pts));
            }
        } else {
            continue;
        }
        sources.push(name);
    }
    if sources.is_empty() {
        return Ok(None);
    }
    Ok(Some(json!({
        "probing": probing,
        "retrieval": retrieval,
        "sweeps": sweeps,
        "sources": sources,
    })))
}

/// Summary of every result CSV under `run_dir`, keyed by model directory.
pub fn collate(run_dir: &Path) -> Result<Value> {
    if !run_dir.is_dir() {
        return Err(Error::MissingFile(run_dir.to_path_buf()));
    }
    let mut runs = Map::new();
    if let Some(v) = collate_dir(run_dir)? {
        runs.insert(".".into(), v);
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(run_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for d in subdirs {
        if let Some(v) = collate_dir(&d)? {
            runs.insert(d.file_name().unwrap().to_string_lossy().to_string(), v);
        }
    }
    if runs.is_empty() {
        return Err(Error::MissingFile(run_dir.join("*.csv")));
    }
    Ok(json!({ "runs": runs }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::sweep::SweepKind;

    #[test]
    fn csv_roundtrip_and_collation() {
        let dir = tempfile::tempdir().unwrap();
        let model = dir.path().join("loev");
        std::fs::create_dir(&model).unwrap();
        let probe = ProbeResult {
            space: "Z^p".into(),
            metrics: [("accuracy".to_string(), 0.75)].into_iter().collect(),
            n_train_examples: 10,
            n_test_tracks: 4,
            best_epoch: 3,
        };
        let rows = probe_rows(Task::PitchClass, &probe);
        let path = model.join(format!("probe_pitch_class_{}.csv", space_slug("Z^p")));
        write_csv(&path, &rows).unwrap();
        assert_eq!(read_csv::<ProbeRow>(&path).unwrap(), rows);
        let sweep = CosineSweepResult {
            kind: SweepKind::PitchShift,
            grid: vec![-1.0, 0.0, 1.0],
            spaces: vec!["Z^i".into()],
            curves: vec![vec![0.1, 0.0, 0.2]],
            n_tracks: 2,
        };
        write_csv(&model.join("sweep_pitch_shift.csv"), &sweep_rows(&sweep)).unwrap();
        let text = std::fs::read_to_string(model.join("sweep_pitch_shift.csv")).unwrap();
        assert!(text.starts_with("space,kind,parameter,mean_dc,n_tracks\n"));
        let report = collate(dir.path()).unwrap();
        assert_eq!(report["runs"]["loev"]["probing"]["pitch_class"]["Z^p"]["accuracy"], 0.75);
        assert_eq!(report["runs"]["loev"]["sweeps"]["pitch_shift"]["Z^i"][2]["mean_dc"], 0.2);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(collate(dir.path()), Err(Error::MissingFile(_))));
        assert_eq!(space_slug("V^++"), "Vpp");
    }
}
