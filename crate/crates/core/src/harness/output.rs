use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::run::{ExperimentResults, ResultRow, TraceRow};
use crate::error::Result;

/// Paths written by [`write_results`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPaths {
    pub rows: PathBuf,
    pub traces: Option<PathBuf>,
    pub sidecar: PathBuf,
}

impl OutputPaths {
    /// `run.csv` gives `run.trace.csv` and `run.json`.
    pub fn for_csv(path: &Path) -> Self {
        Self {
            rows: path.to_path_buf(),
            traces: Some(path.with_extension("trace.csv")),
            sidecar: path.with_extension("json"),
        }
    }
}

pub fn write_rows<W: std::io::Write>(writer: W, rows: &[ResultRow]) -> Result<()> {
    write_csv(writer, rows)
}

pub fn write_traces<W: std::io::Write>(writer: W, rows: &[TraceRow]) -> Result<()> {
    write_csv(writer, rows)
}

fn write_csv<W: std::io::Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Writes the result CSV, the trace CSV when traces exist, and a JSON sidecar
/// holding the resolved config and its hash.
pub fn write_results(path: &Path, config: &ExperimentConfig, results: &ExperimentResults) -> Result<OutputPaths> {
    let mut paths = OutputPaths::for_csv(path);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_rows(std::fs::File::create(&paths.rows)?, &results.rows)?;
    match (&paths.traces, results.traces.is_empty()) {
        (Some(p), false) => write_traces(std::fs::File::create(p)?, &results.traces)?,
        _ => paths.traces = None,
    }
    let sidecar = serde_json::json!({
        "config": config,
        "config_hash": config.hash(),
        "rows": results.rows.len(),
        "failed": results.failed(),
    });
    std::fs::write(&paths.sidecar, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ExperimentKind;

    #[test]
    fn csv_roundtrip() {
        let cfg = ExperimentConfig {
            kind: ExperimentKind::BoundsSweep,
            ..ExperimentConfig::default()
        };
        let res = crate::harness::run_experiment(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_results(&dir.path().join("out/b.csv"), &cfg, &res).unwrap();
        assert!(paths.traces.is_none());
        assert_eq!(read_rows(&paths.rows).unwrap(), res.rows);
        let side: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&paths.sidecar).unwrap()).unwrap();
        assert_eq!(side["config_hash"], cfg.hash());
        let back: ExperimentConfig = serde_json::from_value(side["config"].clone()).unwrap();
        assert_eq!(back, cfg);
    }
}
