use serde_json::Value;

use super::config::{ExperimentConfig, GridAxis};
use super::run::{run_cell_set, ExperimentResults};
use crate::error::{Error, Result};

/// Every combination of axis values, each as `(path, value)` pairs.
pub fn grid_cells(axes: &[GridAxis]) -> Vec<Vec<(String, Value)>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut cell = prefix.clone();
                    cell.push((axis.path.clone(), v.clone()));
                    cell
                })
            })
            .collect()
    })
}

pub fn cell_label(cell: &[(String, Value)]) -> String {
    cell.iter().map(|(p, v)| format!("{p}={v}")).collect::<Vec<_>>().join(";")
}

/// Runs the experiment once per grid cell with that cell's overrides applied.
/// A cell whose overrides make the config invalid is an error; training
/// failures inside a cell become failed rows.
pub fn sweep(base: &ExperimentConfig, axes: &[GridAxis]) -> Result<ExperimentResults> {
    if axes.is_empty() || axes.iter().any(|a| a.values.is_empty()) {
        return Err(Error::Config("sweep grid must be non-empty".into()));
    }
    let mut out = ExperimentResults::default();
    for cell in grid_cells(axes) {
        let mut cfg = base.clone();
        cfg.grid.clear();
        for (path, value) in &cell {
            cfg = cfg.with_override(path, value.clone())?;
        }
        out.extend(run_cell_set(&cfg, &cell_label(&cell))?);
    }
    Ok(out)
}
