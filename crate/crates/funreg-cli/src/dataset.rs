//! Dataset bundle persistence: one design-matrix CSV per task plus a
//! response CSV, the true-curve grid, and a JSON manifest.

use crate::csvio;
use funreg::basis::{KnotRule, SplineBasis};
use funreg::estimators::TaskDataset;
use funreg::simdiag::{self, DiagonalizedSystem};
use funreg::simgen::{Generated, Scenario};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub scenario: Scenario,
    pub k: usize,
    pub order: usize,
    pub d: usize,
    pub kernel_grid: usize,
    pub eta1: f64,
    pub eta2: f64,
    pub config_hash: String,
}

pub const FORMAT_VERSION: u32 = 1;

pub fn write_bundle(
    dir: &Path,
    manifest: &Manifest,
    generated: &Generated,
) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let mpath = dir.join("manifest.json");
    std::fs::write(
        &mpath,
        serde_json::to_string_pretty(manifest).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let meta = [
        ("config_hash", manifest.config_hash.clone()),
        ("seed", manifest.scenario.seed.to_string()),
    ];
    for (t, x) in generated.data.x.iter().enumerate() {
        csvio::write_matrix_csv(&dir.join(format!("task_{t:03}_x.csv")), x, &meta)
            .map_err(|e| e.to_string())?;
        let y = generated.data.y[t].clone();
        csvio::write_vector_csv(&dir.join(format!("task_{t:03}_y.csv")), &y, &meta)
            .map_err(|e| e.to_string())?;
    }
    csvio::write_matrix_csv(&dir.join("beta0.csv"), &generated.truth.beta0_grid, &meta)
        .map_err(|e| e.to_string())?;
    if let Some(aux) = &generated.truth.aux {
        csvio::write_matrix_csv(&dir.join("aux_points.csv"), &aux.points, &meta)
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

pub struct LoadedBundle {
    pub manifest: Manifest,
    pub system: DiagonalizedSystem,
    pub data: TaskDataset,
    pub beta0_grid: Array2<f64>,
    pub aux_points: Option<Array2<f64>>,
}

pub fn load_bundle(dir: &Path) -> Result<LoadedBundle, String> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))
        .map_err(|e| format!("manifest.json: {e}"))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(format!(
            "unsupported bundle format {}",
            manifest.format_version
        ));
    }
    // The system is a pure function of (kernel, K, order, d, grid): the
    // rebuild reproduces the transform the designs were generated with.
    let basis = SplineBasis::make_basis(manifest.k, manifest.order, KnotRule::Uniform)
        .map_err(|e| e.to_string())?;
    let system = simdiag::diagonalize(
        &basis,
        &manifest.scenario.kernel,
        manifest.d,
        manifest.kernel_grid,
    )
    .map_err(|e| e.to_string())?;
    let m = manifest.scenario.m_tasks;
    let mut xs = Vec::with_capacity(m);
    let mut ys = Vec::with_capacity(m);
    for t in 0..m {
        xs.push(csvio::read_matrix_csv(&dir.join(format!("task_{t:03}_x.csv")))?);
        ys.push(csvio::read_vector_csv(&dir.join(format!("task_{t:03}_y.csv")))?);
    }
    let data = TaskDataset::new(
        xs,
        ys,
        manifest.scenario.intercept,
        manifest.scenario.loss,
    )
    .map_err(|e| e.to_string())?;
    let beta0_grid = csvio::read_matrix_csv(&dir.join("beta0.csv"))?;
    let aux_path = dir.join("aux_points.csv");
    let aux_points = if aux_path.exists() {
        Some(csvio::read_matrix_csv(&aux_path)?)
    } else {
        None
    };
    Ok(LoadedBundle {
        manifest,
        system,
        data,
        beta0_grid,
        aux_points,
    })
}
