//! Dataset CSV (`x0[,x1],y`) plus a TOML sidecar that records how to
//! regenerate it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataRecipe, Dataset, Exclusion, NoiseProfile, Standardizer, Truth};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

const SIDECAR_FORMAT: &str = "uqbench-dataset/1";

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format: String,
    n: usize,
    dim: usize,
    noise: NoiseProfile,
    exclusion: Exclusion,
    #[serde(skip_serializing_if = "Option::is_none")]
    recipe: Option<DataRecipe>,
    #[serde(skip_serializing_if = "Option::is_none")]
    truth: Option<Truth>,
    standardizer: Standardizer,
}

/// `data.csv` → `data.meta.toml`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.toml")
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<PathBuf> {
    let d = dataset.dim();
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for i in 0..dataset.len() {
        let mut row: Vec<String> = dataset.inputs.row(i).iter().map(|v| v.to_string()).collect();
        row.push(dataset.targets[i].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;

    let sidecar = Sidecar {
        format: SIDECAR_FORMAT.into(),
        n: dataset.len(),
        dim: d,
        noise: dataset.noise,
        exclusion: dataset.exclusion,
        recipe: dataset.recipe,
        truth: dataset.truth,
        standardizer: dataset.standardizer.clone(),
    };
    let side = sidecar_path(path);
    let text = toml::to_string(&sidecar).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(&side, text)?;
    Ok(side)
}

/// Reads a dataset CSV, using the sidecar when present. Without a sidecar the
/// standardizer is refitted and truth is unknown.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let cols = headers.len();
    if cols < 2 || headers.get(cols - 1) != Some("y") {
        return Err(Error::Parse(format!(
            "{}: expected header x0[,x1],y",
            path.display()
        )));
    }
    let d = cols - 1;
    for (j, h) in headers.iter().take(d).enumerate() {
        if h != format!("x{j}") {
            return Err(Error::Parse(format!("{}: unexpected column {h:?}", path.display())));
        }
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("{}: row {}: bad number {s:?}", path.display(), line + 1)))
        };
        for j in 0..d {
            xs.push(parse(&record[j])?);
        }
        ys.push(parse(&record[d])?);
    }
    let inputs = DenseMatrix::from_vec(ys.len(), d, xs)?;

    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(Dataset::from_observations(inputs, ys, NoiseProfile::constant(0.0)));
    }
    let text = fs::read_to_string(&side)?;
    let meta: Sidecar = toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", side.display())))?;
    if meta.format != SIDECAR_FORMAT {
        return Err(Error::Parse(format!("{}: unknown format {:?}", side.display(), meta.format)));
    }
    if meta.n != ys.len() || meta.dim != d {
        return Err(Error::Parse(format!(
            "{}: sidecar describes {}x{} but csv holds {}x{d}",
            side.display(),
            meta.n,
            meta.dim,
            ys.len()
        )));
    }
    Ok(Dataset {
        inputs,
        targets: ys,
        noise: meta.noise,
        exclusion: meta.exclusion,
        truth: meta.truth,
        standardizer: meta.standardizer,
        recipe: meta.recipe,
    })
}
