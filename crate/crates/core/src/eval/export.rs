use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AoiDistribution, GridMap};
use crate::error::{Error, Result};

/// One line of `pareto.csv`. `level` is the static bit level or the objective
/// letter of a dynamic scheme; `beta` is NaN for static schemes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub scheme: String,
    pub beta: f64,
    pub level: String,
    pub ell: f64,
    pub ep_len: f64,
    pub psnr: f64,
    pub state_mse: f64,
    pub rmsd_psi: f64,
    pub rmsd_x: f64,
    /// Bootstrap 95% interval of the mean episode length.
    pub ep_len_lo: f64,
    pub ep_len_hi: f64,
}

/// One line of `lenhist.csv`: how often a scheme sent messages of `ell` bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelHistRow {
    pub scheme: String,
    pub beta: f64,
    pub level: String,
    pub ell: f64,
    pub freq: f64,
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pareto_csv(path: &Path, rows: &[ParetoRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_pareto_csv(path: &Path) -> Result<Vec<ParetoRow>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

pub fn write_lenhist_csv(path: &Path, rows: &[LevelHistRow]) -> Result<()> {
    write_rows(path, rows)
}

/// `x_bin, y_bin, value, count`; absent cells leave `value` empty.
pub fn write_heatmap_csv(path: &Path, map: &GridMap) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x_bin", "y_bin", "value", "count"])?;
    for i in 0..map.x.bins {
        for j in 0..map.y.bins {
            let value = map.get(i, j).map(|v| v.to_string()).unwrap_or_default();
            w.write_record([i.to_string(), j.to_string(), value, map.count(i, j).to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `aoi, entropy_bin, ell, prob`; empty columns are omitted.
pub fn write_aoi_csv(path: &Path, dist: &AoiDistribution, ell_of_level: &[f64]) -> Result<()> {
    if ell_of_level.len() != dist.max_level + 1 {
        return Err(Error::Dimension {
            what: "level lengths",
            expected: dist.max_level + 1,
            got: ell_of_level.len(),
        });
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["aoi", "entropy_bin", "ell", "prob"])?;
    for aoi in 0..dist.aoi_values {
        for b in 0..dist.entropy_bins {
            if let Some(col) = dist.column(aoi, b) {
                for (l, p) in col.iter().enumerate() {
                    w.write_record([aoi.to_string(), b.to_string(), ell_of_level[l].to_string(), p.to_string()])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}
