//! Observed-data container shared by the estimators.

use std::path::Path;

use crate::dgp::SimulatedData;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Observations for one estimation problem: outcome, outcome-equation design
/// (intercept first by convention), the raw endogenous regressor, and the
/// instrument column used by the first stage.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub x: Matrix,
    pub x1: Vec<f64>,
    pub z: Vec<f64>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d_x(&self) -> usize {
        self.x.ncols()
    }

    /// Design `[1, x1, x2]` with the single instrument column `z`.
    pub fn from_simulated(sim: &SimulatedData) -> Result<Self> {
        let n = sim.len();
        let mut x = Matrix::zeros(n, 3);
        for i in 0..n {
            x.set(i, 0, 1.0);
            x.set(i, 1, sim.x1[i]);
            x.set(i, 2, sim.x2[i]);
        }
        Ok(Self { y: sim.y.clone(), x, x1: sim.x1.clone(), z: sim.z.clone() })
    }

    /// Exogenous column (the third design column when present).
    pub fn x2(&self) -> Option<Vec<f64>> {
        if self.x.ncols() >= 3 {
            Some(self.x.col(2))
        } else {
            None
        }
    }

    /// Row resampling with replacement (pairs bootstrap).
    pub fn resample(&self, idx: &[usize]) -> Self {
        Self {
            y: idx.iter().map(|&i| self.y[i]).collect(),
            x: self.x.select_rows(idx),
            x1: idx.iter().map(|&i| self.x1[i]).collect(),
            z: idx.iter().map(|&i| self.z[i]).collect(),
        }
    }

    /// Read a CSV with header `y,x1,x2,z` (extra columns ignored).
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        let col = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Config(format!("CSV missing column '{name}'")))
        };
        let (cy, cx1, cx2, cz) = (col("y")?, col("x1")?, col("x2")?, col("z")?);
        let mut y = Vec::new();
        let mut x1 = Vec::new();
        let mut x2 = Vec::new();
        let mut z = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |idx: usize| -> Result<f64> {
                rec.get(idx)
                    .ok_or_else(|| Error::Config("short CSV record".into()))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad CSV number: {e}")))
            };
            y.push(parse(cy)?);
            x1.push(parse(cx1)?);
            x2.push(parse(cx2)?);
            z.push(parse(cz)?);
        }
        if y.is_empty() {
            return Err(Error::Config("empty CSV".into()));
        }
        let n = y.len();
        let mut x = Matrix::zeros(n, 3);
        for i in 0..n {
            x.set(i, 0, 1.0);
            x.set(i, 1, x1[i]);
            x.set(i, 2, x2[i]);
        }
        Ok(Self { y, x, x1, z })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{simulate, DGPConfig, ErrorLaw};

    #[test]
    fn csv_round_trip() {
        let cfg = DGPConfig::new(50, 0.5, 0.3, ErrorLaw::StdNormal, 4).unwrap();
        let sim = simulate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sim.csv");
        sim.to_csv(&path, true).unwrap();
        let ds = Dataset::from_csv(&path).unwrap();
        assert_eq!(ds.n(), 50);
        for i in 0..50 {
            assert!((ds.y[i] - sim.y[i]).abs() < 1e-12);
            assert!((ds.x1[i] - sim.x1[i]).abs() < 1e-12);
            assert!((ds.z[i] - sim.z[i]).abs() < 1e-12);
            assert_eq!(ds.x.get(i, 0), 1.0);
        }
    }

    #[test]
    fn resample_keeps_rows_aligned() {
        let cfg = DGPConfig::new(20, 0.5, 0.3, ErrorLaw::StdNormal, 4).unwrap();
        let sim = simulate(&cfg).unwrap();
        let ds = Dataset::from_simulated(&sim).unwrap();
        let idx = vec![3usize, 3, 0, 19];
        let rs = ds.resample(&idx);
        assert_eq!(rs.n(), 4);
        for (k, &i) in idx.iter().enumerate() {
            assert_eq!(rs.y[k], ds.y[i]);
            assert_eq!(rs.x1[k], ds.x1[i]);
            assert_eq!(rs.z[k], ds.z[i]);
            assert_eq!(rs.x.row(k), ds.x.row(i));
        }
    }
}
