//! Snapshot matrices, initial-condition sampling, manifold subsampling and
//! the on-disk formats shared by every pipeline stage.

mod io;
mod sampling;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::grid::{neumaier_sum, Field, Grid, GridSpec, Quantity};
use crate::hughes::{GaussianIc, SimulationRun};

pub use io::{
    load_dataset, payload_path, read_model, save_dataset, sha256_hex, write_model, ModelFile, ModelManifest,
    SectionKind, FORMAT_VERSION, MAGIC, SCHEMA_VERSION,
};
pub(crate) use io::write_atomic;
pub use sampling::{sample_ics, subsample_for_manifold, RunSpec, SampledIcs, SplitPlan, SubsampleOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Extra,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Test, Split::Extra];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Extra => "extra",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown split '{s}'")))
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Raw,
    UnitMass,
}

/// Provenance of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub run_id: u32,
    pub time: f64,
    pub ic: GaussianIc,
    /// Sum of the raw column entries (before any normalization).
    pub column_sum: f64,
}

/// Dataset-level context stored alongside the matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub grid: GridSpec,
    pub snapshot_dt: f64,
    pub splits: BTreeMap<u32, Split>,
    pub label: String,
}

/// Column-stacked density snapshots `X` (N cells by M snapshots).
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    pub data: DMatrix<f64>,
    pub columns: Vec<ColumnMeta>,
    pub normalization: Normalization,
    pub info: DatasetInfo,
}

impl SnapshotMatrix {
    pub fn new(data: DMatrix<f64>, columns: Vec<ColumnMeta>, normalization: Normalization, info: DatasetInfo) -> Result<Self> {
        if data.ncols() != columns.len() {
            return Err(Error::Shape(format!(
                "{} columns but {} metadata records",
                data.ncols(),
                columns.len()
            )));
        }
        if data.nrows() != info.grid.nx * info.grid.ny {
            return Err(Error::Shape(format!(
                "{} rows for a {}x{} grid",
                data.nrows(),
                info.grid.nx,
                info.grid.ny
            )));
        }
        Ok(SnapshotMatrix {
            data,
            columns,
            normalization,
            info,
        })
    }

    /// RAW matrix holding every snapshot of a simulation.
    pub fn from_run(run: &SimulationRun, run_id: u32, split: Split) -> Self {
        let n = run.grid.len();
        let m = run.snapshots.len();
        let mut data = DMatrix::zeros(n, m);
        let mut columns = Vec::with_capacity(m);
        for (k, snap) in run.snapshots.iter().enumerate() {
            data.column_mut(k).copy_from_slice(snap.values());
            columns.push(ColumnMeta {
                run_id,
                time: snap.time(),
                ic: run.ic,
                column_sum: neumaier_sum(snap.values().iter().copied()),
            });
        }
        let mut splits = BTreeMap::new();
        splits.insert(run_id, split);
        SnapshotMatrix {
            data,
            columns,
            normalization: Normalization::Raw,
            info: DatasetInfo {
                grid: run.grid.spec(),
                snapshot_dt: run.snapshot_dt,
                splits,
                label: format!("run_{run_id:04}"),
            },
        }
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn column(&self, m: usize) -> DVectorView<'_, f64> {
        self.data.column(m)
    }

    /// Scales every column to unit sum; the original sums stay in the metadata.
    pub fn to_unit_mass(&self) -> Result<SnapshotMatrix> {
        if self.normalization == Normalization::UnitMass {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        for (m, meta) in out.columns.iter_mut().enumerate() {
            let sum = neumaier_sum(self.data.column(m).iter().copied());
            if !(sum > 0.0) {
                return Err(Error::ZeroMass);
            }
            meta.column_sum = sum;
            out.data.column_mut(m).iter_mut().for_each(|v| *v /= sum);
        }
        out.normalization = Normalization::UnitMass;
        Ok(out)
    }

    /// Undoes [`SnapshotMatrix::to_unit_mass`].
    pub fn to_raw(&self) -> SnapshotMatrix {
        if self.normalization == Normalization::Raw {
            return self.clone();
        }
        let mut out = self.clone();
        for (m, meta) in self.columns.iter().enumerate() {
            out.data.column_mut(m).iter_mut().for_each(|v| *v *= meta.column_sum);
        }
        out.normalization = Normalization::Raw;
        out
    }

    /// Column `m` as a density field (RAW values are used as-is; UNIT_MASS
    /// columns are scaled back by their stored sums).
    pub fn field(&self, grid: &Arc<Grid>, m: usize) -> Field {
        let scale = match self.normalization {
            Normalization::Raw => 1.0,
            Normalization::UnitMass => self.columns[m].column_sum,
        };
        let values: Vec<f64> = self.data.column(m).iter().map(|v| v * scale).collect();
        Field::from_parts(grid.clone(), values, Quantity::Density, self.columns[m].time)
    }

    /// SHA-256 of the binary payload, used as a lineage fingerprint.
    pub fn content_hash(&self) -> String {
        sha256_hex(&io::encode_snapshot_payload(self))
    }

    /// Concatenates matrices with identical grids column-wise.
    pub fn concat(parts: &[SnapshotMatrix], label: &str) -> Result<SnapshotMatrix> {
        let first = parts.first().ok_or_else(|| Error::Shape("nothing to concatenate".into()))?;
        let n = first.nrows();
        let m: usize = parts.iter().map(|p| p.ncols()).sum();
        let mut data = DMatrix::zeros(n, m);
        let mut columns = Vec::with_capacity(m);
        let mut splits = BTreeMap::new();
        let mut at = 0;
        for p in parts {
            if p.nrows() != n || p.info.grid != first.info.grid || p.normalization != first.normalization {
                return Err(Error::Shape("cannot concatenate incompatible snapshot matrices".into()));
            }
            data.columns_mut(at, p.ncols()).copy_from(&p.data);
            at += p.ncols();
            columns.extend_from_slice(&p.columns);
            splits.extend(p.info.splits.iter().map(|(k, v)| (*k, *v)));
        }
        Ok(SnapshotMatrix {
            data,
            columns,
            normalization: first.normalization,
            info: DatasetInfo {
                grid: first.info.grid,
                snapshot_dt: first.info.snapshot_dt,
                splits,
                label: label.to_string(),
            },
        })
    }
}

/// Writes one field as CSV rows `x,y,value` (all cells, obstacle included).
pub fn write_field_csv<W: Write>(grid: &Grid, values: &[f64], mut out: W) -> std::io::Result<()> {
    writeln!(out, "x,y,value")?;
    for i in 0..grid.nx() {
        for j in 0..grid.ny() {
            let (x, y) = grid.center(i, j);
            writeln!(out, "{},{},{}", fmt_f64(x), fmt_f64(y), fmt_f64(values[grid.index(i, j)]))?;
        }
    }
    Ok(())
}

/// Unit-sum version of a raw snapshot vector.
pub fn unit_mass_vector(values: &[f64]) -> Result<DVector<f64>> {
    let sum = neumaier_sum(values.iter().copied());
    if !(sum > 0.0) {
        return Err(Error::ZeroMass);
    }
    Ok(DVector::from_iterator(values.len(), values.iter().map(|v| v / sum)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Obstacle};
    use crate::hughes::{run_simulation, HughesParams};

    pub(crate) fn small_run(run_id: u32) -> SnapshotMatrix {
        let g = Arc::new(build_grid(40, 10, 20.0, 5.0, Some(Obstacle::centered(20.0, 5.0, 1.0))).unwrap());
        let ic = GaussianIc {
            x0: 2.0 + 0.2 * run_id as f64,
            y0: 2.5,
            sigma_x: 1.7,
            sigma_y: 1.8,
            target_mass: 10.0,
        };
        let run = run_simulation(&g, &HughesParams::default(), &ic, 1.0, 0.1).unwrap();
        SnapshotMatrix::from_run(&run, run_id, Split::Train)
    }

    #[test]
    fn unit_mass_round_trip() {
        let raw = small_run(0);
        let unit = raw.to_unit_mass().unwrap();
        for m in 0..unit.ncols() {
            let s: f64 = neumaier_sum(unit.column(m).iter().copied());
            assert!((s - 1.0).abs() <= 1e-12);
        }
        let back = unit.to_raw();
        for (a, b) in back.data.iter().zip(raw.data.iter()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn field_csv_has_one_row_per_cell() {
        let g = build_grid(10, 4, 5.0, 2.0, None).unwrap();
        let mut buf = Vec::new();
        write_field_csv(&g, &vec![0.5; g.len()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 41);
        assert_eq!(text.lines().next().unwrap(), "x,y,value");
    }

    #[test]
    fn split_names_round_trip() {
        for s in Split::ALL {
            assert_eq!(Split::parse(s.as_str()).unwrap(), s);
        }
        assert!(Split::parse("holdout").is_err());
    }
}
