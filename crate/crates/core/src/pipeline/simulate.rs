use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{write_csv, write_json, Pipeline, StageReport};
use crate::dataset::{sample_ics, save_dataset, SnapshotMatrix, Split};
use crate::error::Result;
use crate::fmt_f64;
use crate::grid::GridSpec;
use crate::hughes::{run_simulation, GaussianIc};

/// One successfully simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: u32,
    pub split: Split,
    pub ic: GaussianIc,
    pub snapshots: usize,
    pub initial_mass: f64,
    pub final_mass: f64,
    /// max_k |m_k - m_0| / m_0 over the horizon.
    pub max_relative_drift: f64,
    pub substeps: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run_id: u32,
    pub split: Split,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationManifest {
    pub config_hash: String,
    pub grid: GridSpec,
    pub snapshot_dt: f64,
    pub t_final: f64,
    pub runs: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
}

pub(super) fn run(p: &Pipeline, dir: &Path, report: &mut StageReport) -> Result<()> {
    let cfg = p.config();
    let grid = p.grid()?;
    let plan = sample_ics(&cfg.splits)?;
    let sim = &cfg.simulation;

    let outcomes: Vec<(std::result::Result<RunRecord, RunFailure>, f64)> = plan
        .runs
        .par_iter()
        .map(|spec| {
            let started = Instant::now();
            let attempt = || -> Result<RunRecord> {
                let run = run_simulation(&grid, &cfg.hughes, &spec.ic, sim.t_final, sim.snapshot_dt)?;
                let x = SnapshotMatrix::from_run(&run, spec.run_id, spec.split);
                let area = grid.cell_area();
                let m0 = x.columns[0].column_sum * area;
                let drift = x
                    .columns
                    .iter()
                    .map(|c| if m0 > 0.0 { (c.column_sum * area - m0).abs() / m0 } else { 0.0 })
                    .fold(0.0, f64::max);
                let path = p.run_path(spec.run_id);
                save_dataset(&x, &path)?;
                Ok(RunRecord {
                    run_id: spec.run_id,
                    split: spec.split,
                    ic: spec.ic,
                    snapshots: x.ncols(),
                    initial_mass: m0,
                    final_mass: x.columns.last().map_or(0.0, |c| c.column_sum * area),
                    max_relative_drift: drift,
                    substeps: run.substeps,
                    file: path.file_name().unwrap().to_string_lossy().into_owned(),
                })
            };
            let out = attempt().map_err(|e| RunFailure {
                run_id: spec.run_id,
                split: spec.split,
                error: e.to_string(),
            });
            (out, started.elapsed().as_secs_f64())
        })
        .collect();

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let mut timings = Vec::new();
    for (spec, (outcome, secs)) in plan.runs.iter().zip(outcomes) {
        timings.push(serde_json::json!({ "run_id": spec.run_id, "wall_seconds": secs }));
        match outcome {
            Ok(r) => runs.push(r),
            Err(f) => {
                report.failures.push(format!("run {}: {}", f.run_id, f.error));
                failures.push(f);
            }
        }
    }

    write_csv(
        &dir.join("runs.csv"),
        "run_id,split,x0,y0,sigma_x,sigma_y,snapshots,initial_mass,final_mass,max_relative_drift,substeps",
        runs.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.run_id,
                r.split,
                fmt_f64(r.ic.x0),
                fmt_f64(r.ic.y0),
                fmt_f64(r.ic.sigma_x),
                fmt_f64(r.ic.sigma_y),
                r.snapshots,
                fmt_f64(r.initial_mass),
                fmt_f64(r.final_mass),
                fmt_f64(r.max_relative_drift),
                r.substeps
            )
        }),
    )?;
    let worst = runs.iter().map(|r| r.max_relative_drift).fold(0.0, f64::max);
    report.notes.push(format!(
        "{} of {} runs simulated, worst relative mass drift {worst:.3e}",
        runs.len(),
        plan.runs.len()
    ));
    write_json(&dir.join("run_timings.json"), &timings)?;
    write_json(
        &dir.join("manifest.json"),
        &SimulationManifest {
            config_hash: p.stage_hash(super::Stage::Simulate),
            grid: grid.spec(),
            snapshot_dt: sim.snapshot_dt,
            t_final: sim.t_final,
            runs,
            failures,
        },
    )
}
