//! Ground-truth crowd simulations: Hughes model with a fast sweeping
//! eikonal solver and a first-order Godunov finite-volume update.

mod eikonal;
mod flux;
mod ic;
mod params;
mod step;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

pub use eikonal::{solve_eikonal, solve_eikonal_with_schedule, SweepOrder, BLOCKED, DEFAULT_SCHEDULE};
pub use flux::{godunov_flux_1d, physical_flux};
pub use ic::{gaussian_ic, GaussianIc};
pub use params::{speed, HughesParams};
pub use step::{step_density, step_density_capped, GRADIENT_FLOOR};

/// Uniformly spaced density snapshots of one simulation.
#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub params: HughesParams,
    pub ic: GaussianIc,
    pub grid: Arc<Grid>,
    pub snapshot_dt: f64,
    pub t_final: f64,
    /// Amplitude of the initial Gaussian after mass rescaling.
    pub amplitude: f64,
    /// Number of CFL sub-steps taken.
    pub substeps: usize,
    pub snapshots: Vec<Field>,
}

impl SimulationRun {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }
    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|f| f.time()).collect()
    }
}

/// Number of snapshots recorded for a horizon, including t = 0.
pub fn snapshot_count(t_final: f64, snapshot_dt: f64) -> usize {
    (t_final / snapshot_dt + 1e-9).floor() as usize + 1
}

/// Integrates the Hughes system from a Gaussian initial condition, landing
/// sub-steps exactly on every snapshot time.
pub fn run_simulation(
    grid: &Arc<Grid>,
    params: &HughesParams,
    ic: &GaussianIc,
    t_final: f64,
    snapshot_dt: f64,
) -> Result<SimulationRun> {
    params.validate()?;
    if !(snapshot_dt > 0.0) || !(t_final >= 0.0) {
        return Err(Error::Config(format!(
            "need snapshot_dt > 0 and t_final >= 0, got {snapshot_dt} and {t_final}"
        )));
    }
    let n_snap = snapshot_count(t_final, snapshot_dt);
    let (mut rho, amplitude) = gaussian_ic(grid, ic, params)?;
    let mut snapshots = Vec::with_capacity(n_snap);
    snapshots.push(rho.clone());

    let mut t = 0.0;
    let mut substeps = 0usize;
    let mut phi = None;
    for k in 1..n_snap {
        let target = k as f64 * snapshot_dt;
        loop {
            let remaining = target - t;
            if substeps % params.eikonal_stride == 0 || phi.is_none() {
                phi = Some(solve_eikonal(grid, &rho, params)?);
            }
            let (next, dt) = step_density_capped(&rho, phi.as_ref().unwrap(), params, remaining)?;
            substeps += 1;
            rho = next;
            t += dt;
            // snap onto the snapshot time when within rounding of it
            if dt >= remaining || target - t <= 1e-9 * snapshot_dt {
                t = target;
                break;
            }
        }
        rho = rho.with_time(target);
        snapshots.push(rho.clone());
    }

    Ok(SimulationRun {
        params: *params,
        ic: *ic,
        grid: grid.clone(),
        snapshot_dt,
        t_final,
        amplitude,
        substeps,
        snapshots,
    })
}
