//! Fast sweeping solver for `|grad phi| = 1 / f(rho)` on the corridor.
//!
//! The exit is the last column of cells (`i = nx - 1`) where `phi = 0`.
//! The potential is not periodic in x. Obstacle cells hold [`BLOCKED`] and
//! never act as upwind neighbors.

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, Quantity};

use super::HughesParams;

/// Potential assigned to obstacle cells and to cells not reached yet.
pub const BLOCKED: f64 = 1e30;

/// One Gauss-Seidel sweep direction over the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepOrder {
    pub x_ascending: bool,
    pub y_ascending: bool,
}

/// The canonical four alternating orderings.
pub const DEFAULT_SCHEDULE: [SweepOrder; 4] = [
    SweepOrder { x_ascending: true, y_ascending: true },
    SweepOrder { x_ascending: false, y_ascending: true },
    SweepOrder { x_ascending: false, y_ascending: false },
    SweepOrder { x_ascending: true, y_ascending: false },
];

pub(crate) fn check_isotropic(grid: &Grid) -> Result<()> {
    if (grid.dx() - grid.dy()).abs() > 1e-12 * grid.dx() {
        return Err(Error::Geometry(format!(
            "solver requires dx == dy, got dx = {} and dy = {}",
            grid.dx(),
            grid.dy()
        )));
    }
    Ok(())
}

/// Solves the eikonal equation for the current density.
pub fn solve_eikonal(grid: &Grid, rho: &Field, params: &HughesParams) -> Result<Field> {
    solve_eikonal_with_schedule(grid, rho, params, &DEFAULT_SCHEDULE)
}

/// Same as [`solve_eikonal`] with a caller-chosen sequence of sweep orderings.
pub fn solve_eikonal_with_schedule(
    grid: &Grid,
    rho: &Field,
    params: &HughesParams,
    schedule: &[SweepOrder],
) -> Result<Field> {
    rho.expect_quantity(Quantity::Density)?;
    check_isotropic(grid)?;
    if schedule.is_empty() {
        return Err(Error::Config("empty sweep schedule".into()));
    }
    let slowness: Vec<f64> = rho.values().iter().map(|&r| params.slowness(r)).collect();
    let phi = fast_sweep(grid, &slowness, params.sweep_tol, params.max_sweeps, schedule)?;
    let grid_arc = rho.grid().clone();
    Ok(Field::from_parts(grid_arc, phi, Quantity::Potential, rho.time()))
}

/// Core sweeping loop on a raw slowness array.
pub(crate) fn fast_sweep(
    grid: &Grid,
    slowness: &[f64],
    tol: f64,
    max_iters: usize,
    schedule: &[SweepOrder],
) -> Result<Vec<f64>> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let h = grid.dx();
    let mut phi = vec![BLOCKED; nx * ny];
    let mut fixed = vec![false; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            let idx = grid.index(i, j);
            if !grid.is_fluid(i, j) {
                fixed[idx] = true;
            } else if i == nx - 1 {
                phi[idx] = 0.0;
                fixed[idx] = true;
            }
        }
    }

    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        residual = 0.0;
        for order in schedule {
            for ii in 0..nx {
                let i = if order.x_ascending { ii } else { nx - 1 - ii };
                for jj in 0..ny {
                    let j = if order.y_ascending { jj } else { ny - 1 - jj };
                    let idx = i * ny + j;
                    if fixed[idx] {
                        continue;
                    }
                    let a = {
                        let left = if i > 0 { phi[idx - ny] } else { BLOCKED };
                        let right = if i + 1 < nx { phi[idx + ny] } else { BLOCKED };
                        left.min(right)
                    };
                    let b = {
                        let down = if j > 0 { phi[idx - 1] } else { BLOCKED };
                        let up = if j + 1 < ny { phi[idx + 1] } else { BLOCKED };
                        down.min(up)
                    };
                    let sh = slowness[idx] * h;
                    let lo = a.min(b);
                    if lo >= BLOCKED {
                        continue;
                    }
                    let candidate = if (a - b).abs() >= sh {
                        lo + sh
                    } else {
                        0.5 * (a + b + (2.0 * sh * sh - (a - b) * (a - b)).sqrt())
                    };
                    let old = phi[idx];
                    if candidate < old {
                        phi[idx] = candidate;
                        let change = if old >= BLOCKED { f64::INFINITY } else { old - candidate };
                        if change > residual {
                            residual = change;
                        }
                    }
                }
            }
        }
        if residual < tol {
            return Ok(phi);
        }
    }
    Err(Error::NoConvergence {
        sweeps: max_iters,
        residual,
    })
}
