//! Conservative Godunov update of the density for a frozen potential.
//!
//! Face fluxes are computed once per face and applied with opposite signs to
//! the two adjacent cells, so the update telescopes: wall and obstacle faces
//! carry zero flux and the x-faces wrap periodically.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, Quantity};

use super::eikonal::{check_isotropic, BLOCKED};
use super::flux::godunov_flux_unchecked;
use super::HughesParams;

/// Below this gradient norm the walking direction is undefined and the face
/// carries no flux.
pub const GRADIENT_FLOOR: f64 = 1e-10;

const MIN_DT: f64 = 1e-12;

/// Face fluxes and the CFL time step for one density/potential pair.
pub(crate) struct FaceFluxes {
    /// Flux through the face between cell (i, j) and (i + 1 mod nx, j).
    pub x: Vec<f64>,
    /// Flux through the face between cell (i, j) and (i, j + 1); zero on the top wall.
    pub y: Vec<f64>,
    pub dt_cfl: f64,
}

#[inline]
fn usable(grid: &Grid, phi: &[f64], i: usize, j: usize) -> bool {
    grid.is_fluid(i, j) && phi[grid.index(i, j)] < BLOCKED
}

/// Centered difference in y at a cell, one-sided next to walls/obstacles.
fn cell_dphi_dy(grid: &Grid, phi: &[f64], i: usize, j: usize) -> f64 {
    let h = grid.dy();
    let c = phi[grid.index(i, j)];
    let down = j > 0 && usable(grid, phi, i, j - 1);
    let up = j + 1 < grid.ny() && usable(grid, phi, i, j + 1);
    match (down, up) {
        (true, true) => (phi[grid.index(i, j + 1)] - phi[grid.index(i, j - 1)]) / (2.0 * h),
        (false, true) => (phi[grid.index(i, j + 1)] - c) / h,
        (true, false) => (c - phi[grid.index(i, j - 1)]) / h,
        (false, false) => 0.0,
    }
}

/// Centered difference in x at a cell (non-periodic), one-sided at the ends.
fn cell_dphi_dx(grid: &Grid, phi: &[f64], i: usize, j: usize) -> f64 {
    let h = grid.dx();
    let c = phi[grid.index(i, j)];
    let left = i > 0 && usable(grid, phi, i - 1, j);
    let right = i + 1 < grid.nx() && usable(grid, phi, i + 1, j);
    match (left, right) {
        (true, true) => (phi[grid.index(i + 1, j)] - phi[grid.index(i - 1, j)]) / (2.0 * h),
        (false, true) => (phi[grid.index(i + 1, j)] - c) / h,
        (true, false) => (c - phi[grid.index(i - 1, j)]) / h,
        (false, false) => 0.0,
    }
}

/// Direction cosine of the walking velocity `-grad phi / |grad phi|` along
/// the face normal.
#[inline]
fn direction_cos(normal: f64, tangential: f64) -> f64 {
    let norm = (normal * normal + tangential * tangential).sqrt();
    if norm < GRADIENT_FLOOR {
        0.0
    } else {
        (-normal / norm).clamp(-1.0, 1.0)
    }
}

/// Largest characteristic or transport speed over both states of a face.
#[inline]
fn face_speed(rl: f64, rr: f64, dir: f64, params: &HughesParams) -> f64 {
    let s = |r: f64| {
        let r = r.clamp(0.0, params.rho_max);
        let transport = 1.0 - r / params.rho_max;
        let wave = (1.0 - 2.0 * r / params.rho_max).abs();
        transport.max(wave)
    };
    params.v_free * dir.abs() * s(rl).max(s(rr))
}

pub(crate) fn face_fluxes(grid: &Grid, rho: &[f64], phi: &[f64], params: &HughesParams) -> FaceFluxes {
    let (nx, ny) = (grid.nx(), grid.ny());
    let (dx, dy) = (grid.dx(), grid.dy());
    let mut fx = vec![0.0; nx * ny];
    let mut fy = vec![0.0; nx * ny];
    let mut max_ux = 0.0f64;
    let mut max_uy = 0.0f64;

    // tangential derivatives, reused by the two faces touching each cell
    let mut dydir = vec![0.0; nx * ny];
    let mut dxdir = vec![0.0; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            if usable(grid, phi, i, j) {
                dydir[grid.index(i, j)] = cell_dphi_dy(grid, phi, i, j);
                dxdir[grid.index(i, j)] = cell_dphi_dx(grid, phi, i, j);
            }
        }
    }

    for i in 0..nx {
        for j in 0..ny {
            let idx = grid.index(i, j);
            if !usable(grid, phi, i, j) {
                continue;
            }
            // x-face towards (i + 1, j); the last column wraps to the inlet
            if i + 1 < nx {
                if usable(grid, phi, i + 1, j) {
                    let nidx = grid.index(i + 1, j);
                    let gx = (phi[nidx] - phi[idx]) / dx;
                    let gy = 0.5 * (dydir[idx] + dydir[nidx]);
                    let dir = direction_cos(gx, gy);
                    fx[idx] = godunov_flux_unchecked(rho[idx], rho[nidx], dir, params);
                    max_ux = max_ux.max(face_speed(rho[idx], rho[nidx], dir, params));
                }
            } else if usable(grid, phi, 0, j) {
                // the exit cell has no forward neighbor: use its backward difference
                let nidx = grid.index(0, j);
                let gx = if usable(grid, phi, i - 1, j) {
                    (phi[idx] - phi[grid.index(i - 1, j)]) / dx
                } else {
                    0.0
                };
                let dir = direction_cos(gx, dydir[idx]);
                fx[idx] = godunov_flux_unchecked(rho[idx], rho[nidx], dir, params);
                max_ux = max_ux.max(face_speed(rho[idx], rho[nidx], dir, params));
            }
            // y-face towards (i, j + 1); the top wall carries nothing
            if j + 1 < ny && usable(grid, phi, i, j + 1) {
                let nidx = grid.index(i, j + 1);
                let gy = (phi[nidx] - phi[idx]) / dy;
                let gx = 0.5 * (dxdir[idx] + dxdir[nidx]);
                let dir = direction_cos(gy, gx);
                fy[idx] = godunov_flux_unchecked(rho[idx], rho[nidx], dir, params);
                max_uy = max_uy.max(face_speed(rho[idx], rho[nidx], dir, params));
            }
        }
    }

    let mut dt = f64::INFINITY;
    if max_ux > 0.0 {
        dt = dt.min(dx / max_ux);
    }
    if max_uy > 0.0 {
        dt = dt.min(dy / max_uy);
    }
    if !dt.is_finite() {
        dt = dx.min(dy) / params.v_free;
    }
    FaceFluxes {
        x: fx,
        y: fy,
        dt_cfl: params.cfl * dt,
    }
}

/// Applies the conservative update with a given time step.
pub(crate) fn apply_fluxes(grid: &Grid, rho: &[f64], fluxes: &FaceFluxes, dt: f64) -> Vec<f64> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let (rx, ry) = (dt / grid.dx(), dt / grid.dy());
    let mut out = rho.to_vec();
    for i in 0..nx {
        let iw = if i == 0 { nx - 1 } else { i - 1 };
        for j in 0..ny {
            let idx = grid.index(i, j);
            if !grid.is_fluid(i, j) {
                continue;
            }
            let east = fluxes.x[idx];
            let west = fluxes.x[grid.index(iw, j)];
            let north = fluxes.y[idx];
            let south = if j > 0 { fluxes.y[idx - 1] } else { 0.0 };
            out[idx] = rho[idx] - rx * (east - west) - ry * (north - south);
        }
    }
    out
}

fn check_update(values: &[f64]) -> Result<()> {
    if let Some((idx, &v)) = values.iter().enumerate().find(|(_, &v)| v < -1e-12 || !v.is_finite()) {
        return Err(Error::Conservation(format!(
            "density {v:e} at cell {idx} after update"
        )));
    }
    Ok(())
}

/// Advances the density by one CFL step for a frozen potential. Returns the
/// new field and the time step used.
pub fn step_density(rho: &Field, phi: &Field, params: &HughesParams) -> Result<(Field, f64)> {
    step_density_capped(rho, phi, params, f64::INFINITY)
}

/// Like [`step_density`] but never steps further than `dt_max`.
pub fn step_density_capped(rho: &Field, phi: &Field, params: &HughesParams, dt_max: f64) -> Result<(Field, f64)> {
    rho.expect_quantity(Quantity::Density)?;
    phi.expect_quantity(Quantity::Potential)?;
    let grid: &Arc<Grid> = rho.grid();
    if !Arc::ptr_eq(grid, phi.grid()) && **grid != **phi.grid() {
        return Err(Error::Shape("density and potential live on different grids".into()));
    }
    check_isotropic(grid)?;
    let fluxes = face_fluxes(grid, rho.values(), phi.values(), params);
    let dt = fluxes.dt_cfl.min(dt_max);
    if !(dt >= MIN_DT) {
        return Err(Error::Stability(format!("time step {dt:e} underflowed")));
    }
    let next = apply_fluxes(grid, rho.values(), &fluxes, dt);
    check_update(&next)?;
    Ok((
        Field::from_parts(grid.clone(), next, Quantity::Density, rho.time() + dt),
        dt,
    ))
}
