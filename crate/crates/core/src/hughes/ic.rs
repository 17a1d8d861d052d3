use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{neumaier_sum, CellKind, Field, Grid, Quantity};

use super::HughesParams;

/// Gaussian initial crowd, rescaled to a prescribed total mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianIc {
    pub x0: f64,
    pub y0: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub target_mass: f64,
}

impl GaussianIc {
    fn unit_profile(&self, grid: &Grid) -> Vec<f64> {
        let mut values = vec![0.0; grid.len()];
        for i in 0..grid.nx() {
            for j in 0..grid.ny() {
                if grid.kind(i, j) == CellKind::Obstacle {
                    continue;
                }
                let (x, y) = grid.center(i, j);
                let ex = (x - self.x0) / self.sigma_x;
                let ey = (y - self.y0) / self.sigma_y;
                values[grid.index(i, j)] = (-0.5 * ex * ex - 0.5 * ey * ey).exp();
            }
        }
        values
    }

    /// Mass carried by the unit-amplitude profile on this grid, i.e. the
    /// target mass for which the amplitude comes out as exactly one.
    pub fn unit_amplitude_mass(&self, grid: &Grid) -> f64 {
        neumaier_sum(self.unit_profile(grid)) * grid.cell_area()
    }
}

/// Samples the Gaussian at cell centers, clears obstacle cells and rescales
/// so the total mass equals `ic.target_mass`. Returns the field together
/// with the amplitude that was used.
pub fn gaussian_ic(grid: &Arc<Grid>, ic: &GaussianIc, params: &HughesParams) -> Result<(Field, f64)> {
    if !(ic.sigma_x > 0.0 && ic.sigma_y > 0.0) {
        return Err(Error::Config(format!(
            "Gaussian widths must be positive, got ({}, {})",
            ic.sigma_x, ic.sigma_y
        )));
    }
    if !(ic.target_mass >= 0.0) || !ic.target_mass.is_finite() {
        return Err(Error::Config(format!("invalid target mass {}", ic.target_mass)));
    }
    if ic.target_mass == 0.0 {
        return Ok((Field::zeros(grid.clone(), Quantity::Density, 0.0), 0.0));
    }
    let mut values = ic.unit_profile(grid);
    let unit_mass = neumaier_sum(values.iter().copied()) * grid.cell_area();
    if !(unit_mass > 0.0) {
        return Err(Error::Numeric("Gaussian profile vanishes on the grid".into()));
    }
    let amplitude = ic.target_mass / unit_mass;
    let mut peak = 0.0f64;
    for v in values.iter_mut() {
        *v *= amplitude;
        peak = peak.max(*v);
    }
    if amplitude >= params.rho_max || peak >= params.rho_max {
        return Err(Error::InfeasibleMass {
            peak: amplitude.max(peak),
            rho_max: params.rho_max,
        });
    }
    Ok((Field::from_parts(grid.clone(), values, Quantity::Density, 0.0), amplitude))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, total_mass, Obstacle};

    fn grid() -> Arc<Grid> {
        Arc::new(build_grid(200, 50, 20.0, 5.0, Some(Obstacle::centered(20.0, 5.0, 1.0))).unwrap())
    }

    #[test]
    fn mass_matches_target() {
        let g = grid();
        let p = HughesParams::default();
        for (x0, y0, sx, sy) in [(2.5, 2.5, 1.8, 1.8), (1.5, 3.5, 1.6, 2.0), (3.0, 1.7, 2.0, 1.6)] {
            let ic = GaussianIc {
                x0,
                y0,
                sigma_x: sx,
                sigma_y: sy,
                target_mass: 10.0,
            };
            let (f, _) = gaussian_ic(&g, &ic, &p).unwrap();
            assert!((total_mass(&f).unwrap() - 10.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn unit_amplitude_for_matching_mass() {
        let g = grid();
        let mut ic = GaussianIc {
            x0: 2.5,
            y0: 2.5,
            sigma_x: 1.8,
            sigma_y: 1.8,
            target_mass: 0.0,
        };
        ic.target_mass = ic.unit_amplitude_mass(&g);
        let (f, amp) = gaussian_ic(&g, &ic, &HughesParams::default()).unwrap();
        assert!((amp - 1.0).abs() < 1e-12);
        // the four cells around (2.5, 2.5) are 0.05 m off in each direction
        let expected = (-(0.05f64 * 0.05) / (1.8 * 1.8)).exp();
        let peak = f.values().iter().cloned().fold(0.0, f64::max);
        assert!((peak - expected).abs() < 1e-12);
        assert!((f.at(24, 24) - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_mass_gives_zero_field() {
        let ic = GaussianIc {
            x0: 2.5,
            y0: 2.5,
            sigma_x: 1.8,
            sigma_y: 1.8,
            target_mass: 0.0,
        };
        let (f, amp) = gaussian_ic(&grid(), &ic, &HughesParams::default()).unwrap();
        assert_eq!(amp, 0.0);
        assert!(f.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_much_mass_is_infeasible() {
        let ic = GaussianIc {
            x0: 2.5,
            y0: 2.5,
            sigma_x: 1.6,
            sigma_y: 1.6,
            target_mass: 500.0,
        };
        assert!(matches!(
            gaussian_ic(&grid(), &ic, &HughesParams::default()),
            Err(Error::InfeasibleMass { .. })
        ));
    }
}
