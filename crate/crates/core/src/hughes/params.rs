use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical and numerical parameters of the Hughes solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HughesParams {
    /// Free-flow walking speed (m/s).
    pub v_free: f64,
    /// Jam density (people/m^2).
    pub rho_max: f64,
    /// Courant number used to pick the time step.
    pub cfl: f64,
    /// Lower bound on the walking speed, keeps the eikonal slowness finite.
    pub speed_floor: f64,
    /// Stop sweeping once a full set of four orderings changes phi by less than this.
    pub sweep_tol: f64,
    /// Cap on sweep iterations (each iteration runs all four orderings).
    pub max_sweeps: usize,
    /// Re-solve the eikonal equation every `eikonal_stride` sub-steps.
    pub eikonal_stride: usize,
}

impl Default for HughesParams {
    fn default() -> Self {
        HughesParams {
            v_free: 1.0,
            rho_max: 5.0,
            cfl: 0.25,
            speed_floor: 1e-3,
            sweep_tol: 1e-12,
            max_sweeps: 500,
            eikonal_stride: 1,
        }
    }
}

impl HughesParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_free > 0.0) || !(self.rho_max > 0.0) {
            return Err(Error::Config("v_free and rho_max must be positive".into()));
        }
        if !(self.cfl > 0.0 && self.cfl <= 0.5) {
            return Err(Error::Config(format!("cfl must lie in (0, 0.5], got {}", self.cfl)));
        }
        if !(self.speed_floor > 0.0 && self.speed_floor < self.v_free) {
            return Err(Error::Config(format!(
                "speed_floor must lie in (0, v_free), got {}",
                self.speed_floor
            )));
        }
        if !(self.sweep_tol > 0.0) || self.max_sweeps == 0 || self.eikonal_stride == 0 {
            return Err(Error::Config(
                "sweep_tol, max_sweeps and eikonal_stride must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Walking speed at density `rho`, floored at `speed_floor`.
    pub fn speed(&self, rho: f64) -> Result<f64> {
        if !(rho >= 0.0 && rho <= self.rho_max) {
            return Err(Error::Domain(format!(
                "density {rho} outside [0, {}]",
                self.rho_max
            )));
        }
        Ok(self.speed_unchecked(rho))
    }

    #[inline]
    pub(crate) fn speed_unchecked(&self, rho: f64) -> f64 {
        (self.v_free * (1.0 - rho / self.rho_max)).max(self.speed_floor)
    }

    /// Eikonal right-hand side 1/(f g) with discomfort g = 1.
    #[inline]
    pub(crate) fn slowness(&self, rho: f64) -> f64 {
        1.0 / self.speed_unchecked(rho.clamp(0.0, self.rho_max))
    }
}

/// Speed-density relation for `params`.
pub fn speed(params: &HughesParams, rho: f64) -> Result<f64> {
    params.speed(rho)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_speed_density_relation() {
        let p = HughesParams::default();
        assert_eq!(p.speed(0.0).unwrap(), 1.0);
        assert_eq!(p.speed(2.5).unwrap(), 0.5);
        assert_eq!(p.speed(5.0).unwrap(), p.speed_floor);
    }

    #[test]
    fn speed_rejects_out_of_range_density() {
        let p = HughesParams::default();
        assert!(matches!(p.speed(-0.1), Err(Error::Domain(_))));
        assert!(matches!(p.speed(5.1), Err(Error::Domain(_))));
    }

    #[test]
    fn defaults_validate() {
        HughesParams::default().validate().unwrap();
        let bad = HughesParams {
            cfl: 0.75,
            ..HughesParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
