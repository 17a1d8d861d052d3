use crate::error::{Error, Result};

use super::HughesParams;

/// Physical flux `F(theta) = direction * theta * v_f * (1 - theta / rho_max)`.
#[inline]
pub fn physical_flux(theta: f64, direction: f64, params: &HughesParams) -> f64 {
    let q = params.v_free * theta * (1.0 - theta / params.rho_max);
    direction * q
}

/// Godunov interface flux between a left and a right state, for a frozen
/// direction cosine.
pub fn godunov_flux_1d(rho_left: f64, rho_right: f64, direction: f64, params: &HughesParams) -> Result<f64> {
    for rho in [rho_left, rho_right] {
        if !(rho >= 0.0 && rho <= params.rho_max) {
            return Err(Error::Domain(format!(
                "interface density {rho} outside [0, {}]",
                params.rho_max
            )));
        }
    }
    if !(-1.0..=1.0).contains(&direction) {
        return Err(Error::Domain(format!("direction cosine {direction} outside [-1, 1]")));
    }
    Ok(godunov_flux_unchecked(rho_left, rho_right, direction, params))
}

/// Closed-form min/max of the quadratic flux over the interval between the
/// two states; the only interior candidate is the critical density rho_max / 2.
#[inline]
pub(crate) fn godunov_flux_unchecked(rho_left: f64, rho_right: f64, direction: f64, params: &HughesParams) -> f64 {
    if direction == 0.0 {
        return 0.0;
    }
    let (lo, hi) = if rho_left <= rho_right {
        (rho_left, rho_right)
    } else {
        (rho_right, rho_left)
    };
    let f_lo = physical_flux(lo, direction, params);
    let f_hi = physical_flux(hi, direction, params);
    let crit = 0.5 * params.rho_max;
    let interior = lo < crit && crit < hi;
    if rho_left <= rho_right {
        let mut m = f_lo.min(f_hi);
        if interior {
            m = m.min(physical_flux(crit, direction, params));
        }
        m
    } else {
        let mut m = f_lo.max(f_hi);
        if interior {
            m = m.max(physical_flux(crit, direction, params));
        }
        m
    }
}
