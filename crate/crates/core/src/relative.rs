//! Differential elements and linearized relative motion about a near-circular
//! reference orbit.

use nalgebra::Vector3;
use thiserror::Error;

use crate::astro::{angle_diff, secular_rates, wrap_pi, Constants, MeanElements};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelativeError {
    #[error("element epochs differ: {0} s vs {1} s")]
    EpochMismatch(f64, f64),
}

/// Spacecraft-minus-satellite element differences.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiffElements {
    pub d_a: f64,
    pub d_ex: f64,
    pub d_ey: f64,
    pub d_u: f64,
    pub d_i: f64,
    pub d_raan: f64,
}

impl DiffElements {
    /// Magnitude of the relative eccentricity vector.
    pub fn d_e(&self) -> f64 {
        self.d_ex.hypot(self.d_ey)
    }

    /// Phase of the relative eccentricity vector.
    pub fn u_e(&self) -> f64 {
        if self.d_e() == 0.0 {
            0.0
        } else {
            self.d_ey.atan2(self.d_ex)
        }
    }
}

/// Relative position (km) and velocity (km/s) in along-track, cross-track,
/// radial order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RtnState {
    pub r_t: f64,
    pub r_n: f64,
    pub r_r: f64,
    pub v_t: f64,
    pub v_n: f64,
    pub v_r: f64,
}

impl RtnState {
    pub fn range(&self) -> f64 {
        Vector3::new(self.r_t, self.r_n, self.r_r).norm()
    }

    pub fn speed(&self) -> f64 {
        Vector3::new(self.v_t, self.v_n, self.v_r).norm()
    }
}

pub fn diff_elements(sc: &MeanElements, sat: &MeanElements) -> Result<DiffElements, RelativeError> {
    if sc.epoch != sat.epoch {
        return Err(RelativeError::EpochMismatch(sc.epoch, sat.epoch));
    }
    let (ex, ey) = sc.ecc_vector();
    let (sx, sy) = sat.ecc_vector();
    Ok(DiffElements {
        d_a: sc.a - sat.a,
        d_ex: ex - sx,
        d_ey: ey - sy,
        d_u: angle_diff(sc.argp + sc.mean_anomaly, sat.argp + sat.mean_anomaly),
        d_i: sc.i - sat.i,
        d_raan: angle_diff(sc.raan, sat.raan),
    })
}

/// Linear relative state at `dt` after the reference epoch, with the satellite
/// at argument of latitude `u` on a reference orbit of radius `a0`, mean
/// motion `n0` and inclination `incl`. The cross-track row is scaled by `a0`.
pub fn rtn_linear(d: &DiffElements, a0: f64, n0: f64, incl: f64, dt: f64, u: f64) -> RtnState {
    let (de, ue) = (d.d_e(), d.u_e());
    let (si, ci) = incl.sin_cos();
    let (su, cu) = u.sin_cos();
    let (sp, cp) = (u - ue).sin_cos();
    let drift = -1.5 * d.d_a / a0 * n0;
    RtnState {
        r_t: a0 * (d.d_u + drift * dt + d.d_raan * ci) + 2.0 * a0 * de * sp,
        r_n: a0 * (d.d_i * su - d.d_raan * si * cu),
        r_r: d.d_a - a0 * de * cp,
        v_t: a0 * drift + 2.0 * a0 * de * n0 * cp,
        v_n: a0 * n0 * (d.d_i * cu + d.d_raan * si * su),
        v_r: a0 * de * n0 * sp,
    }
}

/// Relative speed at a nodal conjunction: the spacecraft at its perigee radius,
/// the satellite on its circular orbit. Root-sum-square of the vis-viva speed
/// difference and the normal component `V0 * d_i`.
pub fn flyby_relative_speed_exact(sc: &MeanElements, sat: &MeanElements, c: &Constants) -> f64 {
    let r_p = sc.a * (1.0 - sc.e);
    let v_sc = (c.mu * (2.0 / r_p - 1.0 / sc.a)).sqrt();
    let v0 = (c.mu / sat.a).sqrt();
    let dv_t = v_sc - v0;
    let dv_n = v0 * (sc.i - sat.i);
    dv_t.hypot(dv_n)
}

/// Linearized drift of the node difference accumulated over `duration`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaanDrift {
    pub value: f64,
    /// Set when `tan i` is singular and only the semi-major-axis term was used.
    pub polar: bool,
}

pub fn delta_raan_drift(
    d_a: f64,
    d_i: f64,
    plane_el: &MeanElements,
    duration: f64,
    c: &Constants,
) -> RaanDrift {
    let rate = secular_rates(plane_el, c).raan;
    let ci = plane_el.i.cos();
    let polar = ci.abs() < 1e-12;
    let incl_term = if polar { 0.0 } else { plane_el.i.tan() * d_i };
    RaanDrift {
        value: duration * (-3.5 * d_a / plane_el.a - incl_term) * rate,
        polar,
    }
}

/// Linearized drift of the argument-of-perigee difference over `duration`.
pub fn delta_argp_drift(d_a: f64, d_i: f64, plane_el: &MeanElements, duration: f64, c: &Constants) -> f64 {
    let rate = secular_rates(plane_el, c).argp;
    let (si, ci) = plane_el.i.sin_cos();
    duration * (-3.5 * d_a / plane_el.a - 5.0 * si * ci * d_i) * rate
}

/// Relative state of `sc` with respect to `sat` in the satellite's local frame,
/// computed from the absolute Cartesian states.
pub fn rtn_exact(
    sc: &crate::astro::CartesianState,
    sat: &crate::astro::CartesianState,
) -> RtnState {
    let dr = sc.position - sat.position;
    let dv = sc.velocity - sat.velocity;
    let p = sat.to_tnr(&dr);
    let v = sat.to_tnr(&dv);
    RtnState {
        r_t: p.x,
        r_n: p.y,
        r_r: p.z,
        v_t: v.x,
        v_n: v.y,
        v_r: v.z,
    }
}

/// Argument of latitude of a circular satellite, wrapped.
pub fn arg_lat(el: &MeanElements) -> f64 {
    wrap_pi(el.argp + el.mean_anomaly)
}
