//! Synthesis of maneuver-free inspection orbits that sweep every satellite of
//! one orbital plane, one flyby per spacecraft revolution.

use std::f64::consts::TAU;

use thiserror::Error;

use crate::astro::{
    mean_from_true, mean_to_cartesian, propagate_mean, secular_rates, wrap_pi, Constants,
    MeanElements, SecularRates,
};
use crate::relative::{delta_raan_drift, flyby_relative_speed_exact, rtn_exact, RtnState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InspectionError {
    #[error("infeasible plane: {0}")]
    InfeasiblePlane(String),
    #[error("coefficient {name} = {value} outside [-1, 1]")]
    InvalidCoefficient { name: &'static str, value: f64 },
}

/// One orbital plane of a constellation with evenly phased satellites.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitalPlane {
    pub constellation_id: u32,
    pub plane_id: u32,
    pub a0: f64,
    pub i0: f64,
    pub raan0: f64,
    pub n_sats: usize,
    /// Argument of latitude of satellite 0 at t = 0.
    pub phase0: f64,
}

impl OrbitalPlane {
    /// Elements of satellite `k` at t = 0.
    pub fn satellite(&self, k: usize) -> MeanElements {
        let u = self.phase0 + TAU * k as f64 / self.n_sats as f64;
        MeanElements::circular(self.a0, self.i0, self.raan0, u, 0.0)
    }

    pub fn satellite_at(&self, k: usize, epoch: f64, c: &Constants) -> MeanElements {
        propagate_mean(&self.satellite(k), epoch, c)
    }

    pub fn rates(&self, c: &Constants) -> SecularRates {
        secular_rates(&self.satellite(0), c)
    }

    /// Nodal period of the satellites.
    pub fn nodal_period(&self, c: &Constants) -> f64 {
        TAU / self.rates(c).arg_lat()
    }

    pub fn raan_at(&self, epoch: f64, c: &Constants) -> f64 {
        wrap_pi(self.raan0 + self.rates(c).raan * epoch)
    }

    /// Epoch of the ascending-node crossing of satellite `k` closest to `near`.
    pub fn node_crossing(&self, k: usize, near: f64, c: &Constants) -> f64 {
        let rate = self.rates(c).arg_lat();
        let u0 = self.phase0 + TAU * k as f64 / self.n_sats as f64;
        let revs = ((near * rate + u0) / TAU).round();
        (revs * TAU - u0) / rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlybyLimits {
    pub dr_flyby: f64,
    pub dv_flyby: f64,
}

impl Default for FlybyLimits {
    fn default() -> Self {
        Self { dr_flyby: 50.0, dv_flyby: 0.15 }
    }
}

/// Spacecraft-minus-satellite offsets at the start of the inspection.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InspectionOffsets {
    /// Nominal offset `2 a0 / (3 N)`, before correction.
    pub d_a: f64,
    pub d_e: f64,
    pub d_i: f64,
    pub d_raan0: f64,
    pub d_argp0: f64,
    pub d_u0: f64,
    pub d_a_correction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InspectionOrbit {
    pub elements: MeanElements,
    pub plane: OrbitalPlane,
    pub start_sat: usize,
    pub t_start: f64,
    pub dt_stay: f64,
    pub k_i: f64,
    pub k_omega: f64,
    pub offsets: InspectionOffsets,
    pub delta_r0: f64,
    pub d_i_max: f64,
    pub raan_slack: f64,
}

impl InspectionOrbit {
    pub fn t_end(&self) -> f64 {
        self.t_start + self.dt_stay
    }

    /// Index of the satellite met at flyby `m` (counting from 0).
    pub fn flyby_sat(&self, m: usize) -> usize {
        let n = self.plane.n_sats;
        (self.start_sat + n - m % n) % n
    }

    /// Predicted epoch of flyby `m`.
    pub fn flyby_epoch(&self, m: usize, c: &Constants) -> f64 {
        let n = self.plane.n_sats as f64;
        self.t_start + m as f64 * (n + 1.0) / n * self.plane.nodal_period(c)
    }

    /// Spacecraft elements at the end of the stay.
    pub fn end_elements(&self, c: &Constants) -> MeanElements {
        propagate_mean(&self.elements, self.dt_stay, c)
    }
}

/// Coast time until a satellite at argument of latitude `u0` reaches its node.
pub fn wait_time(u0: f64, n0: f64) -> f64 {
    let w = (TAU - u0).rem_euclid(TAU);
    // rem_euclid can return TAU itself for tiny negative inputs.
    if w >= TAU { 0.0 } else { w / n0 }
}

pub fn stay_duration(n_sats: usize, t0: f64) -> f64 {
    let n = n_sats as f64;
    (n - 1.0) * (n + 1.0) / n * t0
}

/// Nominal semi-major axis offset and eccentricity for `n_sats` satellites.
fn in_plane_offsets(plane: &OrbitalPlane, delta_r0: f64) -> (f64, f64) {
    let d_a = 2.0 * plane.a0 / (3.0 * plane.n_sats as f64);
    let e = (d_a - delta_r0) / (plane.a0 + d_a);
    (d_a, e)
}

/// Half of the spacecraft's perigee drift over the stay.
fn half_argp_drift(plane: &OrbitalPlane, d_a: f64, d_e: f64, d_i: f64, c: &Constants) -> f64 {
    let sc = MeanElements::new(plane.a0 + d_a, d_e, plane.i0 + d_i, 0.0, 0.0, 0.0, 0.0);
    0.5 * secular_rates(&sc, c).argp * stay_duration(plane.n_sats, plane.nodal_period(c))
}

/// Largest inclination offset keeping the flyby speed under `dv_flyby`.
///
/// The spacecraft passes the satellite's node with its perigee anywhere within
/// the drift band, so the speed is checked both at perigee and at the band's
/// edge, where the radial rate is largest. Trimming moves the flybys slightly
/// off perigee, so the speed is held [`SPEED_MARGIN`] under the limit.
pub const SPEED_MARGIN: f64 = 5e-3;

pub fn max_inclination_offset(
    plane: &OrbitalPlane,
    d_a: f64,
    d_e: f64,
    dv_flyby: f64,
    c: &Constants,
) -> Result<f64, InspectionError> {
    let sat = plane.satellite(0);
    let sc = MeanElements::new(plane.a0 + d_a, d_e, plane.i0, 0.0, 0.0, 0.0, 0.0);
    let dv_t = flyby_relative_speed_exact(&sc, &sat, c);
    if dv_t > dv_flyby {
        return Err(InspectionError::InfeasiblePlane(format!(
            "in-plane flyby speed {:.1} m/s exceeds the {:.1} m/s limit",
            dv_t * 1e3,
            dv_flyby * 1e3
        )));
    }
    let v0 = (c.mu / plane.a0).sqrt();
    let p = sc.semi_latus_rectum();
    let f_edge = half_argp_drift(plane, d_a, d_e, 0.0, c).abs();
    let mut d_i_max = f64::INFINITY;
    for f in [0.0, f_edge] {
        let v_h = (c.mu / p).sqrt() * (1.0 + d_e * f.cos());
        let v_r = (c.mu / p).sqrt() * d_e * f.sin();
        // |v_sc - v_sat|^2 = v_h^2 + v0^2 - 2 v_h v0 cos(di) + v_r^2
        let dv = dv_flyby * (1.0 - SPEED_MARGIN);
        let cos_di = (v_h * v_h + v0 * v0 + v_r * v_r - dv * dv) / (2.0 * v_h * v0);
        let di = if cos_di >= 1.0 { 0.0 } else { cos_di.max(-1.0).acos() };
        d_i_max = d_i_max.min(di);
    }
    Ok(d_i_max)
}

/// Free RAAN offset left once the drift over the stay is centered.
pub fn raan_offset_slack(
    plane: &OrbitalPlane,
    d_raan_drift_total: f64,
    dr_flyby: f64,
    delta_r0: f64,
) -> Result<f64, InspectionError> {
    let half_width = (dr_flyby * dr_flyby - delta_r0 * delta_r0).sqrt();
    let span = (plane.a0 * d_raan_drift_total * plane.i0.sin()).abs();
    if span > 2.0 * half_width {
        return Err(InspectionError::InfeasiblePlane(format!(
            "cross-track drift {span:.1} km exceeds twice the {half_width:.1} km bound"
        )));
    }
    let slack = half_width / (plane.a0 * plane.i0.sin()) - (d_raan_drift_total / 2.0).abs();
    Ok(slack.max(0.0))
}

/// Start-independent part of an inspection orbit: the spacecraft elements
/// relative to a satellite sitting at its ascending node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InspectionShape {
    pub plane: OrbitalPlane,
    pub k_i: f64,
    pub k_omega: f64,
    pub delta_r0: f64,
    pub offsets: InspectionOffsets,
    pub a: f64,
    pub e: f64,
    pub argp0: f64,
    pub mean_anomaly0: f64,
    pub dt_stay: f64,
    pub d_i_max: f64,
    pub raan_slack: f64,
}

struct FlybySample {
    m: f64,
    rtn: RtnState,
}

/// Relative states at flybys `ms`, with the satellite of flyby 0 at its node
/// at the epoch of `sc` and node `sat_raan`.
fn sample_flybys(
    plane: &OrbitalPlane,
    sc: &MeanElements,
    sat_raan: f64,
    ms: &[usize],
    c: &Constants,
) -> Option<Vec<FlybySample>> {
    let n = plane.n_sats as f64;
    let t_step = (n + 1.0) / n * plane.nodal_period(c);
    ms.iter()
        .map(|&m| {
            let dt = m as f64 * t_step;
            let sat = MeanElements::circular(plane.a0, plane.i0, sat_raan, -TAU * m as f64 / n, sc.epoch);
            let a = mean_to_cartesian(&propagate_mean(sc, dt, c), c).ok()?;
            let b = mean_to_cartesian(&propagate_mean(&sat, dt, c), c).ok()?;
            Some(FlybySample { m: m as f64, rtn: rtn_exact(&a, &b) })
        })
        .collect()
}

/// Extremes over `m in [0, last]` of the parabola through three samples.
fn quadratic_range(s: &[FlybySample], f: impl Fn(&RtnState) -> f64) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = s.iter().map(|x| (x.m, f(&x.rtn))).collect();
    let mut lo = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let mut hi = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if let [(x0, y0), (x1, y1), (x2, y2)] = pts[..] {
        let d01 = (y1 - y0) / (x1 - x0);
        let d12 = (y2 - y1) / (x2 - x1);
        let curv = (d12 - d01) / (x2 - x0);
        if curv.abs() > 0.0 {
            let x_v = 0.5 * (x0 + x1) - d01 / (2.0 * curv);
            if x_v > x0 && x_v < x2 {
                let y_v = y0 + d01 * (x_v - x0) + curv * (x_v - x0) * (x_v - x1);
                lo = lo.min(y_v);
                hi = hi.max(y_v);
            }
        }
    }
    (lo, hi)
}

/// Runs the analytic synthesis and then trims the semi-major axis, the
/// initial mean anomaly and the eccentricity so that the first and last
/// flybys sit exactly at zero along-track offset and the radial offset is
/// centered on `delta_r0` across the sweep.
pub fn inspection_shape(
    plane: &OrbitalPlane,
    k_i: f64,
    k_omega: f64,
    delta_r0: f64,
    limits: &FlybyLimits,
    c: &Constants,
) -> Result<InspectionShape, InspectionError> {
    for (name, value) in [("k_i", k_i), ("k_omega", k_omega)] {
        if !(value.abs() <= 1.0) {
            return Err(InspectionError::InvalidCoefficient { name, value });
        }
    }
    if plane.n_sats < 2 {
        return Err(InspectionError::InfeasiblePlane("a plane needs at least two satellites".into()));
    }
    if !(delta_r0 >= 0.0 && delta_r0 < limits.dr_flyby) {
        return Err(InspectionError::InfeasiblePlane(format!(
            "radial offset {delta_r0} km not below the {} km range limit",
            limits.dr_flyby
        )));
    }
    let sat_rates = plane.rates(c);
    let t0 = TAU / sat_rates.arg_lat();
    let dt_stay = stay_duration(plane.n_sats, t0);
    let (d_a, e_nominal) = in_plane_offsets(plane, delta_r0);
    if e_nominal <= 0.0 {
        return Err(InspectionError::InfeasiblePlane("semi-major axis offset below the radial offset".into()));
    }
    let d_i_max = max_inclination_offset(plane, d_a, e_nominal, limits.dv_flyby, c)?;
    let d_i = k_i * d_i_max;
    let i_sc = plane.i0 + d_i;

    let plane_el = plane.satellite(0);
    let lin_drift = delta_raan_drift(d_a, d_i, &plane_el, dt_stay, c).value;
    let last = plane.n_sats - 1;
    let mid = last / 2;
    let ms: Vec<usize> = if mid > 0 && mid < last { vec![0, mid, last] } else { vec![0, last] };

    // Unknowns: semi-major axis correction, perigee radius and the true
    // anomaly at the first flyby. Perigee and anomaly are nearly decoupled
    // from the axis, so a few fixed-point passes settle all three.
    let mut d_a_c = 0.0;
    let mut r_p = (plane.a0 + d_a) * (1.0 - e_nominal);
    let mut nu0 = f64::NAN;
    let mut raan_slack = 0.0;
    let mut d_raan0 = 0.0;
    let mut argp0 = 0.0;
    let mut samples = Vec::new();
    let t_last = last as f64 * (plane.n_sats as f64 + 1.0) / plane.n_sats as f64 * t0;
    for _ in 0..20 {
        let a = plane.a0 + d_a + d_a_c;
        let e = 1.0 - r_p / a;
        let probe = MeanElements::new(a, e, i_sc, 0.0, 0.0, 0.0, 0.0);
        let sc_rates = secular_rates(&probe, c);
        let exact_drift = (sc_rates.raan - sat_rates.raan) * dt_stay;
        // The wider of the two drift estimates keeps the slack conservative.
        let drift_bound = if exact_drift.abs() > lin_drift.abs() { exact_drift } else { lin_drift };
        raan_slack = raan_offset_slack(plane, drift_bound, limits.dr_flyby, delta_r0)?;
        d_raan0 = -exact_drift / 2.0 + k_omega * raan_slack;
        argp0 = -0.5 * sc_rates.argp * dt_stay;
        if nu0.is_nan() {
            // Where the satellite's along-track axis crosses the spacecraft orbit.
            nu0 = -d_raan0 * plane.i0.cos() - argp0;
        }
        let sc = MeanElements::new(a, e, i_sc, d_raan0, argp0, mean_from_true(nu0, e), 0.0);
        samples = sample_flybys(plane, &sc, 0.0, &ms, c)
            .ok_or_else(|| InspectionError::InfeasiblePlane("flyby geometry is degenerate".into()))?;
        let first = samples[0].rtn;
        let end = samples[samples.len() - 1].rtn;
        let jac = (1.0 + e).powi(2) / (1.0 - e * e).powf(1.5);
        let du_first = first.r_t / r_p;
        let du_end = end.r_t / r_p;
        let (lo, hi) = quadratic_range(&samples, |r| r.r_r);
        // Radial samples are only meaningful once the flybys line up.
        let aligned = end.r_t.abs() < 1.0;
        let step_r = if aligned { 0.5 * (lo + hi) - delta_r0 } else { 0.0 };
        nu0 -= du_first;
        d_a_c += (du_end - du_first) / (jac * t_last) * a / (1.5 * sc_rates.mean_anomaly);
        r_p -= step_r;
        if aligned && first.r_t.abs() < 1e-5 && end.r_t.abs() < 1e-5 && step_r.abs() < 1e-5 {
            break;
        }
    }
    let a = plane.a0 + d_a + d_a_c;
    let e = 1.0 - r_p / a;
    let mean_anomaly0 = mean_from_true(nu0, e);

    for s in &samples {
        let range = (s.rtn.r_t.powi(2) + s.rtn.r_n.powi(2) + s.rtn.r_r.powi(2)).sqrt();
        let speed = (s.rtn.v_t.powi(2) + s.rtn.v_n.powi(2) + s.rtn.v_r.powi(2)).sqrt();
        if !(range < limits.dr_flyby && speed < limits.dv_flyby) {
            return Err(InspectionError::InfeasiblePlane(format!(
                "predicted flyby {} at {range:.2} km, {:.1} m/s breaks the limits",
                s.m,
                speed * 1e3
            )));
        }
    }

    let sc = MeanElements::new(a, e, i_sc, d_raan0, argp0, mean_anomaly0, 0.0);
    Ok(InspectionShape {
        plane: *plane,
        k_i,
        k_omega,
        delta_r0,
        offsets: InspectionOffsets {
            d_a,
            d_e: e,
            d_i,
            d_raan0,
            d_argp0: argp0,
            d_u0: sc.mean_arg_lat(),
            d_a_correction: d_a_c,
        },
        a,
        e,
        argp0,
        mean_anomaly0: sc.mean_anomaly,
        dt_stay,
        d_i_max,
        raan_slack,
    })
}

impl InspectionShape {
    /// Places the shape on `start_sat`, first flyby after the wait from `t0`.
    pub fn instantiate(&self, start_sat: usize, t0: f64, c: &Constants) -> InspectionOrbit {
        let plane = &self.plane;
        let rates = plane.rates(c);
        let sat = plane.satellite_at(start_sat % plane.n_sats, t0, c);
        let u = sat.mean_arg_lat().rem_euclid(TAU);
        let t_start = t0 + wait_time(u, rates.arg_lat());
        let raan = plane.raan_at(t_start, c) + self.offsets.d_raan0;
        InspectionOrbit {
            elements: MeanElements::new(
                self.a,
                self.e,
                plane.i0 + self.offsets.d_i,
                raan,
                self.argp0,
                self.mean_anomaly0,
                t_start,
            ),
            plane: *plane,
            start_sat: start_sat % plane.n_sats,
            t_start,
            dt_stay: self.dt_stay,
            k_i: self.k_i,
            k_omega: self.k_omega,
            offsets: self.offsets,
            delta_r0: self.delta_r0,
            d_i_max: self.d_i_max,
            raan_slack: self.raan_slack,
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn compute_inspection_orbit(
    plane: &OrbitalPlane,
    start_sat: usize,
    t0: f64,
    k_i: f64,
    k_omega: f64,
    delta_r0: f64,
    limits: &FlybyLimits,
    c: &Constants,
) -> Result<InspectionOrbit, InspectionError> {
    Ok(inspection_shape(plane, k_i, k_omega, delta_r0, limits, c)?.instantiate(start_sat, t0, c))
}
