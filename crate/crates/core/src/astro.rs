//! Mean orbital elements, secular J2 propagation and Cartesian conversion.
//!
//! Mean elements are propagated with the first-order secular J2 model: `a`,
//! `e` and `i` are constant while the node, the argument of perigee and the
//! mean anomaly drift linearly. For conjunction geometry the mean elements are
//! converted to Cartesian states directly, as if they were osculating.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AstroError {
    #[error("Kepler equation did not converge (M = {mean_anomaly}, e = {eccentricity})")]
    KeplerNoConvergence { mean_anomaly: f64, eccentricity: f64 },
    #[error("state is not a bound elliptic orbit (energy = {energy})")]
    Unbound { energy: f64 },
}

/// Physical constants of the central body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    /// Gravitational parameter, km^3/s^2.
    pub mu: f64,
    /// Equatorial radius, km.
    pub re: f64,
    /// Second zonal harmonic.
    pub j2: f64,
}

impl Constants {
    pub const EARTH: Constants = Constants {
        mu: 398_600.441_8,
        re: 6_378.137,
        j2: 1.082_626_68e-3,
    };
}

impl Default for Constants {
    fn default() -> Self {
        Self::EARTH
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_pi(angle: f64) -> f64 {
    let mut x = angle.rem_euclid(TAU);
    if x > PI {
        x -= TAU;
    }
    x
}

/// Shortest signed arc from `from` to `to`, in `(-pi, pi]`.
pub fn angle_diff(to: f64, from: f64) -> f64 {
    wrap_pi(to - from)
}

/// Mean classical elements at an epoch (seconds since mission start).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanElements {
    pub a: f64,
    pub e: f64,
    pub i: f64,
    pub raan: f64,
    pub argp: f64,
    pub mean_anomaly: f64,
    pub epoch: f64,
}

impl MeanElements {
    /// Builds elements with all angles wrapped into `(-pi, pi]`.
    pub fn new(a: f64, e: f64, i: f64, raan: f64, argp: f64, mean_anomaly: f64, epoch: f64) -> Self {
        Self {
            a,
            e,
            i,
            raan: wrap_pi(raan),
            argp: wrap_pi(argp),
            mean_anomaly: wrap_pi(mean_anomaly),
            epoch,
        }
    }

    /// Circular orbit with the argument of latitude carried in the mean anomaly.
    pub fn circular(a: f64, i: f64, raan: f64, arg_lat: f64, epoch: f64) -> Self {
        Self::new(a, 0.0, i, raan, 0.0, arg_lat, epoch)
    }

    pub fn is_valid(&self, c: &Constants) -> bool {
        self.a > c.re
            && (0.0..1.0).contains(&self.e)
            && self.i > 0.0
            && self.i < PI
            && [self.raan, self.argp, self.mean_anomaly, self.epoch]
                .iter()
                .all(|x| x.is_finite())
    }

    /// Mean argument of latitude `argp + M`, wrapped.
    pub fn mean_arg_lat(&self) -> f64 {
        wrap_pi(self.argp + self.mean_anomaly)
    }

    pub fn semi_latus_rectum(&self) -> f64 {
        self.a * (1.0 - self.e * self.e)
    }

    /// Eccentricity vector `(e cos w, e sin w)` in the orbit's nodal frame.
    pub fn ecc_vector(&self) -> (f64, f64) {
        (self.e * self.argp.cos(), self.e * self.argp.sin())
    }
}

/// Secular J2 rates of the node, the argument of perigee and the mean anomaly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecularRates {
    pub raan: f64,
    pub argp: f64,
    pub mean_anomaly: f64,
}

impl SecularRates {
    /// Rate of the mean argument of latitude.
    pub fn arg_lat(&self) -> f64 {
        self.argp + self.mean_anomaly
    }
}

pub fn mean_motion(a: f64, c: &Constants) -> f64 {
    (c.mu / (a * a * a)).sqrt()
}

pub fn secular_rates(el: &MeanElements, c: &Constants) -> SecularRates {
    let n = mean_motion(el.a, c);
    let p = el.semi_latus_rectum();
    let k = 1.5 * c.j2 * (c.re / p).powi(2) * n;
    let (s, co) = el.i.sin_cos();
    let s2 = s * s;
    SecularRates {
        raan: -k * co,
        argp: k * (2.0 - 2.5 * s2),
        mean_anomaly: n + k * (1.0 - 1.5 * s2) * (1.0 - el.e * el.e).sqrt(),
    }
}

/// Advances the angles at their secular rates; `a`, `e`, `i` are untouched.
pub fn propagate_mean(el: &MeanElements, dt: f64, c: &Constants) -> MeanElements {
    if dt == 0.0 {
        return *el;
    }
    let r = secular_rates(el, c);
    MeanElements {
        a: el.a,
        e: el.e,
        i: el.i,
        raan: wrap_pi(el.raan + r.raan * dt),
        argp: wrap_pi(el.argp + r.argp * dt),
        mean_anomaly: wrap_pi(el.mean_anomaly + r.mean_anomaly * dt),
        epoch: el.epoch + dt,
    }
}

/// Propagates to an absolute epoch.
pub fn propagate_to(el: &MeanElements, epoch: f64, c: &Constants) -> MeanElements {
    propagate_mean(el, epoch - el.epoch, c)
}

pub fn orbital_period(a: f64, c: &Constants) -> f64 {
    TAU * (a * a * a / c.mu).sqrt()
}

/// Solves `E - e sin E = M`; the result lies in the same 2*pi branch as `M`.
pub fn solve_kepler(mean_anomaly: f64, e: f64) -> Result<f64, AstroError> {
    const TOL: f64 = 1e-13;
    const MAX_ITER: usize = 50;

    let fault = AstroError::KeplerNoConvergence {
        mean_anomaly,
        eccentricity: e,
    };
    if !mean_anomaly.is_finite() || !(0.0..1.0).contains(&e) {
        return Err(fault);
    }
    if e == 0.0 {
        return Ok(mean_anomaly);
    }
    let m = wrap_pi(mean_anomaly);
    let branch = mean_anomaly - m;
    let residual = |big_e: f64| big_e - e * big_e.sin() - m;

    let mut big_e = if e > 0.8 { PI.copysign(m) } else { m };
    for _ in 0..MAX_ITER {
        let f = residual(big_e);
        if f.abs() < TOL {
            return Ok(big_e + branch);
        }
        let step = f / (1.0 - e * big_e.cos());
        big_e -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    if residual(big_e).abs() < 1e-12 {
        return Ok(big_e + branch);
    }

    // Bisection fallback: the residual is monotone on [-pi, pi].
    let (mut lo, mut hi) = (-PI, PI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let big_e = 0.5 * (lo + hi);
    if residual(big_e).abs() < 1e-12 {
        Ok(big_e + branch)
    } else {
        Err(fault)
    }
}

pub fn true_from_eccentric(big_e: f64, e: f64) -> f64 {
    let half = 0.5 * big_e;
    2.0 * ((1.0 + e).sqrt() * half.sin()).atan2((1.0 - e).sqrt() * half.cos())
}

pub fn eccentric_from_true(nu: f64, e: f64) -> f64 {
    let half = 0.5 * nu;
    2.0 * ((1.0 - e).sqrt() * half.sin()).atan2((1.0 + e).sqrt() * half.cos())
}

pub fn true_from_mean(mean_anomaly: f64, e: f64) -> Result<f64, AstroError> {
    Ok(true_from_eccentric(solve_kepler(mean_anomaly, e)?, e))
}

pub fn mean_from_true(nu: f64, e: f64) -> f64 {
    let big_e = eccentric_from_true(nu, e);
    big_e - e * big_e.sin()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub epoch: f64,
}

impl CartesianState {
    /// Unit vectors (radial, transverse, normal) of this state's local frame.
    pub fn rtn_axes(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let r_hat = self.position.normalize();
        let n_hat = self.position.cross(&self.velocity).normalize();
        let t_hat = n_hat.cross(&r_hat);
        (r_hat, t_hat, n_hat)
    }

    /// Expresses an inertial vector in this state's (T, N, R) components.
    pub fn to_tnr(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let (r_hat, t_hat, n_hat) = self.rtn_axes();
        Vector3::new(v.dot(&t_hat), v.dot(&n_hat), v.dot(&r_hat))
    }

    /// Maps (T, N, R) components back to an inertial vector.
    pub fn from_tnr(&self, tnr: &Vector3<f64>) -> Vector3<f64> {
        let (r_hat, t_hat, n_hat) = self.rtn_axes();
        t_hat * tnr.x + n_hat * tnr.y + r_hat * tnr.z
    }
}

pub fn mean_to_cartesian(el: &MeanElements, c: &Constants) -> Result<CartesianState, AstroError> {
    let nu = true_from_mean(el.mean_anomaly, el.e)?;
    let p = el.semi_latus_rectum();
    let r = p / (1.0 + el.e * nu.cos());
    let u = el.argp + nu;
    let (su, cu) = u.sin_cos();
    let (so, co) = el.raan.sin_cos();
    let (si, ci) = el.i.sin_cos();

    // Perifocal-to-inertial via the argument of latitude.
    let r_hat = Vector3::new(co * cu - so * su * ci, so * cu + co * su * ci, su * si);
    let t_hat = Vector3::new(-co * su - so * cu * ci, -so * su + co * cu * ci, cu * si);
    let sqrt_mu_p = (c.mu / p).sqrt();
    let v_r = sqrt_mu_p * el.e * nu.sin();
    let v_t = sqrt_mu_p * (1.0 + el.e * nu.cos());
    Ok(CartesianState {
        position: r_hat * r,
        velocity: r_hat * v_r + t_hat * v_t,
        epoch: el.epoch,
    })
}

/// Inverse of [`mean_to_cartesian`]. Circular orbits get `argp = 0` with the
/// argument of latitude in the mean anomaly.
pub fn cartesian_to_mean(s: &CartesianState, c: &Constants) -> Result<MeanElements, AstroError> {
    let r = s.position;
    let v = s.velocity;
    let rn = r.norm();
    let energy = 0.5 * v.norm_squared() - c.mu / rn;
    if energy >= 0.0 {
        return Err(AstroError::Unbound { energy });
    }
    let a = -c.mu / (2.0 * energy);
    let h = r.cross(&v);
    let hn = h.norm();
    let i = (h.z / hn).clamp(-1.0, 1.0).acos();
    let node = Vector3::new(-h.y, h.x, 0.0);
    let raan = if node.norm() > 1e-12 * hn { node.y.atan2(node.x) } else { 0.0 };
    let e_vec = v.cross(&h) / c.mu - r / rn;
    let e = e_vec.norm();

    // Argument of latitude measured from the node in the orbit plane.
    let (so, co) = raan.sin_cos();
    let node_hat = Vector3::new(co, so, 0.0);
    let in_plane = h.cross(&node_hat) / hn;
    let u = r.dot(&in_plane).atan2(r.dot(&node_hat));

    if e < 1e-12 {
        return Ok(MeanElements::new(a, 0.0, i, raan, 0.0, u, s.epoch));
    }
    let argp = e_vec.dot(&in_plane).atan2(e_vec.dot(&node_hat));
    let nu = u - argp;
    Ok(MeanElements::new(a, e, i, raan, argp, mean_from_true(nu, e), s.epoch))
}
