//! Velocity-increment estimates between inspection orbits, transfer-time
//! selection by node alignment and an impulsive realization of a transfer.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

use crate::astro::{
    cartesian_to_mean, mean_from_true, mean_to_cartesian, propagate_mean, propagate_to,
    secular_rates, wrap_pi, AstroError, Constants, MeanElements,
};
use crate::inspection::{stay_duration, InspectionOrbit, OrbitalPlane};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransferError {
    #[error("target unreachable within {dt:.0} s: {reason}")]
    TargetUnreachable { dt: f64, reason: String },
    #[error(transparent)]
    Astro(#[from] AstroError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TransferEstimate {
    pub dv_total: f64,
    /// In-plane cost, phasing included.
    pub dv_inplane: f64,
    pub dv_plane: f64,
    /// Share of `dv_inplane` spent on phase beyond what burn placement absorbs.
    pub dv_phasing: f64,
    pub dt: f64,
    pub raan_residual: f64,
}

/// Impulse at `epoch` with components (radial, transverse, normal) in the
/// spacecraft's local frame, km/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpulseManeuver {
    pub epoch: f64,
    pub dv_rtn: Vector3<f64>,
}

/// Cheap estimate of the cost to go from `dep` to `arr` in `dt` seconds.
///
/// Plane change and the two-burn semi-major-axis/eccentricity change are
/// combined root-sum-square. Phase is free as long as splitting the
/// semi-major-axis change between an early and a late burn pair covers it;
/// the remainder is charged as an extra drift orbit.
pub fn estimate_transfer_dv(dep: &MeanElements, arr: &MeanElements, dt: f64, c: &Constants) -> TransferEstimate {
    let d = propagate_mean(dep, dt, c);
    let a_bar = 0.5 * (d.a + arr.a);
    let v_bar = (c.mu / a_bar).sqrt();
    let i_bar = 0.5 * (d.i + arr.i);
    let d_i = arr.i - d.i;
    let mut d_raan = wrap_pi(arr.raan - d.raan);

    let (ex0, ey0) = d.ecc_vector();
    let (ex1, ey1) = arr.ecc_vector();
    let d_e = (ex1 - ex0).hypot(ey1 - ey0);
    let big_d = arr.a - d.a;
    let x = big_d / a_bar;
    let base = 0.25 * v_bar * ((x + d_e).abs() + (x - d_e).abs());

    let mut dv_phasing = 0.0;
    if dt > 0.0 {
        let n_bar = v_bar / a_bar;
        let period = TAU / n_bar;
        let w = (dt - 1.5 * period).max(0.5 * period);
        let f_max = if big_d == 0.0 { 0.0 } else { (1.0 - d_e * a_bar / big_d.abs()).max(0.0) };
        // Phase gained by doing the whole change before the drift.
        let g_full = -1.5 * n_bar / a_bar * big_d * w;
        let g = g_full * f_max;
        let (lo, hi) = (g.min(0.0), g.max(0.0));
        let phi = wrap_pi(arr.mean_arg_lat() - d.mean_arg_lat() + d_raan * i_bar.cos());
        let (excess, reached) = [-TAU, 0.0, TAU]
            .iter()
            .map(|m| {
                let p = phi + m;
                let q = p.clamp(lo, hi);
                ((p - q).abs(), q)
            })
            .fold((f64::INFINITY, 0.0), |acc, e| if e.0 < acc.0 { e } else { acc });
        dv_phasing = a_bar * excess / (1.5 * w);
        // The early share of the change also shifts the J2 node drift.
        let early = if g_full == 0.0 { 0.0 } else { reached / g_full };
        let raan_rate_slope = -3.5 * secular_rates(&d, c).raan / a_bar;
        d_raan -= raan_rate_slope * big_d * early * w;
    }
    let dv_plane = v_bar * d_i.hypot(d_raan * i_bar.sin());
    let dv_inplane = base + dv_phasing;
    TransferEstimate {
        dv_total: dv_inplane.hypot(dv_plane),
        dv_inplane,
        dv_plane,
        dv_phasing,
        dt,
        raan_residual: d_raan,
    }
}

/// Node offset the next inspection orbit will use and its node rate, from
/// its nominal geometry (no trimming).
fn nominal_node(plane: &OrbitalPlane, k_i: f64, d_i_max: f64, delta_r0: f64, c: &Constants) -> (f64, f64) {
    let n = plane.n_sats as f64;
    let d_a = 2.0 * plane.a0 / (3.0 * n);
    let e = ((d_a - delta_r0) / (plane.a0 + d_a)).max(0.0);
    let sc = MeanElements::new(plane.a0 + d_a, e, plane.i0 + k_i * d_i_max, 0.0, 0.0, 0.0, 0.0);
    let sc_rate = secular_rates(&sc, c).raan;
    let stay = stay_duration(plane.n_sats, plane.nodal_period(c));
    (-0.5 * (sc_rate - plane.rates(c).raan) * stay, sc_rate)
}

/// Transfer duration in `[dt_min, dt_max]` from the end of the previous stay,
/// by the node gap between the two inspection orbits. The next inspection
/// orbit is placed on its plane at the window start and then drifts at its
/// own rate, so the gap moves with the difference of the two inspection
/// orbits' node rates. `d_i_max` is the next plane's inclination bound.
pub fn select_transfer_time(
    prev: &InspectionOrbit,
    next_plane: &OrbitalPlane,
    k_i_next: f64,
    d_i_max: f64,
    dt_min: f64,
    dt_max: f64,
    c: &Constants,
) -> f64 {
    let end = prev.end_elements(c);
    let (offset, rate) = nominal_node(next_plane, k_i_next, d_i_max, prev.delta_r0, c);
    let node0 = next_plane.raan_at(end.epoch + dt_min, c) + offset;
    let gap = |dt: f64| {
        let t = end.epoch + dt;
        wrap_pi(propagate_to(&end, t, c).raan - node0 - rate * (dt - dt_min))
    };
    let d1 = gap(dt_min);
    // Stay on d1's branch so a wrap is not taken for a crossing.
    let d2 = d1 + wrap_pi(gap(dt_max) - d1);
    alignment_time(d1, d2, dt_min, dt_max)
}

/// Node-gap rule on a linear drift between the window ends: the zero
/// crossing if the sign changes, otherwise the end with the smaller gap;
/// ties go to `dt_min`.
fn alignment_time(d1: f64, d2: f64, dt_min: f64, dt_max: f64) -> f64 {
    if d1 == 0.0 {
        return dt_min;
    }
    if d2 == 0.0 {
        return dt_max;
    }
    if d1.signum() != d2.signum() {
        let rate = (d2 - d1) / (dt_max - dt_min);
        return (dt_min - d1 / rate).clamp(dt_min, dt_max);
    }
    if d2.abs() < d1.abs() { dt_max } else { dt_min }
}

/// Impulse schedules for every transfer of a tour, in visit order. The
/// error carries the 1-based index of the transfer that failed.
pub fn realize_solution(
    sol: &crate::search::SequenceSolution,
    c: &Constants,
) -> Result<Vec<Vec<ImpulseManeuver>>, (usize, TransferError)> {
    sol.visits
        .windows(2)
        .enumerate()
        .map(|(j, w)| {
            let dep = w[0].inspection.end_elements(c);
            let target = propagate_to(&w[1].inspection.elements, w[1].t_arrive, c);
            realize_transfer(&dep, &target, w[1].t_arrive - dep.epoch, c).map_err(|e| (j + 1, e))
        })
        .collect()
}

/// Applies one impulse to mean elements propagated to its epoch.
pub fn apply_impulse(el: &MeanElements, imp: &ImpulseManeuver, c: &Constants) -> Result<MeanElements, AstroError> {
    let mut s = mean_to_cartesian(&propagate_to(el, imp.epoch, c), c)?;
    let (r_hat, t_hat, n_hat) = s.rtn_axes();
    s.velocity += r_hat * imp.dv_rtn.x + t_hat * imp.dv_rtn.y + n_hat * imp.dv_rtn.z;
    cartesian_to_mean(&s, c)
}

/// Propagates `el` through `schedule` and on to `epoch`.
pub fn apply_schedule(
    el: &MeanElements,
    schedule: &[ImpulseManeuver],
    epoch: f64,
    c: &Constants,
) -> Result<MeanElements, AstroError> {
    let mut cur = *el;
    for imp in schedule {
        cur = apply_impulse(&cur, imp, c)?;
    }
    Ok(propagate_to(&cur, epoch, c))
}

pub fn schedule_dv(schedule: &[ImpulseManeuver]) -> f64 {
    schedule.iter().map(|m| m.dv_rtn.norm()).sum()
}

/// Acceptance tolerances on (a, e, i, node, mean argument of latitude).
pub const MATCH_TOL: [f64; 5] = [0.5, 5e-4, 1e-4, 2e-3, 2e-2];

/// Element-wise mismatch of `got` against `want`, in `MATCH_TOL` order.
pub fn element_mismatch(got: &MeanElements, want: &MeanElements) -> [f64; 5] {
    [
        (got.a - want.a).abs(),
        (got.e - want.e).abs(),
        (got.i - want.i).abs(),
        wrap_pi(got.raan - want.raan).abs(),
        wrap_pi(got.mean_arg_lat() - want.mean_arg_lat()).abs(),
    ]
}

pub fn within_tolerance(got: &MeanElements, want: &MeanElements) -> bool {
    element_mismatch(got, want).iter().zip(MATCH_TOL).all(|(d, t)| *d <= t)
}

/// Epoch after (or at) `t` when the true argument of latitude of `el` equals `u`.
fn next_arg_lat_time(el: &MeanElements, u: f64, t: f64, c: &Constants) -> f64 {
    let cur = propagate_to(el, t, c);
    let rates = secular_rates(&cur, c);
    let m_at = |dt: f64| mean_from_true(u - (cur.argp + rates.argp * dt), cur.e);
    let mut dt = (m_at(0.0) - cur.mean_anomaly).rem_euclid(TAU) / rates.mean_anomaly;
    for _ in 0..2 {
        dt += wrap_pi(m_at(dt) - (cur.mean_anomaly + rates.mean_anomaly * dt)) / rates.mean_anomaly;
    }
    t + dt.max(0.0)
}

/// Argument of latitude, in the plane of `cur`, of the line where `cur` and
/// `target` intersect; `None` if the planes coincide.
fn relative_node(cur: &MeanElements, target: &MeanElements) -> Option<f64> {
    let h = |el: &MeanElements| {
        let (si, ci) = el.i.sin_cos();
        let (so, co) = el.raan.sin_cos();
        Vector3::new(si * so, -si * co, ci)
    };
    let k = h(cur).cross(&h(target));
    if k.norm() < 1e-10 {
        return None;
    }
    let (so, co) = cur.raan.sin_cos();
    let x_hat = Vector3::new(co, so, 0.0);
    let y_hat = h(cur).cross(&x_hat);
    Some(k.dot(&y_hat).atan2(k.dot(&x_hat)))
}

#[derive(Clone, Copy)]
struct Layout {
    /// Early tangential burn, or pair half an orbit apart, on the line
    /// across the final pair's axis; the first one also takes a normal
    /// component.
    early: Option<(f64, Option<f64>)>,
    /// Quarter-orbit normal burn used when no early burn fits.
    mid: Option<f64>,
    b1: f64,
    b2: f64,
    /// Allowed range of the final pair's time shift.
    shift: (f64, f64),
}

/// Unknowns: `[b1_t, b1_n, b1_r, b2_t, b2_n, e1_t, e1_n, e2_t, pair_shift]`.
const N_UNKNOWNS: usize = 9;
/// Seconds of final-pair shift per unit of the last unknown; puts the
/// line rotation on a scale similar to the burn components.
const SHIFT_SCALE: f64 = 1.0e4;

impl Layout {
    fn active(&self) -> Vec<usize> {
        match (self.early, self.mid) {
            (Some((_, Some(_))), _) => (0..9).collect(),
            (Some((_, None)), _) => vec![0, 1, 2, 3, 4, 5, 6, 8],
            (None, Some(_)) => vec![0, 1, 2, 3, 4, 6, 8],
            (None, None) => vec![0, 1, 2, 3, 4, 8],
        }
    }

    fn schedule(&self, x: &[f64]) -> Vec<ImpulseManeuver> {
        let dt = (x[8] * SHIFT_SCALE).clamp(self.shift.0, self.shift.1);
        let mut out = Vec::with_capacity(5);
        if let Some((t1, t2)) = self.early {
            out.push(ImpulseManeuver { epoch: t1, dv_rtn: Vector3::new(0.0, x[5], x[6]) });
            if let Some(t2) = t2 {
                out.push(ImpulseManeuver { epoch: t2, dv_rtn: Vector3::new(0.0, x[7], 0.0) });
            }
        }
        out.push(ImpulseManeuver { epoch: self.b1 + dt, dv_rtn: Vector3::new(x[2], x[0], x[1]) });
        if let Some(tm) = self.mid {
            out.push(ImpulseManeuver { epoch: tm + dt, dv_rtn: Vector3::new(0.0, 0.0, x[6]) });
        }
        out.push(ImpulseManeuver { epoch: self.b2 + dt, dv_rtn: Vector3::new(0.0, x[3], x[4]) });
        out
    }
}

fn residual(got: &MeanElements, want: &MeanElements) -> [f64; 6] {
    let (ex0, ey0) = got.ecc_vector();
    let (ex1, ey1) = want.ecc_vector();
    [
        (got.a - want.a) / want.a,
        ex0 - ex1,
        ey0 - ey1,
        got.i - want.i,
        wrap_pi(got.raan - want.raan) * want.i.sin(),
        wrap_pi(got.mean_arg_lat() - want.mean_arg_lat()),
    ]
}

const BURN_GAP: f64 = 60.0;
/// Largest early raise beyond the needed semi-major-axis change, as a
/// fraction of the semi-major axis.
const EARLY_RAISE_CAP: f64 = 0.02;
/// Intermediate targets when a direct solve fails.
const CONTINUATION_STEPS: usize = 5;
/// Transfers shorter than this many orbits also try the layout without
/// early burns.
const SHORT_TRANSFER_ORBITS: f64 = 4.0;

/// Line of the final burn pair between `cur` and `target`: the relative
/// node, or the eccentricity change when the planes coincide.
fn burn_axis(cur: &MeanElements, target: &MeanElements) -> f64 {
    let (ex0, ey0) = cur.ecc_vector();
    let (ex1, ey1) = target.ecc_vector();
    relative_node(cur, target).unwrap_or_else(|| (ey1 - ey0).atan2(ex1 - ex0))
}

/// Last crossings of the line `axis` by `el`, half an orbit apart and
/// ending at least `BURN_GAP` before `t_arr`. Returns both epochs and the
/// argument of latitude at the first one.
fn final_pair(el: &MeanElements, axis: f64, t_arr: f64, period: f64, c: &Constants) -> (f64, f64, f64) {
    let latest = t_arr - BURN_GAP;
    let mut b2 = (next_arg_lat_time(el, axis, latest - period, c), axis);
    let alt = (next_arg_lat_time(el, axis + PI, latest - period, c), axis + PI);
    if alt.0 > b2.0 && alt.0 <= latest || b2.0 > latest {
        b2 = alt;
    }
    if b2.0 > latest {
        b2.0 -= 0.5 * period;
    }
    (b2.0 - 0.5 * period, b2.0, b2.1 + PI)
}

/// First epoch at or after `t` when `el` crosses the line `u`, and the
/// argument of latitude it crosses at.
fn next_line_crossing(el: &MeanElements, u: f64, t: f64, c: &Constants) -> (f64, f64) {
    let a = next_arg_lat_time(el, u, t, c);
    let b = next_arg_lat_time(el, u + PI, t, c);
    if a <= b { (a, u) } else { (b, u + PI) }
}

/// Elements a fraction `s` of the way from `from` to `to`, interpolating
/// the eccentricity vector and the argument of latitude; epoch of `to`.
fn blend(from: &MeanElements, to: &MeanElements, s: f64) -> MeanElements {
    let (ex0, ey0) = from.ecc_vector();
    let (ex1, ey1) = to.ecc_vector();
    let ex = ex0 + s * (ex1 - ex0);
    let ey = ey0 + s * (ey1 - ey0);
    let argp = ey.atan2(ex);
    let u = from.mean_arg_lat() + s * wrap_pi(to.mean_arg_lat() - from.mean_arg_lat());
    MeanElements::new(
        from.a + s * (to.a - from.a),
        ex.hypot(ey),
        from.i + s * (to.i - from.i),
        from.raan + s * wrap_pi(to.raan - from.raan),
        argp,
        u - argp,
        to.epoch,
    )
}

fn sum_sq(r: &[f64; 6]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Maps unknowns to a burn schedule.
trait Plan: Copy {
    fn schedule(&self, x: &[f64]) -> Vec<ImpulseManeuver>;
}

impl Plan for Layout {
    fn schedule(&self, x: &[f64]) -> Vec<ImpulseManeuver> {
        Layout::schedule(self, x)
    }
}

/// Burns with free components, three unknowns each, at nominal epochs.
/// With `movable`, one more unknown per burn shifts its epoch within the
/// window; the schedule is then sorted by epoch.
struct Spread {
    epochs: Vec<f64>,
    movable: bool,
    window: (f64, f64),
}

impl Spread {
    fn unknowns(&self) -> usize {
        self.epochs.len() * if self.movable { 4 } else { 3 }
    }
}

impl Plan for &Spread {
    fn schedule(&self, x: &[f64]) -> Vec<ImpulseManeuver> {
        let n = self.epochs.len();
        let mut out: Vec<ImpulseManeuver> = self
            .epochs
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let epoch = if self.movable { (t + x[3 * n + k] * SHIFT_SCALE).clamp(self.window.0, self.window.1) } else { t };
                ImpulseManeuver { epoch, dv_rtn: Vector3::new(x[3 * k], x[3 * k + 1], x[3 * k + 2]) }
            })
            .collect();
        out.sort_by(|a, b| a.epoch.total_cmp(&b.epoch));
        out
    }
}

/// Shooting problem on one burn layout with a given set of free unknowns.
struct Shooter<'a, P: Plan> {
    dep: &'a MeanElements,
    target: &'a MeanElements,
    t_arr: f64,
    layout: P,
    active: Vec<usize>,
    c: &'a Constants,
}

impl<P: Plan> Shooter<'_, P> {
    fn eval(&self, x: &[f64]) -> Result<[f64; 6], TransferError> {
        let got = apply_schedule(self.dep, &self.layout.schedule(x), self.t_arr, self.c)?;
        Ok(residual(&got, self.target))
    }

    fn cost(&self, x: &[f64]) -> f64 {
        schedule_dv(&self.layout.schedule(x))
    }

    fn step(&self, x: &[f64], dx: &DVector<f64>, scale: f64) -> Vec<f64> {
        let mut out = x.to_vec();
        for (col, &j) in self.active.iter().enumerate() {
            out[j] += scale * dx[col];
        }
        out
    }

    fn jacobian(&self, x: &[f64], r: &[f64; 6]) -> Result<DMatrix<f64>, TransferError> {
        let h = 1e-6;
        let mut jac = DMatrix::zeros(6, self.active.len());
        for (col, &j) in self.active.iter().enumerate() {
            let mut xp = x.to_vec();
            xp[j] += h;
            let rp = self.eval(&xp)?;
            for i in 0..6 {
                jac[(i, col)] = (rp[i] - r[i]) / h;
            }
        }
        Ok(jac)
    }

    /// Levenberg-Marquardt on the residual. The phase row is far more
    /// sensitive than the others, and a plain Gauss-Newton step overshoots
    /// on long drifts.
    fn solve(&self, mut x: Vec<f64>) -> Result<(Vec<f64>, f64), TransferError> {
        let mut r = self.eval(&x)?;
        let mut mu = -1.0;
        let mut evals = 0;
        'outer: for _ in 0..100 {
            if sum_sq(&r).sqrt() < 1e-11 {
                break;
            }
            let jac = self.jacobian(&x, &r)?;
            let jt = jac.transpose();
            let jtj = &jt * &jac;
            let g = -(&jt * DVector::from_row_slice(&r));
            if mu < 0.0 {
                mu = 1e-6 * jtj.diagonal().max();
            }
            loop {
                evals += 1;
                if evals > 400 || mu > 1e12 {
                    break 'outer;
                }
                let mut m = jtj.clone();
                for d in 0..m.nrows() {
                    m[(d, d)] += mu;
                }
                let Some(dx) = m.cholesky().map(|ch| ch.solve(&g)) else {
                    mu *= 4.0;
                    continue;
                };
                let trial = self.step(&x, &dx, 1.0);
                match self.eval(&trial) {
                    Ok(rt) if sum_sq(&rt) < sum_sq(&r) => {
                        x = trial;
                        r = rt;
                        mu = (mu / 3.0).max(1e-15);
                        break;
                    }
                    _ => mu *= 4.0,
                }
            }
        }
        Ok((x, sum_sq(&r).sqrt()))
    }

    /// Lowers the total velocity change while keeping the residual at zero:
    /// gradient steps projected on the null space of the residual Jacobian,
    /// each followed by a restoring solve.
    fn polish(&self, mut x: Vec<f64>) -> Vec<f64> {
        let Ok(mut r) = self.eval(&x) else { return x };
        let mut cost = self.cost(&x);
        let mut size = 0.01;
        for _ in 0..40 {
            let Ok(jac) = self.jacobian(&x, &r) else { break };
            let h = 1e-7;
            let grad = DVector::from_iterator(
                self.active.len(),
                self.active.iter().map(|&j| {
                    let mut xp = x.clone();
                    xp[j] += h;
                    (self.cost(&xp) - cost) / h
                }),
            );
            let Ok(pinv) = jac.clone().pseudo_inverse(1e-12) else { break };
            let dir = -(&grad - &pinv * (&jac * &grad));
            let norm = dir.norm();
            if norm < 1e-6 {
                break;
            }
            let mut moved = false;
            while size > 1e-6 {
                let trial = self.step(&x, &dir, size / norm);
                if let Ok((y, res)) = self.solve(trial) {
                    let c_y = self.cost(&y);
                    if res < 1e-10 && c_y < cost - 1e-9 {
                        x = y;
                        cost = c_y;
                        size *= 2.0;
                        moved = true;
                        break;
                    }
                }
                size *= 0.25;
            }
            if !moved {
                break;
            }
            match self.eval(&x) {
                Ok(rt) => r = rt,
                Err(_) => break,
            }
        }
        x
    }
}

/// Impulse schedule taking `dep` onto `arr_target` at `dep.epoch + dt`.
///
/// A final pair of burns half an orbit apart on the line of the relative
/// node does the plane change, the eccentricity change along that line and
/// the rest of the semi-major-axis change. An early pair on the line across
/// it takes the other eccentricity component and the share of the
/// semi-major-axis change that fixes the phase during the drift. The early
/// raise shifts the node drift, so the final pair goes on the node line seen
/// after the early burns. All components are then solved by shooting on the
/// secular model; the early normal component is only freed if needed.
pub fn realize_transfer(
    dep: &MeanElements,
    arr_target: &MeanElements,
    dt: f64,
    c: &Constants,
) -> Result<Vec<ImpulseManeuver>, TransferError> {
    let unreachable = |reason: &str| TransferError::TargetUnreachable { dt, reason: reason.into() };
    let t_arr = dep.epoch + dt;
    let drifted = propagate_mean(dep, dt, c);
    if residual(&drifted, arr_target).iter().all(|r| r.abs() < 1e-12) {
        return Ok(Vec::new());
    }
    if !(dt > 0.0) {
        return Err(unreachable("no time for burns"));
    }

    let rates = secular_rates(&drifted, c);
    let period = TAU / rates.arg_lat();
    let v = (c.mu / arr_target.a).sqrt();
    let a = arr_target.a;
    let (ex1, ey1) = arr_target.ecc_vector();

    // Early burns on the line across the final axis. The early raise moves
    // the node drift and with it the axis, so iterate the placement.
    let start = dep.epoch + BURN_GAP;
    let (ex0, ey0) = drifted.ecc_vector();
    let mut axis = burn_axis(&drifted, arr_target);
    let mut plan = None;
    for _ in 0..4 {
        let (b1_0, _, _) = final_pair(dep, axis, t_arr, period, c);
        if b1_0 < start {
            return Err(unreachable("final burn pair does not fit"));
        }
        // Set back by the apsidal drift until arrival.
        let cross = axis + 0.5 * PI - rates.argp * (t_arr - start);
        let (t_e, u_e) = next_line_crossing(dep, cross, start, c);
        let (early, mid) = if b1_0 - 0.5 * period - BURN_GAP >= t_e {
            (Some((t_e, Some(t_e + 0.5 * period))), None)
        } else if b1_0 - BURN_GAP >= t_e {
            (Some((t_e, None)), None)
        } else {
            (None, Some(b1_0 + 0.25 * period))
        };
        let mut x = vec![0.0; N_UNKNOWNS];
        let Some((_, second)) = early else {
            plan = Some((early, mid, x));
            break;
        };
        let d_a = arr_target.a - drifted.a;
        let n = v / a;
        let drift_time = (b1_0 - second.unwrap_or(t_e)).max(1.0);
        let d_raan = wrap_pi(arr_target.raan - drifted.raan);
        let phi = wrap_pi(arr_target.mean_arg_lat() - drifted.mean_arg_lat() + d_raan * arr_target.i.cos());
        // Branch whose early share lies closest to the raise itself.
        let (lo, hi) = (d_a.min(0.0), d_a.max(0.0));
        let early_da = [-TAU, 0.0, TAU]
            .iter()
            .map(|m| -(phi + m) * a / (1.5 * n * drift_time))
            .min_by(|p, q| (p - p.clamp(lo, hi)).abs().total_cmp(&(q - q.clamp(lo, hi)).abs()))
            .unwrap_or(0.0)
            .clamp(lo - EARLY_RAISE_CAP * a, hi + EARLY_RAISE_CAP * a);
        let mut burns = vec![];
        if let Some(t2) = second {
            // Component along the first burn's line as it will be at arrival.
            let d = u_e + rates.argp * (t_arr - t_e);
            let de_e = (ex1 - ex0) * d.cos() + (ey1 - ey0) * d.sin();
            x[5] = 0.25 * v * (early_da / a + de_e);
            x[7] = 0.25 * v * (early_da / a - de_e);
            burns.push(ImpulseManeuver { epoch: t_e, dv_rtn: Vector3::new(0.0, x[5], 0.0) });
            burns.push(ImpulseManeuver { epoch: t2, dv_rtn: Vector3::new(0.0, x[7], 0.0) });
        } else {
            x[5] = 0.5 * v * early_da / a;
            burns.push(ImpulseManeuver { epoch: t_e, dv_rtn: Vector3::new(0.0, x[5], 0.0) });
        }
        plan = Some((early, mid, x));
        let Ok(after) = apply_schedule(dep, &burns, t_arr, c) else { break };
        let next = burn_axis(&after, arr_target);
        // Lines, so compare modulo pi.
        let moved = 0.5 * wrap_pi(2.0 * (next - axis));
        axis += moved;
        if moved.abs() < 1e-3 {
            break;
        }
    }
    let Some((early, mid, x)) = plan else {
        return Err(unreachable("no burn layout"));
    };

    // Final pair on the node line seen after the early burns.
    let place = |x: &mut Vec<f64>, early: Option<(f64, Option<f64>)>, mid: Option<f64>| -> Result<Layout, TransferError> {
        let probe = Layout { early, mid: None, b1: f64::INFINITY, b2: f64::INFINITY, shift: (0.0, 0.0) };
        let burns: Vec<ImpulseManeuver> = probe.schedule(x).into_iter().filter(|m| m.epoch.is_finite()).collect();
        let after = apply_schedule(dep, &burns, burns.last().map_or(dep.epoch, |m| m.epoch), c)?;
        let pre = propagate_to(&after, t_arr, c);
        let axis = burn_axis(&pre, arr_target);
        let (b1, b2, u1) = final_pair(&after, axis, t_arr, period, c);
        let early_end = burns.last().map_or(dep.epoch, |m| m.epoch);
        if b1 - BURN_GAP < early_end.max(start - BURN_GAP) {
            return Err(unreachable("final burn pair does not fit"));
        }
        let (ex0, ey0) = pre.ecc_vector();
        let (dex, dey) = (ex1 - ex0, ey1 - ey0);
        let (s1, c1) = u1.sin_cos();
        let de_par = dex * c1 + dey * s1;
        let rot_o = wrap_pi(arr_target.raan - pre.raan) * arr_target.i.sin();
        let rot = (arr_target.i - pre.i) * c1 + rot_o * s1;
        let d_a = arr_target.a - pre.a;
        x[0] = 0.25 * v * (d_a / a + de_par);
        x[3] = 0.25 * v * (d_a / a - de_par);
        x[1] = 0.5 * v * rot;
        x[4] = -0.5 * v * rot;
        if !matches!(early, Some((_, Some(_)))) {
            x[2] = v * (dex * s1 - dey * c1);
        }
        x[8] = 0.0;
        let shift = (early_end.max(start - BURN_GAP) + BURN_GAP - b1, t_arr - BURN_GAP - b2);
        Ok(Layout { early, mid: mid.map(|_| b1 + 0.25 * period), b1, b2, shift })
    };
    let finish = |layout: &Layout, x: &[f64]| -> Option<Vec<ImpulseManeuver>> {
        let schedule: Vec<ImpulseManeuver> =
            layout.schedule(x).into_iter().filter(|m| m.dv_rtn.norm() > 0.0).collect();
        let got = apply_schedule(dep, &schedule, t_arr, c).ok()?;
        within_tolerance(&got, arr_target).then_some(schedule)
    };

    // Without room after the early burns, do without them.
    let (early, mid, x) = match place(&mut x.clone(), early, mid) {
        Err(_) if early.is_some() => (None, Some(0.0), vec![0.0; N_UNKNOWNS]),
        _ => (early, mid, x),
    };

    let attempt = |early: Option<(f64, Option<f64>)>, mid: Option<f64>, x: Vec<f64>| -> Result<Vec<ImpulseManeuver>, TransferError> {
        // Phase first: shift the early share, re-placing the final pair each time.
        let shifted = |x: &[f64], s: f64| -> Result<(Vec<f64>, Layout, f64), TransferError> {
            let mut y = x.to_vec();
            y[5] += s;
            if matches!(early, Some((_, Some(_)))) {
                y[7] += s;
            }
            let layout = place(&mut y, early, mid)?;
            let r = residual(&apply_schedule(dep, &layout.schedule(&y), t_arr, c)?, arr_target);
            Ok((y, layout, r[5]))
        };
        let (mut x, mut layout, mut ph) = shifted(&x, 0.0)?;
        if early.is_some() {
            for _ in 0..8 {
                if ph.abs() < 1e-6 {
                    break;
                }
                let h = 1e-6;
                let Ok((_, _, ph_h)) = shifted(&x, h) else { break };
                let slope = wrap_pi(ph_h - ph) / h;
                if slope == 0.0 {
                    break;
                }
                match shifted(&x, -ph / slope) {
                    Ok((y, l, p)) if p.abs() < ph.abs() => (x, layout, ph) = (y, l, p),
                    _ => break,
                }
            }
        }
        let full = layout.active();
        let locked: Vec<usize> =
            if early.is_some() { full.iter().copied().filter(|&j| j != 6).collect() } else { full.clone() };
        for active in [locked, full] {
            let shooter = Shooter { dep, target: arr_target, t_arr, layout, active, c };
            let (mut y, mut res) = shooter.solve(x.clone())?;
            if res >= 1e-9 {
                // Walk the target out from the coasting arrival.
                let mut z = vec![0.0; N_UNKNOWNS];
                let mut r_z = f64::INFINITY;
                for step in 1..=CONTINUATION_STEPS {
                    let target = blend(&drifted, arr_target, step as f64 / CONTINUATION_STEPS as f64);
                    let partial = Shooter { target: &target, active: shooter.active.clone(), ..shooter };
                    match partial.solve(z.clone()) {
                        Ok((w, r)) => (z, r_z) = (w, r),
                        Err(_) => break,
                    }
                }
                if r_z < res {
                    (y, res) = (z, r_z);
                }
            }
            if res < 1e-9 {
                if let Some(s) = finish(&layout, &shooter.polish(y.clone())) {
                    return Ok(s);
                }
            }
            x = y;
        }
        Err(unreachable("shooting did not converge"))
    };

    // Short transfers leave the planned layout little drift to phase with.
    // Also try burns every quarter orbit, and three or four burns free to
    // move in time, each reached by continuation; the cheapest schedule wins.
    let first = attempt(early, mid, x);
    if dt > SHORT_TRANSFER_ORBITS * period {
        return first;
    }
    let window = (dep.epoch + BURN_GAP, t_arr - BURN_GAP);
    let spread_over = |count: usize, movable: bool| -> Spread {
        let epochs = (0..count)
            .map(|k| window.0 + (window.1 - window.0) * k as f64 / (count - 1).max(1) as f64)
            .collect();
        Spread { epochs, movable, window }
    };
    let solve_spread = |spread: &Spread| -> Result<Vec<ImpulseManeuver>, TransferError> {
        let n = spread.unknowns();
        let mut z = vec![0.0; n];
        for step in 1..=CONTINUATION_STEPS {
            let target = blend(&drifted, arr_target, step as f64 / CONTINUATION_STEPS as f64);
            let sh = Shooter { dep, target: &target, t_arr, layout: spread, active: (0..n).collect(), c };
            z = sh.solve(z)?.0;
        }
        let sh = Shooter { dep, target: arr_target, t_arr, layout: spread, active: (0..n).collect(), c };
        let (z, res) = sh.solve(z)?;
        if res >= 1e-9 {
            return Err(unreachable("shooting did not converge"));
        }
        let z = sh.polish(z);
        let schedule: Vec<ImpulseManeuver> = spread.schedule(&z).into_iter().filter(|m| m.dv_rtn.norm() > 0.0).collect();
        let got = apply_schedule(dep, &schedule, t_arr, c)?;
        if within_tolerance(&got, arr_target) { Ok(schedule) } else { Err(unreachable("shooting did not converge")) }
    };
    let quarters = ((dt - 2.0 * BURN_GAP) / (0.25 * period)).floor().clamp(1.0, 15.0) as usize + 1;
    let second = solve_spread(&spread_over(quarters, false));
    let moving = [3, 4].map(|k| solve_spread(&spread_over(k, true)));
    [first, second]
        .into_iter()
        .chain(moving)
        .reduce(|a, b| match (a, b) {
            (Ok(a), Ok(b)) => Ok(if schedule_dv(&b) < schedule_dv(&a) { b } else { a }),
            (Ok(a), Err(_)) | (Err(_), Ok(a)) => Ok(a),
            (Err(e), Err(_)) => Err(e),
        })
        .unwrap()
}
