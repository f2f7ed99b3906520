//! Truth-model audit: absolute propagation of spacecraft and satellites,
//! conjunction checks at satellite node crossings and trace output.

use std::fmt::Write as _;

use nalgebra::Vector3;
use thiserror::Error;

use crate::astro::{mean_to_cartesian, propagate_to, Constants, MeanElements};
use crate::inspection::{FlybyLimits, InspectionOrbit};
use crate::relative::{rtn_exact, RtnState};
use crate::scenario::Scenario;
use crate::search::SequenceSolution;
use crate::transfer::{apply_schedule, element_mismatch, schedule_dv, ImpulseManeuver, MATCH_TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("{schedules} impulse schedules supplied for {transfers} transfers")]
    ScheduleMismatch { schedules: usize, transfers: usize },
    #[error("trace line {line}: {reason}")]
    Trace { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlybyRecord {
    /// (constellation, plane, satellite index)
    pub sat_id: (u32, u32, usize),
    pub epoch: f64,
    /// Components (T, N, R) in the satellite frame, km.
    pub rtn_pos: Vector3<f64>,
    /// Components (T, N, R), km/s.
    pub rtn_vel: Vector3<f64>,
    pub range: f64,
    pub speed: f64,
    pub pass: bool,
}

impl FlybyRecord {
    fn new(sat_id: (u32, u32, usize), epoch: f64, rel: &RtnState, limits: &FlybyLimits) -> Self {
        let rtn_pos = Vector3::new(rel.r_t, rel.r_n, rel.r_r);
        let rtn_vel = Vector3::new(rel.v_t, rel.v_n, rel.v_r);
        let range = rtn_pos.norm();
        let speed = rtn_vel.norm();
        FlybyRecord {
            sat_id,
            epoch,
            rtn_pos,
            rtn_vel,
            range,
            speed,
            pass: range < limits.dr_flyby && speed < limits.dv_flyby,
        }
    }
}

/// A relative state sampled along a leg, not tied to a flyby check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegSample {
    pub epoch: f64,
    pub rtn: RtnState,
}

fn relative(sc: &MeanElements, sat: &MeanElements, epoch: f64, c: &Constants) -> Option<RtnState> {
    let a = mean_to_cartesian(&propagate_to(sc, epoch, c), c).ok()?;
    let b = mean_to_cartesian(&propagate_to(sat, epoch, c), c).ok()?;
    Some(rtn_exact(&a, &b))
}

/// One record per satellite of the plane, at the satellite's node crossing
/// closest to the predicted flyby.
pub fn simulate_inspection_leg(orbit: &InspectionOrbit, limits: &FlybyLimits, c: &Constants) -> Vec<FlybyRecord> {
    let plane = &orbit.plane;
    (0..plane.n_sats)
        .map(|m| {
            let k = orbit.flyby_sat(m);
            let epoch = plane.node_crossing(k, orbit.flyby_epoch(m, c), c);
            let id = (plane.constellation_id, plane.plane_id, k);
            match relative(&orbit.elements, &plane.satellite(k), epoch, c) {
                Some(rel) => FlybyRecord::new(id, epoch, &rel, limits),
                None => FlybyRecord {
                    sat_id: id,
                    epoch,
                    rtn_pos: Vector3::repeat(f64::NAN),
                    rtn_vel: Vector3::repeat(f64::NAN),
                    range: f64::NAN,
                    speed: f64::NAN,
                    pass: false,
                },
            }
        })
        .collect()
}

/// Relative motion sampled 60 times per spacecraft orbit, each sample taken
/// with respect to the satellite of the nearest flyby.
pub fn sample_leg(orbit: &InspectionOrbit, c: &Constants) -> Vec<LegSample> {
    let n = orbit.plane.n_sats;
    let step = (orbit.flyby_epoch(1, c) - orbit.t_start) / 60.0;
    let count = (orbit.dt_stay / step).floor() as usize;
    (0..=count)
        .filter_map(|j| {
            let epoch = orbit.t_start + j as f64 * step;
            let m = (((j as f64) / 60.0).round() as usize).min(n - 1);
            let sat = orbit.plane.satellite(orbit.flyby_sat(m));
            relative(&orbit.elements, &sat, epoch, c).map(|rtn| LegSample { epoch, rtn })
        })
        .collect()
}

pub const TRACE_HEADER: &str = "t\tr_t\tr_n\tr_r\tv_t\tv_n\tv_r\trange\tspeed\tpass";

/// Tab-separated trace of flyby records and leg samples, ordered by epoch.
/// Samples carry an empty `pass` column.
pub fn emit_trace(records: &[FlybyRecord], samples: &[LegSample]) -> String {
    let mut rows: Vec<(f64, [f64; 8], Option<bool>)> = records
        .iter()
        .map(|r| {
            let p = r.rtn_pos;
            let v = r.rtn_vel;
            (r.epoch, [p.x, p.y, p.z, v.x, v.y, v.z, r.range, r.speed], Some(r.pass))
        })
        .chain(samples.iter().map(|s| {
            let r = &s.rtn;
            (s.epoch, [r.r_t, r.r_n, r.r_r, r.v_t, r.v_n, r.v_r, r.range(), r.speed()], None)
        }))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.2.is_some().cmp(&a.2.is_some())));
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for (t, vals, pass) in rows {
        write!(out, "{t:?}").unwrap();
        for v in vals {
            write!(out, "\t{v:?}").unwrap();
        }
        match pass {
            Some(p) => writeln!(out, "\t{p}").unwrap(),
            None => out.push_str("\t\n"),
        }
    }
    out
}

/// One parsed trace row: epoch, the eight numeric columns and the pass flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub values: [f64; 8],
    pub pass: Option<bool>,
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRow>, VerifyError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TRACE_HEADER => {}
        _ => return Err(VerifyError::Trace { line: 1, reason: "missing header".into() }),
    }
    lines
        .map(|(idx, line)| {
            let err = |reason: String| VerifyError::Trace { line: idx + 1, reason };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 10 {
                return Err(err(format!("expected 10 columns, found {}", cols.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
            let mut values = [0.0; 8];
            for (slot, s) in values.iter_mut().zip(&cols[1..9]) {
                *slot = num(s)?;
            }
            let pass = match cols[9] {
                "" => None,
                "true" => Some(true),
                "false" => Some(false),
                other => return Err(err(format!("bad pass flag {other:?}"))),
            };
            Ok(TraceRow { t: num(cols[0])?, values, pass })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Budget { dv: f64, limit: f64 },
    Horizon { end: f64, limit: f64 },
    /// Transfer `transfer` (1-based, into visit `transfer`) ends off the
    /// inspection orbit; worst element mismatch relative to its tolerance.
    Arrival { transfer: usize, ratio: f64 },
    /// An impulse falls outside its transfer window.
    BurnWindow { transfer: usize, epoch: f64 },
    /// A visit starts before the previous one ends.
    Overlap { visit: usize },
    Flyby { sat_id: (u32, u32, usize), range: f64, speed: f64 },
    Propagation { visit: usize, reason: String },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Budget { dv, limit } => write!(f, "budget: {dv:.4} km/s spent, limit {limit:.4}"),
            Violation::Horizon { end, limit } => write!(f, "horizon: ends at {end:.0} s, limit {limit:.0}"),
            Violation::Arrival { transfer, ratio } => {
                write!(f, "arrival: transfer {transfer} misses its orbit by {ratio:.2} tolerances")
            }
            Violation::BurnWindow { transfer, epoch } => {
                write!(f, "burn window: transfer {transfer} has an impulse at {epoch:.1} s")
            }
            Violation::Overlap { visit } => write!(f, "overlap: visit {visit} starts before the previous one ends"),
            Violation::Flyby { sat_id: (c, p, k), range, speed } => {
                write!(f, "flyby: satellite {c}-{p}-{k} at {range:.3} km, {:.1} m/s", speed * 1e3)
            }
            Violation::Propagation { visit, reason } => write!(f, "propagation: visit {visit}: {reason}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    /// Flyby records, one list per visit.
    pub legs: Vec<Vec<FlybyRecord>>,
    pub passed: usize,
    pub failed: usize,
    pub dv_actual: f64,
    pub end_time: f64,
    pub violations: Vec<Violation>,
}

impl VerificationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Replays a solution on the truth model. Transfer `j` (into visit `j`,
/// `j >= 1`) applies `schedules[j - 1]` to the spacecraft at the end of the
/// previous stay; the elements reached then fly the next leg, so a loose
/// arrival shows up as failed flybys as well as an arrival violation.
pub fn verify_solution(
    sol: &SequenceSolution,
    schedules: &[Vec<ImpulseManeuver>],
    scenario: &Scenario,
) -> Result<VerificationReport, VerifyError> {
    let transfers = sol.visits.len().saturating_sub(1);
    if schedules.len() != transfers {
        return Err(VerifyError::ScheduleMismatch { schedules: schedules.len(), transfers });
    }
    let c = &scenario.constants;
    let limits = scenario.mission.limits();
    let mut report = VerificationReport {
        legs: Vec::with_capacity(sol.visits.len()),
        passed: 0,
        failed: 0,
        dv_actual: 0.0,
        end_time: sol.visits.last().map_or(0.0, |v| v.inspection.t_end()),
        violations: Vec::new(),
    };
    let mut flown: Option<InspectionOrbit> = None;
    for (j, visit) in sol.visits.iter().enumerate() {
        let mut leg = visit.inspection;
        if let Some(prev) = flown {
            let schedule = &schedules[j - 1];
            report.dv_actual += schedule_dv(schedule);
            let dep = prev.end_elements(c);
            for imp in schedule {
                if !(imp.epoch >= dep.epoch && imp.epoch <= visit.t_arrive) {
                    report.violations.push(Violation::BurnWindow { transfer: j, epoch: imp.epoch });
                }
            }
            if leg.t_start < prev.t_end() {
                report.violations.push(Violation::Overlap { visit: j });
            }
            match apply_schedule(&dep, schedule, visit.t_arrive, c) {
                Ok(got) => {
                    let want = propagate_to(&leg.elements, visit.t_arrive, c);
                    let ratio = element_mismatch(&got, &want)
                        .iter()
                        .zip(MATCH_TOL)
                        .map(|(d, t)| d / t)
                        .fold(0.0, f64::max);
                    if ratio > 1.0 {
                        report.violations.push(Violation::Arrival { transfer: j, ratio });
                    }
                    leg.elements = propagate_to(&got, leg.t_start, c);
                }
                Err(e) => report.violations.push(Violation::Propagation { visit: j, reason: e.to_string() }),
            }
        }
        let records = simulate_inspection_leg(&leg, &limits, c);
        for r in &records {
            if r.pass {
                report.passed += 1;
            } else {
                report.failed += 1;
                report.violations.push(Violation::Flyby { sat_id: r.sat_id, range: r.range, speed: r.speed });
            }
        }
        report.legs.push(records);
        flown = Some(leg);
    }
    if report.dv_actual > scenario.mission.dv_max {
        report.violations.push(Violation::Budget { dv: report.dv_actual, limit: scenario.mission.dv_max });
    }
    if report.end_time > scenario.mission.t_f {
        report.violations.push(Violation::Horizon { end: report.end_time, limit: scenario.mission.t_f });
    }
    Ok(report)
}
