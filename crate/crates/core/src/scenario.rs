//! Scenario files and solution files.
//!
//! Scenario format: one constellation per line,
//! `id n_planes sats_per_plane altitude_km inclination_deg raan0_deg [phase0_deg]`,
//! `#` starts a comment. The third-from-last column is the altitude above the
//! equatorial radius, not the semi-major axis. An optional `[mission]` block
//! of `key = value` lines sets the mission limits; when the block is present
//! every key must be given. An optional `[constants]` block overrides
//! `mu`, `re` and `j2`.
//!
//! Solution files hold one row per visit with the human-readable columns
//! (constellation, plane, start satellite, cost in m/s, transfer days, node
//! and inclination offsets in degrees) followed by exact machine columns,
//! then a totals block and an optional report block. The inspection orbits
//! are rebuilt from the machine columns on parsing, which needs the scenario.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::astro::Constants;
use crate::inspection::{inspection_shape, FlybyLimits, OrbitalPlane};
use crate::search::{PlaneVisit, SequenceSolution};
use crate::transfer::ImpulseManeuver;
use crate::verify::VerificationReport;

pub const DAY: f64 = 86_400.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("mission block is missing key `{0}`")]
    MissingMissionKey(String),
}

/// Error in a solution or schedule file.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {reason}")]
pub struct SolutionError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstellationSpec {
    pub id: u32,
    pub n_planes: u32,
    pub sats_per_plane: usize,
    pub altitude_km: f64,
    pub inclination_deg: f64,
    pub raan0_deg: f64,
    pub phase0_deg: f64,
}

/// Mission limits in internal units (s, km, km/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mission {
    pub t0: f64,
    pub t_f: f64,
    pub dv_max: f64,
    pub dr_flyby: f64,
    pub dv_flyby: f64,
    pub delta_r0: f64,
    pub dt_min: f64,
    pub dt_max: f64,
}

impl Default for Mission {
    fn default() -> Self {
        Mission {
            t0: 0.0,
            t_f: 90.0 * DAY,
            dv_max: 3.0,
            dr_flyby: 50.0,
            dv_flyby: 0.15,
            delta_r0: 5.0,
            dt_min: 0.1 * DAY,
            dt_max: 4.0 * DAY,
        }
    }
}

impl Mission {
    pub fn limits(&self) -> FlybyLimits {
        FlybyLimits { dr_flyby: self.dr_flyby, dv_flyby: self.dv_flyby }
    }
}

/// Mission file keys with their unit scale to internal units.
const MISSION_KEYS: [(&str, f64); 7] = [
    ("t_f_days", DAY),
    ("dv_max_kms", 1.0),
    ("dr_flyby_km", 1.0),
    ("dv_flyby_kms", 1.0),
    ("delta_r0_km", 1.0),
    ("dt_min_days", DAY),
    ("dt_max_days", DAY),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub constellations: Vec<ConstellationSpec>,
    pub mission: Mission,
    pub constants: Constants,
}

impl Scenario {
    /// Candidate planes, constellation by constellation; plane ids start at 1.
    pub fn planes(&self) -> Vec<OrbitalPlane> {
        let re = self.constants.re;
        self.constellations
            .iter()
            .flat_map(|cs| {
                (0..cs.n_planes).map(move |k| OrbitalPlane {
                    constellation_id: cs.id,
                    plane_id: k + 1,
                    a0: re + cs.altitude_km,
                    i0: cs.inclination_deg.to_radians(),
                    raan0: (cs.raan0_deg + k as f64 * 360.0 / cs.n_planes as f64).to_radians(),
                    n_sats: cs.sats_per_plane,
                    phase0: cs.phase0_deg.to_radians(),
                })
            })
            .collect()
    }

    pub fn total_sats(&self) -> usize {
        self.constellations.iter().map(|c| c.n_planes as usize * c.sats_per_plane).sum()
    }

    /// Index into [`Scenario::planes`] of constellation `id`, plane `plane_id`.
    pub fn plane_index(&self, id: u32, plane_id: u32) -> Option<usize> {
        let mut base = 0;
        for cs in &self.constellations {
            if cs.id == id {
                return (plane_id >= 1 && plane_id <= cs.n_planes).then(|| base + plane_id as usize - 1);
            }
            base += cs.n_planes as usize;
        }
        None
    }
}

#[derive(PartialEq)]
enum Block {
    Constellations,
    Mission,
    Constants,
}

fn number(tok: &str, line: usize, what: &str) -> Result<f64, ScenarioError> {
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(ScenarioError::MalformedLine { line, reason: format!("{what}: `{tok}` is not a number") }),
    }
}

fn integer<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T, ScenarioError> {
    tok.parse::<T>()
        .map_err(|_| ScenarioError::MalformedLine { line, reason: format!("{what}: `{tok}` is not an integer") })
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut constellations = Vec::new();
    let mut mission_kv: Option<HashMap<String, f64>> = None;
    let mut constants = Constants::EARTH;
    let mut block = Block::Constellations;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let bad = |reason: String| ScenarioError::MalformedLine { line, reason };
        if content.starts_with('[') {
            block = match content {
                "[mission]" => {
                    mission_kv.get_or_insert_with(HashMap::new);
                    Block::Mission
                }
                "[constants]" => Block::Constants,
                _ => return Err(bad(format!("unknown section {content}"))),
            };
            continue;
        }
        match block {
            Block::Constellations => {
                let f: Vec<&str> = content.split_whitespace().collect();
                if f.len() != 6 && f.len() != 7 {
                    return Err(bad(format!("expected 6 or 7 fields, found {}", f.len())));
                }
                let spec = ConstellationSpec {
                    id: integer(f[0], line, "id")?,
                    n_planes: integer(f[1], line, "n_planes")?,
                    sats_per_plane: integer(f[2], line, "sats_per_plane")?,
                    altitude_km: number(f[3], line, "altitude_km")?,
                    inclination_deg: number(f[4], line, "inclination_deg")?,
                    raan0_deg: number(f[5], line, "raan0_deg")?,
                    phase0_deg: f.get(6).map_or(Ok(0.0), |t| number(t, line, "phase0_deg"))?,
                };
                if spec.n_planes == 0 || spec.sats_per_plane == 0 {
                    return Err(bad("a constellation needs at least one plane and one satellite".into()));
                }
                if spec.altitude_km <= 0.0 {
                    return Err(bad(format!("altitude {} km is not above the surface", spec.altitude_km)));
                }
                if constellations.iter().any(|c: &ConstellationSpec| c.id == spec.id) {
                    return Err(bad(format!("duplicate constellation id {}", spec.id)));
                }
                constellations.push(spec);
            }
            Block::Mission | Block::Constants => {
                let Some((key, value)) = content.split_once('=') else {
                    return Err(bad(format!("expected `key = value`, found `{content}`")));
                };
                let key = key.trim();
                let value = number(value.trim(), line, key)?;
                if block == Block::Mission {
                    if !MISSION_KEYS.iter().any(|(k, _)| *k == key) {
                        return Err(bad(format!("unknown mission key `{key}`")));
                    }
                    mission_kv.as_mut().unwrap().insert(key.to_string(), value);
                } else {
                    match key {
                        "mu" => constants.mu = value,
                        "re" => constants.re = value,
                        "j2" => constants.j2 = value,
                        _ => return Err(bad(format!("unknown constant `{key}`"))),
                    }
                }
            }
        }
    }

    let mission = match mission_kv {
        None => Mission::default(),
        Some(kv) => {
            let mut vals = [0.0; 7];
            for (slot, (key, scale)) in vals.iter_mut().zip(MISSION_KEYS) {
                *slot = kv.get(key).ok_or_else(|| ScenarioError::MissingMissionKey(key.into()))? * scale;
            }
            Mission {
                t0: 0.0,
                t_f: vals[0],
                dv_max: vals[1],
                dr_flyby: vals[2],
                dv_flyby: vals[3],
                delta_r0: vals[4],
                dt_min: vals[5],
                dt_max: vals[6],
            }
        }
    };
    Ok(Scenario { constellations, mission, constants })
}

pub const SOLUTION_HEADER: &str = "# id plane start dv_m/s transfer_days raan_offset_deg incl_offset_deg | k_omega k_i t_arrive_s dt_s dv_kms";

/// Report totals as stored in a solution file.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub passed: usize,
    pub failed: usize,
    pub dv_actual: f64,
    pub violations: Vec<String>,
}

impl From<&VerificationReport> for ReportSummary {
    fn from(r: &VerificationReport) -> Self {
        ReportSummary {
            passed: r.passed,
            failed: r.failed,
            dv_actual: r.dv_actual,
            violations: r.violations.iter().map(|v| v.to_string()).collect(),
        }
    }
}

pub fn serialize_solution(sol: &SequenceSolution, report: Option<&VerificationReport>) -> String {
    let mut out = String::from("solution\n");
    writeln!(out, "{SOLUTION_HEADER}").unwrap();
    for v in &sol.visits {
        let o = &v.inspection;
        writeln!(
            out,
            "{} {} {} {:.3} {:.4} {:.5} {:.5} | {:?} {:?} {:?} {:?} {:?}",
            v.plane.constellation_id,
            v.plane.plane_id,
            v.start_sat,
            v.dv * 1e3,
            v.dt_transfer / DAY,
            o.offsets.d_raan0.to_degrees(),
            o.offsets.d_i.to_degrees(),
            o.k_omega,
            o.k_i,
            v.t_arrive,
            v.dt_transfer,
            v.dv,
        )
        .unwrap();
    }
    writeln!(out, "total_sats {}", sol.total_sats).unwrap();
    writeln!(out, "total_dv_kms {:?}", sol.total_dv).unwrap();
    writeln!(out, "end_time_s {:?}", sol.end_time).unwrap();
    writeln!(out, "fitness {:?}", sol.fitness).unwrap();
    match sol.truncated_at {
        Some(n) => writeln!(out, "truncated_at {n}").unwrap(),
        None => out.push_str("truncated_at none\n"),
    }
    if let Some(r) = report {
        let r = ReportSummary::from(r);
        out.push_str("report\n");
        writeln!(out, "passed {}", r.passed).unwrap();
        writeln!(out, "failed {}", r.failed).unwrap();
        writeln!(out, "dv_actual_kms {:?}", r.dv_actual).unwrap();
        for v in &r.violations {
            writeln!(out, "violation {v}").unwrap();
        }
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines { inner: text.lines().enumerate().peekable(), last: 0 }
    }

    fn err(&self, reason: impl Into<String>) -> SolutionError {
        SolutionError { line: self.last, reason: reason.into() }
    }

    fn next(&mut self) -> Option<&'a str> {
        let (i, l) = self.inner.next()?;
        self.last = i + 1;
        Some(l)
    }

    /// Skips leading `#` lines (run headers written by the command line).
    fn skip_comments(&mut self) {
        while self.peek().is_some_and(|l| l.starts_with('#')) {
            self.next();
        }
    }

    fn peek(&mut self) -> Option<&'a str> {
        self.inner.peek().map(|(_, l)| *l)
    }

    fn expect(&mut self, want: &str) -> Result<(), SolutionError> {
        match self.next() {
            Some(l) if l == want => Ok(()),
            Some(l) => Err(self.err(format!("expected `{want}`, found `{l}`"))),
            None => Err(SolutionError { line: self.last + 1, reason: format!("expected `{want}`, found end of file") }),
        }
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str, SolutionError> {
        let Some(l) = self.next() else {
            return Err(SolutionError { line: self.last + 1, reason: format!("expected `{key}`, found end of file") });
        };
        match l.split_once(' ') {
            Some((k, v)) if k == key => Ok(v),
            _ => Err(self.err(format!("expected `{key} <value>`, found `{l}`"))),
        }
    }

    fn value<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, SolutionError> {
        let tok = self.keyed(key)?;
        self.parse(tok)
    }

    fn parse<T: std::str::FromStr>(&self, tok: &str) -> Result<T, SolutionError> {
        tok.parse().map_err(|_| self.err(format!("cannot parse `{tok}`")))
    }
}

/// Inverse of [`serialize_solution`]. Inspection orbits are rebuilt from
/// the stored coefficients, start satellite and arrival epoch.
pub fn parse_solution(
    text: &str,
    scenario: &Scenario,
) -> Result<(SequenceSolution, Option<ReportSummary>), SolutionError> {
    let planes = scenario.planes();
    let m = &scenario.mission;
    let mut lines = Lines::new(text);
    lines.skip_comments();
    lines.expect("solution")?;
    lines.expect(SOLUTION_HEADER)?;
    let mut visits = Vec::new();
    while lines.peek().is_some_and(|l| !l.starts_with("total_sats")) {
        let line = lines.next().unwrap();
        let Some((_, machine)) = line.split_once(" | ") else {
            return Err(lines.err("visit row without machine columns"));
        };
        let head: Vec<&str> = line.split_whitespace().take(3).collect();
        let f: Vec<&str> = machine.split_whitespace().collect();
        if head.len() != 3 || f.len() != 5 {
            return Err(lines.err("visit row needs 7 + 5 columns"));
        }
        let id: u32 = lines.parse(head[0])?;
        let plane_id: u32 = lines.parse(head[1])?;
        let start_sat: usize = lines.parse(head[2])?;
        let k_omega: f64 = lines.parse(f[0])?;
        let k_i: f64 = lines.parse(f[1])?;
        let t_arrive: f64 = lines.parse(f[2])?;
        let dt_transfer: f64 = lines.parse(f[3])?;
        let dv: f64 = lines.parse(f[4])?;
        let idx = scenario
            .plane_index(id, plane_id)
            .ok_or_else(|| lines.err(format!("plane {id}-{plane_id} is not in the scenario")))?;
        let plane = planes[idx];
        if start_sat >= plane.n_sats {
            return Err(lines.err(format!("start satellite {start_sat} out of range")));
        }
        let shape = inspection_shape(&plane, k_i, k_omega, m.delta_r0, &m.limits(), &scenario.constants)
            .map_err(|e| lines.err(e.to_string()))?;
        let inspection = shape.instantiate(start_sat, t_arrive, &scenario.constants);
        visits.push(PlaneVisit { plane, start_sat, dt_transfer, t_arrive, dv, inspection });
    }
    let total_sats: usize = lines.value("total_sats")?;
    let total_dv: f64 = lines.value("total_dv_kms")?;
    let end_time: f64 = lines.value("end_time_s")?;
    let fitness: f64 = lines.value("fitness")?;
    let truncated_at = match lines.keyed("truncated_at")? {
        "none" => None,
        n => Some(lines.parse(n)?),
    };
    if total_sats != visits.iter().map(|v| v.plane.n_sats).sum::<usize>() {
        return Err(lines.err("total_sats disagrees with the visits"));
    }
    let sol = SequenceSolution { visits, total_dv, total_sats, end_time, fitness, truncated_at };
    let report = if lines.peek().is_some() {
        lines.expect("report")?;
        let passed = lines.value("passed")?;
        let failed = lines.value("failed")?;
        let dv_actual = lines.value("dv_actual_kms")?;
        let mut violations = Vec::new();
        while lines.peek().is_some() {
            violations.push(lines.keyed("violation")?.to_string());
        }
        Some(ReportSummary { passed, failed, dv_actual, violations })
    } else {
        None
    };
    Ok((sol, report))
}

/// One block per transfer: `transfer <j> <count>` then `count` lines of
/// `epoch_s dv_r dv_t dv_n` in km/s.
pub fn serialize_schedules(schedules: &[Vec<ImpulseManeuver>]) -> String {
    let mut out = String::new();
    for (j, sched) in schedules.iter().enumerate() {
        writeln!(out, "transfer {} {}", j + 1, sched.len()).unwrap();
        for imp in sched {
            let d = imp.dv_rtn;
            writeln!(out, "{:?} {:?} {:?} {:?}", imp.epoch, d.x, d.y, d.z).unwrap();
        }
    }
    out
}

pub fn parse_schedules(text: &str) -> Result<Vec<Vec<ImpulseManeuver>>, SolutionError> {
    let mut lines = Lines::new(text);
    lines.skip_comments();
    let mut out = Vec::new();
    while lines.peek().is_some() {
        let head = lines.keyed("transfer")?;
        let (j, count) = head.split_once(' ').ok_or_else(|| lines.err("expected `transfer <j> <count>`"))?;
        let j: usize = lines.parse(j)?;
        let count: usize = lines.parse(count)?;
        if j != out.len() + 1 {
            return Err(lines.err(format!("expected transfer {}, found {j}", out.len() + 1)));
        }
        let mut sched = Vec::with_capacity(count);
        for _ in 0..count {
            let Some(l) = lines.next() else {
                return Err(SolutionError { line: lines.last + 1, reason: "schedule ends early".into() });
            };
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 4 {
                return Err(lines.err("impulse line needs 4 columns"));
            }
            let v: Vec<f64> = f.iter().map(|t| lines.parse(t)).collect::<Result<_, _>>()?;
            sched.push(ImpulseManeuver { epoch: v[0], dv_rtn: nalgebra::Vector3::new(v[1], v[2], v[3]) });
        }
        out.push(sched);
    }
    Ok(out)
}
