#![allow(dead_code)]

use std::f64::consts::PI;

use plane_sweep::astro::{angle_diff, propagate_mean, solve_kepler, Constants, MeanElements};
use plane_sweep::refine::{de_refine_masked, DeParams, RefineMask};
use plane_sweep::scenario::{
    parse_scenario, parse_schedules, parse_solution, serialize_schedules, serialize_solution, Scenario,
};
use plane_sweep::search::{ga_run, ga_search, multi_spacecraft_greedy, Evaluator, GaParams, SequenceSolution};
use plane_sweep::transfer::{estimate_transfer_dv, ImpulseManeuver};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const C: Constants = Constants::EARTH;
pub const DAY: f64 = 86_400.0;
pub const TABLE1: &str = include_str!("../../../../scenarios/table1.txt");

/// Reference 32-plane tour, `constellation-plane` with 1-based plane ids.
pub const REFERENCE_ORDER: &str = "12-14 16-14 4-27 19-21 1-28 4-28 13-12 1-29 4-29 19-22 4-31 16-16 \
     12-16 1-32 4-32 13-13 4-33 16-17 12-17 1-34 1-35 4-35 16-18 12-18 4-36 1-37 19-23 4-37 13-14 \
     1-38 16-19 12-19";

pub fn table1() -> Scenario {
    parse_scenario(TABLE1).unwrap()
}

/// Two small shells, quick enough for many property cases.
pub fn small() -> Scenario {
    parse_scenario("1 12 22 550 53 0\n2 8 30 600 55 10\n3 6 20 570 70 5\n").unwrap()
}

pub fn small_params(s: &Scenario, seed: u64) -> GaParams {
    GaParams { pop_size: 10, max_gen: 8, chromosome_len: 8, ..GaParams::for_scenario(s, seed) }
}

/// 0-based plane indices of a `constellation-plane` list.
pub fn plane_order(s: &Scenario, text: &str) -> Vec<usize> {
    text.split_whitespace()
        .map(|t| {
            let (c, p) = t.split_once('-').unwrap();
            s.plane_index(c.parse().unwrap(), p.parse().unwrap()).unwrap()
        })
        .collect()
}

pub fn with_threads<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f)
}

/// Random near-circular departure/arrival pair `dt` apart, as met between
/// neighbouring planes of a shell.
pub fn transfer_case(rng: &mut ChaCha8Rng) -> (MeanElements, MeanElements, f64) {
    let a0 = C.re + 550.0;
    let incl = 53f64.to_radians();
    let a = a0 + rng.gen_range(-100.0..100.0);
    let dep = MeanElements::new(
        a,
        rng.gen_range(0.0..0.03),
        incl,
        rng.gen_range(-PI..PI),
        rng.gen_range(-PI..PI),
        rng.gen_range(-PI..PI),
        0.0,
    );
    let dt = rng.gen_range(0.1..4.0) * DAY;
    let drifted = propagate_mean(&dep, dt, &C);
    let arr = MeanElements::new(
        a + rng.gen_range(-300.0..300.0),
        rng.gen_range(0.0..0.03),
        incl + rng.gen_range(-0.02..0.02),
        drifted.raan + rng.gen_range(-0.02..0.02),
        rng.gen_range(-PI..PI),
        rng.gen_range(-PI..PI),
        dt,
    );
    (dep, arr, dt)
}

pub fn elements(rng: &mut ChaCha8Rng) -> MeanElements {
    MeanElements::new(
        rng.gen_range(6700.0..8000.0),
        rng.gen_range(0.0..0.1),
        rng.gen_range(0.1..3.0),
        rng.gen_range(-PI..PI),
        rng.gen_range(-PI..PI),
        rng.gen_range(-PI..PI),
        0.0,
    )
}

fn ensure(ok: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

pub fn check_propagation(el: &MeanElements, t1: f64, t2: f64) -> Result<(), String> {
    let once = propagate_mean(el, t1 + t2, &C);
    let twice = propagate_mean(&propagate_mean(el, t1, &C), t2, &C);
    for x in [&once, &twice] {
        ensure((x.a, x.e, x.i) == (el.a, el.e, el.i), || format!("shape changed: {x:?} from {el:?}"))?;
    }
    for (x, y) in [(once.raan, twice.raan), (once.argp, twice.argp), (once.mean_anomaly, twice.mean_anomaly)] {
        ensure(angle_diff(x, y).abs() < 1e-9, || format!("composition off by {}", angle_diff(x, y)))?;
    }
    ensure(once.epoch == el.epoch + t1 + t2, || "epoch not advanced".into())
}

pub fn check_kepler(m: f64, e: f64) -> Result<(), String> {
    let big_e = solve_kepler(m, e).map_err(|err| err.to_string())?;
    let r = big_e - e * big_e.sin() - m;
    ensure(r.abs() < 1e-12, || format!("residual {r:e} at M = {m}, e = {e}"))
}

/// Zero for a coasting pair, non-negative, at least the inclination change
/// at the mean speed, and never below either component.
pub fn check_estimator(dep: &MeanElements, arr: &MeanElements, dt: f64) -> Result<(), String> {
    let coast = estimate_transfer_dv(dep, &propagate_mean(dep, dt, &C), dt, &C);
    ensure(coast.dv_total < 1e-12, || format!("coasting costs {}", coast.dv_total))?;
    let est = estimate_transfer_dv(dep, arr, dt, &C);
    let v_bar = (C.mu / (0.5 * (dep.a + arr.a))).sqrt();
    ensure(est.dv_total >= v_bar * (arr.i - dep.i).abs() - 1e-12, || format!("below plane bound: {est:?}"))?;
    ensure(
        est.dv_total >= est.dv_plane && est.dv_total >= est.dv_inplane && est.dv_phasing >= 0.0,
        || format!("components exceed total: {est:?}"),
    )
}

pub fn check_ga_elitism(s: &Scenario, seed: u64) -> Result<(), String> {
    let p = small_params(s, seed);
    let run = ga_run(&Evaluator::new(s, &p), &p);
    ensure(run.history.len() == p.max_gen + 1, || "history length".into())?;
    ensure(run.history.windows(2).all(|w| w[1] >= w[0]), || format!("best fitness fell: {:?}", run.history))?;
    ensure(run.best.fitness == *run.history.last().unwrap(), || "best is not the last history entry".into())
}

pub fn check_de_never_worse(s: &Scenario, seed: u64) -> Result<(), String> {
    let p = small_params(s, seed);
    let sol = ga_search(s, &p);
    let de = DeParams { pop_size: 12, max_gen: 6, ..DeParams::for_planes(sol.visits.len(), seed) };
    for mask in [RefineMask::ALL, RefineMask::FROZEN_COEFFICIENTS] {
        let run = de_refine_masked(&sol, &de, s, &p, mask);
        ensure(run.best.total_dv <= sol.total_dv, || {
            format!("refined {} worse than seed {}", run.best.total_dv, sol.total_dv)
        })?;
        ensure(run.best.total_sats == sol.total_sats, || "refinement changed the satellite count".into())?;
    }
    Ok(())
}

pub fn check_tabu_disjoint(s: &Scenario, seed: u64, craft: usize) -> Result<(), String> {
    let p = small_params(s, seed);
    let pairs: Vec<(usize, usize)> = (1..craft).step_by(2).map(|b| (b - 1, b)).collect();
    let sols = multi_spacecraft_greedy(s, craft, &pairs, &p);
    ensure(sols.len() == craft, || "craft count".into())?;
    let mut seen = std::collections::HashSet::new();
    for sol in &sols {
        for key in sol.plane_keys() {
            ensure(seen.insert(key), || format!("plane {key:?} visited twice"))?;
        }
    }
    Ok(())
}

pub fn check_solution_round_trip(s: &Scenario, sol: &SequenceSolution) -> Result<(), String> {
    let text = serialize_solution(sol, None);
    let (back, report) = parse_solution(&text, s).map_err(|e| e.to_string())?;
    ensure(report.is_none(), || "phantom report".into())?;
    ensure(&back == sol, || "solution changed on round trip".into())?;
    ensure(serialize_solution(&back, None) == text, || "text changed on round trip".into())
}

pub fn check_schedule_round_trip(schedules: &[Vec<ImpulseManeuver>]) -> Result<(), String> {
    let back = parse_schedules(&serialize_schedules(schedules)).map_err(|e| e.to_string())?;
    ensure(back == schedules, || "schedules changed on round trip".into())
}

pub fn random_schedules(rng: &mut ChaCha8Rng) -> Vec<Vec<ImpulseManeuver>> {
    (0..rng.gen_range(0..4))
        .map(|_| {
            (0..rng.gen_range(0..5))
                .map(|_| ImpulseManeuver {
                    epoch: rng.gen_range(0.0..90.0 * DAY),
                    dv_rtn: nalgebra::Vector3::new(
                        rng.gen_range(-0.1..0.1),
                        rng.gen_range(-0.1..0.1),
                        rng.gen_range(-0.1..0.1),
                    ),
                })
                .collect()
        })
        .collect()
}

pub fn check_thread_determinism(s: &Scenario, seed: u64) -> Result<(), String> {
    let p = small_params(s, seed);
    let one = with_threads(1, || ga_search(s, &p));
    let three = with_threads(3, || ga_search(s, &p));
    ensure(one == three, || "search depends on the thread count".into())?;
    let de = DeParams { pop_size: 12, max_gen: 5, ..DeParams::for_planes(one.visits.len(), seed) };
    let r1 = with_threads(1, || de_refine_masked(&one, &de, s, &p, RefineMask::ALL));
    let r3 = with_threads(3, || de_refine_masked(&one, &de, s, &p, RefineMask::ALL));
    ensure(r1.best == r3.best && r1.history == r3.history, || "refinement depends on the thread count".into())
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
