//! Second-layer refinement of a fixed plane set: differential evolution over
//! visit order, per-plane inspection coefficients and transfer durations.
//!
//! A vector for `m` planes has `4m` components in `[0, 1]`: order keys,
//! node coefficients, inclination coefficients and transfer durations. The
//! coefficients and the duration belong to a plane, not to a position in
//! the order, so they travel with the plane when the order changes. The
//! first plane's duration is unused.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::astro::{propagate_to, Constants};
use crate::scenario::Scenario;
use crate::search::{Evaluator, GaParams, PlaneVisit, SequenceSolution};
use crate::transfer::{realize_transfer, schedule_dv, ImpulseManeuver};

/// Objective charge per constraint violation, km/s.
pub const PENALTY: f64 = 10.0;
/// Half-width of the uniform perturbations of the seed that make up the
/// initial population. Uniformly random vectors almost all scramble the
/// order into tours far costlier than the seed.
pub const INIT_RADIUS: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeParams {
    pub pop_size: usize,
    pub max_gen: usize,
    /// Differential weight.
    pub f: f64,
    /// Crossover rate.
    pub cr: f64,
    pub rng_seed: u64,
}

impl DeParams {
    /// rand/1/bin defaults sized for `m` planes. The crossover rate is low
    /// because a duration change moves every later visit in time, so trials
    /// that touch few components are the ones that get accepted.
    pub fn for_planes(m: usize, seed: u64) -> Self {
        DeParams { pop_size: (40 * m).clamp(5, 200), max_gen: 500, f: 0.7, cr: 0.1, rng_seed: seed }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.f > 0.0 && self.f < 2.0) {
            return Err(format!("differential weight {} outside (0, 2)", self.f));
        }
        if !(0.0..=1.0).contains(&self.cr) {
            return Err(format!("crossover rate {} outside [0, 1]", self.cr));
        }
        if self.pop_size < 4 {
            return Err("population size must be at least 4".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Plane positions (into the refined set) in visit order.
    pub order: Vec<usize>,
    pub k_omega: Vec<f64>,
    pub k_i: Vec<f64>,
    pub dt: Vec<f64>,
}

/// Argsort of the order keys (ties to the lower index) and affine maps of
/// the other blocks.
pub fn decode(x: &[f64], dt_min: f64, dt_max: f64) -> Decoded {
    let m = x.len() / 4;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|a, b| x[*a].total_cmp(&x[*b]).then(a.cmp(b)));
    let coef = |v: &f64| 2.0 * v - 1.0;
    Decoded {
        order,
        k_omega: x[m..2 * m].iter().map(coef).collect(),
        k_i: x[2 * m..3 * m].iter().map(coef).collect(),
        dt: x[3 * m..4 * m].iter().map(|v| dt_min + v * (dt_max - dt_min)).collect(),
    }
}

/// A plane set with the evaluator that rebuilds tours over it.
pub struct RefineProblem {
    pub eval: Evaluator,
    /// Plane indices (0-based into the scenario's planes) of the set.
    pub planes: Vec<usize>,
}

/// A rebuilt tour with its violation count.
#[derive(Debug, Clone)]
pub struct Rebuilt {
    pub visits: Vec<PlaneVisit>,
    pub violations: usize,
}

impl Rebuilt {
    pub fn objective(&self) -> f64 {
        self.visits.iter().map(|v| v.dv).sum::<f64>() + PENALTY * self.violations as f64
    }
}

impl RefineProblem {
    pub fn new(seed: &SequenceSolution, scenario: &Scenario, params: &GaParams) -> Self {
        let mut eval = Evaluator::new(scenario, params);
        eval.memo = false;
        let planes = seed
            .visits
            .iter()
            .map(|v| scenario.plane_index(v.plane.constellation_id, v.plane.plane_id).expect("plane of the scenario"))
            .collect();
        RefineProblem { eval, planes }
    }

    pub fn dim(&self) -> usize {
        4 * self.planes.len()
    }

    /// The seed's own parameters as a vector.
    pub fn encode(&self, seed: &SequenceSolution) -> Vec<f64> {
        let m = self.planes.len();
        let (lo, hi) = (self.eval.params.dt_min, self.eval.params.dt_max);
        let mut x = vec![0.0; 4 * m];
        for (j, v) in seed.visits.iter().enumerate() {
            x[j] = j as f64 / m as f64;
            x[m + j] = 0.5 * (v.inspection.k_omega + 1.0);
            x[2 * m + j] = 0.5 * (v.inspection.k_i + 1.0);
            x[3 * m + j] = if j == 0 { 0.0 } else { ((v.dt_transfer - lo) / (hi - lo)).clamp(0.0, 1.0) };
        }
        x
    }

    /// Tour in the decoded order with the decoded parameters. A plane whose
    /// coefficients admit no inspection orbit falls back to the nominal one
    /// and counts a violation, as does a stay past the horizon.
    pub fn rebuild(&self, x: &[f64]) -> Rebuilt {
        let d = decode(x, self.eval.params.dt_min, self.eval.params.dt_max);
        let mut visits: Vec<PlaneVisit> = Vec::with_capacity(d.order.len());
        let mut violations = 0;
        for &j in &d.order {
            let prev = visits.last().map(|v| &v.inspection);
            let idx = self.planes[j];
            let visit = match self.eval.visit(prev, idx, d.k_i[j], d.k_omega[j], Some(d.dt[j])) {
                Some(v) => Some(v),
                None => {
                    violations += 1;
                    self.eval.visit(prev, idx, 0.0, 0.0, Some(d.dt[j]))
                }
            };
            let Some(v) = visit else {
                violations += 1;
                continue;
            };
            if v.inspection.t_end() > self.eval.t_f {
                violations += 1;
            }
            visits.push(v);
        }
        Rebuilt { visits, violations }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.rebuild(x).objective()
    }
}

/// Which blocks of the vector may move.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineMask {
    pub order: bool,
    pub coefficients: bool,
    pub durations: bool,
}

impl RefineMask {
    pub const ALL: RefineMask = RefineMask { order: true, coefficients: true, durations: true };
    /// Inspection coefficients held at the seed's values.
    pub const FROZEN_COEFFICIENTS: RefineMask = RefineMask { order: true, coefficients: false, durations: true };

    fn free(&self, m: usize, d: usize) -> bool {
        match d / m {
            0 => self.order,
            1 | 2 => self.coefficients,
            _ => self.durations,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RefineRun {
    pub best: SequenceSolution,
    pub vector: Vec<f64>,
    /// Best objective after each generation (entry 0 is the initial population).
    pub history: Vec<f64>,
}

/// rand/1/bin with the seed encoded as the first individual and the rest
/// drawn around it. Draw order from the single generator: the initial
/// perturbations, then per
/// target three distinct donors, the forced dimension and one crossover
/// draw per dimension. Trial components leaving `[0, 1]` are set midway
/// between the base value and the violated bound. The result is never
/// worse than the seed: if nothing beats it, the seed itself comes back, as
/// it does with zero generations.
pub fn de_refine_masked(
    seed: &SequenceSolution,
    params: &DeParams,
    scenario: &Scenario,
    ga: &GaParams,
    mask: RefineMask,
) -> RefineRun {
    let problem = RefineProblem::new(seed, scenario, ga);
    let m = problem.planes.len();
    let dim = problem.dim();
    let x0 = problem.encode(seed);
    if m < 2 || params.max_gen == 0 {
        return RefineRun { best: seed.clone(), vector: x0, history: vec![seed.total_dv] };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let np = params.pop_size.max(4);
    let mut pop = vec![x0.clone()];
    while pop.len() < np {
        let x: Vec<f64> = (0..dim)
            .map(|d| {
                if mask.free(m, d) {
                    (x0[d] + rng.gen_range(-INIT_RADIUS..INIT_RADIUS)).clamp(0.0, 1.0)
                } else {
                    x0[d]
                }
            })
            .collect();
        pop.push(x);
    }
    let mut cost: Vec<f64> = pop.par_iter().map(|x| problem.objective(x)).collect();
    let best_of = |cost: &[f64]| {
        let mut b = 0;
        for (i, c) in cost.iter().enumerate() {
            if *c < cost[b] {
                b = i;
            }
        }
        b
    };
    let mut history = vec![cost[best_of(&cost)]];
    let free: Vec<usize> = (0..dim).filter(|d| mask.free(m, *d)).collect();
    for _ in 0..params.max_gen {
        if free.is_empty() {
            break;
        }
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let mut pick = |not: &[usize]| loop {
                    let r = rng.gen_range(0..np);
                    if !not.contains(&r) {
                        return r;
                    }
                };
                let r1 = pick(&[i]);
                let r2 = pick(&[i, r1]);
                let r3 = pick(&[i, r1, r2]);
                let forced = free[rng.gen_range(0..free.len())];
                let mut trial = pop[i].clone();
                for &d in &free {
                    if rng.gen::<f64>() < params.cr || d == forced {
                        let base = pop[r1][d];
                        let v = base + params.f * (pop[r2][d] - pop[r3][d]);
                        trial[d] = if v < 0.0 {
                            0.5 * base
                        } else if v > 1.0 {
                            0.5 * (base + 1.0)
                        } else {
                            v
                        };
                    }
                }
                trial
            })
            .collect();
        let trial_cost: Vec<f64> = trials.par_iter().map(|x| problem.objective(x)).collect();
        for (i, (t, c)) in trials.into_iter().zip(trial_cost).enumerate() {
            if c <= cost[i] {
                pop[i] = t;
                cost[i] = c;
            }
        }
        history.push(cost[best_of(&cost)]);
    }
    let b = best_of(&cost);
    let rebuilt = problem.rebuild(&pop[b]);
    if rebuilt.violations > 0 || rebuilt.objective() >= seed.total_dv || rebuilt.visits.len() != m {
        return RefineRun { best: seed.clone(), vector: x0, history };
    }
    RefineRun {
        best: SequenceSolution::from_visits(rebuilt.visits, ga.dv_budget_relaxed, None),
        vector: pop[b].clone(),
        history,
    }
}

pub fn de_refine(seed: &SequenceSolution, params: &DeParams, scenario: &Scenario, ga: &GaParams) -> SequenceSolution {
    de_refine_masked(seed, params, scenario, ga, RefineMask::ALL).best
}

/// Realizes the tour transfer by transfer and keeps the longest prefix
/// whose realized cost fits `dv_max`; a transfer that cannot be realized
/// also ends the tour. Returns the kept tour and its schedules.
pub fn realize_within_budget(
    sol: &SequenceSolution,
    dv_max: f64,
    denominator: f64,
    c: &Constants,
) -> (SequenceSolution, Vec<Vec<ImpulseManeuver>>) {
    let mut schedules = Vec::new();
    let mut spent = 0.0;
    let mut keep = sol.visits.len().min(1);
    for w in sol.visits.windows(2) {
        let dep = w[0].inspection.end_elements(c);
        let target = propagate_to(&w[1].inspection.elements, w[1].t_arrive, c);
        let Ok(s) = realize_transfer(&dep, &target, w[1].t_arrive - dep.epoch, c) else { break };
        spent += schedule_dv(&s);
        if spent > dv_max {
            break;
        }
        schedules.push(s);
        keep += 1;
    }
    if keep == sol.visits.len() {
        return (sol.clone(), schedules);
    }
    (SequenceSolution::from_visits(sol.visits[..keep].to_vec(), denominator, Some(keep)), schedules)
}

/// Longest prefix of the tour whose estimated cost fits `dv_max`.
pub fn fit_to_budget(sol: &SequenceSolution, dv_max: f64, denominator: f64) -> SequenceSolution {
    let mut spent = 0.0;
    let keep = sol
        .visits
        .iter()
        .take_while(|v| {
            spent += v.dv;
            spent <= dv_max
        })
        .count();
    if keep == sol.visits.len() {
        return sol.clone();
    }
    SequenceSolution::from_visits(sol.visits[..keep].to_vec(), denominator, Some(keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario;
    use crate::search::Chromosome;

    fn setup() -> (Scenario, GaParams, SequenceSolution) {
        let s = parse_scenario("1 72 22 550 53 0\n2 36 30 600 55 1\n").unwrap();
        let p = GaParams::for_scenario(&s, 3);
        let sol = Evaluator::new(&s, &p).evaluate(&Chromosome { genes: vec![1, 72, 2, 71, 3] });
        (s, p, sol)
    }

    #[test]
    fn decode_maps_blocks() {
        let x = [0.1, 0.2, 0.5, 0.0, 1.0, 0.25, 0.0, 1.0];
        let d = decode(&x, 10.0, 20.0);
        assert_eq!(d.order, vec![0, 1]);
        assert_eq!(d.k_omega, vec![0.0, -1.0]);
        assert_eq!(d.k_i, vec![1.0, -0.5]);
        assert_eq!(d.dt, vec![10.0, 20.0]);
        let tied = decode(&[0.3, 0.3, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 1.0, 2.0);
        assert_eq!(tied.order, vec![2, 0, 1]);
    }

    #[test]
    fn incumbent_reproduces_its_cost() {
        let (s, p, sol) = setup();
        let problem = RefineProblem::new(&sol, &s, &p);
        let r = problem.rebuild(&problem.encode(&sol));
        assert_eq!(r.violations, 0);
        assert!((r.objective() - sol.total_dv).abs() <= 1e-9 * sol.total_dv.max(1.0));
    }

    #[test]
    fn objective_bounded_by_plane_change() {
        let (s, p, sol) = setup();
        let problem = RefineProblem::new(&sol, &s, &p);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x: Vec<f64> = (0..problem.dim()).map(|_| rng.gen()).collect();
            let r = problem.rebuild(&x);
            let c = &problem.eval.c;
            let bound: f64 = r
                .visits
                .windows(2)
                .map(|w| {
                    let dep = w[0].inspection.end_elements(c);
                    let arr = crate::astro::propagate_to(&w[1].inspection.elements, w[1].t_arrive, c);
                    let dep = crate::astro::propagate_to(&dep, w[1].t_arrive, c);
                    (c.mu / arr.a).sqrt() * (arr.i - dep.i).abs() * 0.999
                })
                .sum();
            assert!(r.objective() >= bound, "{} < {bound}", r.objective());
        }
    }

    #[test]
    fn zero_generations_return_the_seed() {
        let (s, p, sol) = setup();
        let de = DeParams { max_gen: 0, ..DeParams::for_planes(sol.visits.len(), 1) };
        assert_eq!(de_refine(&sol, &de, &s, &p), sol);
    }

    #[test]
    fn refinement_is_never_worse_and_deterministic() {
        let (s, p, sol) = setup();
        let de = DeParams { pop_size: 20, max_gen: 15, ..DeParams::for_planes(sol.visits.len(), 9) };
        let a = de_refine_masked(&sol, &de, &s, &p, RefineMask::ALL);
        let b = de_refine_masked(&sol, &de, &s, &p, RefineMask::ALL);
        assert_eq!(a.best, b.best);
        assert!(a.best.total_dv <= sol.total_dv);
        assert_eq!(a.best.total_sats, sol.total_sats);
        assert!(a.history.windows(2).all(|w| w[1] <= w[0]));
        let mut keys = a.best.plane_keys();
        let mut want = sol.plane_keys();
        keys.sort();
        want.sort();
        assert_eq!(keys, want);
    }

    #[test]
    fn frozen_blocks_stay_put() {
        let (s, p, sol) = setup();
        let de = DeParams { pop_size: 12, max_gen: 5, ..DeParams::for_planes(sol.visits.len(), 2) };
        let run = de_refine_masked(&sol, &de, &s, &p, RefineMask::FROZEN_COEFFICIENTS);
        let m = sol.visits.len();
        let x0 = RefineProblem::new(&sol, &s, &p).encode(&sol);
        assert_eq!(run.vector[m..3 * m], x0[m..3 * m]);
    }

    #[test]
    fn budget_trim_keeps_a_prefix() {
        let (_, p, sol) = setup();
        let first_two: f64 = sol.visits[..2].iter().map(|v| v.dv).sum();
        let cut = fit_to_budget(&sol, first_two, p.dv_budget_relaxed);
        assert_eq!(cut.visits, sol.visits[..2].to_vec());
        assert_eq!(cut.truncated_at, Some(2));
        assert_eq!(fit_to_budget(&sol, 1e3, p.dv_budget_relaxed), sol);
    }
}
