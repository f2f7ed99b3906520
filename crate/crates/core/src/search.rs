//! Plane-sequence search: fitness of a visit order, genetic search over
//! orders, and the greedy multi-spacecraft wrapper.

use std::collections::{HashMap, HashSet};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::astro::{propagate_to, wrap_pi, Constants};
use crate::inspection::{inspection_shape, FlybyLimits, InspectionOrbit, InspectionShape, OrbitalPlane};
use crate::scenario::Scenario;
use crate::transfer::{estimate_transfer_dv, select_transfer_time};

/// Plane indices, 1-based into [`Scenario::planes`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Chromosome {
    pub genes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneVisit {
    pub plane: OrbitalPlane,
    pub start_sat: usize,
    /// Transfer duration into this plane, s (0 for the first visit).
    pub dt_transfer: f64,
    /// End of the transfer, s. The spacecraft then coasts on the inspection
    /// orbit until the first flyby at `inspection.t_start`.
    pub t_arrive: f64,
    /// Estimated transfer cost, km/s.
    pub dv: f64,
    pub inspection: InspectionOrbit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSolution {
    pub visits: Vec<PlaneVisit>,
    pub total_dv: f64,
    pub total_sats: usize,
    pub end_time: f64,
    pub fitness: f64,
    /// Number of visits kept when a budget limit stopped the evaluation.
    pub truncated_at: Option<usize>,
}

impl SequenceSolution {
    pub fn empty() -> Self {
        SequenceSolution { visits: Vec::new(), total_dv: 0.0, total_sats: 0, end_time: 0.0, fitness: 0.0, truncated_at: None }
    }

    /// Totals and fitness recomputed from the visits.
    pub fn from_visits(visits: Vec<PlaneVisit>, dv_max: f64, truncated_at: Option<usize>) -> Self {
        let total_dv: f64 = visits.iter().map(|v| v.dv).sum();
        let total_sats = visits.iter().map(|v| v.plane.n_sats).sum();
        let end_time = visits.last().map_or(0.0, |v| v.inspection.t_end());
        let fitness = if visits.is_empty() { 0.0 } else { total_sats as f64 + (1.0 - total_dv / dv_max) };
        SequenceSolution { visits, total_dv, total_sats, end_time, fitness, truncated_at }
    }

    pub fn plane_keys(&self) -> Vec<(u32, u32)> {
        self.visits.iter().map(|v| (v.plane.constellation_id, v.plane.plane_id)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaParams {
    pub pop_size: usize,
    pub max_gen: usize,
    pub chromosome_len: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub rng_seed: u64,
    /// Spending limit during search, km/s; also the fitness denominator.
    pub dv_budget_relaxed: f64,
    pub dt_min: f64,
    pub dt_max: f64,
}

impl GaParams {
    pub fn for_scenario(scenario: &Scenario, seed: u64) -> Self {
        let m = &scenario.mission;
        GaParams {
            pop_size: 60,
            max_gen: 1500,
            chromosome_len: 40,
            crossover_prob: 0.7,
            mutation_prob: 0.3,
            rng_seed: seed,
            dv_budget_relaxed: 1.25 * m.dv_max,
            dt_min: m.dt_min,
            dt_max: m.dt_max,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.pop_size < 2 {
            return Err("population size must be at least 2".into());
        }
        for (name, p) in [("crossover", self.crossover_prob), ("mutation", self.mutation_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} probability {p} outside [0, 1]"));
            }
        }
        if self.chromosome_len == 0 {
            return Err("chromosome length must be positive".into());
        }
        if !(self.dt_min > 0.0 && self.dt_max >= self.dt_min) {
            return Err("transfer window must satisfy 0 < dt_min <= dt_max".into());
        }
        if !(self.dv_budget_relaxed > 0.0) {
            return Err("velocity budget must be positive".into());
        }
        Ok(())
    }
}

/// Inclination coefficient that brings the inspection inclination as close
/// as the band allows to `prev_incl`.
pub fn adaptive_k_i(plane: &OrbitalPlane, prev_incl: f64, d_i_max: f64) -> f64 {
    if d_i_max <= 0.0 {
        return 0.0;
    }
    ((prev_incl - plane.i0) / d_i_max).clamp(-1.0, 1.0)
}

/// Snaps a continuous coefficient so equal inputs share cached shapes.
fn snap(k: f64) -> f64 {
    (k * 1e9).round() / 1e9
}

/// Sequence evaluator for one scenario. Inspection shapes do not depend on
/// the plane's node or phase, so they are cached per constellation and
/// coefficient pair; the cache only memoizes a pure function.
pub struct Evaluator {
    pub planes: Vec<OrbitalPlane>,
    group: Vec<usize>,
    pub limits: FlybyLimits,
    pub delta_r0: f64,
    pub t0: f64,
    pub t_f: f64,
    pub c: Constants,
    pub params: GaParams,
    /// Plane indices (0-based) that may not be visited.
    pub tabu: HashSet<usize>,
    /// Inspection orbit the spacecraft starts from, if it is dropped off by
    /// another craft; the first visit then pays a transfer.
    pub origin: Option<InspectionOrbit>,
    /// Whether shapes are memoized. Off for continuous coefficient searches,
    /// where entries would rarely repeat.
    pub memo: bool,
    cache: Mutex<HashMap<(usize, i64, i64), Option<InspectionShape>>>,
}

impl Evaluator {
    pub fn new(scenario: &Scenario, params: &GaParams) -> Self {
        let planes = scenario.planes();
        let group = scenario
            .constellations
            .iter()
            .enumerate()
            .flat_map(|(g, cs)| std::iter::repeat_n(g, cs.n_planes as usize))
            .collect();
        Evaluator {
            planes,
            group,
            limits: scenario.mission.limits(),
            delta_r0: scenario.mission.delta_r0,
            t0: scenario.mission.t0,
            t_f: scenario.mission.t_f,
            c: scenario.constants,
            params: *params,
            tabu: HashSet::new(),
            origin: None,
            memo: true,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// Inspection shape of plane `idx` (0-based), `None` if infeasible.
    pub fn shape(&self, idx: usize, k_i: f64, k_omega: f64) -> Option<InspectionShape> {
        let plane = self.planes[idx];
        if !self.memo {
            return inspection_shape(&plane, k_i, k_omega, self.delta_r0, &self.limits, &self.c).ok();
        }
        let key = (self.group[idx], (k_i * 1e9).round() as i64, (k_omega * 1e9).round() as i64);
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return hit.map(|s| InspectionShape { plane, ..s });
        }
        let shape = inspection_shape(&plane, k_i, k_omega, self.delta_r0, &self.limits, &self.c).ok();
        self.cache.lock().unwrap().insert(key, shape);
        shape
    }

    /// Inclination bound of plane `idx`, `None` if the plane is infeasible.
    pub fn d_i_max(&self, idx: usize) -> Option<f64> {
        self.shape(idx, 0.0, 0.0).map(|s| s.d_i_max)
    }

    /// Best-start visit of plane `idx` with the given coefficients, after
    /// `prev` (or from the mission start). `dt` overrides the transfer time.
    pub fn visit(
        &self,
        prev: Option<&InspectionOrbit>,
        idx: usize,
        k_i: f64,
        k_omega: f64,
        dt: Option<f64>,
    ) -> Option<PlaneVisit> {
        let k_i = snap(k_i);
        let k_omega = snap(k_omega);
        let shape = self.shape(idx, k_i, k_omega)?;
        let plane = self.planes[idx];
        let c = &self.c;
        let Some(prev) = prev else {
            // Free first plane: the start satellite with the shortest wait.
            let inspection = (0..plane.n_sats)
                .map(|k| shape.instantiate(k, self.t0, c))
                .min_by(|a, b| a.t_start.total_cmp(&b.t_start))?;
            return Some(PlaneVisit { plane, start_sat: inspection.start_sat, dt_transfer: 0.0, t_arrive: self.t0, dv: 0.0, inspection });
        };
        let dep = prev.end_elements(c);
        let arrive = |dt: f64| -> Option<PlaneVisit> {
            let t_arrive = dep.epoch + dt;
            let mut best: Option<(f64, InspectionOrbit)> = None;
            for k in 0..plane.n_sats {
                let orbit = shape.instantiate(k, t_arrive, c);
                let target = propagate_to(&orbit.elements, t_arrive, c);
                let dv = estimate_transfer_dv(&dep, &target, dt, c).dv_total;
                if best.as_ref().is_none_or(|(b, _)| dv < *b) {
                    best = Some((dv, orbit));
                }
            }
            let (dv, inspection) = best?;
            Some(PlaneVisit { plane, start_sat: inspection.start_sat, dt_transfer: dt, t_arrive, dv, inspection })
        };
        if let Some(dt) = dt {
            return arrive(dt);
        }
        let dt = select_transfer_time(prev, &plane, k_i, shape.d_i_max, self.params.dt_min, self.params.dt_max, c);
        arrive(dt)
    }

    /// Inspection orbit the spacecraft is on before its first visit.
    fn origin_leg(&self) -> Option<InspectionOrbit> {
        self.origin.map(|o| InspectionOrbit { dt_stay: 0.0, ..o })
    }

    /// Fitness of a gene sequence: adaptive inclination coefficients, zero
    /// node coefficients, drift-aligned transfer times, cheapest start
    /// satellite per plane. Duplicate, tabu and infeasible planes are
    /// skipped; the sequence stops at the first visit that breaks the
    /// velocity budget or the horizon.
    pub fn evaluate(&self, x: &Chromosome) -> SequenceSolution {
        self.evaluate_traced(x).sol
    }

    /// [`Evaluator::evaluate`] plus where each gene was read in the tour.
    pub fn evaluate_traced(&self, x: &Chromosome) -> Traced {
        let budget = self.params.dv_budget_relaxed;
        let origin = self.origin_leg();
        let mut seen = HashSet::new();
        let mut visits: Vec<PlaneVisit> = Vec::new();
        let mut spent = 0.0;
        let mut truncated_at = None;
        let mut read = x.genes.len();
        let mut before = Vec::with_capacity(x.genes.len());
        for (pos, &gene) in x.genes.iter().enumerate() {
            before.push(visits.len());
            let Some(idx) = gene.checked_sub(1).filter(|&i| i < self.planes.len()) else { continue };
            if self.tabu.contains(&idx) || !seen.insert(idx) {
                continue;
            }
            let prev = visits.last().map(|v| &v.inspection).or(origin.as_ref());
            let Some(d_i_max) = self.d_i_max(idx) else { continue };
            let k_i = match prev {
                Some(p) => adaptive_k_i(&self.planes[idx], p.elements.i, d_i_max),
                None => 0.0,
            };
            let Some(v) = self.visit(prev, idx, k_i, 0.0, None) else { continue };
            if spent + v.dv > budget || v.inspection.t_end() > self.t_f {
                truncated_at = Some(visits.len());
                read = pos + 1;
                break;
            }
            spent += v.dv;
            visits.push(v);
        }
        before.resize(x.genes.len(), visits.len());
        Traced { sol: SequenceSolution::from_visits(visits, budget, truncated_at), read, before }
    }

    /// The `count` planes with the smallest plane change from the end of
    /// `leg`, counting the inclination band as free. Ties go to the lower
    /// index.
    pub fn near_planes(&self, leg: &InspectionOrbit, count: usize) -> Vec<usize> {
        let end = leg.end_elements(&self.c);
        let mut scored: Vec<(f64, usize)> = (0..self.planes.len())
            .filter(|i| !self.tabu.contains(i) && self.planes[*i] != leg.plane)
            .filter_map(|i| {
                let p = &self.planes[i];
                let d_i = ((end.i - p.i0).abs() - self.d_i_max(i)?).max(0.0);
                let d_raan = wrap_pi(end.raan - p.raan_at(end.epoch, &self.c)) * p.i0.sin();
                Some((d_i.hypot(d_raan), i))
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored.into_iter().take(count).map(|x| x.1).collect()
    }
}

/// An evaluation with its reading trace.
#[derive(Debug, Clone)]
pub struct Traced {
    pub sol: SequenceSolution,
    /// Genes read, counting the one that stopped the tour.
    pub read: usize,
    /// Visits made before each gene was read.
    pub before: Vec<usize>,
}

pub fn evaluate_sequence(x: &Chromosome, scenario: &Scenario, params: &GaParams) -> (f64, SequenceSolution) {
    let sol = Evaluator::new(scenario, params).evaluate(x);
    (sol.fitness, sol)
}

/// Outcome of a genetic search.
#[derive(Debug, Clone)]
pub struct GaRun {
    pub best: SequenceSolution,
    pub chromosome: Chromosome,
    /// Best-ever fitness after each generation (entry 0 is the initial population).
    pub history: Vec<f64>,
}

/// Share of mutations that draw the new plane near the tour's state.
pub const GUIDED_SHARE: f64 = 0.5;
/// Candidate count for a guided replacement.
pub const NEAR_COUNT: usize = 4;

/// Index of the largest fitness, lowest index on ties.
fn argmax(fit: &[f64]) -> usize {
    let mut best = 0;
    for (i, f) in fit.iter().enumerate() {
        if *f > fit[best] {
            best = i;
        }
    }
    best
}

/// Roulette spin on fitness above the population minimum; a flat
/// population is drawn uniformly.
fn roulette(rng: &mut ChaCha8Rng, fit: &[f64], floor: f64, total: f64) -> usize {
    let spin = rng.gen::<f64>();
    if !(total > 0.0) {
        return ((spin * fit.len() as f64) as usize).min(fit.len() - 1);
    }
    let mut r = spin * total;
    for (i, f) in fit.iter().enumerate() {
        r -= f - floor;
        if r < 0.0 {
            return i;
        }
    }
    fit.len() - 1
}

/// Seeded genetic search. Draw order from the single generator: initial
/// genes individual by individual; then per offspring pair two roulette
/// spins, the crossover draw, two cut points if crossing, then for each
/// child the mutation draw and, when it fires, a position, the guided draw
/// and the new plane. Mutation positions are limited to the genes the
/// parent's evaluation read, since later genes have no effect on its
/// fitness. A guided replacement is drawn among the planes nearest in node
/// and inclination to where the parent's tour stood at that gene. The best
/// individual is copied unchanged into the next generation.
pub fn ga_run(eval: &Evaluator, params: &GaParams) -> GaRun {
    let n_planes = eval.planes.len();
    let len = params.chromosome_len;
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut pop: Vec<Chromosome> = (0..params.pop_size)
        .map(|_| Chromosome { genes: (0..len).map(|_| rng.gen_range(1..=n_planes)).collect() })
        .collect();
    let evaluate_all = |pop: &[Chromosome]| -> Vec<Traced> { pop.par_iter().map(|x| eval.evaluate_traced(x)).collect() };

    let mut scored = evaluate_all(&pop);
    let mut fit: Vec<f64> = scored.iter().map(|s| s.sol.fitness).collect();
    let b = argmax(&fit);
    let mut best = (scored[b].sol.clone(), pop[b].clone());
    let mut history = vec![best.0.fitness];

    for _ in 0..params.max_gen {
        let floor = fit.iter().copied().fold(f64::INFINITY, f64::min);
        let total: f64 = fit.iter().map(|f| f - floor).sum();
        let elite = argmax(&fit);
        let mut next = vec![pop[elite].clone()];
        while next.len() < params.pop_size {
            let p1 = roulette(&mut rng, &fit, floor, total);
            let p2 = roulette(&mut rng, &fit, floor, total);
            let mut c1 = pop[p1].genes.clone();
            let mut c2 = pop[p2].genes.clone();
            if rng.gen::<f64>() < params.crossover_prob {
                let a = rng.gen_range(0..len);
                let b = rng.gen_range(0..len);
                let (lo, hi) = (a.min(b), a.max(b) + 1);
                c1[lo..hi].swap_with_slice(&mut c2[lo..hi]);
            }
            for (child, parent) in [(&mut c1, &scored[p1]), (&mut c2, &scored[p2])] {
                if rng.gen::<f64>() < params.mutation_prob {
                    let span = parent.read.clamp(1, len);
                    let at = rng.gen_range(0..span);
                    let guided = rng.gen::<f64>() < GUIDED_SHARE;
                    let prior = parent.before[at].checked_sub(1).map(|v| &parent.sol.visits[v].inspection);
                    child[at] = match prior.filter(|_| guided).map(|leg| eval.near_planes(leg, NEAR_COUNT)) {
                        Some(near) if !near.is_empty() => near[rng.gen_range(0..near.len())] + 1,
                        _ => rng.gen_range(1..=n_planes),
                    };
                }
            }
            next.push(Chromosome { genes: c1 });
            if next.len() < params.pop_size {
                next.push(Chromosome { genes: c2 });
            }
        }
        // The elite keeps its evaluation.
        let elite_eval = scored[elite].clone();
        pop = next;
        scored = std::iter::once(elite_eval).chain(evaluate_all(&pop[1..])).collect();
        fit = scored.iter().map(|s| s.sol.fitness).collect();
        let b = argmax(&fit);
        if fit[b] > best.0.fitness {
            best = (scored[b].sol.clone(), pop[b].clone());
        }
        history.push(best.0.fitness);
    }
    GaRun { best: best.0, chromosome: best.1, history }
}

pub fn ga_search(scenario: &Scenario, params: &GaParams) -> SequenceSolution {
    ga_run(&Evaluator::new(scenario, params), params).best
}

/// Plane indices (0-based) of a solution's visits.
fn visit_indices(scenario: &Scenario, sol: &SequenceSolution) -> Vec<usize> {
    sol.visits
        .iter()
        .filter_map(|v| scenario.plane_index(v.plane.constellation_id, v.plane.plane_id))
        .collect()
}

/// Craft are searched one after another, each excluding the planes already
/// taken. In a launch pair `(a, b)` craft `b` starts from craft `a`'s first
/// inspection orbit and pays the transfer out of it from its own budget.
/// Pairs refer to 0-based craft indices and must name earlier craft first.
pub fn multi_spacecraft_greedy(
    scenario: &Scenario,
    n_craft: usize,
    pairing: &[(usize, usize)],
    params: &GaParams,
) -> Vec<SequenceSolution> {
    let mut tabu = HashSet::new();
    let mut out: Vec<SequenceSolution> = Vec::new();
    for craft in 0..n_craft {
        let mut eval = Evaluator::new(scenario, params);
        eval.tabu = tabu.clone();
        eval.origin = pairing
            .iter()
            .find(|(a, b)| *b == craft && *a < craft)
            .and_then(|(a, _)| out[*a].visits.first())
            .map(|v| v.inspection);
        let mut p = *params;
        p.rng_seed = params.rng_seed.wrapping_add(craft as u64);
        let sol = ga_run(&eval, &p).best;
        tabu.extend(visit_indices(scenario, &sol));
        out.push(sol);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{parse_scenario, DAY};

    fn small() -> Scenario {
        parse_scenario("1 72 22 550 53 0\n2 36 30 600 55 1\n").unwrap()
    }

    fn params(s: &Scenario) -> GaParams {
        GaParams { pop_size: 8, max_gen: 5, chromosome_len: 6, ..GaParams::for_scenario(s, 7) }
    }

    #[test]
    fn k_i_clamps_to_band() {
        let plane = small().planes()[0];
        let d = 0.014;
        assert_eq!(adaptive_k_i(&plane, plane.i0 + 1.0, d), 1.0);
        assert_eq!(adaptive_k_i(&plane, plane.i0 - 1.0, d), -1.0);
        assert_eq!(adaptive_k_i(&plane, plane.i0 + 0.3, 0.0), 0.0);
        let k = adaptive_k_i(&plane, plane.i0 + 0.007, d);
        assert!((plane.i0 + k * d - (plane.i0 + 0.007)).abs() < 1e-15);
    }

    #[test]
    fn single_plane_fitness() {
        let s = small();
        let p = params(&s);
        let (f, sol) = evaluate_sequence(&Chromosome { genes: vec![3] }, &s, &p);
        assert_eq!(sol.total_sats, 22);
        assert_eq!(sol.total_dv, 0.0);
        assert_eq!(f, 23.0);
    }

    #[test]
    fn duplicates_and_out_of_range_genes_are_skipped() {
        let s = small();
        let p = params(&s);
        let (_, a) = evaluate_sequence(&Chromosome { genes: vec![1, 1, 2, 999, 2] }, &s, &p);
        let (_, b) = evaluate_sequence(&Chromosome { genes: vec![1, 2] }, &s, &p);
        assert_eq!(a, b);
        assert_eq!(a.visits.len(), 2);
    }

    #[test]
    fn horizon_truncates() {
        let mut s = small();
        s.mission.t_f = 2.0 * DAY;
        let p = params(&s);
        let (f, sol) = evaluate_sequence(&Chromosome { genes: vec![1, 2, 3] }, &s, &p);
        assert_eq!(sol.truncated_at, Some(1));
        assert_eq!(sol.total_sats, 22);
        assert_eq!(f, 23.0);
    }

    #[test]
    fn chosen_start_is_the_cheapest() {
        let s = small();
        let p = params(&s);
        let eval = Evaluator::new(&s, &p);
        let sol = eval.evaluate(&Chromosome { genes: vec![1, 2] });
        let prev = &sol.visits[0].inspection;
        let v = &sol.visits[1];
        let shape = eval.shape(1, v.inspection.k_i, 0.0).unwrap();
        let dep = prev.end_elements(&eval.c);
        for k in 0..22 {
            let o = shape.instantiate(k, v.t_arrive, &eval.c);
            let t = propagate_to(&o.elements, v.t_arrive, &eval.c);
            assert!(estimate_transfer_dv(&dep, &t, v.dt_transfer, &eval.c).dv_total >= v.dv);
        }
    }

    #[test]
    fn arrival_times_increase_and_budget_holds() {
        let s = small();
        let p = params(&s);
        let sol = ga_search(&s, &p);
        assert!(sol.total_dv <= p.dv_budget_relaxed);
        assert!(sol.end_time <= s.mission.t_f);
        for w in sol.visits.windows(2) {
            assert!(w[1].t_arrive > w[0].t_arrive);
        }
    }

    #[test]
    fn ga_is_deterministic_and_elitist() {
        let s = small();
        let p = params(&s);
        let eval = Evaluator::new(&s, &p);
        let a = ga_run(&eval, &p);
        let b = ga_run(&Evaluator::new(&s, &p), &p);
        assert_eq!(a.best, b.best);
        assert!(a.history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn greedy_craft_take_disjoint_planes() {
        let s = parse_scenario("1 3 22 550 53 0\n").unwrap();
        let p = GaParams { pop_size: 4, max_gen: 2, chromosome_len: 3, ..GaParams::for_scenario(&s, 1) };
        let sols = multi_spacecraft_greedy(&s, 2, &[(0, 1)], &p);
        let mut all: Vec<_> = sols.iter().flat_map(|x| x.plane_keys()).collect();
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n);
        assert!(sols[1].visits.first().is_none_or(|v| v.dv > 0.0));
    }
}
