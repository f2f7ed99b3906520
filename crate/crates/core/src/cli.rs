//! Command-line front end. `run` parses arguments, dispatches and returns
//! the process exit code: 0 success, 1 usage, 2 infeasible, 3 verify
//! violation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::inspection::compute_inspection_orbit;
use crate::refine::{de_refine, realize_within_budget, DeParams};
use crate::scenario::{
    parse_scenario, parse_schedules, parse_solution, serialize_schedules, serialize_solution, Scenario, DAY,
};
use crate::search::{ga_search, multi_spacecraft_greedy, GaParams, SequenceSolution};
use crate::verify::{emit_trace, sample_leg, simulate_inspection_leg, verify_solution};

const BUILTIN_SCENARIO: &str = include_str!("../../../scenarios/table1.txt");
const THREADS_ENV: &str = "PLANE_SWEEP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "plane-sweep", version, about = "Constellation inspection tour planner")]
pub struct Cli {
    /// Worker threads (falls back to PLANE_SWEEP_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize the inspection orbit of one plane.
    Inspect(InspectArgs),
    /// Genetic search for a single-craft tour.
    Search(SearchArgs),
    /// Refine a tour, realize its transfers and write impulse schedules.
    Refine(RefineArgs),
    /// Replay a tour and its schedules on the truth model.
    Verify(VerifyArgs),
    /// Greedy multi-craft search with a tabu list.
    Multi(MultiArgs),
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario file; the bundled 410-plane benchmark when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_name = "DAYS")]
    pub dt_min: Option<f64>,
    #[arg(long, value_name = "DAYS")]
    pub dt_max: Option<f64>,
    /// Mission velocity budget, km/s. Search spends up to 1.25 times this.
    #[arg(long, value_name = "KM/S")]
    pub dv_budget: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GaArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub gens: Option<usize>,
    #[arg(long)]
    pub pop: Option<usize>,
    /// Full-length run (6000 generations).
    #[arg(long)]
    pub full: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Plane as `constellation-plane`, e.g. `1-1`.
    #[arg(long, default_value = "1-1")]
    pub plane: String,
    #[arg(long, default_value_t = 0)]
    pub start_sat: usize,
    #[arg(long, default_value_t = 0.0, value_parser = unit_coefficient, allow_negative_numbers = true)]
    pub k_i: f64,
    #[arg(long, default_value_t = 0.0, value_parser = unit_coefficient, allow_negative_numbers = true)]
    pub k_omega: f64,
    /// Arrival epoch, days after mission start.
    #[arg(long, default_value_t = 0.0)]
    pub t0: f64,
    /// Write the relative-motion trace of the leg here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub ga: GaArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Solution to refine.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub gens: Option<usize>,
    #[arg(long)]
    pub pop: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Impulse schedules; `<out>.schedules` when omitted.
    #[arg(long)]
    pub schedules: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub input: PathBuf,
    /// Impulse schedules; `<input>.schedules` when omitted.
    #[arg(long)]
    pub schedules: Option<PathBuf>,
    /// Solution with the verification report appended.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Flyby trace of every leg.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MultiArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub ga: GaArgs,
    #[arg(long, default_value_t = 2)]
    pub craft: usize,
    /// Launch pairs of 1-based craft numbers, e.g. `1-2,3-4`.
    #[arg(long, default_value = "")]
    pub pairs: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Infeasible(String),
    Violation(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Infeasible(_) => 2,
            CliError::Violation(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(r) => write!(f, "error: usage: {r}"),
            CliError::Infeasible(r) => write!(f, "error: infeasible: {r}"),
            CliError::Violation(r) => write!(f, "error: violation: {r}"),
        }
    }
}

fn unit_coefficient(s: &str) -> Result<f64, String> {
    let k: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (-1.0..=1.0).contains(&k) {
        Ok(k)
    } else {
        Err(format!("{k} outside [-1, 1]"))
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

impl ScenarioArgs {
    fn load(&self) -> Result<Scenario, CliError> {
        let text = match &self.scenario {
            Some(p) => read(p)?,
            None => BUILTIN_SCENARIO.to_string(),
        };
        let mut s = parse_scenario(&text).map_err(usage)?;
        let m = &mut s.mission;
        if let Some(d) = self.dt_min {
            m.dt_min = d * DAY;
        }
        if let Some(d) = self.dt_max {
            m.dt_max = d * DAY;
        }
        if let Some(dv) = self.dv_budget {
            m.dv_max = dv;
        }
        if !(m.dt_min > 0.0 && m.dt_max >= m.dt_min) {
            return Err(usage("transfer window must satisfy 0 < dt-min <= dt-max"));
        }
        if !(m.dv_max > 0.0) {
            return Err(usage("dv-budget must be positive"));
        }
        Ok(s)
    }
}

impl GaArgs {
    fn params(&self, scenario: &Scenario) -> Result<GaParams, CliError> {
        let mut p = GaParams::for_scenario(scenario, self.seed);
        if self.full {
            p.max_gen = 6000;
        }
        if let Some(g) = self.gens {
            p.max_gen = g;
        }
        if let Some(n) = self.pop {
            p.pop_size = n;
        }
        p.validate().map_err(usage)?;
        Ok(p)
    }
}

fn parse_plane(s: &str, scenario: &Scenario) -> Result<usize, CliError> {
    let bad = || usage(format!("plane `{s}` is not of the form constellation-plane"));
    let (c, p) = s.split_once('-').ok_or_else(bad)?;
    let c: u32 = c.trim().parse().map_err(|_| bad())?;
    let p: u32 = p.trim().parse().map_err(|_| bad())?;
    scenario.plane_index(c, p).ok_or_else(|| usage(format!("plane {c}-{p} is not in the scenario")))
}

fn parse_pairs(s: &str, craft: usize) -> Result<Vec<(usize, usize)>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            let bad = || usage(format!("pair `{t}` is not of the form a-b with 1 <= a < b <= {craft}"));
            let (a, b) = t.split_once('-').ok_or_else(bad)?;
            let a: usize = a.parse().map_err(|_| bad())?;
            let b: usize = b.parse().map_err(|_| bad())?;
            if a == 0 || a >= b || b > craft {
                return Err(bad());
            }
            Ok((a - 1, b - 1))
        })
        .collect()
}

fn header(command: &str, seed: Option<u64>) -> String {
    match seed {
        Some(s) => format!("# plane-sweep {command} seed {s}\n"),
        None => format!("# plane-sweep {command}\n"),
    }
}

fn summary(sol: &SequenceSolution) -> String {
    format!("satellites {} planes {} dv_estimated_kms {:.4}", sol.total_sats, sol.visits.len(), sol.total_dv)
}

fn inspect(a: &InspectArgs, out: &mut String) -> Result<(), CliError> {
    let s = a.scenario.load()?;
    let plane = s.planes()[parse_plane(&a.plane, &s)?];
    if a.start_sat >= plane.n_sats {
        return Err(usage(format!("start-sat {} out of range 0..{}", a.start_sat, plane.n_sats)));
    }
    let m = &s.mission;
    let c = &s.constants;
    let o = compute_inspection_orbit(&plane, a.start_sat, a.t0 * DAY, a.k_i, a.k_omega, m.delta_r0, &m.limits(), c)
        .map_err(|e| CliError::Infeasible(e.to_string()))?;
    let el = &o.elements;
    let off = &o.offsets;
    writeln!(out, "plane {}-{} satellites {}", plane.constellation_id, plane.plane_id, plane.n_sats).unwrap();
    writeln!(out, "a_km {:.4}", el.a).unwrap();
    writeln!(out, "e {:.6}", el.e).unwrap();
    writeln!(out, "i_deg {:.6}", el.i.to_degrees()).unwrap();
    writeln!(out, "raan_deg {:.6}", el.raan.to_degrees()).unwrap();
    writeln!(out, "argp_deg {:.6}", el.argp.to_degrees()).unwrap();
    writeln!(out, "mean_anomaly_deg {:.6}", el.mean_anomaly.to_degrees()).unwrap();
    writeln!(out, "d_a_km {:.3}", off.d_a).unwrap();
    writeln!(out, "d_a_correction_km {:.4}", off.d_a_correction).unwrap();
    writeln!(out, "d_e {:.6}", off.d_e).unwrap();
    writeln!(out, "d_i_rad {:.6}", off.d_i).unwrap();
    writeln!(out, "d_raan0_rad {:.6}", off.d_raan0).unwrap();
    writeln!(out, "d_argp0_rad {:.6}", off.d_argp0).unwrap();
    writeln!(out, "d_i_max_rad {:.6}", o.d_i_max).unwrap();
    writeln!(out, "raan_slack_rad {:.6}", o.raan_slack).unwrap();
    writeln!(out, "t_start_days {:.6}", o.t_start / DAY).unwrap();
    writeln!(out, "dt_stay_days {:.6}", o.dt_stay / DAY).unwrap();
    if let Some(path) = &a.trace {
        let records = simulate_inspection_leg(&o, &m.limits(), c);
        let passed = records.iter().filter(|r| r.pass).count();
        write(path, &emit_trace(&records, &sample_leg(&o, c)))?;
        writeln!(out, "flybys passed {passed}/{}", records.len()).unwrap();
    }
    Ok(())
}

fn search(a: &SearchArgs, out: &mut String) -> Result<(), CliError> {
    let s = a.scenario.load()?;
    let p = a.ga.params(&s)?;
    let sol = ga_search(&s, &p);
    if let Some(path) = &a.out {
        write(path, &(header("search", Some(p.rng_seed)) + &serialize_solution(&sol, None)))?;
    }
    writeln!(out, "seed {} generations {} population {}", p.rng_seed, p.max_gen, p.pop_size).unwrap();
    writeln!(out, "{}", summary(&sol)).unwrap();
    Ok(())
}

fn refine(a: &RefineArgs, out: &mut String) -> Result<(), CliError> {
    let s = a.scenario.load()?;
    let (input, _) = parse_solution(&read(&a.input)?, &s).map_err(usage)?;
    let ga = GaParams::for_scenario(&s, a.seed);
    let mut de = DeParams::for_planes(input.visits.len(), a.seed);
    if let Some(g) = a.gens {
        de.max_gen = g;
    }
    if let Some(n) = a.pop {
        de.pop_size = n;
    }
    de.validate().map_err(usage)?;
    let refined = de_refine(&input, &de, &s, &ga);
    let (kept, schedules) = realize_within_budget(&refined, s.mission.dv_max, ga.dv_budget_relaxed, &s.constants);
    let actual: f64 = schedules.iter().map(|x| crate::transfer::schedule_dv(x)).sum();
    let sched_path = a.schedules.clone().unwrap_or_else(|| with_suffix(&a.out, ".schedules"));
    write(&a.out, &(header("refine", Some(a.seed)) + &serialize_solution(&kept, None)))?;
    write(&sched_path, &(header("refine", Some(a.seed)) + &serialize_schedules(&schedules)))?;
    let gain = if input.total_dv > 0.0 { 1.0 - refined.total_dv / input.total_dv } else { 0.0 };
    writeln!(out, "seed {} generations {} population {}", a.seed, de.max_gen, de.pop_size).unwrap();
    writeln!(out, "input {}", summary(&input)).unwrap();
    writeln!(out, "refined {} reduction {:.1}%", summary(&refined), 100.0 * gain).unwrap();
    writeln!(out, "realized {} dv_actual_kms {actual:.4}", summary(&kept)).unwrap();
    Ok(())
}

fn verify(a: &VerifyArgs, out: &mut String) -> Result<(), CliError> {
    let s = a.scenario.load()?;
    let (sol, _) = parse_solution(&read(&a.input)?, &s).map_err(usage)?;
    let sched_path = a.schedules.clone().unwrap_or_else(|| with_suffix(&a.input, ".schedules"));
    let schedules = parse_schedules(&read(&sched_path)?).map_err(usage)?;
    let report = verify_solution(&sol, &schedules, &s).map_err(usage)?;
    if let Some(path) = &a.out {
        write(path, &(header("verify", None) + &serialize_solution(&sol, Some(&report))))?;
    }
    if let Some(path) = &a.trace {
        let records: Vec<_> = report.legs.iter().flatten().copied().collect();
        write(path, &emit_trace(&records, &[]))?;
    }
    writeln!(out, "{}", summary(&sol)).unwrap();
    writeln!(out, "flybys passed {} failed {} dv_actual_kms {:.4}", report.passed, report.failed, report.dv_actual)
        .unwrap();
    for v in &report.violations {
        writeln!(out, "violation {v}").unwrap();
    }
    if !report.is_clean() {
        return Err(CliError::Violation(format!("{} violations", report.violations.len())));
    }
    if report.passed != sol.total_sats {
        return Err(CliError::Violation(format!(
            "{} flybys passed, solution claims {}",
            report.passed, sol.total_sats
        )));
    }
    Ok(())
}

fn multi(a: &MultiArgs, out: &mut String) -> Result<(), CliError> {
    let s = a.scenario.load()?;
    let p = a.ga.params(&s)?;
    if a.craft == 0 {
        return Err(usage("craft must be at least 1"));
    }
    let pairs = parse_pairs(&a.pairs, a.craft)?;
    let sols = multi_spacecraft_greedy(&s, a.craft, &pairs, &p);
    let mut file = header("multi", Some(p.rng_seed));
    for (j, sol) in sols.iter().enumerate() {
        writeln!(file, "craft {}", j + 1).unwrap();
        file.push_str(&serialize_solution(sol, None));
        writeln!(out, "craft {} {}", j + 1, summary(sol)).unwrap();
    }
    if let Some(path) = &a.out {
        write(path, &file)?;
    }
    let total: usize = sols.iter().map(|x| x.total_sats).sum();
    writeln!(out, "seed {} craft {} satellites {total}", p.rng_seed, a.craft).unwrap();
    Ok(())
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(n) = flag {
        return if n == 0 { Err(usage("threads must be at least 1")) } else { Ok(Some(n)) };
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(usage(format!("{THREADS_ENV}={v} is not a positive integer"))),
        },
        Err(_) => Ok(None),
    }
}

/// Runs a parsed command; the returned text is what the command prints.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let start = Instant::now();
    let mut out = String::new();
    let body = |out: &mut String| match &cli.command {
        Command::Inspect(a) => inspect(a, out),
        Command::Search(a) => search(a, out),
        Command::Refine(a) => refine(a, out),
        Command::Verify(a) => verify(a, out),
        Command::Multi(a) => multi(a, out),
    };
    let res = match threads(cli.threads)? {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(usage)?.install(|| body(&mut out)),
        None => body(&mut out),
    };
    writeln!(out, "wall_time_s {:.3}", start.elapsed().as_secs_f64()).unwrap();
    match res {
        Ok(()) => Ok(out),
        Err(e) => {
            print!("{out}");
            Err(e)
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("{e}");
            e.code()
        }
    }
}
