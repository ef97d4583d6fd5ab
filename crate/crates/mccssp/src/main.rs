use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mccssp::backend::{backend_by_name, default_backend_name, SOLVER_ENV};
use mccssp::experiments::{
    build_library, grid_bench, intersection_sweep, plan_time, selftest, with_jobs, SweepConfig,
};
use mccssp::io;
use mccssp_core::grid::{FailureMode, GridSpec};
use mccssp_core::ilp::{build_ilp, solve, SolveOptions, SolveStatus};
use mccssp_core::intersection::planner::PlannerKind;
use mccssp_core::intersection::scenario::Scenario;
use mccssp_core::layers::reachable_layers;
use mccssp_core::oracle::{brute_force_optimal, DEFAULT_POLICY_CAP};
use mccssp_core::pft::{self, Axis, CollisionMatrix, Pft, RiskTable, VehicleGeometry};
use rayon::prelude::*;

#[derive(Parser)]
#[command(
    name = "mccssp",
    version,
    about = "Multi-agent chance-constrained SSP planning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve an instance file and print objective, risks and policy
    Solve(SolveArgs),
    /// Sweep grid instances over agent counts and horizons, printing CSV
    GridBench(GridBenchArgs),
    /// Simulate the intersection over planners, budgets, horizons and HV fractions, printing CSV
    IntersectSim(SimArgs),
    /// Time MCC-SSP planning on random intersection snapshots, printing CSV
    PlanTime(PlanTimeArgs),
    /// Flow tube data pipeline
    #[command(subcommand)]
    Pft(PftCommand),
    /// Run the built-in oracle suites
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct SolverArgs {
    /// MILP backend (highs, microlp); defaults to $MCCSSP_SOLVER or highs
    #[arg(long)]
    solver: Option<String>,
    /// Solver time limit in seconds
    #[arg(long)]
    time_limit: Option<f64>,
    /// Relative optimality gap at which the solver stops
    #[arg(long, default_value_t = SolveOptions::default().mip_rel_gap)]
    mip_gap: f64,
}

impl SolverArgs {
    fn name(&self) -> String {
        self.solver.clone().unwrap_or_else(default_backend_name)
    }

    fn options(&self) -> SolveOptions {
        SolveOptions {
            time_limit_s: self.time_limit,
            mip_rel_gap: self.mip_gap,
            ..SolveOptions::default()
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    instance: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    /// Cross-check the optimum by exhaustive search over deterministic policies
    #[arg(long)]
    oracle: bool,
    /// Write the MILP in LP format
    #[arg(long)]
    export_lp: Option<PathBuf>,
}

#[derive(Args)]
struct GridBenchArgs {
    /// Agent counts, as `a..b` (inclusive) or a comma-separated list
    #[arg(long, default_value = "1..4")]
    agents: String,
    /// Horizons, as `a..b` (inclusive) or a comma-separated list
    #[arg(long, default_value = "1..4")]
    horizon: String,
    #[arg(long, default_value_t = 10_000)]
    width: u64,
    #[arg(long, default_value_t = 10_000)]
    height: u64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 0.8)]
    success_prob: f64,
    #[arg(long, value_enum, default_value_t = FailureArg::Stay)]
    failure_mode: FailureArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Runs per cell; times are the minimum
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[command(flatten)]
    solver: SolverArgs,
    /// Worker threads (0: all cores)
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output file instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FailureArg {
    Stay,
    Slip,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlannerArg {
    Mccssp,
    Fcfs,
}

#[derive(Args)]
struct SimArgs {
    /// Scenario file; the built-in default intersection if absent
    scenario: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [PlannerArg::Mccssp, PlannerArg::Fcfs])]
    planners: Vec<PlannerArg>,
    /// Risk budgets; the scenario's if absent
    #[arg(long, value_delimiter = ',')]
    deltas: Vec<f64>,
    /// Planning horizons in steps; the scenario's if absent
    #[arg(long, value_delimiter = ',')]
    horizons: Vec<usize>,
    /// Fractions of human drivers; the scenario's if absent
    #[arg(long, value_delimiter = ',')]
    hv_fractions: Vec<f64>,
    /// First seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replications per cell, with seeds `seed..seed+reps`
    #[arg(long, default_value_t = 10)]
    reps: u64,
    /// Simulated seconds per replication
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlanTimeArgs {
    /// Scenario file; the built-in default intersection if absent
    scenario: Option<PathBuf>,
    /// Planning horizons, as `a..b` (inclusive) or a comma-separated list
    #[arg(long, default_value = "1..4")]
    horizon: String,
    /// Maneuver speeds in m/s, one action each besides waiting; the scenario's if absent
    #[arg(long, value_delimiter = ',')]
    speeds: Vec<f64>,
    /// Vehicles already in the box, besides one waiting per lane
    #[arg(long, default_value_t = 8)]
    executing: usize,
    /// Snapshots per horizon, with seeds `seed..seed+snapshots`
    #[arg(long, default_value_t = 20)]
    snapshots: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PftCommand {
    /// Fit a tube to recorded trajectories
    Fit(FitArgs),
    /// Posterior over candidate tubes given an observed prefix
    Intent(IntentArgs),
    /// Tabulate pairwise collision risk between tubes
    RiskTable(RiskTableArgs),
}

#[derive(Args)]
struct FitArgs {
    /// CSV files with `t,x,y` rows and an optional `id` column
    #[arg(required = true)]
    trajectories: Vec<PathBuf>,
    /// Seconds between samples; inferred from the time stamps if absent
    #[arg(long)]
    timestep: Option<f64>,
    /// Number of tube indices; the median trajectory length if absent
    #[arg(long)]
    length: Option<usize>,
    /// Variance used when fitting a single trajectory
    #[arg(long)]
    cov_floor: Option<f64>,
    #[arg(long, default_value = "")]
    label: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IntentArgs {
    /// Candidate tube files
    #[arg(long, required = true, num_args = 1..)]
    tubes: Vec<PathBuf>,
    /// CSV with the observed `t,x,y` prefix
    #[arg(long)]
    prefix: PathBuf,
    /// Prior probabilities; uniform if absent
    #[arg(long, value_delimiter = ',')]
    prior: Vec<f64>,
}

#[derive(Args)]
struct RiskTableArgs {
    /// Tube files, one per table axis
    #[arg(long, required = true, num_args = 2..)]
    tubes: Vec<PathBuf>,
    /// Tube indices per progression step
    #[arg(long, default_value_t = 6)]
    stride: usize,
    /// Tube indices over which each entry accumulates risk; the longest tube if absent
    #[arg(long)]
    window: Option<usize>,
    /// Monte Carlo samples per tube index pair
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long)]
    solver: Option<String>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

/// Exit status with the error that caused it.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait ExitClass<T> {
    fn invalid(self) -> Result<T, Failure>;
    fn solver(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitClass<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: 1,
            error: e.into(),
        })
    }

    fn solver(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: 2,
            error: e.into(),
        })
    }
}

/// Parses `a..b` (inclusive) or `a,b,c`.
fn parse_list(text: &str) -> anyhow::Result<Vec<usize>> {
    if let Some((a, b)) = text.split_once("..") {
        let a: usize = a
            .trim()
            .parse()
            .with_context(|| format!("bad range start in `{text}`"))?;
        let b: usize = b
            .trim_start_matches('=')
            .trim()
            .parse()
            .with_context(|| format!("bad range end in `{text}`"))?;
        if a > b {
            bail!("empty range `{text}`");
        }
        return Ok((a..=b).collect());
    }
    text.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .with_context(|| format!("bad number `{x}`"))
        })
        .collect()
}

fn invocation() -> String {
    let args: Vec<String> = std::env::args().collect();
    format!("mccssp {} | {}", env!("CARGO_PKG_VERSION"), args.join(" "))
}

fn output(out: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(
            fs::File::create(p).with_context(|| format!("{}: cannot create", p.display()))?,
        ),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn cmd_solve(args: SolveArgs) -> Result<(), Failure> {
    let inst = io::read_instance(&args.instance).invalid()?;
    let mut backend = backend_by_name(&args.solver.name()).invalid()?;
    let space = reachable_layers(&inst);
    let model = build_ilp(&inst, &space).invalid()?;
    if let Some(p) = &args.export_lp {
        fs::write(p, model.to_lp_string())
            .with_context(|| format!("{}: cannot write", p.display()))
            .invalid()?;
    }
    let result = solve(&space, &model, backend.as_mut(), &args.solver.options()).solver()?;
    println!("status {}", status_name(result.status));
    if matches!(
        result.status,
        SolveStatus::Infeasible | SolveStatus::BudgetExhausted
    ) {
        return Err(Failure {
            code: 2,
            error: anyhow!(
                "no policy satisfies the risk budgets ({})",
                status_name(result.status)
            ),
        });
    }
    println!("objective {:.6}", result.utility);
    for (j, (r, d)) in result.risks.iter().zip(&inst.risk_budgets).enumerate() {
        println!("risk[{j}] {r:.6} budget {d:.6}");
    }
    if let Some(policy) = &result.policy {
        println!("policy");
        for (i, il) in space.interactions.iter().enumerate() {
            for (k, layer) in il.layers[..space.horizon].iter().enumerate() {
                for (s, joint) in layer.states.iter().enumerate() {
                    let Some(ja) = policy.action(i, k, s) else {
                        continue;
                    };
                    let states: Vec<String> = il
                        .members
                        .iter()
                        .zip(joint)
                        .map(|(&m, &x)| inst.agents[m].state_label(x))
                        .collect();
                    let actions: Vec<String> = il
                        .members
                        .iter()
                        .enumerate()
                        .map(|(pos, &m)| inst.agents[m].action_label(il.codec.component(ja, pos)))
                        .collect();
                    println!(
                        "  i={i} t={k} ({}) -> {}",
                        states.join(", "),
                        actions.join(", ")
                    );
                }
            }
        }
    }
    if args.oracle {
        let bf = brute_force_optimal(&inst, &space, DEFAULT_POLICY_CAP).solver()?;
        let agrees = result.status == SolveStatus::Optimal
            && bf.is_feasible()
            && (result.utility - bf.objective).abs() <= 1e-6;
        if agrees {
            println!("objective {:.6}, oracle agrees", result.utility);
        } else {
            println!(
                "objective {:.6}, oracle finds {:.6}",
                result.utility, bf.objective
            );
            return Err(Failure {
                code: 2,
                error: anyhow!("solver and exhaustive search disagree"),
            });
        }
    }
    Ok(())
}

fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::BudgetExhausted => "budget_exhausted",
        SolveStatus::TimeLimit => "time_limit",
    }
}

fn cmd_grid_bench(args: GridBenchArgs) -> Result<(), Failure> {
    let agents = parse_list(&args.agents).invalid()?;
    let horizons = parse_list(&args.horizon).invalid()?;
    let solver = args.solver.name();
    backend_by_name(&solver).invalid()?;
    let base = GridSpec {
        width: args.width,
        height: args.height,
        delta: args.delta,
        success_prob: args.success_prob,
        failure_mode: match args.failure_mode {
            FailureArg::Stay => FailureMode::StayInPlace,
            FailureArg::Slip => FailureMode::SlipLateral,
        },
        seed: args.seed,
        ..GridSpec::default()
    };
    base.validate().invalid()?;
    let options = args.solver.options();
    let rows = with_jobs(args.jobs, || {
        grid_bench(&base, &agents, &horizons, &solver, &options, args.repeats)
    })
    .solver()?;
    let comment = format!(
        "{} | solver {solver} | non-deterministic columns: build_s,solve_s",
        invocation()
    );
    io::write_csv(output(&args.out).invalid()?, &comment, &rows).invalid()?;
    Ok(())
}

fn cmd_intersect_sim(args: SimArgs) -> Result<(), Failure> {
    let (scenario, tubes) = match &args.scenario {
        Some(p) => io::read_scenario(p).invalid()?,
        None => (Scenario::default(), BTreeMap::new()),
    };
    let solver = args.solver.name();
    backend_by_name(&solver).invalid()?;
    let config = SweepConfig {
        planners: args
            .planners
            .iter()
            .map(|p| match p {
                PlannerArg::Mccssp => PlannerKind::MccSsp,
                PlannerArg::Fcfs => PlannerKind::Fcfs,
            })
            .collect(),
        deltas: if args.deltas.is_empty() {
            vec![scenario.delta]
        } else {
            args.deltas.clone()
        },
        horizons: if args.horizons.is_empty() {
            vec![scenario.horizon]
        } else {
            args.horizons.clone()
        },
        hv_fractions: if args.hv_fractions.is_empty() {
            vec![scenario.hv_fraction]
        } else {
            args.hv_fractions.clone()
        },
        seeds: (args.seed..args.seed + args.reps).collect(),
        duration_s: args.duration,
    };
    for &d in &config.deltas {
        Scenario {
            delta: d,
            ..scenario.clone()
        }
        .validate()
        .invalid()?;
    }
    for &h in &config.hv_fractions {
        Scenario {
            hv_fraction: h,
            ..scenario.clone()
        }
        .validate()
        .invalid()?;
    }
    if config.horizons.contains(&0) {
        return Err(anyhow!("horizons must be positive")).invalid();
    }
    let options = args.solver.options();
    let rows = with_jobs(args.jobs, || -> Result<_, Failure> {
        let library = Arc::new(build_library(&scenario, &tubes).invalid()?);
        intersection_sweep(&scenario, &library, &config, &solver, &options).solver()
    })?;
    let comment = format!(
        "{} | solver {solver} | non-deterministic columns: mean_plan_s,max_plan_s",
        invocation()
    );
    io::write_csv(output(&args.out).invalid()?, &comment, &rows).invalid()?;
    Ok(())
}

fn cmd_plan_time(args: PlanTimeArgs) -> Result<(), Failure> {
    let (mut scenario, tubes) = match &args.scenario {
        Some(p) => io::read_scenario(p).invalid()?,
        None => (Scenario::default(), BTreeMap::new()),
    };
    if !args.speeds.is_empty() {
        scenario.speeds = args.speeds.clone();
    }
    scenario.validate().invalid()?;
    let horizons = parse_list(&args.horizon).invalid()?;
    if horizons.contains(&0) {
        return Err(anyhow!("horizons must be positive")).invalid();
    }
    let solver = args.solver.name();
    backend_by_name(&solver).invalid()?;
    let options = args.solver.options();
    let library = Arc::new(build_library(&scenario, &tubes).invalid()?);
    let seeds = args.seed..args.seed + args.snapshots;
    let rows = plan_time(
        &scenario,
        &library,
        &horizons,
        args.executing,
        seeds,
        &solver,
        &options,
    )
    .solver()?;
    let comment = format!(
        "{} | solver {solver} | non-deterministic columns: mean_plan_s,max_plan_s",
        invocation()
    );
    io::write_csv(output(&args.out).invalid()?, &comment, &rows).invalid()?;
    Ok(())
}

fn cmd_pft(cmd: PftCommand) -> Result<(), Failure> {
    match cmd {
        PftCommand::Fit(args) => {
            let mut trajectories = Vec::new();
            let mut steps = Vec::new();
            for p in &args.trajectories {
                for t in io::read_trajectories(p).invalid()? {
                    steps.extend(t.timestep());
                    trajectories.push(t.points);
                }
            }
            let timestep = match args.timestep {
                Some(t) if t > 0.0 => t,
                Some(t) => return Err(anyhow!("timestep must be positive, got {t}")).invalid(),
                None => {
                    steps.sort_by(f64::total_cmp);
                    *steps
                        .get(steps.len() / 2)
                        .filter(|&&t| t > 0.0)
                        .ok_or_else(|| anyhow!("cannot infer a timestep; pass --timestep"))
                        .invalid()?
                }
            };
            let aligned = pft::dtw_align(&trajectories, args.length).invalid()?;
            let tube = pft::pft_fit(&aligned, timestep, args.cov_floor, args.label).invalid()?;
            io::write_pft(&args.out, &tube).invalid()?;
            println!(
                "fitted {} trajectories into {} indices at {timestep} s",
                trajectories.len(),
                tube.len()
            );
        }
        PftCommand::Intent(args) => {
            let tubes: Vec<Pft> = args
                .tubes
                .iter()
                .map(|p| io::read_pft(p))
                .collect::<Result<_, _>>()
                .invalid()?;
            let prefix = io::read_trajectories(&args.prefix).invalid()?;
            let prefix = &prefix[0].points;
            let prior = if args.prior.is_empty() {
                vec![1.0 / tubes.len() as f64; tubes.len()]
            } else {
                args.prior.clone()
            };
            let refs: Vec<&Pft> = tubes.iter().collect();
            let post = pft::intent_posterior(&prior, &refs, prefix).invalid()?;
            for ((t, p), path) in tubes.iter().zip(&post).zip(&args.tubes) {
                let name = if t.label.is_empty() {
                    path.display().to_string()
                } else {
                    t.label.clone()
                };
                println!("{name} {p:.6}");
            }
        }
        PftCommand::RiskTable(args) => {
            let tubes: Vec<Pft> = args
                .tubes
                .iter()
                .map(|p| io::read_pft(p))
                .collect::<Result<_, _>>()
                .invalid()?;
            if args.stride == 0 || args.samples == 0 {
                return Err(anyhow!("stride and samples must be positive")).invalid();
            }
            let window = args
                .window
                .unwrap_or_else(|| tubes.iter().map(Pft::len).max().unwrap_or(0));
            let refs: Vec<&Pft> = tubes.iter().collect();
            let geometry = vec![VehicleGeometry::default(); tubes.len()];
            let pairs: Vec<(usize, usize)> = (0..refs.len())
                .flat_map(|a| (a + 1..refs.len()).map(move |b| (a, b)))
                .collect();
            let matrices: Vec<CollisionMatrix> = with_jobs(args.jobs, || {
                pairs
                    .par_iter()
                    .map(|&(a, b)| {
                        CollisionMatrix::compute(
                            refs[a],
                            refs[b],
                            &geometry[a],
                            &geometry[b],
                            args.samples,
                            args.seed,
                        )
                    })
                    .collect()
            });
            let table = RiskTable::from_matrices(
                tubes.iter().map(|t| t.label.clone()).collect(),
                tubes
                    .iter()
                    .map(|t| Axis {
                        tube_len: t.len(),
                        stride: args.stride,
                    })
                    .collect(),
                window,
                args.seed,
                args.samples,
                |a, b| {
                    pairs
                        .iter()
                        .position(|&p| p == (a, b))
                        .map(|k| &matrices[k])
                },
            );
            io::write_risk_table(&args.out, &table).invalid()?;
            println!("wrote {:?} entries to {}", table.dims(), args.out.display());
        }
    }
    Ok(())
}

fn cmd_selftest(args: SelftestArgs) -> Result<(), Failure> {
    let solver = args.solver.unwrap_or_else(default_backend_name);
    backend_by_name(&solver).invalid()?;
    let reports = with_jobs(args.jobs, || selftest(&solver));
    let mut ok = true;
    for r in &reports {
        let verdict = if r.passed() { "pass" } else { "FAIL" };
        println!("{verdict} {} ({} cases)", r.name, r.cases);
        for f in &r.failures {
            println!("  {f}");
        }
        ok &= r.passed();
    }
    if ok {
        Ok(())
    } else {
        Err(Failure {
            code: 2,
            error: anyhow!("self-test failed"),
        })
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::GridBench(a) => cmd_grid_bench(a),
        Command::IntersectSim(a) => cmd_intersect_sim(a),
        Command::PlanTime(a) => cmd_plan_time(a),
        Command::Pft(c) => cmd_pft(c),
        Command::Selftest(a) => cmd_selftest(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = format!("{:#}", f.error).replace('\n', " ");
            eprintln!("error: {msg}");
            if f.code == 2 && std::env::var_os(SOLVER_ENV).is_none() {
                eprintln!("note: set {SOLVER_ENV} or --solver to try another backend");
            }
            ExitCode::from(f.code)
        }
    }
}
