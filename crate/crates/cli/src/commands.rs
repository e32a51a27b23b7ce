use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sphereswim::bem::{self, BemSystem};
use sphereswim::controllability::chow_certificate;
use sphereswim::dynamics::{self, integrate, fmt17, ShapePath, SinusoidStroke, Trajectory};
use sphereswim::geometry::{self, BallConfiguration, Position, State, SwimmerKind, SwimmerModel};
use sphereswim::optimizer::{self, OptimizationProblem, OptimizationResult, SolveStatus};

use crate::config::*;
use crate::output::{write_file, write_json};
use crate::svg::trajectory_svg;
use crate::{Cli, CliError, Command};

struct Context<'a> {
    cli: &'a Cli,
    out: &'a Path,
    n_q: usize,
}

impl Context<'_> {
    fn config<T: serde::de::DeserializeOwned>(&self) -> Result<T, CliError> {
        match &self.cli.global.config {
            Some(p) => read_json(p),
            None => Err(CliError::Usage("this subcommand needs --config".into())),
        }
    }

    fn dry_run(&self, what: &str) -> bool {
        if self.cli.global.dry_run {
            println!("{what}: configuration ok");
        }
        self.cli.global.dry_run
    }

    fn strict(&self, failure: Option<String>) -> Result<(), CliError> {
        match failure {
            Some(msg) if self.cli.global.strict => Err(CliError::Tolerance(msg)),
            Some(msg) => {
                log::warn!("{msg}");
                Ok(())
            }
            None => Ok(()),
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure threads: {e}")))?;
    }
    if !g.out.is_dir() {
        return Err(CliError::Io(format!("output directory {} does not exist", g.out.display())));
    }
    let n_q = g.nq.unwrap_or(bem::DEFAULT_POINTS_PER_SPHERE);
    if !bem::is_fibonacci(n_q) {
        return Err(CliError::Usage(format!("--nq must be a Fibonacci number, got {n_q}")));
    }
    let ctx = Context { cli, out: &g.out, n_q };
    match &cli.command {
        Command::Drag => drag(&ctx),
        Command::Mobility { dump_bem } => mobility(&ctx, *dump_bem),
        Command::Simulate => simulate(&ctx),
        Command::Brackets => brackets(&ctx),
        Command::Optimize => optimize(&ctx),
        Command::BranchScan => branch_scan(&ctx),
    }
}

fn position(model: &SwimmerModel, chart: Option<&[f64]>) -> Result<Position, CliError> {
    match chart {
        Some(p) => Ok(Position::from_chart(model.kind, p)?),
        None => Ok(model.origin()),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Serialize)]
struct DragRow {
    n_q: usize,
    force: f64,
    relative_error: f64,
    passed: bool,
}

#[derive(Serialize)]
struct DragReport {
    radius: f64,
    viscosity: f64,
    exact: f64,
    tolerance: f64,
    rows: Vec<DragRow>,
    passed: bool,
}

fn drag(ctx: &Context) -> Result<(), CliError> {
    let cfg: DragConfig = match &ctx.cli.global.config {
        Some(p) => read_json(p)?,
        None => DragConfig::default(),
    };
    let ladder = match ctx.cli.global.nq {
        Some(n) => vec![n],
        None => cfg.ladder.clone(),
    };
    if !(cfg.radius > 0.0 && cfg.viscosity > 0.0) || ladder.is_empty() {
        return Err(CliError::Usage("radius and viscosity must be positive and the ladder non-empty".into()));
    }
    if let Some(&n) = ladder.iter().find(|&&n| !bem::is_fibonacci(n)) {
        return Err(CliError::Usage(format!("quadrature sizes must be Fibonacci numbers, got {n}")));
    }
    if ctx.dry_run("drag") {
        return Ok(());
    }
    let exact = 6.0 * PI * cfg.viscosity * cfg.radius;
    let ball = BallConfiguration::from_centers(vec![Vector3::zeros()]);
    let mut report = DragReport { radius: cfg.radius, viscosity: cfg.viscosity, exact, tolerance: cfg.tolerance, rows: Vec::new(), passed: true };
    println!("n_q,force,exact,relative_error");
    for &n in &ladder {
        let sys = BemSystem::new(&ball, cfg.radius, n, cfg.viscosity)?;
        let u = sys.rigid_velocity(&Vector3::x(), &Vector3::zeros(), &Vector3::zeros());
        let force = sys.total_force(&sys.solve_dn(&u)?).x;
        let relative_error = (force - exact).abs() / exact;
        let passed = relative_error <= cfg.tolerance;
        report.passed &= passed;
        println!("{n},{},{},{}", fmt17(force), fmt17(exact), fmt17(relative_error));
        report.rows.push(DragRow { n_q: n, force, relative_error, passed });
    }
    write_json(ctx.out, "drag.json", &report)?;
    ctx.strict((!report.passed).then(|| format!("drag error exceeds {}", cfg.tolerance)))
}

#[derive(Serialize)]
struct MobilityReport {
    kind: SwimmerKind,
    state: State,
    n_q: usize,
    viscosity: f64,
    mobility: Vec<Vec<f64>>,
    resistance: Vec<Vec<f64>>,
    coupling: Vec<Vec<f64>>,
    metric: Vec<Vec<f64>>,
    constraint_residual: f64,
}

fn mobility(ctx: &Context, dump: bool) -> Result<(), CliError> {
    let cfg: MobilityConfig = ctx.config()?;
    let state = State::new(DVector::from_vec(cfg.shape.clone()), position(&cfg.model, cfg.position.as_deref())?);
    let balls = geometry::centers(&cfg.model, &state)?;
    if ctx.dry_run("mobility") {
        return Ok(());
    }
    let sys = BemSystem::new(&balls, cfg.model.radius, ctx.n_q, cfg.viscosity)?;
    if dump {
        sys.dump(&ctx.out.join("bem"))?;
    }
    let m = dynamics::mobility(&cfg.model, &state, &sys)?;
    println!("mobility ({} x {}):", m.mobility.nrows(), m.mobility.ncols());
    for r in rows(&m.mobility) {
        println!("  {}", r.iter().map(|v| fmt17(*v)).collect::<Vec<_>>().join(" "));
    }
    println!("constraint residual {}", fmt17(m.constraint_residual));
    let report = MobilityReport {
        kind: cfg.model.kind,
        n_q: ctx.n_q,
        viscosity: cfg.viscosity,
        mobility: rows(&m.mobility),
        resistance: rows(&m.resistance),
        coupling: rows(&m.coupling),
        metric: rows(&m.metric),
        constraint_residual: m.constraint_residual,
        state,
    };
    write_json(ctx.out, "mobility.json", &report)
}

fn load_result(path: &Path) -> Result<OptimizationResult, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid result file {}: {e}", path.display())))
}

fn write_trajectory(ctx: &Context, model: &SwimmerModel, traj: &Trajectory, plot: &PlotConfig) -> Result<(), CliError> {
    let mut csv = Vec::new();
    traj.write_csv(&mut csv).map_err(|e| CliError::Io(e.to_string()))?;
    write_file(ctx.out, "trajectory.csv", &csv)?;
    if plot.enabled {
        write_file(ctx.out, "trajectory.svg", trajectory_svg(model, traj, plot).as_bytes())?;
    }
    Ok(())
}

fn simulate(ctx: &Context) -> Result<(), CliError> {
    let cfg: SimulateConfig = ctx.config()?;
    let model = &cfg.model;
    let m = model.shape_dim();
    let (path, own_start): (Box<dyn ShapePath>, Option<Vec<f64>>) = match &cfg.stroke {
        StrokeSpec::Sinusoid { base, amplitude, phase, period } => {
            if base.len() != m || amplitude.len() != m || phase.len() != m || !(*period > 0.0) {
                return Err(CliError::Usage(format!("sinusoid needs {m} components and a positive period")));
            }
            let s = SinusoidStroke::new(
                DVector::from_vec(base.clone()),
                DVector::from_vec(amplitude.clone()),
                DVector::from_vec(phase.clone()),
                *period,
            );
            (Box::new(s), None)
        }
        StrokeSpec::Optimized { path } => {
            let r = load_result(path)?;
            if r.stroke.kind() != model.kind {
                return Err(CliError::Usage("the result file is for a different swimmer".into()));
            }
            let start = r.stroke.position_at(0.0).iter().copied().collect();
            (Box::new(r.stroke), Some(start))
        }
    };
    if cfg.steps == 0 {
        return Err(CliError::Usage("steps must be positive".into()));
    }
    let start = position(model, cfg.start.as_deref().or(own_start.as_deref()))?;
    let state = State::new(path.shape(0.0), start);
    geometry::centers(model, &state)?;
    if ctx.dry_run("simulate") {
        return Ok(());
    }
    let fields = build_fields(cfg.fields, model, &cfg.table, ctx.n_q, cfg.viscosity, ctx.out)?;
    let traj = integrate(fields.as_ref(), &state, path.as_ref(), cfg.steps)?;
    let end = traj.final_state().position.chart();
    println!("final pose {}", end.iter().map(|v| fmt17(*v)).collect::<Vec<_>>().join(" "));
    println!("energy {}", fmt17(traj.total_energy()));
    write_trajectory(ctx, model, &traj, &cfg.plot)
}

fn brackets(ctx: &Context) -> Result<(), CliError> {
    let cfg: BracketsConfig = ctx.config()?;
    let state = State::new(DVector::from_vec(cfg.shape.clone()), position(&cfg.model, cfg.position.as_deref())?);
    geometry::centers(&cfg.model, &state)?;
    if cfg.step.is_some_and(|h| !(h > 0.0)) {
        return Err(CliError::Usage("step must be positive".into()));
    }
    if ctx.dry_run("brackets") {
        return Ok(());
    }
    let fields = build_fields(cfg.fields, &cfg.model, &cfg.table, ctx.n_q, cfg.viscosity, ctx.out)?;
    let report = chow_certificate(fields.as_ref(), &state, cfg.step)?;
    println!(
        "{}: rank test {}, smallest singular value {} (threshold {}), determinant {}",
        cfg.model.kind.label(),
        if report.passed { "passed" } else { "failed" },
        fmt17(report.min_singular_value),
        fmt17(report.threshold),
        fmt17(report.determinant)
    );
    write_json(ctx.out, "brackets.json", &report)?;
    ctx.strict((!report.passed).then(|| "the bracket rank test failed".to_string()))
}

/// Moves the free guess centre and the guess amplitude by a few percent.
fn jitter(problem: &mut OptimizationProblem, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if problem.initial_shape.is_none() {
        let m = &problem.model;
        let centre = problem.guess_center();
        let shifted = centre
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let (l, u) = (m.shape_lower[i], m.shape_upper[i]);
                let width = if u.is_finite() { u - l } else { c - l };
                (c + 0.05 * width * rng.gen_range(-1.0..1.0)).clamp(l + 0.1 * width, u.min(l + 0.9 * width))
            })
            .collect();
        problem.guess_shape = Some(shifted);
    }
    problem.guess_amplitude *= 1.0 + 0.1 * rng.gen_range(-1.0..1.0);
}

fn optimize(ctx: &Context) -> Result<(), CliError> {
    let cfg: OptimizeConfig = ctx.config()?;
    let mut problem = cfg.problem.clone();
    problem.validate()?;
    let guess = cfg.guess.as_deref().map(load_result).transpose()?.map(|r| r.stroke);
    if ctx.dry_run("optimize") {
        return Ok(());
    }
    if let (Some(seed), None) = (ctx.cli.global.seed, &guess) {
        jitter(&mut problem, seed);
    }
    let fields = build_fields(cfg.fields, &problem.model, &cfg.table, ctx.n_q, cfg.viscosity, ctx.out)?;
    let (result, capped) = match optimizer::solve(&problem, fields.as_ref(), guess.as_ref()) {
        Ok(r) => (r, false),
        Err(sphereswim::Error::MaxIterations(r)) => (*r, true),
        Err(e) => return Err(e.into()),
    };
    println!(
        "status {:?}, energy {}, {} iterations, {} active bounds",
        result.status,
        fmt17(result.energy),
        result.iterations,
        result.active_bounds.len()
    );
    println!("initial shape {}", result.initial_shape().iter().map(|v| fmt17(*v)).collect::<Vec<_>>().join(" "));
    println!("final pose {}", result.final_position().iter().map(|v| fmt17(*v)).collect::<Vec<_>>().join(" "));
    write_json(ctx.out, "result.json", &result)?;
    let start = Position::from_chart(problem.model.kind, result.stroke.position_at(0.0).as_slice())?;
    let traj = integrate(fields.as_ref(), &State::new(result.initial_shape(), start), &result.stroke, cfg.replay_steps)?;
    write_trajectory(ctx, &problem.model, &traj, &cfg.plot)?;
    let failure = if capped {
        Some(format!("iteration limit reached after {} iterations", result.iterations))
    } else if result.status != SolveStatus::Converged {
        Some(format!("optimizer stopped with status {:?}", result.status))
    } else {
        None
    };
    ctx.strict(failure)
}

fn branch_scan(ctx: &Context) -> Result<(), CliError> {
    let cfg: BranchScanConfig = ctx.config()?;
    cfg.problem.validate()?;
    if cfg.problem.model.kind != SwimmerKind::ThreeSpherePlane {
        return Err(CliError::Usage("branch scans need a 3SP problem".into()));
    }
    let angles = cfg
        .angles
        .clone()
        .unwrap_or_else(|| (0..7).map(|i| PI / 3.0 * i as f64 / 6.0).collect());
    if angles.is_empty() || !(1..=3).contains(&cfg.seeds) {
        return Err(CliError::Usage("branch scan needs at least one angle and 1 to 3 seeds".into()));
    }
    if ctx.dry_run("branch-scan") {
        return Ok(());
    }
    let fields = build_fields(cfg.fields, &cfg.problem.model, &cfg.table, ctx.n_q, cfg.viscosity, ctx.out)?;
    let table = optimizer::branch_scan(&cfg.problem, fields.as_ref(), &angles, cfg.seeds)?;
    let mut csv = String::from("start_angle,seed,branch,energy,final_angle,status,error\n");
    for c in &table.cells {
        let num = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt17(c.start_angle),
            c.seed,
            c.branch,
            num(c.energy),
            num(c.final_angle),
            c.status.map(|s| format!("{s:?}")).unwrap_or_default(),
            c.error.as_deref().unwrap_or("").replace(',', ";")
        ));
    }
    print!("{csv}");
    println!("branches {}, envelope spread {}, total spread {}", table.branches, fmt17(table.envelope_spread), fmt17(table.total_spread));
    write_file(ctx.out, "branches.csv", csv.as_bytes())?;
    write_json(ctx.out, "branches.json", &table)?;
    let failed = table.cells.iter().filter(|c| c.energy.is_none()).count();
    ctx.strict((failed > 0).then(|| format!("{failed} cells did not converge")))
}
