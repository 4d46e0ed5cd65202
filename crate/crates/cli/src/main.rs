//! `ecotoll` command line: validate scenarios, load networks, solve
//! equilibria, optimise tolls and replay saved tolls.
//!
//! Exit codes: 0 success, 1 invalid input, 2 solver failure (including
//! non-converged runs, whose outputs are still written and flagged), 3 I/O.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ecotoll::due::DueReport;
use ecotoll::output;
use ecotoll::scenario::{Scenario, ScenarioConfig, ScenarioError};
use ecotoll::toll_opt::{evaluate_toll, gradient_projection_solve, path_share, ComparisonReport, Weights};
use ecotoll::{Error, TollSchedule};

#[derive(Parser, Debug)]
#[command(name = "ecotoll", version, about = "Dynamic user equilibrium and emission-aware toll design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a scenario and print its size and units.
    Validate(Common),
    /// Load the network with a given departure profile.
    Dnl {
        #[command(flatten)]
        common: Common,
        /// Departure rates as `path,t,departure_rate` CSV on the scenario grid.
        #[arg(long)]
        flows: PathBuf,
        /// Toll CSV (`arc,interval_start,toll`); zero tolls when absent.
        #[arg(long)]
        toll: Option<PathBuf>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Solve the dynamic user equilibrium.
    Due {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        toll: Option<PathBuf>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Optimise tolls on the scenario's tollable arcs.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Weights of travel cost and emission, `a,b`. Repeat for a sweep.
        #[arg(long, value_parser = parse_weights)]
        weights: Vec<(f64, f64)>,
        /// Initial complementarity penalty weight.
        #[arg(long)]
        penalty_m0: Option<f64>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Re-solve the equilibrium under saved tolls and compare with no toll.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Toll CSVs to replay; one comparison row each.
        #[arg(long, required = true)]
        toll: Vec<PathBuf>,
        #[command(flatten)]
        out: OutArg,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Scenario file, or `case1` / `case2` for the bundled scenarios.
    #[arg(long)]
    scenario: String,
    /// Replace the scenario's time step (hours).
    #[arg(long)]
    dt_override: Option<f64>,
    /// Replace the equilibrium solver's iteration cap.
    #[arg(long)]
    max_iters: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct OutArg {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

fn parse_weights(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got {s:?}"))?;
    let a: f64 = a.trim().parse().map_err(|e| format!("weight {a:?}: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("weight {b:?}: {e}"))?;
    Ok((a, b))
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Solver(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Solver(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Solver(m) | Failure::Io(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Solver(e.to_string())
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Model(m) => m.into(),
            other => Failure::Validation(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Validate(common) => cmd_validate(&common),
        Command::Dnl { common, flows, toll, out } => cmd_dnl(&common, &flows, toll.as_deref(), &out.out),
        Command::Due { common, toll, out } => cmd_due(&common, toll.as_deref(), &out.out),
        Command::Optimize {
            common,
            weights,
            penalty_m0,
            out,
        } => cmd_optimize(&common, &weights, penalty_m0, &out.out),
        Command::Compare { common, toll, out } => cmd_compare(&common, &toll, &out.out),
    }
}

/// Reads the scenario and applies command-line overrides so that the
/// resolved configuration records every value in effect.
fn load_config(common: &Common) -> Result<ScenarioConfig, Failure> {
    let text = match common.scenario.as_str() {
        "case1" => ecotoll::scenario::CASE1.to_string(),
        "case2" => ecotoll::scenario::CASE2.to_string(),
        path => fs::read_to_string(path).map_err(|e| io_err(Path::new(path), e))?,
    };
    let mut cfg = ScenarioConfig::parse(&text)?;
    if let Some(dt) = common.dt_override {
        cfg.horizon.dt = dt;
    }
    if let Some(n) = common.max_iters {
        cfg.solver.max_iters = n;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| io_err(&path, e))
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn read_toll(path: &Path, scenario: &Scenario) -> Result<TollSchedule, Failure> {
    let mut y = scenario.toll.schedule(&scenario.model).map_err(Error::from)?;
    output::read_toll_csv(&read(path)?, &mut y)
        .map_err(|m| Failure::Validation(format!("{}: {m}", path.display())))?;
    Ok(y)
}

/// Writes the resolved scenario and a manifest whose `args` rerun the
/// command from the output directory's files alone.
struct Manifest {
    subcommand: &'static str,
    scenario: String,
    args: Vec<String>,
    started: Instant,
    stats: toml::Table,
}

impl Manifest {
    fn new(subcommand: &'static str, common: &Common) -> Self {
        Self {
            subcommand,
            scenario: common.scenario.clone(),
            args: Vec::new(),
            started: Instant::now(),
            stats: toml::Table::new(),
        }
    }

    fn stat(&mut self, key: &str, value: impl Into<toml::Value>) {
        self.stats.insert(key.into(), value.into());
    }

    fn write(self, dir: &Path, cfg: &ScenarioConfig) -> Result<(), Failure> {
        write(dir, "scenario.toml", &cfg.to_toml())?;
        let mut args = vec![
            self.subcommand.to_string(),
            "--scenario".into(),
            dir.join("scenario.toml").display().to_string(),
        ];
        args.extend(self.args);
        let mut t = toml::Table::new();
        t.insert("subcommand".into(), self.subcommand.into());
        t.insert("scenario".into(), self.scenario.into());
        t.insert("output_dir".into(), dir.display().to_string().into());
        t.insert("args".into(), args.into());
        t.insert("wall_clock_seconds".into(), self.started.elapsed().as_secs_f64().into());
        t.insert("stats".into(), self.stats.into());
        let config = toml::Value::try_from(cfg)
            .map_err(|e| Failure::Validation(format!("cannot serialise the resolved scenario: {e}")))?;
        t.insert("config".into(), config);
        let text = toml::to_string_pretty(&t).map_err(|e| Failure::Validation(e.to_string()))?;
        write(dir, "manifest.toml", &text)
    }
}

/// Copies an input file into the output directory so the manifest stays
/// self-contained, returning the copy's path.
fn keep_input(dir: &Path, name: &str, src: &Path) -> Result<String, Failure> {
    let text = read(src)?;
    write(dir, name, &text)?;
    Ok(dir.join(name).display().to_string())
}

fn cmd_validate(common: &Common) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let scenario = cfg.build()?;
    let net = &scenario.model.net;
    let grid = &scenario.model.grid;
    println!("scenario {} is valid", common.scenario);
    println!(
        "{} arcs, {} nodes, {} paths, {} OD pairs",
        net.arcs().len(),
        net.nodes().len(),
        net.paths().len(),
        net.ods().len()
    );
    println!(
        "units: length {}, time {}; horizon {}..{} h, dt {} h, {} departure cells",
        cfg.units.length,
        cfg.units.time,
        cfg.horizon.start,
        cfg.horizon.end,
        grid.dt(),
        grid.intervals()
    );
    for od in net.ods() {
        println!("OD {}: demand {} veh over {} paths", od.id, od.demand, od.paths.len());
    }
    println!(
        "tolled arcs {:?}, weights ({:.4}, {:.4})",
        cfg.toll.arcs, scenario.toll.weights.alpha, scenario.toll.weights.beta
    );
    Ok(())
}

fn totals_summary(scenario: &Scenario, h: &ecotoll::PathSeries, ev: &ecotoll::Evaluation) -> String {
    let net = &scenario.model.net;
    let dt = scenario.model.grid.dt();
    let mut s = String::new();
    writeln!(s, "total_travel_cost = {}", output::num(ev.total_travel_cost(h))).unwrap();
    writeln!(s, "total_emission = {}", output::num(ev.total_emission(h))).unwrap();
    for (p, path) in net.paths().iter().enumerate() {
        let mass = h.path_mass(p, dt);
        let free = net.free_flow_time(p);
        writeln!(
            s,
            "path {}: vehicles {}, free_flow_time {}",
            path.id,
            output::num(mass),
            output::num(free)
        )
        .unwrap();
    }
    s
}

fn cmd_dnl(common: &Common, flows: &Path, toll: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let mut manifest = Manifest::new("dnl", common);
    let cfg = load_config(common)?;
    let scenario = cfg.build()?;
    let model = &scenario.model;
    let h = output::read_flows_csv(&read(flows)?, &model.net, &model.grid)
        .map_err(|m| Failure::Validation(format!("{}: {m}", flows.display())))?;
    let y = match toll {
        Some(p) => read_toll(p, &scenario)?,
        None => scenario.toll.schedule(model).map_err(Error::from)?,
    };
    let ev = model.evaluate(&h, &y)?;
    create_dir(out)?;
    let kept = keep_input(out, "input_flows.csv", flows)?;
    manifest.args.extend(["--flows".into(), kept]);
    if let Some(p) = toll {
        let kept = keep_input(out, "input_toll.csv", p)?;
        manifest.args.extend(["--toll".into(), kept]);
    }
    write(out, "arcs.csv", &output::arcs_csv(&ev.dnl, &model.net))?;
    write(out, "paths.csv", &output::paths_csv(&h, &ev, &model.net))?;
    let summary = totals_summary(&scenario, &h, &ev);
    write(out, "summary.txt", &summary)?;
    print!("{summary}");
    manifest.write(out, &cfg)
}

fn due_report_text(r: &DueReport, shares: &[(String, f64)]) -> String {
    let mut s = String::new();
    let status = if r.converged { "converged" } else { "partial (not converged)" };
    writeln!(s, "status = \"{status}\"").unwrap();
    writeln!(s, "iterations = {}", r.iterations).unwrap();
    writeln!(s, "residual = {}", output::num(r.residual)).unwrap();
    writeln!(s, "relative_residual = {}", output::num(r.relative_residual)).unwrap();
    writeln!(s, "alpha = {}", output::num(r.alpha)).unwrap();
    writeln!(s, "merit_gap = {}", output::num(r.merit_gap)).unwrap();
    writeln!(s, "total_travel_cost = {}", output::num(r.total_travel_cost)).unwrap();
    writeln!(s, "total_emission = {}", output::num(r.total_emission)).unwrap();
    writeln!(s, "violating_fraction = {}", output::num(r.audit.violating_fraction)).unwrap();
    let mins: Vec<String> = r.min_cost.iter().map(|v| output::num(*v)).collect();
    writeln!(s, "min_cost = [{}]", mins.join(", ")).unwrap();
    writeln!(s, "\n[path_share]").unwrap();
    for (id, v) in shares {
        writeln!(s, "{id} = {}", output::num(*v)).unwrap();
    }
    s
}

fn shares(scenario: &Scenario, h: &ecotoll::PathSeries) -> Vec<(String, f64)> {
    let net = &scenario.model.net;
    net.paths()
        .iter()
        .enumerate()
        .map(|(p, path)| (path.id.clone(), path_share(h, net, scenario.model.grid.dt(), p)))
        .collect()
}

fn cmd_due(common: &Common, toll: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let mut manifest = Manifest::new("due", common);
    let cfg = load_config(common)?;
    let scenario = cfg.build()?;
    let model = &scenario.model;
    let y = match toll {
        Some(p) => read_toll(p, &scenario)?,
        None => scenario.toll.schedule(model).map_err(Error::from)?,
    };
    let eq = evaluate_toll(model, &y, &scenario.fixed_point, None, scenario.toll.init_window)?;
    let ev = model.evaluate(&eq.h, &y)?;
    create_dir(out)?;
    if let Some(p) = toll {
        let kept = keep_input(out, "input_toll.csv", p)?;
        manifest.args.extend(["--toll".into(), kept]);
    }
    write(out, "equilibrium.csv", &output::paths_csv(&eq.h, &ev, &model.net))?;
    write(out, "flows.csv", &output::flows_csv(&eq.h, &model.net, &model.grid))?;
    let report = due_report_text(&eq.report, &shares(&scenario, &eq.h));
    write(out, "report.toml", &report)?;
    print!("{report}");
    manifest.stat("iterations", eq.report.iterations as i64);
    manifest.stat("converged", eq.report.converged);
    manifest.write(out, &cfg)?;
    if eq.report.converged {
        Ok(())
    } else {
        Err(Failure::Solver(format!(
            "equilibrium not reached in {} iterations; outputs in {} are partial",
            eq.report.iterations,
            out.display()
        )))
    }
}

fn comparison_files(out: &Path, suffix: &str, report: &ComparisonReport) -> Result<(), Failure> {
    write(out, &format!("comparison{suffix}.txt"), &report.to_table())?;
    let text = toml::to_string_pretty(report).map_err(|e| Failure::Validation(e.to_string()))?;
    write(out, &format!("comparison{suffix}.toml"), &text)
}

fn cmd_optimize(common: &Common, weights: &[(f64, f64)], penalty_m0: Option<f64>, out: &Path) -> Result<(), Failure> {
    let mut manifest = Manifest::new("optimize", common);
    let mut cfg = load_config(common)?;
    if let Some(m0) = penalty_m0 {
        cfg.toll.penalty_m0 = m0;
    }
    let sweep: Vec<(f64, f64)> = if weights.is_empty() {
        vec![(cfg.toll.weights[0], cfg.toll.weights[1])]
    } else {
        weights.to_vec()
    };
    for &(a, b) in &sweep {
        if Weights::normalized(a, b).is_none() {
            return Err(ScenarioError::Weights { alpha: a, beta: b }.into());
        }
    }
    cfg.toll.weights = [sweep[0].0, sweep[0].1];
    let scenario = cfg.build()?;
    let model = &scenario.model;
    create_dir(out)?;
    for &(a, b) in &sweep {
        manifest.args.extend(["--weights".into(), format!("{a},{b}")]);
    }

    let zero = scenario.toll.schedule(model).map_err(Error::from)?;
    let base = evaluate_toll(model, &zero, &scenario.fixed_point, None, scenario.toll.init_window)?;
    let base_ev = model.evaluate(&base.h, &zero)?;
    write(out, "equilibrium_base.csv", &output::paths_csv(&base.h, &base_ev, &model.net))?;

    let mut all_converged = base.report.converged;
    let mut table = String::new();
    for (i, &(a, b)) in sweep.iter().enumerate() {
        let suffix = if sweep.len() > 1 { format!("_{}", i + 1) } else { String::new() };
        let mut problem = scenario.toll.clone();
        problem.weights = Weights::normalized(a, b).expect("checked above");
        let outcome = gradient_projection_solve(model, &problem, &scenario.fixed_point, Some(base.clone()))?;
        let ev = model.evaluate(&outcome.tolled.h, &outcome.state.y)?;
        write(out, &format!("toll{suffix}.csv"), &output::toll_csv(&outcome.state.y))?;
        write(
            out,
            &format!("equilibrium_tolled{suffix}.csv"),
            &output::paths_csv(&outcome.tolled.h, &ev, &model.net),
        )?;
        comparison_files(out, &suffix, &outcome.report)?;
        all_converged &= outcome.tolled.report.converged;
        let accepted: usize = outcome.rounds.iter().map(|r| r.accepted_steps).sum();
        manifest.stat(&format!("accepted_steps{suffix}"), accepted as i64);
        manifest.stat(&format!("tolled_iterations{suffix}"), outcome.tolled.report.iterations as i64);
        table.push_str(&outcome.report.to_table());
        table.push('\n');
    }
    manifest.stat("base_iterations", base.report.iterations as i64);
    manifest.stat("converged", all_converged);
    print!("{table}");
    manifest.write(out, &cfg)?;
    if all_converged {
        Ok(())
    } else {
        Err(Failure::Solver(format!(
            "an equilibrium did not converge; outputs in {} are partial",
            out.display()
        )))
    }
}

fn cmd_compare(common: &Common, tolls: &[PathBuf], out: &Path) -> Result<(), Failure> {
    let mut manifest = Manifest::new("compare", common);
    let cfg = load_config(common)?;
    let scenario = cfg.build()?;
    let model = &scenario.model;
    let zero = scenario.toll.schedule(model).map_err(Error::from)?;
    let base = evaluate_toll(model, &zero, &scenario.fixed_point, None, scenario.toll.init_window)?;
    let mut rows = vec![base.row("DUE without toll")];
    let mut all_converged = base.report.converged;
    create_dir(out)?;
    for (i, path) in tolls.iter().enumerate() {
        let y = read_toll(path, &scenario)?;
        let eq = evaluate_toll(model, &y, &scenario.fixed_point, Some(&base.h), scenario.toll.init_window)?;
        all_converged &= eq.report.converged;
        let name = path.file_name().map_or_else(|| format!("toll {}", i + 1), |n| n.to_string_lossy().into_owned());
        rows.push(eq.row(&format!("DUE with {name}")));
        let kept = keep_input(out, &format!("input_toll_{}.csv", i + 1), path)?;
        manifest.args.extend(["--toll".into(), kept]);
    }
    let report = ComparisonReport::new(scenario.toll.weights, rows);
    comparison_files(out, "", &report)?;
    print!("{}", report.to_table());
    manifest.stat("converged", all_converged);
    manifest.write(out, &cfg)?;
    if all_converged {
        Ok(())
    } else {
        Err(Failure::Solver(format!(
            "an equilibrium did not converge; outputs in {} are partial",
            out.display()
        )))
    }
}
