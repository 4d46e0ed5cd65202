//! Acceptance suite: every criterion prints one PASS/FAIL line and the
//! binary exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use ecotoll::dnl::load_network;
use ecotoll::due::{equilibrium_audit, fixed_point_solve, initial_profile, project_lambda};
use ecotoll::emission::{emission_per_distance, emission_rate, EmissionModel};
use ecotoll::network::{ArcSpec, Network, NetworkDescription, OdSpec, PathSpec};
use ecotoll::scenario::Scenario;
use ecotoll::toll_opt::{
    complementarity_residuals, evaluate_toll, fd_gradient, gradient_projection_solve, path_share, penalty_q, PenaltySettings,
    scalarized_objective, Evaluator, MpccState, OptimizeMode, OptimizeOutcome, Weights,
};
use ecotoll::{Error, PathSeries, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

/// Parallel single-arc paths from node 1 to node 2, one OD.
fn parallel_net(lengths: &[f64], free_speed: f64, jam_density: f64, demand: f64) -> Network {
    let arcs = lengths
        .iter()
        .enumerate()
        .map(|(i, &length)| ArcSpec {
            id: i as u32 + 1,
            from: 1,
            to: 2,
            length,
            free_speed,
            jam_density,
        })
        .collect();
    let paths: Vec<PathSpec> = (0..lengths.len())
        .map(|i| PathSpec {
            id: format!("p{}", i + 1),
            arcs: vec![i as u32 + 1],
        })
        .collect();
    let ods = vec![OdSpec {
        id: "od".into(),
        origin: 1,
        destination: 2,
        demand,
        paths: paths.iter().map(|p| p.id.clone()).collect(),
    }];
    Network::validate(&NetworkDescription { arcs, paths, ods }).unwrap()
}

/// The case1 and case2 optimisations are shared by criteria 1-3.
struct Optimised {
    case1: OptimizeOutcome,
    case1_time: Duration,
    case2: OptimizeOutcome,
}

fn optimise(name: &str) -> (OptimizeOutcome, Duration) {
    let s = Scenario::bundled(name).unwrap();
    let start = Instant::now();
    let out = gradient_projection_solve(&s.model, &s.toll, &s.fixed_point, None).unwrap();
    (out, start.elapsed())
}

fn criterion_1(o: &Optimised) -> Outcome {
    let cost = o.case1.report.cost_reduction_pct[0];
    let emission = o.case1.report.emission_reduction_pct[0];
    let minutes = o.case1_time.as_secs_f64() / 60.0;
    outcome(
        cost >= 1.0 && emission >= 3.0 && minutes <= 30.0,
        format!(
            "case1 reductions: travel cost {cost:.3}% (need >= 1%), emission {emission:.3}% (need >= 3%), runtime {minutes:.2} min"
        ),
    )
}

fn criterion_2(o: &Optimised) -> Outcome {
    let (c1, e1) = (o.case1.report.cost_reduction_pct[0], o.case1.report.emission_reduction_pct[0]);
    let (c2, e2) = (o.case2.report.cost_reduction_pct[0], o.case2.report.emission_reduction_pct[0]);
    outcome(
        c2 < c1 && e2 < e1,
        format!("case2 reductions ({c2:.3}%, {e2:.3}%) must be strictly below case1 ({c1:.3}%, {e1:.3}%)"),
    )
}

fn criterion_3(o: &Optimised) -> Outcome {
    let s = Scenario::bundled("case1").unwrap();
    let p3 = s.model.net.path_index("p3").unwrap();
    let share = path_share(&o.case1.tolled.h, &s.model.net, s.model.grid.dt(), p3);
    outcome(share <= 0.02, format!("share of OD 1-3 on p3 under the optimised toll: {:.4}%", 100.0 * share))
}

fn criterion_4() -> Outcome {
    let s = Scenario::bundled("case1").unwrap();
    let zero = s.toll.schedule(&s.model).unwrap();
    let h0 = initial_profile(&s.model, s.toll.init_window);
    let (h, report) = fixed_point_solve(&s.model, &zero, &s.fixed_point, &h0).unwrap();
    let cost = s.model.evaluate(&h, &zero).unwrap().cost();
    let eps = 1e-6 * h.as_slice().iter().copied().fold(0.0, f64::max);
    let audit = equilibrium_audit(&h, &cost, &s.model.net, &s.model.grid, 1e-2, eps);
    outcome(
        report.relative_residual <= 1e-3 && report.iterations <= 500 && audit.violating_fraction <= 0.02,
        format!(
            "relative residual {:.3e} after {} iterations, {:.2}% of demand above the 1% cost band",
            report.relative_residual,
            report.iterations,
            100.0 * audit.violating_fraction
        ),
    )
}

fn qp_projection(v: &[f64], dt: f64, demand: f64) -> Vec<f64> {
    let n = v.len();
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        q[i * n + i] = 1.0;
    }
    let c: Vec<f64> = v.iter().map(|x| -x).collect();
    let mut a = vec![dt; n];
    let mut b = vec![demand];
    for i in 0..n {
        let mut row = vec![0.0; n];
        row[i] = -1.0;
        a.extend(row);
        b.push(0.0);
    }
    quadprog::solve_qp(&mut q, &c, &a, &b, 1, false).unwrap().sol
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let paths = rng.gen_range(1..=5);
        let cells = rng.gen_range(2..=50 / paths);
        let dt = rng.gen_range(0.01..0.2);
        let demand = rng.gen_range(1.0..500.0);
        let lengths: Vec<f64> = (0..paths).map(|i| 5.0 + i as f64).collect();
        let net = parallel_net(&lengths, 35.0, 400.0, demand);
        let grid = TimeGrid::new(0.0, cells as f64 * dt, dt).unwrap();
        let scale = demand / (dt * (paths * cells) as f64);
        let v: Vec<f64> = (0..paths * cells).map(|_| scale * rng.gen_range(-3.0..3.0)).collect();
        let series = PathSeries::from_flat(paths, grid.intervals(), v.clone());
        let ours = project_lambda(&series, &net, &grid).unwrap();
        let oracle = qp_projection(&v, dt, demand);
        for (a, b) in ours.as_slice().iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-8 && secs < 10.0,
        format!("max |P - QP| over 100 instances {worst:.2e}, {secs:.2} s"),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures = Vec::new();
    for trial in 0..1000 {
        let length = rng.gen_range(1.0..20.0);
        let v0 = rng.gen_range(20.0..70.0);
        let rho_jam = rng.gen_range(100.0..400.0);
        let cap = v0 * rho_jam / 4.0;
        let dt = rng.gen_range(0.02..0.1);
        let cells = rng.gen_range(5..60);
        let constant = rng.gen_bool(0.3);
        let start_cell = rng.gen_range(0..cells / 2);
        let q_const = rng.gen_range(0.01..0.1) * cap;
        let mut rates: Vec<f64> = (0..cells)
            .map(|k| {
                if constant {
                    if k >= start_cell {
                        q_const
                    } else {
                        0.0
                    }
                } else if rng.gen_bool(0.5) {
                    rng.gen_range(0.0..1.5) * cap
                } else {
                    0.0
                }
            })
            .collect();
        if rates.iter().all(|&r| r == 0.0) {
            rates[0] = 0.5 * cap;
        }
        let vehicles: f64 = rates.iter().sum::<f64>() * dt;
        let t0 = length / v0;
        let grid = TimeGrid::new(0.0, cells as f64 * dt, dt)
            .unwrap()
            .with_clearance(((t0 + vehicles / cap + 0.5) / dt).ceil() * dt)
            .unwrap();
        let net = parallel_net(&[length], v0, rho_jam, vehicles);
        let h = PathSeries::from_flat(1, cells, rates.clone());
        let dnl = match load_network(&h, &net, &grid) {
            Ok(d) => d,
            Err(e) => {
                failures.push(format!("trial {trial}: loading failed: {e}"));
                continue;
            }
        };
        let arc = &dnl.arcs[0];
        let (entry, exit) = (&arc.entry, &arc.exit);
        let tol = 1e-9 * vehicles.max(1.0);

        if (exit.last() - entry.last()).abs() > tol {
            failures.push(format!("trial {trial}: W(tf) = {} but Q(tf) = {}", exit.last(), entry.last()));
        }
        let mut latest = f64::NEG_INFINITY;
        for k in 0..cells {
            let arrival = grid.departure(k) + dnl.delay.get(0, k);
            if arrival < latest - dt {
                failures.push(format!("trial {trial}: FIFO broken at cell {k}"));
                break;
            }
            latest = latest.max(arrival);
        }
        for (i, w) in exit.values().windows(2).enumerate() {
            if (w[1] - w[0]) / exit.dt() > cap * (1.0 + 1e-9) + 1e-9 {
                failures.push(format!("trial {trial}: exit slope {} > {cap} at point {i}", (w[1] - w[0]) / exit.dt()));
                break;
            }
        }
        if constant {
            let onset = grid.time(start_cell) + t0;
            for i in 0..exit.len() {
                let t = exit.time(i);
                if t < onset {
                    continue;
                }
                let w = exit.values()[i];
                let upper = entry.eval(t - t0) + tol;
                let lower = entry.eval(t - t0 - dt) - tol;
                if !(lower..=upper).contains(&w) {
                    failures.push(format!(
                        "trial {trial}: W({t:.4}) = {w} outside the shifted inflow band [{lower}, {upper}]"
                    ));
                    break;
                }
            }
        }
    }
    let first = failures.first().cloned().unwrap_or_default();
    outcome(
        failures.is_empty(),
        format!("1000 single-arc loadings, {} failures {first}", failures.len()),
    )
}

fn criterion_7() -> Outcome {
    let m = EmissionModel::emfac(2.5, -0.04, 0.001);
    let anchor = emission_per_distance(17.03, &m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let v = rng.gen_range(0.1..80.0);
        let rate = emission_rate(v, &m).unwrap();
        let product = v * emission_per_distance(v, &m).unwrap();
        worst = worst.max((rate - product).abs() / product.abs().max(1.0));
    }
    outcome(
        (anchor - 2.5).abs() <= 1e-12 && worst <= 1e-12,
        format!("e(17.03) = {anchor:.15} g/mile, max |rate - v e| {worst:.2e} over 1000 speeds"),
    )
}

fn criterion_8() -> Outcome {
    let s = Scenario::bundled("case1").unwrap();
    let zero = s.toll.schedule(&s.model).unwrap();
    let base = evaluate_toll(&s.model, &zero, &s.fixed_point, None, s.toll.init_window).unwrap();
    let mut state = MpccState {
        h: base.h.clone(),
        y: zero.clone(),
        mu: base.report.min_cost.clone(),
        m: 10.0,
        history: Vec::new(),
    };
    let ev = s.model.evaluate(&state.h, &state.y).unwrap();
    let res = complementarity_residuals(&state.h, &ev.psi, &ev.toll, &state.mu, &s.model.net);
    let dt = s.model.grid.dt();
    let q1 = penalty_q(&res, 1.0, dt);
    let linear = [0.5, 10.0, 1e4]
        .iter()
        .map(|&m| (penalty_q(&res, m, dt) - m * q1).abs() / (m * q1))
        .fold(0.0, f64::max);

    let s10 = scalarized_objective(&s.model, &state, Weights::new(1.0, 0.0).unwrap()).unwrap();
    let s01 = scalarized_objective(&s.model, &state, Weights::new(0.0, 1.0).unwrap()).unwrap();
    let e10 = (s10.value - s10.u1()).abs() / s10.u1();
    let e01 = (s01.value - s01.u2()).abs() / s01.u2();
    state.m = 1.0;

    let mut problem = s.toll.clone();
    problem.mode = OptimizeMode::Joint;
    let joint = gradient_projection_solve(&s.model, &problem, &s.fixed_point, Some(base)).unwrap();
    let norms: Vec<f64> = joint.rounds.iter().map(|r| r.residual_norm).collect();
    let decreasing = norms.windows(2).all(|w| w[1] <= 1.1 * w[0]);
    outcome(
        linear <= 1e-9 && e10 <= 1e-9 && e01 <= 1e-9 && decreasing && norms.len() > 1,
        format!(
            "Q linearity error {linear:.1e}; |S(1,0) - U1| {e10:.1e}, |S(0,1) - U2| {e01:.1e} (relative); residual norms per round {:?}",
            norms.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()
        ),
    )
}

fn criterion_9() -> Outcome {
    let coarse = Scenario::bundled("case1").unwrap();
    let fine = coarse.with_dt(coarse.model.grid.dt() / 2.0).unwrap();
    let solve = |s: &Scenario| {
        let zero = s.toll.schedule(&s.model).unwrap();
        evaluate_toll(&s.model, &zero, &s.fixed_point, None, s.toll.init_window).unwrap().report
    };
    let (a, b) = (solve(&coarse), solve(&fine));
    let dc = 100.0 * (a.total_travel_cost - b.total_travel_cost).abs() / a.total_travel_cost;
    let de = 100.0 * (a.total_emission - b.total_emission).abs() / a.total_emission;
    outcome(
        dc < 2.0 && de < 2.0,
        format!(
            "dt {} -> {}: travel cost {:.2} -> {:.2} ({dc:.3}%), emission {:.1} -> {:.1} ({de:.3}%)",
            coarse.model.grid.dt(),
            fine.model.grid.dt(),
            a.total_travel_cost,
            b.total_travel_cost,
            a.total_emission,
            b.total_emission
        ),
    )
}

/// `sum_i c_i (x_i - a_i)^2 + b_i x_i` over the flattened state.
struct Quadratic {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl Evaluator for Quadratic {
    fn objective(&self, state: &MpccState, _w: Weights) -> Result<f64, Error> {
        Ok(state
            .to_vec()
            .iter()
            .enumerate()
            .map(|(i, x)| self.c[i] * (x - self.a[i]).powi(2) + self.b[i] * x)
            .sum())
    }
}

fn criterion_10() -> Outcome {
    let s = Scenario::bundled("case1").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut h = s.model.zero_flow();
    for v in h.as_mut_slice() {
        *v = if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..300.0) };
    }
    let mut y = s.toll.schedule(&s.model).unwrap();
    for v in y.values_mut() {
        *v = rng.gen_range(0.0..10.0);
    }
    let state = MpccState {
        h,
        y,
        mu: vec![rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0)],
        m: 10.0,
        history: Vec::new(),
    };
    let x = state.to_vec();
    let n = x.len();
    let stub = Quadratic {
        a: (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect(),
        b: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        c: (0..n).map(|_| rng.gen_range(0.1..2.0)).collect(),
    };
    let g = fd_gradient(&stub, &state, Weights::new(0.5, 0.5).unwrap(), PenaltySettings::default().fd_steps).unwrap();
    let gv: Vec<f64> = g.flow.as_slice().iter().chain(&g.toll).chain(&g.multiplier).copied().collect();
    let worst = (0..n)
        .map(|i| (gv[i] - (2.0 * stub.c[i] * (x[i] - stub.a[i]) + stub.b[i])).abs())
        .fold(0.0, f64::max);
    outcome(worst <= 1e-6, format!("max gradient error {worst:.2e} over {n} coordinates"))
}

fn main() -> ExitCode {
    let (case1, case1_time) = optimise("case1");
    let (case2, _) = optimise("case2");
    let opt = Optimised {
        case1,
        case1_time,
        case2,
    };
    let results = [
        (1, "case1 toll effectiveness", criterion_1(&opt)),
        (2, "case2 attenuation", criterion_2(&opt)),
        (3, "p3 abandoned under toll", criterion_3(&opt)),
        (4, "equilibrium quality", criterion_4()),
        (5, "projection matches QP oracle", criterion_5()),
        (6, "single-arc loading physics", criterion_6()),
        (7, "emission anchors", criterion_7()),
        (8, "penalty and scalarisation identities", criterion_8()),
        (9, "grid convergence", criterion_9()),
        (10, "finite-difference gradient", criterion_10()),
    ];
    let mut failed = 0;
    for (n, name, o) in &results {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("{tag} criterion {n:>2} ({name}): {}", o.detail);
        failed += usize::from(!o.passed);
    }
    println!("{} of {} acceptance criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
