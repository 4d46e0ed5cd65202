//! Second-best toll design: the equilibrium constraints are written as
//! complementarity conditions, penalised quadratically, and the weighted sum
//! of total travel cost and total emission is minimised by projected
//! gradient descent with finite-difference gradients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::due::{fixed_point_solve, initial_profile, project_lambda, DueReport, FixedPointParams};
use crate::model::TrafficModel;
use crate::network::Network;
use crate::series::{PathFlowProfile, PathSeries};
use crate::toll::{TollError, TollSchedule};
use crate::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptError {
    #[error("weights ({alpha}, {beta}) must be nonnegative and sum to 1")]
    BadWeights { alpha: f64, beta: f64 },
    #[error("objective is not finite when probing coordinate {coordinate} ({block})")]
    ProbeFailure { coordinate: usize, block: &'static str },
    #[error(
        "no descent in the first penalty round; gradient norms: flow {flow:.3e}, toll {toll:.3e}, multiplier {multiplier:.3e}"
    )]
    NoDescent { flow: f64, toll: f64, multiplier: f64 },
    #[error("toll problem has no tolled arcs")]
    NoTolledArcs,
    #[error("invalid penalty setting: {0}")]
    BadPenalty(&'static str),
}

/// Scalarisation weights; `alpha` multiplies travel cost, `beta` emission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub alpha: f64,
    pub beta: f64,
}

impl Weights {
    /// Accepts nonnegative pairs whose sum is within 1e-3 of one and
    /// rescales them to sum to exactly one.
    pub fn normalized(alpha: f64, beta: f64) -> Option<Self> {
        let sum = alpha + beta;
        if !(alpha >= 0.0 && beta >= 0.0) || !((sum - 1.0).abs() <= 1e-3) {
            return None;
        }
        Some(Self {
            alpha: alpha / sum,
            beta: beta / sum,
        })
    }

    pub fn new(alpha: f64, beta: f64) -> Result<Self, OptError> {
        Self::normalized(alpha, beta).ok_or(OptError::BadWeights { alpha, beta })
    }
}

/// Which variables the descent moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizeMode {
    /// Flows, tolls and multipliers together on the penalised program.
    Joint,
    /// Tolls only; the equilibrium is re-solved for every toll probed.
    #[default]
    Bilevel,
}

/// Central-difference probe sizes per variable block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSteps {
    /// veh/h
    pub flow: f64,
    /// hours
    pub toll: f64,
    /// hours
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySettings {
    pub m0: f64,
    pub growth: f64,
    pub rounds: usize,
    /// Projected-gradient iterations per round.
    pub inner_iters: usize,
    /// Initial step length.
    pub step: f64,
    /// Step halvings tried before an iteration is declared stationary.
    pub max_backtracks: usize,
    pub fd_steps: FdSteps,
}

impl Default for PenaltySettings {
    fn default() -> Self {
        Self {
            m0: 10.0,
            growth: 10.0,
            rounds: 4,
            inner_iters: 8,
            step: 1.0,
            max_backtracks: 12,
            fd_steps: FdSteps {
                flow: 1.0,
                toll: 0.05,
                multiplier: 1e-3,
            },
        }
    }
}

impl PenaltySettings {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.m0 > 0.0) {
            return Err("penalty_m0 must be positive");
        }
        if !(self.growth > 1.0) {
            return Err("penalty_growth must exceed 1");
        }
        if self.rounds == 0 {
            return Err("penalty_rounds must be at least 1");
        }
        if !(self.step > 0.0) {
            return Err("step must be positive");
        }
        let s = &self.fd_steps;
        if !(s.flow > 0.0 && s.toll > 0.0 && s.multiplier > 0.0) {
            return Err("finite-difference steps must be positive");
        }
        Ok(())
    }

    pub fn weight(&self, round: usize) -> f64 {
        self.m0 * self.growth.powi(round as i32)
    }
}

/// Everything the upper level needs besides the traffic model.
#[derive(Debug, Clone, PartialEq)]
pub struct TollProblem {
    /// Tolled arc ids.
    pub arcs: Vec<u32>,
    pub upper_bound: f64,
    /// Width of a toll control interval (hours).
    pub interval: f64,
    pub weights: Weights,
    pub mode: OptimizeMode,
    pub penalty: PenaltySettings,
    /// Width of the initial departure window for equilibrium solves.
    pub init_window: f64,
}

impl TollProblem {
    /// All-zero toll schedule for this problem.
    pub fn schedule(&self, model: &TrafficModel) -> Result<TollSchedule, TollError> {
        TollSchedule::zeros(&model.net, &self.arcs, &model.grid, self.interval, self.upper_bound)
    }
}

/// Decision variables of the penalised single-level program.
#[derive(Debug, Clone, PartialEq)]
pub struct MpccState {
    pub h: PathFlowProfile,
    pub y: TollSchedule,
    /// One multiplier (least cost) per OD pair.
    pub mu: Vec<f64>,
    /// Current penalty weight.
    pub m: f64,
    /// Objective value after every accepted step.
    pub history: Vec<f64>,
}

impl MpccState {
    fn len(&self) -> usize {
        self.h.as_slice().len() + self.y.values().len() + self.mu.len()
    }

    /// Flows, then tolls, then multipliers.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.len());
        x.extend_from_slice(self.h.as_slice());
        x.extend_from_slice(self.y.values());
        x.extend_from_slice(&self.mu);
        x
    }

    pub fn with_vec(&self, x: &[f64]) -> Self {
        let mut out = self.clone();
        let nh = self.h.as_slice().len();
        let ny = self.y.values().len();
        out.h.as_mut_slice().copy_from_slice(&x[..nh]);
        out.y.values_mut().copy_from_slice(&x[nh..nh + ny]);
        out.mu.copy_from_slice(&x[nh + ny..]);
        out
    }

    fn block(&self, i: usize) -> &'static str {
        let nh = self.h.as_slice().len();
        let ny = self.y.values().len();
        if i < nh {
            "flow"
        } else if i < nh + ny {
            "toll"
        } else {
            "multiplier"
        }
    }
}

/// Complementarity defects per path and departure cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplementarityResiduals {
    /// `c_p(t) h_p(t)` with `c = Psi + toll - mu`.
    pub r1: PathSeries,
    /// `max(mu - Psi - toll, 0)`.
    pub r2: PathSeries,
}

impl ComplementarityResiduals {
    /// `sqrt(sum (r1^2 + r2^2) dt)`.
    pub fn norm(&self, dt: f64) -> f64 {
        (self.r1.norm(dt).powi(2) + self.r2.norm(dt).powi(2)).sqrt()
    }
}

pub fn complementarity_residuals(
    h: &PathFlowProfile,
    psi: &PathSeries,
    path_toll: &PathSeries,
    mu: &[f64],
    net: &Network,
) -> ComplementarityResiduals {
    let mut r1 = PathSeries::zeros(h.paths(), h.cells());
    let mut r2 = PathSeries::zeros(h.paths(), h.cells());
    for (p, path) in net.paths().iter().enumerate() {
        let m = mu[path.od];
        for k in 0..h.cells() {
            let c = psi.get(p, k) + path_toll.get(p, k) - m;
            r1.set(p, k, c * h.get(p, k));
            r2.set(p, k, (-c).max(0.0));
        }
    }
    ComplementarityResiduals { r1, r2 }
}

/// `M sum (r1^2 + r2^2) dt`, left-endpoint quadrature.
pub fn penalty_q(res: &ComplementarityResiduals, m: f64, dt: f64) -> f64 {
    let s: f64 = res
        .r1
        .as_slice()
        .iter()
        .zip(res.r2.as_slice())
        .map(|(a, b)| a * a + b * b)
        .sum();
    m * s * dt
}

/// The pieces of the scalarised objective at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts {
    pub total_travel_cost: f64,
    pub total_emission: f64,
    pub penalty: f64,
    /// `alpha (TTC + Q) + beta (TE + Q)`.
    pub value: f64,
    /// Complementarity residual norm (penalty weight removed).
    pub residual_norm: f64,
}

impl ObjectiveParts {
    /// Penalised travel cost `U1`.
    pub fn u1(&self) -> f64 {
        self.total_travel_cost + self.penalty
    }

    /// Penalised emission `U2`.
    pub fn u2(&self) -> f64 {
        self.total_emission + self.penalty
    }
}

pub fn scalarize(w: Weights, total_travel_cost: f64, total_emission: f64, penalty: f64) -> f64 {
    w.alpha * (total_travel_cost + penalty) + w.beta * (total_emission + penalty)
}

/// Loads the network once at `state` and evaluates every objective term.
pub fn scalarized_objective(model: &TrafficModel, state: &MpccState, w: Weights) -> Result<ObjectiveParts, Error> {
    let ev = model.evaluate(&state.h, &state.y)?;
    let res = complementarity_residuals(&state.h, &ev.psi, &ev.toll, &state.mu, &model.net);
    let dt = model.grid.dt();
    let penalty = penalty_q(&res, state.m, dt);
    let ttc = ev.total_travel_cost(&state.h);
    let te = ev.total_emission(&state.h);
    Ok(ObjectiveParts {
        total_travel_cost: ttc,
        total_emission: te,
        penalty,
        value: scalarize(w, ttc, te, penalty),
        residual_norm: res.norm(dt),
    })
}

/// Anything that scores an [`MpccState`]; probes run concurrently.
pub trait Evaluator: Sync {
    fn objective(&self, state: &MpccState, w: Weights) -> Result<f64, Error>;
}

impl Evaluator for TrafficModel {
    fn objective(&self, state: &MpccState, w: Weights) -> Result<f64, Error> {
        Ok(scalarized_objective(self, state, w)?.value)
    }
}

/// Finite-difference gradient split by block.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGradient {
    pub flow: PathSeries,
    pub toll: Vec<f64>,
    pub multiplier: Vec<f64>,
}

impl StateGradient {
    pub fn norms(&self) -> (f64, f64, f64) {
        let l2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        (l2(self.flow.as_slice()), l2(&self.toll), l2(&self.multiplier))
    }

    fn to_vec(&self) -> Vec<f64> {
        let mut g = self.flow.as_slice().to_vec();
        g.extend_from_slice(&self.toll);
        g.extend_from_slice(&self.multiplier);
        g
    }
}

/// Central differences of `f` at `x`, one coordinate per task. Where a
/// coordinate would be probed below its lower bound the one-sided
/// second-order stencil `(-3 f(x) + 4 f(x+s) - f(x+2s)) / 2s` is used; both
/// stencils are exact on quadratics.
pub fn central_differences<F>(
    f: F,
    x: &[f64],
    steps: &[f64],
    lower: &[f64],
    block: impl Fn(usize) -> &'static str + Sync,
) -> Result<Vec<f64>, Error>
where
    F: Fn(&[f64]) -> Result<f64, Error> + Sync,
{
    let probe = |i: usize, delta: f64| -> Result<f64, Error> {
        let mut y = x.to_vec();
        y[i] += delta;
        let v = f(&y)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(OptError::ProbeFailure {
                coordinate: i,
                block: block(i),
            }
            .into())
        }
    };
    let needs_base = (0..x.len()).any(|i| x[i] - steps[i] < lower[i]);
    let base = if needs_base {
        let v = f(x)?;
        if !v.is_finite() {
            return Err(OptError::ProbeFailure {
                coordinate: 0,
                block: block(0),
            }
            .into());
        }
        v
    } else {
        0.0
    };
    (0..x.len())
        .into_par_iter()
        .map(|i| {
            let s = steps[i];
            if x[i] - s >= lower[i] {
                Ok((probe(i, s)? - probe(i, -s)?) / (2.0 * s))
            } else {
                Ok((-3.0 * base + 4.0 * probe(i, s)? - probe(i, 2.0 * s)?) / (2.0 * s))
            }
        })
        .collect()
}

/// Finite-difference gradient of the evaluator's objective over
/// `(h, Y, mu)`. Flows are never probed below zero.
pub fn fd_gradient<E: Evaluator>(eval: &E, state: &MpccState, w: Weights, steps: FdSteps) -> Result<StateGradient, Error> {
    let x = state.to_vec();
    let nh = state.h.as_slice().len();
    let ny = state.y.values().len();
    let mut st = vec![steps.flow; nh];
    st.extend(std::iter::repeat_n(steps.toll, ny));
    st.extend(std::iter::repeat_n(steps.multiplier, state.mu.len()));
    let mut lower = vec![0.0; nh];
    lower.extend(std::iter::repeat_n(f64::NEG_INFINITY, ny + state.mu.len()));
    let g = central_differences(
        |v| eval.objective(&state.with_vec(v), w),
        &x,
        &st,
        &lower,
        |i| state.block(i),
    )?;
    Ok(StateGradient {
        flow: PathSeries::from_flat(state.h.paths(), state.h.cells(), g[..nh].to_vec()),
        toll: g[nh..nh + ny].to_vec(),
        multiplier: g[nh + ny..].to_vec(),
    })
}

/// Totals of one equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub total_travel_cost: f64,
    pub total_emission: f64,
}

/// Totals with and without toll and the relative improvements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub weights: Weights,
    pub rows: Vec<ComparisonRow>,
    /// `(base - new) / base` in percent for every row after the first.
    pub cost_reduction_pct: Vec<f64>,
    pub emission_reduction_pct: Vec<f64>,
}

impl ComparisonReport {
    /// The first row is the baseline.
    pub fn new(weights: Weights, rows: Vec<ComparisonRow>) -> Self {
        let base = rows[0].clone();
        let pct = |b: f64, n: f64| if b != 0.0 { 100.0 * (b - n) / b } else { 0.0 };
        let cost_reduction_pct = rows[1..]
            .iter()
            .map(|r| pct(base.total_travel_cost, r.total_travel_cost))
            .collect();
        let emission_reduction_pct = rows[1..]
            .iter()
            .map(|r| pct(base.total_emission, r.total_emission))
            .collect();
        Self {
            weights,
            rows,
            cost_reduction_pct,
            emission_reduction_pct,
        }
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "weights alpha = {:.4}, beta = {:.4}\n{:<24} {:>18} {:>18}\n",
            self.weights.alpha, self.weights.beta, "", "total travel cost", "total emission"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<24} {:>18.4e} {:>18.4e}\n",
                r.label, r.total_travel_cost, r.total_emission
            ));
        }
        for (i, r) in self.rows[1..].iter().enumerate() {
            s.push_str(&format!(
                "{:<24} {:>17.3}% {:>17.3}%\n",
                format!("reduction ({})", r.label),
                self.cost_reduction_pct[i],
                self.emission_reduction_pct[i]
            ));
        }
        s
    }
}

/// Equilibrium under a given toll.
#[derive(Debug, Clone)]
pub struct TollEvaluation {
    pub h: PathFlowProfile,
    pub report: DueReport,
}

impl TollEvaluation {
    pub fn row(&self, label: &str) -> ComparisonRow {
        ComparisonRow {
            label: label.into(),
            total_travel_cost: self.report.total_travel_cost,
            total_emission: self.report.total_emission,
        }
    }
}

/// Solves the equilibrium under toll `y`, warm-started from `h0` (or from
/// the default initial profile).
pub fn evaluate_toll(
    model: &TrafficModel,
    y: &TollSchedule,
    params: &FixedPointParams,
    h0: Option<&PathFlowProfile>,
    init_window: f64,
) -> Result<TollEvaluation, Error> {
    if !y.in_box() {
        let j = y.values().iter().position(|&v| !(0.0..=y.upper()).contains(&v)).unwrap();
        let per = y.intervals_per_arc();
        return Err(TollError::OutOfBox {
            arc: y.arc_ids()[j / per],
            start: y.interval_start(j % per),
            value: y.values()[j],
            upper: y.upper(),
        }
        .into());
    }
    let start = match h0 {
        Some(h) => h.clone(),
        None => initial_profile(model, init_window),
    };
    let (h, report) = fixed_point_solve(model, y, params, &start)?;
    Ok(TollEvaluation { h, report })
}

/// Share of an OD's demand carried by path `p`.
pub fn path_share(h: &PathFlowProfile, net: &Network, dt: f64, p: usize) -> f64 {
    let od = &net.ods()[net.paths()[p].od];
    if od.demand > 0.0 {
        h.path_mass(p, dt) / od.demand
    } else {
        0.0
    }
}

/// Log of one penalty round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub penalty_weight: f64,
    pub objective_start: f64,
    pub objective_end: f64,
    pub accepted_steps: usize,
    /// Complementarity residual norm of the incumbent after the round.
    pub residual_norm: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub state: MpccState,
    pub rounds: Vec<RoundLog>,
    pub base: TollEvaluation,
    pub tolled: TollEvaluation,
    pub report: ComparisonReport,
}

/// Minimises the scalarised objective over tolls on the problem's arcs and
/// compares the resulting equilibrium with the untolled one. `base` may
/// carry an already solved untolled equilibrium.
pub fn gradient_projection_solve(
    model: &TrafficModel,
    problem: &TollProblem,
    params: &FixedPointParams,
    base: Option<TollEvaluation>,
) -> Result<OptimizeOutcome, Error> {
    if problem.arcs.is_empty() {
        return Err(OptError::NoTolledArcs.into());
    }
    problem.penalty.validate().map_err(OptError::BadPenalty)?;
    let w = problem.weights;
    let zero = problem.schedule(model)?;
    let base = match base {
        Some(b) => b,
        None => evaluate_toll(model, &zero, params, None, problem.init_window)?,
    };
    let state = MpccState {
        h: base.h.clone(),
        y: zero,
        mu: base.report.min_cost.clone(),
        m: problem.penalty.m0,
        history: Vec::new(),
    };
    let (state, rounds) = match problem.mode {
        OptimizeMode::Joint => joint_descent(model, problem, state)?,
        OptimizeMode::Bilevel => bilevel_descent(model, problem, params, state, &base)?,
    };
    let tolled = evaluate_toll(model, &state.y, params, Some(&base.h), problem.init_window)?;
    let report = ComparisonReport::new(w, vec![base.row("DUE without toll"), tolled.row("DUE with toll")]);
    Ok(OptimizeOutcome {
        state,
        rounds,
        base,
        tolled,
        report,
    })
}

/// Steps are taken along `g / max|g|`, so the step length is the largest
/// move of any single coordinate.
fn max_abs(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
}

/// Projection onto the feasible set: flows onto the demand simplex, tolls
/// onto the box, multipliers free.
fn project_state(model: &TrafficModel, state: &MpccState) -> Result<MpccState, Error> {
    let mut out = state.clone();
    out.h = project_lambda(&state.h, &model.net, &model.grid)?;
    out.y.clip();
    Ok(out)
}

fn joint_descent(
    model: &TrafficModel,
    problem: &TollProblem,
    mut state: MpccState,
) -> Result<(MpccState, Vec<RoundLog>), Error> {
    let pen = &problem.penalty;
    let w = problem.weights;
    let mut rounds = Vec::with_capacity(pen.rounds);
    for r in 0..pen.rounds {
        state.m = pen.weight(r);
        let mut parts = scalarized_objective(model, &state, w)?;
        let start = parts.value;
        let mut step = pen.step;
        let mut accepted = 0;
        for _ in 0..pen.inner_iters {
            let g = fd_gradient(model, &state, w, pen.fd_steps)?;
            let gv = g.to_vec();
            let scale = max_abs(&gv);
            let x = state.to_vec();
            let mut moved = false;
            for _ in 0..=pen.max_backtracks {
                if scale == 0.0 {
                    break;
                }
                let trial_x: Vec<f64> = x.iter().zip(&gv).map(|(a, b)| a - step / scale * b).collect();
                let trial = project_state(model, &state.with_vec(&trial_x))?;
                let tp = scalarized_objective(model, &trial, w)?;
                if tp.value < parts.value {
                    state = trial;
                    parts = tp;
                    state.history.push(parts.value);
                    moved = true;
                    accepted += 1;
                    step *= 2.0;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                if r == 0 && accepted == 0 {
                    let (flow, toll, multiplier) = g.norms();
                    return Err(OptError::NoDescent { flow, toll, multiplier }.into());
                }
                break;
            }
        }
        rounds.push(RoundLog {
            penalty_weight: state.m,
            objective_start: start,
            objective_end: parts.value,
            accepted_steps: accepted,
            residual_norm: parts.residual_norm,
        });
    }
    Ok((state, rounds))
}

/// Descent over the tolls alone, each probe scored at its own re-solved
/// equilibrium. The lower level holds by construction, so probes are scored
/// without the complementarity penalty (weight zero) and the penalty rounds
/// collapse into one phase with the combined iteration budget.
fn bilevel_descent(
    model: &TrafficModel,
    problem: &TollProblem,
    params: &FixedPointParams,
    mut state: MpccState,
    base: &TollEvaluation,
) -> Result<(MpccState, Vec<RoundLog>), Error> {
    let pen = &problem.penalty;
    let w = problem.weights;
    let warm = base.h.clone();
    let mut template = state.clone();
    template.m = 0.0;
    let solve = |y: &[f64]| -> Result<(f64, MpccState), Error> {
        let mut s = template.clone();
        s.y.values_mut().copy_from_slice(y);
        s.y.clip();
        let eq = evaluate_toll(model, &s.y, params, Some(&warm), problem.init_window)?;
        s.h = eq.h;
        s.mu = eq.report.min_cost.clone();
        let parts = scalarized_objective(model, &s, w)?;
        Ok((parts.value, s))
    };
    let mut y = state.y.values().to_vec();
    let mut current = solve(&y)?;
    let start = current.0;
    let mut step = pen.step;
    let mut accepted = 0;
    let steps = vec![pen.fd_steps.toll; y.len()];
    let lower = vec![0.0; y.len()];
    for _ in 0..pen.rounds * pen.inner_iters {
        let g = central_differences(|v| solve(v).map(|s| s.0), &y, &steps, &lower, |_| "toll")?;
        let scale = max_abs(&g);
        let mut moved = false;
        for _ in 0..=pen.max_backtracks {
            if scale == 0.0 {
                break;
            }
            let trial: Vec<f64> = y
                .iter()
                .zip(&g)
                .map(|(a, b)| (a - step / scale * b).clamp(0.0, problem.upper_bound))
                .collect();
            if trial == y {
                break;
            }
            let cand = solve(&trial)?;
            if cand.0 < current.0 {
                y = trial;
                current = cand;
                state.history.push(current.0);
                moved = true;
                accepted += 1;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let parts = scalarized_objective(model, &current.1, w)?;
    let rounds = vec![RoundLog {
        penalty_weight: 0.0,
        objective_start: start,
        objective_end: parts.value,
        accepted_steps: accepted,
        residual_norm: parts.residual_norm,
    }];
    let mut out = current.1;
    out.history = state.history;
    Ok((out, rounds))
}
