//! Route-and-departure-time user equilibrium by projected fixed-point
//! iteration `h <- P[h - alpha (Psi(h) + toll)]`.

use thiserror::Error;

use crate::grid::TimeGrid;
use crate::model::TrafficModel;
use crate::network::Network;
use crate::series::{PathFlowProfile, PathSeries};
use crate::toll::TollSchedule;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DueError {
    #[error("OD {0} has positive demand but no paths to carry it")]
    InfeasibleProjection(String),
    #[error("fixed-point iteration diverged with step {alpha}; retry with a smaller step")]
    StepSize { alpha: f64 },
    #[error("invalid solver parameter: {0}")]
    BadParameter(&'static str),
    #[error("profile shape {got_paths}x{got_cells} does not match {paths}x{cells}")]
    ShapeMismatch {
        paths: usize,
        cells: usize,
        got_paths: usize,
        got_cells: usize,
    },
}

/// Minimum-norm projection onto `{h >= 0, dt * sum_{p in P_ij, k} h_p(t_k) = Q_ij}`.
///
/// Each OD block is `max(0, v - lambda)` for a scalar shift found by
/// bisection on the mass residual and then fixed exactly on the support.
pub fn project_lambda(
    v: &PathSeries,
    net: &Network,
    grid: &TimeGrid,
) -> Result<PathFlowProfile, DueError> {
    let (paths, cells) = (net.paths().len(), grid.intervals());
    if v.paths() != paths || v.cells() != cells {
        return Err(DueError::ShapeMismatch {
            paths,
            cells,
            got_paths: v.paths(),
            got_cells: v.cells(),
        });
    }
    let dt = grid.dt();
    let mut out = PathSeries::zeros(paths, cells);
    let mut block = Vec::new();
    for od in net.ods() {
        if od.demand == 0.0 {
            continue;
        }
        if od.paths.is_empty() {
            return Err(DueError::InfeasibleProjection(od.id.clone()));
        }
        block.clear();
        for &p in &od.paths {
            block.extend_from_slice(v.row(p));
        }
        let shift = simplex_shift(&block, od.demand / dt);
        for &p in &od.paths {
            for (o, &x) in out.row_mut(p).iter_mut().zip(v.row(p)) {
                *o = (x - shift).max(0.0);
            }
        }
    }
    Ok(out)
}

/// Shift `lambda` with `sum max(0, x - lambda) = total` (`total > 0`).
fn simplex_shift(x: &[f64], total: f64) -> f64 {
    let mass = |lam: f64| x.iter().map(|&v| (v - lam).max(0.0)).sum::<f64>();
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (min - total / x.len() as f64, max);
    let tol = 1e-10 * total;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let m = mass(mid);
        if (m - total).abs() <= tol {
            lo = mid;
            hi = mid;
            break;
        }
        if m > total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lam = 0.5 * (lo + hi);
    // Exact shift on the identified support.
    let (count, sum) = x
        .iter()
        .filter(|&&v| v > lam)
        .fold((0usize, 0.0), |(c, s), &v| (c + 1, s + v));
    if count > 0 {
        let exact = (sum - total) / count as f64;
        let consistent = x
            .iter()
            .all(|&v| (v > lam) == (v > exact) || (v - exact).abs() <= 1e-12 * v.abs().max(1.0));
        if consistent {
            return exact;
        }
    }
    lam
}

/// Update rule of the fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// `h <- P[h - alpha c(h)]`.
    Projection,
    /// Predictor `g = P[h - alpha c(h)]`, corrector `h <- P[h - alpha c(g)]`.
    /// Same fixed points; converges on monotone cost operators with a
    /// strong skew part where the plain projection orbits.
    #[default]
    Extragradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointParams {
    pub scheme: Scheme,
    /// Step in (veh/h) per unit cost.
    pub alpha: f64,
    pub max_iters: usize,
    /// Stop once the relative residual drops to this level.
    pub residual_tol: f64,
    /// Relative tolerance of the equilibrium audit.
    pub audit_tol: f64,
    /// Largest fraction of demand allowed above the audit tolerance at
    /// convergence; the residual test alone is satisfied long before the
    /// profile is an equilibrium.
    pub max_violation: f64,
    /// Step halvings allowed before giving up on divergence.
    pub max_halvings: usize,
}

impl Default for FixedPointParams {
    fn default() -> Self {
        Self {
            scheme: Scheme::default(),
            alpha: 3000.0,
            max_iters: 500,
            residual_tol: 1e-3,
            audit_tol: 1e-2,
            max_violation: 0.02,
            max_halvings: 6,
        }
    }
}

impl FixedPointParams {
    fn validate(&self) -> Result<(), DueError> {
        if !(self.alpha > 0.0) {
            return Err(DueError::BadParameter("alpha must be positive"));
        }
        if !(self.residual_tol > 0.0) {
            return Err(DueError::BadParameter("residual_tol must be positive"));
        }
        Ok(())
    }
}

/// Equilibrium quality of a flow profile.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    /// Least generalised cost per OD over all paths and departure cells.
    pub min_cost: Vec<f64>,
    /// `(path, cell)` pairs carrying flow at a cost above `min_cost (1 + tol)`.
    pub violations: Vec<(usize, usize)>,
    pub violating_mass: f64,
    pub violating_fraction: f64,
}

/// Flags used `(p, t)` pairs whose generalised cost exceeds the OD minimum
/// by more than the relative tolerance.
pub fn equilibrium_audit(
    h: &PathFlowProfile,
    cost: &PathSeries,
    net: &Network,
    grid: &TimeGrid,
    tol: f64,
    flow_eps: f64,
) -> AuditReport {
    let dt = grid.dt();
    let mut min_cost = Vec::with_capacity(net.ods().len());
    let mut violations = Vec::new();
    let (mut bad, mut total) = (0.0, 0.0);
    for od in net.ods() {
        let v = od
            .paths
            .iter()
            .flat_map(|&p| cost.row(p).iter().copied())
            .fold(f64::INFINITY, f64::min);
        min_cost.push(v);
        let limit = v + tol * v.abs();
        for &p in &od.paths {
            for k in 0..h.cells() {
                let flow = h.get(p, k);
                total += flow * dt;
                if flow > flow_eps && cost.get(p, k) > limit {
                    violations.push((p, k));
                    bad += flow * dt;
                }
            }
        }
    }
    AuditReport {
        min_cost,
        violations,
        violating_mass: bad,
        violating_fraction: if total > 0.0 { bad / total } else { 0.0 },
    }
}

/// `sum_p sum_k Psi_p(t_k) h_p(t_k) dt`.
pub fn total_travel_cost(h: &PathFlowProfile, psi: &PathSeries, grid: &TimeGrid) -> f64 {
    h.inner(psi, grid.dt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DueReport {
    pub iterations: usize,
    pub converged: bool,
    /// `|| h - P[h - alpha c] ||`.
    pub residual: f64,
    /// Residual divided by `alpha || c ||`.
    pub relative_residual: f64,
    /// Step in use when the iteration stopped.
    pub alpha: f64,
    /// Least generalised cost per OD.
    pub min_cost: Vec<f64>,
    /// `sum_p int (Psi_p + toll_p - v_ij) h_p dt`.
    pub merit_gap: f64,
    pub total_travel_cost: f64,
    pub total_emission: f64,
    pub audit: AuditReport,
    pub residual_history: Vec<f64>,
}

/// Uniform departures over all paths of each OD inside a window of width
/// `window` hours centred so that free-flow arrival on the fastest path
/// hits the desired arrival time.
pub fn initial_profile(model: &TrafficModel, window: f64) -> PathFlowProfile {
    let grid = &model.grid;
    let net = &model.net;
    let mut h = model.zero_flow();
    for od in net.ods() {
        let fastest = od
            .paths
            .iter()
            .map(|&p| net.free_flow_time(p))
            .fold(f64::INFINITY, f64::min);
        let centre = model.penalty.desired_arrival - fastest;
        let (lo, hi) = (centre - 0.5 * window, centre + 0.5 * window);
        let cells: Vec<usize> = (0..grid.intervals())
            .filter(|&k| {
                let mid = grid.departure(k);
                mid >= lo && mid <= hi
            })
            .collect();
        let cells = if cells.is_empty() {
            (0..grid.intervals()).collect()
        } else {
            cells
        };
        let rate = od.demand / (grid.dt() * (cells.len() * od.paths.len()) as f64);
        for &p in &od.paths {
            for &k in &cells {
                h.set(p, k, rate);
            }
        }
    }
    h
}

/// Runs the projected fixed-point iteration from `h0` under tolls `toll`.
pub fn fixed_point_solve(
    model: &TrafficModel,
    toll: &TollSchedule,
    params: &FixedPointParams,
    h0: &PathFlowProfile,
) -> Result<(PathFlowProfile, DueReport), crate::Error> {
    params.validate()?;
    let (net, grid) = (&model.net, &model.grid);
    let dt = grid.dt();
    let mut alpha = params.alpha;
    let mut halvings = 0;
    let mut h = project_lambda(h0, net, grid)?;
    let mut history: Vec<f64> = Vec::new();
    let mut best: Option<(f64, PathFlowProfile)> = None;
    let mut iterations = 0;

    loop {
        let ev = model.evaluate(&h, toll)?;
        let cost = ev.cost();
        let step = h.zip_map(&cost, |x, c| x - alpha * c);
        let next = project_lambda(&step, net, grid)?;
        let residual = h.zip_map(&next, |a, b| a - b).norm(dt);
        let scale = alpha * cost.norm(dt);
        let relative = if scale > 0.0 { residual / scale } else { 0.0 };
        history.push(relative);

        if best.as_ref().is_none_or(|(r, _)| relative < *r) {
            best = Some((relative, h.clone()));
        }
        let converged = relative <= params.residual_tol && {
            let flow_eps = flow_threshold(&h);
            equilibrium_audit(&h, &cost, net, grid, params.audit_tol, flow_eps).violating_fraction
                <= params.max_violation
        };
        if converged || iterations >= params.max_iters {
            let report = build_report(model, &h, &ev, iterations, converged, residual, relative, alpha, params, history);
            return Ok((h, report));
        }

        let window = 20;
        if history.len() > window && relative > 10.0 * history[history.len() - 1 - window] {
            halvings += 1;
            if halvings > params.max_halvings {
                return Err(DueError::StepSize { alpha }.into());
            }
            alpha *= 0.5;
            h = best.as_ref().map(|(_, b)| b.clone()).unwrap();
            history.clear();
            iterations += 1;
            continue;
        }
        h = match params.scheme {
            Scheme::Projection => next,
            Scheme::Extragradient => {
                let c = model.evaluate(&next, toll)?.cost();
                project_lambda(&h.zip_map(&c, |x, c| x - alpha * c), net, grid)?
            }
        };
        iterations += 1;
    }
}

/// Rates below this are treated as unused by the audit.
fn flow_threshold(h: &PathFlowProfile) -> f64 {
    1e-6 * h.as_slice().iter().copied().fold(0.0, f64::max)
}

#[allow(clippy::too_many_arguments)]
fn build_report(
    model: &TrafficModel,
    h: &PathFlowProfile,
    ev: &crate::model::Evaluation,
    iterations: usize,
    converged: bool,
    residual: f64,
    relative: f64,
    alpha: f64,
    params: &FixedPointParams,
    residual_history: Vec<f64>,
) -> DueReport {
    let (net, grid) = (&model.net, &model.grid);
    let cost = ev.cost();
    let audit = equilibrium_audit(h, &cost, net, grid, params.audit_tol, flow_threshold(h));
    let mut merit_gap = 0.0;
    for (oi, od) in net.ods().iter().enumerate() {
        for &p in &od.paths {
            for k in 0..grid.intervals() {
                merit_gap += (cost.get(p, k) - audit.min_cost[oi]) * h.get(p, k) * grid.dt();
            }
        }
    }
    DueReport {
        iterations,
        converged,
        residual,
        relative_residual: relative,
        alpha,
        min_cost: audit.min_cost.clone(),
        merit_gap,
        total_travel_cost: ev.total_travel_cost(h),
        total_emission: ev.total_emission(h),
        audit,
        residual_history,
    }
}
