//! Dynamic network loading with the Lax-Hopf exit formula.
//!
//! Every arc carries aggregate and per-path cumulative entry/exit counts on
//! the loading grid. Exit counts come from the Lax-Hopf formula applied to
//! the aggregate entry curve; per-path exits follow from FIFO, and each
//! path's exit from one arc is its entry into the next.

use thiserror::Error;

use crate::grid::TimeGrid;
use crate::network::{ArcSpec, Network};
use crate::series::{PathFlowProfile, PathSeries};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DnlError {
    #[error("vehicle entering arc {arc} at t = {entry_time:.4} h does not exit before the loading horizon ends")]
    HorizonOverflow { arc: u32, entry_time: f64 },
    #[error("{vehicles:.6} vehicles are still on arc {arc} when the loading horizon ends")]
    Unserved { arc: u32, vehicles: f64 },
    #[error("flow profile has shape {got_paths}x{got_cells}, expected {paths}x{cells}")]
    ShapeMismatch {
        paths: usize,
        cells: usize,
        got_paths: usize,
        got_cells: usize,
    },
    #[error("departure rate of path {path} in cell {cell} is negative or not finite: {value}")]
    BadRate { path: String, cell: usize, value: f64 },
}

/// Nondecreasing cumulative vehicle count sampled on a uniform grid and
/// linear in between.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeCurve {
    t0: f64,
    dt: f64,
    values: Vec<f64>,
}

impl CumulativeCurve {
    pub fn zeros(t0: f64, dt: f64, points: usize) -> Self {
        Self {
            t0,
            dt,
            values: vec![0.0; points],
        }
    }

    pub fn from_values(t0: f64, dt: f64, values: Vec<f64>) -> Self {
        assert!(values.len() >= 2);
        Self { t0, dt, values }
    }

    /// Integrates left-constant `rates` over consecutive cells; the curve
    /// stays flat once the rates run out.
    pub fn from_rates(t0: f64, dt: f64, rates: &[f64], points: usize) -> Self {
        let mut values = Vec::with_capacity(points);
        let mut acc = 0.0;
        values.push(acc);
        for k in 1..points {
            if let Some(&r) = rates.get(k - 1) {
                acc += r * dt;
            }
            values.push(acc);
        }
        Self { t0, dt, values }
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.values.len() - 1)
    }

    pub fn last(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn eval(&self, t: f64) -> f64 {
        let x = (t - self.t0) / self.dt;
        if x <= 0.0 {
            return self.values[0];
        }
        let n = self.values.len() - 1;
        if x >= n as f64 {
            return self.values[n];
        }
        let k = x.floor() as usize;
        let frac = x - k as f64;
        self.values[k] + frac * (self.values[k + 1] - self.values[k])
    }

    /// Average rate over cell `k`.
    pub fn rate(&self, k: usize) -> f64 {
        (self.values[k + 1] - self.values[k]) / self.dt
    }

    pub fn rates(&self) -> Vec<f64> {
        (0..self.values.len() - 1).map(|k| self.rate(k)).collect()
    }

    /// Earliest time at which the curve reaches `target` (within `eps`),
    /// or `None` if it never does.
    pub fn first_reach(&self, target: f64, eps: f64, not_before: f64) -> Option<f64> {
        if self.eval(not_before) >= target - eps {
            return Some(not_before.max(self.t0));
        }
        let k = self.values.partition_point(|&v| v < target - eps);
        if k == self.values.len() {
            return None;
        }
        if k == 0 {
            return Some(self.t0);
        }
        let (lo, hi) = (self.values[k - 1], self.values[k]);
        let frac = if hi > lo {
            ((target - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let s = self.time(k - 1) + frac * self.dt;
        Some(s.max(not_before))
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }
}

/// Exit count `W(t) = min_tau { Q(tau) + L psi((t - tau) / L) }` at an
/// arbitrary time `t`.
///
/// The minimisation is exact over piecewise-linear `Q`: on each cell the
/// objective is convex in `tau`, so its minimiser is the clamped stationary
/// point `t - T0 / sqrt(1 - q/M)`, where `q` is the cell's entry rate.
/// Cells are scanned backwards from `t - T0` and the scan stops once the
/// penalty alone, which grows with the elapsed time, exceeds the best value.
pub fn lax_hopf_value(entry: &CumulativeCurve, arc: &ArcSpec, t: f64) -> f64 {
    let cap = arc.fd().capacity();
    let t_free = arc.free_flow_time();
    let cutoff = t - t_free;
    if cutoff <= entry.t0() {
        return entry.values()[0];
    }
    let penalty = |elapsed: f64| {
        let gap = (elapsed - t_free).max(0.0);
        cap * gap * gap / elapsed
    };
    let q = entry.values();
    let floor = q[0];
    let mut best = entry.eval(cutoff);
    let last_cell = entry.len() - 2;
    let jc = (((cutoff - entry.t0()) / entry.dt()).floor() as usize).min(last_cell);
    for j in (0..=jc).rev() {
        let lo = entry.time(j);
        let hi = entry.time(j + 1).min(cutoff);
        if hi < lo {
            continue;
        }
        if floor + penalty(t - hi) >= best {
            break;
        }
        let slope = entry.rate(j);
        let tau = if slope < cap {
            (t - t_free / (1.0 - slope / cap).sqrt()).clamp(lo, hi)
        } else {
            lo
        };
        let value = q[j] + (tau - lo) * slope + penalty(t - tau);
        if value < best {
            best = value;
        }
    }
    best
}

/// Exit curve on the entry curve's grid; see [`lax_hopf_value`].
pub fn lax_hopf_exit(entry: &CumulativeCurve, arc: &ArcSpec) -> CumulativeCurve {
    let mut out = Vec::with_capacity(entry.len());
    let mut prev = 0.0f64;
    for k in 0..entry.len() {
        let w = lax_hopf_value(entry, arc, entry.time(k)).max(prev);
        out.push(w);
        prev = w;
    }
    CumulativeCurve {
        t0: entry.t0(),
        dt: entry.dt(),
        values: out,
    }
}

/// Time to traverse `arc` for the vehicle entering at `t`: the earliest
/// `s >= t + L/v0` with `W(s) = Q(t)`, minus `t`. The grid exit curve
/// brackets `s`; inside the bracket `W` is evaluated exactly, since it can
/// bend sharply within one cell when a queue clears.
pub fn arc_travel_time(
    entry: &CumulativeCurve,
    exit: &CumulativeCurve,
    t: f64,
    arc: &ArcSpec,
) -> Result<f64, DnlError> {
    let target = entry.eval(t) - 1e-9 * entry.last().max(1.0);
    let t_free = arc.free_flow_time();
    let earliest = t + t_free;
    if lax_hopf_value(entry, arc, earliest) >= target {
        return Ok(t_free);
    }
    let overflow = DnlError::HorizonOverflow {
        arc: arc.id,
        entry_time: t,
    };
    let first = (((earliest - exit.t0()) / exit.dt()).ceil().max(0.0)) as usize;
    if first >= exit.len() {
        return Err(overflow);
    }
    let k = first + exit.values()[first..].partition_point(|&w| w < target);
    if k >= exit.len() {
        return Err(overflow);
    }
    let mut lo = if k == first { earliest } else { exit.time(k - 1).max(earliest) };
    let mut hi = exit.time(k);
    for _ in 0..48 {
        let mid = 0.5 * (lo + hi);
        if lax_hopf_value(entry, arc, mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-13 * hi.abs().max(1.0) {
            break;
        }
    }
    Ok(hi - t)
}

/// Splits an arc's exit rate among paths in proportion to their entry
/// rates at the matching entry time.
pub fn diverge_split(entry_rates: &[f64], exit_rate: f64) -> Vec<f64> {
    let total: f64 = entry_rates.iter().sum();
    if total <= 0.0 {
        return vec![0.0; entry_rates.len()];
    }
    entry_rates.iter().map(|q| q / total * exit_rate).collect()
}

/// Early/late arrival penalty `F(x) = c_early max(-x, 0) + c_late max(x, 0)`
/// with `x = arrival - T_A`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalPenalty {
    pub desired_arrival: f64,
    pub early: f64,
    pub late: f64,
}

impl Default for ArrivalPenalty {
    fn default() -> Self {
        Self {
            desired_arrival: 9.5,
            early: 0.6,
            late: 2.4,
        }
    }
}

impl ArrivalPenalty {
    pub fn cost(&self, arrival: f64) -> f64 {
        let x = arrival - self.desired_arrival;
        self.early * (-x).max(0.0) + self.late * x.max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArcState {
    pub entry: CumulativeCurve,
    pub exit: CumulativeCurve,
    /// `(path, curve)` in the order of `Network::arc_users`.
    pub path_entry: Vec<(usize, CumulativeCurve)>,
    pub path_exit: Vec<(usize, CumulativeCurve)>,
}

/// Arc exit times along one path for every departure cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTrajectory {
    /// `exits[i][k]`: time of leaving the `i`-th arc for the vehicle
    /// departing at the midpoint of cell `k`.
    pub exits: Vec<Vec<f64>>,
}

impl PathTrajectory {
    /// Time of entering the `i`-th arc for departure cell `k`.
    pub fn entry_time(&self, i: usize, k: usize, grid: &TimeGrid) -> f64 {
        if i == 0 {
            grid.departure(k)
        } else {
            self.exits[i - 1][k]
        }
    }

    pub fn arrival(&self, k: usize) -> f64 {
        self.exits.last().unwrap()[k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DnlResult {
    pub grid: TimeGrid,
    pub arcs: Vec<ArcState>,
    pub trajectories: Vec<PathTrajectory>,
    /// Path delay `D_p(t_k)` in hours.
    pub delay: PathSeries,
    /// Vehicles inside the network at the end of the departure horizon.
    pub in_network_at_horizon: f64,
}

fn check_profile(h: &PathFlowProfile, net: &Network, grid: &TimeGrid) -> Result<(), DnlError> {
    let (paths, cells) = (net.paths().len(), grid.intervals());
    if h.paths() != paths || h.cells() != cells {
        return Err(DnlError::ShapeMismatch {
            paths,
            cells,
            got_paths: h.paths(),
            got_cells: h.cells(),
        });
    }
    for p in 0..paths {
        for (k, &v) in h.row(p).iter().enumerate() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DnlError::BadRate {
                    path: net.paths()[p].id.clone(),
                    cell: k,
                    value: v,
                });
            }
        }
    }
    Ok(())
}

/// Loads departure rates `h` onto the network and returns all cumulative
/// curves, per-path trajectories and path delays.
pub fn load_network(
    h: &PathFlowProfile,
    net: &Network,
    grid: &TimeGrid,
) -> Result<DnlResult, DnlError> {
    check_profile(h, net, grid)?;
    let points = grid.loading_points();
    let (t0, dt) = (grid.t0(), grid.dt());

    let mut states: Vec<Option<ArcState>> = vec![None; net.arcs().len()];
    for &a in net.arc_order() {
        let arc = &net.arcs()[a];
        let mut path_entry = Vec::with_capacity(net.arc_users(a).len());
        for &(p, pos) in net.arc_users(a) {
            let curve = if pos == 0 {
                CumulativeCurve::from_rates(t0, dt, h.row(p), points)
            } else {
                let up = net.paths()[p].arcs[pos - 1];
                let state = states[up].as_ref().expect("upstream arc loaded first");
                state
                    .path_exit
                    .iter()
                    .find(|(q, _)| *q == p)
                    .map(|(_, c)| c.clone())
                    .expect("path present upstream")
            };
            path_entry.push((p, curve));
        }
        let mut entry = CumulativeCurve::zeros(t0, dt, points);
        for (_, c) in &path_entry {
            entry.add_assign(c);
        }
        let exit = lax_hopf_exit(&entry, arc);
        let path_exit = split_exits(&entry, &exit, &path_entry);
        let unserved = entry.last() - exit.last();
        if unserved > 1e-9 * entry.last().max(1.0) {
            return Err(DnlError::Unserved {
                arc: arc.id,
                vehicles: unserved,
            });
        }
        states[a] = Some(ArcState {
            entry,
            exit,
            path_entry,
            path_exit,
        });
    }
    let arcs: Vec<ArcState> = states.into_iter().map(Option::unwrap).collect();

    let cells = grid.intervals();
    let mut trajectories = Vec::with_capacity(net.paths().len());
    let mut delay = PathSeries::zeros(net.paths().len(), cells);
    for (p, path) in net.paths().iter().enumerate() {
        let mut exits = vec![vec![0.0; cells]; path.arcs.len()];
        for k in 0..cells {
            let depart = grid.departure(k);
            let mut t = depart;
            for (i, &a) in path.arcs.iter().enumerate() {
                let st = &arcs[a];
                t += arc_travel_time(&st.entry, &st.exit, t, &net.arcs()[a])?;
                exits[i][k] = t;
            }
            delay.set(p, k, t - depart);
        }
        trajectories.push(PathTrajectory { exits });
    }

    let in_network_at_horizon = arcs
        .iter()
        .map(|s| (s.entry.eval(grid.tf()) - s.exit.eval(grid.tf())).max(0.0))
        .sum();

    Ok(DnlResult {
        grid: grid.clone(),
        arcs,
        trajectories,
        delay,
        in_network_at_horizon,
    })
}

/// Per-path exit counts under FIFO: the vehicles leaving at `s` entered at
/// the time `t_in` where `Q(t_in) = W(s)`, so `W_p(s) = Q_p(t_in)`. This is
/// the integrated form of the proportional diverge rule.
fn split_exits(
    entry: &CumulativeCurve,
    exit: &CumulativeCurve,
    path_entry: &[(usize, CumulativeCurve)],
) -> Vec<(usize, CumulativeCurve)> {
    let eps = 1e-12 * entry.last().max(1.0);
    let entry_times: Vec<f64> = exit
        .values()
        .iter()
        .map(|&w| {
            entry
                .first_reach(w, eps, entry.t0())
                .unwrap_or_else(|| entry.end_time())
        })
        .collect();
    path_entry
        .iter()
        .map(|(p, qp)| {
            let values = entry_times.iter().map(|&t| qp.eval(t)).collect();
            (*p, CumulativeCurve::from_values(exit.t0(), exit.dt(), values))
        })
        .collect()
}

/// `Psi_p(t, h) = D_p(t, h) + F(t + D_p(t, h) - T_A)`.
pub fn effective_delay(dnl: &DnlResult, penalty: &ArrivalPenalty) -> PathSeries {
    let grid = &dnl.grid;
    let mut psi = dnl.delay.clone();
    for p in 0..psi.paths() {
        for k in 0..psi.cells() {
            let d = dnl.delay.get(p, k);
            psi.set(p, k, d + penalty.cost(grid.departure(k) + d));
        }
    }
    psi
}
