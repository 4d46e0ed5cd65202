//! Piecewise-constant toll schedules on a subset of arcs.

use thiserror::Error;

use crate::dnl::DnlResult;
use crate::grid::TimeGrid;
use crate::network::Network;
use crate::series::PathSeries;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TollError {
    #[error("tolled arc {0} is not in the network")]
    UnknownArc(u32),
    #[error("toll control interval must be positive, got {0}")]
    BadInterval(f64),
    #[error("toll upper bound must be nonnegative, got {0}")]
    BadUpperBound(f64),
    #[error("toll value {value} on arc {arc} at t = {start} is outside [0, {upper}]")]
    OutOfBox {
        arc: u32,
        start: f64,
        value: f64,
        upper: f64,
    },
    #[error("toll value for arc {arc} at t = {start} does not match any control interval")]
    UnknownInterval { arc: u32, start: f64 },
}

/// Tolls `Y_a(t)` for the tolled arcs, constant on control intervals of
/// width `interval` starting at `t0`, zero outside the departure horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TollSchedule {
    arcs: Vec<usize>,
    arc_ids: Vec<u32>,
    t0: f64,
    tf: f64,
    interval: f64,
    per_arc: usize,
    upper: f64,
    values: Vec<f64>,
}

impl TollSchedule {
    /// All-zero schedule on `arc_ids`.
    pub fn zeros(
        net: &Network,
        arc_ids: &[u32],
        grid: &TimeGrid,
        interval: f64,
        upper: f64,
    ) -> Result<Self, TollError> {
        if !(interval > 0.0) {
            return Err(TollError::BadInterval(interval));
        }
        if !(upper >= 0.0) {
            return Err(TollError::BadUpperBound(upper));
        }
        let arcs = arc_ids
            .iter()
            .map(|&id| net.arc_index(id).ok_or(TollError::UnknownArc(id)))
            .collect::<Result<Vec<_>, _>>()?;
        let span = grid.tf() - grid.t0();
        let per_arc = ((span / interval) - 1e-9).ceil().max(1.0) as usize;
        Ok(Self {
            arcs,
            arc_ids: arc_ids.to_vec(),
            t0: grid.t0(),
            tf: grid.tf(),
            interval,
            per_arc,
            upper,
            values: vec![0.0; arc_ids.len() * per_arc],
        })
    }

    /// A schedule with no tolled arcs.
    pub fn none(grid: &TimeGrid) -> Self {
        Self {
            arcs: Vec::new(),
            arc_ids: Vec::new(),
            t0: grid.t0(),
            tf: grid.tf(),
            interval: grid.tf() - grid.t0(),
            per_arc: 1,
            upper: 0.0,
            values: Vec::new(),
        }
    }

    pub fn arc_ids(&self) -> &[u32] {
        &self.arc_ids
    }

    pub fn arc_indices(&self) -> &[usize] {
        &self.arcs
    }

    pub fn intervals_per_arc(&self) -> usize {
        self.per_arc
    }

    pub fn interval(&self) -> f64 {
        self.interval
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn interval_start(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.interval
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Flat control vector, arc-major.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, slot: usize, j: usize) -> f64 {
        self.values[slot * self.per_arc + j]
    }

    pub fn set(&mut self, slot: usize, j: usize, v: f64) {
        self.values[slot * self.per_arc + j] = v;
    }

    /// Sets the value for the control interval starting at `start`.
    pub fn set_at(&mut self, arc_id: u32, start: f64, v: f64) -> Result<(), TollError> {
        let slot = self
            .arc_ids
            .iter()
            .position(|&a| a == arc_id)
            .ok_or(TollError::UnknownArc(arc_id))?;
        let x = (start - self.t0) / self.interval;
        let j = x.round();
        if (x - j).abs() > 1e-6 || j < 0.0 || j as usize >= self.per_arc {
            return Err(TollError::UnknownInterval { arc: arc_id, start });
        }
        if !(0.0..=self.upper).contains(&v) {
            return Err(TollError::OutOfBox {
                arc: arc_id,
                start,
                value: v,
                upper: self.upper,
            });
        }
        self.set(slot, j as usize, v);
        Ok(())
    }

    /// Projects every value onto `[0, upper]`.
    pub fn clip(&mut self) {
        let ub = self.upper;
        for v in &mut self.values {
            *v = v.clamp(0.0, ub);
        }
    }

    pub fn in_box(&self) -> bool {
        self.values.iter().all(|&v| (0.0..=self.upper).contains(&v))
    }

    /// Toll on network arc index `arc` at time `t`.
    pub fn at(&self, arc: usize, t: f64) -> f64 {
        let Some(slot) = self.arcs.iter().position(|&a| a == arc) else {
            return 0.0;
        };
        if t < self.t0 || t >= self.tf {
            return 0.0;
        }
        let j = (((t - self.t0) / self.interval).floor() as usize).min(self.per_arc - 1);
        self.get(slot, j)
    }

    /// `sum_a delta_{a,p} Y_a` for every path and departure cell, sampled at
    /// the arc-entry time (or at the departure time if `at_departure`).
    pub fn path_tolls(&self, dnl: &DnlResult, net: &Network, at_departure: bool) -> PathSeries {
        let grid = &dnl.grid;
        let mut out = PathSeries::zeros(net.paths().len(), grid.intervals());
        if self.is_empty() {
            return out;
        }
        for (p, path) in net.paths().iter().enumerate() {
            for (i, &a) in path.arcs.iter().enumerate() {
                if !self.arcs.contains(&a) {
                    continue;
                }
                for k in 0..grid.intervals() {
                    let t = if at_departure {
                        grid.departure(k)
                    } else {
                        dnl.trajectories[p].entry_time(i, k, grid)
                    };
                    let v = out.get(p, k) + self.at(a, t);
                    out.set(p, k, v);
                }
            }
        }
        out
    }
}
