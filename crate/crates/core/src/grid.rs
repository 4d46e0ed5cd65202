//! Uniform time grid shared by departure profiles and cumulative curves.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("horizon start {t0} must precede end {tf}")]
    EmptyHorizon { t0: f64, tf: f64 },
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("horizon length {span} is not an integral multiple of dt = {dt}")]
    NonIntegralSteps { span: f64, dt: f64 },
    #[error("grid needs at least two intervals, got {0}")]
    TooFewIntervals(usize),
    #[error("clearance {0} must be a nonnegative multiple of dt")]
    BadClearance(f64),
}

/// Departure horizon `[t0, tf]` split into `K` cells of width `dt`, plus a
/// clearance tail over which the network keeps loading after the last
/// departure so that every vehicle can reach its destination.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    tf: f64,
    dt: f64,
    intervals: usize,
    clearance_intervals: usize,
}

fn integral_steps(span: f64, dt: f64) -> Option<usize> {
    let n = span / dt;
    let r = n.round();
    if r >= 0.0 && (n - r).abs() <= 1e-9 * r.max(1.0) {
        Some(r as usize)
    } else {
        None
    }
}

impl TimeGrid {
    pub fn new(t0: f64, tf: f64, dt: f64) -> Result<Self, GridError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(GridError::NonPositiveStep(dt));
        }
        if !(t0 < tf) {
            return Err(GridError::EmptyHorizon { t0, tf });
        }
        let span = tf - t0;
        let intervals =
            integral_steps(span, dt).ok_or(GridError::NonIntegralSteps { span, dt })?;
        if intervals < 2 {
            return Err(GridError::TooFewIntervals(intervals));
        }
        Ok(Self {
            t0,
            tf,
            dt,
            intervals,
            clearance_intervals: 0,
        })
    }

    /// Extends the loading horizon by `hours` past `tf`.
    pub fn with_clearance(mut self, hours: f64) -> Result<Self, GridError> {
        if hours == 0.0 {
            self.clearance_intervals = 0;
            return Ok(self);
        }
        if !(hours > 0.0) {
            return Err(GridError::BadClearance(hours));
        }
        self.clearance_intervals =
            integral_steps(hours, self.dt).ok_or(GridError::BadClearance(hours))?;
        Ok(self)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn tf(&self) -> f64 {
        self.tf
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of departure cells `K`.
    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn clearance(&self) -> f64 {
        self.clearance_intervals as f64 * self.dt
    }

    pub fn clearance_intervals(&self) -> usize {
        self.clearance_intervals
    }

    /// Grid point `t_k = t0 + k dt`; valid for the whole loading horizon.
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    /// Representative departure instant of cell `k`: its midpoint. Costs
    /// of a departure cell are evaluated here so that they depend on the
    /// cell's own flow.
    pub fn departure(&self, k: usize) -> f64 {
        self.time(k) + 0.5 * self.dt
    }

    /// Number of loading grid points, `K + K_clear + 1`.
    pub fn loading_points(&self) -> usize {
        self.intervals + self.clearance_intervals + 1
    }

    pub fn loading_end(&self) -> f64 {
        self.time(self.intervals + self.clearance_intervals)
    }

    /// Same horizon with the step halved.
    pub fn refined(&self) -> Self {
        Self {
            t0: self.t0,
            tf: self.tf,
            dt: self.dt / 2.0,
            intervals: self.intervals * 2,
            clearance_intervals: self.clearance_intervals * 2,
        }
    }

    /// Index of the departure cell containing `t`, if inside `[t0, tf)`.
    pub fn cell_of(&self, t: f64) -> Option<usize> {
        if t < self.t0 || t >= self.tf {
            return None;
        }
        let k = ((t - self.t0) / self.dt).floor() as usize;
        Some(k.min(self.intervals - 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn morning_horizon() {
        let g = TimeGrid::new(6.0, 11.0, 0.05).unwrap();
        assert_eq!(g.intervals(), 100);
        assert!((g.time(100) - 11.0).abs() < 1e-12);
        let g = g.with_clearance(3.0).unwrap();
        assert_eq!(g.loading_points(), 161);
        assert!((g.loading_end() - 14.0).abs() < 1e-9);
        assert_eq!(g.refined().intervals(), 200);
    }

    #[test]
    fn rejects_bad_horizons() {
        assert!(matches!(
            TimeGrid::new(1.0, 1.0, 0.1),
            Err(GridError::EmptyHorizon { .. })
        ));
        assert!(matches!(
            TimeGrid::new(0.0, 1.0, 0.3),
            Err(GridError::NonIntegralSteps { .. })
        ));
        assert!(matches!(
            TimeGrid::new(0.0, 1.0, 0.0),
            Err(GridError::NonPositiveStep(_))
        ));
        assert!(matches!(
            TimeGrid::new(0.0, 1.0, 1.0),
            Err(GridError::TooFewIntervals(1))
        ));
    }

    #[test]
    fn cell_lookup() {
        let g = TimeGrid::new(0.0, 1.0, 0.25).unwrap();
        assert_eq!(g.cell_of(0.0), Some(0));
        assert_eq!(g.cell_of(0.3), Some(1));
        assert_eq!(g.cell_of(0.99), Some(3));
        assert_eq!(g.cell_of(1.0), None);
        assert_eq!(g.cell_of(-0.1), None);
    }
}
