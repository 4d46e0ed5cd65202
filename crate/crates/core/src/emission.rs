//! Speed-based emission factors and the path emission operator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dnl::DnlResult;
use crate::grid::TimeGrid;
use crate::network::Network;
use crate::series::{PathFlowProfile, PathSeries};

pub const KM_PER_MILE: f64 = 1.609_344;

/// Speed at which the EMFAC speed correction vanishes (mph).
pub const EMFAC_REFERENCE_SPEED: f64 = 17.03;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmissionError {
    #[error("speed must be positive, got {0}")]
    NonPositiveSpeed(f64),
    #[error("path {path}, departure cell {cell}: arc {arc} traversed in zero time")]
    DegenerateTrajectory { path: String, cell: usize, arc: u32 },
    #[error("emission parameter {0} is not finite")]
    NonFiniteParameter(&'static str),
    #[error("basic emission rate must be positive, got {0}")]
    NonPositiveBer(f64),
}

/// Distance unit a model was calibrated in. Speeds and per-distance
/// factors are converted so that the rest of the crate sees miles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DistanceUnit {
    #[default]
    Mile,
    Km,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EmissionFormula {
    /// `b1 * v^(-b2)`
    Rose { b1: f64, b2: f64 },
    /// `b1 + b2 / v`
    KentMudford { b1: f64, b2: f64 },
    /// `BER * exp(b1 (v - 17.03) + b2 (v - 17.03)^2)`, mph and g/mile.
    Emfac { ber: f64, b1: f64, b2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmissionModel {
    pub formula: EmissionFormula,
    pub unit: DistanceUnit,
}

impl EmissionModel {
    pub fn emfac(ber: f64, b1: f64, b2: f64) -> Self {
        Self {
            formula: EmissionFormula::Emfac { ber, b1, b2 },
            unit: DistanceUnit::Mile,
        }
    }

    pub fn rose(b1: f64, b2: f64, unit: DistanceUnit) -> Self {
        Self {
            formula: EmissionFormula::Rose { b1, b2 },
            unit,
        }
    }

    pub fn kent_mudford(b1: f64, b2: f64, unit: DistanceUnit) -> Self {
        Self {
            formula: EmissionFormula::KentMudford { b1, b2 },
            unit,
        }
    }

    /// Emfac(2.5, -0.04, 0.001).
    pub fn default_emfac() -> Self {
        Self::emfac(2.5, -0.04, 0.001)
    }

    pub fn validate(&self) -> Result<(), EmissionError> {
        let finite = |name, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(EmissionError::NonFiniteParameter(name))
            }
        };
        match self.formula {
            EmissionFormula::Rose { b1, b2 } | EmissionFormula::KentMudford { b1, b2 } => {
                finite("b1", b1)?;
                finite("b2", b2)
            }
            EmissionFormula::Emfac { ber, b1, b2 } => {
                finite("ber", ber)?;
                finite("b1", b1)?;
                finite("b2", b2)?;
                if ber > 0.0 {
                    Ok(())
                } else {
                    Err(EmissionError::NonPositiveBer(ber))
                }
            }
        }
    }

    /// The formula in its own calibration units.
    fn native(&self, v: f64) -> f64 {
        match self.formula {
            EmissionFormula::Rose { b1, b2 } => b1 * v.powf(-b2),
            EmissionFormula::KentMudford { b1, b2 } => b1 + b2 / v,
            EmissionFormula::Emfac { ber, b1, b2 } => {
                let dv = v - EMFAC_REFERENCE_SPEED;
                ber * (b1 * dv + b2 * dv * dv).exp()
            }
        }
    }
}

/// Emitted mass per mile at speed `v` (mph).
pub fn emission_per_distance(v: f64, model: &EmissionModel) -> Result<f64, EmissionError> {
    if !(v > 0.0) {
        return Err(EmissionError::NonPositiveSpeed(v));
    }
    Ok(match model.unit {
        DistanceUnit::Mile => model.native(v),
        DistanceUnit::Km => model.native(v * KM_PER_MILE) * KM_PER_MILE,
    })
}

/// Emitted mass per hour at speed `v`: `v * e_x(v)`.
pub fn emission_rate(v: f64, model: &EmissionModel) -> Result<f64, EmissionError> {
    Ok(v * emission_per_distance(v, model)?)
}

/// Per-vehicle emission `E_p(t_k)` for every path and departure cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEmissionResult {
    pub per_vehicle: PathSeries,
}

/// `E_p(t) = sum_i (tau_i - tau_{i-1}) * rate(L_i / (tau_i - tau_{i-1}))`,
/// using the average speed on each arc of the trajectory.
pub fn path_emission(
    dnl: &DnlResult,
    net: &Network,
    model: &EmissionModel,
) -> Result<PathEmissionResult, EmissionError> {
    let grid = &dnl.grid;
    let cells = grid.intervals();
    let mut out = PathSeries::zeros(net.paths().len(), cells);
    for (p, path) in net.paths().iter().enumerate() {
        let traj = &dnl.trajectories[p];
        for k in 0..cells {
            let mut total = 0.0;
            for (i, &a) in path.arcs.iter().enumerate() {
                let duration = traj.exits[i][k] - traj.entry_time(i, k, grid);
                if !(duration > 0.0) {
                    return Err(EmissionError::DegenerateTrajectory {
                        path: path.id.clone(),
                        cell: k,
                        arc: net.arcs()[a].id,
                    });
                }
                let speed = net.arcs()[a].length / duration;
                total += duration * emission_rate(speed, model)?;
            }
            out.set(p, k, total);
        }
    }
    Ok(PathEmissionResult { per_vehicle: out })
}

/// `sum_p sum_k h_p(t_k) E_p(t_k) dt`.
pub fn total_emission(h: &PathFlowProfile, e: &PathEmissionResult, grid: &TimeGrid) -> f64 {
    h.inner(&e.per_vehicle, grid.dt())
}
