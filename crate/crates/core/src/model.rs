//! Everything needed to turn departure rates into costs and emissions.

use crate::dnl::{effective_delay, load_network, ArrivalPenalty, DnlResult};
use crate::emission::{path_emission, total_emission, EmissionModel, PathEmissionResult};
use crate::grid::TimeGrid;
use crate::network::Network;
use crate::series::{PathFlowProfile, PathSeries};
use crate::toll::TollSchedule;
use crate::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficModel {
    pub net: Network,
    pub grid: TimeGrid,
    pub penalty: ArrivalPenalty,
    pub emission: EmissionModel,
    /// Sample tolls at departure time instead of arc-entry time.
    pub toll_at_departure: bool,
}

/// One network loading and everything derived from it.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub dnl: DnlResult,
    /// Effective delay `Psi_p(t, h)`.
    pub psi: PathSeries,
    /// Toll on path `sum_a delta_{a,p} Y_a`.
    pub toll: PathSeries,
    pub emission: PathEmissionResult,
}

impl Evaluation {
    /// Generalised cost seen by travellers, `Psi + toll`.
    pub fn cost(&self) -> PathSeries {
        self.psi.zip_map(&self.toll, |a, b| a + b)
    }

    pub fn total_travel_cost(&self, h: &PathFlowProfile) -> f64 {
        crate::due::total_travel_cost(h, &self.psi, &self.dnl.grid)
    }

    pub fn total_emission(&self, h: &PathFlowProfile) -> f64 {
        total_emission(h, &self.emission, &self.dnl.grid)
    }
}

impl TrafficModel {
    pub fn evaluate(&self, h: &PathFlowProfile, toll: &TollSchedule) -> Result<Evaluation, Error> {
        let dnl = load_network(h, &self.net, &self.grid)?;
        let psi = effective_delay(&dnl, &self.penalty);
        let toll = toll.path_tolls(&dnl, &self.net, self.toll_at_departure);
        let emission = path_emission(&dnl, &self.net, &self.emission)?;
        Ok(Evaluation {
            dnl,
            psi,
            toll,
            emission,
        })
    }

    pub fn zero_flow(&self) -> PathFlowProfile {
        PathSeries::zeros(self.net.paths().len(), self.grid.intervals())
    }

    /// Same model on a grid with half the step.
    pub fn refined(&self) -> Self {
        Self {
            grid: self.grid.refined(),
            ..self.clone()
        }
    }
}
