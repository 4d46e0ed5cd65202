//! Dynamic user equilibrium with simultaneous route and departure choice,
//! kinematic-wave network loading, speed-based emissions and
//! emission-aware second-best toll design.
//!
//! Units throughout: miles, hours, vehicles. Costs (delays, penalties and
//! tolls) are expressed in hours.

pub mod dnl;
pub mod due;
pub mod emission;
pub mod fd;
pub mod grid;
pub mod model;
pub mod network;
pub mod output;
pub mod scenario;
pub mod series;
pub mod toll;
pub mod toll_opt;

pub use dnl::{load_network, ArrivalPenalty, CumulativeCurve, DnlError, DnlResult};
pub use due::{fixed_point_solve, project_lambda, DueError, DueReport, FixedPointParams};
pub use emission::{EmissionError, EmissionModel};
pub use fd::{FdError, FundamentalDiagram};
pub use grid::{GridError, TimeGrid};
pub use model::{Evaluation, TrafficModel};
pub use network::{Network, NetworkDescription, NetworkError};
pub use scenario::{Scenario, ScenarioConfig, ScenarioError};
pub use series::{PathFlowProfile, PathSeries};
pub use toll::{TollError, TollSchedule};
pub use toll_opt::{ComparisonReport, OptError, Weights};

/// Any failure raised by the model pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Fd(#[from] FdError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Dnl(#[from] DnlError),
    #[error(transparent)]
    Emission(#[from] EmissionError),
    #[error(transparent)]
    Due(#[from] DueError),
    #[error(transparent)]
    Toll(#[from] TollError),
    #[error(transparent)]
    Opt(#[from] OptError),
}

impl Error {
    /// True for errors caused by invalid input rather than solver failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Grid(_) | Error::Fd(_) | Error::Network(_) | Error::Toll(_) | Error::Emission(EmissionError::NonFiniteParameter(_) | EmissionError::NonPositiveBer(_))
        )
    }
}
