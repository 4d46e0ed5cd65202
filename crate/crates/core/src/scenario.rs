//! Scenario files: TOML documents describing the network, demand, horizon,
//! emission model and solver settings.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dnl::ArrivalPenalty;
use crate::due::{FixedPointParams, Scheme};
use crate::emission::{DistanceUnit, EmissionModel};
use crate::grid::TimeGrid;
use crate::model::TrafficModel;
use crate::network::{ArcSpec, Network, NetworkDescription, OdSpec, PathSpec};
use crate::toll_opt::{OptimizeMode, PenaltySettings, TollProblem, Weights};

pub const CASE1: &str = include_str!("../scenarios/case1.toml");
pub const CASE2: &str = include_str!("../scenarios/case2.toml");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("scenario is missing the [{0}] section")]
    MissingSection(&'static str),
    #[error("unsupported {quantity} unit {unit:?}; expected {expected:?}")]
    Unit {
        quantity: &'static str,
        unit: String,
        expected: &'static str,
    },
    #[error("weights ({alpha}, {beta}) must be nonnegative and sum to 1")]
    Weights { alpha: f64, beta: f64 },
    #[error("invalid [{section}] setting: {message}")]
    Invalid {
        section: &'static str,
        message: String,
    },
    #[error(transparent)]
    Model(#[from] crate::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    #[serde(default = "d_mile")]
    pub length: String,
    #[serde(default = "d_hour")]
    pub time: String,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            length: d_mile(),
            time: d_hour(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    pub start: f64,
    pub end: f64,
    #[serde(default = "d_dt")]
    pub dt: f64,
    /// Extra loading time after `end` for the network to empty.
    #[serde(default = "d_clearance")]
    pub clearance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalConfig {
    #[serde(default = "d_desired")]
    pub desired: f64,
    #[serde(default = "d_early")]
    pub early: f64,
    #[serde(default = "d_late")]
    pub late: f64,
}

impl Default for ArrivalConfig {
    fn default() -> Self {
        Self {
            desired: d_desired(),
            early: d_early(),
            late: d_late(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionKind {
    Emfac,
    Rose,
    KentMudford,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmissionConfig {
    #[serde(default = "d_kind")]
    pub model: EmissionKind,
    #[serde(default = "d_ber")]
    pub ber: f64,
    #[serde(default = "d_b1")]
    pub b1: f64,
    #[serde(default = "d_b2")]
    pub b2: f64,
    #[serde(default)]
    pub distance_unit: DistanceUnit,
}

impl Default for EmissionConfig {
    fn default() -> Self {
        Self {
            model: d_kind(),
            ber: d_ber(),
            b1: d_b1(),
            b2: d_b2(),
            distance_unit: DistanceUnit::Mile,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_max_iters")]
    pub max_iters: usize,
    #[serde(default = "d_residual_tol")]
    pub residual_tol: f64,
    #[serde(default = "d_audit_tol")]
    pub audit_tol: f64,
    #[serde(default = "d_max_violation")]
    pub max_violation: f64,
    #[serde(default = "d_max_halvings")]
    pub max_halvings: usize,
    /// Width (hours) of the initial uniform departure window.
    #[serde(default = "d_init_window")]
    pub init_window: f64,
    #[serde(default)]
    pub toll_at_departure: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::default(),
            alpha: d_alpha(),
            max_iters: d_max_iters(),
            residual_tol: d_residual_tol(),
            audit_tol: d_audit_tol(),
            max_violation: d_max_violation(),
            max_halvings: d_max_halvings(),
            init_window: d_init_window(),
            toll_at_departure: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TollConfig {
    #[serde(default = "d_toll_arcs")]
    pub arcs: Vec<u32>,
    #[serde(default = "d_upper")]
    pub upper_bound: f64,
    #[serde(default = "d_interval")]
    pub interval: f64,
    /// `[alpha, beta]`: weights of total travel cost and total emission.
    #[serde(default = "d_weights")]
    pub weights: [f64; 2],
    #[serde(default = "d_mode")]
    pub mode: OptimizeMode,
    #[serde(default = "d_m0")]
    pub penalty_m0: f64,
    #[serde(default = "d_growth")]
    pub penalty_growth: f64,
    #[serde(default = "d_rounds")]
    pub penalty_rounds: usize,
    /// Projected-gradient iterations per penalty round.
    #[serde(default = "d_inner")]
    pub inner_iters: usize,
    /// Initial step of the projected-gradient line search.
    #[serde(default = "d_step")]
    pub step: f64,
    #[serde(default = "d_backtracks")]
    pub max_backtracks: usize,
    /// Central-difference probe sizes for the h, Y and mu blocks.
    #[serde(default = "d_fd_h")]
    pub fd_step_flow: f64,
    #[serde(default = "d_fd_y")]
    pub fd_step_toll: f64,
    #[serde(default = "d_fd_mu")]
    pub fd_step_multiplier: f64,
}

impl Default for TollConfig {
    fn default() -> Self {
        Self {
            arcs: d_toll_arcs(),
            upper_bound: d_upper(),
            interval: d_interval(),
            weights: d_weights(),
            mode: d_mode(),
            penalty_m0: d_m0(),
            penalty_growth: d_growth(),
            penalty_rounds: d_rounds(),
            inner_iters: d_inner(),
            step: d_step(),
            max_backtracks: d_backtracks(),
            fd_step_flow: d_fd_h(),
            fd_step_toll: d_fd_y(),
            fd_step_multiplier: d_fd_mu(),
        }
    }
}

fn d_mile() -> String {
    "mile".into()
}
fn d_hour() -> String {
    "hour".into()
}
fn d_dt() -> f64 {
    0.05
}
fn d_clearance() -> f64 {
    3.0
}
fn d_desired() -> f64 {
    ArrivalPenalty::default().desired_arrival
}
fn d_early() -> f64 {
    ArrivalPenalty::default().early
}
fn d_late() -> f64 {
    ArrivalPenalty::default().late
}
fn d_kind() -> EmissionKind {
    EmissionKind::Emfac
}
fn d_ber() -> f64 {
    2.5
}
fn d_b1() -> f64 {
    -0.04
}
fn d_b2() -> f64 {
    0.001
}
fn d_max_violation() -> f64 {
    FixedPointParams::default().max_violation
}

fn d_alpha() -> f64 {
    FixedPointParams::default().alpha
}
fn d_max_iters() -> usize {
    FixedPointParams::default().max_iters
}
fn d_residual_tol() -> f64 {
    FixedPointParams::default().residual_tol
}
fn d_audit_tol() -> f64 {
    FixedPointParams::default().audit_tol
}
fn d_max_halvings() -> usize {
    FixedPointParams::default().max_halvings
}
fn d_init_window() -> f64 {
    1.0
}
fn d_toll_arcs() -> Vec<u32> {
    vec![1]
}
fn d_upper() -> f64 {
    10.0
}
fn d_interval() -> f64 {
    0.5
}
fn d_weights() -> [f64; 2] {
    [0.5, 0.5]
}
fn d_mode() -> OptimizeMode {
    OptimizeMode::default()
}
fn d_m0() -> f64 {
    PenaltySettings::default().m0
}
fn d_growth() -> f64 {
    PenaltySettings::default().growth
}
fn d_rounds() -> usize {
    PenaltySettings::default().rounds
}
fn d_inner() -> usize {
    PenaltySettings::default().inner_iters
}
fn d_step() -> f64 {
    PenaltySettings::default().step
}
fn d_backtracks() -> usize {
    PenaltySettings::default().max_backtracks
}
fn d_fd_h() -> f64 {
    PenaltySettings::default().fd_steps.flow
}
fn d_fd_y() -> f64 {
    PenaltySettings::default().fd_steps.toll
}
fn d_fd_mu() -> f64 {
    PenaltySettings::default().fd_steps.multiplier
}

/// A complete scenario with every default materialised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub units: Units,
    pub horizon: HorizonConfig,
    pub arcs: Vec<ArcSpec>,
    pub paths: Vec<PathSpec>,
    pub od: Vec<OdSpec>,
    #[serde(default)]
    pub arrival: ArrivalConfig,
    #[serde(default)]
    pub emission: EmissionConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub toll: TollConfig,
}

/// Validated scenario ready for solving.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: TrafficModel,
    pub fixed_point: FixedPointParams,
    pub toll: TollProblem,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ScenarioError::Parse(e.to_string()))?;
        for section in ["horizon", "arcs", "paths", "od"] {
            if !table.contains_key(section) {
                return Err(ScenarioError::MissingSection(section));
            }
        }
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serialises")
    }

    /// Normalised `(alpha, beta)`; sums within 1e-3 of one are treated as
    /// rounding.
    pub fn weights(&self) -> Result<Weights, ScenarioError> {
        let [alpha, beta] = self.toll.weights;
        Weights::normalized(alpha, beta).ok_or(ScenarioError::Weights { alpha, beta })
    }

    pub fn build(&self) -> Result<Scenario, ScenarioError> {
        check_unit("length", &self.units.length, "mile")?;
        check_unit("time", &self.units.time, "hour")?;
        let grid = TimeGrid::new(self.horizon.start, self.horizon.end, self.horizon.dt)
            .and_then(|g| g.with_clearance(self.horizon.clearance))
            .map_err(crate::Error::from)?;
        let net = Network::validate(&NetworkDescription {
            arcs: self.arcs.clone(),
            paths: self.paths.clone(),
            ods: self.od.clone(),
        })
        .map_err(crate::Error::from)?;
        let a = &self.arrival;
        if !(a.early >= 0.0 && a.late >= 0.0) {
            return Err(ScenarioError::Invalid {
                section: "arrival",
                message: "early and late penalties must be nonnegative".into(),
            });
        }
        let e = &self.emission;
        let emission = match e.model {
            EmissionKind::Emfac => {
                if e.distance_unit != DistanceUnit::Mile {
                    return Err(ScenarioError::Unit {
                        quantity: "emfac distance",
                        unit: format!("{:?}", e.distance_unit).to_lowercase(),
                        expected: "mile",
                    });
                }
                EmissionModel::emfac(e.ber, e.b1, e.b2)
            }
            EmissionKind::Rose => EmissionModel::rose(e.b1, e.b2, e.distance_unit),
            EmissionKind::KentMudford => EmissionModel::kent_mudford(e.b1, e.b2, e.distance_unit),
        };
        emission.validate().map_err(crate::Error::from)?;
        let s = &self.solver;
        if !(s.init_window > 0.0) {
            return Err(ScenarioError::Invalid {
                section: "solver",
                message: "init_window must be positive".into(),
            });
        }
        let model = TrafficModel {
            net,
            grid,
            penalty: ArrivalPenalty {
                desired_arrival: a.desired,
                early: a.early,
                late: a.late,
            },
            emission,
            toll_at_departure: s.toll_at_departure,
        };
        let fixed_point = FixedPointParams {
            scheme: s.scheme,
            alpha: s.alpha,
            max_iters: s.max_iters,
            residual_tol: s.residual_tol,
            audit_tol: s.audit_tol,
            max_violation: s.max_violation,
            max_halvings: s.max_halvings,
        };
        let t = &self.toll;
        let penalty = PenaltySettings {
            m0: t.penalty_m0,
            growth: t.penalty_growth,
            rounds: t.penalty_rounds,
            inner_iters: t.inner_iters,
            step: t.step,
            max_backtracks: t.max_backtracks,
            fd_steps: crate::toll_opt::FdSteps {
                flow: t.fd_step_flow,
                toll: t.fd_step_toll,
                multiplier: t.fd_step_multiplier,
            },
        };
        penalty.validate().map_err(|m| ScenarioError::Invalid {
            section: "toll",
            message: m.into(),
        })?;
        let toll = TollProblem {
            arcs: t.arcs.clone(),
            upper_bound: t.upper_bound,
            interval: t.interval,
            weights: self.weights()?,
            mode: t.mode,
            penalty,
            init_window: s.init_window,
        };
        toll.schedule(&model).map_err(crate::Error::from)?;
        Ok(Scenario {
            config: self.clone(),
            model,
            fixed_point,
            toll,
        })
    }
}

fn check_unit(quantity: &'static str, unit: &str, expected: &'static str) -> Result<(), ScenarioError> {
    let ok = match expected {
        "mile" => matches!(unit, "mile" | "miles" | "mi"),
        "hour" => matches!(unit, "hour" | "hours" | "h"),
        _ => unit == expected,
    };
    if ok {
        Ok(())
    } else {
        Err(ScenarioError::Unit {
            quantity,
            unit: unit.into(),
            expected,
        })
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        ScenarioConfig::parse(text)?.build()
    }

    /// Bundled scenarios by name (`case1`, `case2`).
    pub fn bundled(name: &str) -> Option<Self> {
        let text = match name {
            "case1" => CASE1,
            "case2" => CASE2,
            _ => return None,
        };
        Some(Self::parse(text).expect("bundled scenario is valid"))
    }

    /// Replaces the step size, keeping everything else.
    pub fn with_dt(&self, dt: f64) -> Result<Self, ScenarioError> {
        let mut cfg = self.config.clone();
        cfg.horizon.dt = dt;
        cfg.build()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_cases_parse() {
        let c1 = Scenario::bundled("case1").unwrap();
        assert_eq!(c1.model.net.arcs().len(), 6);
        assert_eq!(c1.model.net.paths().len(), 6);
        assert_eq!(c1.model.net.ods().len(), 2);
        assert_eq!(c1.model.net.nodes().len(), 5);
        let demands: Vec<f64> = c1.model.net.ods().iter().map(|o| o.demand).collect();
        assert_eq!(demands, vec![820.0, 410.0]);
        let lengths: Vec<f64> = c1.model.net.arcs().iter().map(|a| a.length).collect();
        assert_eq!(lengths, vec![10.0, 10.0, 10.0, 20.0, 20.0, 15.0]);
        assert!(c1.model.net.arcs().iter().all(|a| a.free_speed == 35.0 && a.jam_density == 400.0));
        assert_eq!(c1.toll.upper_bound, 10.0);
        assert_eq!(c1.model.grid.intervals(), 100);
        let c2 = Scenario::bundled("case2").unwrap();
        let demands: Vec<f64> = c2.model.net.ods().iter().map(|o| o.demand).collect();
        assert_eq!(demands, vec![1400.0, 700.0]);
        assert!(Scenario::bundled("case3").is_none());
    }

    #[test]
    fn missing_horizon_is_structured() {
        let text = CASE1.replace("[horizon]", "[horizon_typo]");
        assert!(matches!(
            ScenarioConfig::parse(&text),
            Err(ScenarioError::MissingSection("horizon"))
        ));
    }

    #[test]
    fn weights_must_sum_to_one() {
        let text = CASE1.replace("weights = [0.5, 0.5]", "weights = [0.6, 0.6]");
        assert!(matches!(
            Scenario::parse(&text),
            Err(ScenarioError::Weights { .. })
        ));
        let text = CASE1.replace("weights = [0.5, 0.5]", "weights = [0.0988, 0.9011]");
        let s = Scenario::parse(&text).unwrap();
        assert!((s.toll.weights.alpha + s.toll.weights.beta - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unit_mismatch_is_rejected() {
        let text = CASE1.replace("length = \"mile\"", "length = \"km\"");
        assert!(matches!(
            Scenario::parse(&text),
            Err(ScenarioError::Unit { quantity: "length", .. })
        ));
    }

    #[test]
    fn parse_errors_carry_location() {
        let text = CASE1.replace("dt = 0.05", "dt = \"fast\"");
        let err = ScenarioConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("dt"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn round_trip_materialises_defaults() {
        let cfg = ScenarioConfig::parse(CASE1).unwrap();
        let again = ScenarioConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
    }
}
