//! Road network, path sets and OD demand.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fd::FundamentalDiagram;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("arc {0} appears more than once")]
    DuplicateArc(u32),
    #[error("arc {id}: {field} must be positive and finite, got {value}")]
    BadArcAttribute {
        id: u32,
        field: &'static str,
        value: f64,
    },
    #[error("path {0} appears more than once")]
    DuplicatePath(String),
    #[error("path {0} has no arcs")]
    EmptyPath(String),
    #[error("path {path} references unknown arc {arc}")]
    DanglingArc { path: String, arc: u32 },
    #[error("path {path} is disconnected: arc {from} ends at node {head} but arc {to} starts at node {tail}")]
    Disconnected {
        path: String,
        from: u32,
        to: u32,
        head: u32,
        tail: u32,
    },
    #[error("OD {0} appears more than once")]
    DuplicateOd(String),
    #[error("OD {od} has negative demand {demand}")]
    NegativeDemand { od: String, demand: f64 },
    #[error("OD {0} has an empty path set")]
    EmptyPathSet(String),
    #[error("OD {od} references unknown path {path}")]
    UnknownPath { od: String, path: String },
    #[error("path {path} does not join origin {origin} to destination {destination} of OD {od}")]
    WrongEndpoints {
        od: String,
        path: String,
        origin: u32,
        destination: u32,
    },
    #[error("path {0} is claimed by more than one OD pair")]
    SharedPath(String),
    #[error("path {0} is not assigned to any OD pair")]
    OrphanPath(String),
    #[error("arc sequence along paths contains a cycle; loading order is undefined")]
    CyclicArcOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcSpec {
    pub id: u32,
    pub from: u32,
    pub to: u32,
    /// miles
    pub length: f64,
    /// miles per hour
    pub free_speed: f64,
    /// vehicles per mile
    pub jam_density: f64,
}

impl ArcSpec {
    pub fn fd(&self) -> FundamentalDiagram {
        FundamentalDiagram::new(self.free_speed, self.jam_density)
    }

    pub fn free_flow_time(&self) -> f64 {
        self.length / self.free_speed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub id: String,
    pub arcs: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdSpec {
    pub id: String,
    pub origin: u32,
    pub destination: u32,
    /// vehicles over the whole horizon
    pub demand: f64,
    pub paths: Vec<String>,
}

/// Unvalidated network as read from a scenario.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetworkDescription {
    pub arcs: Vec<ArcSpec>,
    pub paths: Vec<PathSpec>,
    pub ods: Vec<OdSpec>,
}

/// A path resolved to arc indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub id: String,
    pub arcs: Vec<usize>,
    pub od: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdPair {
    pub id: String,
    pub origin: u32,
    pub destination: u32,
    pub demand: f64,
    pub paths: Vec<usize>,
}

/// Validated network. Indices into `arcs`, `paths` and `ods` are stable and
/// used throughout the solver.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arcs: Vec<ArcSpec>,
    nodes: Vec<u32>,
    paths: Vec<Path>,
    ods: Vec<OdPair>,
    arc_order: Vec<usize>,
    arc_users: Vec<Vec<(usize, usize)>>,
}

impl Network {
    pub fn validate(desc: &NetworkDescription) -> Result<Self, NetworkError> {
        let mut arc_index = HashMap::new();
        for (i, a) in desc.arcs.iter().enumerate() {
            if arc_index.insert(a.id, i).is_some() {
                return Err(NetworkError::DuplicateArc(a.id));
            }
            for (field, value) in [
                ("length", a.length),
                ("free_speed", a.free_speed),
                ("jam_density", a.jam_density),
            ] {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(NetworkError::BadArcAttribute {
                        id: a.id,
                        field,
                        value,
                    });
                }
            }
        }
        let nodes: Vec<u32> = {
            let mut set: Vec<u32> = desc.arcs.iter().flat_map(|a| [a.from, a.to]).collect();
            set.sort_unstable();
            set.dedup();
            set
        };

        let mut path_index = HashMap::new();
        let mut resolved: Vec<Vec<usize>> = Vec::with_capacity(desc.paths.len());
        for (i, p) in desc.paths.iter().enumerate() {
            if path_index.insert(p.id.clone(), i).is_some() {
                return Err(NetworkError::DuplicatePath(p.id.clone()));
            }
            if p.arcs.is_empty() {
                return Err(NetworkError::EmptyPath(p.id.clone()));
            }
            let mut idx = Vec::with_capacity(p.arcs.len());
            for &a in &p.arcs {
                let &ai = arc_index.get(&a).ok_or_else(|| NetworkError::DanglingArc {
                    path: p.id.clone(),
                    arc: a,
                })?;
                idx.push(ai);
            }
            for w in idx.windows(2) {
                let (up, down) = (&desc.arcs[w[0]], &desc.arcs[w[1]]);
                if up.to != down.from {
                    return Err(NetworkError::Disconnected {
                        path: p.id.clone(),
                        from: up.id,
                        to: down.id,
                        head: up.to,
                        tail: down.from,
                    });
                }
            }
            resolved.push(idx);
        }

        let mut od_of_path: Vec<Option<usize>> = vec![None; desc.paths.len()];
        let mut ods = Vec::with_capacity(desc.ods.len());
        let mut seen_od = HashSet::new();
        for (oi, od) in desc.ods.iter().enumerate() {
            if !seen_od.insert(od.id.clone()) {
                return Err(NetworkError::DuplicateOd(od.id.clone()));
            }
            if !(od.demand >= 0.0) || !od.demand.is_finite() {
                return Err(NetworkError::NegativeDemand {
                    od: od.id.clone(),
                    demand: od.demand,
                });
            }
            if od.paths.is_empty() {
                return Err(NetworkError::EmptyPathSet(od.id.clone()));
            }
            let mut paths = Vec::with_capacity(od.paths.len());
            for pid in &od.paths {
                let &pi = path_index.get(pid).ok_or_else(|| NetworkError::UnknownPath {
                    od: od.id.clone(),
                    path: pid.clone(),
                })?;
                let arcs = &resolved[pi];
                let first = &desc.arcs[arcs[0]];
                let last = &desc.arcs[*arcs.last().unwrap()];
                if first.from != od.origin || last.to != od.destination {
                    return Err(NetworkError::WrongEndpoints {
                        od: od.id.clone(),
                        path: pid.clone(),
                        origin: od.origin,
                        destination: od.destination,
                    });
                }
                if od_of_path[pi].replace(oi).is_some() {
                    return Err(NetworkError::SharedPath(pid.clone()));
                }
                paths.push(pi);
            }
            ods.push(OdPair {
                id: od.id.clone(),
                origin: od.origin,
                destination: od.destination,
                demand: od.demand,
                paths,
            });
        }

        let mut paths = Vec::with_capacity(desc.paths.len());
        for (i, p) in desc.paths.iter().enumerate() {
            let od = od_of_path[i].ok_or_else(|| NetworkError::OrphanPath(p.id.clone()))?;
            paths.push(Path {
                id: p.id.clone(),
                arcs: resolved[i].clone(),
                od,
            });
        }

        let mut arc_users = vec![Vec::new(); desc.arcs.len()];
        for (pi, p) in paths.iter().enumerate() {
            for (pos, &a) in p.arcs.iter().enumerate() {
                arc_users[a].push((pi, pos));
            }
        }
        let arc_order = topological_arc_order(desc.arcs.len(), &paths)?;

        Ok(Self {
            arcs: desc.arcs.clone(),
            nodes,
            paths,
            ods,
            arc_order,
            arc_users,
        })
    }

    pub fn arcs(&self) -> &[ArcSpec] {
        &self.arcs
    }

    pub fn nodes(&self) -> &[u32] {
        &self.nodes
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn ods(&self) -> &[OdPair] {
        &self.ods
    }

    pub fn arc_index(&self, id: u32) -> Option<usize> {
        self.arcs.iter().position(|a| a.id == id)
    }

    pub fn path_index(&self, id: &str) -> Option<usize> {
        self.paths.iter().position(|p| p.id == id)
    }

    /// Arcs ordered so that every arc comes after all arcs that feed it
    /// along some path.
    pub fn arc_order(&self) -> &[usize] {
        &self.arc_order
    }

    /// `(path, position)` pairs of every path using arc `a`.
    pub fn arc_users(&self, a: usize) -> &[(usize, usize)] {
        &self.arc_users[a]
    }

    /// Path-arc incidence `delta_{a,p}`.
    pub fn uses(&self, path: usize, arc: usize) -> bool {
        self.paths[path].arcs.contains(&arc)
    }

    pub fn free_flow_time(&self, path: usize) -> f64 {
        self.paths[path]
            .arcs
            .iter()
            .map(|&a| self.arcs[a].free_flow_time())
            .sum()
    }

    pub fn path_length(&self, path: usize) -> f64 {
        self.paths[path]
            .arcs
            .iter()
            .map(|&a| self.arcs[a].length)
            .sum()
    }

    /// Returns a copy with OD demands replaced, in OD order.
    pub fn with_demands(&self, demands: &[f64]) -> Self {
        let mut net = self.clone();
        for (od, &q) in net.ods.iter_mut().zip(demands) {
            od.demand = q;
        }
        net
    }
}

fn topological_arc_order(n_arcs: usize, paths: &[Path]) -> Result<Vec<usize>, NetworkError> {
    let mut succ: Vec<HashSet<usize>> = vec![HashSet::new(); n_arcs];
    for p in paths {
        for w in p.arcs.windows(2) {
            succ[w[0]].insert(w[1]);
        }
    }
    let mut indeg = vec![0usize; n_arcs];
    for s in &succ {
        for &b in s {
            indeg[b] += 1;
        }
    }
    let mut ready: Vec<usize> = (0..n_arcs).filter(|&a| indeg[a] == 0).collect();
    ready.reverse();
    let mut order = Vec::with_capacity(n_arcs);
    while let Some(a) = ready.pop() {
        order.push(a);
        let mut next: Vec<usize> = succ[a].iter().copied().collect();
        next.sort_unstable_by(|x, y| y.cmp(x));
        for b in next {
            indeg[b] -= 1;
            if indeg[b] == 0 {
                ready.push(b);
            }
        }
    }
    if order.len() != n_arcs {
        return Err(NetworkError::CyclicArcOrder);
    }
    Ok(order)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn arc(id: u32, from: u32, to: u32, length: f64) -> ArcSpec {
        ArcSpec {
            id,
            from,
            to,
            length,
            free_speed: 35.0,
            jam_density: 400.0,
        }
    }

    fn path(id: &str, arcs: &[u32]) -> PathSpec {
        PathSpec {
            id: id.into(),
            arcs: arcs.to_vec(),
        }
    }

    pub(crate) fn toy() -> NetworkDescription {
        NetworkDescription {
            arcs: vec![
                arc(1, 1, 4, 10.0),
                arc(2, 4, 2, 10.0),
                arc(3, 1, 2, 10.0),
                arc(4, 2, 5, 20.0),
                arc(5, 5, 3, 20.0),
                arc(6, 2, 3, 15.0),
            ],
            paths: vec![
                path("p1", &[3, 6]),
                path("p2", &[1, 2, 6]),
                path("p3", &[1, 2, 4, 5]),
                path("p4", &[3, 4, 5]),
                path("p5", &[6]),
                path("p6", &[4, 5]),
            ],
            ods: vec![
                OdSpec {
                    id: "1-3".into(),
                    origin: 1,
                    destination: 3,
                    demand: 820.0,
                    paths: ["p1", "p2", "p3", "p4"].map(String::from).to_vec(),
                },
                OdSpec {
                    id: "2-3".into(),
                    origin: 2,
                    destination: 3,
                    demand: 410.0,
                    paths: ["p5", "p6"].map(String::from).to_vec(),
                },
            ],
        }
    }

    #[test]
    fn toy_network_validates() {
        let net = Network::validate(&toy()).unwrap();
        assert_eq!(net.arcs().len(), 6);
        assert_eq!(net.nodes().len(), 5);
        assert_eq!(net.paths().len(), 6);
        assert_eq!(net.ods().len(), 2);
        assert!(net.uses(1, 0));
        assert!(!net.uses(0, 0));
        assert!((net.free_flow_time(4) - 15.0 / 35.0).abs() < 1e-12);
        assert!((net.path_length(2) - 60.0).abs() < 1e-12);
        let order = net.arc_order();
        let pos = |a: usize| order.iter().position(|&x| x == a).unwrap();
        for p in net.paths() {
            for w in p.arcs.windows(2) {
                assert!(pos(w[0]) < pos(w[1]));
            }
        }
    }

    #[test]
    fn disconnected_path_is_rejected() {
        let mut d = toy();
        // arc 2 ends at node 2; make it end elsewhere so {1,2,6} breaks.
        d.arcs[1].to = 5;
        assert!(matches!(
            Network::validate(&d),
            Err(NetworkError::Disconnected { from: 2, to: 6, .. })
        ));
    }

    #[test]
    fn negative_demand_is_rejected() {
        let mut d = toy();
        d.ods[0].demand = -1.0;
        assert!(matches!(
            Network::validate(&d),
            Err(NetworkError::NegativeDemand { .. })
        ));
    }

    #[test]
    fn dangling_and_empty_sets() {
        let mut d = toy();
        d.paths[0].arcs = vec![3, 9];
        assert!(matches!(
            Network::validate(&d),
            Err(NetworkError::DanglingArc { arc: 9, .. })
        ));
        let mut d = toy();
        d.ods[1].paths.clear();
        assert!(matches!(
            Network::validate(&d),
            Err(NetworkError::EmptyPathSet(_))
        ));
        let mut d = toy();
        d.ods[1].paths.push("p1".into());
        assert!(matches!(
            Network::validate(&d),
            Err(NetworkError::WrongEndpoints { .. })
        ));
    }

    #[test]
    fn cyclic_arc_order_is_rejected() {
        let d = NetworkDescription {
            arcs: vec![arc(1, 1, 2, 1.0), arc(2, 2, 1, 1.0)],
            paths: vec![path("a", &[1, 2]), path("b", &[2, 1])],
            ods: vec![
                OdSpec {
                    id: "x".into(),
                    origin: 1,
                    destination: 1,
                    demand: 1.0,
                    paths: vec!["a".into()],
                },
                OdSpec {
                    id: "y".into(),
                    origin: 2,
                    destination: 2,
                    demand: 1.0,
                    paths: vec!["b".into()],
                },
            ],
        };
        assert_eq!(
            Network::validate(&d).unwrap_err(),
            NetworkError::CyclicArcOrder
        );
    }
}
