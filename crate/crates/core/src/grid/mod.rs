//! Static grid description, switchable topology and DC load flow.
//!
//! A grid is a set of substations joined by lines. Every substation has two
//! buses; each element connected to a substation (load, generator, storage,
//! either end of a line) is a *connection* and sits on one of the two buses.
//! Assigning connections of one substation to different buses splits it into
//! two electrical nodes.

mod flow;
mod graph;
mod topology;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use flow::{solve_dc_flow, FlowFailure, FlowSolution, Injections, BASE_MVA};
pub(crate) use graph::bus_without_line;
pub use graph::{build_node_graph, detect_islands, ElectricalNode, Island, NodeGraph};
pub use topology::{apply_topology_action, Bus, CooldownConfig, TopologyAction, TopologyState};

use crate::error::GridError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenKind {
    Thermal,
    Solar,
    Wind,
    Hydro,
    Nuclear,
}

impl GenKind {
    pub fn is_renewable(self) -> bool {
        matches!(self, GenKind::Solar | GenKind::Wind | GenKind::Hydro)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Substation {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Optional drawing coordinates for the operator UI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: usize,
    pub from_sub: usize,
    pub to_sub: usize,
    /// Series reactance in p.u. on [`BASE_MVA`].
    pub reactance: f64,
    /// Thermal limit in MW.
    pub thermal_limit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: usize,
    pub sub: usize,
    pub kind: GenKind,
    pub p_min: f64,
    pub p_max: f64,
    /// Maximum change of the output per step, MW.
    pub ramp_limit: f64,
    pub redispatchable: bool,
    pub curtailable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub id: usize,
    pub sub: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Storage {
    pub id: usize,
    pub sub: usize,
    pub energy_capacity: f64,
    pub max_charge: f64,
    pub max_discharge: f64,
}

/// One element end attached to a substation. The derived order (loads,
/// generators, storages, line origins, line extremities, each by id) is the
/// connection order inside a substation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Connection {
    Load(usize),
    Generator(usize),
    Storage(usize),
    LineOrigin(usize),
    LineExtremity(usize),
}

impl Connection {
    pub fn line(self) -> Option<usize> {
        match self {
            Connection::LineOrigin(l) | Connection::LineExtremity(l) => Some(l),
            _ => None,
        }
    }
}

impl fmt::Display for Connection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Connection::Load(i) => write!(f, "load {i}"),
            Connection::Generator(i) => write!(f, "gen {i}"),
            Connection::Storage(i) => write!(f, "storage {i}"),
            Connection::LineOrigin(i) => write!(f, "line {i} (origin)"),
            Connection::LineExtremity(i) => write!(f, "line {i} (extremity)"),
        }
    }
}

/// On-disk layout of a grid definition.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct GridFile {
    #[serde(default)]
    name: String,
    substations: Vec<Substation>,
    lines: Vec<Line>,
    generators: Vec<Generator>,
    loads: Vec<Load>,
    #[serde(default)]
    storages: Vec<Storage>,
    slack: usize,
}

/// Immutable grid description. Element ids are dense and equal to their
/// position in the respective list.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "GridFile", into = "GridFile")]
pub struct GridSpec {
    pub name: String,
    pub substations: Vec<Substation>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
    pub storages: Vec<Storage>,
    pub slack: usize,
    // derived
    conn_offsets: Vec<usize>,
    connections: Vec<Connection>,
    line_or_conn: Vec<usize>,
    line_ex_conn: Vec<usize>,
    gen_conn: Vec<usize>,
    load_conn: Vec<usize>,
    storage_conn: Vec<usize>,
}

impl PartialEq for GridSpec {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.substations == other.substations
            && self.lines == other.lines
            && self.generators == other.generators
            && self.loads == other.loads
            && self.storages == other.storages
            && self.slack == other.slack
    }
}

impl From<GridSpec> for GridFile {
    fn from(g: GridSpec) -> Self {
        GridFile { name: g.name, substations: g.substations, lines: g.lines, generators: g.generators, loads: g.loads, storages: g.storages, slack: g.slack }
    }
}

impl TryFrom<GridFile> for GridSpec {
    type Error = GridError;

    fn try_from(f: GridFile) -> Result<Self, Self::Error> {
        GridSpec::new(f.name, f.substations, f.lines, f.generators, f.loads, f.storages, f.slack)
    }
}

fn check_dense<T>(what: &str, items: &[T], id: impl Fn(&T) -> usize) -> Result<(), GridError> {
    for (pos, item) in items.iter().enumerate() {
        if id(item) != pos {
            return Err(GridError::InvalidSpec(format!("{what} ids must be dense and ordered: found id {} at position {pos}", id(item))));
        }
    }
    Ok(())
}

impl GridSpec {
    pub fn new(
        name: String,
        substations: Vec<Substation>,
        lines: Vec<Line>,
        generators: Vec<Generator>,
        loads: Vec<Load>,
        storages: Vec<Storage>,
        slack: usize,
    ) -> Result<Self, GridError> {
        check_dense("substation", &substations, |s| s.id)?;
        check_dense("line", &lines, |l| l.id)?;
        check_dense("generator", &generators, |g| g.id)?;
        check_dense("load", &loads, |l| l.id)?;
        check_dense("storage", &storages, |s| s.id)?;
        let n_sub = substations.len();
        if n_sub == 0 {
            return Err(GridError::InvalidSpec("grid has no substations".into()));
        }
        let bad_sub = |what: &str, id: usize, sub: usize| GridError::InvalidSpec(format!("{what} {id} references unknown substation {sub}"));
        for l in &lines {
            if l.from_sub >= n_sub {
                return Err(bad_sub("line", l.id, l.from_sub));
            }
            if l.to_sub >= n_sub {
                return Err(bad_sub("line", l.id, l.to_sub));
            }
            if l.from_sub == l.to_sub {
                return Err(GridError::InvalidSpec(format!("line {} is a self loop", l.id)));
            }
            if !(l.reactance > 0.0 && l.reactance.is_finite()) {
                return Err(GridError::InvalidSpec(format!("line {} reactance must be > 0", l.id)));
            }
            if !(l.thermal_limit > 0.0 && l.thermal_limit.is_finite()) {
                return Err(GridError::InvalidSpec(format!("line {} thermal limit must be > 0", l.id)));
            }
        }
        for g in &generators {
            if g.sub >= n_sub {
                return Err(bad_sub("generator", g.id, g.sub));
            }
            let renewable = g.kind.is_renewable();
            if g.curtailable != renewable || g.redispatchable == renewable {
                return Err(GridError::InvalidSpec(format!(
                    "generator {}: renewables must be curtailable and not redispatchable, \
                     thermal and nuclear the reverse",
                    g.id
                )));
            }
            if !(g.p_min >= 0.0 && g.p_min <= g.p_max && g.ramp_limit >= 0.0) {
                return Err(GridError::InvalidSpec(format!("generator {} has invalid limits", g.id)));
            }
        }
        for l in &loads {
            if l.sub >= n_sub {
                return Err(bad_sub("load", l.id, l.sub));
            }
        }
        for s in &storages {
            if s.sub >= n_sub {
                return Err(bad_sub("storage", s.id, s.sub));
            }
            if !(s.energy_capacity >= 0.0 && s.max_charge >= 0.0 && s.max_discharge >= 0.0) {
                return Err(GridError::InvalidSpec(format!("storage {} has invalid limits", s.id)));
            }
        }
        if slack >= generators.len() {
            return Err(GridError::InvalidSpec(format!("slack generator {slack} does not exist")));
        }
        if generators[slack].kind.is_renewable() {
            return Err(GridError::InvalidSpec("slack generator must be dispatchable".into()));
        }

        let mut per_sub: Vec<Vec<Connection>> = vec![Vec::new(); n_sub];
        for l in &loads {
            per_sub[l.sub].push(Connection::Load(l.id));
        }
        for g in &generators {
            per_sub[g.sub].push(Connection::Generator(g.id));
        }
        for s in &storages {
            per_sub[s.sub].push(Connection::Storage(s.id));
        }
        for l in &lines {
            per_sub[l.from_sub].push(Connection::LineOrigin(l.id));
            per_sub[l.to_sub].push(Connection::LineExtremity(l.id));
        }
        let mut conn_offsets = Vec::with_capacity(n_sub + 1);
        let mut connections = Vec::new();
        for conns in &mut per_sub {
            conns.sort();
            conn_offsets.push(connections.len());
            connections.extend_from_slice(conns);
        }
        conn_offsets.push(connections.len());

        let mut line_or_conn = vec![0; lines.len()];
        let mut line_ex_conn = vec![0; lines.len()];
        let mut gen_conn = vec![0; generators.len()];
        let mut load_conn = vec![0; loads.len()];
        let mut storage_conn = vec![0; storages.len()];
        for (i, c) in connections.iter().enumerate() {
            match *c {
                Connection::Load(id) => load_conn[id] = i,
                Connection::Generator(id) => gen_conn[id] = i,
                Connection::Storage(id) => storage_conn[id] = i,
                Connection::LineOrigin(id) => line_or_conn[id] = i,
                Connection::LineExtremity(id) => line_ex_conn[id] = i,
            }
        }

        Ok(GridSpec {
            name,
            substations,
            lines,
            generators,
            loads,
            storages,
            slack,
            conn_offsets,
            connections,
            line_or_conn,
            line_ex_conn,
            gen_conn,
            load_conn,
            storage_conn,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self, GridError> {
        serde_json::from_str(s).map_err(|e| GridError::InvalidSpec(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GridError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GridError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("grid spec serializes")
    }

    pub fn n_substations(&self) -> usize {
        self.substations.len()
    }

    /// Total number of connections over all substations.
    pub fn n_connections(&self) -> usize {
        self.connections.len()
    }

    /// Connections of one substation in canonical order.
    pub fn connections(&self, sub: usize) -> &[Connection] {
        &self.connections[self.conn_offsets[sub]..self.conn_offsets[sub + 1]]
    }

    /// Global index range of a substation's connections.
    pub fn connection_range(&self, sub: usize) -> std::ops::Range<usize> {
        self.conn_offsets[sub]..self.conn_offsets[sub + 1]
    }

    pub fn connection_sub(&self, conn: usize) -> usize {
        // offsets are sorted, partition_point finds the owning substation
        self.conn_offsets.partition_point(|&o| o <= conn) - 1
    }

    pub fn line_origin_conn(&self, line: usize) -> usize {
        self.line_or_conn[line]
    }

    pub fn line_extremity_conn(&self, line: usize) -> usize {
        self.line_ex_conn[line]
    }

    pub fn gen_conn(&self, gen: usize) -> usize {
        self.gen_conn[gen]
    }

    pub fn load_conn(&self, load: usize) -> usize {
        self.load_conn[load]
    }

    pub fn storage_conn(&self, storage: usize) -> usize {
        self.storage_conn[storage]
    }

    /// Redispatchable generators other than the slack, ascending id. This is
    /// the coordinate order of redispatch vectors.
    pub fn redispatchable(&self) -> Vec<usize> {
        self.generators.iter().filter(|g| g.redispatchable && g.id != self.slack).map(|g| g.id).collect()
    }

    /// Curtailable generators, ascending id. Coordinate order of curtailment
    /// vectors.
    pub fn curtailable(&self) -> Vec<usize> {
        self.generators.iter().filter(|g| g.curtailable).map(|g| g.id).collect()
    }

    /// Lines attached to a substation.
    pub fn lines_at(&self, sub: usize) -> impl Iterator<Item = usize> + '_ {
        self.connections(sub).iter().filter_map(|c| c.line())
    }
}

#[cfg(test)]
pub(crate) mod testgrids {
    use super::*;

    pub fn line(id: usize, from: usize, to: usize, x: f64, limit: f64) -> Line {
        Line { id, from_sub: from, to_sub: to, reactance: x, thermal_limit: limit }
    }

    pub fn thermal(id: usize, sub: usize, p_max: f64) -> Generator {
        Generator { id, sub, kind: GenKind::Thermal, p_min: 0.0, p_max, ramp_limit: p_max, redispatchable: true, curtailable: false }
    }

    pub fn subs(n: usize) -> Vec<Substation> {
        (0..n).map(|id| Substation { id, name: None, position: None }).collect()
    }

    /// Triangle A-B-C with equal reactances, generator at A, load at C.
    pub fn triangle() -> GridSpec {
        GridSpec::new(
            "triangle".into(),
            subs(3),
            vec![line(0, 0, 1, 0.1, 100.0), line(1, 1, 2, 0.1, 100.0), line(2, 0, 2, 0.1, 100.0)],
            vec![thermal(0, 0, 200.0)],
            vec![Load { id: 0, sub: 2 }],
            vec![],
            0,
        )
        .unwrap()
    }

    /// Five substation ring with one chord, two generators and three loads.
    pub fn ring5() -> GridSpec {
        GridSpec::new(
            "ring5".into(),
            subs(5),
            vec![
                line(0, 0, 1, 0.1, 150.0),
                line(1, 1, 2, 0.1, 150.0),
                line(2, 2, 3, 0.1, 150.0),
                line(3, 3, 4, 0.1, 150.0),
                line(4, 4, 0, 0.1, 150.0),
                line(5, 1, 3, 0.2, 150.0),
            ],
            vec![thermal(0, 0, 300.0), thermal(1, 2, 100.0)],
            vec![Load { id: 0, sub: 1 }, Load { id: 1, sub: 3 }, Load { id: 2, sub: 4 }],
            vec![],
            0,
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::testgrids::*;
    use super::*;

    #[test]
    fn connections_are_ordered_by_kind_then_id() {
        let g = ring5();
        assert_eq!(g.connections(1), &[Connection::Load(0), Connection::LineOrigin(1), Connection::LineOrigin(5), Connection::LineExtremity(0)]);
        assert_eq!(g.connection_sub(g.line_origin_conn(5)), 1);
        assert_eq!(g.connection_sub(g.line_extremity_conn(4)), 0);
        assert_eq!(g.n_connections(), 2 * 6 + 2 + 3);
    }

    #[test]
    fn rejects_unknown_substation() {
        let err = GridSpec::new("x".into(), subs(2), vec![line(0, 0, 5, 0.1, 10.0)], vec![thermal(0, 0, 10.0)], vec![], vec![], 0).unwrap_err();
        assert!(matches!(err, GridError::InvalidSpec(_)));
    }

    #[test]
    fn rejects_nonpositive_reactance_and_limit() {
        for (x, lim) in [(0.0, 10.0), (-1.0, 10.0), (0.1, 0.0)] {
            let r = GridSpec::new("x".into(), subs(2), vec![line(0, 0, 1, x, lim)], vec![thermal(0, 0, 10.0)], vec![], vec![], 0);
            assert!(r.is_err(), "x={x} lim={lim}");
        }
    }

    #[test]
    fn rejects_inconsistent_generator_flags() {
        let mut solar = thermal(1, 1, 10.0);
        solar.kind = GenKind::Solar;
        let r = GridSpec::new("x".into(), subs(2), vec![line(0, 0, 1, 0.1, 10.0)], vec![thermal(0, 0, 10.0), solar], vec![], vec![], 0);
        assert!(r.is_err());
    }

    #[test]
    fn json_round_trip() {
        let g = ring5();
        let back = GridSpec::from_json_str(&g.to_json_string()).unwrap();
        assert_eq!(g, back);
        assert_eq!(back.connections(3), g.connections(3));
    }
}
