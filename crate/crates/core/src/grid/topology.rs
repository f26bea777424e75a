use serde::{Deserialize, Serialize};

use super::GridSpec;
use crate::error::{GridError, IllegalAction};

/// Bus inside a substation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Bus {
    One,
    Two,
}

impl Bus {
    pub fn index(self) -> usize {
        match self {
            Bus::One => 0,
            Bus::Two => 1,
        }
    }

    pub fn flipped(self) -> Bus {
        match self {
            Bus::One => Bus::Two,
            Bus::Two => Bus::One,
        }
    }
}

impl From<Bus> for u8 {
    fn from(b: Bus) -> u8 {
        match b {
            Bus::One => 1,
            Bus::Two => 2,
        }
    }
}

impl TryFrom<u8> for Bus {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Bus::One),
            2 => Ok(Bus::Two),
            other => Err(format!("bus must be 1 or 2, got {other}")),
        }
    }
}

/// Cooldown applied to a target after it was switched, in steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CooldownConfig {
    pub substation: u32,
    pub line: u32,
}

impl Default for CooldownConfig {
    fn default() -> Self {
        Self { substation: 3, line: 3 }
    }
}

/// Unitary topology action.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TopologyAction {
    NoOp,
    /// Full bus assignment for every connection of one substation.
    SetBus {
        substation: usize,
        buses: Vec<Bus>,
    },
    /// Connect or disconnect one line; a reconnected line keeps the bus
    /// assignment its ends had before.
    SetLine {
        line: usize,
        connected: bool,
    },
}

impl TopologyAction {
    pub fn is_noop(&self) -> bool {
        matches!(self, TopologyAction::NoOp)
    }

    pub fn substation(&self) -> Option<usize> {
        match self {
            TopologyAction::SetBus { substation, .. } => Some(*substation),
            _ => None,
        }
    }
}

/// Switchable state of the grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TopologyState {
    /// Bus of every connection, indexed by global connection index.
    pub bus: Vec<Bus>,
    pub line_connected: Vec<bool>,
    pub sub_cooldown: Vec<u32>,
    pub line_cooldown: Vec<u32>,
}

impl TopologyState {
    /// All connections on bus 1, every line in service, no cooldowns.
    pub fn default_for(spec: &GridSpec) -> Self {
        TopologyState {
            bus: vec![Bus::One; spec.n_connections()],
            line_connected: vec![true; spec.lines.len()],
            sub_cooldown: vec![0; spec.n_substations()],
            line_cooldown: vec![0; spec.lines.len()],
        }
    }

    pub fn buses_of<'a>(&'a self, spec: &GridSpec, sub: usize) -> &'a [Bus] {
        &self.bus[spec.connection_range(sub)]
    }

    /// True when the substation uses both buses among its connections.
    pub fn is_split(&self, spec: &GridSpec, sub: usize) -> bool {
        let buses = self.buses_of(spec, sub);
        buses.iter().any(|&b| b != buses[0])
    }

    pub fn check(&self, spec: &GridSpec) -> Result<(), GridError> {
        if self.bus.len() != spec.n_connections() {
            return Err(GridError::InconsistentTopology(format!("{} bus assignments for {} connections", self.bus.len(), spec.n_connections())));
        }
        if self.line_connected.len() != spec.lines.len() || self.line_cooldown.len() != spec.lines.len() {
            return Err(GridError::InconsistentTopology("line vector length mismatch".into()));
        }
        if self.sub_cooldown.len() != spec.n_substations() {
            return Err(GridError::InconsistentTopology("substation vector length mismatch".into()));
        }
        Ok(())
    }
}

/// Apply a unitary topology action, returning the new topology. The input is
/// never modified.
pub fn apply_topology_action(
    spec: &GridSpec,
    topo: &TopologyState,
    action: &TopologyAction,
    cooldown: &CooldownConfig,
) -> Result<TopologyState, IllegalAction> {
    match action {
        TopologyAction::NoOp => Ok(topo.clone()),
        TopologyAction::SetBus { substation, buses } => {
            let sub = *substation;
            if sub >= spec.n_substations() {
                return Err(IllegalAction::UnknownElement(format!("substation {sub}")));
            }
            let range = spec.connection_range(sub);
            if buses.len() != range.len() {
                return Err(IllegalAction::Malformed(format!("substation {sub} has {} connections, action assigns {}", range.len(), buses.len())));
            }
            if topo.sub_cooldown[sub] > 0 {
                return Err(IllegalAction::Cooldown(format!("substation {sub} ({} steps left)", topo.sub_cooldown[sub])));
            }
            let mut next = topo.clone();
            next.bus[range].copy_from_slice(buses);
            next.sub_cooldown[sub] = cooldown.substation;
            Ok(next)
        }
        TopologyAction::SetLine { line, connected } => {
            let l = *line;
            if l >= spec.lines.len() {
                return Err(IllegalAction::UnknownElement(format!("line {l}")));
            }
            if topo.line_cooldown[l] > 0 {
                return Err(IllegalAction::Cooldown(format!("line {l} ({} steps left)", topo.line_cooldown[l])));
            }
            let mut next = topo.clone();
            next.line_connected[l] = *connected;
            next.line_cooldown[l] = cooldown.line;
            Ok(next)
        }
    }
}
