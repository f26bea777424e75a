//! Unitary topology action catalog, legality masks, recovery actions and the
//! frequency-based reduction of the catalog.

mod reduce;

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{Episode, LineState, Observation, OfflineReason};
use crate::error::ArtifactError;
use crate::grid::{bus_without_line, Bus, GridSpec, TopologyAction};

pub use reduce::{greedy_best, reduce_actions, ReduceConfig, ReducedActionSet};

pub const CATALOG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CatalogOptions {
    /// Drop bus assignments that leave an element on a bus without any line.
    pub fatal_filter: bool,
}

impl Default for CatalogOptions {
    fn default() -> Self {
        Self { fatal_filter: true }
    }
}

/// Every unitary topology action of a grid with dense ids. Id 0 is the no-op.
#[derive(Clone, Debug)]
pub struct ActionCatalog {
    grid: String,
    actions: Vec<TopologyAction>,
    index: HashMap<TopologyAction, usize>,
    ranges: Vec<Range<usize>>,
    reset: Vec<Option<usize>>,
    line_ids: Vec<[usize; 2]>,
}

#[derive(Serialize, Deserialize)]
struct CatalogFile {
    version: u32,
    grid: String,
    actions: Vec<CatalogEntry>,
}

#[derive(Serialize, Deserialize)]
struct CatalogEntry {
    id: usize,
    action: TopologyAction,
    description: String,
}

/// Relabel buses so the first connection sits on bus 1.
pub fn canonicalize(action: &TopologyAction) -> TopologyAction {
    match action {
        TopologyAction::SetBus { substation, buses } if buses.first() == Some(&Bus::Two) => {
            TopologyAction::SetBus { substation: *substation, buses: buses.iter().map(|b| b.flipped()).collect() }
        }
        a => a.clone(),
    }
}

fn canonical_buses(buses: &[Bus]) -> Vec<Bus> {
    match buses.first() {
        Some(Bus::Two) => buses.iter().map(|b| b.flipped()).collect(),
        _ => buses.to_vec(),
    }
}

/// Build the catalog: the no-op, then per substation every canonical bus
/// assignment, then a disconnect and a reconnect action per line.
pub fn enumerate_unitary_actions(spec: &GridSpec, opts: CatalogOptions) -> ActionCatalog {
    let mut actions = vec![TopologyAction::NoOp];
    for sub in 0..spec.n_substations() {
        let conns = spec.connections(sub);
        let c = conns.len();
        if c == 0 {
            continue;
        }
        for mask in 0u64..(1u64 << (c - 1)) {
            let buses: Vec<Bus> = (0..c).map(|i| if i > 0 && mask >> (i - 1) & 1 == 1 { Bus::Two } else { Bus::One }).collect();
            if opts.fatal_filter && mask != 0 && bus_without_line(conns, &buses) {
                continue;
            }
            actions.push(TopologyAction::SetBus { substation: sub, buses });
        }
    }
    for l in 0..spec.lines.len() {
        actions.push(TopologyAction::SetLine { line: l, connected: false });
        actions.push(TopologyAction::SetLine { line: l, connected: true });
    }
    ActionCatalog::build(spec, actions).expect("enumeration yields canonical unique actions")
}

/// Size of the unfiltered catalog: Σ_s 2^(c_s − 1) + 2·lines + 1.
pub fn unfiltered_catalog_size(spec: &GridSpec) -> u64 {
    let subs: u64 = (0..spec.n_substations()).map(|s| spec.connections(s).len()).filter(|&c| c > 0).map(|c| 1u64 << (c - 1)).sum();
    subs + 2 * spec.lines.len() as u64 + 1
}

impl ActionCatalog {
    fn build(spec: &GridSpec, actions: Vec<TopologyAction>) -> Result<Self, String> {
        if actions.first() != Some(&TopologyAction::NoOp) {
            return Err("id 0 must be the no-op".into());
        }
        let ranges: Vec<Range<usize>> = (0..spec.n_substations()).map(|s| spec.connection_range(s)).collect();
        let mut index = HashMap::with_capacity(actions.len());
        let mut reset = vec![None; spec.n_substations()];
        let mut line_ids = vec![[usize::MAX; 2]; spec.lines.len()];
        for (id, a) in actions.iter().enumerate() {
            if canonicalize(a) != *a {
                return Err(format!("action {id} is not canonical"));
            }
            match a {
                TopologyAction::NoOp if id != 0 => return Err(format!("duplicate no-op at {id}")),
                TopologyAction::SetBus { substation, buses } => {
                    let r = ranges.get(*substation).ok_or_else(|| format!("action {id}: unknown substation"))?;
                    if buses.len() != r.len() {
                        return Err(format!("action {id}: wrong bus vector length"));
                    }
                    if buses.iter().all(|&b| b == Bus::One) {
                        reset[*substation] = Some(id);
                    }
                }
                TopologyAction::SetLine { line, connected } => {
                    let slot = line_ids.get_mut(*line).ok_or_else(|| format!("action {id}: unknown line"))?;
                    slot[usize::from(*connected)] = id;
                }
                TopologyAction::NoOp => {}
            }
            if index.insert(a.clone(), id).is_some() {
                return Err(format!("duplicate action at {id}"));
            }
        }
        Ok(ActionCatalog { grid: spec.name.clone(), actions, index, ranges, reset, line_ids })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&TopologyAction> {
        self.actions.get(id)
    }

    pub fn action(&self, id: usize) -> &TopologyAction {
        &self.actions[id]
    }

    pub fn actions(&self) -> &[TopologyAction] {
        &self.actions
    }

    /// Id of an action, after bus relabeling.
    pub fn id_of(&self, action: &TopologyAction) -> Option<usize> {
        self.index.get(&canonicalize(action)).copied()
    }

    /// The action putting every connection of `sub` back on bus 1.
    pub fn reset_action(&self, sub: usize) -> Option<usize> {
        self.reset.get(sub).copied().flatten()
    }

    pub fn line_action(&self, line: usize, connected: bool) -> Option<usize> {
        self.line_ids.get(line).map(|s| s[usize::from(connected)]).filter(|&id| id != usize::MAX)
    }

    pub fn is_legal(&self, obs: &Observation, id: usize) -> bool {
        match &self.actions[id] {
            TopologyAction::NoOp => true,
            TopologyAction::SetBus { substation, buses } => {
                let s = *substation;
                obs.topology.sub_cooldown[s] == 0 && canonical_buses(&obs.topology.bus[self.ranges[s].clone()]) != *buses
            }
            TopologyAction::SetLine { line, connected: false } => obs.topology.line_connected[*line] && obs.topology.line_cooldown[*line] == 0,
            TopologyAction::SetLine { line, connected: true } => {
                let l = *line;
                let blocked =
                    matches!(obs.line_state[l], LineState::Offline(OfflineReason::Attack | OfflineReason::Maintenance)) && obs.t + 1 < obs.unavailable_until[l];
                !obs.topology.line_connected[l] && obs.topology.line_cooldown[l] == 0 && !blocked
            }
        }
    }

    /// One flag per catalog action: legal and actually changing something.
    pub fn legal_mask(&self, obs: &Observation) -> Vec<bool> {
        (0..self.actions.len()).map(|id| self.is_legal(obs, id)).collect()
    }

    /// Legal actions moving back toward the default topology. Substation
    /// resets come first by descending substation id, then line reconnects
    /// by descending line id.
    pub fn recovery_actions(&self, obs: &Observation) -> Vec<usize> {
        let mut out = Vec::new();
        for s in (0..self.ranges.len()).rev() {
            let buses = &obs.topology.bus[self.ranges[s].clone()];
            if buses.iter().any(|&b| b != buses[0]) {
                if let Some(id) = self.reset_action(s).filter(|&id| self.is_legal(obs, id)) {
                    out.push(id);
                }
            }
        }
        for l in (0..self.line_ids.len()).rev() {
            if !obs.topology.line_connected[l] {
                if let Some(id) = self.line_action(l, true).filter(|&id| self.is_legal(obs, id)) {
                    out.push(id);
                }
            }
        }
        out
    }

    /// Short operator-facing description of an action.
    pub fn describe(&self, spec: &GridSpec, id: usize) -> String {
        describe_action(spec, &self.actions[id])
    }

    pub fn to_json_string(&self, spec: &GridSpec) -> String {
        let file = CatalogFile {
            version: CATALOG_VERSION,
            grid: self.grid.clone(),
            actions: self.actions.iter().enumerate().map(|(id, a)| CatalogEntry { id, action: a.clone(), description: describe_action(spec, a) }).collect(),
        };
        serde_json::to_string_pretty(&file).expect("catalog serializes")
    }

    pub fn from_json_str(spec: &GridSpec, s: &str) -> Result<Self, ArtifactError> {
        let file: CatalogFile = serde_json::from_str(s).map_err(|e| ArtifactError::malformed("catalog", e))?;
        if file.version != CATALOG_VERSION {
            return Err(ArtifactError::malformed("catalog", format!("unsupported version {}", file.version)));
        }
        if file.grid != spec.name {
            return Err(ArtifactError::malformed("catalog", format!("built for grid {}, not {}", file.grid, spec.name)));
        }
        if file.actions.iter().enumerate().any(|(i, e)| e.id != i) {
            return Err(ArtifactError::malformed("catalog", "ids are not dense"));
        }
        Self::build(spec, file.actions.into_iter().map(|e| e.action).collect()).map_err(|e| ArtifactError::malformed("catalog", e))
    }

    pub fn save(&self, spec: &GridSpec, path: impl AsRef<Path>) -> Result<(), ArtifactError> {
        std::fs::write(path.as_ref(), self.to_json_string(spec)).map_err(|e| ArtifactError::io(path, e))
    }

    pub fn load(spec: &GridSpec, path: impl AsRef<Path>) -> Result<Self, ArtifactError> {
        let s = std::fs::read_to_string(path.as_ref()).map_err(|e| ArtifactError::io(&path, e))?;
        Self::from_json_str(spec, &s)
    }
}

pub fn describe_action(spec: &GridSpec, action: &TopologyAction) -> String {
    match action {
        TopologyAction::NoOp => "do nothing".into(),
        TopologyAction::SetBus { substation, buses } => {
            let moved: Vec<String> = spec.connections(*substation).iter().zip(buses).filter(|(_, &b)| b == Bus::Two).map(|(c, _)| c.to_string()).collect();
            if moved.is_empty() {
                format!("merge substation {substation} onto bus 1")
            } else {
                format!("split substation {substation}: {} to bus 2", moved.join(", "))
            }
        }
        TopologyAction::SetLine { line, connected: true } => format!("reconnect line {line}"),
        TopologyAction::SetLine { line, connected: false } => format!("disconnect line {line}"),
    }
}

/// First recovery action whose forecast keeps the grid below `threshold`.
pub fn safe_recovery(ep: &Episode, catalog: &ActionCatalog, threshold: f64) -> Option<usize> {
    let obs = ep.observation();
    catalog.recovery_actions(&obs).into_iter().find(|&id| {
        ep.simulate(&crate::env::EnvAction::topology(catalog.action(id).clone()))
            .map(|r| r.info.illegal.is_none() && !r.done_reason.is_some_and(|d| d.is_blackout()) && r.observation.rho_max() < threshold)
            .unwrap_or(false)
    })
}

#[cfg(test)]
mod tests;
