use serde::{Deserialize, Serialize};

use crate::grid::{GridSpec, TopologyAction};

/// Costly measures for one step.
///
/// Any part left empty means "unchanged" for redispatch and curtailment and
/// "idle" for storage. Redispatch deltas shift the standing offset of each
/// redispatchable unit (coordinate order of [`GridSpec::redispatchable`]);
/// curtailment entries are absolute caps per curtailable unit (order of
/// [`GridSpec::curtailable`]), a cap at or above `p_max` lifts curtailment;
/// storage entries are setpoints, positive while charging.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DispatchVector {
    #[serde(default)]
    pub redispatch: Vec<f64>,
    #[serde(default)]
    pub curtailment: Vec<f64>,
    #[serde(default)]
    pub storage: Vec<f64>,
}

impl DispatchVector {
    pub fn is_empty(&self) -> bool {
        self.redispatch.iter().all(|&d| d == 0.0) && self.curtailment.is_empty() && self.storage.iter().all(|&s| s == 0.0)
    }

    /// Zero deltas for every redispatchable unit, nothing else.
    pub fn zeros(spec: &GridSpec) -> Self {
        DispatchVector { redispatch: vec![0.0; spec.redispatchable().len()], curtailment: vec![], storage: vec![] }
    }

    /// Total MW moved by the redispatch part.
    pub fn redispatch_mw(&self) -> f64 {
        self.redispatch.iter().map(|d| d.abs()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvAction {
    NoOp,
    Topology { action: TopologyAction },
    Dispatch { dispatch: DispatchVector },
    Combined { action: TopologyAction, dispatch: DispatchVector },
}

impl EnvAction {
    pub fn topology(action: TopologyAction) -> Self {
        if action.is_noop() {
            EnvAction::NoOp
        } else {
            EnvAction::Topology { action }
        }
    }

    pub fn dispatch(dispatch: DispatchVector) -> Self {
        EnvAction::Dispatch { dispatch }
    }

    pub fn combined(action: TopologyAction, dispatch: DispatchVector) -> Self {
        match (action.is_noop(), dispatch.is_empty()) {
            (true, true) => EnvAction::NoOp,
            (true, false) => EnvAction::Dispatch { dispatch },
            (false, true) => EnvAction::Topology { action },
            (false, false) => EnvAction::Combined { action, dispatch },
        }
    }

    pub fn topology_part(&self) -> Option<&TopologyAction> {
        match self {
            EnvAction::Topology { action } | EnvAction::Combined { action, .. } => Some(action),
            _ => None,
        }
    }

    pub fn dispatch_part(&self) -> Option<&DispatchVector> {
        match self {
            EnvAction::Dispatch { dispatch } | EnvAction::Combined { dispatch, .. } => Some(dispatch),
            _ => None,
        }
    }

    pub fn is_noop(&self) -> bool {
        matches!(self, EnvAction::NoOp)
    }
}
