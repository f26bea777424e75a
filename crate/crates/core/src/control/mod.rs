//! Deployment supervisor: Grid State Observer, topology recovery in safe
//! states and dispatch to the configured congestion agent.

mod record;

#[cfg(test)]
mod tests;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::actions::{safe_recovery, ActionCatalog};
use crate::env::{congestion_cost, EnvAction, Episode};
use crate::policy::Policy;
use crate::redispatch::{ce_optimize, combine, CombineConfig};
use crate::search::{mcts_search, GridDomain, Prior, SearchConfig, SearchResult, UniformPrior};

pub use record::{run_episode, EpisodeRecord, StepRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObserverVerdict {
    pub safe: bool,
    pub rho_max: f64,
    /// Worst post-contingency line load and the line whose loss causes it;
    /// infinite when the loss splits the grid.
    pub n1: Option<(usize, f64)>,
}

/// Safe iff `rho_max < threshold` and, when `contingencies` is non-empty,
/// every listed single line outage also stays below the threshold.
pub fn observe(ep: &Episode, threshold: f64, contingencies: &[usize]) -> ObserverVerdict {
    let rho_max = ep.rho_max();
    let mut n1: Option<(usize, f64)> = None;
    for &l in contingencies {
        let r = ep.contingency_rho_max(l).unwrap_or(f64::INFINITY);
        if n1.is_none_or(|(_, w)| r > w) {
            n1 = Some((l, r));
        }
    }
    let safe = rho_max < threshold && n1.is_none_or(|(_, w)| w < threshold);
    ObserverVerdict { safe, rho_max, n1 }
}

/// Action for a safe state: a recovery step whose forecast stays safe,
/// otherwise a release of standing dispatch that stays safe, otherwise a
/// no-op.
pub fn safe_state_action(ep: &Episode, catalog: &ActionCatalog, threshold: f64, recovery: bool) -> EnvAction {
    safe_state_decision(ep, catalog, threshold, recovery).0
}

fn safe_state_decision(ep: &Episode, catalog: &ActionCatalog, threshold: f64, recovery: bool) -> (EnvAction, Source) {
    if recovery {
        if let Some(id) = safe_recovery(ep, catalog, threshold) {
            return (EnvAction::topology(catalog.action(id).clone()), Source::Recovery);
        }
    }
    if let Some(release) = ep.release_dispatch() {
        let a = EnvAction::dispatch(release);
        let stays_safe = ep
            .simulate(&a)
            .map(|r| r.info.illegal.is_none() && !r.done_reason.is_some_and(|d| d.is_blackout()) && r.observation.rho_max() < threshold)
            .unwrap_or(false);
        if stays_safe {
            return (a, Source::Release);
        }
    }
    (EnvAction::NoOp, Source::Idle)
}

/// Congestion agent invoked on unsafe states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentMode {
    NoOp,
    /// Cross-entropy redispatch and curtailment only.
    RedispatchOnly,
    /// Simulate every reduced action, keep the least congested.
    BruteForce,
    /// Top legal policy prediction, unsimulated.
    TopoArgmax,
    /// Simulate the `k` top policy predictions, keep the least congested.
    TopoTopK {
        k: usize,
    },
    TopoMcts,
    /// Top `n` policy predictions fed into the topology and dispatch cascade.
    Joint {
        n: usize,
    },
}

impl AgentMode {
    pub fn label(&self) -> String {
        match self {
            AgentMode::NoOp => "noop".into(),
            AgentMode::RedispatchOnly => "redispatch".into(),
            AgentMode::BruteForce => "brute_force".into(),
            AgentMode::TopoArgmax => "topo_argmax".into(),
            AgentMode::TopoTopK { k } => format!("topo_top{k}"),
            AgentMode::TopoMcts => "topo_mcts".into(),
            AgentMode::Joint { n } => format!("topo_top{n}_redispatch"),
        }
    }

    /// Parses labels as produced by [`AgentMode::label`].
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "noop" => AgentMode::NoOp,
            "redispatch" => AgentMode::RedispatchOnly,
            "brute_force" => AgentMode::BruteForce,
            "topo_argmax" => AgentMode::TopoArgmax,
            "topo_mcts" => AgentMode::TopoMcts,
            _ => {
                let rest = s.strip_prefix("topo_top")?;
                match rest.strip_suffix("_redispatch") {
                    Some(n) => AgentMode::Joint { n: n.parse().ok()? },
                    None => AgentMode::TopoTopK { k: rest.parse().ok()? },
                }
            }
        })
    }

    pub fn needs_policy(&self) -> bool {
        matches!(self, AgentMode::TopoArgmax | AgentMode::TopoTopK { .. } | AgentMode::Joint { .. })
    }

    pub fn needs_reduced_set(&self) -> bool {
        !matches!(self, AgentMode::NoOp | AgentMode::RedispatchOnly)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub safe_threshold: f64,
    pub mode: AgentMode,
    pub recovery: bool,
    /// Lines checked as single contingencies by the observer.
    pub contingencies: Vec<usize>,
    /// Wall-clock budget for one agent decision; `None` runs unbounded and
    /// fully deterministic.
    pub deadline_ms: Option<u64>,
    pub search: SearchConfig,
    pub combine: CombineConfig,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            safe_threshold: crate::SAFE_THRESHOLD,
            mode: AgentMode::NoOp,
            recovery: true,
            contingencies: vec![],
            deadline_ms: Some(1000),
            search: SearchConfig::default(),
            combine: CombineConfig::default(),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.safe_threshold > 0.0 && self.safe_threshold < 2.0) {
            return Err(format!("safe threshold must lie in (0, 2), got {}", self.safe_threshold));
        }
        if let AgentMode::TopoTopK { k: 0 } | AgentMode::Joint { n: 0 } = self.mode {
            return Err("candidate count must be positive".into());
        }
        self.search.validate()?;
        self.combine.ce.validate()
    }
}

/// Shared artifacts the agents draw on.
#[derive(Clone, Debug)]
pub struct Agents {
    pub catalog: Arc<ActionCatalog>,
    /// Catalog ids of the reduced action set.
    pub reduced: Arc<Vec<usize>>,
    pub policy: Option<Arc<Policy>>,
}

impl Agents {
    pub fn new(catalog: Arc<ActionCatalog>, reduced: Vec<usize>, policy: Option<Arc<Policy>>) -> Self {
        Agents { catalog, reduced: Arc::new(reduced), policy }
    }

    fn reduced_mask(&self, ep: &Episode) -> Vec<bool> {
        let obs = ep.observation();
        self.reduced.iter().map(|&id| self.catalog.is_legal(&obs, id)).collect()
    }

    /// Legal reduced actions ranked by the policy, or by simulated congestion
    /// without one. Entries are `(catalog id, score)`.
    pub fn ranked_candidates(&self, ep: &Episode) -> Vec<(usize, f64)> {
        let mask = self.reduced_mask(ep);
        match &self.policy {
            Some(p) => {
                let obs = ep.observation();
                p.ranked(&obs, &mask).into_iter().map(|(pos, prob)| (self.reduced[pos], prob)).collect()
            }
            None => {
                let mut r: Vec<(usize, usize, f64)> = self
                    .reduced
                    .iter()
                    .zip(&mask)
                    .enumerate()
                    .filter(|(_, (_, &m))| m)
                    .filter_map(|(pos, (&id, _))| simulated_cost(ep, &self.topology(id)).map(|c| (pos, id, c)))
                    .collect();
                r.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
                r.into_iter().map(|(_, id, c)| (id, -c)).collect()
            }
        }
    }

    fn topology(&self, id: usize) -> EnvAction {
        EnvAction::topology(self.catalog.action(id).clone())
    }
}

fn simulated_cost(ep: &Episode, a: &EnvAction) -> Option<f64> {
    match ep.simulate(a) {
        Ok(r) if r.info.illegal.is_none() => Some(congestion_cost(&r)),
        _ => None,
    }
}

/// Least congested of `ids` (in rank order, ties to the earlier one) if it
/// beats the no-op.
fn best_simulated(ep: &Episode, agents: &Agents, ids: impl IntoIterator<Item = usize>) -> (EnvAction, Option<usize>) {
    let noop = simulated_cost(ep, &EnvAction::NoOp).unwrap_or(f64::INFINITY);
    let mut best: Option<(usize, f64)> = None;
    for id in ids {
        if let Some(c) = simulated_cost(ep, &agents.topology(id)) {
            if best.is_none_or(|(_, b)| c < b) {
                best = Some((id, c));
            }
        }
    }
    match best {
        Some((id, c)) if c < noop => (agents.topology(id), Some(id)),
        _ => (EnvAction::NoOp, None),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Safe state, nothing to do.
    Idle,
    Recovery,
    /// Safe state, standing dispatch released.
    Release,
    Agent,
    /// The agent failed or missed its deadline.
    Fallback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub action: EnvAction,
    pub verdict: ObserverVerdict,
    pub source: Source,
    /// Why the agent's answer was replaced by a no-op.
    pub incident: Option<String>,
    /// Catalog id of the topology part chosen by the agent.
    pub topology_id: Option<usize>,
    pub search: Option<SearchResult>,
}

struct AgentOutput {
    action: EnvAction,
    topology_id: Option<usize>,
    search: Option<SearchResult>,
}

fn run_agent(ep: &Episode, cfg: &ControllerConfig, agents: &Agents, seed: u64) -> AgentOutput {
    let plain = |action: EnvAction, topology_id| AgentOutput { action, topology_id, search: None };
    match &cfg.mode {
        AgentMode::NoOp => plain(EnvAction::NoOp, None),
        AgentMode::RedispatchOnly => {
            let mut ce = cfg.combine.ce.clone();
            ce.seed = seed;
            ce.safe_threshold = cfg.safe_threshold;
            let r = ce_optimize(ep, None, &ce);
            let a = EnvAction::dispatch(r.dispatch);
            let noop = simulated_cost(ep, &EnvAction::NoOp).unwrap_or(f64::INFINITY);
            if !r.failed && simulated_cost(ep, &a).is_some_and(|c| c < noop) {
                plain(a, None)
            } else {
                plain(EnvAction::NoOp, None)
            }
        }
        AgentMode::BruteForce => {
            let mask = agents.reduced_mask(ep);
            let ids: Vec<usize> = agents.reduced.iter().zip(&mask).filter(|(_, &m)| m).map(|(&id, _)| id).collect();
            let (a, id) = best_simulated(ep, agents, ids);
            plain(a, id)
        }
        AgentMode::TopoArgmax => match agents.ranked_candidates(ep).first() {
            Some(&(id, _)) => plain(agents.topology(id), Some(id)),
            None => plain(EnvAction::NoOp, None),
        },
        AgentMode::TopoTopK { k } => {
            let ids: Vec<usize> = agents.ranked_candidates(ep).into_iter().take(*k).map(|c| c.0).collect();
            let (a, id) = best_simulated(ep, agents, ids);
            plain(a, id)
        }
        AgentMode::TopoMcts => {
            let uniform = UniformPrior;
            let prior: &dyn Prior = match &agents.policy {
                Some(p) => p.as_ref(),
                None => &uniform,
            };
            let domain = GridDomain {
                catalog: &agents.catalog,
                candidates: &agents.reduced,
                prior,
                safe_threshold: cfg.safe_threshold,
                max_fast_forward: cfg.search.max_fast_forward,
                use_forecast: cfg.search.use_forecast,
                recovery: cfg.recovery,
            };
            let mut scfg = cfg.search.clone();
            scfg.seed = seed;
            if let Some(d) = cfg.deadline_ms {
                // leave headroom to return before the decision deadline
                let budget = d.saturating_mul(8) / 10;
                scfg.time_budget_ms = Some(scfg.time_budget_ms.map_or(budget, |b| b.min(budget)));
            }
            let res = mcts_search(&domain, ep.clone(), &scfg);
            match res.action {
                Some(pos) => {
                    let id = agents.reduced[pos];
                    AgentOutput { action: agents.topology(id), topology_id: Some(id), search: Some(res) }
                }
                None => AgentOutput { action: EnvAction::NoOp, topology_id: None, search: Some(res) },
            }
        }
        AgentMode::Joint { n } => {
            let ids: Vec<usize> = agents.ranked_candidates(ep).into_iter().take(*n).map(|c| c.0).collect();
            let cands: Vec<_> = ids.iter().map(|&id| agents.catalog.action(id).clone()).collect();
            let mut cc = cfg.combine.clone();
            cc.top_n = *n;
            cc.safe_threshold = cfg.safe_threshold;
            cc.ce.seed = seed;
            let r = combine(ep, &cands, &cc);
            let id = r.chosen_index.and_then(|i| ids.get(i).copied());
            plain(r.action, id)
        }
    }
}

/// One supervisor step. Safe states get recovery, a dispatch release or a
/// no-op and never reach the agent. Unsafe states go to the configured
/// agent; a panic or a missed deadline yields a no-op with an incident.
pub fn decide(ep: &Episode, cfg: &ControllerConfig, agents: &Agents, seed: u64) -> Decision {
    let verdict = observe(ep, cfg.safe_threshold, &cfg.contingencies);
    if ep.is_done() {
        return Decision { action: EnvAction::NoOp, verdict, source: Source::Idle, incident: None, topology_id: None, search: None };
    }
    if verdict.safe {
        let (action, source) = safe_state_decision(ep, &agents.catalog, cfg.safe_threshold, cfg.recovery);
        return Decision { action, verdict, source, incident: None, topology_id: None, search: None };
    }
    let outcome: Result<AgentOutput, String> = match cfg.deadline_ms {
        None => catch_unwind(AssertUnwindSafe(|| run_agent(ep, cfg, agents, seed))).map_err(|_| "agent panicked".to_string()),
        Some(ms) => {
            let (tx, rx) = mpsc::channel();
            let (ep2, cfg2, agents2) = (ep.clone(), cfg.clone(), agents.clone());
            std::thread::spawn(move || {
                let r = catch_unwind(AssertUnwindSafe(|| run_agent(&ep2, &cfg2, &agents2, seed)));
                let _ = tx.send(r.map_err(|_| "agent panicked".to_string()));
            });
            let start = Instant::now();
            match rx.recv_timeout(Duration::from_millis(ms)) {
                Ok(r) => r,
                Err(_) => Err(format!("agent missed its {ms} ms deadline after {:?}", start.elapsed())),
            }
        }
    };
    match outcome {
        Ok(o) => Decision { action: o.action, verdict, source: Source::Agent, incident: None, topology_id: o.topology_id, search: o.search },
        Err(msg) => {
            log::warn!("t={}: {msg}; falling back to no-op", ep.t());
            Decision { action: EnvAction::NoOp, verdict, source: Source::Fallback, incident: Some(msg), topology_id: None, search: None }
        }
    }
}
