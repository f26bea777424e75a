//! Human-in-the-loop recommendation sessions.
//!
//! A session wraps one live episode. The operator asks for ranked
//! candidates, simulates any of them without touching the episode, and
//! confirms one to apply it. Nothing is applied automatically: every state
//! change is a confirm event in the session log, and replaying the log
//! rebuilds the episode.

mod manager;

#[cfg(test)]
mod tests;

use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::describe_action;
use crate::control::{observe, Agents, ObserverVerdict};
use crate::env::{Chronics, DoneReason, EnvAction, EnvConfig, Episode, Observation, StepResult};
use crate::error::EnvError;
use crate::grid::GridSpec;
use crate::redispatch::{combine, CombineChoice, CombineConfig};
use crate::search::{mcts_search, GridDomain, Prior, SearchConfig, UniformPrior};

pub use manager::{CreateSession, SessionManager};

/// Version stamped on every payload the service emits.
pub const PAYLOAD_VERSION: u32 = 1;

/// Identifier of the standing "do nothing" candidate, valid at every step.
pub const NOOP_ID: &str = "noop";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssistError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown recommendation {0}")]
    UnknownRecommendation(String),
    #[error("recommendation {id} was issued for step {issued}, the session is at step {current}")]
    Stale { id: String, issued: usize, current: usize },
    #[error("episode is over: {0}")]
    Terminal(String),
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("event log: {0}")]
    Log(String),
}

impl AssistError {
    /// Machine-readable category, mirrored in HTTP error bodies.
    pub fn category(&self) -> &'static str {
        match self {
            AssistError::UnknownSession(_) => "unknown_session",
            AssistError::UnknownRecommendation(_) => "unknown_recommendation",
            AssistError::Stale { .. } => "stale",
            AssistError::Terminal(_) => "terminal",
            AssistError::BadRequest(_) => "bad_request",
            AssistError::Env(_) => "environment",
            AssistError::Log(_) => "event_log",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssistConfig {
    pub safe_threshold: f64,
    /// Lines checked as single contingencies for the observer and for every
    /// candidate's what-if.
    pub contingencies: Vec<usize>,
    pub search: SearchConfig,
    /// Undo splits during safe fast-forwards inside the search.
    pub recovery: bool,
    pub combine: CombineConfig,
    pub default_n: usize,
    /// Upper bound on `n` per request.
    pub max_n: usize,
    /// Events returned with a state snapshot.
    pub log_tail: usize,
    /// Directory for per-session event log files.
    pub log_dir: Option<PathBuf>,
}

impl Default for AssistConfig {
    fn default() -> Self {
        AssistConfig {
            safe_threshold: crate::SAFE_THRESHOLD,
            contingencies: vec![],
            search: SearchConfig::default(),
            recovery: true,
            combine: CombineConfig::default(),
            default_n: 5,
            max_n: 50,
            log_tail: 20,
            log_dir: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// A root child of the tree search.
    Search,
    /// Output of the topology and redispatch cascade.
    Combined,
}

/// Simulated outcome of one candidate, from the same forecast the agents use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub rho_max_after: f64,
    pub resolves: bool,
    pub blackout: bool,
    /// Deepest step reached below this candidate in the search tree.
    pub reached_step: Option<usize>,
    /// Follow-up actions of the best line found by the search, in words.
    pub plan: Vec<String>,
    pub n1: Option<(usize, f64)>,
    pub redispatch_mw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub id: String,
    /// Dense from 1.
    pub rank: usize,
    /// Step the recommendation applies to.
    pub step: usize,
    pub action: EnvAction,
    pub description: String,
    pub topology_id: Option<usize>,
    pub origin: Origin,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Created { scenario: String, seed: u64, start_step: usize },
    Recommended { ids: Vec<String>, note: Option<String> },
    Simulated { id: String },
    Confirmed { id: String, action: EnvAction, description: String },
    Stepped { rho_max: f64, safe: bool, done_reason: Option<DoneReason>, disconnected: Vec<usize>, attacked: Option<usize> },
    Incident { message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub version: u32,
    pub session: String,
    /// Position in the log, from 0.
    pub seq: u64,
    /// Episode step when the event was recorded.
    pub t: usize,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub version: u32,
    pub session: String,
    pub t: usize,
    pub horizon: usize,
    pub done: bool,
    pub done_reason: Option<DoneReason>,
    pub verdict: ObserverVerdict,
    pub split_substations: Vec<usize>,
    pub observation: Observation,
    pub events: Vec<Event>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendationList {
    pub version: u32,
    pub session: String,
    pub t: usize,
    pub safe: bool,
    pub note: Option<String>,
    pub incident: Option<String>,
    pub recommendations: Vec<Recommendation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub version: u32,
    pub session: String,
    pub t: usize,
    pub recommendation: String,
    pub action: EnvAction,
    pub verdict_after: ObserverVerdict,
    pub result: StepResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfirmReport {
    pub version: u32,
    pub session: String,
    /// Step after applying the action.
    pub t: usize,
    pub recommendation: String,
    pub action: EnvAction,
    pub verdict: ObserverVerdict,
    pub result: StepResult,
}

/// One operator session over a live episode.
pub struct Session {
    id: String,
    scenario: String,
    seed: u64,
    start_step: usize,
    ep: Episode,
    agents: Agents,
    cfg: AssistConfig,
    pending: Vec<Recommendation>,
    events: Vec<Event>,
    log_file: Option<std::fs::File>,
    listener: Option<Listener>,
}

/// Callback invoked with every event as it is appended.
pub type Listener = Arc<dyn Fn(&Event) + Send + Sync>;

/// Human-readable description of any environment action.
pub fn describe_env_action(spec: &GridSpec, action: &EnvAction) -> String {
    let dispatch = |d: &crate::env::DispatchVector| {
        let mut parts = Vec::new();
        for (&g, &v) in spec.redispatchable().iter().zip(&d.redispatch) {
            if v != 0.0 {
                parts.push(format!("redispatch gen {g} {v:+.1} MW"));
            }
        }
        for (&g, &cap) in spec.curtailable().iter().zip(&d.curtailment) {
            if cap < spec.generators[g].p_max {
                parts.push(format!("cap gen {g} at {cap:.1} MW"));
            }
        }
        for (s, &v) in d.storage.iter().enumerate() {
            if v != 0.0 {
                parts.push(format!("storage {s} {} {:.1} MW", if v > 0.0 { "charge" } else { "discharge" }, v.abs()));
            }
        }
        if parts.is_empty() {
            "keep dispatch".to_string()
        } else {
            parts.join(", ")
        }
    };
    match action {
        EnvAction::NoOp => "do nothing".into(),
        EnvAction::Topology { action } => describe_action(spec, action),
        EnvAction::Dispatch { dispatch: d } => dispatch(d),
        EnvAction::Combined { action, dispatch: d } => format!("{}; {}", describe_action(spec, action), dispatch(d)),
    }
}

impl Session {
    /// Start a session at `start_step` of the scenario; the steps before it
    /// are stepped with no-ops and recorded in the created event.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: String,
        spec: Arc<GridSpec>,
        chronics: Arc<Chronics>,
        env: Arc<EnvConfig>,
        agents: Agents,
        cfg: AssistConfig,
        seed: u64,
        start_step: usize,
    ) -> Result<Self, AssistError> {
        Self::with_listener(id, spec, chronics, env, agents, cfg, seed, start_step, None)
    }

    /// As [`Session::new`], with `listener` receiving every event including
    /// the created one.
    #[allow(clippy::too_many_arguments)]
    pub fn with_listener(
        id: String,
        spec: Arc<GridSpec>,
        chronics: Arc<Chronics>,
        env: Arc<EnvConfig>,
        agents: Agents,
        cfg: AssistConfig,
        seed: u64,
        start_step: usize,
        listener: Option<Listener>,
    ) -> Result<Self, AssistError> {
        let scenario = chronics.name.clone();
        let mut ep = Episode::reset(spec, chronics, env, seed)?;
        if start_step >= ep.horizon() {
            return Err(AssistError::BadRequest(format!("start step {start_step} beyond horizon {}", ep.horizon())));
        }
        for _ in 0..start_step {
            ep.step(&EnvAction::NoOp)?;
            if ep.is_done() {
                return Err(AssistError::BadRequest(format!("episode ends before start step {start_step}")));
            }
        }
        let log_file = match &cfg.log_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| AssistError::Log(e.to_string()))?;
                let p = dir.join(format!("{id}.jsonl"));
                Some(std::fs::File::create(&p).map_err(|e| AssistError::Log(format!("{}: {e}", p.display())))?)
            }
            None => None,
        };
        let mut s = Session { id, scenario: scenario.clone(), seed, start_step, ep, agents, cfg, pending: Vec::new(), events: Vec::new(), log_file, listener };
        s.push(EventKind::Created { scenario, seed, start_step });
        Ok(s)
    }

    /// Receive every later event; earlier ones are in [`Session::events`].
    pub fn set_listener(&mut self, listener: Listener) {
        self.listener = Some(listener);
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn episode(&self) -> &Episode {
        &self.ep
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn events_since(&self, seq: u64) -> &[Event] {
        let start = (seq as usize).min(self.events.len());
        &self.events[start..]
    }

    pub fn pending(&self) -> &[Recommendation] {
        &self.pending
    }

    fn push(&mut self, kind: EventKind) -> Event {
        let e = Event { version: PAYLOAD_VERSION, session: self.id.clone(), seq: self.events.len() as u64, t: self.ep.t(), kind };
        if let Some(f) = &mut self.log_file {
            let line = serde_json::to_string(&e).expect("event serializes");
            if let Err(err) = writeln!(f, "{line}") {
                log::warn!("session {}: event log write failed: {err}", self.id);
            }
        }
        if let Some(l) = &self.listener {
            l(&e);
        }
        self.events.push(e.clone());
        e
    }

    fn verdict(&self) -> ObserverVerdict {
        observe(&self.ep, self.cfg.safe_threshold, &self.cfg.contingencies)
    }

    pub fn state(&self) -> StateSnapshot {
        let spec = self.ep.spec();
        let tail = self.events.len().saturating_sub(self.cfg.log_tail);
        StateSnapshot {
            version: PAYLOAD_VERSION,
            session: self.id.clone(),
            t: self.ep.t(),
            horizon: self.ep.horizon(),
            done: self.ep.is_done(),
            done_reason: self.ep.done_reason(),
            verdict: self.verdict(),
            split_substations: (0..spec.n_substations()).filter(|&s| self.ep.topology().is_split(spec, s)).collect(),
            observation: self.ep.observation(),
            events: self.events[tail..].to_vec(),
        }
    }

    fn outcome(&self, action: &EnvAction) -> Option<(Outcome, StepResult)> {
        let r = self.ep.simulate(action).ok()?;
        if r.info.illegal.is_some() {
            return None;
        }
        let blackout = r.done_reason.is_some_and(|d| d.is_blackout());
        let rho_max_after = r.observation.rho_max();
        let n1 = if self.cfg.contingencies.is_empty() || blackout {
            None
        } else {
            let mut probe = self.ep.forecast_copy();
            probe.step(action).ok()?;
            observe(&probe, self.cfg.safe_threshold, &self.cfg.contingencies).n1
        };
        let o = Outcome {
            rho_max_after,
            resolves: !blackout && rho_max_after < self.cfg.safe_threshold,
            blackout,
            reached_step: None,
            plan: vec![],
            n1,
            redispatch_mw: action.dispatch_part().map_or(0.0, |d| d.redispatch_mw()),
        };
        Some((o, r))
    }

    fn search_candidates(&self, n: usize, seed: u64) -> Vec<(EnvAction, Option<usize>, Origin, Option<usize>, Vec<String>)> {
        let spec = self.ep.spec();
        let uniform = UniformPrior;
        let prior: &dyn Prior = match &self.agents.policy {
            Some(p) => p.as_ref(),
            None => &uniform,
        };
        let domain = GridDomain {
            catalog: &self.agents.catalog,
            candidates: &self.agents.reduced,
            prior,
            safe_threshold: self.cfg.safe_threshold,
            max_fast_forward: self.cfg.search.max_fast_forward,
            use_forecast: self.cfg.search.use_forecast,
            recovery: self.cfg.recovery,
        };
        let mut scfg = self.cfg.search.clone();
        scfg.seed = seed;
        let res = mcts_search(&domain, self.ep.clone(), &scfg);
        let mut children = res.children.clone();
        // deepest reach first, then visits, then prior
        children.sort_by(|a, b| {
            b.best_reached_step.cmp(&a.best_reached_step).then(b.visits.cmp(&a.visits)).then(b.prior.total_cmp(&a.prior)).then(a.action.cmp(&b.action))
        });
        let mut out: Vec<_> = children
            .iter()
            .filter(|c| !c.blackout)
            .take(n)
            .map(|c| {
                let id = self.agents.reduced[c.action];
                let plan = c.plan.iter().skip(1).map(|&pos| describe_action(spec, self.agents.catalog.action(self.agents.reduced[pos]))).collect();
                (EnvAction::topology(self.agents.catalog.action(id).clone()), Some(id), Origin::Search, Some(c.best_reached_step), plan)
            })
            .collect();
        let topo: Vec<_> = out.iter().filter_map(|c| c.0.topology_part().cloned()).collect();
        let mut cc = self.cfg.combine.clone();
        cc.safe_threshold = self.cfg.safe_threshold;
        cc.top_n = cc.top_n.min(topo.len().max(1));
        cc.ce.seed = seed;
        let r = combine(&self.ep, &topo, &cc);
        if matches!(r.choice, CombineChoice::Dispatch | CombineChoice::Combined) {
            let id = r.action.topology_part().and_then(|a| self.agents.catalog.id_of(a));
            out.push((r.action, id, Origin::Combined, None, vec![]));
        }
        out
    }

    /// Ranked candidates for the current step. Safe states give an empty
    /// list with a note; a failing search gives an empty list and an
    /// incident event.
    pub fn recommendations(&mut self, n: Option<usize>) -> Result<RecommendationList, AssistError> {
        let seed = self.cfg.search.seed.wrapping_add(self.seed.wrapping_mul(1_000_003)).wrapping_add(self.ep.t() as u64);
        let n = n.unwrap_or(self.cfg.default_n);
        if n == 0 || n > self.cfg.max_n {
            return Err(AssistError::BadRequest(format!("n must lie in 1..={}", self.cfg.max_n)));
        }
        if let Some(reason) = self.ep.done_reason() {
            return Err(AssistError::Terminal(format!("{reason:?}")));
        }
        let t = self.ep.t();
        let verdict = self.verdict();
        let list = |s: &Self, note: Option<String>, incident: Option<String>, recs: Vec<Recommendation>| RecommendationList {
            version: PAYLOAD_VERSION,
            session: s.id.clone(),
            t,
            safe: verdict.safe,
            note,
            incident,
            recommendations: recs,
        };
        if verdict.safe {
            self.pending.clear();
            let note = format!("state is safe (max line load {:.3}); no action needed", verdict.rho_max);
            self.push(EventKind::Recommended { ids: vec![], note: Some(note.clone()) });
            return Ok(list(self, Some(note), None, vec![]));
        }
        let found = catch_unwind(AssertUnwindSafe(|| self.search_candidates(n, seed)));
        let cands = match found {
            Ok(c) => c,
            Err(_) => {
                let msg = "candidate search failed".to_string();
                self.pending.clear();
                self.push(EventKind::Incident { message: msg.clone() });
                return Ok(list(self, None, Some(msg), vec![]));
            }
        };
        let spec = self.ep.spec().clone();
        let mut scored: Vec<(Recommendation, f64)> = cands
            .into_iter()
            .filter_map(|(action, topology_id, origin, reached, plan)| {
                let (mut o, r) = self.outcome(&action)?;
                o.reached_step = reached;
                o.plan = plan;
                let cost = crate::env::congestion_cost(&r);
                let description = describe_env_action(&spec, &action);
                Some((Recommendation { id: String::new(), rank: 0, step: t, action, description, topology_id, origin, outcome: o }, cost))
            })
            .collect();
        // deepest search reach first, then resolving, then simulated congestion
        let reach = |r: &Recommendation| r.outcome.reached_step.unwrap_or(t + 1);
        scored.sort_by(|(a, ca), (b, cb)| {
            a.outcome
                .blackout
                .cmp(&b.outcome.blackout)
                .then(reach(b).cmp(&reach(a)))
                .then(b.outcome.resolves.cmp(&a.outcome.resolves))
                .then(ca.total_cmp(cb))
                .then(a.outcome.redispatch_mw.total_cmp(&b.outcome.redispatch_mw))
        });
        let recs: Vec<Recommendation> = scored
            .into_iter()
            .take(n)
            .enumerate()
            .map(|(i, (mut r, _))| {
                r.rank = i + 1;
                r.id = format!("t{t}-r{}", i + 1);
                r
            })
            .collect();
        self.pending = recs.clone();
        self.push(EventKind::Recommended { ids: recs.iter().map(|r| r.id.clone()).collect(), note: None });
        Ok(list(self, None, None, recs))
    }

    fn resolve(&self, id: &str) -> Result<(EnvAction, String), AssistError> {
        if let Some(reason) = self.ep.done_reason() {
            return Err(AssistError::Terminal(format!("{reason:?}")));
        }
        if id == NOOP_ID {
            return Ok((EnvAction::NoOp, "do nothing".into()));
        }
        let t = self.ep.t();
        if let Some(r) = self.pending.iter().find(|r| r.id == id) {
            return Ok((r.action.clone(), r.description.clone()));
        }
        match parse_step(id) {
            Some(issued) if issued != t => Err(AssistError::Stale { id: id.to_string(), issued, current: t }),
            _ => Err(AssistError::UnknownRecommendation(id.to_string())),
        }
    }

    /// What-if for a pending candidate. Does not change the episode.
    pub fn simulate(&mut self, id: &str) -> Result<SimulationReport, AssistError> {
        let (action, _) = self.resolve(id)?;
        let result = self.ep.simulate(&action)?;
        let mut probe = self.ep.forecast_copy();
        let verdict_after = match probe.step(&action) {
            Ok(_) => observe(&probe, self.cfg.safe_threshold, &self.cfg.contingencies),
            Err(_) => ObserverVerdict { safe: false, rho_max: result.observation.rho_max(), n1: None },
        };
        self.push(EventKind::Simulated { id: id.to_string() });
        Ok(SimulationReport {
            version: PAYLOAD_VERSION,
            session: self.id.clone(),
            t: self.ep.t(),
            recommendation: id.to_string(),
            action,
            verdict_after,
            result,
        })
    }

    /// Apply a pending candidate (or [`NOOP_ID`]) and advance one step.
    pub fn confirm(&mut self, id: &str) -> Result<ConfirmReport, AssistError> {
        let (action, description) = self.resolve(id)?;
        self.push(EventKind::Confirmed { id: id.to_string(), action: action.clone(), description });
        let result = self.ep.step(&action)?;
        self.pending.clear();
        let verdict = self.verdict();
        self.push(EventKind::Stepped {
            rho_max: verdict.rho_max,
            safe: verdict.safe,
            done_reason: result.done_reason,
            disconnected: result.info.disconnected.clone(),
            attacked: result.info.attacked,
        });
        Ok(ConfirmReport { version: PAYLOAD_VERSION, session: self.id.clone(), t: self.ep.t(), recommendation: id.to_string(), action, verdict, result })
    }

    /// Rebuild the episode from a session log: reset, skip to the start step,
    /// then apply every confirmed action in order.
    pub fn replay(spec: Arc<GridSpec>, chronics: Arc<Chronics>, env: Arc<EnvConfig>, events: &[Event]) -> Result<Episode, AssistError> {
        let (seed, start_step) = match events.first().map(|e| &e.kind) {
            Some(EventKind::Created { seed, start_step, .. }) => (*seed, *start_step),
            _ => return Err(AssistError::Log("log does not begin with a created event".into())),
        };
        let mut ep = Episode::reset(spec, chronics, env, seed)?;
        for _ in 0..start_step {
            ep.step(&EnvAction::NoOp)?;
        }
        for (i, e) in events.iter().enumerate() {
            if e.seq != i as u64 {
                return Err(AssistError::Log(format!("event {i} carries sequence number {}", e.seq)));
            }
            if let EventKind::Confirmed { action, .. } = &e.kind {
                if e.t != ep.t() {
                    return Err(AssistError::Log(format!("confirm at step {} while replay is at step {}", e.t, ep.t())));
                }
                ep.step(action)?;
            }
        }
        Ok(ep)
    }

    /// Parse a JSON-lines event log as written to `log_dir`.
    pub fn read_log(text: &str) -> Result<Vec<Event>, AssistError> {
        text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).map_err(|e| AssistError::Log(e.to_string()))).collect()
    }

    pub fn scenario(&self) -> &str {
        &self.scenario
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn start_step(&self) -> usize {
        self.start_step
    }
}

/// Step encoded in a recommendation id of the form `t<step>-r<rank>`.
fn parse_step(id: &str) -> Option<usize> {
    id.strip_prefix('t')?.split_once("-r")?.0.parse().ok()
}
