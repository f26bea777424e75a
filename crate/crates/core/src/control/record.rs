use std::sync::Arc;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{decide, Agents, ControllerConfig, Source};
use crate::env::{Chronics, DoneReason, EnvAction, EnvConfig, Episode};
use crate::error::{ArtifactError, EnvError};
use crate::grid::GridSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Time step the action was taken at.
    pub t: usize,
    pub action: EnvAction,
    pub source: Source,
    pub rho_max_before: f64,
    pub rho_max_after: f64,
    pub reward: f64,
    pub redispatch_mw: f64,
    pub curtailment_mw: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub incident: Option<String>,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub scenario: String,
    pub seed: u64,
    pub agent: String,
    pub horizon: usize,
    /// Last step reached with the grid alive.
    pub steps_survived: usize,
    pub done_reason: Option<DoneReason>,
    pub redispatch_mw: f64,
    pub curtailment_mw: f64,
    /// Steps at which the agent was consulted.
    pub agent_calls: usize,
    pub incidents: usize,
    pub wall_ms: f64,
    pub steps: Vec<StepRecord>,
}

impl EpisodeRecord {
    pub fn survived_ratio(&self) -> f64 {
        self.steps_survived as f64 / self.horizon.max(1) as f64
    }

    /// Mean wall time per step.
    pub fn mean_step_ms(&self) -> f64 {
        if self.steps.is_empty() {
            0.0
        } else {
            self.wall_ms / self.steps.len() as f64
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self, ArtifactError> {
        serde_json::from_str(s).map_err(|e| ArtifactError::malformed("episode record", e.to_string()))
    }
}

/// Observe, decide and step until the episode ends or `max_steps` is reached.
/// Agent failures downgrade to a no-op; only an environment error aborts.
pub fn run_episode(
    spec: &Arc<GridSpec>,
    chronics: &Arc<Chronics>,
    env_cfg: &Arc<EnvConfig>,
    cfg: &ControllerConfig,
    agents: &Agents,
    seed: u64,
    max_steps: Option<usize>,
) -> Result<EpisodeRecord, EnvError> {
    let mut ep = Episode::reset(spec.clone(), chronics.clone(), env_cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xa9e7));
    let limit = max_steps.unwrap_or(usize::MAX).min(ep.horizon());
    let mut rec = EpisodeRecord {
        scenario: chronics.name.clone(),
        seed,
        agent: cfg.mode.label(),
        horizon: limit,
        steps_survived: 0,
        done_reason: None,
        redispatch_mw: 0.0,
        curtailment_mw: 0.0,
        agent_calls: 0,
        incidents: 0,
        wall_ms: 0.0,
        steps: Vec::new(),
    };
    while !ep.is_done() && ep.t() < limit {
        let start = Instant::now();
        let before = ep.rho_max();
        let d = decide(&ep, cfg, agents, rng.next_u64());
        let r = match ep.step(&d.action) {
            Ok(r) => r,
            Err(EnvError::EpisodeDone) => break,
            Err(e) => {
                log::warn!("step {} failed: {e}", ep.t());
                return Err(e);
            }
        };
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        if matches!(d.source, Source::Agent | Source::Fallback) {
            rec.agent_calls += 1;
        }
        if d.incident.is_some() {
            rec.incidents += 1;
        }
        rec.redispatch_mw += r.info.redispatch_mw;
        rec.curtailment_mw += r.info.curtailment_mw;
        rec.wall_ms += wall_ms;
        rec.steps.push(StepRecord {
            t: ep.t() - 1,
            action: if r.info.illegal.is_some() { EnvAction::NoOp } else { d.action },
            source: d.source,
            rho_max_before: before,
            rho_max_after: r.observation.rho_max(),
            reward: r.reward,
            redispatch_mw: r.info.redispatch_mw,
            curtailment_mw: r.info.curtailment_mw,
            incident: d.incident,
            wall_ms,
        });
    }
    rec.done_reason = ep.done_reason();
    rec.steps_survived = if rec.done_reason.is_some_and(|d| d.is_blackout()) { ep.t().saturating_sub(1) } else { ep.t() };
    Ok(rec)
}
