use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::control::EpisodeRecord;
use crate::env::DoneReason;

pub const AGENT_HEADER: &str = "agent,episodes,steps_survived_pct,mean_step_ms,redispatch_mw_per_step,curtailment_mw_per_step,agent_calls,incidents";
pub const EPISODE_HEADER: &str = "agent,scenario,seed,horizon,steps_survived,done_reason,redispatch_mw,curtailment_mw,agent_calls,incidents,steps,wall_ms";

/// Per-episode entry of the scenario × seed matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub agent: String,
    pub scenario: String,
    pub seed: u64,
    pub horizon: usize,
    pub steps_survived: usize,
    pub done_reason: String,
    pub redispatch_mw: f64,
    pub curtailment_mw: f64,
    pub agent_calls: usize,
    pub incidents: usize,
    /// Steps actually stepped, used for the step time.
    pub steps: usize,
    pub wall_ms: f64,
}

impl EpisodeRow {
    pub fn from_record(r: &EpisodeRecord) -> Self {
        EpisodeRow {
            agent: r.agent.clone(),
            scenario: r.scenario.clone(),
            seed: r.seed,
            horizon: r.horizon,
            steps_survived: r.steps_survived,
            done_reason: match r.done_reason {
                Some(DoneReason::HorizonReached) => "horizon_reached",
                Some(DoneReason::BlackoutIslanding) => "blackout_islanding",
                Some(DoneReason::BlackoutDivergence) => "blackout_divergence",
                None => "truncated",
            }
            .into(),
            redispatch_mw: r.redispatch_mw,
            curtailment_mw: r.curtailment_mw,
            agent_calls: r.agent_calls,
            incidents: r.incidents,
            steps: r.steps.len(),
            wall_ms: r.wall_ms,
        }
    }
}

/// One aggregate row per agent. Costs are per survived step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentRow {
    pub agent: String,
    pub episodes: usize,
    pub steps_survived_pct: f64,
    pub mean_step_ms: f64,
    pub redispatch_mw_per_step: f64,
    pub curtailment_mw_per_step: f64,
    pub agent_calls: usize,
    pub incidents: usize,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        0.0
    }
}

impl AgentRow {
    fn aggregate(agent: &str, rows: &[&EpisodeRow]) -> Self {
        let survived: usize = rows.iter().map(|r| r.steps_survived).sum();
        let horizon: usize = rows.iter().map(|r| r.horizon).sum();
        let steps: usize = rows.iter().map(|r| r.steps).sum();
        let sum = |f: fn(&EpisodeRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>();
        AgentRow {
            agent: agent.to_string(),
            episodes: rows.len(),
            steps_survived_pct: 100.0 * ratio(survived as f64, horizon as f64),
            mean_step_ms: ratio(sum(|r| r.wall_ms), steps as f64),
            redispatch_mw_per_step: ratio(sum(|r| r.redispatch_mw), survived as f64),
            curtailment_mw_per_step: ratio(sum(|r| r.curtailment_mw), survived as f64),
            agent_calls: rows.iter().map(|r| r.agent_calls).sum(),
            incidents: rows.iter().map(|r| r.incidents).sum(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub agents: Vec<AgentRow>,
    pub episodes: Vec<EpisodeRow>,
}

impl EvalReport {
    /// Aggregate rows in `order`; episodes are kept as given.
    pub fn from_episodes(order: &[String], episodes: Vec<EpisodeRow>) -> Self {
        let agents = order
            .iter()
            .map(|a| {
                let rows: Vec<&EpisodeRow> = episodes.iter().filter(|r| &r.agent == a).collect();
                AgentRow::aggregate(a, &rows)
            })
            .collect();
        EvalReport { agents, episodes }
    }

    pub fn agent(&self, label: &str) -> Option<&AgentRow> {
        self.agents.iter().find(|a| a.agent == label)
    }

    /// Copy with the wall-clock columns zeroed, for reproducibility checks.
    pub fn without_wall_clock(&self) -> Self {
        let mut r = self.clone();
        for a in &mut r.agents {
            a.mean_step_ms = 0.0;
        }
        for e in &mut r.episodes {
            e.wall_ms = 0.0;
        }
        r
    }

    pub fn agents_csv(&self) -> String {
        let mut s = format!("{AGENT_HEADER}\n");
        for a in &self.agents {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                a.agent, a.episodes, a.steps_survived_pct, a.mean_step_ms, a.redispatch_mw_per_step, a.curtailment_mw_per_step, a.agent_calls, a.incidents
            );
        }
        s
    }

    pub fn episodes_csv(&self) -> String {
        let mut s = format!("{EPISODE_HEADER}\n");
        for e in &self.episodes {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                e.agent,
                e.scenario,
                e.seed,
                e.horizon,
                e.steps_survived,
                e.done_reason,
                e.redispatch_mw,
                e.curtailment_mw,
                e.agent_calls,
                e.incidents,
                e.steps,
                e.wall_ms
            );
        }
        s
    }

    /// Fixed-width summary table.
    pub fn to_table(&self) -> String {
        let width = self.agents.iter().map(|a| a.agent.len()).max().unwrap_or(5).max(5);
        let mut s = format!(
            "{:<width$}  {:>8}  {:>10}  {:>12}  {:>14}  {:>14}\n",
            "agent", "episodes", "survived %", "step time ms", "redispatch MW", "curtailment MW"
        );
        for a in &self.agents {
            let _ = writeln!(
                s,
                "{:<width$}  {:>8}  {:>10.2}  {:>12.2}  {:>14.3}  {:>14.3}",
                a.agent, a.episodes, a.steps_survived_pct, a.mean_step_ms, a.redispatch_mw_per_step, a.curtailment_mw_per_step
            );
        }
        s.push_str("costs are MW per survived step\n");
        s
    }

    /// Writes `report.csv`, `episodes.csv` and `report.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), BenchError> {
        std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
        for (name, body) in [("report.csv", self.agents_csv()), ("episodes.csv", self.episodes_csv()), ("report.txt", self.to_table())] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| BenchError::io(&p, e))?;
        }
        Ok(())
    }

    /// Reads a report directory and checks every aggregate row against the
    /// episode matrix.
    pub fn load(dir: &Path) -> Result<Self, BenchError> {
        let agents: Vec<AgentRow> = read_csv(&dir.join("report.csv"))?;
        let episodes: Vec<EpisodeRow> = read_csv(&dir.join("episodes.csv"))?;
        let order: Vec<String> = agents.iter().map(|a| a.agent.clone()).collect();
        let rebuilt = EvalReport::from_episodes(&order, episodes);
        for (stored, computed) in agents.iter().zip(&rebuilt.agents) {
            if stored != computed {
                return Err(BenchError::Report(format!(
                    "aggregate row for {} does not match the episode matrix: stored {stored:?}, recomputed {computed:?}",
                    stored.agent
                )));
            }
        }
        let listed: usize = agents.iter().map(|a| a.episodes).sum();
        if listed != rebuilt.episodes.len() {
            return Err(BenchError::Report(format!("{} episodes listed for agents in the report, {} rows in the matrix", listed, rebuilt.episodes.len())));
        }
        Ok(rebuilt)
    }
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, BenchError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| BenchError::io(path, e))?;
    rdr.deserialize().collect::<Result<_, _>>().map_err(|e| BenchError::Report(format!("{}: {e}", path.display())))
}
