//! Episode dynamics: chronics replay, action application, line protection,
//! opponent attacks, reward and forecast-based simulation.

mod action;
mod chronics;
mod episode;
mod opponent;
mod reward;

use serde::{Deserialize, Serialize};

pub use action::{DispatchVector, EnvAction};
pub use chronics::{load_chronics_dir, Chronics, PlannedOutage};
pub use episode::{DoneReason, Episode, LineState, Observation, OfflineReason, StepInfo, StepResult};
pub use opponent::{Opponent, OpponentConfig};
pub use reward::{compute_reward, congestion_cost, rho_cost, BLACKOUT_COST};

use crate::grid::CooldownConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub cooldown: CooldownConfig,
    /// Lines above this load fraction trip within the same step.
    pub hard_overflow: f64,
    /// Lines overflowing this many consecutive steps trip.
    pub soft_overflow_steps: u32,
    /// Steps before a line tripped by protection may be reconnected.
    pub overflow_reconnect_cooldown: u32,
    pub opponent: OpponentConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            cooldown: CooldownConfig::default(),
            hard_overflow: 2.0,
            soft_overflow_steps: 3,
            overflow_reconnect_cooldown: 12,
            opponent: OpponentConfig::default(),
        }
    }
}
