use super::{SearchDomain, Transition};
use crate::actions::ActionCatalog;
use crate::control::safe_state_action;
use crate::env::{EnvAction, Episode};

/// Prior over a candidate action list.
pub trait Prior: Sync {
    /// One weight per entry of `candidates` (catalog ids). Only entries with
    /// `legal[i]` are read.
    fn prior(&self, ep: &Episode, candidates: &[usize], legal: &[bool]) -> Vec<f64>;
}

pub struct UniformPrior;

impl Prior for UniformPrior {
    fn prior(&self, _ep: &Episode, candidates: &[usize], _legal: &[bool]) -> Vec<f64> {
        vec![1.0; candidates.len()]
    }
}

impl<F> Prior for F
where
    F: Fn(&Episode, &[usize], &[bool]) -> Vec<f64> + Sync,
{
    fn prior(&self, ep: &Episode, candidates: &[usize], legal: &[bool]) -> Vec<f64> {
        self(ep, candidates, legal)
    }
}

/// The grid environment seen by the tree search. Tree actions are positions
/// in `candidates`, the reduced action set.
pub struct GridDomain<'a> {
    pub catalog: &'a ActionCatalog,
    pub candidates: &'a [usize],
    pub prior: &'a dyn Prior,
    pub safe_threshold: f64,
    pub max_fast_forward: usize,
    pub use_forecast: bool,
    /// Apply recovery actions while fast-forwarding safe steps.
    pub recovery: bool,
}

impl GridDomain<'_> {
    pub fn catalog_id(&self, action: usize) -> usize {
        self.candidates[action]
    }

    fn legal_flags(&self, ep: &Episode) -> Vec<bool> {
        let obs = ep.observation();
        self.candidates.iter().map(|&id| self.catalog.is_legal(&obs, id)).collect()
    }
}

impl SearchDomain for GridDomain<'_> {
    type State = Episode;

    fn legal_actions(&self, state: &Episode) -> Vec<usize> {
        if state.is_done() {
            return vec![];
        }
        self.legal_flags(state).iter().enumerate().filter(|(_, &l)| l).map(|(i, _)| i).collect()
    }

    fn priors(&self, state: &Episode, actions: &[usize]) -> Vec<f64> {
        let legal = self.legal_flags(state);
        let p = self.prior.prior(state, self.candidates, &legal);
        actions.iter().map(|&a| p.get(a).copied().unwrap_or(0.0)).collect()
    }

    fn expand(&self, state: &Episode, action: usize) -> Transition<Episode> {
        let mut ep = if self.use_forecast && !state.is_forecast() { state.forecast_copy() } else { state.clone() };
        let ta = self.catalog.action(self.catalog_id(action)).clone();
        let mut rewards = Vec::new();
        let mut skipped = 0;
        match ep.step(&EnvAction::topology(ta)) {
            Ok(r) => rewards.push(r.reward),
            Err(_) => {
                return Transition { reached_step: ep.t(), state: ep, rewards: vec![0.0], skipped: 0, blackout: true, episode_end: false, critical: false }
            }
        }
        while !ep.is_done() && ep.rho_max() < self.safe_threshold && skipped < self.max_fast_forward {
            let a = safe_state_action(&ep, self.catalog, self.safe_threshold, self.recovery);
            match ep.step(&a) {
                Ok(r) => rewards.push(r.reward),
                Err(_) => break,
            }
            skipped += 1;
        }
        let done = ep.done_reason();
        Transition {
            reached_step: ep.t(),
            rewards,
            skipped,
            blackout: done.is_some_and(|d| d.is_blackout()),
            episode_end: done.is_some_and(|d| !d.is_blackout()),
            critical: !ep.is_done() && ep.rho_max() >= self.safe_threshold,
            state: ep,
        }
    }

    fn reward(&self, state: &Episode) -> f64 {
        state.reward()
    }

    fn reached_step(&self, state: &Episode) -> usize {
        state.t()
    }
}
