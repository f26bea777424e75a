//! Scripted two-wave congestion: a small meshed grid where a first overload
//! must be relieved by a bus split that also leaves room to handle a second
//! overload a few steps later.
//!
//! Instances are drawn from a seeded generator and screened with an
//! exhaustive two-ply oracle; [`two_step_congestion`] returns the fixed
//! instance used by the tests.

use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::actions::{enumerate_unitary_actions, ActionCatalog, CatalogOptions};
use crate::assist::{AssistConfig, SessionManager};
use crate::control::{run_episode, AgentMode, Agents, ControllerConfig};
use crate::env::{Chronics, DoneReason, EnvAction, EnvConfig, Episode, OpponentConfig};
use crate::grid::{GenKind, Generator, GridSpec, Line, Load, Storage, Substation};
use crate::search::{GridDomain, Prior, SearchConfig};

/// Seed of the instance returned by [`two_step_congestion`].
pub const TWO_STEP_SEED: u64 = 846;
/// Largest reduced set the oracle enumerates.
pub const MAX_REDUCED: usize = 50;

const HORIZON: usize = 20;
const WAVE_1: usize = 1;
const WAVE_2: usize = 9;
/// Steps over which a wave ramps to full strength.
const RAMP: f64 = 6.0;

#[derive(Clone, Debug)]
pub struct TwoStepCase {
    pub spec: Arc<GridSpec>,
    pub chronics: Arc<Chronics>,
    pub env: Arc<EnvConfig>,
    pub catalog: Arc<ActionCatalog>,
    /// Catalog ids the search and the oracle choose from.
    pub reduced: Vec<usize>,
}

/// Survivors of the exhaustive oracle, as positions in the reduced set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleReport {
    /// Single actions that reach the horizon on their own.
    pub singles: Vec<usize>,
    /// Two-action sequences that reach the horizon.
    pub pairs: Vec<(usize, usize)>,
}

impl TwoStepCase {
    /// Assist settings matching [`TwoStepCase::domain`].
    pub fn assist_config(&self) -> AssistConfig {
        AssistConfig {
            search: SearchConfig { n_simulations_max: 500, max_fast_forward: HORIZON, use_forecast: false, ..Default::default() },
            recovery: false,
            ..Default::default()
        }
    }

    /// Session manager serving this single scenario.
    pub fn manager(&self, cfg: AssistConfig) -> SessionManager {
        SessionManager::new(self.spec.clone(), vec![self.chronics.clone()], (*self.env).clone(), self.agents(), cfg)
    }

    pub fn agents(&self) -> Agents {
        Agents::new(self.catalog.clone(), self.reduced.clone(), None)
    }

    /// Episode at the first unsafe step, with no-ops before it.
    pub fn root(&self, threshold: f64) -> Episode {
        let mut ep = Episode::reset(self.spec.clone(), self.chronics.clone(), self.env.clone(), 0).expect("instance resets");
        while !ep.is_done() && ep.rho_max() < threshold {
            ep.step(&EnvAction::NoOp).expect("no-op steps");
        }
        ep
    }

    /// Search domain over the reduced set. Splits are kept while
    /// fast-forwarding so a plan is not undone between its steps.
    pub fn domain<'a>(&'a self, prior: &'a dyn Prior, threshold: f64) -> GridDomain<'a> {
        GridDomain {
            catalog: &self.catalog,
            candidates: &self.reduced,
            prior,
            safe_threshold: threshold,
            max_fast_forward: HORIZON,
            use_forecast: false,
            recovery: false,
        }
    }

    /// Play `plan` from the root: each action at the next unsafe step, no-ops
    /// in between and after. True when the horizon is reached.
    pub fn plan_survives(&self, threshold: f64, plan: &[usize]) -> bool {
        let mut ep = self.root(threshold);
        for (i, &pos) in plan.iter().enumerate() {
            if ep.is_done() {
                break;
            }
            let a = EnvAction::topology(self.catalog.action(self.reduced[pos]).clone());
            if ep.step(&a).is_err() {
                return false;
            }
            let last = i + 1 == plan.len();
            while !ep.is_done() && (last || ep.rho_max() < threshold) {
                ep.step(&EnvAction::NoOp).expect("no-op steps");
            }
        }
        ep.done_reason() == Some(DoneReason::HorizonReached)
    }

    /// Enumerate every one- and two-action plan over the reduced set.
    pub fn oracle(&self, threshold: f64) -> OracleReport {
        let root = self.root(threshold);
        let legal = |ep: &Episode| {
            let obs = ep.observation();
            (0..self.reduced.len()).filter(|&p| self.catalog.is_legal(&obs, self.reduced[p])).collect::<Vec<_>>()
        };
        let mut singles = Vec::new();
        let mut pairs = Vec::new();
        for a in legal(&root) {
            if self.plan_survives(threshold, &[a]) {
                singles.push(a);
                continue;
            }
            let mut ep = root.clone();
            let act = EnvAction::topology(self.catalog.action(self.reduced[a]).clone());
            if ep.step(&act).is_err() {
                continue;
            }
            while !ep.is_done() && ep.rho_max() < threshold {
                ep.step(&EnvAction::NoOp).expect("no-op steps");
            }
            if ep.is_done() {
                continue;
            }
            for b in legal(&ep) {
                if self.plan_survives(threshold, &[a, b]) {
                    pairs.push((a, b));
                }
            }
        }
        OracleReport { singles, pairs }
    }

    /// Whether the greedy simulate-all agent reaches the horizon.
    pub fn greedy_survives(&self, threshold: f64) -> bool {
        let cfg = ControllerConfig { mode: AgentMode::BruteForce, safe_threshold: threshold, recovery: false, deadline_ms: None, ..Default::default() };
        let rec = run_episode(&self.spec, &self.chronics, &self.env, &cfg, &self.agents(), 0, None).expect("greedy run");
        rec.done_reason == Some(DoneReason::HorizonReached)
    }

    /// Whether doing nothing reaches the horizon.
    pub fn noop_survives(&self) -> bool {
        let cfg = ControllerConfig { mode: AgentMode::NoOp, deadline_ms: None, ..Default::default() };
        let rec = run_episode(&self.spec, &self.chronics, &self.env, &cfg, &self.agents(), 0, None).expect("no-op run");
        rec.done_reason == Some(DoneReason::HorizonReached)
    }
}

fn env_config() -> EnvConfig {
    EnvConfig { hard_overflow: 1.3, soft_overflow_steps: 2, opponent: OpponentConfig { enabled: false, ..Default::default() }, ..Default::default() }
}

/// Random instance for `seed`; `None` when the draw is degenerate.
pub fn two_step_candidate(seed: u64) -> Option<TwoStepCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(6..=7);
    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    let chords = rng.random_range(2..=3);
    while edges.len() < n + chords {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        let (a, b) = (a.min(b), a.max(b));
        if b - a < 2 || (a == 0 && b == n - 1) || edges.contains(&(a, b)) {
            continue;
        }
        edges.push((a, b));
    }
    let mut lines: Vec<Line> = edges
        .iter()
        .enumerate()
        .map(|(id, &(a, b))| Line { id, from_sub: a, to_sub: b, reactance: rng.random_range(0.05..0.25), thermal_limit: 1.0 })
        .collect();
    let gen_sub = rng.random_range(2..n);
    let generators = vec![
        Generator { id: 0, sub: 0, kind: GenKind::Thermal, p_min: 0.0, p_max: 1000.0, ramp_limit: 1000.0, redispatchable: true, curtailable: false },
        Generator { id: 1, sub: gen_sub, kind: GenKind::Thermal, p_min: 0.0, p_max: 200.0, ramp_limit: 200.0, redispatchable: true, curtailable: false },
    ];
    let mut load_subs: Vec<usize> = (1..n).filter(|&s| s != gen_sub).collect();
    load_subs.shuffle(&mut rng);
    load_subs.truncate(rng.random_range(3..=4));
    load_subs.sort_unstable();
    let loads: Vec<Load> = load_subs.iter().enumerate().map(|(id, &sub)| Load { id, sub }).collect();
    let substations = (0..n).map(|id| Substation { id, name: None, position: None }).collect::<Vec<_>>();
    let spec0 =
        GridSpec::new(format!("two_step_{seed}"), substations.clone(), lines.clone(), generators.clone(), loads.clone(), Vec::<Storage>::new(), 0).ok()?;

    let base: Vec<f64> = loads.iter().map(|_| rng.random_range(20.0_f64..60.0).round()).collect();
    let wave_1: Vec<f64> = loads.iter().map(|_| if rng.random_bool(0.5) { rng.random_range(1.15..1.45) } else { 1.0 }).collect();
    let wave_2: Vec<f64> = loads.iter().map(|_| if rng.random_bool(0.5) { rng.random_range(1.15..1.45) } else { 1.0 }).collect();
    let gen_out = rng.random_range(0.0..0.5) * base.iter().sum::<f64>();
    let mut load_p = Vec::with_capacity(HORIZON + 1);
    for t in 0..=HORIZON {
        let row: Vec<f64> = base
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let ramp = |start: usize, w: f64| 1.0 + (w - 1.0) * ((t as f64 - start as f64) / RAMP).clamp(0.0, 1.0);
                let v = b * ramp(WAVE_1, wave_1[i]) * ramp(WAVE_2, wave_2[i]);
                (v * 100.0).round() / 100.0
            })
            .collect();
        load_p.push(row);
    }
    let gen_p_max = vec![vec![0.0, gen_out.round()]; HORIZON + 1];

    // limits sit a margin above the calm flows
    let calm = Chronics {
        name: "calm".into(),
        dt_minutes: 5.0,
        load_p: vec![load_p[0].clone(); 2],
        gen_p_max: gen_p_max[..2].to_vec(),
        forecast_noise: 0.0,
        planned_outages: vec![],
    };
    let ep = Episode::reset(Arc::new(spec0.clone()), Arc::new(calm), Arc::new(env_config()), 0).ok()?;
    let tight: Vec<usize> = (0..lines.len()).collect::<Vec<_>>().choose_multiple(&mut rng, 2).copied().collect();
    for (l, line) in lines.iter_mut().enumerate() {
        let f = ep.flow().flow[l].abs();
        let margin = if tight.contains(&l) { rng.random_range(1.1..1.3) } else { rng.random_range(1.6..2.4) };
        line.thermal_limit = (f * margin).max(12.0).round();
    }
    let spec = GridSpec::new(format!("two_step_{seed}"), substations, lines, generators, loads, Vec::<Storage>::new(), 0).ok()?;
    let chronics = Chronics { name: format!("two_step_{seed}"), dt_minutes: 5.0, load_p, gen_p_max, forecast_noise: 0.0, planned_outages: vec![] };
    chronics.validate(&spec).ok()?;
    let catalog = enumerate_unitary_actions(&spec, CatalogOptions::default());
    if catalog.len() < 3 {
        return None;
    }
    let mut reduced: Vec<usize> = (1..catalog.len()).collect();
    if reduced.len() > MAX_REDUCED {
        reduced.shuffle(&mut rng);
        reduced.truncate(MAX_REDUCED);
        reduced.sort_unstable();
    }
    Some(TwoStepCase { spec: Arc::new(spec), chronics: Arc::new(chronics), env: Arc::new(env_config()), catalog: Arc::new(catalog), reduced })
}

/// The fixed scripted instance: exactly one two-action sequence survives,
/// no single action does, and the greedy agent fails.
pub fn two_step_congestion() -> TwoStepCase {
    two_step_candidate(TWO_STEP_SEED).expect("fixed instance is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_instance_has_one_surviving_pair() {
        let c = two_step_congestion();
        assert!(c.reduced.len() <= MAX_REDUCED);
        let o = c.oracle(crate::SAFE_THRESHOLD);
        assert!(o.singles.is_empty());
        assert_eq!(o.pairs.len(), 1);
        assert!(!c.noop_survives());
        assert!(!c.greedy_survives(crate::SAFE_THRESHOLD));
    }

    #[test]
    fn candidates_are_seeded() {
        let a = two_step_candidate(5).unwrap();
        let b = two_step_candidate(5).unwrap();
        assert_eq!(a.spec, b.spec);
        assert_eq!(a.chronics, b.chronics);
        assert_eq!(a.reduced, b.reduced);
    }
}
