use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::action::{DispatchVector, EnvAction};
use super::chronics::Chronics;
use super::opponent::Opponent;
use super::reward::compute_reward;
use super::EnvConfig;
use crate::error::{EnvError, IllegalAction};
use crate::grid::{apply_topology_action, solve_dc_flow, FlowFailure, FlowSolution, GridSpec, Injections, TopologyAction, TopologyState};

const SLACK_TOLERANCE_MW: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OfflineReason {
    Agent,
    Overflow,
    Attack,
    Maintenance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "reason")]
pub enum LineState {
    Online,
    Offline(OfflineReason),
}

impl LineState {
    /// Offline lines that count against the reward.
    pub fn counts_offline(self) -> bool {
        matches!(self, LineState::Offline(OfflineReason::Agent | OfflineReason::Overflow))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    HorizonReached,
    BlackoutIslanding,
    BlackoutDivergence,
}

impl DoneReason {
    pub fn is_blackout(self) -> bool {
        !matches!(self, DoneReason::HorizonReached)
    }
}

/// Agent-visible state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub t: usize,
    pub horizon: usize,
    pub minute_of_day: f64,
    pub rho: Vec<f64>,
    pub flow: Vec<f64>,
    pub topology: TopologyState,
    pub line_state: Vec<LineState>,
    /// First step at which an attacked or maintained line may be reconnected.
    pub unavailable_until: Vec<usize>,
    pub gen_p: Vec<f64>,
    /// Available output (renewables) or schedule (dispatchable) this step.
    pub gen_p_max: Vec<f64>,
    pub load_p: Vec<f64>,
    pub storage_p: Vec<f64>,
    pub storage_charge: Vec<f64>,
    /// Standing redispatch offset per generator, MW.
    pub redispatch: Vec<f64>,
    pub curtailment_cap: Vec<Option<f64>>,
    pub overflow_age: Vec<u32>,
    pub reward: f64,
    pub done: bool,
}

impl Observation {
    pub fn rho_max(&self) -> f64 {
        self.rho.iter().copied().fold(0.0, f64::max)
    }

    pub fn line_connected(&self, line: usize) -> bool {
        self.topology.line_connected[line]
    }

    pub fn has_standing_dispatch(&self) -> bool {
        self.redispatch.iter().any(|&r| r != 0.0) || self.curtailment_cap.iter().any(Option::is_some)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Lines tripped by protection this step.
    pub disconnected: Vec<usize>,
    pub attacked: Option<usize>,
    /// Set when the requested action was refused and replaced by a no-op.
    pub illegal: Option<IllegalAction>,
    /// |actual − schedule| summed over redispatchable units, MW.
    pub redispatch_mw: f64,
    /// Available minus delivered renewable output, MW.
    pub curtailment_mw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub done_reason: Option<DoneReason>,
    pub info: StepInfo,
}

#[derive(Clone, Debug)]
struct ForecastTable {
    load_p: Vec<Vec<f64>>,
    gen_p_max: Vec<Vec<f64>>,
}

/// One running episode. Cloning is cheap: the grid, chronics and forecast
/// tables are shared.
#[derive(Clone, Debug)]
pub struct Episode {
    spec: Arc<GridSpec>,
    chronics: Arc<Chronics>,
    cfg: Arc<EnvConfig>,
    forecast: Option<Arc<ForecastTable>>,
    use_forecast: bool,
    opponent: Option<Opponent>,
    t: usize,
    topo: TopologyState,
    line_state: Vec<LineState>,
    unavailable_until: Vec<usize>,
    overflow_age: Vec<u32>,
    redispatch: Vec<f64>,
    curtail_cap: Vec<Option<f64>>,
    storage_charge: Vec<f64>,
    injections: Injections,
    flow: FlowSolution,
    reward: f64,
    done: Option<DoneReason>,
}

struct Validated {
    topology: Option<TopologyAction>,
    redispatch: Option<Vec<f64>>,
    curtail: Option<Vec<Option<f64>>>,
    storage: Vec<f64>,
}

impl Episode {
    /// Start an episode at `t = 0` with the default topology.
    pub fn reset(spec: Arc<GridSpec>, chronics: Arc<Chronics>, cfg: Arc<EnvConfig>, seed: u64) -> Result<Self, EnvError> {
        chronics.validate(&spec)?;
        for &l in &cfg.opponent.attackable_lines {
            if l >= spec.lines.len() {
                return Err(EnvError::Chronics(format!("attackable line {l} does not exist")));
            }
        }
        let forecast = if chronics.forecast_noise > 0.0 { Some(Arc::new(build_forecast(&spec, &chronics, seed))) } else { None };
        let opponent = Some(Opponent::new(&cfg.opponent, chronics.horizon(), seed));
        let n_lines = spec.lines.len();
        let n_gen = spec.generators.len();
        let topo = TopologyState::default_for(&spec);
        let mut ep = Episode {
            injections: Injections::zeros(&spec),
            flow: FlowSolution {
                theta: vec![],
                flow: vec![0.0; n_lines],
                rho: vec![0.0; n_lines],
                converged: true,
                failure: None,
                islanded_generators: vec![],
                islanded_loads: vec![],
                islanded_storages: vec![],
                slack_p: 0.0,
            },
            storage_charge: spec.storages.iter().map(|s| 0.5 * s.energy_capacity).collect(),
            spec,
            chronics,
            cfg,
            forecast,
            use_forecast: false,
            opponent,
            t: 0,
            topo,
            line_state: vec![LineState::Online; n_lines],
            unavailable_until: vec![0; n_lines],
            overflow_age: vec![0; n_lines],
            redispatch: vec![0.0; n_gen],
            curtail_cap: vec![None; n_gen],
            reward: 1.0,
            done: None,
        };
        ep.start_outages(0);
        let storage = vec![0.0; ep.spec.storages.len()];
        let (inj, _, _) = ep.injections_at(0, &storage);
        ep.flow = solve_dc_flow(&ep.spec, &ep.topo, &inj)?;
        ep.injections = inj;
        ep.reward = compute_reward(&ep.flow.rho, ep.n_offline());
        if let Some(f) = ep.flow.failure {
            ep.done = Some(match f {
                FlowFailure::Islanded => DoneReason::BlackoutIslanding,
                FlowFailure::Diverged => DoneReason::BlackoutDivergence,
            });
        }
        Ok(ep)
    }

    pub fn spec(&self) -> &Arc<GridSpec> {
        &self.spec
    }

    pub fn chronics(&self) -> &Arc<Chronics> {
        &self.chronics
    }

    pub fn config(&self) -> &Arc<EnvConfig> {
        &self.cfg
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn horizon(&self) -> usize {
        self.chronics.horizon()
    }

    pub fn is_done(&self) -> bool {
        self.done.is_some()
    }

    pub fn done_reason(&self) -> Option<DoneReason> {
        self.done
    }

    pub fn topology(&self) -> &TopologyState {
        &self.topo
    }

    pub fn flow(&self) -> &FlowSolution {
        &self.flow
    }

    pub fn rho_max(&self) -> f64 {
        self.flow.rho_max()
    }

    pub fn reward(&self) -> f64 {
        self.reward
    }

    pub fn is_forecast(&self) -> bool {
        self.use_forecast
    }

    pub fn attack_schedule(&self) -> &[usize] {
        self.opponent.as_ref().map_or(&[], |o| o.schedule())
    }

    fn n_offline(&self) -> usize {
        self.line_state.iter().filter(|s| s.counts_offline()).count()
    }

    pub fn observation(&self) -> Observation {
        let t_row = self.t.min(self.chronics.horizon());
        let (_, gen_row) = self.row(t_row);
        Observation {
            t: self.t,
            horizon: self.chronics.horizon(),
            minute_of_day: (self.t as f64 * self.chronics.dt_minutes) % 1440.0,
            rho: self.flow.rho.clone(),
            flow: self.flow.flow.clone(),
            topology: self.topo.clone(),
            line_state: self.line_state.clone(),
            unavailable_until: self.unavailable_until.clone(),
            gen_p: self.delivered_gen_p(),
            gen_p_max: gen_row.to_vec(),
            load_p: self.injections.load_p.clone(),
            storage_p: self.injections.storage_p.clone(),
            storage_charge: self.storage_charge.clone(),
            redispatch: self.redispatch.clone(),
            curtailment_cap: self.curtail_cap.clone(),
            overflow_age: self.overflow_age.clone(),
            reward: self.reward,
            done: self.done.is_some(),
        }
    }

    fn delivered_gen_p(&self) -> Vec<f64> {
        let mut p = self.injections.gen_p.clone();
        p[self.spec.slack] = self.flow.slack_p;
        p
    }

    /// Copy of this episode stepping on forecasts and without the opponent.
    pub fn forecast_copy(&self) -> Episode {
        let mut copy = self.clone();
        copy.use_forecast = true;
        copy.opponent = None;
        copy
    }

    /// Forecast what `action` would do; the episode itself is untouched.
    pub fn simulate(&self, action: &EnvAction) -> Result<StepResult, EnvError> {
        self.forecast_copy().step(action)
    }

    fn row(&self, t: usize) -> (&[f64], &[f64]) {
        match (&self.forecast, self.use_forecast) {
            (Some(f), true) => (&f.load_p[t], &f.gen_p_max[t]),
            _ => (&self.chronics.load_p[t], &self.chronics.gen_p_max[t]),
        }
    }

    /// Injections for row `t` given the standing offsets and caps. Returns
    /// the injections plus redispatch and curtailment volumes.
    fn injections_at(&self, t: usize, storage_p: &[f64]) -> (Injections, f64, f64) {
        self.injections_with(t, &self.redispatch, &self.curtail_cap, storage_p)
    }

    fn injections_with(&self, t: usize, redispatch: &[f64], curtail_cap: &[Option<f64>], storage_p: &[f64]) -> (Injections, f64, f64) {
        let (load_row, gen_row) = self.row(t);
        let mut gen_p = vec![0.0; self.spec.generators.len()];
        let mut redispatch_mw = 0.0;
        let mut curtail_mw = 0.0;
        for g in &self.spec.generators {
            let base = gen_row[g.id];
            gen_p[g.id] = if g.curtailable {
                let actual = match curtail_cap[g.id] {
                    Some(cap) => base.min(cap),
                    None => base,
                };
                curtail_mw += base - actual;
                actual
            } else if g.id == self.spec.slack {
                base
            } else {
                let actual = (base + redispatch[g.id]).clamp(g.p_min, g.p_max);
                redispatch_mw += (actual - base).abs();
                actual
            };
        }
        let inj = Injections { gen_p, load_p: load_row.to_vec(), storage_p: storage_p.to_vec() };
        (inj, redispatch_mw, curtail_mw)
    }

    fn slack_estimate(&self, inj: &Injections) -> f64 {
        let others: f64 = inj.gen_p.iter().enumerate().filter(|&(g, _)| g != self.spec.slack).map(|(_, p)| p).sum();
        inj.load_p.iter().sum::<f64>() + inj.storage_p.iter().sum::<f64>() - others
    }

    fn validate(&self, action: &EnvAction) -> Result<Validated, IllegalAction> {
        let spec = &*self.spec;
        let mut v = Validated { topology: None, redispatch: None, curtail: None, storage: vec![0.0; spec.storages.len()] };
        if let Some(ta) = action.topology_part() {
            if let TopologyAction::SetLine { line, connected: true } = ta {
                if *line < spec.lines.len() && self.t + 1 < self.unavailable_until[*line] {
                    if matches!(self.line_state[*line], LineState::Offline(OfflineReason::Attack | OfflineReason::Maintenance)) {
                        return Err(IllegalAction::LineUnavailable(*line));
                    }
                }
            }
            // checks cooldown and target validity
            apply_topology_action(spec, &self.topo, ta, &self.cfg.cooldown)?;
            if !ta.is_noop() {
                v.topology = Some(ta.clone());
            }
        }
        if let Some(d) = action.dispatch_part() {
            let next = self.t + 1;
            let (_, gen_row) = self.row(next);
            let redisp_ids = spec.redispatchable();
            if !d.redispatch.is_empty() {
                if d.redispatch.len() != redisp_ids.len() {
                    return Err(IllegalAction::Malformed(format!("{} redispatch entries for {} units", d.redispatch.len(), redisp_ids.len())));
                }
                let mut offsets = self.redispatch.clone();
                for (&g, &delta) in redisp_ids.iter().zip(&d.redispatch) {
                    if !delta.is_finite() {
                        return Err(IllegalAction::Malformed("non-finite redispatch".into()));
                    }
                    let gen = &spec.generators[g];
                    let delta = delta.clamp(-gen.ramp_limit, gen.ramp_limit);
                    let sched = gen_row[g];
                    offsets[g] = (offsets[g] + delta).clamp(gen.p_min - sched, gen.p_max - sched);
                }
                v.redispatch = Some(offsets);
            }
            if !d.curtailment.is_empty() {
                let curt_ids = spec.curtailable();
                if d.curtailment.len() != curt_ids.len() {
                    return Err(IllegalAction::Malformed(format!("{} curtailment entries for {} units", d.curtailment.len(), curt_ids.len())));
                }
                let mut caps = self.curtail_cap.clone();
                for (&g, &cap) in curt_ids.iter().zip(&d.curtailment) {
                    if cap.is_nan() {
                        return Err(IllegalAction::Malformed("NaN curtailment".into()));
                    }
                    let p_max = spec.generators[g].p_max;
                    caps[g] = if cap >= p_max { None } else { Some(cap.max(0.0)) };
                }
                v.curtail = Some(caps);
            }
            if !d.storage.is_empty() {
                if d.storage.len() != spec.storages.len() {
                    return Err(IllegalAction::Malformed("storage vector length mismatch".into()));
                }
                let hours = self.chronics.dt_minutes / 60.0;
                for (i, (s, &p)) in spec.storages.iter().zip(&d.storage).enumerate() {
                    if !p.is_finite() {
                        return Err(IllegalAction::Malformed("non-finite storage setpoint".into()));
                    }
                    let p = p.clamp(-s.max_discharge, s.max_charge);
                    let room = (s.energy_capacity - self.storage_charge[i]) / hours;
                    let avail = self.storage_charge[i] / hours;
                    v.storage[i] = p.clamp(-avail, room);
                }
            }
            // the slack must be able to absorb the imbalance
            let (before, _, _) = self.injections_at(next, &vec![0.0; spec.storages.len()]);
            let (after, _, _) =
                self.injections_with(next, v.redispatch.as_deref().unwrap_or(&self.redispatch), v.curtail.as_deref().unwrap_or(&self.curtail_cap), &v.storage);
            let slack = &spec.generators[spec.slack];
            let violation = |p: f64| (slack.p_min - p).max(p - slack.p_max).max(0.0);
            let vb = violation(self.slack_estimate(&before));
            let va = violation(self.slack_estimate(&after));
            if va > SLACK_TOLERANCE_MW && va > vb + SLACK_TOLERANCE_MW {
                return Err(IllegalAction::Infeasible(format!("slack generator would exceed its limits by {va:.2} MW")));
            }
        }
        Ok(v)
    }

    fn start_outages(&mut self, t: usize) {
        let chronics = Arc::clone(&self.chronics);
        for o in chronics.planned_outages.iter().filter(|o| o.start == t) {
            self.topo.line_connected[o.line] = false;
            self.line_state[o.line] = LineState::Offline(OfflineReason::Maintenance);
            self.unavailable_until[o.line] = o.start + o.duration;
            self.overflow_age[o.line] = 0;
        }
    }

    /// Advance one step. Illegal actions are replaced by a no-op and reported
    /// in [`StepInfo::illegal`].
    pub fn step(&mut self, action: &EnvAction) -> Result<StepResult, EnvError> {
        if self.done.is_some() {
            return Err(EnvError::EpisodeDone);
        }
        let spec = Arc::clone(&self.spec);
        let next = self.t + 1;
        let mut info = StepInfo::default();

        // (1) validate
        let validated = match self.validate(action) {
            Ok(v) => v,
            Err(e) => {
                info.illegal = Some(e);
                Validated { topology: None, redispatch: None, curtail: None, storage: vec![0.0; spec.storages.len()] }
            }
        };
        let mut sub_set = None;
        let mut line_set = None;

        // (2) topology
        if let Some(ta) = &validated.topology {
            self.topo = apply_topology_action(&spec, &self.topo, ta, &self.cfg.cooldown).expect("validated topology action applies");
            match ta {
                TopologyAction::SetBus { substation, .. } => sub_set = Some(*substation),
                TopologyAction::SetLine { line, connected } => {
                    line_set = Some(*line);
                    if *connected {
                        self.line_state[*line] = LineState::Online;
                    } else if self.line_state[*line] == LineState::Online {
                        self.line_state[*line] = LineState::Offline(OfflineReason::Agent);
                    }
                }
                TopologyAction::NoOp => {}
            }
        }

        // (3) dispatch
        if let Some(r) = validated.redispatch {
            self.redispatch = r;
        }
        if let Some(c) = validated.curtail {
            self.curtail_cap = c;
        }
        let hours = self.chronics.dt_minutes / 60.0;
        for (i, p) in validated.storage.iter().enumerate() {
            self.storage_charge[i] = (self.storage_charge[i] + p * hours).clamp(0.0, spec.storages[i].energy_capacity);
        }
        let (inj, redispatch_mw, curtail_mw) = self.injections_at(next, &validated.storage);
        info.redispatch_mw = redispatch_mw;
        info.curtailment_mw = curtail_mw;

        // (4) maintenance and opponent
        self.start_outages(next);
        if let Some(opp) = &mut self.opponent {
            let state = &self.line_state;
            if let Some(l) = opp.attack_at(next, &self.cfg.opponent.attackable_lines, |l| state[l] == LineState::Online) {
                self.topo.line_connected[l] = false;
                self.line_state[l] = LineState::Offline(OfflineReason::Attack);
                self.unavailable_until[l] = next + self.cfg.opponent.duration;
                info.attacked = Some(l);
            }
        }

        // (5, 6) solve and protection cascade
        let mut tripped_lines = Vec::new();
        let mut blackout = None;
        let flow = loop {
            let sol = solve_dc_flow(&spec, &self.topo, &inj)?;
            if let Some(f) = sol.failure {
                blackout = Some(match f {
                    FlowFailure::Islanded => DoneReason::BlackoutIslanding,
                    FlowFailure::Diverged => DoneReason::BlackoutDivergence,
                });
                break sol;
            }
            let trip: Vec<usize> = (0..spec.lines.len())
                .filter(|&l| {
                    self.topo.line_connected[l]
                        && (sol.rho[l] > self.cfg.hard_overflow || (sol.rho[l] > 1.0 && self.overflow_age[l] + 1 >= self.cfg.soft_overflow_steps))
                })
                .collect();
            if trip.is_empty() {
                break sol;
            }
            for &l in &trip {
                self.topo.line_connected[l] = false;
                self.line_state[l] = LineState::Offline(OfflineReason::Overflow);
                self.topo.line_cooldown[l] = self.cfg.overflow_reconnect_cooldown;
            }
            tripped_lines.extend(trip);
        };
        info.disconnected = tripped_lines.clone();

        // (7) reward
        self.flow = flow;
        self.injections = inj;
        self.reward = compute_reward(&self.flow.rho, self.n_offline());

        // (8) cooldowns, overflow ages, time
        for (s, cd) in self.topo.sub_cooldown.iter_mut().enumerate() {
            if Some(s) != sub_set && *cd > 0 {
                *cd -= 1;
            }
        }
        for (l, cd) in self.topo.line_cooldown.iter_mut().enumerate() {
            if Some(l) != line_set && !tripped_lines.contains(&l) && *cd > 0 {
                *cd -= 1;
            }
        }
        for l in 0..spec.lines.len() {
            self.overflow_age[l] = if self.topo.line_connected[l] && self.flow.rho[l] > 1.0 { self.overflow_age[l] + 1 } else { 0 };
        }
        self.t = next;
        self.done = blackout.or(if self.t >= self.chronics.horizon() { Some(DoneReason::HorizonReached) } else { None });
        Ok(StepResult { observation: self.observation(), reward: self.reward, done: self.done.is_some(), done_reason: self.done, info })
    }

    /// Maximum line load of the current state with `line` out of service,
    /// `None` if losing it splits the grid or the solve fails.
    pub fn contingency_rho_max(&self, line: usize) -> Option<f64> {
        if line >= self.spec.lines.len() || !self.topo.line_connected[line] {
            return Some(self.rho_max());
        }
        let mut topo = self.topo.clone();
        topo.line_connected[line] = false;
        let sol = solve_dc_flow(&self.spec, &topo, &self.injections).ok()?;
        if sol.failure.is_some() {
            return None;
        }
        Some(sol.rho_max())
    }

    /// Dispatch vector that removes standing redispatch (within ramp limits)
    /// and lifts every curtailment cap. `None` when nothing is standing.
    pub fn release_dispatch(&self) -> Option<DispatchVector> {
        let spec = &*self.spec;
        let ids = spec.redispatchable();
        let standing = ids.iter().any(|&g| self.redispatch[g] != 0.0) || self.curtail_cap.iter().any(Option::is_some);
        if !standing {
            return None;
        }
        let redispatch = ids
            .iter()
            .map(|&g| {
                let r = spec.generators[g].ramp_limit;
                (-self.redispatch[g]).clamp(-r, r)
            })
            .collect();
        let curtailment = spec.curtailable().iter().map(|&g| spec.generators[g].p_max).collect();
        Some(DispatchVector { redispatch, curtailment, storage: vec![] })
    }
}

fn build_forecast(spec: &GridSpec, ch: &Chronics, seed: u64) -> ForecastTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let noise = Normal::new(0.0, ch.forecast_noise).expect("finite noise");
    let mut load_p = ch.load_p.clone();
    let mut gen_p_max = ch.gen_p_max.clone();
    for (lr, gr) in load_p.iter_mut().zip(gen_p_max.iter_mut()) {
        for v in lr.iter_mut() {
            *v = (*v * (1.0 + noise.sample(&mut rng))).max(0.0);
        }
        for (g, v) in gr.iter_mut().enumerate() {
            if spec.generators[g].curtailable {
                *v = (*v * (1.0 + noise.sample(&mut rng))).clamp(0.0, spec.generators[g].p_max);
            }
        }
    }
    ForecastTable { load_p, gen_p_max }
}
