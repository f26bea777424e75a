//! Cross-entropy search over redispatch, curtailment and storage setpoints,
//! and the cascade that combines it with ranked topology candidates.


use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{congestion_cost, DispatchVector, EnvAction, Episode, StepResult};
use crate::grid::TopologyAction;

/// Congestion cost of a simulated step: sum of ρ over overloaded lines, else
/// ρ_max, and a sentinel for a blackout.
pub fn dispatch_cost(sim: &StepResult) -> f64 {
    congestion_cost(sim)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CEConfig {
    pub population: usize,
    pub elite_fraction: f64,
    pub iterations: usize,
    /// Initial standard deviation as a fraction of each coordinate's range
    /// (the ramp limit for redispatch).
    pub init_std: f64,
    /// Score added per MW moved, so that among resolving vectors the
    /// cheapest wins.
    pub mw_penalty: f64,
    /// Congestion below this line load is not rewarded further.
    pub safe_threshold: f64,
    pub seed: u64,
}

impl Default for CEConfig {
    fn default() -> Self {
        CEConfig { population: 32, elite_fraction: 0.2, iterations: 10, init_std: 0.25, mw_penalty: 1e-3, safe_threshold: crate::SAFE_THRESHOLD, seed: 0 }
    }
}

impl CEConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.population < 2 {
            return Err("population must be at least 2".into());
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction < 1.0) {
            return Err(format!("elite fraction must lie in (0, 1), got {}", self.elite_fraction));
        }
        if self.iterations == 0 || !(self.init_std > 0.0) {
            return Err("iterations and initial std must be positive".into());
        }
        Ok(())
    }

    fn n_elite(&self) -> usize {
        ((self.population as f64 * self.elite_fraction).round() as usize).clamp(1, self.population - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Coord {
    Redispatch,
    /// Output reduction for a curtailable unit below what is available.
    Curtail {
        available: f64,
    },
    Storage,
}

/// Box bounds of the dispatch space for the step after `ep`.
#[derive(Clone, Debug, PartialEq)]
pub struct DispatchSpace {
    kinds: Vec<Coord>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    n_redispatch: usize,
    n_curtail: usize,
}

impl DispatchSpace {
    pub fn new(ep: &Episode) -> Self {
        let spec = ep.spec();
        let obs = ep.observation();
        let next = (ep.t() + 1).min(ep.horizon());
        let sched = &ep.chronics().gen_p_max[next];
        let (mut kinds, mut lo, mut hi) = (vec![], vec![], vec![]);
        let redisp = spec.redispatchable();
        for &g in &redisp {
            let gen = &spec.generators[g];
            let offset = obs.redispatch[g];
            // keep the resulting offset inside the unit's capacity
            let l = (-gen.ramp_limit).max(gen.p_min - sched[g] - offset).min(0.0);
            let h = gen.ramp_limit.min(gen.p_max - sched[g] - offset).max(0.0);
            kinds.push(Coord::Redispatch);
            lo.push(l);
            hi.push(h);
        }
        let curt = spec.curtailable();
        for &g in &curt {
            let available = sched[g].max(0.0);
            kinds.push(Coord::Curtail { available });
            lo.push(0.0);
            hi.push(available);
        }
        let hours = ep.chronics().dt_minutes / 60.0;
        for (i, s) in spec.storages.iter().enumerate() {
            let charge = obs.storage_charge[i];
            kinds.push(Coord::Storage);
            lo.push((-s.max_discharge).max(-charge / hours).min(0.0));
            hi.push(s.max_charge.min((s.energy_capacity - charge) / hours).max(0.0));
        }
        DispatchSpace { kinds, lo, hi, n_redispatch: redisp.len(), n_curtail: curt.len() }
    }

    pub fn dim(&self) -> usize {
        self.kinds.len()
    }

    pub fn clip(&self, x: &mut [f64]) {
        for ((v, l), h) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*l, *h);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| l <= v && v <= h)
    }

    /// Dispatch vector for a point of the space. A zero curtailment
    /// coordinate lifts the cap.
    pub fn to_dispatch(&self, ep: &Episode, x: &[f64]) -> DispatchVector {
        let spec = ep.spec();
        let curt = spec.curtailable();
        let redispatch = x[..self.n_redispatch].to_vec();
        let curtailment = if self.n_curtail == 0 {
            vec![]
        } else {
            x[self.n_redispatch..self.n_redispatch + self.n_curtail]
                .iter()
                .zip(&self.kinds[self.n_redispatch..])
                .zip(&curt)
                .map(|((&c, k), &g)| match k {
                    Coord::Curtail { available } if c > 1e-9 => available - c,
                    _ => spec.generators[g].p_max,
                })
                .collect()
        };
        let storage = x[self.n_redispatch + self.n_curtail..].to_vec();
        DispatchVector { redispatch, curtailment, storage }
    }

    fn mw(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v.abs()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CEResult {
    pub dispatch: DispatchVector,
    /// Point of the dispatch space behind `dispatch`.
    pub point: Vec<f64>,
    /// Congestion cost of the simulated best point.
    pub cost: f64,
    /// Shaped score the optimizer minimized.
    pub score: f64,
    /// Best-ever score after each iteration.
    pub history: Vec<f64>,
    /// Every sample blacked out; `dispatch` is the zero vector.
    pub failed: bool,
    pub simulations: usize,
}

/// Simulated congestion cost and shaped score of one dispatch point.
fn evaluate(ep: &Episode, space: &DispatchSpace, base: Option<&TopologyAction>, x: &[f64], cfg: &CEConfig) -> (f64, f64) {
    let d = space.to_dispatch(ep, x);
    let action = match base {
        Some(t) => EnvAction::combined(t.clone(), d),
        None => EnvAction::combined(TopologyAction::NoOp, d),
    };
    let cost = match ep.simulate(&action) {
        Ok(r) if r.info.illegal.is_none() => dispatch_cost(&r),
        _ => crate::env::BLACKOUT_COST,
    };
    let score = cost.max(cfg.safe_threshold) + cfg.mw_penalty * space.mw(x);
    (cost, score)
}

/// Cross-entropy minimization of the simulated congestion cost over the
/// dispatch space, optionally on top of a topology action. The zero vector
/// is part of the first population, and the best point ever seen is
/// returned.
pub fn ce_optimize(ep: &Episode, base: Option<&TopologyAction>, cfg: &CEConfig) -> CEResult {
    let space = DispatchSpace::new(ep);
    let dim = space.dim();
    let zero = vec![0.0; dim];
    let (zc, zs) = evaluate(ep, &space, base, &zero, cfg);
    let mut best = (zero.clone(), zc, zs);
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut simulations = 1;
    if dim == 0 {
        history.resize(cfg.iterations, zs);
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut mean = zero.clone();
        let mut std: Vec<f64> = space.lo.iter().zip(&space.hi).map(|(l, h)| cfg.init_std * (h - l).max(1e-6)).collect();
        let floor: Vec<f64> = std.iter().map(|s| s * 1e-3).collect();
        let n_elite = cfg.n_elite();
        for it in 0..cfg.iterations {
            let mut pop: Vec<Vec<f64>> = (0..cfg.population)
                .map(|_| {
                    let mut x: Vec<f64> = (0..dim)
                        .map(|i| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            mean[i] + std[i] * z
                        })
                        .collect();
                    space.clip(&mut x);
                    x
                })
                .collect();
            if it == 0 {
                pop[0] = zero.clone();
            }
            let scored: Vec<(f64, f64)> = pop.par_iter().map(|x| evaluate(ep, &space, base, x, cfg)).collect();
            simulations += pop.len();
            let mut order: Vec<usize> = (0..pop.len()).collect();
            order.sort_by(|&a, &b| scored[a].1.total_cmp(&scored[b].1).then(a.cmp(&b)));
            let top = order[0];
            if scored[top].1 < best.2 {
                best = (pop[top].clone(), scored[top].0, scored[top].1);
            }
            history.push(best.2);
            let elite = &order[..n_elite];
            for i in 0..dim {
                let m = elite.iter().map(|&e| pop[e][i]).sum::<f64>() / n_elite as f64;
                let v = elite.iter().map(|&e| (pop[e][i] - m).powi(2)).sum::<f64>() / n_elite as f64;
                mean[i] = m;
                std[i] = v.sqrt().max(floor[i]);
            }
        }
    }
    let failed = best.1 >= crate::env::BLACKOUT_COST;
    let point = if failed { zero } else { best.0 };
    CEResult { dispatch: space.to_dispatch(ep, &point), cost: if failed { zc } else { best.1 }, score: best.2, point, history, failed, simulations }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CombineConfig {
    /// Topology candidates tried with superimposed dispatch.
    pub top_n: usize,
    pub safe_threshold: f64,
    pub ce: CEConfig,
}

impl Default for CombineConfig {
    fn default() -> Self {
        CombineConfig { top_n: 5, safe_threshold: crate::SAFE_THRESHOLD, ce: CEConfig::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineChoice {
    Topology,
    Dispatch,
    Combined,
    /// Nothing beat the no-op.
    NoOp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombineResult {
    pub action: EnvAction,
    pub choice: CombineChoice,
    /// Rank of the topology candidate carried by the action.
    pub chosen_index: Option<usize>,
    pub cost: f64,
    pub noop_cost: f64,
    pub redispatch_mw: f64,
    pub simulations: usize,
}

fn simulated_cost(ep: &Episode, a: &EnvAction) -> Option<(f64, f64)> {
    match ep.simulate(a) {
        Ok(r) if r.info.illegal.is_none() => Some((dispatch_cost(&r), r.observation.rho_max())),
        _ => None,
    }
}

/// Decision cascade: the best topology candidate alone if it brings every
/// line below the safe threshold, else dispatch alone if that does, else the
/// least congested superposition of dispatch on one of the top candidates.
/// Never returns an action whose simulated cost exceeds the no-op's.
pub fn combine(ep: &Episode, candidates: &[TopologyAction], cfg: &CombineConfig) -> CombineResult {
    let thr = cfg.safe_threshold;
    let mut sims = 1;
    let noop_cost = simulated_cost(ep, &EnvAction::NoOp).map_or(crate::env::BLACKOUT_COST, |c| c.0);
    let resolved = |c: Option<(f64, f64)>| c.is_some_and(|(cost, rho)| rho < thr && cost < crate::env::BLACKOUT_COST && cost <= noop_cost);
    let result = |action: EnvAction, choice, chosen_index, cost, sims| CombineResult {
        redispatch_mw: action.dispatch_part().map_or(0.0, |d| d.redispatch_mw()),
        action,
        choice,
        chosen_index,
        cost,
        noop_cost,
        simulations: sims,
    };

    // options as (cost, action, choice, index)
    let mut options: Vec<(f64, EnvAction, CombineChoice, Option<usize>)> = Vec::new();
    if let Some(first) = candidates.first() {
        let a = EnvAction::topology(first.clone());
        let c = simulated_cost(ep, &a);
        sims += 1;
        if resolved(c) {
            return result(a, CombineChoice::Topology, Some(0), c.map_or(0.0, |c| c.0), sims);
        }
        if let Some((cost, _)) = c {
            options.push((cost, a, CombineChoice::Topology, Some(0)));
        }
    }

    let mut ce_cfg = cfg.ce.clone();
    ce_cfg.safe_threshold = thr;
    let d = ce_optimize(ep, None, &ce_cfg);
    sims += d.simulations;
    if !d.failed && !d.dispatch.is_empty() {
        let a = EnvAction::dispatch(d.dispatch.clone());
        let c = simulated_cost(ep, &a);
        sims += 1;
        if resolved(c) {
            return result(a, CombineChoice::Dispatch, None, c.map_or(0.0, |c| c.0), sims);
        }
        if let Some((cost, _)) = c {
            options.push((cost, a, CombineChoice::Dispatch, None));
        }
    }

    let mut best_combo: Option<(f64, f64, EnvAction, usize)> = None;
    for (i, t) in candidates.iter().take(cfg.top_n).enumerate() {
        if t.is_noop() {
            continue;
        }
        let mut c_cfg = ce_cfg.clone();
        c_cfg.seed = ce_cfg.seed.wrapping_add(i as u64 + 1);
        let r = ce_optimize(ep, Some(t), &c_cfg);
        sims += r.simulations;
        let a = EnvAction::combined(t.clone(), r.dispatch.clone());
        let Some((cost, _)) = simulated_cost(ep, &a) else { continue };
        sims += 1;
        let key = cost.max(thr) + ce_cfg.mw_penalty * r.point.iter().map(|v| v.abs()).sum::<f64>();
        if best_combo.as_ref().is_none_or(|b| key < b.1) {
            best_combo = Some((cost, key, a, i));
        }
    }
    if let Some((cost, _, a, i)) = best_combo {
        let choice = if a.dispatch_part().is_some() { CombineChoice::Combined } else { CombineChoice::Topology };
        options.push((cost, a, choice, Some(i)));
    }

    // combinations first so they win ties with the single measures
    options.sort_by(|a, b| a.0.total_cmp(&b.0).then((b.2 == CombineChoice::Combined).cmp(&(a.2 == CombineChoice::Combined))));
    match options.into_iter().next() {
        Some((cost, a, choice, idx)) if cost < noop_cost => result(a, choice, idx, cost, sims),
        _ => result(EnvAction::NoOp, CombineChoice::NoOp, None, noop_cost, sims),
    }
}
