use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_epoch, Adam, EpochStats, FeatureSpec, OptimConfig, Policy, ReplayBuffer, TrainingSample};
use crate::actions::{ActionCatalog, ReducedActionSet};
use crate::control::safe_state_action;
use crate::env::{Chronics, EnvAction, EnvConfig, Episode};
use crate::error::ArtifactError;
use crate::grid::GridSpec;
use crate::search::{mcts_search, GridDomain, SearchConfig, SelectionMode};

pub const METRICS_HEADER: &str =
    "epoch,steps_survived_ratio,substations_per_congestion,simulations_to_stop,search_depth,train_loss,heldout_loss,samples,episodes,episodes_dropped";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Training epochs; one extra rollout round measures the untrained
    /// policy first.
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub hidden: Vec<usize>,
    pub optim: OptimConfig,
    pub buffer_capacity: usize,
    pub heldout_every: usize,
    pub search: SearchConfig,
    pub safe_threshold: f64,
    /// Truncate rollouts after this many steps.
    pub max_steps: Option<usize>,
    pub recovery: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            episodes_per_epoch: 8,
            hidden: vec![256, 256],
            optim: OptimConfig::default(),
            buffer_capacity: 50_000,
            heldout_every: 10,
            search: SearchConfig { selection: SelectionMode::VisitSoftmax, n_simulations_max: 100, ..SearchConfig::default() },
            safe_threshold: crate::SAFE_THRESHOLD,
            max_steps: None,
            recovery: true,
            seed: 0,
        }
    }
}

/// One row of the training log. Epoch 0 is the untrained policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps_survived_ratio: f64,
    pub substations_per_congestion: f64,
    pub simulations_to_stop: f64,
    pub search_depth: f64,
    pub train_loss: f64,
    pub heldout_loss: f64,
    pub samples: usize,
    pub episodes: usize,
    pub episodes_dropped: usize,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{}",
            self.epoch,
            self.steps_survived_ratio,
            self.substations_per_congestion,
            self.simulations_to_stop,
            self.search_depth,
            self.train_loss,
            self.heldout_loss,
            self.samples,
            self.episodes,
            self.episodes_dropped
        );
        s
    }
}

#[derive(Debug)]
pub struct TrainingRun {
    pub policy: Policy,
    pub metrics: Vec<EpochMetrics>,
    /// One checkpoint per published snapshot, when an output directory was
    /// given.
    pub checkpoints: Vec<PathBuf>,
}

#[derive(Default)]
struct Rollout {
    samples: Vec<TrainingSample>,
    survived: usize,
    horizon: usize,
    congestion_subs: Vec<usize>,
    simulations: Vec<usize>,
    depths: Vec<usize>,
}

struct Ctx<'a> {
    spec: &'a Arc<GridSpec>,
    env_cfg: &'a Arc<EnvConfig>,
    catalog: &'a ActionCatalog,
    candidates: &'a [usize],
    cfg: &'a TrainConfig,
}

fn rollout(ctx: &Ctx, policy: &Policy, chronics: &Arc<Chronics>, seed: u64, episode: u64) -> Result<Rollout, String> {
    let mut ep = Episode::reset(ctx.spec.clone(), chronics.clone(), ctx.env_cfg.clone(), seed).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let limit = ctx.cfg.max_steps.unwrap_or(usize::MAX).min(ep.horizon());
    let mut out = Rollout { horizon: limit, ..Default::default() };
    let domain = GridDomain {
        catalog: ctx.catalog,
        candidates: ctx.candidates,
        prior: policy,
        safe_threshold: ctx.cfg.safe_threshold,
        max_fast_forward: ctx.cfg.search.max_fast_forward,
        use_forecast: ctx.cfg.search.use_forecast,
        recovery: ctx.cfg.recovery,
    };
    let positions: Vec<usize> = (0..ctx.candidates.len()).collect();
    let mut congestion: Option<BTreeSet<usize>> = None;
    while !ep.is_done() && ep.t() < limit {
        let action = if ep.rho_max() < ctx.cfg.safe_threshold {
            if let Some(subs) = congestion.take() {
                out.congestion_subs.push(subs.len());
            }
            safe_state_action(&ep, ctx.catalog, ctx.cfg.safe_threshold, ctx.cfg.recovery)
        } else {
            let touched = congestion.get_or_insert_with(BTreeSet::new);
            let mut scfg = ctx.cfg.search.clone();
            scfg.seed = rng.next_u64();
            let res = mcts_search(&domain, ep.clone(), &scfg);
            out.simulations.push(res.simulations);
            out.depths.push(res.max_depth);
            let obs = ep.observation();
            let mask: Vec<bool> = ctx.candidates.iter().map(|&id| ctx.catalog.is_legal(&obs, id)).collect();
            let visits = res.visit_distribution(&positions);
            if let Some(s) = TrainingSample::new(policy.features.extract(&obs), mask, &visits, episode, ep.t()) {
                out.samples.push(s);
            }
            match res.action {
                Some(pos) => {
                    let ta = ctx.catalog.action(ctx.candidates[pos]).clone();
                    if let Some(sub) = ta.substation() {
                        touched.insert(sub);
                    }
                    EnvAction::topology(ta)
                }
                None => EnvAction::NoOp,
            }
        };
        ep.step(&action).map_err(|e| e.to_string())?;
    }
    if let Some(subs) = congestion.take() {
        out.congestion_subs.push(subs.len());
    }
    out.survived = if ep.done_reason().is_some_and(|d| d.is_blackout()) { ep.t().saturating_sub(1) } else { ep.t() };
    Ok(out)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn episode_seed(base: u64, round: usize, i: usize) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(base.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((round as u64) << 32) ^ i as u64);
    r.next_u64()
}

/// Behavioural cloning of the search on its own rollouts.
///
/// Each round runs `episodes_per_epoch` rollouts in parallel against one
/// immutable policy snapshot, then the learner trains on the buffer and
/// publishes the next snapshot. A rollout that fails or panics is dropped and
/// logged. Every rollout uses its own environment seed, so opponents differ.
pub fn run_training(
    spec: &Arc<GridSpec>,
    scenarios: &[Arc<Chronics>],
    env_cfg: &Arc<EnvConfig>,
    catalog: &ActionCatalog,
    reduced: &ReducedActionSet,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainingRun, ArtifactError> {
    if scenarios.is_empty() {
        return Err(ArtifactError::Missing("training scenarios".into()));
    }
    if reduced.is_empty() {
        return Err(ArtifactError::Missing("reduced action set".into()));
    }
    reduced.check(catalog)?;
    cfg.search.validate().map_err(|m| ArtifactError::malformed("search config", m))?;
    let candidates = reduced.ids();
    let refs: Vec<&Chronics> = scenarios.iter().map(|c| c.as_ref()).collect();
    let features = FeatureSpec::new(spec, &refs);
    let mut policy = Policy::new(features, candidates.clone(), catalog.len(), &cfg.hidden, cfg.seed);
    let mut opt = Adam::new(cfg.optim.adam, policy.net.n_params());
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, cfg.heldout_every);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ctx = Ctx { spec, env_cfg, catalog, candidates: &candidates, cfg };

    let mut metrics_file = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| ArtifactError::io(dir, e))?;
            let path = dir.join("metrics.csv");
            let mut f = std::fs::File::create(&path).map_err(|e| ArtifactError::io(&path, e))?;
            writeln!(f, "{METRICS_HEADER}").map_err(|e| ArtifactError::io(&path, e))?;
            Some((f, path))
        }
        None => None,
    };

    let mut metrics = Vec::new();
    let mut checkpoints = Vec::new();
    let mut last = EpochStats { heldout_loss: f64::NAN, train_loss: f64::NAN, ..Default::default() };
    for round in 0..=cfg.epochs {
        let snapshot = Arc::new(policy.clone());
        let results: Vec<Option<Rollout>> = (0..cfg.episodes_per_epoch)
            .into_par_iter()
            .map(|i| {
                let chronics = &scenarios[i % scenarios.len()];
                let seed = episode_seed(cfg.seed, round, i);
                let episode = (round * cfg.episodes_per_epoch + i) as u64;
                match catch_unwind(AssertUnwindSafe(|| rollout(&ctx, &snapshot, chronics, seed, episode))) {
                    Ok(Ok(r)) => Some(r),
                    Ok(Err(e)) => {
                        log::warn!("rollout {episode} dropped: {e}");
                        None
                    }
                    Err(_) => {
                        log::warn!("rollout {episode} panicked, dropped");
                        None
                    }
                }
            })
            .collect();
        let dropped = results.iter().filter(|r| r.is_none()).count();
        let done: Vec<Rollout> = results.into_iter().flatten().collect();
        let n_samples: usize = done.iter().map(|r| r.samples.len()).sum();
        let row = EpochMetrics {
            epoch: round,
            steps_survived_ratio: mean(done.iter().map(|r| r.survived as f64 / r.horizon.max(1) as f64)),
            substations_per_congestion: mean(done.iter().flat_map(|r| r.congestion_subs.iter().map(|&s| s as f64))),
            simulations_to_stop: mean(done.iter().flat_map(|r| r.simulations.iter().map(|&s| s as f64))),
            search_depth: mean(done.iter().flat_map(|r| r.depths.iter().map(|&s| s as f64))),
            train_loss: last.train_loss,
            heldout_loss: last.heldout_loss,
            samples: n_samples,
            episodes: done.len(),
            episodes_dropped: dropped,
        };
        log::info!("epoch {}: {}", round, row.csv_row());
        if let Some((f, path)) = metrics_file.as_mut() {
            writeln!(f, "{}", row.csv_row()).and_then(|_| f.flush()).map_err(|e| ArtifactError::io(path.as_path(), e))?;
        }
        metrics.push(row);
        if let Some(dir) = out_dir {
            let path = dir.join(format!("policy_epoch{round:03}.json"));
            policy.save(&path)?;
            checkpoints.push(path);
        }
        if round == cfg.epochs {
            break;
        }
        for r in done {
            for s in r.samples {
                buffer.push(s);
            }
        }
        if buffer.train_samples().next().is_some() {
            last = train_epoch(&mut policy.net, &mut opt, &buffer, &cfg.optim, &mut rng);
        }
        policy.epoch = round + 1;
    }
    Ok(TrainingRun { policy, metrics, checkpoints })
}

/// Spearman rank correlation with average ranks for ties. NaN when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(rx.iter().copied()), mean(ry.iter().copied()));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
