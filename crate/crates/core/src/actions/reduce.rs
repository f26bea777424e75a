use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{safe_recovery, ActionCatalog};
use crate::env::{congestion_cost, Chronics, EnvAction, EnvConfig, Episode};
use crate::error::{ArtifactError, EnvError};
use crate::grid::GridSpec;

/// Catalog ids ranked by how often they won, with the budget they were cut to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReducedActionSet {
    pub budget: usize,
    pub catalog_size: usize,
    /// `(id, frequency)` by descending frequency, then ascending id.
    pub entries: Vec<(usize, u64)>,
}

impl ReducedActionSet {
    /// Rank raw win counts and keep the `budget` most frequent.
    pub fn from_counts(counts: &HashMap<usize, u64>, budget: usize, catalog_size: usize) -> Self {
        let mut entries: Vec<(usize, u64)> = counts.iter().map(|(&id, &f)| (id, f)).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        entries.truncate(budget);
        ReducedActionSet { budget, catalog_size, entries }
    }

    /// A set in the given order, all with frequency 1.
    pub fn from_ids(ids: &[usize], catalog_size: usize) -> Self {
        ReducedActionSet { budget: ids.len(), catalog_size, entries: ids.iter().map(|&i| (i, 1)).collect() }
    }

    pub fn ids(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# reduced action set\n# budget {}\n# catalog_size {}\n", self.budget, self.catalog_size);
        for (id, f) in &self.entries {
            let _ = writeln!(s, "{id} {f}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, ArtifactError> {
        let bad = |m: String| ArtifactError::malformed("reduced action set", m);
        let mut budget = None;
        let mut catalog_size = None;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut parts = rest.split_whitespace();
                match (parts.next(), parts.next()) {
                    (Some("budget"), Some(v)) => budget = Some(v.parse().map_err(|e| bad(format!("budget: {e}")))?),
                    (Some("catalog_size"), Some(v)) => catalog_size = Some(v.parse().map_err(|e| bad(format!("catalog_size: {e}")))?),
                    _ => {}
                }
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(id), Some(f), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad(format!("line {}: expected `id frequency`", n + 1)));
            };
            let id = id.parse().map_err(|e| bad(format!("line {}: {e}", n + 1)))?;
            let f = f.parse().map_err(|e| bad(format!("line {}: {e}", n + 1)))?;
            entries.push((id, f));
        }
        let catalog_size = catalog_size.ok_or_else(|| bad("missing catalog_size header".into()))?;
        if let Some(&(id, _)) = entries.iter().find(|e| e.0 >= catalog_size) {
            return Err(bad(format!("id {id} outside catalog of {catalog_size}")));
        }
        Ok(ReducedActionSet { budget: budget.unwrap_or(entries.len()), catalog_size, entries })
    }

    /// Check the set was built for this catalog.
    pub fn check(&self, catalog: &ActionCatalog) -> Result<(), ArtifactError> {
        if self.catalog_size != catalog.len() {
            return Err(ArtifactError::malformed(
                "reduced action set",
                format!("built for a catalog of {} actions, this one has {}", self.catalog_size, catalog.len()),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ArtifactError> {
        std::fs::write(path.as_ref(), self.to_text()).map_err(|e| ArtifactError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ArtifactError> {
        let s = std::fs::read_to_string(path.as_ref()).map_err(|e| ArtifactError::io(&path, e))?;
        Self::from_text(&s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReduceConfig {
    pub k: usize,
    pub seeds: Vec<u64>,
    /// Cut each replay after this many steps.
    pub max_steps: Option<usize>,
    pub safe_threshold: f64,
}

impl Default for ReduceConfig {
    fn default() -> Self {
        Self { k: 50, seeds: vec![0], max_steps: None, safe_threshold: crate::SAFE_THRESHOLD }
    }
}

/// Simulate every legal candidate and return the one leaving the least
/// congestion, ties to the lowest id. `None` when no candidate is legal.
pub fn greedy_best(ep: &Episode, catalog: &ActionCatalog, candidates: impl IntoIterator<Item = usize>) -> Option<(usize, f64)> {
    let obs = ep.observation();
    let mut best: Option<(usize, f64)> = None;
    for id in candidates {
        if id == 0 || !catalog.is_legal(&obs, id) {
            continue;
        }
        let Ok(r) = ep.simulate(&EnvAction::topology(catalog.action(id).clone())) else { continue };
        if r.info.illegal.is_some() {
            continue;
        }
        let c = congestion_cost(&r);
        let better = match best {
            None => true,
            Some((bid, bc)) => c < bc || (c == bc && id < bid),
        };
        if better {
            best = Some((id, c));
        }
    }
    best
}

/// Replay one scenario with the greedy pilot and count winning actions.
fn sweep(ep: &mut Episode, catalog: &ActionCatalog, cfg: &ReduceConfig) -> Result<HashMap<usize, u64>, EnvError> {
    let mut counts = HashMap::new();
    let limit = cfg.max_steps.unwrap_or(usize::MAX);
    let mut steps = 0;
    while !ep.is_done() && steps < limit {
        let action = if ep.rho_max() < cfg.safe_threshold {
            safe_recovery(ep, catalog, cfg.safe_threshold).map_or(EnvAction::NoOp, |id| EnvAction::topology(catalog.action(id).clone()))
        } else {
            let noop = congestion_cost(&ep.simulate(&EnvAction::NoOp)?);
            match greedy_best(ep, catalog, 0..catalog.len()) {
                Some((id, c)) if c < noop => {
                    *counts.entry(id).or_insert(0) += 1;
                    EnvAction::topology(catalog.action(id).clone())
                }
                _ => EnvAction::NoOp,
            }
        };
        ep.step(&action)?;
        steps += 1;
    }
    Ok(counts)
}

/// Replay every (scenario, seed) pair with the greedy simulate-all pilot,
/// count the congestion-minimizing action at each unsafe state and keep the
/// `k` most frequent.
pub fn reduce_actions(
    spec: &Arc<GridSpec>,
    scenarios: &[Arc<Chronics>],
    env_cfg: &Arc<EnvConfig>,
    catalog: &ActionCatalog,
    cfg: &ReduceConfig,
) -> Result<ReducedActionSet, EnvError> {
    if cfg.k == 0 {
        return Err(EnvError::Chronics("action budget must be at least 1".into()));
    }
    if scenarios.is_empty() {
        return Err(EnvError::Chronics("no scenarios to reduce over".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..scenarios.len()).flat_map(|s| cfg.seeds.iter().map(move |&seed| (s, seed))).collect();
    let partial: Vec<HashMap<usize, u64>> = jobs
        .par_iter()
        .map(|&(s, seed)| {
            let mut ep = Episode::reset(Arc::clone(spec), Arc::clone(&scenarios[s]), Arc::clone(env_cfg), seed)?;
            sweep(&mut ep, catalog, cfg)
        })
        .collect::<Result<_, _>>()?;
    let mut counts: HashMap<usize, u64> = HashMap::new();
    for p in partial {
        for (id, f) in p {
            *counts.entry(id).or_insert(0) += f;
        }
    }
    if counts.is_empty() {
        log::warn!("no unsafe state met during reduction; the reduced set is empty");
    }
    Ok(ReducedActionSet::from_counts(&counts, cfg.k, catalog.len()))
}
