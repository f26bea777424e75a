//! Observation features, the feed-forward policy over the reduced action set
//! and its behavioural-cloning training on search visit distributions.

mod features;
mod net;
mod train;


use std::collections::VecDeque;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Episode, Observation};
use crate::error::ArtifactError;
use crate::grid::GridSpec;
use crate::search::Prior;

pub use features::FeatureSpec;
pub use net::{masked_softmax, Adam, AdamConfig, Layer, Mlp};
pub use train::{run_training, spearman, EpochMetrics, TrainConfig, TrainingRun, METRICS_HEADER};

pub const CHECKPOINT_FORMAT: &str = "gridzero-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub features: Vec<f64>,
    /// Legality of each reduced action when the sample was taken.
    pub mask: Vec<bool>,
    /// Normalized root visit counts; zero off the mask.
    pub target: Vec<f64>,
    pub episode: u64,
    pub step: usize,
}

impl TrainingSample {
    /// Renormalizes `visits` over the legal entries. `None` if no legal
    /// action was visited.
    pub fn new(features: Vec<f64>, mask: Vec<bool>, visits: &[f64], episode: u64, step: usize) -> Option<Self> {
        let target: Vec<f64> = visits.iter().zip(&mask).map(|(&v, &m)| if m { v.max(0.0) } else { 0.0 }).collect();
        let sum: f64 = target.iter().sum();
        if sum <= 0.0 || !sum.is_finite() {
            return None;
        }
        let target = target.into_iter().map(|v| v / sum).collect();
        Some(TrainingSample { features, mask, target, episode, step })
    }
}

/// FIFO bounded buffer. Every `heldout_every`-th inserted sample goes to the
/// held-out split.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    heldout_every: usize,
    inserted: u64,
    train: VecDeque<TrainingSample>,
    heldout: VecDeque<TrainingSample>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, heldout_every: usize) -> Self {
        ReplayBuffer { capacity: capacity.max(1), heldout_every, inserted: 0, train: VecDeque::new(), heldout: VecDeque::new() }
    }

    pub fn push(&mut self, s: TrainingSample) {
        self.inserted += 1;
        let heldout = self.heldout_every > 1 && self.inserted % self.heldout_every as u64 == 0;
        let (q, cap) = if heldout { (&mut self.heldout, (self.capacity / self.heldout_every).max(1)) } else { (&mut self.train, self.capacity) };
        if q.len() >= cap {
            q.pop_front();
        }
        q.push_back(s);
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.heldout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn train_samples(&self) -> impl Iterator<Item = &TrainingSample> {
        self.train.iter()
    }

    pub fn heldout_samples(&self) -> impl Iterator<Item = &TrainingSample> {
        self.heldout.iter()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// Gradient steps per epoch.
    pub updates: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { adam: AdamConfig::default(), batch_size: 64, updates: 100 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub train_loss: f64,
    /// NaN when the held-out split is empty.
    pub heldout_loss: f64,
    pub updates: usize,
    /// Set when a non-finite loss aborted the epoch and the previous
    /// parameters were restored.
    pub aborted: bool,
}

fn sample_refs(s: &TrainingSample) -> (&[f64], &[bool], &[f64], f64) {
    (&s.features, &s.mask, &s.target, 1.0)
}

pub fn mean_loss<'a>(net: &Mlp, samples: impl Iterator<Item = &'a TrainingSample>) -> f64 {
    let mut scratch = vec![0.0; net.n_params()];
    let (mut sum, mut n) = (0.0, 0usize);
    for s in samples {
        if let Some(l) = net.loss_and_grad(&s.features, &s.mask, &s.target, 1.0, &mut scratch) {
            sum += l;
            n += 1;
        }
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Minibatch cross-entropy descent on the training split of `buffer`. The
/// returned train loss is the mean over minibatches.
pub fn train_epoch<R: Rng>(net: &mut Mlp, opt: &mut Adam, buffer: &ReplayBuffer, cfg: &OptimConfig, rng: &mut R) -> EpochStats {
    let samples: Vec<&TrainingSample> = buffer.train_samples().collect();
    let mut stats = EpochStats { heldout_loss: f64::NAN, ..Default::default() };
    if samples.is_empty() {
        return stats;
    }
    let backup = (net.clone(), opt.clone());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = order.len();
    let mut loss_sum = 0.0;
    for _ in 0..cfg.updates {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(samples.len()) {
            if cursor == order.len() {
                order.shuffle(rng);
                cursor = 0;
            }
            batch.push(samples[order[cursor]]);
            cursor += 1;
        }
        let (loss, grad) = net.batch_grad(batch.iter().map(|s| sample_refs(s)));
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            log::warn!("non-finite loss after {} updates, restoring parameters", stats.updates);
            (*net, *opt) = backup;
            return EpochStats { train_loss: f64::NAN, heldout_loss: f64::NAN, updates: 0, aborted: true };
        }
        opt.step(net, &grad);
        loss_sum += loss;
        stats.updates += 1;
    }
    if !net.is_finite() {
        (*net, *opt) = backup;
        return EpochStats { train_loss: f64::NAN, heldout_loss: f64::NAN, updates: 0, aborted: true };
    }
    stats.train_loss = loss_sum / stats.updates.max(1) as f64;
    stats.heldout_loss = mean_loss(net, buffer.heldout_samples());
    stats
}

/// A trained network bound to its feature layout and reduced action set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub features: FeatureSpec,
    /// Catalog ids of the reduced action set, in output order.
    pub candidates: Vec<usize>,
    pub catalog_size: usize,
    pub net: Mlp,
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    feature_hash: String,
    #[serde(flatten)]
    policy: Policy,
}

impl Policy {
    pub fn new(features: FeatureSpec, candidates: Vec<usize>, catalog_size: usize, hidden: &[usize], seed: u64) -> Self {
        let net = Mlp::new(features.len(), hidden, candidates.len(), seed);
        Policy { features, candidates, catalog_size, net, epoch: 0 }
    }

    /// Masked distribution over the reduced actions; `None` means only the
    /// no-op is available.
    pub fn distribution(&self, obs: &Observation, mask: &[bool]) -> Option<Vec<f64>> {
        self.net.forward(&self.features.extract(obs), mask)
    }

    /// Legal reduced positions sorted by probability, highest first; ties
    /// broken by lower position.
    pub fn ranked(&self, obs: &Observation, mask: &[bool]) -> Vec<(usize, f64)> {
        let Some(p) = self.distribution(obs, mask) else { return vec![] };
        let mut r: Vec<(usize, f64)> = p.into_iter().enumerate().filter(|&(i, _)| mask[i]).collect();
        r.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        r
    }

    pub fn to_json_string(&self) -> String {
        let file = CheckpointFile { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, feature_hash: self.features.hash(), policy: self.clone() };
        serde_json::to_string(&file).expect("checkpoint serializes")
    }

    /// Parses a checkpoint and checks it against `spec`. A feature layout
    /// that does not match the grid is a hard error.
    pub fn from_json_str(s: &str, spec: &GridSpec) -> Result<Self, ArtifactError> {
        let file: CheckpointFile = serde_json::from_str(s).map_err(|e| ArtifactError::malformed("policy checkpoint", e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(ArtifactError::malformed("policy checkpoint", format!("unknown format {:?}", file.format)));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(ArtifactError::malformed("policy checkpoint", format!("unsupported version {}", file.version)));
        }
        let expected = FeatureSpec::new(spec, &[]).hash();
        if file.feature_hash != expected || file.policy.features.hash() != expected || !file.policy.features.matches(spec) {
            return Err(ArtifactError::FeatureMismatch { expected, found: file.feature_hash });
        }
        let p = file.policy;
        if p.net.n_in() != p.features.len() || p.net.n_out() != p.candidates.len() {
            return Err(ArtifactError::malformed("policy checkpoint", "network shape disagrees with features or action set"));
        }
        if p.candidates.iter().any(|&c| c >= p.catalog_size) {
            return Err(ArtifactError::malformed("policy checkpoint", "action id outside catalog"));
        }
        if !p.net.is_finite() {
            return Err(ArtifactError::malformed("policy checkpoint", "non-finite weights"));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<(), ArtifactError> {
        std::fs::write(path, self.to_json_string()).map_err(|e| ArtifactError::io(path, e))
    }

    pub fn load(path: &Path, spec: &GridSpec) -> Result<Self, ArtifactError> {
        let s = std::fs::read_to_string(path).map_err(|e| ArtifactError::io(path, e))?;
        Self::from_json_str(&s, spec)
    }
}

impl Prior for Policy {
    fn prior(&self, ep: &Episode, candidates: &[usize], legal: &[bool]) -> Vec<f64> {
        let obs = ep.observation();
        if candidates == self.candidates.as_slice() {
            return self.distribution(&obs, legal).unwrap_or_else(|| vec![0.0; candidates.len()]);
        }
        // Different candidate list: read probabilities by catalog id.
        let mask: Vec<bool> = self.candidates.iter().map(|id| candidates.iter().position(|c| c == id).is_some_and(|i| legal[i])).collect();
        let p = self.distribution(&obs, &mask).unwrap_or_default();
        candidates.iter().map(|id| self.candidates.iter().position(|c| c == id).and_then(|i| p.get(i).copied()).unwrap_or(0.0)).collect()
    }
}
