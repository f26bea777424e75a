//! Seeded evaluation of an agent lineup over a scenario suite, plus the
//! artifact-producing jobs behind the command line (action reduction and
//! training).

mod report;


use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{enumerate_unitary_actions, reduce_actions, ActionCatalog, CatalogOptions, ReduceConfig, ReducedActionSet};
use crate::assist::{AssistConfig, SessionManager};
use crate::control::{run_episode, AgentMode, Agents, ControllerConfig, EpisodeRecord};
use crate::env::{load_chronics_dir, Chronics, EnvConfig};
use crate::error::{ArtifactError, EnvError, GridError};
use crate::grid::GridSpec;
use crate::policy::{run_training, Policy, TrainConfig, TrainingRun};

pub use report::{AgentRow, EpisodeRow, EvalReport, AGENT_HEADER, EPISODE_HEADER};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("report: {0}")]
    Report(String),
    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
}

impl BenchError {
    /// Stable machine-readable category.
    pub fn category(&self) -> &'static str {
        match self {
            BenchError::MissingArtifact(_) => "missing_artifact",
            BenchError::Config(_) => "config",
            BenchError::Artifact(ArtifactError::Missing(_)) => "missing_artifact",
            BenchError::Artifact(ArtifactError::FeatureMismatch { .. }) => "artifact_mismatch",
            BenchError::Artifact(_) => "artifact",
            BenchError::Env(_) => "chronics",
            BenchError::Grid(_) => "grid",
            BenchError::Report(_) => "report",
            BenchError::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: &Path, e: impl ToString) -> Self {
        BenchError::Io { path: path.display().to_string(), msg: e.to_string() }
    }
}

/// How scenario files are read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChronicsOptions {
    pub dt_minutes: f64,
    pub forecast_noise: f64,
}

impl Default for ChronicsOptions {
    fn default() -> Self {
        ChronicsOptions { dt_minutes: 5.0, forecast_noise: 0.01 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Agent labels, e.g. `noop`, `redispatch`, `topo_top5_redispatch`.
    pub agents: Vec<String>,
    pub seeds: Vec<u64>,
    /// Template for every agent; the mode is replaced per agent. The
    /// default has no decision deadline so reruns are reproducible.
    pub controller: ControllerConfig,
    pub env: EnvConfig,
    pub chronics: ChronicsOptions,
    pub catalog: CatalogOptions,
    pub reduced_set: Option<PathBuf>,
    pub policy: Option<PathBuf>,
    /// Truncate every episode after this many steps.
    pub max_steps: Option<usize>,
    /// Also write one JSON record per episode under `episodes/`.
    pub write_records: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            agents: vec!["noop".into()],
            seeds: vec![0],
            controller: ControllerConfig { deadline_ms: None, ..Default::default() },
            env: EnvConfig::default(),
            chronics: ChronicsOptions::default(),
            catalog: CatalogOptions::default(),
            reduced_set: None,
            policy: None,
            max_steps: None,
            write_records: false,
        }
    }
}

impl EvalConfig {
    pub fn modes(&self) -> Result<Vec<AgentMode>, BenchError> {
        if self.agents.is_empty() {
            return Err(BenchError::Config("no agents listed".into()));
        }
        self.agents.iter().map(|a| AgentMode::parse(a).ok_or_else(|| BenchError::Config(format!("unknown agent '{a}'")))).collect()
    }

    pub fn validate(&self) -> Result<Vec<AgentMode>, BenchError> {
        if self.seeds.is_empty() {
            return Err(BenchError::Config("no seeds listed".into()));
        }
        let modes = self.modes()?;
        for m in &modes {
            ControllerConfig { mode: m.clone(), ..self.controller.clone() }.validate().map_err(BenchError::Config)?;
        }
        Ok(modes)
    }
}

/// Parse a TOML configuration file into `T`; a missing path gives defaults.
pub fn load_toml<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, BenchError> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    toml::from_str(&text).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))
}

/// Load the catalog, reduced set and policy the listed agents need. Every
/// required file is checked before anything runs.
pub fn load_agents(spec: &GridSpec, cfg: &EvalConfig, modes: &[AgentMode]) -> Result<Agents, BenchError> {
    let catalog = enumerate_unitary_actions(spec, cfg.catalog);
    let needs_reduced = modes.iter().any(|m| m.needs_reduced_set() || m.needs_policy());
    let needs_policy = modes.iter().any(AgentMode::needs_policy);
    let require = |path: &Option<PathBuf>, what: &str, needed: bool| -> Result<Option<PathBuf>, BenchError> {
        match path {
            Some(p) if p.exists() => Ok(Some(p.clone())),
            Some(p) if needed => Err(BenchError::MissingArtifact(format!("{what} {} does not exist", p.display()))),
            None if needed => Err(BenchError::MissingArtifact(format!(
                "{what} required by {}",
                modes
                    .iter()
                    .filter(|m| if what == "policy" { m.needs_policy() } else { m.needs_reduced_set() || m.needs_policy() })
                    .map(|m| m.label())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))),
            _ => Ok(None),
        }
    };
    let reduced_path = require(&cfg.reduced_set, "reduced action set", needs_reduced)?;
    let policy_path = require(&cfg.policy, "policy", needs_policy)?;
    let reduced = match reduced_path {
        Some(p) => {
            let r = ReducedActionSet::load(&p)?;
            r.check(&catalog)?;
            r.ids()
        }
        None => Vec::new(),
    };
    let policy = match policy_path {
        Some(p) => {
            let pol = Policy::load(&p, spec)?;
            if pol.candidates != reduced {
                return Err(BenchError::Artifact(ArtifactError::malformed("policy", "policy was trained on a different reduced action set")));
            }
            Some(Arc::new(pol))
        }
        None => None,
    };
    Ok(Agents::new(Arc::new(catalog), reduced, policy))
}

/// Runs every (agent, scenario, seed) episode across a worker pool. Each
/// episode is single-threaded apart from the redispatcher's population
/// evaluation, and results are merged in a fixed order.
pub fn evaluate(spec: &Arc<GridSpec>, scenarios: &[Arc<Chronics>], agents: &Agents, cfg: &EvalConfig) -> Result<(EvalReport, Vec<EpisodeRecord>), BenchError> {
    let modes = cfg.validate()?;
    if scenarios.is_empty() {
        return Err(BenchError::MissingArtifact("no scenarios".into()));
    }
    if modes.iter().any(AgentMode::needs_policy) && agents.policy.is_none() {
        return Err(BenchError::MissingArtifact("policy".into()));
    }
    if modes.iter().any(AgentMode::needs_reduced_set) && agents.reduced.is_empty() {
        return Err(BenchError::MissingArtifact("reduced action set".into()));
    }
    let env = Arc::new(cfg.env.clone());
    let jobs: Vec<(usize, usize, u64)> =
        (0..modes.len()).flat_map(|a| (0..scenarios.len()).flat_map(move |s| cfg.seeds.iter().map(move |&seed| (a, s, seed)))).collect();
    let records: Vec<EpisodeRecord> = jobs
        .par_iter()
        .map(|&(a, s, seed)| {
            let ctl = ControllerConfig { mode: modes[a].clone(), ..cfg.controller.clone() };
            let rec = run_episode(spec, &scenarios[s], &env, &ctl, agents, seed, cfg.max_steps)?;
            log::info!("{} {} seed {}: survived {}/{}", rec.agent, rec.scenario, seed, rec.steps_survived, rec.horizon);
            Ok(rec)
        })
        .collect::<Result<_, EnvError>>()?;
    let labels: Vec<String> = modes.iter().map(AgentMode::label).collect();
    let rows = records.iter().map(EpisodeRow::from_record).collect();
    Ok((EvalReport::from_episodes(&labels, rows), records))
}

/// Read a grid file and every scenario in a chronics directory.
pub fn load_inputs(grid: &Path, chronics: &Path, opts: &ChronicsOptions) -> Result<(Arc<GridSpec>, Vec<Arc<Chronics>>), BenchError> {
    if !grid.exists() {
        return Err(BenchError::MissingArtifact(format!("grid file {}", grid.display())));
    }
    if !chronics.is_dir() {
        return Err(BenchError::MissingArtifact(format!("chronics directory {}", chronics.display())));
    }
    let spec = GridSpec::load(grid)?;
    let scenarios = load_chronics_dir(&spec, chronics, opts.dt_minutes, opts.forecast_noise)?;
    Ok((Arc::new(spec), scenarios.into_iter().map(Arc::new).collect()))
}

/// Load inputs and artifacts, run the lineup and write the report to `out`.
pub fn cmd_evaluate(grid: &Path, chronics: &Path, cfg: &EvalConfig, out: &Path) -> Result<EvalReport, BenchError> {
    let modes = cfg.validate()?;
    let (spec, scenarios) = load_inputs(grid, chronics, &cfg.chronics)?;
    let agents = load_agents(&spec, cfg, &modes)?;
    let (report, records) = evaluate(&spec, &scenarios, &agents, cfg)?;
    report.write(out)?;
    if cfg.write_records {
        let dir = out.join("episodes");
        std::fs::create_dir_all(&dir).map_err(|e| BenchError::io(&dir, e))?;
        for r in &records {
            let p = dir.join(format!("{}__{}__{}.json", r.agent, r.scenario, r.seed));
            std::fs::write(&p, r.to_json_string()).map_err(|e| BenchError::io(&p, e))?;
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReduceJob {
    pub reduce: ReduceConfig,
    pub env: EnvConfig,
    pub chronics: ChronicsOptions,
    pub catalog: CatalogOptions,
}

impl Default for ReduceJob {
    fn default() -> Self {
        ReduceJob { reduce: ReduceConfig::default(), env: EnvConfig::default(), chronics: ChronicsOptions::default(), catalog: CatalogOptions::default() }
    }
}

/// Run the greedy pilot over the suite and write the reduced set to `out`.
pub fn cmd_reduce_actions(grid: &Path, chronics: &Path, job: &ReduceJob, out: &Path) -> Result<ReducedActionSet, BenchError> {
    let (spec, scenarios) = load_inputs(grid, chronics, &job.chronics)?;
    let catalog = enumerate_unitary_actions(&spec, job.catalog);
    let set = reduce_actions(&spec, &scenarios, &Arc::new(job.env.clone()), &catalog, &job.reduce)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    }
    set.save(out)?;
    Ok(set)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainJob {
    pub train: TrainConfig,
    pub env: EnvConfig,
    pub chronics: ChronicsOptions,
    pub catalog: CatalogOptions,
    pub reduced_set: Option<PathBuf>,
}

impl Default for TrainJob {
    fn default() -> Self {
        TrainJob {
            train: TrainConfig::default(),
            env: EnvConfig::default(),
            chronics: ChronicsOptions::default(),
            catalog: CatalogOptions::default(),
            reduced_set: None,
        }
    }
}

/// Behavioural cloning over the suite; checkpoints and `metrics.csv` go to
/// the `out` directory.
pub fn cmd_train(grid: &Path, chronics: &Path, job: &TrainJob, out: &Path) -> Result<TrainingRun, BenchError> {
    let reduced_path = job.reduced_set.as_ref().ok_or_else(|| BenchError::MissingArtifact("reduced action set required for training".into()))?;
    if !reduced_path.exists() {
        return Err(BenchError::MissingArtifact(format!("reduced action set {}", reduced_path.display())));
    }
    let (spec, scenarios) = load_inputs(grid, chronics, &job.chronics)?;
    let catalog: ActionCatalog = enumerate_unitary_actions(&spec, job.catalog);
    let reduced = ReducedActionSet::load(reduced_path)?;
    reduced.check(&catalog)?;
    std::fs::create_dir_all(out).map_err(|e| BenchError::io(out, e))?;
    Ok(run_training(&spec, &scenarios, &Arc::new(job.env.clone()), &catalog, &reduced, &job.train, Some(out))?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeJob {
    pub assist: AssistConfig,
    pub env: EnvConfig,
    pub chronics: ChronicsOptions,
    pub catalog: CatalogOptions,
    /// Candidates for the search; the whole catalog when absent.
    pub reduced_set: Option<PathBuf>,
    pub policy: Option<PathBuf>,
}

impl Default for ServeJob {
    fn default() -> Self {
        ServeJob {
            assist: AssistConfig::default(),
            env: EnvConfig::default(),
            chronics: ChronicsOptions::default(),
            catalog: CatalogOptions::default(),
            reduced_set: None,
            policy: None,
        }
    }
}

/// Load and verify every artifact the recommendation service needs. Any
/// missing or mismatched file refuses startup.
pub fn prepare_serve(grid: &Path, chronics: &Path, job: &ServeJob) -> Result<SessionManager, BenchError> {
    let (spec, scenarios) = load_inputs(grid, chronics, &job.chronics)?;
    let check = |p: &Option<PathBuf>, what: &str| match p {
        Some(p) if !p.exists() => Err(BenchError::MissingArtifact(format!("{what} {} does not exist", p.display()))),
        _ => Ok(()),
    };
    check(&job.reduced_set, "reduced action set")?;
    check(&job.policy, "policy")?;
    let cfg = EvalConfig { catalog: job.catalog, reduced_set: job.reduced_set.clone(), policy: job.policy.clone(), ..Default::default() };
    let mut agents = load_agents(&spec, &cfg, &[])?;
    if agents.reduced.is_empty() {
        agents = Agents::new(agents.catalog.clone(), (1..agents.catalog.len()).collect(), None);
    }
    Ok(SessionManager::new(spec, scenarios, job.env.clone(), agents, job.assist.clone()))
}
