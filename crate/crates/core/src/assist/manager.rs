use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{AssistConfig, AssistError, Listener, Session};
use crate::control::Agents;
use crate::env::{Chronics, EnvConfig};
use crate::grid::GridSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub scenario: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub start_step: usize,
}

/// Owns the shared artifacts and every live session. Each session has its
/// own lock, so sessions proceed independently.
pub struct SessionManager {
    spec: Arc<GridSpec>,
    scenarios: BTreeMap<String, Arc<Chronics>>,
    env: Arc<EnvConfig>,
    agents: Agents,
    cfg: AssistConfig,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
}

impl SessionManager {
    pub fn new(spec: Arc<GridSpec>, scenarios: Vec<Arc<Chronics>>, env: EnvConfig, agents: Agents, cfg: AssistConfig) -> Self {
        SessionManager {
            spec,
            scenarios: scenarios.into_iter().map(|c| (c.name.clone(), c)).collect(),
            env: Arc::new(env),
            agents,
            cfg,
            sessions: RwLock::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn spec(&self) -> &Arc<GridSpec> {
        &self.spec
    }

    pub fn config(&self) -> &AssistConfig {
        &self.cfg
    }

    pub fn scenario_names(&self) -> Vec<String> {
        self.scenarios.keys().cloned().collect()
    }

    pub fn chronics(&self, name: &str) -> Option<&Arc<Chronics>> {
        self.scenarios.get(name)
    }

    pub fn env_config(&self) -> &Arc<EnvConfig> {
        &self.env
    }

    /// Create a session; `listener` is attached before the created event.
    pub fn create(&self, req: &CreateSession, listener: Option<Listener>) -> Result<Arc<Mutex<Session>>, AssistError> {
        let chronics = self.scenarios.get(&req.scenario).ok_or_else(|| AssistError::BadRequest(format!("unknown scenario {}", req.scenario)))?.clone();
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let session = Session::with_listener(
            id.clone(),
            self.spec.clone(),
            chronics,
            self.env.clone(),
            self.agents.clone(),
            self.cfg.clone(),
            req.seed,
            req.start_step,
            listener,
        )?;
        let handle = Arc::new(Mutex::new(session));
        self.sessions.write().expect("session map lock").insert(id, handle.clone());
        Ok(handle)
    }

    pub fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, AssistError> {
        self.sessions.read().expect("session map lock").get(id).cloned().ok_or_else(|| AssistError::UnknownSession(id.to_string()))
    }

    pub fn ids(&self) -> Vec<String> {
        self.sessions.read().expect("session map lock").keys().cloned().collect()
    }

    /// Run `f` with the session locked.
    pub fn with<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<T, AssistError>) -> Result<T, AssistError> {
        let handle = self.get(id)?;
        let mut guard = handle.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut guard)
    }
}
