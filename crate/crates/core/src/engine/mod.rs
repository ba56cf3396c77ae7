//! Experiment orchestration.
//!
//! An [`Experiment`] is the event-sourced state of one parameter sweep: jobs,
//! the DOE model and the analyst's labels. [`Engine`] keeps many of them
//! behind per-experiment locks, persists every event to an append-only
//! JSON-Lines log and notifies listeners (the HTTP event stream) in log
//! order.

mod event;
mod experiment;
mod job;
mod store;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use event::*;
pub use experiment::{
    random_unclaimed, Experiment, ExperimentSnapshot, Queued, Rejected, SlaWarning, SuggestContext, Suggestion,
};
pub use job::{Job, JobId, JobOrigin, JobStatus, NewJob};
pub use store::EventLog;

use crate::sampler::{SamplerConfig, SamplerError};
use crate::slaguard::{ClusterConfig, SlaContract, SlaError, StrategyPlan};
use crate::space::{ParameterSpace, QualityError, QualitySpec, Sample, SpaceError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("experiment {0} not found")]
    NotFound(String),
    #[error("job {0} not found")]
    UnknownJob(JobId),
    #[error("job {0} already has a result")]
    DuplicateResult(JobId),
    #[error("job {0} is completed")]
    JobClosed(JobId),
    #[error("sample {0} already has a job")]
    AlreadyClaimed(Sample),
    #[error("job budget exhausted")]
    BudgetExhausted,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error(transparent)]
    Sla(#[from] SlaError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("corrupt event log: {0}")]
    Corrupt(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything needed to create an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExperimentConfig {
    pub space: ParameterSpace,
    #[serde(default)]
    pub quality_spec: QualitySpec,
    pub sla: SlaContract,
    #[serde(default)]
    pub cluster_config: ClusterConfig,
    #[serde(default)]
    pub sampler_config: SamplerConfig,
}

impl ExperimentConfig {
    pub fn new(space: ParameterSpace, max_jobs: u64) -> Self {
        Self {
            space,
            quality_spec: QualitySpec::default(),
            sla: SlaContract::new(max_jobs),
            cluster_config: ClusterConfig::default(),
            sampler_config: SamplerConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        self.quality_spec.validate()?;
        self.sla.validate()?;
        self.cluster_config.validate()?;
        self.sampler_config.validate()?;
        Ok(())
    }
}

/// Called with every committed event, in log order per experiment.
pub type Listener = Arc<dyn Fn(&str, &Event) + Send + Sync>;

struct Slot {
    exp: Experiment,
    log: Option<EventLog>,
}

/// Thread-safe registry of experiments.
///
/// Mutations of one experiment are serialized by its lock; different
/// experiments proceed independently. Suggestions are computed on a
/// detached copy of the inputs so they never hold the lock while sampling.
pub struct Engine {
    data_dir: Option<PathBuf>,
    snapshot_every: u64,
    experiments: RwLock<HashMap<String, Arc<Mutex<Slot>>>>,
    listeners: RwLock<Vec<Listener>>,
}

impl Default for Engine {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl Engine {
    pub fn in_memory() -> Self {
        Self { data_dir: None, snapshot_every: 0, experiments: RwLock::default(), listeners: RwLock::default() }
    }

    /// Opens (creating if needed) a data directory and replays every
    /// experiment log found in it.
    pub fn open(data_dir: impl AsRef<Path>) -> Result<Self, EngineError> {
        let dir = data_dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let mut experiments = HashMap::new();
        for (id, exp) in store::load_all(&dir)? {
            let log = EventLog::open(&dir, &id)?;
            experiments.insert(id, Arc::new(Mutex::new(Slot { exp, log: Some(log) })));
        }
        Ok(Self {
            data_dir: Some(dir),
            snapshot_every: 100,
            experiments: RwLock::new(experiments),
            listeners: RwLock::default(),
        })
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.data_dir.as_deref()
    }

    pub fn subscribe(&self, listener: Listener) {
        self.listeners.write().push(listener);
    }

    pub fn experiment_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.experiments.read().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn create(&self, config: ExperimentConfig) -> Result<String, EngineError> {
        let id = uuid::Uuid::new_v4().to_string();
        let exp = Experiment::create(id.clone(), config)?;
        let mut log = match &self.data_dir {
            Some(dir) => Some(EventLog::create(dir, &id)?),
            None => None,
        };
        if let Some(log) = &mut log {
            log.append(exp.events())?;
        }
        self.notify(&id, exp.events());
        self.experiments.write().insert(id.clone(), Arc::new(Mutex::new(Slot { exp, log })));
        Ok(id)
    }

    fn slot(&self, id: &str) -> Result<Arc<Mutex<Slot>>, EngineError> {
        self.experiments.read().get(id).cloned().ok_or_else(|| EngineError::NotFound(id.to_string()))
    }

    fn notify(&self, id: &str, events: &[Event]) {
        let listeners = self.listeners.read();
        for event in events {
            for l in listeners.iter() {
                l(id, event);
            }
        }
    }

    /// Runs a command under the experiment's lock, then persists and
    /// publishes the events it produced.
    fn mutate<T>(&self, id: &str, cmd: impl FnOnce(&mut Experiment) -> Result<T, EngineError>) -> Result<T, EngineError> {
        let slot = self.slot(id)?;
        let mut slot = slot.lock();
        let before = slot.exp.events().len();
        let out = cmd(&mut slot.exp)?;
        let Slot { exp, log } = &mut *slot;
        let fresh = &exp.events()[before..];
        if !fresh.is_empty() {
            if let Some(log) = log {
                log.append(fresh)?;
                let last = exp.last_seq();
                if self.snapshot_every > 0 && last / self.snapshot_every != before as u64 / self.snapshot_every {
                    log.write_snapshot(&exp.snapshot())?;
                }
            }
            self.notify(id, fresh);
        }
        Ok(out)
    }

    fn read<T>(&self, id: &str, f: impl FnOnce(&Experiment) -> T) -> Result<T, EngineError> {
        let slot = self.slot(id)?;
        let slot = slot.lock();
        Ok(f(&slot.exp))
    }

    pub fn initial_evaluation(
        &self,
        id: &str,
        count: usize,
        analyst: Option<Vec<Sample>>,
    ) -> Result<Vec<Job>, EngineError> {
        self.mutate(id, |e| e.initial_evaluation(count, analyst))
    }

    pub fn ingest_result(&self, id: &str, job_id: JobId, raw_outputs: Vec<f64>) -> Result<Job, EngineError> {
        self.mutate(id, |e| e.ingest_result(job_id, raw_outputs))
    }

    /// Suggests up to `n + 1` samples. When the SLA guard predicts a
    /// violation the suggestion carries the warning and its plan, and the
    /// warning is logged.
    pub fn suggest(&self, id: &str, n: usize) -> Result<Suggestion, EngineError> {
        self.suggest_at(id, n, None)
    }

    /// [`Engine::suggest`] with any redistribution plan computed at
    /// `exploitation` instead of the contract's standing level.
    pub fn suggest_at(&self, id: &str, n: usize, exploitation: Option<f64>) -> Result<Suggestion, EngineError> {
        let mut ctx = self.read(id, Experiment::suggest_context)?;
        if let Some(e_x) = exploitation {
            ctx = ctx.with_exploitation(e_x)?;
        }
        let suggestion = ctx.run(n)?;
        if let Some(w) = &suggestion.sla_warning {
            self.mutate(id, |e| e.note_warning(w))?;
        }
        Ok(suggestion)
    }

    pub fn include_user_jobs(
        &self,
        id: &str,
        suggested: Vec<Sample>,
        adds: Vec<Sample>,
        removes: Vec<Sample>,
    ) -> Result<Queued, EngineError> {
        self.mutate(id, |e| e.include_user_jobs(suggested, adds, removes))
    }

    pub fn set_priority(&self, id: &str, job_id: JobId, priority: i64) -> Result<(), EngineError> {
        self.mutate(id, |e| e.set_priority(job_id, priority))
    }

    pub fn apply_strategy(&self, id: &str, plan: &StrategyPlan) -> Result<Queued, EngineError> {
        self.mutate(id, |e| e.apply_strategy(plan))
    }

    pub fn dispatch(&self, id: &str, max: usize) -> Result<Vec<Job>, EngineError> {
        self.mutate(id, |e| e.dispatch(max))
    }

    pub fn label(&self, id: &str, labels: Vec<(Sample, bool)>) -> Result<(), EngineError> {
        self.mutate(id, |e| e.label(labels))
    }

    pub fn snapshot(&self, id: &str) -> Result<ExperimentSnapshot, EngineError> {
        self.read(id, Experiment::snapshot)
    }

    pub fn events_since(&self, id: &str, from: u64) -> Result<Vec<Event>, EngineError> {
        self.read(id, |e| e.events_since(from).to_vec())
    }

    pub fn last_seq(&self, id: &str) -> Result<u64, EngineError> {
        self.read(id, Experiment::last_seq)
    }

    /// Runs `f` against the experiment under its lock.
    pub fn with_experiment<T>(&self, id: &str, f: impl FnOnce(&Experiment) -> T) -> Result<T, EngineError> {
        self.read(id, f)
    }
}
