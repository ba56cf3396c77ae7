use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::event::*;
use super::job::{Job, JobId, JobOrigin, JobStatus, NewJob};
use super::{EngineError, ExperimentConfig};
use crate::doe::{DoeModel, DoeSnapshot};
use crate::rng::{derive_seed, stream, CopperRng};
use crate::sampler::{sampling, SamplerConfig};
use crate::slaguard::{
    interest_clusters, pending_in_clusters, predict_violation, redistribution_plan, ClusterModel, StrategyPlan,
    ViolationReport,
};
use crate::space::{Sample, SampleSet};

const INITIAL_STREAM: u64 = 1;
const SUGGEST_STREAM: u64 = 2;

fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Result of a suggestion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Suggestion {
    pub samples: Vec<Sample>,
    pub exhausted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sla_warning: Option<SlaWarning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SlaWarning {
    pub report: ViolationReport,
    pub clusters: ClusterModel,
    pub plan: StrategyPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Rejected {
    pub sample: Sample,
    pub reason: String,
}

/// Jobs created by a command plus the items it declined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Queued {
    pub jobs: Vec<Job>,
    pub rejected: Vec<Rejected>,
}

/// Serializable view of the full experiment state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExperimentSnapshot {
    pub id: String,
    pub created_at: String,
    pub last_seq: u64,
    pub config: ExperimentConfig,
    pub submitted: u64,
    pub completed: u64,
    pub remaining_budget: u64,
    pub jobs: Vec<Job>,
    pub doe: DoeSnapshot,
    pub clusters: Option<ClusterModel>,
    pub labels: Vec<(Sample, bool)>,
    pub last_warning: Option<ViolationReport>,
}

/// Event-sourced state of one experiment.
///
/// Every command validates its input, then records one or more events and
/// folds them into the state through [`Experiment::apply`], the same path
/// used when replaying a log.
#[derive(Debug, Clone)]
pub struct Experiment {
    id: String,
    created_at: String,
    config: ExperimentConfig,
    jobs: Vec<Job>,
    doe: DoeModel,
    claimed: SampleSet,
    completed: Vec<(Sample, f64)>,
    labels: Vec<(Sample, bool)>,
    label_index: HashMap<Sample, usize>,
    last_warning: Option<ViolationReport>,
    events: Vec<Event>,
}

impl Experiment {
    pub fn create(id: impl Into<String>, config: ExperimentConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let created = Event {
            seq: 1,
            ts: timestamp(),
            body: EventBody::Created(Created { id: id.into(), config }),
        };
        Self::replay(vec![created])
    }

    /// Rebuilds an experiment from its complete event log.
    pub fn replay(events: impl IntoIterator<Item = Event>) -> Result<Self, EngineError> {
        let mut events = events.into_iter();
        let first = events.next().ok_or_else(|| EngineError::Corrupt("empty event log".into()))?;
        let EventBody::Created(created) = &first.body else {
            return Err(EngineError::Corrupt("log does not start with a created event".into()));
        };
        if first.seq != 1 {
            return Err(EngineError::Corrupt(format!("first event has seq {}", first.seq)));
        }
        let config = created.config.clone();
        config.validate().map_err(|e| EngineError::Corrupt(e.to_string()))?;
        let mut exp = Experiment {
            id: created.id.clone(),
            created_at: first.ts.clone(),
            doe: DoeModel::new(&config.space),
            config,
            jobs: Vec::new(),
            claimed: SampleSet::new(),
            completed: Vec::new(),
            labels: Vec::new(),
            label_index: HashMap::new(),
            last_warning: None,
            events: vec![first],
        };
        for event in events {
            let expected = exp.next_seq();
            if event.seq != expected {
                return Err(EngineError::Corrupt(format!("expected seq {expected}, found {}", event.seq)));
            }
            exp.apply(&event.body).map_err(|e| EngineError::Corrupt(format!("seq {}: {e}", event.seq)))?;
            exp.events.push(event);
        }
        Ok(exp)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn events_since(&self, from: u64) -> &[Event] {
        let start = (from.max(1) - 1) as usize;
        &self.events[start.min(self.events.len())..]
    }

    pub fn last_seq(&self) -> u64 {
        self.events.len() as u64
    }

    fn next_seq(&self) -> u64 {
        self.last_seq() + 1
    }

    pub fn jobs(&self) -> &[Job] {
        &self.jobs
    }

    pub fn job(&self, id: JobId) -> Option<&Job> {
        id.checked_sub(1).and_then(|i| self.jobs.get(i as usize))
    }

    pub fn doe(&self) -> &DoeModel {
        &self.doe
    }

    /// Completed `(sample, f)` pairs in completion order.
    pub fn results(&self) -> &[(Sample, f64)] {
        &self.completed
    }

    /// Samples that already have a job.
    pub fn claimed(&self) -> &SampleSet {
        &self.claimed
    }

    pub fn submitted(&self) -> u64 {
        self.jobs.len() as u64
    }

    pub fn remaining_budget(&self) -> u64 {
        self.config.sla.max_jobs.saturating_sub(self.submitted())
    }

    fn commit(&mut self, body: EventBody) -> Result<(), EngineError> {
        self.apply(&body)?;
        let event = Event { seq: self.next_seq(), ts: timestamp(), body };
        self.events.push(event);
        Ok(())
    }

    fn apply(&mut self, body: &EventBody) -> Result<(), EngineError> {
        match body {
            EventBody::Created(_) => return Err(EngineError::Corrupt("duplicate created event".into())),
            EventBody::JobsQueued(q) => {
                if self.submitted() + q.jobs.len() as u64 > self.config.sla.max_jobs {
                    return Err(EngineError::Corrupt("queued jobs exceed the budget".into()));
                }
                for (next, j) in (self.submitted() + 1..).zip(&q.jobs) {
                    if j.id != next {
                        return Err(EngineError::Corrupt(format!("job id {} out of order", j.id)));
                    }
                    self.config.space.validate(&j.sample)?;
                    if self.claimed.contains(&j.sample) {
                        return Err(EngineError::Corrupt(format!("sample {} queued twice", j.sample)));
                    }
                }
                for j in &q.jobs {
                    self.claimed.insert(j.sample.clone());
                    self.jobs.push(Job {
                        id: j.id,
                        sample: j.sample.clone(),
                        status: JobStatus::Queued,
                        priority: j.priority,
                        origin: j.origin,
                        f: None,
                        raw_outputs: None,
                    });
                }
            }
            EventBody::Dispatched(ids) => {
                for &id in &ids.job_ids {
                    if self.job(id).map(|j| j.status) != Some(JobStatus::Queued) {
                        return Err(EngineError::Corrupt(format!("job {id} dispatched while not queued")));
                    }
                }
                for &id in &ids.job_ids {
                    self.job_mut(id)?.status = JobStatus::Running;
                }
            }
            EventBody::Result(r) => {
                let job = self.job(r.job_id).ok_or(EngineError::UnknownJob(r.job_id))?;
                if job.status == JobStatus::Completed {
                    return Err(EngineError::DuplicateResult(r.job_id));
                }
                let sample = job.sample.clone();
                self.doe.ingest(&sample, r.f)?;
                let job = self.job_mut(r.job_id)?;
                job.status = JobStatus::Completed;
                job.f = Some(r.f);
                job.raw_outputs = Some(r.raw_outputs.clone());
                self.completed.push((sample, r.f));
            }
            EventBody::Priority(p) => {
                let job = self.job_mut(p.job_id)?;
                if job.status == JobStatus::Completed {
                    return Err(EngineError::JobClosed(p.job_id));
                }
                job.priority = p.priority;
            }
            EventBody::Labels(l) => {
                for (s, _) in &l.labels {
                    self.config.space.validate(s)?;
                }
                for (s, good) in &l.labels {
                    match self.label_index.get(s) {
                        Some(&i) => self.labels[i].1 = *good,
                        None => {
                            self.label_index.insert(s.clone(), self.labels.len());
                            self.labels.push((s.clone(), *good));
                        }
                    }
                }
            }
            EventBody::Warning(w) => {
                if w.violation.is_some() {
                    self.last_warning = w.violation.clone();
                }
            }
            EventBody::Strategy(_) => {}
        }
        Ok(())
    }

    fn job_mut(&mut self, id: JobId) -> Result<&mut Job, EngineError> {
        id.checked_sub(1).and_then(|i| self.jobs.get_mut(i as usize)).ok_or(EngineError::UnknownJob(id))
    }

    fn rng(&self, path: &[u64]) -> CopperRng {
        let mut full = vec![self.next_seq()];
        full.extend_from_slice(path);
        stream(self.config.sampler_config.rng_seed, &full)
    }

    /// Queues the first jobs: the analyst's picks when given, otherwise
    /// `count` distinct random unevaluated samples. Requests beyond the
    /// budget or the unevaluated pool are truncated and a warning is logged.
    pub fn initial_evaluation(&mut self, count: usize, analyst: Option<Vec<Sample>>) -> Result<Vec<Job>, EngineError> {
        let remaining = self.remaining_budget() as usize;
        if remaining == 0 {
            return Err(EngineError::BudgetExhausted);
        }
        let (picks, origin, requested) = match analyst.filter(|a| !a.is_empty()) {
            Some(list) => {
                let mut seen = SampleSet::new();
                let mut picks = Vec::new();
                for s in list {
                    self.config.space.validate(&s)?;
                    if self.claimed.contains(&s) {
                        return Err(EngineError::AlreadyClaimed(s));
                    }
                    if seen.insert(s.clone()) {
                        picks.push(s);
                    }
                }
                let n = picks.len();
                (picks, JobOrigin::Analyst, n)
            }
            None => {
                if count == 0 {
                    return Err(EngineError::InvalidRequest("initial evaluation needs count >= 1".into()));
                }
                let mut rng = self.rng(&[INITIAL_STREAM]);
                let picks = random_unclaimed(&self.config.space, &self.claimed, count.min(remaining), &mut rng);
                (picks, JobOrigin::Copper, count)
            }
        };
        let mut picks = picks;
        picks.truncate(remaining);
        if picks.len() < requested {
            self.commit(EventBody::Warning(WarningPayload {
                message: format!(
                    "initial evaluation truncated from {requested} to {} jobs (budget or unevaluated pool)",
                    picks.len()
                ),
                violation: None,
            }))?;
        }
        self.queue(picks.into_iter().map(|s| (s, origin)).collect(), QueueReason::Initial)
    }

    fn queue(&mut self, items: Vec<(Sample, JobOrigin)>, reason: QueueReason) -> Result<Vec<Job>, EngineError> {
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let first = self.submitted() + 1;
        let jobs: Vec<NewJob> = items
            .into_iter()
            .enumerate()
            .map(|(i, (sample, origin))| NewJob { id: first + i as u64, sample, origin, priority: 0 })
            .collect();
        let ids: Vec<JobId> = jobs.iter().map(|j| j.id).collect();
        self.commit(EventBody::JobsQueued(JobsQueued { reason, jobs }))?;
        Ok(ids.iter().map(|&id| self.jobs[(id - 1) as usize].clone()).collect())
    }

    /// Records a job's raw outputs and folds its quality into the model.
    pub fn ingest_result(&mut self, job_id: JobId, raw_outputs: Vec<f64>) -> Result<Job, EngineError> {
        let job = self.job(job_id).ok_or(EngineError::UnknownJob(job_id))?;
        if job.status == JobStatus::Completed {
            return Err(EngineError::DuplicateResult(job_id));
        }
        let f = self.config.quality_spec.wrap(&raw_outputs)?;
        self.commit(EventBody::Result(ResultPayload { job_id, raw_outputs, f }))?;
        Ok(self.jobs[(job_id - 1) as usize].clone())
    }

    /// Inputs of a suggestion, detached from the experiment so the
    /// computation can run without holding it.
    pub fn suggest_context(&self) -> SuggestContext {
        SuggestContext {
            config: self.config.clone(),
            doe: self.doe.clone(),
            claimed: self.claimed.clone(),
            completed: self.completed.clone(),
            labels: self.label_map(),
            submitted: self.submitted(),
            seed: derive_seed(self.config.sampler_config.rng_seed, &[self.next_seq(), SUGGEST_STREAM]),
        }
    }

    fn label_map(&self) -> HashMap<Sample, bool> {
        self.labels.iter().cloned().collect()
    }

    /// Suggestion computed in place; same result as running
    /// [`Experiment::suggest_context`].
    pub fn suggest(&self, n: usize) -> Result<Suggestion, EngineError> {
        let labels = self.label_map();
        let seed = derive_seed(self.config.sampler_config.rng_seed, &[self.next_seq(), SUGGEST_STREAM]);
        compute_suggestion(
            &SuggestInputs {
                config: &self.config,
                doe: &self.doe,
                claimed: &self.claimed,
                completed: &self.completed,
                labels: &labels,
                submitted: self.submitted(),
                seed,
            },
            n,
        )
    }

    /// Logs the warning attached to a suggestion.
    pub fn note_warning(&mut self, warning: &SlaWarning) -> Result<(), EngineError> {
        let r = &warning.report;
        let plan = &warning.plan;
        self.commit(EventBody::Warning(WarningPayload {
            message: format!(
                "{} pending in-cluster jobs against {} remaining; plan at exploitation {:.2}: {} inside, {} outside",
                r.pending,
                r.remaining_budget,
                plan.exploitation_level,
                plan.in_cluster_count(),
                plan.outside_count
            ),
            violation: Some(r.clone()),
        }))
    }

    /// Queues `(suggested - removes) + adds`. Analyst additions come first,
    /// then the remaining suggestions in order, until the budget runs out.
    pub fn include_user_jobs(
        &mut self,
        suggested: Vec<Sample>,
        adds: Vec<Sample>,
        removes: Vec<Sample>,
    ) -> Result<Queued, EngineError> {
        let removes: SampleSet = removes.into_iter().collect();
        let mut budget = self.remaining_budget() as usize;
        let mut taken = SampleSet::new();
        let mut items = Vec::new();
        let mut rejected = Vec::new();
        let candidates = adds
            .into_iter()
            .map(|s| (s, JobOrigin::Analyst))
            .chain(suggested.into_iter().filter(|s| !removes.contains(s)).map(|s| (s, JobOrigin::Copper)));
        for (sample, origin) in candidates {
            if taken.contains(&sample) {
                continue;
            }
            let reason = if let Err(e) = self.config.space.validate(&sample) {
                Some(e.to_string())
            } else if self.claimed.contains(&sample) {
                Some("sample already has a job".to_string())
            } else if budget == 0 {
                Some("job budget exhausted".to_string())
            } else {
                None
            };
            match reason {
                Some(reason) => rejected.push(Rejected { sample, reason }),
                None => {
                    taken.insert(sample.clone());
                    items.push((sample, origin));
                    budget -= 1;
                }
            }
        }
        let jobs = self.queue(items, QueueReason::Include)?;
        Ok(Queued { jobs, rejected })
    }

    pub fn set_priority(&mut self, job_id: JobId, priority: i64) -> Result<(), EngineError> {
        let job = self.job(job_id).ok_or(EngineError::UnknownJob(job_id))?;
        if job.status == JobStatus::Completed {
            return Err(EngineError::JobClosed(job_id));
        }
        self.commit(EventBody::Priority(PriorityPayload { job_id, priority }))
    }

    /// Queues a plan's samples in plan order, skipping stale items.
    pub fn apply_strategy(&mut self, plan: &StrategyPlan) -> Result<Queued, EngineError> {
        let samples = plan.samples();
        if samples.is_empty() {
            return Ok(Queued { jobs: Vec::new(), rejected: Vec::new() });
        }
        let mut budget = self.remaining_budget() as usize;
        let mut taken = SampleSet::new();
        let mut items = Vec::new();
        let mut rejected = Vec::new();
        for sample in samples {
            let reason = if let Err(e) = self.config.space.validate(&sample) {
                Some(e.to_string())
            } else if self.claimed.contains(&sample) || taken.contains(&sample) {
                Some("stale plan item: sample already has a job".to_string())
            } else if budget == 0 {
                Some("job budget exhausted".to_string())
            } else {
                None
            };
            match reason {
                Some(reason) => rejected.push(Rejected { sample, reason }),
                None => {
                    taken.insert(sample.clone());
                    items.push((sample, JobOrigin::Copper));
                    budget -= 1;
                }
            }
        }
        let in_cluster = plan.in_cluster_count().min(items.len());
        self.commit(EventBody::Strategy(StrategyPayload {
            exploitation_level: plan.exploitation_level,
            in_cluster,
            outside: items.len() - in_cluster,
            skipped: rejected.iter().map(|r| r.sample.clone()).collect(),
        }))?;
        let jobs = self.queue(items, QueueReason::Strategy)?;
        Ok(Queued { jobs, rejected })
    }

    /// Queued jobs in dispatch order: priority descending, then enqueue order.
    pub fn dispatch_order(&self) -> Vec<JobId> {
        let mut queued: Vec<&Job> = self.jobs.iter().filter(|j| j.status == JobStatus::Queued).collect();
        queued.sort_by_key(|j| (std::cmp::Reverse(j.priority), j.id));
        queued.into_iter().map(|j| j.id).collect()
    }

    /// Marks up to `max` queued jobs as running and returns them.
    pub fn dispatch(&mut self, max: usize) -> Result<Vec<Job>, EngineError> {
        let ids: Vec<JobId> = self.dispatch_order().into_iter().take(max).collect();
        if ids.is_empty() {
            return Ok(Vec::new());
        }
        self.commit(EventBody::Dispatched(JobIds { job_ids: ids.clone() }))?;
        Ok(ids.iter().map(|&id| self.jobs[(id - 1) as usize].clone()).collect())
    }

    /// Records analyst good/bad judgements used by manual goodness.
    pub fn label(&mut self, labels: Vec<(Sample, bool)>) -> Result<(), EngineError> {
        for (s, _) in &labels {
            self.config.space.validate(s)?;
        }
        self.commit(EventBody::Labels(LabelsPayload { labels }))
    }

    /// Interest clusters of the current results, once the trigger is reached.
    pub fn clusters(&self) -> Option<ClusterModel> {
        current_clusters(&self.config, self.submitted(), &self.completed, &self.label_map())
    }

    pub fn snapshot(&self) -> ExperimentSnapshot {
        ExperimentSnapshot {
            id: self.id.clone(),
            created_at: self.created_at.clone(),
            last_seq: self.last_seq(),
            config: self.config.clone(),
            submitted: self.submitted(),
            completed: self.completed.len() as u64,
            remaining_budget: self.remaining_budget(),
            jobs: self.jobs.clone(),
            doe: self.doe.snapshot(&self.config.space),
            clusters: self.clusters(),
            labels: self.labels.clone(),
            last_warning: self.last_warning.clone(),
        }
    }
}

fn current_clusters(
    config: &ExperimentConfig,
    submitted: u64,
    completed: &[(Sample, f64)],
    labels: &HashMap<Sample, bool>,
) -> Option<ClusterModel> {
    if completed.is_empty() || !config.sla.triggered(submitted) {
        return None;
    }
    interest_clusters(completed, &config.cluster_config, Some(labels)).ok()
}

/// Owned suggestion inputs; see [`Experiment::suggest_context`].
#[derive(Debug, Clone)]
pub struct SuggestContext {
    config: ExperimentConfig,
    doe: DoeModel,
    claimed: SampleSet,
    completed: Vec<(Sample, f64)>,
    labels: HashMap<Sample, bool>,
    submitted: u64,
    seed: u64,
}

impl SuggestContext {
    pub fn with_exploitation(mut self, exploitation: f64) -> Result<Self, EngineError> {
        self.config.sla.exploitation_level = exploitation;
        self.config.sla.validate()?;
        Ok(self)
    }

    pub fn run(&self, n: usize) -> Result<Suggestion, EngineError> {
        compute_suggestion(
            &SuggestInputs {
                config: &self.config,
                doe: &self.doe,
                claimed: &self.claimed,
                completed: &self.completed,
                labels: &self.labels,
                submitted: self.submitted,
                seed: self.seed,
            },
            n,
        )
    }
}

struct SuggestInputs<'a> {
    config: &'a ExperimentConfig,
    doe: &'a DoeModel,
    claimed: &'a SampleSet,
    completed: &'a [(Sample, f64)],
    labels: &'a HashMap<Sample, bool>,
    submitted: u64,
    seed: u64,
}

fn compute_suggestion(inp: &SuggestInputs<'_>, n: usize) -> Result<Suggestion, EngineError> {
    let cfg = inp.config;
    let remaining = cfg.sla.max_jobs.saturating_sub(inp.submitted);
    if remaining == 0 {
        return Ok(Suggestion { samples: Vec::new(), exhausted: true, sla_warning: None });
    }
    let mut rng = CopperRng::seed_from_u64(inp.seed);
    if let Some(clusters) = current_clusters(cfg, inp.submitted, inp.completed, inp.labels) {
        if !clusters.is_empty() {
            let pending = pending_in_clusters(&cfg.space, &clusters, inp.claimed) as u64;
            let report = predict_violation(pending, remaining);
            if report.violation {
                let plan = redistribution_plan(
                    &cfg.space,
                    &clusters,
                    inp.claimed,
                    inp.doe,
                    remaining,
                    cfg.sla.exploitation_level,
                    &cfg.sampler_config,
                    &mut rng,
                )?;
                return Ok(Suggestion {
                    samples: plan.samples(),
                    exhausted: false,
                    sla_warning: Some(SlaWarning { report, clusters, plan }),
                });
            }
        }
    }
    let config = SamplerConfig { neighbors: n, ..cfg.sampler_config.clone() };
    let mut out = sampling(inp.doe, &cfg.space, &config, inp.claimed, &mut rng)?;
    out.samples.truncate(remaining as usize);
    Ok(Suggestion { samples: out.samples, exhausted: out.exhausted, sla_warning: None })
}

/// Up to `count` distinct samples not in `claimed`, uniformly at random.
pub fn random_unclaimed<R: Rng + ?Sized>(
    space: &crate::space::ParameterSpace,
    claimed: &SampleSet,
    count: usize,
    rng: &mut R,
) -> Vec<Sample> {
    let size = space.size();
    let free = size.saturating_sub(claimed.len() as u64);
    let count = count.min(free as usize);
    let mut out = Vec::with_capacity(count);
    // Rejection sampling while the free pool is large, enumeration otherwise.
    if free >= 2 * count as u64 && free * 2 >= size {
        let mut taken = SampleSet::new();
        while out.len() < count {
            let s = space.unrank(rng.gen_range(0..size)).expect("rank in range");
            if !claimed.contains(&s) && taken.insert(s.clone()) {
                out.push(s);
            }
        }
    } else {
        let mut pool: Vec<Sample> = space.iter().filter(|s| !claimed.contains(s)).collect();
        let (chosen, _) = pool.partial_shuffle(rng, count);
        out.extend(chosen.iter().cloned());
    }
    out
}
