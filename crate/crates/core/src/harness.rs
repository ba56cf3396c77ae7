//! Batch experiments with simulated analysts.
//!
//! Unrestricted runs count the jobs an agent needs to evaluate the optimum;
//! restricted runs give the tool a job budget, engage the SLA guard at the
//! trigger point and score the best result found against the optimum.
//! Every run drives an [`Experiment`] through the same commands a live
//! analyst would use, with the synthetic application evaluated in process.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{random_unclaimed, EngineError, Experiment, ExperimentConfig, JobStatus};
use crate::rng::{derive_seed, splitmix64, CopperRng};
use crate::sampler::SamplerConfig;
use crate::slaguard::{ClusterConfig, SlaContract};
use crate::space::Sample;
use crate::testbed::{AgentProfile, AppKind, Insight, SyntheticApp, TestbedError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("bootstrap needs at least one value")]
    EmptySample,
    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("no records to report")]
    NoRecords,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Testbed(#[from] TestbedError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Unrestricted,
    Restricted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentSpec {
    pub insight: Insight,
    #[serde(default)]
    pub learns: bool,
}

fn default_confidence() -> Vec<f64> {
    vec![0.0, 0.10, 0.25, 0.50, 0.75, 0.90, 1.0]
}

fn default_exploitation() -> Vec<f64> {
    vec![0.0, 0.33, 0.66, 1.0]
}

fn default_agents() -> Vec<AgentSpec> {
    vec![AgentSpec { insight: Insight::None, learns: false }]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub mode: Mode,
    pub app: AppKind,
    /// Table seed; the shipped default when absent.
    #[serde(default)]
    pub app_seed: Option<u64>,
    #[serde(default = "default_agents")]
    pub agents: Vec<AgentSpec>,
    #[serde(default = "default_confidence")]
    pub confidence_levels: Vec<f64>,
    #[serde(default = "default_exploitation")]
    pub exploitation_levels: Vec<f64>,
    #[serde(default)]
    pub max_jobs_grid: Vec<u64>,
    #[serde(default = "default_runs")]
    pub runs_per_cell: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_initial")]
    pub initial_count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub cluster_config: ClusterConfig,
    #[serde(default = "default_trigger")]
    pub trigger_fraction: f64,
    #[serde(default = "default_level")]
    pub ci_level: f64,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
}

fn default_name() -> String {
    "scenario".into()
}
fn default_runs() -> usize {
    500
}
fn default_batch() -> usize {
    5
}
fn default_initial() -> usize {
    10
}
fn default_beta() -> f64 {
    SamplerConfig::default().beta
}
fn default_trigger() -> f64 {
    0.7
}
fn default_level() -> f64 {
    0.95
}
fn default_resamples() -> usize {
    1000
}

impl ScenarioConfig {
    pub fn new(name: impl Into<String>, mode: Mode, app: AppKind) -> Self {
        Self {
            name: name.into(),
            mode,
            app,
            app_seed: None,
            agents: default_agents(),
            confidence_levels: default_confidence(),
            exploitation_levels: default_exploitation(),
            max_jobs_grid: Vec::new(),
            runs_per_cell: default_runs(),
            batch_size: default_batch(),
            initial_count: default_initial(),
            seed: 0,
            beta: default_beta(),
            cluster_config: ClusterConfig::default(),
            trigger_fraction: default_trigger(),
            ci_level: default_level(),
            resamples: default_resamples(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidConfig(m.to_string()));
        if self.runs_per_cell == 0 {
            return bad("runsPerCell must be at least 1");
        }
        if self.batch_size == 0 || self.initial_count == 0 {
            return bad("batchSize and initialCount must be at least 1");
        }
        let unit = |xs: &[f64]| xs.iter().all(|x| (0.0..=1.0).contains(x));
        if !unit(&self.confidence_levels) || !unit(&self.exploitation_levels) || !(0.0..=1.0).contains(&self.beta) {
            return bad("levels and beta must lie in [0, 1]");
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(HarnessError::InvalidLevel(self.ci_level));
        }
        if self.resamples == 0 {
            return bad("resamples must be at least 1");
        }
        match self.mode {
            Mode::Unrestricted if self.agents.is_empty() || self.confidence_levels.is_empty() => {
                bad("unrestricted scenarios need agents and confidence levels")
            }
            Mode::Restricted if self.max_jobs_grid.is_empty() || self.exploitation_levels.is_empty() => {
                bad("restricted scenarios need maxJobsGrid and exploitationLevels")
            }
            Mode::Restricted if self.max_jobs_grid.contains(&0) => bad("maxJobs must be at least 1"),
            _ => {
                self.cluster_config.validate().map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
                SlaContract { cluster_trigger_fraction: self.trigger_fraction, ..SlaContract::new(1) }
                    .validate()
                    .map_err(|e| HarnessError::InvalidConfig(e.to_string()))
            }
        }
    }

    pub fn app(&self) -> SyntheticApp {
        SyntheticApp::new(self.app, self.app_seed.unwrap_or(self.app.default_seed()))
    }

    /// Cells in a fixed order: agents x confidence, or budget x exploitation.
    pub fn cells(&self) -> Vec<CellKey> {
        match self.mode {
            Mode::Unrestricted => self
                .agents
                .iter()
                .flat_map(|a| {
                    self.confidence_levels.iter().map(move |&c| CellKey {
                        app: self.app,
                        insight: a.insight,
                        learns: a.learns,
                        confidence: c,
                        exploitation: None,
                        max_jobs: None,
                    })
                })
                .collect(),
            Mode::Restricted => self
                .max_jobs_grid
                .iter()
                .flat_map(|&m| {
                    self.exploitation_levels.iter().map(move |&e| CellKey {
                        app: self.app,
                        insight: Insight::None,
                        learns: false,
                        confidence: 1.0,
                        exploitation: Some(e),
                        max_jobs: Some(m),
                    })
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CellKey {
    pub app: AppKind,
    pub insight: Insight,
    pub learns: bool,
    pub confidence: f64,
    pub exploitation: Option<f64>,
    pub max_jobs: Option<u64>,
}

impl CellKey {
    pub fn id(&self) -> String {
        match (self.max_jobs, self.exploitation) {
            (Some(m), Some(e)) => format!("{}_max{m}_ex{e:.2}", self.app),
            _ => format!(
                "{}_{}_{}_c{:.2}",
                self.app,
                self.insight.name(),
                if self.learns { "learn" } else { "static" },
                self.confidence
            ),
        }
    }
}

/// Outcome of one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunRecord {
    pub cell: String,
    pub app: AppKind,
    pub insight: Insight,
    pub learns: bool,
    pub confidence: f64,
    pub exploitation: Option<f64>,
    pub max_jobs: Option<u64>,
    pub run: u64,
    pub seed: u64,
    pub jobs_to_optimal: Option<u64>,
    pub best_quality_ratio: f64,
    pub evaluations: u64,
    /// Whether the SLA guard fired and its plan was applied.
    pub strategy_applied: bool,
}

impl RunRecord {
    pub fn key(&self) -> CellKey {
        CellKey {
            app: self.app,
            insight: self.insight,
            learns: self.learns,
            confidence: self.confidence,
            exploitation: self.exploitation,
            max_jobs: self.max_jobs,
        }
    }

    /// The statistic reported for this record's mode.
    pub fn metric(&self) -> Option<f64> {
        if self.max_jobs.is_some() {
            Some(self.best_quality_ratio)
        } else {
            self.jobs_to_optimal.map(|j| j as f64)
        }
    }
}

/// Per-run progress tracker wrapped around an experiment.
struct Session<'a> {
    app: &'a SyntheticApp,
    exp: Experiment,
    agent: AgentProfile,
    rng: CopperRng,
    best: f64,
    found_at: Option<u64>,
    strategy_applied: bool,
}

impl Session<'_> {
    /// Runs every queued job through the application, in dispatch order.
    fn evaluate(&mut self) -> Result<(), HarnessError> {
        let jobs = self.exp.dispatch(usize::MAX)?;
        let mut fresh = Vec::with_capacity(jobs.len());
        for job in jobs {
            let raw = self.app.run(&job.sample).map_err(EngineError::from)?;
            let done = self.exp.ingest_result(job.id, raw)?;
            let f = done.f.expect("completed job has f");
            if f > self.best {
                self.best = f;
            }
            if self.found_at.is_none() && job.sample == self.app.optimum {
                self.found_at = Some(job.id);
            }
            fresh.push((job.sample, f));
        }
        self.agent.learn(&fresh);
        Ok(())
    }

    fn queue_agent_batch(&mut self, suggestions: &[Sample], k: usize) -> Result<bool, HarnessError> {
        let sel = self.agent.select(&self.app.space, suggestions, k, self.exp.claimed(), &mut self.rng);
        if sel.is_empty() {
            return Ok(false);
        }
        self.exp.include_user_jobs(sel.from_tool, sel.from_intuition, Vec::new())?;
        Ok(true)
    }

    fn initial(&mut self, count: usize) -> Result<(), HarnessError> {
        let picks = random_unclaimed(&self.app.space, self.exp.claimed(), count, &mut self.rng);
        let sel = self.agent.select(&self.app.space, &picks, count, self.exp.claimed(), &mut self.rng);
        self.exp.initial_evaluation(count, Some(sel.all()))?;
        self.evaluate()
    }

    fn pending(&self) -> bool {
        self.exp.jobs().iter().any(|j| j.status != JobStatus::Completed)
    }
}

fn session<'a>(
    app: &'a SyntheticApp,
    cfg: &ScenarioConfig,
    key: &CellKey,
    seed: u64,
    sla: SlaContract,
) -> Result<Session<'a>, HarnessError> {
    let mut rng = CopperRng::seed_from_u64(seed);
    let agent = AgentProfile::new(&app.space, &app.optimum, key.insight, key.confidence, key.learns, &mut rng)?;
    let config = ExperimentConfig {
        space: app.space.clone(),
        quality_spec: Default::default(),
        sla,
        cluster_config: cfg.cluster_config.clone(),
        // Suggestions pass their own neighbour count; this one only shapes the
        // outside part of a redistribution plan, drawn as independent
        // constructions with a single local-search step each.
        sampler_config: SamplerConfig { beta: cfg.beta, neighbors: 1, rng_seed: splitmix64(seed) },
    };
    let exp = Experiment::create(format!("{}-{seed:016x}", key.id()), config)?;
    Ok(Session { app, exp, agent, rng, best: f64::NEG_INFINITY, found_at: None, strategy_applied: false })
}

/// One unrestricted run: batches of suggestions filtered through the agent
/// until the optimum has been evaluated.
pub fn unrestricted_run(
    app: &SyntheticApp,
    cfg: &ScenarioConfig,
    key: &CellKey,
    run: u64,
    seed: u64,
) -> Result<RunRecord, HarnessError> {
    let mut sla = SlaContract::new(app.space.size());
    sla.cluster_trigger_fraction = 1.0;
    let mut s = session(app, cfg, key, seed, sla)?;
    s.initial(cfg.initial_count)?;
    while s.found_at.is_none() && s.exp.remaining_budget() > 0 {
        let k = cfg.batch_size.min(s.exp.remaining_budget() as usize);
        let sug = s.exp.suggest(k - 1)?;
        if !s.queue_agent_batch(&sug.samples, k)? {
            break;
        }
        s.evaluate()?;
    }
    Ok(record(key, run, seed, &s))
}

/// One restricted run: an agent that accepts every recommendation works
/// under a job budget; at the trigger point the SLA guard may replace the
/// suggestions with a redistribution plan, which the agent applies.
pub fn restricted_run(
    app: &SyntheticApp,
    cfg: &ScenarioConfig,
    key: &CellKey,
    run: u64,
    seed: u64,
) -> Result<RunRecord, HarnessError> {
    let max_jobs = key.max_jobs.expect("restricted cell has a budget");
    let sla = SlaContract {
        max_jobs,
        cluster_trigger_fraction: cfg.trigger_fraction,
        exploitation_level: key.exploitation.expect("restricted cell has a level"),
    };
    let trigger = sla.trigger_point();
    let mut s = session(app, cfg, key, seed, sla)?;
    s.initial(cfg.initial_count.min(trigger.max(1) as usize).min(max_jobs as usize))?;
    while s.exp.remaining_budget() > 0 {
        let submitted = s.exp.submitted();
        let mut k = cfg.batch_size.min(s.exp.remaining_budget() as usize);
        // Stop batches exactly at the trigger so the guard sees that state.
        if submitted < trigger {
            k = k.min((trigger - submitted) as usize);
        }
        let sug = s.exp.suggest(k - 1)?;
        if let Some(w) = &sug.sla_warning {
            s.exp.note_warning(w)?;
            s.exp.apply_strategy(&w.plan)?;
            s.strategy_applied = true;
            s.evaluate()?;
            continue;
        }
        if sug.exhausted || !s.queue_agent_batch(&sug.samples, k)? {
            break;
        }
        s.evaluate()?;
    }
    debug_assert!(!s.pending());
    Ok(record(key, run, seed, &s))
}

fn record(key: &CellKey, run: u64, seed: u64, s: &Session<'_>) -> RunRecord {
    RunRecord {
        cell: key.id(),
        app: key.app,
        insight: key.insight,
        learns: key.learns,
        confidence: key.confidence,
        exploitation: key.exploitation,
        max_jobs: key.max_jobs,
        run,
        seed,
        jobs_to_optimal: s.found_at,
        best_quality_ratio: s.best / s.app.optimum_value(),
        evaluations: s.exp.results().len() as u64,
        strategy_applied: s.strategy_applied,
    }
}

/// Seed of run `run` in cell `cell`.
pub fn run_seed(master: u64, cell: usize, run: u64) -> u64 {
    derive_seed(master, &[cell as u64, run])
}

/// All runs of one cell, in run order.
pub fn run_cell(cfg: &ScenarioConfig, app: &SyntheticApp, cell: usize, key: &CellKey) -> Result<Vec<RunRecord>, HarnessError> {
    (0..cfg.runs_per_cell as u64)
        .into_par_iter()
        .map(|run| {
            let seed = run_seed(cfg.seed, cell, run);
            match cfg.mode {
                Mode::Unrestricted => unrestricted_run(app, cfg, key, run, seed),
                Mode::Restricted => restricted_run(app, cfg, key, run, seed),
            }
        })
        .collect()
}

pub fn run_unrestricted(cfg: &ScenarioConfig) -> Result<Vec<RunRecord>, HarnessError> {
    let cfg = ScenarioConfig { mode: Mode::Unrestricted, ..cfg.clone() };
    run_scenario(&cfg)
}

pub fn run_restricted(cfg: &ScenarioConfig) -> Result<Vec<RunRecord>, HarnessError> {
    let cfg = ScenarioConfig { mode: Mode::Restricted, ..cfg.clone() };
    run_scenario(&cfg)
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<Vec<RunRecord>, HarnessError> {
    cfg.validate()?;
    let app = cfg.app();
    let mut out = Vec::new();
    for (i, key) in cfg.cells().iter().enumerate() {
        out.extend(run_cell(cfg, &app, i, key)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

/// Sorted means of `resamples` bootstrap resamples.
pub fn bootstrap_means<R: Rng + ?Sized>(values: &[f64], resamples: usize, rng: &mut R) -> Vec<f64> {
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    means
}

/// Order-statistic indices of the percentile interval at `level`.
pub fn percentile_indices(resamples: usize, level: f64) -> (usize, usize) {
    let alpha = (1.0 - level) / 2.0;
    // The epsilon keeps exact products like 0.05 * 400 from rounding the wrong way.
    let lo = (alpha * resamples as f64 + 1e-9).floor() as usize;
    let hi = ((1.0 - alpha) * resamples as f64 - 1e-9).ceil() as usize;
    (lo.min(resamples - 1), hi.saturating_sub(1).clamp(lo.min(resamples - 1), resamples - 1))
}

/// Percentile bootstrap interval of the mean. The bounds are widened to
/// the sample mean in the rare skewed case where it falls outside them.
pub fn bootstrap_ci<R: Rng + ?Sized>(
    values: &[f64],
    level: f64,
    resamples: usize,
    rng: &mut R,
) -> Result<Interval, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::EmptySample);
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(HarnessError::InvalidLevel(level));
    }
    let resamples = resamples.max(1);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let means = bootstrap_means(values, resamples, rng);
    let (lo, hi) = percentile_indices(resamples, level);
    Ok(Interval { mean, lo: means[lo].min(mean), hi: means[hi].max(mean) })
}

/// One row of the cell table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CellSummary {
    pub cell: String,
    pub app: AppKind,
    pub insight: Insight,
    pub learns: bool,
    pub confidence: f64,
    pub exploitation: Option<f64>,
    pub max_jobs: Option<u64>,
    pub metric: String,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl CellSummary {
    pub fn interval(&self) -> Interval {
        Interval { mean: self.mean, lo: self.lo, hi: self.hi }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub cells: Vec<CellSummary>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn cell(&self, id: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.cell == id)
    }

    /// Nested JSON grouping: app, then insight/learning or budget, then one
    /// entry per level.
    pub fn summary(&self) -> serde_json::Value {
        let mut tree: BTreeMap<String, BTreeMap<String, Vec<serde_json::Value>>> = BTreeMap::new();
        for c in &self.cells {
            let (group, level) = match (c.max_jobs, c.exploitation) {
                (Some(m), Some(e)) => (format!("maxJobs={m}"), ("exploitation", e)),
                _ => (
                    format!("{}/{}", c.insight.name(), if c.learns { "learning" } else { "static" }),
                    ("confidence", c.confidence),
                ),
            };
            tree.entry(c.app.name().to_string()).or_default().entry(group).or_default().push(serde_json::json!({
                "cell": c.cell,
                level.0: level.1,
                "metric": c.metric,
                "mean": c.mean,
                "lo": c.lo,
                "hi": c.hi,
                "n": c.n,
            }));
        }
        serde_json::json!({ "groups": tree, "warnings": self.warnings })
    }
}

/// Aggregates records per cell (in order of first appearance) with
/// bootstrap intervals. Cells with no usable value are omitted and named in
/// the warnings.
pub fn report(records: &[RunRecord], level: f64, resamples: usize, seed: u64) -> Result<Report, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::NoRecords);
    }
    let mut order: Vec<String> = Vec::new();
    let mut by_cell: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        if !by_cell.contains_key(&r.cell) {
            order.push(r.cell.clone());
        }
        by_cell.entry(r.cell.clone()).or_default().push(r);
    }
    let mut cells = Vec::new();
    let mut warnings = Vec::new();
    for (i, id) in order.iter().enumerate() {
        let rs = &by_cell[id];
        let values: Vec<f64> = rs.iter().filter_map(|r| r.metric()).collect();
        if values.is_empty() {
            warnings.push(format!("cell {id} has no completed runs and was omitted"));
            continue;
        }
        if values.len() < rs.len() {
            warnings.push(format!("cell {id}: {} of {} runs never reached the optimum", rs.len() - values.len(), rs.len()));
        }
        let mut rng = CopperRng::seed_from_u64(derive_seed(seed, &[0xC1, i as u64]));
        let ci = bootstrap_ci(&values, level, resamples, &mut rng)?;
        let k = rs[0].key();
        cells.push(CellSummary {
            cell: id.clone(),
            app: k.app,
            insight: k.insight,
            learns: k.learns,
            confidence: k.confidence,
            exploitation: k.exploitation,
            max_jobs: k.max_jobs,
            metric: if k.max_jobs.is_some() { "bestQualityRatio" } else { "jobsToOptimal" }.into(),
            mean: ci.mean,
            lo: ci.lo,
            hi: ci.hi,
            n: values.len(),
        });
    }
    Ok(Report { cells, warnings })
}

/// Writes `records.csv`, `cells.csv`, one `<cell>.csv` per cell and
/// `summary.json` into `dir`.
pub fn write_report(dir: &Path, records: &[RunRecord], report: &Report) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("records.csv"), records.iter())?;
    write_csv(&dir.join("cells.csv"), report.cells.iter())?;
    for c in &report.cells {
        write_csv(&dir.join(format!("{}.csv", c.cell)), std::iter::once(c))?;
    }
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&report.summary())? + "\n")?;
    Ok(())
}

fn write_csv<'a, T: Serialize + 'a>(path: &Path, rows: impl Iterator<Item = &'a T>) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<RunRecord>, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small(mode: Mode, app: AppKind) -> ScenarioConfig {
        let mut c = ScenarioConfig::new("t", mode, app);
        c.runs_per_cell = 6;
        c.confidence_levels = vec![1.0];
        c.resamples = 200;
        c
    }

    #[test]
    fn maze_unrestricted_is_bounded_by_the_space() {
        let mut c = small(Mode::Unrestricted, AppKind::MazeLike);
        c.agents = vec![AgentSpec { insight: Insight::Bad, learns: true }, AgentSpec { insight: Insight::Good, learns: false }];
        c.confidence_levels = vec![0.0, 0.5, 1.0];
        let records = run_scenario(&c).unwrap();
        assert_eq!(records.len(), 6 * 6);
        for r in &records {
            let j = r.jobs_to_optimal.expect("optimum always found");
            assert!((1..=54).contains(&j));
            assert_eq!(r.best_quality_ratio, 1.0);
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let c = small(Mode::Unrestricted, AppKind::IfmLike);
        assert_eq!(run_scenario(&c).unwrap(), run_scenario(&c).unwrap());
        let mut c = small(Mode::Restricted, AppKind::MazeLike);
        c.max_jobs_grid = vec![15];
        assert_eq!(run_scenario(&c).unwrap(), run_scenario(&c).unwrap());
    }

    #[test]
    fn restricted_respects_budget_and_levels() {
        let mut c = small(Mode::Restricted, AppKind::SchedsimLike);
        c.max_jobs_grid = vec![30];
        let records = run_scenario(&c).unwrap();
        assert_eq!(records.len(), 4 * 6);
        let levels: Vec<f64> = c.cells().iter().map(|k| k.exploitation.unwrap()).collect();
        assert_eq!(levels, vec![0.0, 0.33, 0.66, 1.0]);
        for r in &records {
            assert!(r.evaluations <= 30);
            assert!(r.best_quality_ratio > 0.0 && r.best_quality_ratio <= 1.0);
            if r.jobs_to_optimal.is_some() {
                assert_eq!(r.best_quality_ratio, 1.0);
            }
        }
    }

    #[test]
    fn bootstrap_examples() {
        let mut rng = CopperRng::seed_from_u64(1);
        let ci = bootstrap_ci(&[5.0; 20], 0.95, 500, &mut rng).unwrap();
        assert_eq!((ci.mean, ci.lo, ci.hi), (5.0, 5.0, 5.0));
        let values: Vec<f64> = (0..500).map(|i| ((i * 37) % 101) as f64).collect();
        let ci = bootstrap_ci(&values, 0.95, 1000, &mut CopperRng::seed_from_u64(2)).unwrap();
        assert!(ci.lo <= ci.mean && ci.mean <= ci.hi);
        let wide = bootstrap_ci(&values, 0.99, 1000, &mut CopperRng::seed_from_u64(2)).unwrap();
        assert!(wide.lo <= ci.lo && ci.hi <= wide.hi);
        assert!(matches!(bootstrap_ci(&[], 0.95, 10, &mut rng), Err(HarnessError::EmptySample)));
    }

    #[test]
    fn bootstrap_bounds_are_order_statistics() {
        let values: Vec<f64> = (0..50).map(|i| (i as f64).sqrt()).collect();
        let ci = bootstrap_ci(&values, 0.9, 400, &mut CopperRng::seed_from_u64(9)).unwrap();
        let means = bootstrap_means(&values, 400, &mut CopperRng::seed_from_u64(9));
        assert_eq!(ci.lo, means[20]);
        assert_eq!(ci.hi, means[379]);
    }

    #[test]
    fn report_shapes() {
        let mut c = small(Mode::Unrestricted, AppKind::MazeLike);
        c.runs_per_cell = 5;
        let records = run_scenario(&c).unwrap();
        let rep = report(&records, 0.95, 100, 0).unwrap();
        assert_eq!(rep.cells.len(), 1);
        assert_eq!(rep.cells[0].n, 5);
        let summary = rep.summary();
        assert!(summary["groups"]["maze-like"]["none/static"].as_array().unwrap().len() == 1);

        let mut missing = records.clone();
        for r in &mut missing {
            r.cell = "other".into();
            r.jobs_to_optimal = None;
        }
        let mut all = records.clone();
        all.extend(missing);
        let rep = report(&all, 0.95, 100, 0).unwrap();
        assert_eq!(rep.cells.len(), 1);
        assert_eq!(rep.warnings.len(), 1);
        assert!(matches!(report(&[], 0.95, 10, 0), Err(HarnessError::NoRecords)));
    }

    #[test]
    fn written_reports_are_byte_identical() {
        let mut c = small(Mode::Restricted, AppKind::MazeLike);
        c.max_jobs_grid = vec![12, 20];
        c.exploitation_levels = vec![0.0, 1.0];
        let write = || {
            let dir = tempfile::tempdir().unwrap();
            let records = run_scenario(&c).unwrap();
            let rep = report(&records, c.ci_level, c.resamples, c.seed).unwrap();
            write_report(dir.path(), &records, &rep).unwrap();
            let back = read_records(&dir.path().join("records.csv")).unwrap();
            assert_eq!(back, records);
            let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir.path())
                .unwrap()
                .map(|e| {
                    let e = e.unwrap();
                    (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
                })
                .collect();
            files.sort();
            files
        };
        let a = write();
        assert_eq!(a.len(), 4 + 3);
        assert_eq!(a, write());
    }

    #[test]
    fn invalid_scenarios() {
        let mut c = small(Mode::Restricted, AppKind::MazeLike);
        assert!(c.validate().is_err());
        c.max_jobs_grid = vec![10];
        c.validate().unwrap();
        c.runs_per_cell = 0;
        assert!(c.validate().is_err());
        let json = r#"{"mode":"unrestricted","app":"maze-like","confidenceLevels":[1.5]}"#;
        let c: ScenarioConfig = serde_json::from_str(json).unwrap();
        assert!(c.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn percentile_indices_nest(resamples in 1usize..3000, a in 0.5f64..0.99, b in 0.5f64..0.99) {
            let (lo_a, hi_a) = percentile_indices(resamples, a.min(b));
            let (lo_b, hi_b) = percentile_indices(resamples, a.max(b));
            prop_assert!(lo_b <= lo_a && hi_a <= hi_b);
            prop_assert!(lo_a <= hi_a && hi_b < resamples);
        }
    }
}
