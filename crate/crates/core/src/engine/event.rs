use serde::{Deserialize, Serialize};

use super::job::{JobId, NewJob};
use super::ExperimentConfig;
use crate::slaguard::ViolationReport;
use crate::space::Sample;

/// One line of the experiment's event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub ts: String,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    Created(Created),
    JobsQueued(JobsQueued),
    Dispatched(JobIds),
    Result(ResultPayload),
    Priority(PriorityPayload),
    Strategy(StrategyPayload),
    Labels(LabelsPayload),
    Warning(WarningPayload),
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::Created(_) => "created",
            EventBody::JobsQueued(_) => "jobs_queued",
            EventBody::Dispatched(_) => "dispatched",
            EventBody::Result(_) => "result",
            EventBody::Priority(_) => "priority",
            EventBody::Strategy(_) => "strategy",
            EventBody::Labels(_) => "labels",
            EventBody::Warning(_) => "warning",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Created {
    pub id: String,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueReason {
    Initial,
    Include,
    Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct JobsQueued {
    pub reason: QueueReason,
    pub jobs: Vec<NewJob>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct JobIds {
    pub job_ids: Vec<JobId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResultPayload {
    pub job_id: JobId,
    pub raw_outputs: Vec<f64>,
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PriorityPayload {
    pub job_id: JobId,
    pub priority: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StrategyPayload {
    pub exploitation_level: f64,
    pub in_cluster: usize,
    pub outside: usize,
    pub skipped: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LabelsPayload {
    pub labels: Vec<(Sample, bool)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WarningPayload {
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub violation: Option<ViolationReport>,
}
