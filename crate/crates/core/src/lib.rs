//! Copper: SLA-aware interactive parameter-sweep optimization.
//!
//! The crate is organised bottom-up:
//!
//! * [`space`] discrete parameter spaces, samples and the quality wrapper
//! * [`doe`] the full-factorial main-effect model of value qualities
//! * [`sampler`] GRASP construction and nearest-unevaluated local search
//! * [`slaguard`] DBSCAN interest clusters, violation prediction and plans
//! * [`engine`] the event-sourced experiment orchestrator
//! * [`testbed`] synthetic applications and simulated analysts
//! * [`harness`] batch runs, bootstrap intervals and reports

pub mod doe;
pub mod engine;
pub mod harness;
pub mod rng;
pub mod sampler;
pub mod slaguard;
pub mod space;
pub mod testbed;

pub use doe::{DoeModel, DoeSnapshot};
pub use sampler::{sampling, SamplerConfig, SamplingOutcome};
pub use slaguard::{
    ClusterConfig, ClusterModel, Goodness, SlaContract, StrategyPlan, ViolationReport,
};
pub use space::{distance, wrap_quality, Parameter, ParameterSpace, QualitySpec, Sample, SampleSet};
