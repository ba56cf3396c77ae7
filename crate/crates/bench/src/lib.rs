//! Fixtures shared by the benchmarks.

use copper_core::engine::{Experiment, ExperimentConfig};
use copper_core::testbed::{AppKind, SyntheticApp};

/// An experiment on `kind` with `evaluated` completed jobs, past the
/// clustering trigger when `evaluated` is large enough.
pub fn warmed_experiment(kind: AppKind, max_jobs: u64, evaluated: usize) -> (SyntheticApp, Experiment) {
    let app = SyntheticApp::default_for(kind);
    let mut exp = Experiment::create("bench", ExperimentConfig::new(app.space.clone(), max_jobs)).expect("valid config");
    exp.initial_evaluation(evaluated, None).expect("budget");
    for job in exp.dispatch(usize::MAX).expect("dispatch") {
        let raw = app.run(&job.sample).expect("sample in space");
        exp.ingest_result(job.id, raw).expect("fresh job");
    }
    (app, exp)
}
