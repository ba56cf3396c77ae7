use std::path::Path;
use std::time::Duration;

use copper_api::adapter::synthetic_router;
use copper_api::{router, ErrorBody, ServiceConfig};
use copper_core::engine::{ExperimentConfig, ExperimentSnapshot, Job, Queued, Suggestion};
use copper_core::testbed::{AppKind, SyntheticApp};
use copper_core::{ClusterConfig, Goodness, Sample, StrategyPlan};
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};
use tokio::net::TcpListener;

struct Server {
    url: String,
    task: tokio::task::JoinHandle<()>,
}

impl Drop for Server {
    fn drop(&mut self) {
        self.task.abort();
    }
}

async fn start(config: ServiceConfig) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let port = listener.local_addr().unwrap().port();
    let state = config.build(port).unwrap();
    let task = tokio::spawn(async move { axum::serve(listener, router(state)).await.unwrap() });
    Server { url: format!("http://127.0.0.1:{port}"), task }
}

fn maze() -> SyntheticApp {
    SyntheticApp::default_for(AppKind::MazeLike)
}

async fn create(c: &Client, url: &str, max_jobs: u64) -> String {
    let config = ExperimentConfig::new(maze().space, max_jobs);
    let r = c.post(format!("{url}/experiments")).json(&config).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::CREATED);
    r.json::<Value>().await.unwrap()["id"].as_str().unwrap().to_string()
}

async fn snapshot(c: &Client, url: &str, id: &str) -> ExperimentSnapshot {
    c.get(format!("{url}/experiments/{id}")).send().await.unwrap().json().await.unwrap()
}

async fn error_code(r: reqwest::Response) -> (StatusCode, String) {
    let status = r.status();
    let body: ErrorBody = r.json().await.unwrap();
    (status, body.error.code)
}

#[tokio::test]
async fn health_and_error_documents() {
    let s = start(ServiceConfig::default()).await;
    let c = Client::new();
    let health: Value = c.get(format!("{}/healthz", s.url)).send().await.unwrap().json().await.unwrap();
    assert_eq!(health, json!({ "status": "ok" }));

    let r = c.get(format!("{}/experiments/nope", s.url)).send().await.unwrap();
    assert_eq!(error_code(r).await, (StatusCode::NOT_FOUND, "not_found".into()));

    let r = c
        .post(format!("{}/experiments", s.url))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(error_code(r).await, (StatusCode::BAD_REQUEST, "bad_request".into()));

    let mut config = serde_json::to_value(ExperimentConfig::new(maze().space, 10)).unwrap();
    config["sla"]["maxJobs"] = json!(0);
    let r = c.post(format!("{}/experiments", s.url)).json(&config).send().await.unwrap();
    assert_eq!(error_code(r).await, (StatusCode::BAD_REQUEST, "invalid".into()));

    let id = create(&c, &s.url, 10).await;
    let r = c.get(format!("{}/experiments/{id}/suggestions?n=abc", s.url)).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn analyst_session_round_trip() {
    let s = start(ServiceConfig::default()).await;
    let c = Client::new();
    let app = maze();
    let id = create(&c, &s.url, 20).await;
    let base = format!("{}/experiments/{id}", s.url);

    let r = c.post(format!("{base}/initial")).json(&json!({ "count": 5 })).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::CREATED);
    let jobs: Vec<Job> = serde_json::from_value(r.json::<Value>().await.unwrap()["jobs"].take()).unwrap();
    assert_eq!(jobs.len(), 5);

    let dispatched: Value = c.post(format!("{base}/dispatch?max=2")).send().await.unwrap().json().await.unwrap();
    assert_eq!(dispatched["jobs"].as_array().unwrap().len(), 2);

    for job in &jobs {
        let raw = app.run(&job.sample).unwrap();
        let r = c.post(format!("{base}/jobs/{}/result", job.id)).json(&json!({ "rawOutputs": raw })).send().await.unwrap();
        assert_eq!(r.status(), StatusCode::OK);
        let done: Job = r.json().await.unwrap();
        assert_eq!(done.f, Some(raw[0]));
    }
    let before = snapshot(&c, &s.url, &id).await;
    assert_eq!(before.completed, 5);

    // Duplicate callback: conflict and no state change.
    let r = c.post(format!("{base}/jobs/1/result")).json(&json!({ "rawOutputs": [0.0] })).send().await.unwrap();
    assert_eq!(error_code(r).await, (StatusCode::CONFLICT, "duplicate_result".into()));
    assert_eq!(snapshot(&c, &s.url, &id).await, before);

    let r = c.post(format!("{base}/jobs/99/result")).json(&json!({ "rawOutputs": [0.0] })).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);

    let sug: Suggestion = c.get(format!("{base}/suggestions?n=3")).send().await.unwrap().json().await.unwrap();
    assert!(!sug.samples.is_empty() && sug.samples.len() <= 4);
    let mut suggested = sug.samples.clone();
    let removed = suggested.pop().unwrap();
    let added = app.space.iter().find(|s| !before.jobs.iter().any(|j| &j.sample == s) && !sug.samples.contains(s)).unwrap();
    let queued: Queued = c
        .post(format!("{base}/jobs"))
        .json(&json!({ "suggested": sug.samples, "adds": [added], "removes": [removed] }))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(queued.jobs.len(), sug.samples.len());
    assert_eq!(queued.jobs[0].sample, added);
    assert!(queued.jobs.iter().all(|j| j.sample != removed));

    let last = queued.jobs.last().unwrap().id;
    let job: Job = c
        .post(format!("{base}/jobs/{last}/priority"))
        .json(&json!({ "priority": 7 }))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(job.priority, 7);
    let r = c.post(format!("{base}/jobs/1/priority")).json(&json!({ "priority": 1 })).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::CONFLICT);

    let queued: Queued =
        c.post(format!("{base}/strategy")).json(&StrategyPlan::empty(0.5)).send().await.unwrap().json().await.unwrap();
    assert!(queued.jobs.is_empty());

    let r = c.post(format!("{base}/labels")).json(&json!({ "labels": [[jobs[0].sample, true]] })).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::NO_CONTENT);
    let snap = snapshot(&c, &s.url, &id).await;
    assert_eq!(snap.labels, vec![(jobs[0].sample.clone(), true)]);
    assert_eq!(snap.submitted, 5 + queued_len(&snap));
}

fn queued_len(s: &ExperimentSnapshot) -> u64 {
    s.jobs.iter().filter(|j| j.id > 5).count() as u64
}

#[tokio::test]
async fn results_accepted_after_budget_closes() {
    let s = start(ServiceConfig::default()).await;
    let c = Client::new();
    let id = create(&c, &s.url, 3).await;
    let base = format!("{}/experiments/{id}", s.url);
    c.post(format!("{base}/initial")).json(&json!({ "count": 3 })).send().await.unwrap();

    let sug: Suggestion = c.get(format!("{base}/suggestions")).send().await.unwrap().json().await.unwrap();
    assert!(sug.exhausted && sug.samples.is_empty());
    let r = c.post(format!("{base}/initial")).json(&json!({ "count": 1 })).send().await.unwrap();
    assert_eq!(error_code(r).await, (StatusCode::CONFLICT, "budget_exhausted".into()));

    for job in 1..=3 {
        let r = c.post(format!("{base}/jobs/{job}/result")).json(&json!({ "rawOutputs": [0.5] })).send().await.unwrap();
        assert_eq!(r.status(), StatusCode::OK);
    }
    assert_eq!(snapshot(&c, &s.url, &id).await.completed, 3);
}

#[tokio::test]
async fn warning_plans_preview_other_exploitation_levels() {
    let s = start(ServiceConfig::default()).await;
    let c = Client::new();
    let mut config = ExperimentConfig::new(copper_core::ParameterSpace::from_counts(&[10, 10]).unwrap(), 50);
    config.cluster_config = ClusterConfig { eps: 1.5, min_pts: 1, goodness: Goodness::Threshold { tau: 0.5 } };
    let r = c.post(format!("{}/experiments", s.url)).json(&config).send().await.unwrap();
    let id = r.json::<Value>().await.unwrap()["id"].as_str().unwrap().to_string();
    let base = format!("{}/experiments/{id}", s.url);

    // Two good results whose neighbourhoods hold 15 unevaluated points, with 15 jobs left.
    let good = [Sample::from([5, 5]), Sample::from([1, 1])];
    let mut samples: Vec<Sample> = good.to_vec();
    samples.extend((70..100).map(|i| Sample::new(vec![i / 10, i % 10])));
    samples.extend([Sample::from([0, 0]), Sample::from([0, 9]), Sample::from([1, 9])]);
    let jobs: Value = c
        .post(format!("{base}/initial"))
        .json(&json!({ "count": samples.len(), "samples": samples }))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let jobs: Vec<Job> = serde_json::from_value(jobs["jobs"].clone()).unwrap();
    for job in &jobs {
        let f = if good.contains(&job.sample) { 1.0 } else { 0.0 };
        c.post(format!("{base}/jobs/{}/result", job.id)).json(&json!({ "rawOutputs": [f] })).send().await.unwrap();
    }

    let preview = |e: &str| c.get(format!("{base}/suggestions?exploitation={e}")).send();
    for (e, inside) in [("0", 0), ("1", 15)] {
        let sug: Suggestion = preview(e).await.unwrap().json().await.unwrap();
        let w = sug.sla_warning.expect("violation expected");
        assert_eq!((w.report.pending, w.report.remaining_budget), (15, 15));
        assert_eq!(w.plan.in_cluster_count(), inside);
        assert_eq!(w.plan.in_cluster_count() + w.plan.outside_count, 15);
    }
    let r = preview("1.5").await.unwrap();
    assert_eq!(error_code(r).await, (StatusCode::BAD_REQUEST, "invalid".into()));
    // The standing level is untouched.
    assert_eq!(snapshot(&c, &s.url, &id).await.config.sla.exploitation_level, 0.5);
}

fn persistent(dir: &Path) -> ServiceConfig {
    ServiceConfig { data_dir: Some(dir.to_path_buf()), ..Default::default() }
}

#[tokio::test]
async fn restart_recovers_experiments() {
    let dir = tempfile::tempdir().unwrap();
    let c = Client::new();
    let (id, before) = {
        let s = start(persistent(dir.path())).await;
        let id = create(&c, &s.url, 20).await;
        c.post(format!("{}/experiments/{id}/initial", s.url)).json(&json!({ "count": 4 })).send().await.unwrap();
        c.post(format!("{}/experiments/{id}/jobs/2/result", s.url))
            .json(&json!({ "rawOutputs": [0.25] }))
            .send()
            .await
            .unwrap();
        (id.clone(), snapshot(&c, &s.url, &id).await)
    };
    let s = start(persistent(dir.path())).await;
    let ids: Vec<String> = c.get(format!("{}/experiments", s.url)).send().await.unwrap().json().await.unwrap();
    assert_eq!(ids, vec![id.clone()]);
    assert_eq!(snapshot(&c, &s.url, &id).await, before);
}

#[test]
fn corrupt_log_refuses_to_start() {
    let dir = tempfile::tempdir().unwrap();
    let exp = dir.path().join("broken");
    std::fs::create_dir_all(&exp).unwrap();
    std::fs::write(exp.join("events.jsonl"), "{\"seq\":1,\"ts\":\"x\",\"kind\":\"created\"\n").unwrap();
    let err = persistent(dir.path()).build(0).err().expect("must refuse");
    assert!(err.to_string().contains("corrupt"), "{err}");
}

/// Reads server-sent events until `n` have arrived; returns `(id, kind)`.
async fn read_events(r: &mut reqwest::Response, n: usize) -> Vec<(u64, String)> {
    let mut buf = String::new();
    let mut out = Vec::new();
    while out.len() < n {
        let chunk = tokio::time::timeout(Duration::from_secs(5), r.chunk()).await.expect("event in time").unwrap();
        buf.push_str(std::str::from_utf8(&chunk.expect("stream open")).unwrap());
        while let Some(end) = buf.find("\n\n") {
            let frame: String = buf.drain(..end + 2).collect();
            let mut id = None;
            let mut kind = None;
            for line in frame.lines() {
                if let Some(v) = line.strip_prefix("id:") {
                    id = v.trim().parse().ok();
                } else if let Some(v) = line.strip_prefix("event:") {
                    kind = Some(v.trim().to_string());
                }
            }
            if let (Some(id), Some(kind)) = (id, kind) {
                out.push((id, kind));
            }
        }
    }
    out
}

#[tokio::test]
async fn event_stream_replays_then_follows_and_resumes() {
    let s = start(ServiceConfig::default()).await;
    let c = Client::new();
    let id = create(&c, &s.url, 20).await;
    let base = format!("{}/experiments/{id}", s.url);
    c.post(format!("{base}/initial")).json(&json!({ "count": 3 })).send().await.unwrap();

    let mut stream = c.get(format!("{base}/events?from=1")).send().await.unwrap();
    assert_eq!(stream.status(), StatusCode::OK);
    assert_eq!(read_events(&mut stream, 2).await, vec![(1, "created".into()), (2, "jobs_queued".into())]);

    c.post(format!("{base}/dispatch")).send().await.unwrap();
    c.post(format!("{base}/jobs/1/result")).json(&json!({ "rawOutputs": [0.5] })).send().await.unwrap();
    assert_eq!(read_events(&mut stream, 2).await, vec![(3, "dispatched".into()), (4, "result".into())]);
    drop(stream);

    let mut resumed = c.get(format!("{base}/events")).header("Last-Event-ID", "2").send().await.unwrap();
    let got = read_events(&mut resumed, 2).await;
    assert_eq!(got.iter().map(|e| e.0).collect::<Vec<_>>(), vec![3, 4]);

    let r = c.get(format!("{base}/events")).header("Last-Event-ID", "x").send().await.unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn adapter_runs_queued_jobs() {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let adapter_url = format!("http://{}", listener.local_addr().unwrap());
    let adapter = tokio::spawn(async move {
        axum::serve(listener, synthetic_router(maze(), Duration::from_millis(5))).await.unwrap()
    });
    let s = start(ServiceConfig { adapter_url: Some(adapter_url), ..Default::default() }).await;
    let c = Client::new();
    let id = create(&c, &s.url, 20).await;
    c.post(format!("{}/experiments/{id}/initial", s.url)).json(&json!({ "count": 6 })).send().await.unwrap();

    let deadline = tokio::time::Instant::now() + Duration::from_secs(10);
    let snap = loop {
        let snap = snapshot(&c, &s.url, &id).await;
        if snap.completed == 6 {
            break snap;
        }
        assert!(tokio::time::Instant::now() < deadline, "adapter did not finish: {snap:?}");
        tokio::time::sleep(Duration::from_millis(20)).await;
    };
    let app = maze();
    for job in &snap.jobs {
        assert_eq!(job.f, Some(app.f(&job.sample).unwrap()));
    }
    adapter.abort();
}
