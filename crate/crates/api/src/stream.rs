//! Event fan-out for the live stream.
//!
//! Every committed engine event goes into one bounded broadcast ring. A
//! subscriber that falls more than the ring's capacity behind is dropped;
//! it reconnects with the last seq it saw and replays from the log.

use std::sync::Arc;

use copper_core::engine::{Engine, Event};
use futures::stream::{self, Stream, StreamExt};
use tokio::sync::broadcast;

pub type Tagged = Arc<(String, Event)>;

#[derive(Clone)]
pub struct Hub {
    tx: broadcast::Sender<Tagged>,
}

impl Hub {
    /// A hub fed by `engine`, buffering at most `capacity` events per
    /// subscriber.
    pub fn attach(engine: &Engine, capacity: usize) -> Self {
        let (tx, _) = broadcast::channel(capacity.max(1));
        let sink = tx.clone();
        engine.subscribe(Arc::new(move |id: &str, e: &Event| {
            // No receivers is fine: nobody is listening yet.
            let _ = sink.send(Arc::new((id.to_string(), e.clone())));
        }));
        Self { tx }
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Tagged> {
        self.tx.subscribe()
    }
}

/// Backlog followed by live events of experiment `id`, gap-free and in seq
/// order. `rx` must have been subscribed before `backlog` was read so that
/// nothing committed in between is lost; duplicates are skipped by seq.
/// The stream ends when the subscriber lags behind the ring.
pub fn experiment_events(
    id: String,
    from: u64,
    backlog: Vec<Event>,
    rx: broadcast::Receiver<Tagged>,
) -> impl Stream<Item = Event> + Send {
    let next = backlog.last().map_or(from.max(1), |e| e.seq + 1);
    let live = stream::unfold((rx, next), move |(mut rx, mut next)| {
        let id = id.clone();
        async move {
            loop {
                match rx.recv().await {
                    Ok(item) => {
                        let (exp, event) = &*item;
                        if *exp != id || event.seq < next {
                            continue;
                        }
                        next = event.seq + 1;
                        return Some((event.clone(), (rx, next)));
                    }
                    Err(broadcast::error::RecvError::Lagged(n)) => {
                        tracing::info!(experiment = %id, skipped = n, "slow event subscriber disconnected");
                        return None;
                    }
                    Err(broadcast::error::RecvError::Closed) => return None,
                }
            }
        }
    });
    stream::iter(backlog).chain(live)
}

#[cfg(test)]
mod tests {
    use super::*;
    use copper_core::engine::ExperimentConfig;
    use copper_core::{Parameter, ParameterSpace};

    fn engine_with_experiment() -> (Engine, String) {
        let space = ParameterSpace::new(vec![Parameter::with_count("a", 5), Parameter::with_count("b", 5)]).unwrap();
        let engine = Engine::in_memory();
        let id = engine.create(ExperimentConfig::new(space, 25)).unwrap();
        (engine, id)
    }

    #[tokio::test]
    async fn backlog_then_live_without_duplicates() {
        let (engine, id) = engine_with_experiment();
        let hub = Hub::attach(&engine, 64);
        let rx = hub.subscribe();
        engine.initial_evaluation(&id, 3, None).unwrap();
        // The queued event is both in the backlog and in the ring.
        let backlog = engine.events_since(&id, 1).unwrap();
        let mut s = Box::pin(experiment_events(id.clone(), 1, backlog, rx));
        engine.dispatch(&id, 1).unwrap();
        let seqs: Vec<u64> = (&mut s).take(3).map(|e| e.seq).collect().await;
        assert_eq!(seqs, vec![1, 2, 3]);
    }

    #[tokio::test]
    async fn lagging_subscriber_is_dropped() {
        let (engine, id) = engine_with_experiment();
        let hub = Hub::attach(&engine, 2);
        let rx = hub.subscribe();
        engine.initial_evaluation(&id, 5, None).unwrap();
        for _ in 0..5 {
            engine.dispatch(&id, 1).unwrap();
        }
        let s = experiment_events(id.clone(), 1, Vec::new(), rx);
        let got: Vec<Event> = s.collect().await;
        assert!(got.is_empty());
    }

    #[tokio::test]
    async fn other_experiments_are_filtered() {
        let (engine, id) = engine_with_experiment();
        let other = engine.create(engine.snapshot(&id).unwrap().config).unwrap();
        let hub = Hub::attach(&engine, 64);
        let rx = hub.subscribe();
        engine.initial_evaluation(&other, 2, None).unwrap();
        engine.initial_evaluation(&id, 2, None).unwrap();
        let mut s = Box::pin(experiment_events(id.clone(), 2, Vec::new(), rx));
        let e = s.next().await.unwrap();
        assert_eq!((e.seq, e.body.kind()), (2, "jobs_queued"));
    }
}
