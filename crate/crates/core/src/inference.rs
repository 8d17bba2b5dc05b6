//! Centralized batched apprentice inference.
//!
//! One service thread owns the current network snapshot. Clients submit
//! requests over a channel and block on a per-request reply channel. A
//! batch is flushed when `batch_limit` requests are pending, when
//! `batch_timeout` has passed since the oldest pending request arrived, or
//! when every registered client is waiting. Snapshot swaps take effect
//! between batches.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, Sender};
use rand::RngCore;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::{EncodedState, Game, GameState};
use crate::mcts::{Evaluation, Evaluator};
use crate::net::{Network, NetworkOutput};

struct Request {
    id: u64,
    input: EncodedState,
    mask: Vec<bool>,
    reply: Sender<Response>,
}

/// Answer to one request, tagged with the request id.
#[derive(Debug)]
pub struct Response {
    pub id: u64,
    pub output: Result<NetworkOutput>,
}

enum Message {
    Request(Request),
    Register,
    Unregister,
    Swap(Arc<Network>, Sender<()>),
    Shutdown,
}

#[derive(Debug, Default)]
pub struct ServiceStats {
    pub batches: AtomicU64,
    pub answered: AtomicU64,
    pub rejected: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceConfig {
    pub batch_limit: usize,
    pub batch_timeout: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            batch_limit: 32,
            batch_timeout: Duration::from_millis(2),
        }
    }
}

pub struct InferenceService {
    tx: Sender<Message>,
    worker: Option<JoinHandle<()>>,
    stats: Arc<ServiceStats>,
    next_id: Arc<AtomicU64>,
}

struct Batcher {
    network: Arc<Network>,
    config: ServiceConfig,
    pending: Vec<Request>,
    oldest: Option<Instant>,
    clients: usize,
    stats: Arc<ServiceStats>,
}

impl Batcher {
    fn flush(&mut self) {
        if self.pending.is_empty() {
            return;
        }
        let batch = std::mem::take(&mut self.pending);
        self.oldest = None;
        let net = &self.network;
        let outputs: Vec<Result<NetworkOutput>> = if batch.len() > 1 {
            batch
                .par_iter()
                .map(|r| net.forward(&r.input, &r.mask))
                .collect()
        } else {
            batch
                .iter()
                .map(|r| net.forward(&r.input, &r.mask))
                .collect()
        };
        self.stats.batches.fetch_add(1, Ordering::SeqCst);
        for (req, output) in batch.into_iter().zip(outputs) {
            self.stats.answered.fetch_add(1, Ordering::SeqCst);
            // A client that gave up waiting has dropped its receiver.
            let _ = req.reply.send(Response { id: req.id, output });
        }
    }

    fn should_flush(&self) -> bool {
        !self.pending.is_empty()
            && (self.pending.len() >= self.config.batch_limit
                || (self.clients > 0 && self.pending.len() >= self.clients))
    }

    fn run(mut self, rx: Receiver<Message>) {
        loop {
            let msg = match self.oldest {
                None => match rx.recv() {
                    Ok(m) => m,
                    Err(_) => break,
                },
                Some(t) => match rx.recv_deadline(t + self.config.batch_timeout) {
                    Ok(m) => m,
                    Err(RecvTimeoutError::Timeout) => {
                        self.flush();
                        continue;
                    }
                    Err(RecvTimeoutError::Disconnected) => break,
                },
            };
            match msg {
                Message::Request(r) => {
                    if self.pending.is_empty() {
                        self.oldest = Some(Instant::now());
                    }
                    self.pending.push(r);
                }
                Message::Register => self.clients += 1,
                Message::Unregister => self.clients = self.clients.saturating_sub(1),
                Message::Swap(net, ack) => {
                    self.flush();
                    self.network = net;
                    let _ = ack.send(());
                }
                Message::Shutdown => break,
            }
            if self.should_flush() {
                self.flush();
            }
        }
        self.flush();
        // Anything still queued is refused explicitly.
        while let Ok(msg) = rx.try_recv() {
            match msg {
                Message::Request(r) => {
                    self.stats.rejected.fetch_add(1, Ordering::SeqCst);
                    let _ = r.reply.send(Response {
                        id: r.id,
                        output: Err(Error::ServiceShutdown),
                    });
                }
                Message::Swap(_, ack) => {
                    let _ = ack.send(());
                }
                _ => {}
            }
        }
    }
}

impl InferenceService {
    pub fn start(network: Arc<Network>, config: ServiceConfig) -> Self {
        let (tx, rx) = unbounded();
        let stats = Arc::new(ServiceStats::default());
        let batcher = Batcher {
            network,
            config: ServiceConfig {
                batch_limit: config.batch_limit.max(1),
                ..config
            },
            pending: Vec::new(),
            oldest: None,
            clients: 0,
            stats: Arc::clone(&stats),
        };
        let worker = std::thread::Builder::new()
            .name("inference".into())
            .spawn(move || batcher.run(rx))
            .expect("spawn inference thread");
        Self {
            tx,
            worker: Some(worker),
            stats,
            next_id: Arc::new(AtomicU64::new(0)),
        }
    }

    /// A new client; the service counts it as live until it is dropped.
    pub fn client(&self) -> InferenceClient {
        let _ = self.tx.send(Message::Register);
        InferenceClient {
            tx: self.tx.clone(),
            next_id: Arc::clone(&self.next_id),
        }
    }

    /// Replaces the snapshot. Requests already pending are answered by the
    /// old snapshot first.
    pub fn swap(&self, network: Arc<Network>) -> Result<()> {
        let (ack_tx, ack_rx) = bounded(1);
        self.tx
            .send(Message::Swap(network, ack_tx))
            .map_err(|_| Error::ServiceShutdown)?;
        ack_rx.recv().map_err(|_| Error::ServiceShutdown)
    }

    pub fn stats(&self) -> &ServiceStats {
        &self.stats
    }

    /// Answers pending requests, refuses queued ones, and joins the thread.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(worker) = self.worker.take() {
            let _ = self.tx.send(Message::Shutdown);
            let _ = worker.join();
        }
    }
}

impl Drop for InferenceService {
    fn drop(&mut self) {
        self.stop();
    }
}

pub struct InferenceClient {
    tx: Sender<Message>,
    next_id: Arc<AtomicU64>,
}

impl InferenceClient {
    pub fn infer(&self, input: EncodedState, mask: Vec<bool>) -> Result<NetworkOutput> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let (reply, rx) = bounded(1);
        self.tx
            .send(Message::Request(Request {
                id,
                input,
                mask,
                reply,
            }))
            .map_err(|_| Error::ServiceShutdown)?;
        // A dropped reply sender means the service exited before seeing
        // the request.
        let response = rx.recv().map_err(|_| Error::ServiceShutdown)?;
        debug_assert_eq!(response.id, id);
        response.output
    }
}

impl Drop for InferenceClient {
    fn drop(&mut self) {
        let _ = self.tx.send(Message::Unregister);
    }
}

impl Evaluator for InferenceClient {
    fn evaluate(
        &self,
        game: &dyn Game,
        state: &GameState,
        _rng: &mut dyn RngCore,
    ) -> Result<Evaluation> {
        let out = self.infer(game.encode(state, state.to_move()), game.legal_mask(state))?;
        Ok(Evaluation {
            policy: out.actor,
            value: out.critic,
            opponent_models: out.opponent_models,
        })
    }
}
