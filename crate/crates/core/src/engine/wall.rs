//! Wall-clock mode: parties on worker threads, the server on the calling
//! thread, encoded frames over channels.

use std::collections::VecDeque;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Instant;

use super::config::RunConfig;
use super::metrics::RunMetrics;
use super::sim::{make_parties, Evaluator};
use crate::error::{Error, Result};
use crate::fedproto::{decode_message, encode_message, warmup_cache, Party, Server, ServerConfig, Transcript, WireMessage};
use crate::models::{Composite, ModelState, PartitionedDataset};
use crate::rng::Streams;

/// Worker count: `REVELIGHT_THREADS` if set, else the available parallelism,
/// never more than `q`.
pub fn worker_count(q: usize) -> usize {
    let cap = std::env::var("REVELIGHT_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or_else(|| thread::available_parallelism().map_or(1, |n| n.get()));
    cap.clamp(1, q.max(1))
}

enum ToWorker {
    Frame(Vec<u8>),
    Stop,
}

fn disconnected() -> Error {
    Error::Protocol("channel closed".into())
}

fn worker(
    mut parties: Vec<Party>,
    data: &PartitionedDataset,
    inbox: Receiver<ToWorker>,
    server: Sender<Vec<u8>>,
    snapshots: &[Mutex<Vec<f64>>],
) -> Result<Vec<Party>> {
    loop {
        for p in parties.iter_mut().filter(|p| !p.has_pending()) {
            let i = p.next_sample(data.n());
            let up = p.begin_step(data, i)?;
            server.send(encode_message(&up)?).map_err(|_| disconnected())?;
        }
        let frame = match inbox.recv().map_err(|_| disconnected())? {
            ToWorker::Stop => return Ok(parties),
            ToWorker::Frame(f) => f,
        };
        let msg = decode_message(&frame)?;
        let Some(p) = parties.iter_mut().find(|p| p.id() == msg.party() as usize) else {
            return Err(Error::Protocol(format!("frame for party {} reached the wrong worker", msg.party())));
        };
        match &msg {
            WireMessage::Reply { .. } => {
                p.finish_step(&msg)?;
                *snapshots[p.id()].lock().unwrap() = p.params().to_vec();
            }
            WireMessage::Query { .. } => {
                let answer = p.answer_query(&msg, data)?;
                server.send(encode_message(&answer)?).map_err(|_| disconnected())?;
            }
            other => return Err(Error::Protocol(format!("party {} received {}", p.id(), other.name()))),
        }
    }
}

pub(crate) fn run_asyrevel_wall(
    cfg: &RunConfig,
    train: &PartitionedDataset,
    test: Option<&PartitionedDataset>,
    models: &Composite,
) -> Result<RunMetrics> {
    let streams = Streams::new(cfg.seed);
    let state = models.init_state(&streams);
    models.validate(&state, train)?;
    let parties = make_parties(cfg, models, &state, streams)?;
    let mut transcript = if cfg.record_transcript { Transcript::recording() } else { Transcript::counting() };
    let cache = warmup_cache(&parties, train, &mut transcript, 0.0)?;
    let warmup = (transcript.total_bytes(), transcript.len() as u64);
    let scfg = ServerConfig { eta: cfg.server_eta(), mu: cfg.mu, scheme: cfg.effective_scheme(), tau: cfg.tau };
    let mut server = Server::new(models.global.clone(), state.w0.clone(), scfg, streams, train.labels().to_vec(), cache, transcript)?;

    let workers = worker_count(cfg.q);
    let snapshots: Vec<Mutex<Vec<f64>>> = state.blocks.iter().map(|b| Mutex::new(b.clone())).collect();
    let snapshots = Arc::new(snapshots);
    let mut groups: Vec<Vec<Party>> = (0..workers).map(|_| Vec::new()).collect();
    for p in parties {
        groups[p.id() % workers].push(p);
    }
    let (to_server, server_rx) = channel::<Vec<u8>>();
    let started = Instant::now();

    thread::scope(|scope| -> Result<RunMetrics> {
        let mut outboxes = Vec::with_capacity(workers);
        let mut handles = Vec::with_capacity(workers);
        for group in groups {
            let (tx, rx) = channel();
            outboxes.push(tx);
            let to_server = to_server.clone();
            let snaps = Arc::clone(&snapshots);
            handles.push(scope.spawn(move || worker(group, train, rx, to_server, &snaps)));
        }
        drop(to_server);
        let send = |party: u32, bytes: Vec<u8>| -> Result<()> {
            outboxes[party as usize % workers].send(ToWorker::Frame(bytes)).map_err(|_| disconnected())
        };
        let snapshot = |server: &Server| ModelState {
            w0: server.params().to_vec(),
            blocks: snapshots.iter().map(|s| s.lock().unwrap().clone()).collect(),
        };
        let counters = |s: &Server| (s.transcript().bytes_up(), s.transcript().bytes_down(), s.transcript().len() as u64);

        let mut eval = Evaluator::new(cfg, models, train, test);
        let every = eval.eval_every();
        let mut trace = Vec::new();
        eval.record(0, 0.0, &snapshot(&server), counters(&server), 0.0)?;
        let mut backlog: VecDeque<WireMessage> = VecDeque::new();
        let mut last_sq = 0.0;
        let (mut events, mut stopped) = (0, false);
        let outcome = (|| -> Result<()> {
            for event in 1..=cfg.horizon {
                let up = match backlog.pop_front() {
                    Some(m) => m,
                    None => decode_message(&server_rx.recv().map_err(|_| disconnected())?)?,
                };
                let now = started.elapsed().as_secs_f64();
                let out = server.handle_upload(&up, event, now, |query| {
                    send(query.party(), encode_message(query)?)?;
                    loop {
                        let msg = decode_message(&server_rx.recv().map_err(|_| disconnected())?)?;
                        match msg {
                            WireMessage::Upload { .. } => backlog.push_back(msg),
                            _ => return Ok(msg),
                        }
                    }
                })?;
                if let Some(s) = &out.server_step {
                    last_sq = s.iter().map(|v| v * v).sum();
                }
                send(up.party(), encode_message(&out.reply)?)?;
                eval.max_staleness = eval.max_staleness.max(out.staleness);
                events = event;
                if cfg.trace_every.is_some_and(|k| event % k == 0) {
                    trace.push((event, snapshot(&server)));
                }
                let vtime = started.elapsed().as_secs_f64();
                if event % every == 0 && eval.record(event, vtime, &snapshot(&server), counters(&server), last_sq)? {
                    stopped = event < cfg.horizon;
                    break;
                }
            }
            Ok(())
        })();
        for tx in &outboxes {
            let _ = tx.send(ToWorker::Stop);
        }
        let mut finished: Vec<Party> = Vec::new();
        for h in handles {
            match h.join() {
                Ok(r) => finished.extend(r?),
                Err(_) => return Err(Error::Protocol("worker panicked".into())),
            }
        }
        outcome?;
        finished.sort_by_key(Party::id);
        let final_state = ModelState {
            w0: server.params().to_vec(),
            blocks: finished.iter().map(|p| p.params().to_vec()).collect(),
        };
        let (final_loss, final_acc) = eval.loss_acc(&final_state)?;
        let (bytes_up, bytes_down, frames) = counters(&server);
        Ok(RunMetrics {
            algorithm: cfg.algorithm,
            seed: cfg.seed,
            rows: eval.rows,
            final_state,
            final_loss,
            final_acc,
            events,
            vtime: started.elapsed().as_secs_f64(),
            transcript: Some(server.into_transcript()),
            bytes_up,
            bytes_down,
            frames,
            warmup_bytes: warmup.0,
            warmup_frames: warmup.1,
            trace,
            activations: finished.iter().map(Party::steps).collect(),
            max_staleness: eval.max_staleness,
            stopped_early: stopped,
        })
    })
}
