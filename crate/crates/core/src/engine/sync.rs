//! Synchronous rounds with a barrier on the slowest party.

use super::config::RunConfig;
use super::metrics::RunMetrics;
use super::sim::{make_parties, Evaluator, Timing};
use crate::error::Result;
use crate::fedproto::{Server, ServerCache, ServerConfig, Transcript};
use crate::models::{Composite, ModelState, PartitionedDataset};
use crate::rng::Streams;

pub fn run_synrevel(
    cfg: &RunConfig,
    train: &PartitionedDataset,
    test: Option<&PartitionedDataset>,
    models: &Composite,
) -> Result<RunMetrics> {
    cfg.validate()?;
    super::check_shapes(cfg, train, models)?;
    let streams = Streams::new(cfg.seed);
    let state = models.init_state(&streams);
    models.validate(&state, train)?;
    let mut parties = make_parties(cfg, models, &state, streams)?;
    let transcript = if cfg.record_transcript { Transcript::recording() } else { Transcript::counting() };
    let scfg = ServerConfig { eta: cfg.server_eta(), mu: cfg.mu, scheme: cfg.effective_scheme(), tau: 0 };
    let cache = ServerCache::new(train.n(), &models.output_dims());
    let mut server = Server::new(models.global.clone(), state.w0, scfg, streams, train.labels().to_vec(), cache, transcript)?;
    let timing = Timing::new(cfg);

    let snapshot = |parties: &[crate::fedproto::Party], server: &Server| ModelState {
        w0: server.params().to_vec(),
        blocks: parties.iter().map(|p| p.params().to_vec()).collect(),
    };
    let counters = |s: &Server| (s.transcript().bytes_up(), s.transcript().bytes_down(), s.transcript().len() as u64);

    let mut eval = Evaluator::new(cfg, models, train, test);
    let every = eval.eval_every();
    let mut trace = Vec::new();
    eval.record(0, 0.0, &snapshot(&parties, &server), counters(&server), 0.0)?;
    if cfg.trace_every.is_some() {
        trace.push((0, snapshot(&parties, &server)));
    }
    let mut last_sq = vec![0.0; cfg.q + 1];
    let (mut vtime, mut rounds, mut stopped) = (0.0, 0, false);
    for round in 1..=cfg.horizon {
        let i = parties[0].next_sample(train.n());
        let uploads = parties.iter_mut().map(|p| p.begin_step(train, i)).collect::<Result<Vec<_>>>()?;
        let slowest = (0..cfg.q).map(|m| timing.compute(m, round - 1)).fold(0.0, f64::max);
        vtime += slowest + 2.0 * timing.latency();
        let outs = server.handle_round(&uploads, round, vtime)?;
        for (m, out) in outs.iter().enumerate() {
            let est = parties[m].finish_step(&out.reply)?;
            last_sq[m] = est.iter().map(|v| v * v).sum();
            if let Some(s) = &out.server_step {
                last_sq[cfg.q] = s.iter().map(|v| v * v).sum();
            }
        }
        rounds = round;
        if cfg.trace_every.is_some_and(|k| round % k == 0) {
            trace.push((round, snapshot(&parties, &server)));
        }
        if round % every == 0 && eval.record(round, vtime, &snapshot(&parties, &server), counters(&server), last_sq.iter().sum())? {
            stopped = round < cfg.horizon;
            break;
        }
    }
    let final_state = snapshot(&parties, &server);
    let (final_loss, final_acc) = eval.loss_acc(&final_state)?;
    let (bytes_up, bytes_down, frames) = counters(&server);
    Ok(RunMetrics {
        algorithm: cfg.algorithm,
        seed: cfg.seed,
        rows: eval.rows,
        final_state,
        final_loss,
        final_acc,
        events: rounds,
        vtime,
        transcript: Some(server.into_transcript()),
        bytes_up,
        bytes_down,
        frames,
        warmup_bytes: 0,
        warmup_frames: 0,
        trace,
        activations: parties.iter().map(|p| p.steps()).collect(),
        max_staleness: 0,
        stopped_early: stopped,
    })
}
