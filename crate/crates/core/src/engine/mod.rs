//! Training drivers, metrics and communication measurement.

mod config;
mod metrics;
mod sim;
mod sync;
mod tig;
mod wall;

pub use config::{Activation, Algorithm, Clock, RunConfig, Schedule, Straggler};
pub use metrics::{fmt_g, MetricsRow, RunMetrics, CSV_HEADER};
pub use sync::run_synrevel;
pub use tig::{measure_comm, run_tig_baseline, CommPair, CommRow, Link};
pub use wall::worker_count;

use crate::error::{Error, Result};
use crate::fedproto::{warmup_cache, Server, ServerConfig, Transcript};
use crate::models::{Composite, PartitionedDataset};
use crate::rng::Streams;
use sim::{make_parties, simulate, AsyncDriver, NonfedDriver};

fn check_shapes(cfg: &RunConfig, train: &PartitionedDataset, models: &Composite) -> Result<()> {
    if models.q() != cfg.q || train.q() != cfg.q {
        return Err(Error::Config(format!(
            "q = {} but the models have {} parties and the data {} blocks",
            cfg.q,
            models.q(),
            train.q()
        )));
    }
    if train.n() == 0 {
        return Err(Error::Config("empty training set".into()));
    }
    Ok(())
}

/// Asynchronous training: warm-up, then `cfg.horizon` activation events.
pub fn run_asyrevel(
    cfg: &RunConfig,
    train: &PartitionedDataset,
    test: Option<&PartitionedDataset>,
    models: &Composite,
) -> Result<RunMetrics> {
    cfg.validate()?;
    if !matches!(cfg.algorithm, Algorithm::AsyrevelGau | Algorithm::AsyrevelUni) {
        return Err(Error::Config(format!("run_asyrevel called with algorithm {}", cfg.algorithm.name())));
    }
    check_shapes(cfg, train, models)?;
    if cfg.clock == Clock::Wall {
        return wall::run_asyrevel_wall(cfg, train, test, models);
    }
    let streams = Streams::new(cfg.seed);
    let state = models.init_state(&streams);
    models.validate(&state, train)?;
    let parties = make_parties(cfg, models, &state, streams)?;
    let mut transcript = if cfg.record_transcript { Transcript::recording() } else { Transcript::counting() };
    let cache = warmup_cache(&parties, train, &mut transcript, 0.0)?;
    let warmup = (transcript.total_bytes(), transcript.len() as u64);
    let scfg = ServerConfig { eta: cfg.server_eta(), mu: cfg.mu, scheme: cfg.effective_scheme(), tau: cfg.tau };
    let server = Server::new(models.global.clone(), state.w0, scfg, streams, train.labels().to_vec(), cache, transcript)?;
    let driver = AsyncDriver { parties, server, data: train, last_sq: vec![0.0; cfg.q + 1] };
    simulate(cfg, models, train, test, Box::new(driver), warmup)
}

/// The same updates on one node with every block fresh; no wire traffic.
pub fn run_nonfederated(
    cfg: &RunConfig,
    train: &PartitionedDataset,
    test: Option<&PartitionedDataset>,
    models: &Composite,
) -> Result<RunMetrics> {
    cfg.validate()?;
    check_shapes(cfg, train, models)?;
    let streams = Streams::new(cfg.seed);
    let state = models.init_state(&streams);
    models.validate(&state, train)?;
    let parties = make_parties(cfg, models, &state, streams)?;
    let driver = NonfedDriver {
        parties,
        global: models.global.clone(),
        w0: state.w0,
        eta0: cfg.server_eta(),
        mu: cfg.mu,
        scheme: cfg.effective_scheme(),
        streams,
        data: train,
        updates: 0,
        last_sq: vec![0.0; cfg.q + 1],
    };
    simulate(cfg, models, train, test, Box::new(driver), (0, 0))
}

/// Dispatches on `cfg.algorithm`.
pub fn run(
    cfg: &RunConfig,
    train: &PartitionedDataset,
    test: Option<&PartitionedDataset>,
    models: &Composite,
) -> Result<RunMetrics> {
    match cfg.algorithm {
        Algorithm::AsyrevelGau | Algorithm::AsyrevelUni => run_asyrevel(cfg, train, test, models),
        Algorithm::Synrevel => run_synrevel(cfg, train, test, models),
        Algorithm::Nonfed => run_nonfederated(cfg, train, test, models),
        Algorithm::Tig => run_tig_baseline(cfg, train, test, models),
    }
}
