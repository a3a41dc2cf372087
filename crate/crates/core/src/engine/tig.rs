//! Intermediate-gradient baseline and communication comparison.
//!
//! Linear parties are cut at the feature-product layer `H = w ⊙ x`, so each
//! upload is the block of products and each download the loss gradient with
//! respect to them. MLP parties are cut at their output.

use super::config::{Algorithm, RunConfig};
use super::metrics::RunMetrics;
use super::sim::{simulate, Driver, StepInfo};
use crate::error::{Error, Result};
use crate::fedproto::{Dir, ServerCache, TigMessage, Transcript, WireMessage};
use crate::models::{descend, nonconvex_reg_grad, Composite, GlobalModel, LocalArch, LocalModel, ModelState, PartitionedDataset};
use crate::rng::{Purpose, Streams};
use rand::Rng;

struct TigParty {
    model: LocalModel,
    w: Vec<f64>,
    steps: u64,
}

impl TigParty {
    /// Activations at the cut.
    fn activations(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.model.arch {
            LocalArch::Linear { .. } => Ok(self.w.iter().zip(x).map(|(w, x)| w * x).collect()),
            LocalArch::Mlp { .. } => self.model.forward(&self.w, x),
        }
    }

    /// Output seen by the head, given the activations.
    fn reduce(&self, act: &[f64]) -> Vec<f64> {
        match &self.model.arch {
            LocalArch::Linear { .. } => vec![act.iter().sum()],
            LocalArch::Mlp { .. } => act.to_vec(),
        }
    }

    fn expand(&self, dc: &[f64]) -> Vec<f64> {
        match &self.model.arch {
            LocalArch::Linear { input_dim } => vec![dc[0]; *input_dim],
            LocalArch::Mlp { .. } => dc.to_vec(),
        }
    }

    /// Parameter gradient from the gradient at the cut.
    fn backward(&self, x: &[f64], grad: &[f64]) -> Result<Vec<f64>> {
        match &self.model.arch {
            LocalArch::Linear { .. } => Ok(grad.iter().zip(x).map(|(g, x)| g * x).collect()),
            LocalArch::Mlp { .. } => self.model.vjp(&self.w, x, grad),
        }
    }
}

struct TigDriver<'a> {
    parties: Vec<TigParty>,
    global: GlobalModel,
    w0: Vec<f64>,
    cache: ServerCache,
    transcript: Transcript,
    data: &'a PartitionedDataset,
    streams: Streams,
    eta: f64,
    eta0: f64,
    lambda: f64,
    tau: u64,
    queries: u32,
    last_sq: Vec<f64>,
}

impl TigDriver<'_> {
    fn upload(&self, m: usize, i: usize, seq: u32) -> Result<TigMessage> {
        let act = self.parties[m].activations(self.data.x(m, i))?;
        Ok(TigMessage::Upload { party: m as u32, sample: i as u32, act, seq })
    }
}

impl Driver for TigDriver<'_> {
    fn step(&mut self, m: usize, event: u64, time: f64) -> Result<StepInfo> {
        let n = self.data.n();
        let k = self.parties[m].steps;
        let i = self.streams.stream(Purpose::Sample, m as u64, k).random_range(0..n);
        let seq = (k + 1) as u32;
        let up = self.upload(m, i, seq)?;
        self.transcript.log_tig(time, Dir::Up, &up)?;
        let stale = self.cache.stale_parties(i, m, event, self.tau)?;
        for &j in &stale {
            let query = WireMessage::Query { party: j as u32, sample: i as u32, seq: self.queries };
            self.queries = self.queries.wrapping_add(1);
            self.transcript.log(time, Dir::Down, &query)?;
            let answer = self.upload(j, i, self.queries.wrapping_sub(1))?;
            self.transcript.log_tig(time, Dir::Up, &answer)?;
            let TigMessage::Upload { act, .. } = &answer else { unreachable!() };
            let c = self.parties[j].reduce(act);
            self.cache.store(i, j, &c, event)?;
        }
        let staleness = self.cache.max_age(i, m, event);
        let TigMessage::Upload { act, .. } = &up else { unreachable!() };
        let c = self.parties[m].reduce(act);
        let off = self.cache.offset(m);
        let mut row = self.cache.row(i)?.to_vec();
        row[off..off + c.len()].copy_from_slice(&c);
        let label = self.data.label(i);
        let h = self.global.value(&self.w0, &row, label)?;
        let (dc, dw0) = self.global.grads(&self.w0, &row, label)?;
        let grad = self.parties[m].expand(&dc[off..off + c.len()]);
        let reply = TigMessage::Reply { party: m as u32, sample: i as u32, h, grad, seq };
        self.transcript.log_tig(time, Dir::Down, &reply)?;
        if !dw0.is_empty() {
            descend(&mut self.w0, &dw0, self.eta0)?;
            *self.last_sq.last_mut().unwrap() = dw0.iter().map(|v| v * v).sum();
        }
        self.cache.store(i, m, &c, event)?;

        let TigMessage::Reply { grad, .. } = &reply else { unreachable!() };
        let party = &mut self.parties[m];
        let mut g = party.backward(self.data.x(m, i), grad)?;
        for (gi, ri) in g.iter_mut().zip(nonconvex_reg_grad(&party.w)) {
            *gi += self.lambda * ri;
        }
        descend(&mut party.w, &g, self.eta)?;
        party.steps += 1;
        self.last_sq[m] = g.iter().map(|v| v * v).sum();
        Ok(StepInfo { pulled: stale, staleness })
    }

    fn snapshot(&self) -> ModelState {
        ModelState { w0: self.w0.clone(), blocks: self.parties.iter().map(|p| p.w.clone()).collect() }
    }

    fn gnorm2(&self) -> f64 {
        self.last_sq.iter().sum()
    }

    fn counters(&self) -> (u64, u64, u64) {
        (self.transcript.bytes_up(), self.transcript.bytes_down(), self.transcript.len() as u64)
    }

    fn into_transcript(self: Box<Self>) -> Option<Transcript> {
        Some(self.transcript)
    }
}

/// Trains with exact gradients passed through the cut. Fails with
/// [`Error::Unsupported`] when any local model is a black box.
pub fn run_tig_baseline(
    cfg: &RunConfig,
    train: &PartitionedDataset,
    test: Option<&PartitionedDataset>,
    models: &Composite,
) -> Result<RunMetrics> {
    if let Some(m) = models.locals.iter().position(|l| l.black_box) {
        return Err(Error::Unsupported(format!(
            "party {m} exposes function values only; gradients through the cut cannot be computed"
        )));
    }
    cfg.validate()?;
    super::check_shapes(cfg, train, models)?;
    let streams = Streams::new(cfg.seed);
    let state = models.init_state(&streams);
    models.validate(&state, train)?;
    let parties: Vec<TigParty> = models
        .locals
        .iter()
        .zip(&state.blocks)
        .map(|(model, w)| TigParty { model: model.clone(), w: w.clone(), steps: 0 })
        .collect();
    let mut driver = TigDriver {
        parties,
        global: models.global.clone(),
        w0: state.w0,
        cache: ServerCache::new(train.n(), &models.output_dims()),
        transcript: if cfg.record_transcript { Transcript::recording() } else { Transcript::counting() },
        data: train,
        streams,
        eta: cfg.eta,
        eta0: cfg.server_eta(),
        lambda: cfg.lambda,
        tau: cfg.tau,
        queries: 0,
        last_sq: vec![0.0; cfg.q + 1],
    };
    for i in 0..train.n() {
        for m in 0..cfg.q {
            let up = driver.upload(m, i, 0)?;
            driver.transcript.log_tig(0.0, Dir::Up, &up)?;
            let TigMessage::Upload { act, .. } = &up else { unreachable!() };
            let c = driver.parties[m].reduce(act);
            driver.cache.store(i, m, &c, 0)?;
        }
    }
    let warmup = (driver.transcript.total_bytes(), driver.transcript.len() as u64);
    simulate(cfg, models, train, test, Box::new(driver), warmup)
}

/// A point-to-point link for converting frames into transfer time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    /// Seconds per frame.
    pub latency: f64,
    /// Bytes per second.
    pub bandwidth: f64,
}

impl Default for Link {
    fn default() -> Self {
        Self { latency: 50e-6, bandwidth: 1.25e8 }
    }
}

impl Link {
    pub fn transfer_time(&self, frames: u64, bytes: u64) -> f64 {
        frames as f64 * self.latency + bytes as f64 / self.bandwidth
    }
}

#[derive(Debug, Clone)]
pub struct CommPair<'a> {
    pub label: String,
    pub tig: &'a RunMetrics,
    pub asyrevel: &'a RunMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommRow {
    pub label: String,
    pub tig_bytes: u64,
    pub asyrevel_bytes: u64,
    pub byte_ratio: f64,
    pub time_ratio: f64,
}

/// Training-phase traffic of paired runs (warm-up excluded).
pub fn measure_comm(pairs: &[CommPair<'_>], link: Link) -> Result<Vec<CommRow>> {
    pairs
        .iter()
        .map(|p| {
            if p.tig.algorithm != Algorithm::Tig
                || !matches!(p.asyrevel.algorithm, Algorithm::AsyrevelGau | Algorithm::AsyrevelUni)
            {
                return Err(Error::Usage(format!("pair `{}` is not a TIG run next to an AsyREVEL run", p.label)));
            }
            if p.tig.events != p.asyrevel.events || p.tig.seed != p.asyrevel.seed {
                return Err(Error::Usage(format!(
                    "pair `{}` is unpaired: {} vs {} events",
                    p.label, p.tig.events, p.asyrevel.events
                )));
            }
            let traffic = |r: &RunMetrics| (r.total_bytes() - r.warmup_bytes, r.frames - r.warmup_frames);
            let (tb, tf) = traffic(p.tig);
            let (ab, af) = traffic(p.asyrevel);
            Ok(CommRow {
                label: p.label.clone(),
                tig_bytes: tb,
                asyrevel_bytes: ab,
                byte_ratio: tb as f64 / ab as f64,
                time_ratio: link.transfer_time(tf, tb) / link.transfer_time(af, ab),
            })
        })
        .collect()
}
