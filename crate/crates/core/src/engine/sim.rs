//! Virtual-clock event loop shared by the asynchronous drivers.

use std::time::Instant;

use rand::Rng;

use super::config::{Clock, RunConfig, Schedule};
use super::metrics::{MetricsRow, RunMetrics};
use crate::error::Result;
use crate::estimator::Scheme;
use crate::fedproto::{HeadStep, Party, PartyConfig, Server, Transcript, WireMessage};
use crate::models::{descend, Composite, GlobalModel, ModelState, PartitionedDataset};
use crate::rng::{Purpose, Streams};

/// Compute and network costs in virtual time units.
#[derive(Debug, Clone)]
pub(crate) struct Timing {
    base: f64,
    slow: Vec<f64>,
    latency: f64,
    jitter: f64,
    refresh: f64,
    streams: Streams,
}

impl Timing {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            base: cfg.base_compute,
            slow: (0..cfg.q).map(|m| cfg.slowdown(m)).collect(),
            latency: cfg.latency,
            jitter: cfg.jitter,
            refresh: cfg.refresh_cost,
            streams: Streams::new(cfg.seed),
        }
    }

    /// Duration of party `m`'s `k`-th local step.
    pub fn compute(&self, m: usize, k: u64) -> f64 {
        let spread = if self.jitter > 0.0 {
            1.0 + self.jitter * self.streams.stream(Purpose::Jitter, m as u64, k).random_range(-1.0..1.0)
        } else {
            1.0
        };
        self.base * self.slow[m] * spread
    }

    pub fn latency(&self) -> f64 {
        self.latency
    }

    /// Time party `j` spends answering a query.
    pub fn refresh(&self, j: usize) -> f64 {
        self.refresh * self.base * self.slow[j]
    }
}

/// Picks the next active party and tracks when each party is free.
pub(crate) struct Scheduler {
    schedule: Schedule,
    cumulative: Vec<f64>,
    streams: Streams,
    timing: Timing,
    /// `Free`: arrival time of the party's next upload. Otherwise: time the
    /// party is next idle.
    ready: Vec<f64>,
    steps: Vec<u64>,
    now: f64,
}

impl Scheduler {
    pub fn new(cfg: &RunConfig) -> Self {
        let timing = Timing::new(cfg);
        let mut cumulative = Vec::with_capacity(cfg.q);
        let mut acc = 0.0;
        for p in cfg.probabilities() {
            acc += p;
            cumulative.push(acc);
        }
        let ready = match cfg.schedule {
            Schedule::Free => (0..cfg.q).map(|m| timing.compute(m, 0) + timing.latency()).collect(),
            _ => vec![0.0; cfg.q],
        };
        Self {
            schedule: cfg.schedule,
            cumulative,
            streams: Streams::new(cfg.seed),
            timing,
            ready,
            steps: vec![0; cfg.q],
            now: 0.0,
        }
    }

    /// Party for 1-based `event` and the virtual time its upload is handled.
    pub fn next(&mut self, event: u64) -> (usize, f64) {
        let q = self.ready.len();
        let m = match self.schedule {
            Schedule::Free => {
                let mut best = 0;
                for j in 1..q {
                    if self.ready[j] < self.ready[best] {
                        best = j;
                    }
                }
                return (best, self.ready[best]);
            }
            Schedule::RoundRobin => ((event - 1) % q as u64) as usize,
            Schedule::Iid => {
                let x: f64 = self.streams.stream(Purpose::Schedule, 0, event).random();
                let total = *self.cumulative.last().unwrap();
                self.cumulative.iter().position(|&c| x * total < c).unwrap_or(q - 1)
            }
        };
        let arrival = self.ready[m] + self.timing.compute(m, self.steps[m]) + self.timing.latency();
        (m, arrival.max(self.now))
    }

    /// Records that `m`'s upload at `arrival` was answered after pulling
    /// from `pulled`.
    pub fn complete(&mut self, m: usize, arrival: f64, pulled: &[usize]) {
        let lat = self.timing.latency();
        let pull_delay = pulled.iter().map(|&j| 2.0 * lat + self.timing.refresh(j)).fold(0.0, f64::max);
        let received = arrival + pull_delay + lat;
        for &j in pulled {
            self.ready[j] += self.timing.refresh(j);
        }
        self.steps[m] += 1;
        self.now = self.now.max(arrival);
        self.ready[m] = match self.schedule {
            Schedule::Free => received + self.timing.compute(m, self.steps[m]) + lat,
            _ => received,
        };
    }

    pub fn steps(&self) -> &[u64] {
        &self.steps
    }
}

pub(crate) struct StepInfo {
    pub pulled: Vec<usize>,
    pub staleness: u64,
}

/// One training system driven by the event loop.
pub(crate) trait Driver {
    fn step(&mut self, m: usize, event: u64, time: f64) -> Result<StepInfo>;
    fn snapshot(&self) -> ModelState;
    /// Squared norm of the latest estimate of every block.
    fn gnorm2(&self) -> f64;
    /// `(bytes_up, bytes_down, frames)` so far.
    fn counters(&self) -> (u64, u64, u64);
    fn into_transcript(self: Box<Self>) -> Option<Transcript>;
}

pub(crate) fn make_parties(cfg: &RunConfig, models: &Composite, state: &ModelState, streams: Streams) -> Result<Vec<Party>> {
    let pcfg = PartyConfig { eta: cfg.eta, mu: cfg.mu, lambda: cfg.lambda, scheme: cfg.effective_scheme() };
    models
        .locals
        .iter()
        .enumerate()
        .map(|(m, model)| Party::new(m, model.clone(), state.blocks[m].clone(), pcfg, streams))
        .collect()
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Parties and server exchanging wire messages.
pub(crate) struct AsyncDriver<'a> {
    pub parties: Vec<Party>,
    pub server: Server,
    pub data: &'a PartitionedDataset,
    pub last_sq: Vec<f64>,
}

impl Driver for AsyncDriver<'_> {
    fn step(&mut self, m: usize, event: u64, time: f64) -> Result<StepInfo> {
        let i = self.parties[m].next_sample(self.data.n());
        let up = self.parties[m].begin_step(self.data, i)?;
        let mut pulled = Vec::new();
        let (parties, data) = (&self.parties, self.data);
        let out = self.server.handle_upload(&up, event, time, |q| {
            pulled.push(q.party() as usize);
            parties[q.party() as usize].answer_query(q, data)
        })?;
        let est = self.parties[m].finish_step(&out.reply)?;
        self.last_sq[m] = sq(est);
        if let Some(s) = &out.server_step {
            *self.last_sq.last_mut().unwrap() = sq(s);
        }
        Ok(StepInfo { pulled, staleness: out.staleness })
    }

    fn snapshot(&self) -> ModelState {
        ModelState { w0: self.server.params().to_vec(), blocks: self.parties.iter().map(|p| p.params().to_vec()).collect() }
    }

    fn gnorm2(&self) -> f64 {
        self.last_sq.iter().sum()
    }

    fn counters(&self) -> (u64, u64, u64) {
        let t = self.server.transcript();
        (t.bytes_up(), t.bytes_down(), t.len() as u64)
    }

    fn into_transcript(self: Box<Self>) -> Option<Transcript> {
        Some(self.server.into_transcript())
    }
}

/// Every block on one node: the same updates with fresh values throughout.
pub(crate) struct NonfedDriver<'a> {
    pub parties: Vec<Party>,
    pub global: GlobalModel,
    pub w0: Vec<f64>,
    pub eta0: f64,
    pub mu: f64,
    pub scheme: Scheme,
    pub streams: Streams,
    pub data: &'a PartitionedDataset,
    pub updates: u64,
    pub last_sq: Vec<f64>,
}

impl Driver for NonfedDriver<'_> {
    fn step(&mut self, m: usize, _event: u64, _time: f64) -> Result<StepInfo> {
        let data = self.data;
        let i = self.parties[m].next_sample(data.n());
        let WireMessage::Upload { c, c_hat, seq, .. } = self.parties[m].begin_step(data, i)? else { unreachable!() };
        let mut row = Vec::new();
        let mut offset = 0;
        for (j, p) in self.parties.iter().enumerate() {
            if j == m {
                offset = row.len();
                row.extend_from_slice(&c);
            } else {
                row.extend(p.model().forward(p.params(), data.x(j, i))?);
            }
        }
        let label = data.label(i);
        let h = self.global.value(&self.w0, &row, label)?;
        row[offset..offset + c.len()].copy_from_slice(&c_hat);
        let h_bar = self.global.value(&self.w0, &row, label)?;
        row[offset..offset + c.len()].copy_from_slice(&c);
        let head = HeadStep { global: &self.global, w0: &self.w0, mu: self.mu, scheme: self.scheme };
        let server_step = head.estimate(&self.streams, self.updates, &row, label, h)?;
        self.updates += 1;
        let reply = WireMessage::Reply { party: m as u32, sample: i as u32, h, h_bar, seq };
        if let Some(s) = &server_step {
            descend(&mut self.w0, s, self.eta0)?;
            *self.last_sq.last_mut().unwrap() = sq(s);
        }
        let est = self.parties[m].finish_step(&reply)?;
        self.last_sq[m] = sq(est);
        Ok(StepInfo { pulled: Vec::new(), staleness: 0 })
    }

    fn snapshot(&self) -> ModelState {
        ModelState { w0: self.w0.clone(), blocks: self.parties.iter().map(|p| p.params().to_vec()).collect() }
    }

    fn gnorm2(&self) -> f64 {
        self.last_sq.iter().sum()
    }

    fn counters(&self) -> (u64, u64, u64) {
        (0, 0, 0)
    }

    fn into_transcript(self: Box<Self>) -> Option<Transcript> {
        None
    }
}

/// Evaluation and stopping bookkeeping shared by all drivers.
pub(crate) struct Evaluator<'a> {
    pub cfg: &'a RunConfig,
    pub models: &'a Composite,
    pub train: &'a PartitionedDataset,
    pub test: Option<&'a PartitionedDataset>,
    pub started: Instant,
    pub rows: Vec<MetricsRow>,
    pub max_staleness: u64,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        cfg: &'a RunConfig,
        models: &'a Composite,
        train: &'a PartitionedDataset,
        test: Option<&'a PartitionedDataset>,
    ) -> Self {
        Self { cfg, models, train, test, started: Instant::now(), rows: Vec::new(), max_staleness: 0 }
    }

    pub fn eval_every(&self) -> u64 {
        self.cfg.eval_every.unwrap_or(self.train.n() as u64)
    }

    pub fn loss_acc(&self, state: &ModelState) -> Result<(f64, f64)> {
        let loss = self.models.objective(state, self.train, self.cfg.lambda)?;
        let acc = self.models.accuracy(state, self.test.unwrap_or(self.train))?;
        Ok((loss, acc))
    }

    /// Appends a row; returns true when a stop criterion fires.
    pub fn record(&mut self, t: u64, vtime: f64, state: &ModelState, counters: (u64, u64, u64), gnorm2: f64) -> Result<bool> {
        let (loss, acc) = self.loss_acc(state)?;
        let wtime = match self.cfg.clock {
            Clock::Wall => self.started.elapsed().as_secs_f64(),
            Clock::Virtual => 0.0,
        };
        let prev = self.rows.last().map(|r| r.loss);
        self.rows.push(MetricsRow {
            t,
            vtime,
            wtime,
            loss,
            acc,
            bytes_up: counters.0,
            bytes_down: counters.1,
            staleness: self.max_staleness,
            gnorm2,
        });
        if t == 0 {
            return Ok(false);
        }
        let by_loss = self.cfg.stop_loss.is_some_and(|target| loss <= target);
        let by_tol = matches!((self.cfg.stop_tol, prev), (Some(tol), Some(p)) if (p - loss).abs() < tol);
        Ok(by_loss || by_tol)
    }
}

/// Runs `driver` for up to `cfg.horizon` events under the virtual clock.
#[allow(clippy::too_many_arguments)]
pub(crate) fn simulate(
    cfg: &RunConfig,
    models: &Composite,
    train: &PartitionedDataset,
    test: Option<&PartitionedDataset>,
    mut driver: Box<dyn Driver + '_>,
    warmup: (u64, u64),
) -> Result<RunMetrics> {
    let mut sched = Scheduler::new(cfg);
    let mut eval = Evaluator::new(cfg, models, train, test);
    let every = eval.eval_every();
    let mut trace = Vec::new();
    eval.record(0, 0.0, &driver.snapshot(), driver.counters(), 0.0)?;
    if cfg.trace_every.is_some() {
        trace.push((0, driver.snapshot()));
    }
    let mut events = 0;
    let mut vtime = 0.0;
    let mut stopped = false;
    for event in 1..=cfg.horizon {
        let (m, arrival) = sched.next(event);
        let info = driver.step(m, event, arrival)?;
        sched.complete(m, arrival, &info.pulled);
        eval.max_staleness = eval.max_staleness.max(info.staleness);
        events = event;
        vtime = arrival;
        if cfg.trace_every.is_some_and(|k| event % k == 0) {
            trace.push((event, driver.snapshot()));
        }
        if event % every == 0 && eval.record(event, arrival, &driver.snapshot(), driver.counters(), driver.gnorm2())? {
            stopped = event < cfg.horizon;
            break;
        }
    }
    let final_state = driver.snapshot();
    let (final_loss, final_acc) = eval.loss_acc(&final_state)?;
    let (bytes_up, bytes_down, frames) = driver.counters();
    let activations = sched.steps().to_vec();
    Ok(RunMetrics {
        algorithm: cfg.algorithm,
        seed: cfg.seed,
        rows: eval.rows,
        final_state,
        final_loss,
        final_acc,
        events,
        vtime,
        transcript: driver.into_transcript(),
        bytes_up,
        bytes_down,
        frames,
        warmup_bytes: warmup.0,
        warmup_frames: warmup.1,
        trace,
        activations,
        max_staleness: eval.max_staleness,
        stopped_early: stopped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::config::{Activation, Algorithm, Straggler};

    #[test]
    fn free_schedule_equal_parties_round_robins() {
        let mut cfg = RunConfig::new(Algorithm::AsyrevelGau, 4, 100);
        cfg.schedule = Schedule::Free;
        cfg.refresh_cost = 0.0;
        let mut s = Scheduler::new(&cfg);
        let mut times = Vec::new();
        for event in 1..=8 {
            let (m, t) = s.next(event);
            s.complete(m, t, &[]);
            times.push((m, t));
        }
        assert_eq!(times, vec![(0, 1.0), (1, 1.0), (2, 1.0), (3, 1.0), (0, 2.0), (1, 2.0), (2, 2.0), (3, 2.0)]);
    }

    #[test]
    fn free_schedule_straggler_runs_less_often() {
        let mut cfg = RunConfig::new(Algorithm::AsyrevelGau, 2, 100);
        cfg.schedule = Schedule::Free;
        cfg.straggler = Some(Straggler { party: 1, factor: 2.0 });
        cfg.refresh_cost = 0.0;
        let mut s = Scheduler::new(&cfg);
        for event in 1..=300 {
            let (m, t) = s.next(event);
            s.complete(m, t, &[]);
        }
        assert_eq!(s.steps(), &[200, 100]);
    }

    #[test]
    fn iid_frequencies_match_probabilities() {
        let mut cfg = RunConfig::new(Algorithm::AsyrevelGau, 3, 100);
        let p = vec![0.2, 0.3, 0.5];
        cfg.activation = Activation::Explicit(p.clone());
        let mut s = Scheduler::new(&cfg);
        let events = 100_000u64;
        for event in 1..=events {
            let (m, t) = s.next(event);
            s.complete(m, t, &[]);
        }
        for (m, &pm) in p.iter().enumerate() {
            let freq = s.steps()[m] as f64 / events as f64;
            let bound = 3.0 * (pm * (1.0 - pm) / events as f64).sqrt();
            assert!((freq - pm).abs() <= bound, "party {m}: {freq} vs {pm}");
        }
    }

    #[test]
    fn pulls_delay_reply_and_queried_party() {
        let mut cfg = RunConfig::new(Algorithm::AsyrevelGau, 2, 100);
        cfg.schedule = Schedule::Free;
        cfg.refresh_cost = 0.5;
        let mut s = Scheduler::new(&cfg);
        let (m, t) = s.next(1);
        assert_eq!((m, t), (0, 1.0));
        s.complete(0, 1.0, &[1]);
        // party 1 lost half a step answering; party 0 waited for the answer
        assert_eq!(s.next(2), (1, 1.5));
        s.complete(1, 1.5, &[]);
        assert_eq!(s.next(3), (0, 2.5));
    }
}
