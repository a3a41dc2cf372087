//! The server: holds labels, the global head and the output cache.

use super::cache::ServerCache;
use super::transcript::{Dir, Transcript};
use super::wire::WireMessage;
use crate::error::{Error, Result};
use crate::estimator::{sample_direction, server_block_zoe, Scheme};
use crate::models::{descend, GlobalModel, PartitionedDataset};
use crate::rng::{Purpose, Streams};

use super::party::Party;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerConfig {
    pub eta: f64,
    pub mu: f64,
    pub scheme: Scheme,
    /// Largest age, in events, of any cache entry used for a reply.
    pub tau: u64,
}

/// Result of handling one upload.
#[derive(Debug, Clone, PartialEq)]
pub struct UploadOutcome {
    pub reply: WireMessage,
    /// Number of cache entries refreshed before replying.
    pub pulled: usize,
    /// Largest age of the other parties' entries that were used.
    pub staleness: u64,
    /// Global-block estimate, when the head has parameters.
    pub server_step: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Server {
    global: GlobalModel,
    w0: Vec<f64>,
    cfg: ServerConfig,
    streams: Streams,
    labels: Vec<i32>,
    cache: ServerCache,
    transcript: Transcript,
    updates: u64,
    queries: u32,
}

impl Server {
    pub fn new(
        global: GlobalModel,
        w0: Vec<f64>,
        cfg: ServerConfig,
        streams: Streams,
        labels: Vec<i32>,
        cache: ServerCache,
        transcript: Transcript,
    ) -> Result<Self> {
        if w0.len() != global.param_dim() {
            return Err(Error::Shape(format!("{} global parameters, head needs {}", w0.len(), global.param_dim())));
        }
        if labels.len() != cache.n() {
            return Err(Error::Shape(format!("{} labels for a cache of {} samples", labels.len(), cache.n())));
        }
        Ok(Self { global, w0, cfg, streams, labels, cache, transcript, updates: 0, queries: 0 })
    }

    pub fn params(&self) -> &[f64] {
        &self.w0
    }

    pub fn cache(&self) -> &ServerCache {
        &self.cache
    }

    pub fn cache_mut(&mut self) -> &mut ServerCache {
        &mut self.cache
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }

    fn parse_upload<'a>(&self, msg: &'a WireMessage) -> Result<(usize, usize, &'a [f64], &'a [f64])> {
        let WireMessage::Upload { party, sample, c, c_hat, .. } = msg else {
            return Err(Error::Protocol(format!("server expected an upload, got {}", msg.name())));
        };
        let (m, i) = (*party as usize, *sample as usize);
        if i >= self.cache.n() {
            return Err(Error::Protocol(format!("unknown sample id {i}")));
        }
        if m >= self.cache.q() {
            return Err(Error::Protocol(format!("unknown party {m}")));
        }
        if c.len() != c_hat.len() {
            return Err(Error::Protocol(format!("upload with |c| = {} but |c_hat| = {}", c.len(), c_hat.len())));
        }
        Ok((m, i, c, c_hat))
    }

    fn values(&self, row: &mut [f64], m: usize, c: &[f64], c_hat: &[f64], label: i32) -> Result<(f64, f64)> {
        let off = self.cache.offset(m);
        row[off..off + c.len()].copy_from_slice(c);
        let h = self.global.value(&self.w0, row, label)?;
        row[off..off + c.len()].copy_from_slice(c_hat);
        let h_bar = self.global.value(&self.w0, row, label)?;
        row[off..off + c.len()].copy_from_slice(c);
        Ok((h, h_bar))
    }

    fn global_estimate(&mut self, row: &[f64], label: i32, h: f64) -> Result<Option<Vec<f64>>> {
        let counter = self.updates;
        self.updates += 1;
        let head = HeadStep { global: &self.global, w0: &self.w0, mu: self.cfg.mu, scheme: self.cfg.scheme };
        head.estimate(&self.streams, counter, row, label, h)
    }

    /// Handles an upload received at `event` (1-based).
    ///
    /// Cache entries of other parties older than `tau` events are refreshed
    /// through `respond` first. `h`, `h_bar` and the global estimate all use
    /// the cache as it stood before this upload; the uploaded `c` replaces
    /// the cached entry only after the reply is built.
    pub fn handle_upload<F>(&mut self, msg: &WireMessage, event: u64, time: f64, mut respond: F) -> Result<UploadOutcome>
    where
        F: FnMut(&WireMessage) -> Result<WireMessage>,
    {
        let (m, i, c, c_hat) = self.parse_upload(msg)?;
        self.transcript.log(time, Dir::Up, msg)?;
        let stale = self.cache.stale_parties(i, m, event, self.cfg.tau)?;
        for &j in &stale {
            let query = WireMessage::Query { party: j as u32, sample: i as u32, seq: self.queries };
            self.queries = self.queries.wrapping_add(1);
            self.transcript.log(time, Dir::Down, &query)?;
            let answer = respond(&query)?;
            let WireMessage::Refresh { party, sample, c: fresh, seq } = &answer else {
                return Err(Error::Protocol(format!("query answered with {}", answer.name())));
            };
            if (*party as usize, *sample as usize) != (j, i) || *seq != query_seq(&query) {
                return Err(Error::Protocol(format!("refresh for ({party}, {sample}) does not match query ({j}, {i})")));
            }
            self.transcript.log(time, Dir::Up, &answer)?;
            self.cache.store(i, j, fresh, event)?;
        }
        let staleness = self.cache.max_age(i, m, event);
        let label = self.labels[i];
        let mut row = self.cache.row(i)?.to_vec();
        let (h, h_bar) = self.values(&mut row, m, c, c_hat, label)?;
        let server_step = self.global_estimate(&row, label, h)?;
        let WireMessage::Upload { party, sample, seq, .. } = *msg else { unreachable!() };
        let reply = WireMessage::Reply { party, sample, h, h_bar, seq };
        self.transcript.log(time, Dir::Down, &reply)?;
        if let Some(step) = &server_step {
            descend(&mut self.w0, step, self.cfg.eta)?;
        }
        self.cache.store(i, m, c, event)?;
        Ok(UploadOutcome { reply, pulled: stale.len(), staleness, server_step })
    }

    /// Handles one synchronous round: every upload is stored first, then
    /// each reply and global estimate is computed at the round's `w0`, and
    /// finally the global updates are applied in upload order.
    pub fn handle_round(&mut self, uploads: &[WireMessage], event: u64, time: f64) -> Result<Vec<UploadOutcome>> {
        let mut parsed = Vec::with_capacity(uploads.len());
        for msg in uploads {
            let (m, i, c, c_hat) = self.parse_upload(msg)?;
            self.transcript.log(time, Dir::Up, msg)?;
            self.cache.store(i, m, c, event)?;
            parsed.push((m, i, c, c_hat));
        }
        let mut outcomes = Vec::with_capacity(uploads.len());
        for (msg, &(m, i, c, c_hat)) in uploads.iter().zip(&parsed) {
            let label = self.labels[i];
            let mut row = self.cache.row(i)?.to_vec();
            let (h, h_bar) = self.values(&mut row, m, c, c_hat, label)?;
            let server_step = self.global_estimate(&row, label, h)?;
            let WireMessage::Upload { party, sample, seq, .. } = *msg else { unreachable!() };
            let reply = WireMessage::Reply { party, sample, h, h_bar, seq };
            self.transcript.log(time, Dir::Down, &reply)?;
            outcomes.push(UploadOutcome { reply, pulled: 0, staleness: self.cache.max_age(i, m, event), server_step });
        }
        for o in &outcomes {
            if let Some(step) = &o.server_step {
                descend(&mut self.w0, step, self.cfg.eta)?;
            }
        }
        Ok(outcomes)
    }
}

/// Two-point estimate for the head parameters, shared by every driver that
/// trains the head without gradients.
pub(crate) struct HeadStep<'a> {
    pub global: &'a GlobalModel,
    pub w0: &'a [f64],
    pub mu: f64,
    pub scheme: Scheme,
}

impl HeadStep<'_> {
    /// `counter` selects the server direction stream; `h` is the head value
    /// at `(w0, row)`.
    pub fn estimate(&self, streams: &Streams, counter: u64, row: &[f64], label: i32, h: f64) -> Result<Option<Vec<f64>>> {
        if self.w0.is_empty() {
            return Ok(None);
        }
        let mut rng = streams.stream(Purpose::ServerDirection, 0, counter);
        let dir = sample_direction(self.scheme, self.w0.len(), &mut rng)?;
        let shifted: Vec<f64> = self.w0.iter().zip(&dir.u).map(|(w, u)| w + self.mu * u).collect();
        let h_hat = self.global.value(&shifted, row, label)?;
        server_block_zoe(h, h_hat, self.mu, &dir)
    }
}

fn query_seq(q: &WireMessage) -> u32 {
    match q {
        WireMessage::Query { seq, .. } => *seq,
        _ => unreachable!(),
    }
}

/// Every party uploads its initial output for every sample; the uploads are
/// logged at `time` and stored with stamp 0.
pub fn warmup_cache(parties: &[Party], data: &PartitionedDataset, transcript: &mut Transcript, time: f64) -> Result<ServerCache> {
    let dims: Vec<usize> = parties.iter().map(|p| p.model().output_dim()).collect();
    let mut cache = ServerCache::new(data.n(), &dims);
    for i in 0..data.n() {
        for p in parties {
            let msg = p.warmup_upload(data, i)?;
            transcript.log(time, Dir::Up, &msg)?;
            let WireMessage::Upload { c, .. } = &msg else { unreachable!() };
            cache.store(i, p.id(), c, 0)?;
        }
    }
    Ok(cache)
}
