//! A party: owns one feature block, one local model and its parameters.

use rand::Rng;

use super::wire::WireMessage;
use crate::error::{Error, Result};
use crate::estimator::{client_block_zoe, sample_direction, Direction, Scheme, TwoPointValues};
use crate::models::{descend, nonconvex_reg, LocalModel, PartitionedDataset};
use crate::rng::{Purpose, Streams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartyConfig {
    pub eta: f64,
    pub mu: f64,
    pub lambda: f64,
    pub scheme: Scheme,
}

#[derive(Debug, Clone)]
struct Pending {
    sample: usize,
    seq: u32,
    dir: Direction,
    reg: f64,
    reg_perturbed: f64,
}

#[derive(Debug, Clone)]
pub struct Party {
    id: usize,
    model: LocalModel,
    w: Vec<f64>,
    cfg: PartyConfig,
    streams: Streams,
    steps: u64,
    pending: Option<Pending>,
    last_estimate: Vec<f64>,
}

impl Party {
    pub fn new(id: usize, model: LocalModel, w: Vec<f64>, cfg: PartyConfig, streams: Streams) -> Result<Self> {
        if w.len() != model.param_dim() {
            return Err(Error::Shape(format!("party {id}: {} parameters, model needs {}", w.len(), model.param_dim())));
        }
        Ok(Self { id, model, w, cfg, streams, steps: 0, pending: None, last_estimate: Vec::new() })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn params(&self) -> &[f64] {
        &self.w
    }

    pub fn model(&self) -> &LocalModel {
        &self.model
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn has_pending(&self) -> bool {
        self.pending.is_some()
    }

    /// The most recent block estimate, empty before the first step.
    pub fn last_estimate(&self) -> &[f64] {
        &self.last_estimate
    }

    /// Sample index for this party's next step, uniform over `0..n`.
    pub fn next_sample(&self, n: usize) -> usize {
        self.streams.stream(Purpose::Sample, self.id as u64, self.steps).random_range(0..n)
    }

    fn output(&self, w: &[f64], data: &PartitionedDataset, sample: usize) -> Result<Vec<f64>> {
        if sample >= data.n() {
            return Err(Error::Protocol(format!("unknown sample id {sample}")));
        }
        self.model.forward(w, data.x(self.id, sample))
    }

    /// Upload carried during warm-up: `c_hat = c`, sequence number 0.
    pub fn warmup_upload(&self, data: &PartitionedDataset, sample: usize) -> Result<WireMessage> {
        let c = self.output(&self.w, data, sample)?;
        Ok(WireMessage::Upload { party: self.id as u32, sample: sample as u32, c_hat: c.clone(), c, seq: 0 })
    }

    /// Draws a direction, evaluates the local model at `w` and `w + mu u`
    /// and returns the upload. At most one step can be outstanding.
    pub fn begin_step(&mut self, data: &PartitionedDataset, sample: usize) -> Result<WireMessage> {
        if self.pending.is_some() {
            return Err(Error::Protocol(format!("party {} already has an outstanding upload", self.id)));
        }
        let mut rng = self.streams.stream(Purpose::Direction, self.id as u64, self.steps);
        let dir = sample_direction(self.cfg.scheme, self.w.len(), &mut rng)?;
        let shifted: Vec<f64> = self.w.iter().zip(&dir.u).map(|(w, u)| w + self.cfg.mu * u).collect();
        let c = self.output(&self.w, data, sample)?;
        let c_hat = self.output(&shifted, data, sample)?;
        let seq = u32::try_from(self.steps + 1).map_err(|_| Error::Protocol("sequence number overflow".into()))?;
        self.pending = Some(Pending {
            sample,
            seq,
            reg: nonconvex_reg(&self.w),
            reg_perturbed: nonconvex_reg(&shifted),
            dir,
        });
        Ok(WireMessage::Upload { party: self.id as u32, sample: sample as u32, c, c_hat, seq })
    }

    /// Applies the block update from the server's reply and returns the
    /// estimate that was used.
    pub fn finish_step(&mut self, reply: &WireMessage) -> Result<&[f64]> {
        let WireMessage::Reply { party, sample, h, h_bar, seq } = *reply else {
            return Err(Error::Protocol(format!("party {} expected a reply, got {}", self.id, reply.name())));
        };
        let matches = |p: &Pending| party as usize == self.id && sample as usize == p.sample && seq == p.seq;
        let Some(p) = self.pending.take_if(|p| matches(p)) else {
            return Err(Error::Protocol(format!(
                "reply for sample {sample} (seq {seq}) to party {party} has no pending upload at party {}",
                self.id
            )));
        };
        let values = TwoPointValues { h, h_bar, reg: p.reg, reg_perturbed: p.reg_perturbed };
        let est = client_block_zoe(values, self.cfg.lambda, self.cfg.mu, &p.dir)?;
        descend(&mut self.w, &est, self.cfg.eta)?;
        self.last_estimate = est;
        self.steps += 1;
        Ok(&self.last_estimate)
    }

    /// Fresh `c_{i,m}` at the current parameters, in answer to a query.
    pub fn answer_query(&self, query: &WireMessage, data: &PartitionedDataset) -> Result<WireMessage> {
        let WireMessage::Query { party, sample, seq } = *query else {
            return Err(Error::Protocol(format!("party {} expected a query, got {}", self.id, query.name())));
        };
        if party as usize != self.id {
            return Err(Error::Protocol(format!("query for party {party} delivered to party {}", self.id)));
        }
        let c = self.output(&self.w, data, sample as usize)?;
        Ok(WireMessage::Refresh { party, sample, c, seq })
    }
}
