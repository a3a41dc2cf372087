//! Run configuration.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimator::Scheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    AsyrevelGau,
    AsyrevelUni,
    Synrevel,
    Nonfed,
    Tig,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::AsyrevelGau => "asyrevel_gau",
            Algorithm::AsyrevelUni => "asyrevel_uni",
            Algorithm::Synrevel => "synrevel",
            Algorithm::Nonfed => "nonfed",
            Algorithm::Tig => "tig",
        }
    }

    pub fn is_federated(self) -> bool {
        self != Algorithm::Nonfed
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "asyrevel_gau" => Algorithm::AsyrevelGau,
            "asyrevel_uni" => Algorithm::AsyrevelUni,
            "synrevel" => Algorithm::Synrevel,
            "nonfed" => Algorithm::Nonfed,
            "tig" => Algorithm::Tig,
            other => return Err(Error::Config(format!("unknown algorithm `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    Virtual,
    Wall,
}

impl FromStr for Clock {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "virtual" => Ok(Clock::Virtual),
            "wall" => Ok(Clock::Wall),
            other => Err(Error::Config(format!("unknown clock `{other}`"))),
        }
    }
}

/// How the next active party is chosen in simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Each event's party is drawn independently from the activation
    /// probabilities; events commit in draw order.
    Iid,
    /// Parties run back to back; the earliest upload to arrive is the next
    /// event.
    Free,
    /// Parties take turns in id order.
    RoundRobin,
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(Schedule::Iid),
            "free" => Ok(Schedule::Free),
            "round_robin" | "roundrobin" => Ok(Schedule::RoundRobin),
            other => Err(Error::Config(format!("unknown schedule `{other}`"))),
        }
    }
}

/// Activation probabilities `p_m`.
#[derive(Debug, Clone, PartialEq)]
pub enum Activation {
    Uniform,
    /// Proportional to each party's speed, `1 / slowdown`.
    BySpeed,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Straggler {
    pub party: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub q: usize,
    /// Update events (async and baselines) or barrier rounds (sync).
    pub horizon: u64,
    pub eta: f64,
    /// Defaults to `eta / q`.
    pub eta_server: Option<f64>,
    pub mu: f64,
    pub lambda: f64,
    pub tau: u64,
    pub activation: Activation,
    pub seed: u64,
    pub straggler: Option<Straggler>,
    pub clock: Clock,
    pub schedule: Schedule,
    /// Direction scheme for algorithms whose name does not fix one.
    pub scheme: Scheme,
    /// Evaluation period in events; defaults to the number of samples.
    pub eval_every: Option<u64>,
    /// Period of parameter snapshots; none by default.
    pub trace_every: Option<u64>,
    /// Stop once the training loss is at or below this value.
    pub stop_loss: Option<f64>,
    /// Stop once the loss changes by less than this between evaluations.
    pub stop_tol: Option<f64>,
    /// Virtual compute time of one local step at full speed.
    pub base_compute: f64,
    /// One-way virtual network latency.
    pub latency: f64,
    /// Relative spread of compute times, in `[0, 1)`.
    pub jitter: f64,
    /// Cost of answering a query, relative to `base_compute`.
    pub refresh_cost: f64,
    /// Keep every transcript entry (byte counts are always kept).
    pub record_transcript: bool,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, q: usize, horizon: u64) -> Self {
        let scheme = if algorithm == Algorithm::AsyrevelUni { Scheme::Sphere } else { Scheme::Gaussian };
        Self {
            algorithm,
            q,
            horizon,
            eta: 1e-3,
            eta_server: None,
            mu: 1e-3,
            lambda: 1e-4,
            tau: 4,
            activation: Activation::Uniform,
            seed: 0,
            straggler: None,
            clock: Clock::Virtual,
            schedule: Schedule::Iid,
            scheme,
            eval_every: None,
            trace_every: None,
            stop_loss: None,
            stop_tol: None,
            base_compute: 1.0,
            latency: 0.0,
            jitter: 0.0,
            refresh_cost: 0.05,
            record_transcript: true,
        }
    }

    /// Direction scheme actually used.
    pub fn effective_scheme(&self) -> Scheme {
        match self.algorithm {
            Algorithm::AsyrevelGau => Scheme::Gaussian,
            Algorithm::AsyrevelUni => Scheme::Sphere,
            _ => self.scheme,
        }
    }

    pub fn server_eta(&self) -> f64 {
        self.eta_server.unwrap_or(self.eta / self.q.max(1) as f64)
    }

    pub fn slowdown(&self, m: usize) -> f64 {
        match self.straggler {
            Some(s) if s.party == m => s.factor,
            _ => 1.0,
        }
    }

    /// Resolved `p_m`.
    pub fn probabilities(&self) -> Vec<f64> {
        match &self.activation {
            Activation::Uniform => vec![1.0 / self.q as f64; self.q],
            Activation::BySpeed => {
                let speeds: Vec<f64> = (0..self.q).map(|m| 1.0 / self.slowdown(m)).collect();
                let total: f64 = speeds.iter().sum();
                speeds.into_iter().map(|s| s / total).collect()
            }
            Activation::Explicit(p) => p.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.q == 0 {
            return bad("q must be >= 1".into());
        }
        if self.horizon == 0 {
            return bad("horizon T must be >= 1".into());
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta = {} must be positive", self.eta));
        }
        if let Some(e) = self.eta_server {
            if !(e >= 0.0 && e.is_finite()) {
                return bad(format!("eta_server = {e} must be nonnegative"));
            }
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad(format!("mu = {} must be positive", self.mu));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda = {} must be nonnegative", self.lambda));
        }
        if let Activation::Explicit(p) = &self.activation {
            if p.len() != self.q {
                return bad(format!("{} activation probabilities for {} parties", p.len(), self.q));
            }
            if p.iter().any(|v| !(*v >= 0.0)) {
                return bad("activation probabilities must be nonnegative".into());
            }
            let total: f64 = p.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return bad(format!("activation probabilities sum to {total}, not 1"));
            }
        }
        if let Some(s) = self.straggler {
            if s.party >= self.q {
                return bad(format!("straggler party {} out of range", s.party));
            }
            if !(s.factor >= 1.0 && s.factor.is_finite()) {
                return bad(format!("slowdown factor {} must be >= 1", s.factor));
            }
        }
        if self.eval_every == Some(0) || self.trace_every == Some(0) {
            return bad("evaluation and trace periods must be >= 1".into());
        }
        if !(self.base_compute > 0.0) || !(self.latency >= 0.0) || !(self.refresh_cost >= 0.0) {
            return bad("timing parameters must be nonnegative with positive compute time".into());
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return bad(format!("jitter {} must be in [0, 1)", self.jitter));
        }
        if let Some(t) = self.stop_tol {
            if !(t > 0.0) {
                return bad(format!("stop_tol = {t} must be positive"));
            }
        }
        Ok(())
    }
}
