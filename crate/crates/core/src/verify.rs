//! Numerical checks of the smoothing lemma, estimator unbiasedness, the
//! convergence-rate shape and the speedup metric.
//!
//! Quadratics are the test family: both smoothings have closed forms there,
//! so every Monte-Carlo comparison has an exact oracle.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::engine::{run_asyrevel, Algorithm, RunConfig, RunMetrics, Schedule};
use crate::error::{domain_err, Error, Result};
use crate::estimator::{smoothed_grad_mc, smoothed_value_mc, Scheme};
use crate::models::synthetic::{Family, SyntheticSpec};
use crate::models::{partition_features, Composite, ModelState, PartitionedDataset};
use crate::rng::{Purpose, Streams};

/// Dimensions and radii swept by the lemma checks.
pub const QUAD_DIMS: [usize; 4] = [2, 4, 8, 16];
pub const QUAD_MUS: [f64; 2] = [1e-1, 1e-2];

pub const REPORT_CSV_HEADER: &str = "quantity,measured,bound,slack,pass";

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub quantity: String,
    pub measured: f64,
    pub bound: f64,
    pub slack: f64,
    pub pass: bool,
}

impl BoundReport {
    pub fn new(quantity: impl Into<String>, measured: f64, bound: f64, slack: f64) -> Self {
        let pass = measured <= bound + slack;
        Self { quantity: quantity.into(), measured, bound, slack, pass }
    }
}

pub fn reports_to_csv(reports: &[BoundReport]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(out, "{},{:e},{:e},{:e},{}", r.quantity, r.measured, r.bound, r.slack, r.pass);
    }
    out
}

pub fn reports_to_text(reports: &[BoundReport]) -> String {
    let width = reports.iter().map(|r| r.quantity.len()).max().unwrap_or(8).max(8);
    let mut out = format!("{:<width$}  {:>12}  {:>12}  {:>12}  pass\n", "quantity", "measured", "bound", "slack");
    for r in reports {
        let _ = writeln!(
            out,
            "{:<width$}  {:>12.4e}  {:>12.4e}  {:>12.4e}  {}",
            r.quantity,
            r.measured,
            r.bound,
            r.slack,
            if r.pass { "yes" } else { "NO" }
        );
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    let _ = writeln!(out, "{} of {} passed", reports.len() - failed, reports.len());
    out
}

/// `f(w) = 0.5 w^T H w + b^T w + c` with symmetric `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    dim: usize,
    h: Vec<f64>,
    b: Vec<f64>,
    c: f64,
    l: f64,
}

impl Quadratic {
    pub fn new(dim: usize, h: Vec<f64>, b: Vec<f64>, c: f64) -> Result<Self> {
        if dim == 0 || h.len() != dim * dim || b.len() != dim {
            return Err(Error::Shape(format!("quadratic of dim {dim} needs {} + {dim} coefficients", dim * dim)));
        }
        for i in 0..dim {
            for j in 0..i {
                if h[i * dim + j] != h[j * dim + i] {
                    return domain_err("Hessian must be symmetric");
                }
            }
        }
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(dim, dim, &h));
        let l = eig.eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        Ok(Self { dim, h, b, c, l })
    }

    /// Symmetrized Gaussian Hessian with entries of scale `1/sqrt(d)`, so `L`
    /// stays O(1) across dimensions.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        let s = 1.0 / (dim as f64).sqrt();
        let a: Vec<f64> = (0..dim * dim).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect();
        let h = (0..dim * dim).map(|k| 0.5 * (a[k] + a[(k % dim) * dim + k / dim])).collect();
        let b = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        Self::new(dim, h, b, rng.sample(StandardNormal))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Spectral norm of `H`, the smoothness constant.
    pub fn smoothness(&self) -> f64 {
        self.l
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.h[i * self.dim + i]).sum()
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        let d = self.dim;
        let mut s = self.c;
        for i in 0..d {
            let row = &self.h[i * d..(i + 1) * d];
            let hw: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
            s += w[i] * (0.5 * hw + self.b[i]);
        }
        s
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d).map(|i| self.h[i * d..(i + 1) * d].iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + self.b[i]).collect()
    }

    /// Closed-form `f_mu(w)`: Gaussian adds `mu^2 tr H / 2`, the ball
    /// `mu^2 tr H / (2 (d + 2))`.
    pub fn smoothed_value(&self, w: &[f64], mu: f64, scheme: Scheme) -> f64 {
        let second = match scheme {
            Scheme::Gaussian => 1.0,
            Scheme::Sphere => 1.0 / (self.dim as f64 + 2.0),
        };
        self.value(w) + 0.5 * mu * mu * second * self.trace()
    }
}

/// Lemma bound on `|f_mu - f|`.
pub fn value_bias_bound(l: f64, d: usize, mu: f64) -> f64 {
    l * d as f64 * mu * mu / 2.0
}

/// Lemma bound on `||grad f_mu - grad f||^2`.
pub fn grad_bias_bound(scheme: Scheme, l: f64, d: usize, mu: f64) -> f64 {
    let d = d as f64;
    match scheme {
        Scheme::Gaussian => mu * mu * l * l * (d + 3.0).powi(3) / 4.0,
        Scheme::Sphere => mu * mu * l * l * d * d / 4.0,
    }
}

/// Three reports for one quadratic at one point: the Monte-Carlo value bias,
/// the closed-form value bias, and the Monte-Carlo gradient bias.
pub fn smoothing_reports<R: Rng + ?Sized>(
    quad: &Quadratic,
    w: &[f64],
    mu: f64,
    scheme: Scheme,
    draws: usize,
    rng: &mut R,
) -> Result<Vec<BoundReport>> {
    if draws < 2 {
        return domain_err("need at least two draws for a standard error");
    }
    let (d, l) = (quad.dim(), quad.smoothness());
    let tag = format!("{}/d={d}/mu={mu:e}", scheme.name());
    let vbound = value_bias_bound(l, d, mu);
    let gbound = grad_bias_bound(scheme, l, d, mu);
    if mu == 0.0 {
        return Ok(vec![
            BoundReport::new(format!("value_bias_mc/{tag}"), 0.0, vbound, 0.0),
            BoundReport::new(format!("value_bias_exact/{tag}"), 0.0, vbound, 0.0),
            BoundReport::new(format!("grad_bias_mc/{tag}"), 0.0, gbound, 0.0),
        ]);
    }
    let f = |x: &[f64]| quad.value(x);
    let (mean, se) = smoothed_value_mc(f, w, mu, scheme, draws, rng)?;
    let exact = (quad.smoothed_value(w, mu, scheme) - quad.value(w)).abs();
    let (gmean, gse) = smoothed_grad_mc(f, w, mu, scheme, draws, rng)?;
    let grad = quad.gradient(w);
    let gbias: f64 = gmean.iter().zip(&grad).map(|(a, b)| (a - b).powi(2)).sum();
    let gslack: f64 = 9.0 * gse.iter().map(|s| s * s).sum::<f64>();
    Ok(vec![
        BoundReport::new(format!("value_bias_mc/{tag}"), (mean - quad.value(w)).abs(), vbound, 3.0 * se),
        BoundReport::new(format!("value_bias_exact/{tag}"), exact, vbound, 0.0),
        BoundReport::new(format!("grad_bias_mc/{tag}"), gbias, gbound, gslack),
    ])
}

/// Lemma checks over the `QUAD_DIMS x QUAD_MUS` grid, `trials` random
/// quadratics per cell, `draws` Monte-Carlo samples per estimate.
pub fn check_smoothing_bounds(scheme: Scheme, trials: usize, draws: usize, seed: u64) -> Result<Vec<BoundReport>> {
    if trials == 0 {
        return Err(Error::Usage("trials must be >= 1".into()));
    }
    let streams = Streams::new(seed);
    let cells: Vec<(usize, usize, usize)> = QUAD_DIMS
        .iter()
        .enumerate()
        .flat_map(|(di, _)| (0..QUAD_MUS.len()).flat_map(move |mi| (0..trials).map(move |t| (di, mi, t))))
        .collect();
    let reports: Result<Vec<Vec<BoundReport>>> = cells
        .par_iter()
        .map(|&(di, mi, t)| {
            let owner = (scheme as u64) * 1000 + (di * QUAD_MUS.len() + mi) as u64;
            let mut rng = streams.stream(Purpose::Verify, owner, t as u64);
            let quad = Quadratic::random(QUAD_DIMS[di], &mut rng)?;
            let w: Vec<f64> = (0..quad.dim()).map(|_| rng.sample(StandardNormal)).collect();
            smoothing_reports(&quad, &w, QUAD_MUS[mi], scheme, draws, &mut rng)
        })
        .collect();
    Ok(reports?.into_iter().flatten().collect())
}

/// Coordinatewise comparison tally for the unbiasedness check.
#[derive(Debug, Clone, PartialEq)]
pub struct UnbiasednessTally {
    pub comparisons: usize,
    pub within: usize,
    /// Largest `|mean - grad| / stderr` seen.
    pub worst_z: f64,
}

impl UnbiasednessTally {
    pub fn fraction(&self) -> f64 {
        if self.comparisons == 0 {
            return 1.0;
        }
        self.within as f64 / self.comparisons as f64
    }

    fn merge(mut self, other: Self) -> Self {
        self.comparisons += other.comparisons;
        self.within += other.within;
        self.worst_z = self.worst_z.max(other.worst_z);
        self
    }
}

/// Monte-Carlo mean of the two-point estimate against the analytic gradient,
/// one comparison per coordinate.
pub fn unbiasedness_cells<F, R>(f: F, grad: &[f64], w: &[f64], mu: f64, scheme: Scheme, draws: usize, rng: &mut R) -> Result<UnbiasednessTally>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let (mean, se) = smoothed_grad_mc(f, w, mu, scheme, draws, rng)?;
    let mut tally = UnbiasednessTally { comparisons: 0, within: 0, worst_z: 0.0 };
    for ((m, s), g) in mean.iter().zip(&se).zip(grad) {
        let err = (m - g).abs();
        tally.comparisons += 1;
        if err <= 3.0 * s {
            tally.within += 1;
        }
        let z = if err == 0.0 { 0.0 } else { err / s };
        tally.worst_z = tally.worst_z.max(z);
    }
    Ok(tally)
}

/// Unbiasedness over `instances` random quadratics per dimension in
/// `QUAD_DIMS`. The report's measured value is the fraction of coordinates
/// outside 3 stderr; it passes when at most `1 - min_fraction` are.
pub fn check_unbiasedness(scheme: Scheme, draws: usize, instances: usize, min_fraction: f64, seed: u64) -> Result<(BoundReport, UnbiasednessTally)> {
    if draws < 10_000 {
        return Err(Error::Usage(format!("unbiasedness needs M >= 1e4 draws, got {draws}")));
    }
    if instances == 0 {
        return Err(Error::Usage("instances must be >= 1".into()));
    }
    let streams = Streams::new(seed);
    let jobs: Vec<(usize, usize)> = (0..QUAD_DIMS.len()).flat_map(|di| (0..instances).map(move |k| (di, k))).collect();
    let tallies: Result<Vec<UnbiasednessTally>> = jobs
        .par_iter()
        .map(|&(di, k)| {
            let mut rng = streams.stream(Purpose::Verify, 10_000 + (scheme as u64) * 100 + di as u64, k as u64);
            let quad = Quadratic::random(QUAD_DIMS[di], &mut rng)?;
            let w: Vec<f64> = (0..quad.dim()).map(|_| rng.sample(StandardNormal)).collect();
            unbiasedness_cells(|x: &[f64]| quad.value(x), &quad.gradient(&w), &w, 0.05, scheme, draws, &mut rng)
        })
        .collect();
    let tally = tallies?
        .into_iter()
        .fold(UnbiasednessTally { comparisons: 0, within: 0, worst_z: 0.0 }, UnbiasednessTally::merge);
    let report = BoundReport::new(format!("unbiased_outside_3se/{}", scheme.name()), 1.0 - tally.fraction(), 1.0 - min_fraction, 0.0);
    Ok((report, tally))
}

/// Least-squares line through `(log t, log y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub window: (u64, u64),
    pub r2: f64,
}

pub fn fit_log_log(points: &[(u64, f64)]) -> Result<RateFit> {
    if points.len() < 2 {
        return Err(Error::Usage("a log-log fit needs at least two points".into()));
    }
    if points.iter().any(|&(t, y)| t == 0 || !(y > 0.0) || !y.is_finite()) {
        return domain_err("log-log fit needs t >= 1 and finite positive values");
    }
    let xs: Vec<f64> = points.iter().map(|&(t, _)| (t as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, y)| y.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return domain_err("log-log fit needs at least two distinct t");
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    let lo = points.iter().map(|p| p.0).min().unwrap_or(0);
    let hi = points.iter().map(|p| p.0).max().unwrap_or(0);
    Ok(RateFit { slope, intercept: my - slope * mx, window: (lo, hi), r2 })
}

pub fn running_mean(values: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    values
        .iter()
        .enumerate()
        .map(|(k, v)| {
            acc += v;
            acc / (k + 1) as f64
        })
        .collect()
}

/// Fits the series over `[0.2 T, T]`; at least ten checkpoints must fall in
/// the window.
pub fn fit_rate_window(series: &[(u64, f64)], horizon: u64) -> Result<RateFit> {
    let lo = horizon / 5;
    let window: Vec<(u64, f64)> = series.iter().copied().filter(|&(t, _)| t >= lo.max(1) && t <= horizon).collect();
    if window.len() < 10 {
        return Err(Error::Usage(format!("rate fit needs >= 10 checkpoints in [{lo}, {horizon}], got {}", window.len())));
    }
    fit_log_log(&window)
}

/// True squared gradient norm at every traced checkpoint `t >= 1`.
pub fn trace_grad_norms(metrics: &RunMetrics, models: &Composite, data: &PartitionedDataset, lambda: f64) -> Result<Vec<(u64, f64)>> {
    metrics
        .trace
        .iter()
        .filter(|(t, _)| *t >= 1)
        .map(|(t, state)| Ok((*t, models.gradient(state, data, lambda)?.squared_norm())))
        .collect()
}

/// Slope of the running mean of the true `||grad f||^2` against `t` over the
/// last 80% of the run. The run must have been traced.
pub fn fit_convergence_rate(metrics: &RunMetrics, models: &Composite, data: &PartitionedDataset, lambda: f64, horizon: u64) -> Result<RateFit> {
    let norms = trace_grad_norms(metrics, models, data, lambda)?;
    let means = running_mean(&norms.iter().map(|p| p.1).collect::<Vec<_>>());
    let series: Vec<(u64, f64)> = norms.iter().map(|p| p.0).zip(means).collect();
    fit_rate_window(&series, horizon)
}

/// `speedup(q) = times[1] / times[q]`.
pub fn compute_speedup(times: &BTreeMap<usize, f64>) -> Result<BTreeMap<usize, f64>> {
    let base = *times.get(&1).ok_or_else(|| Error::Usage("speedup needs the q = 1 time".into()))?;
    times
        .iter()
        .map(|(&q, &t)| {
            if !(t > 0.0) {
                return Err(Error::Usage(format!("time for q = {q} must be positive, got {t}")));
            }
            Ok((q, base / t))
        })
        .collect()
}

/// Virtual time for `events` asynchronous updates with equal parties, no
/// latency, no refresh cost and no staleness pulls.
pub fn ideal_schedule_times(qs: &[usize], events: u64, seed: u64) -> Result<BTreeMap<usize, f64>> {
    let total = qs.iter().copied().max().unwrap_or(1).max(1) * 4;
    let data = SyntheticSpec::new(Family::NoisyLogistic, 64, total, seed).generate()?;
    qs.iter()
        .map(|&q| {
            let dims = partition_features(total, q)?;
            let train = PartitionedDataset::from_dense(&data, &dims)?;
            let models = Composite::logistic_glm(&dims);
            let mut cfg = RunConfig::new(Algorithm::AsyrevelGau, q, events);
            cfg.seed = seed;
            cfg.schedule = Schedule::Free;
            cfg.refresh_cost = 0.0;
            cfg.tau = u64::MAX / 2;
            cfg.record_transcript = false;
            cfg.eval_every = Some(events);
            Ok((q, run_asyrevel(&cfg, &train, None, &models)?.vtime))
        })
        .collect()
}

/// Per-block spread of the per-sample gradients around the full gradient,
/// `(1/n) sum_i ||grad_m f_i - grad_m f||^2`, with the head first. Reported,
/// never asserted.
pub fn block_gradient_spread(models: &Composite, state: &ModelState, data: &PartitionedDataset, lambda: f64) -> Result<Vec<f64>> {
    let full = models.gradient(state, data, lambda)?;
    let dense = data.to_dense();
    let dims = data.block_dims();
    let mut spread = vec![0.0; dims.len() + 1];
    for i in 0..data.n() {
        let one = PartitionedDataset::from_dense(&dense.subset(&[i]), &dims)?;
        let g = models.gradient(state, &one, lambda)?;
        spread[0] += g.w0.iter().zip(&full.w0).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        for (m, (gb, fb)) in g.blocks.iter().zip(&full.blocks).enumerate() {
            spread[m + 1] += gb.iter().zip(fb).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
    }
    spread.iter_mut().for_each(|s| *s /= data.n() as f64);
    Ok(spread)
}
