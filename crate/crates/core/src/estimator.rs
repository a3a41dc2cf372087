//! Two-point zeroth-order gradient estimation.
//!
//! A block estimate is `(s / mu) * [f(w + mu u) - f(w)] * u` where `u` is a
//! random direction and `s` the scheme's dimension factor: `1` for Gaussian
//! directions (`E[u u^T] = I`) and `d` for directions uniform on the unit
//! sphere (`E[u u^T] = I / d`). With that factor the estimate is unbiased for
//! the gradient of the smoothed function under both schemes.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{domain_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Gaussian,
    Sphere,
}

impl Scheme {
    /// Dimension factor of the two-point estimate for a block of size `dim`.
    pub fn scale(self, dim: usize) -> f64 {
        match self {
            Scheme::Gaussian => 1.0,
            Scheme::Sphere => dim as f64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Gaussian => "gaussian",
            Scheme::Sphere => "sphere",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "gau" => Ok(Scheme::Gaussian),
            "sphere" | "uni" | "uniform" => Ok(Scheme::Sphere),
            other => Err(Error::Config(format!("unknown smoothing scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub u: Vec<f64>,
    pub scheme: Scheme,
}

impl Direction {
    pub fn dim(&self) -> usize {
        self.u.len()
    }

    /// A zero-dimensional direction, used for parameter-free blocks.
    pub fn empty(scheme: Scheme) -> Self {
        Self { u: Vec::new(), scheme }
    }
}

pub fn sample_direction<R: Rng + ?Sized>(scheme: Scheme, dim: usize, rng: &mut R) -> Result<Direction> {
    if dim == 0 {
        return domain_err("direction dimension must be >= 1");
    }
    let mut u: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    if scheme == Scheme::Sphere {
        let mut norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        while norm == 0.0 {
            u.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        u.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(Direction { u, scheme })
}

/// Per-block smoothing radii.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingConfig {
    pub mu: Vec<f64>,
    pub scheme: Scheme,
}

impl SmoothingConfig {
    pub fn new(mu: Vec<f64>, scheme: Scheme) -> Result<Self> {
        if let Some(bad) = mu.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return domain_err(format!("smoothing radius {bad} must be positive"));
        }
        Ok(Self { mu, scheme })
    }
}

/// The two objective values a party needs for its block estimate.
///
/// `h`/`h_bar` come back from the server (head values at the unperturbed and
/// perturbed local output); `reg`/`reg_perturbed` are the party's own
/// regularizer values at `w_m` and `w_m + mu u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPointValues {
    pub h: f64,
    pub h_bar: f64,
    pub reg: f64,
    pub reg_perturbed: f64,
}

/// Block estimate for a party's parameters.
pub fn client_block_zoe(values: TwoPointValues, lambda: f64, mu: f64, dir: &Direction) -> Result<Vec<f64>> {
    if !(mu > 0.0) {
        return domain_err(format!("smoothing radius {mu} must be positive"));
    }
    let diff = (values.h_bar + lambda * values.reg_perturbed) - (values.h + lambda * values.reg);
    let coef = dir.scheme.scale(dir.dim()) / mu * diff;
    Ok(dir.u.iter().map(|v| coef * v).collect())
}

/// Block estimate for the server head; `None` when the head has no
/// parameters.
pub fn server_block_zoe(h: f64, h_hat: f64, mu: f64, dir: &Direction) -> Result<Option<Vec<f64>>> {
    if dir.dim() == 0 {
        return Ok(None);
    }
    if !(mu > 0.0) {
        return domain_err(format!("smoothing radius {mu} must be positive"));
    }
    let coef = dir.scheme.scale(dir.dim()) / mu * (h_hat - h);
    Ok(Some(dir.u.iter().map(|v| coef * v).collect()))
}

/// Running mean/variance.
#[derive(Debug, Clone, Default)]
struct Welford {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn stderr(&self) -> f64 {
        if self.count < 2 {
            return f64::INFINITY;
        }
        (self.m2 / (self.count - 1) as f64 / self.count as f64).sqrt()
    }
}

fn perturbed(w: &[f64], mu: f64, u: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(w.iter().zip(u).map(|(a, b)| a + mu * b));
}

/// Monte-Carlo estimate of the smoothed value `f_mu(w)`, with its standard
/// error. Gaussian smoothing averages over `w + mu u` with `u ~ N(0, I)`;
/// sphere smoothing averages over the ball of radius `mu`, whose gradient is
/// what the sphere estimate targets.
pub fn smoothed_value_mc<F, R>(f: F, w: &[f64], mu: f64, scheme: Scheme, draws: usize, rng: &mut R) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    if draws == 0 {
        return domain_err("need at least one draw");
    }
    if mu == 0.0 {
        return Ok((f(w), 0.0));
    }
    let mut acc = Welford::default();
    let mut point = Vec::with_capacity(w.len());
    for _ in 0..draws {
        let dir = sample_direction(scheme, w.len(), rng)?;
        let radius = match scheme {
            Scheme::Gaussian => mu,
            Scheme::Sphere => mu * rng.random::<f64>().powf(1.0 / w.len() as f64),
        };
        perturbed(w, radius, &dir.u, &mut point);
        acc.push(f(&point));
    }
    Ok((acc.mean, acc.stderr()))
}

/// Monte-Carlo mean of the two-point estimate, coordinatewise with standard
/// errors.
pub fn smoothed_grad_mc<F, R>(
    f: F,
    w: &[f64],
    mu: f64,
    scheme: Scheme,
    draws: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    if draws == 0 {
        return domain_err("need at least one draw");
    }
    if !(mu > 0.0) {
        return domain_err(format!("smoothing radius {mu} must be positive"));
    }
    let base = f(w);
    let coef = scheme.scale(w.len()) / mu;
    let mut acc = vec![Welford::default(); w.len()];
    let mut point = Vec::with_capacity(w.len());
    for _ in 0..draws {
        let dir = sample_direction(scheme, w.len(), rng)?;
        perturbed(w, mu, &dir.u, &mut point);
        let diff = coef * (f(&point) - base);
        for (a, u) in acc.iter_mut().zip(&dir.u) {
            a.push(diff * u);
        }
    }
    Ok((acc.iter().map(|a| a.mean).collect(), acc.iter().map(Welford::stderr).collect()))
}

/// Step size and smoothing radii from the convergence theorems.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub eta: f64,
    pub eta_server: f64,
    pub horizon: u64,
    pub tau: u64,
    pub m0: f64,
    pub l_est: f64,
    /// Effective dimension `d_*` used in the radius.
    pub d_star: f64,
    /// One radius per local block.
    pub mu: Vec<f64>,
}

/// `eta = min{1 / (4 (tau + 1) L), m0 / sqrt(T)}` and
/// `mu = 1 / (sqrt(T) L d_*^{3/2})` (Gaussian, `d_* = max d_m + 3`) or
/// `mu = 1 / (sqrt(T) L d_*)` (sphere, `d_* = max d_m`).
pub fn prescribe_hyperparams(
    horizon: u64,
    tau: u64,
    l_est: f64,
    m0: f64,
    dims: &[usize],
    scheme: Scheme,
) -> Result<HyperParams> {
    if horizon == 0 {
        return domain_err("horizon T must be >= 1");
    }
    if !(l_est > 0.0 && l_est.is_finite()) {
        return domain_err(format!("smoothness estimate {l_est} must be positive"));
    }
    if !(m0 > 0.0) {
        return domain_err(format!("rate constant m0 = {m0} must be positive"));
    }
    if dims.is_empty() {
        return domain_err("no parameter blocks");
    }
    let root_t = (horizon as f64).sqrt();
    let eta = (1.0 / (4.0 * (tau as f64 + 1.0) * l_est)).min(m0 / root_t);
    let max_dim = *dims.iter().max().unwrap() as f64;
    let (d_star, mu) = match scheme {
        Scheme::Gaussian => {
            let d = max_dim + 3.0;
            (d, 1.0 / (root_t * l_est * d.powf(1.5)))
        }
        Scheme::Sphere => (max_dim, 1.0 / (root_t * l_est * max_dim)),
    };
    Ok(HyperParams {
        eta,
        eta_server: eta / dims.len() as f64,
        horizon,
        tau,
        m0,
        l_est,
        d_star,
        mu: vec![mu; dims.len()],
    })
}

/// Largest gradient-Lipschitz ratio seen over `pairs` random point pairs
/// within `radius` of `center`, using central differences for gradients.
pub fn estimate_smoothness<F, R>(f: F, center: &[f64], radius: f64, pairs: usize, rng: &mut R) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    if center.is_empty() || pairs == 0 || !(radius > 0.0) {
        return domain_err("smoothness estimate needs a nonempty point, pairs >= 1 and radius > 0");
    }
    let step = 1e-5 * radius.max(1.0);
    let grad = |x: &[f64]| -> Vec<f64> {
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|k| {
                probe[k] = x[k] + step;
                let up = f(&probe);
                probe[k] = x[k] - step;
                let down = f(&probe);
                probe[k] = x[k];
                (up - down) / (2.0 * step)
            })
            .collect()
    };
    let mut best: f64 = 0.0;
    for _ in 0..pairs {
        let a: Vec<f64> = center.iter().map(|c| c + radius * rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = center.iter().map(|c| c + radius * rng.random_range(-1.0..1.0)).collect();
        let dist = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        if dist == 0.0 {
            continue;
        }
        let (ga, gb) = (grad(&a), grad(&b));
        let gdist = ga.iter().zip(&gb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        best = best.max(gdist / dist);
    }
    if best <= 0.0 {
        // affine in the probed region; any positive constant is valid
        best = f64::EPSILON;
    }
    Ok(best)
}
