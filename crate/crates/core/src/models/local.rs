use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{shape_err, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LocalArch {
    /// `c = w . x`.
    Linear { input_dim: usize },
    /// Fully connected layers with widths `widths[0] -> ... -> widths[K]`.
    /// Hidden layers use the rectifier; the output layer is affine.
    Mlp { widths: Vec<usize> },
}

/// A party's private model `F_m(w_m; x)`.
///
/// `black_box` marks models whose internals are unavailable to the training
/// protocol: only forward evaluations are allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalModel {
    pub arch: LocalArch,
    pub black_box: bool,
}

impl LocalModel {
    pub fn linear(input_dim: usize) -> Self {
        Self { arch: LocalArch::Linear { input_dim }, black_box: false }
    }

    pub fn mlp(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return shape_err(format!("mlp widths {widths:?} need >= 2 nonzero layers"));
        }
        Ok(Self { arch: LocalArch::Mlp { widths }, black_box: false })
    }

    pub fn into_black_box(mut self) -> Self {
        self.black_box = true;
        self
    }

    pub fn input_dim(&self) -> usize {
        match &self.arch {
            LocalArch::Linear { input_dim } => *input_dim,
            LocalArch::Mlp { widths } => widths[0],
        }
    }

    pub fn output_dim(&self) -> usize {
        match &self.arch {
            LocalArch::Linear { .. } => 1,
            LocalArch::Mlp { widths } => *widths.last().unwrap(),
        }
    }

    pub fn param_dim(&self) -> usize {
        match &self.arch {
            LocalArch::Linear { input_dim } => *input_dim,
            LocalArch::Mlp { widths } => widths.windows(2).map(|p| p[1] * p[0] + p[1]).sum(),
        }
    }

    /// Initial parameters: zeros for linear models, scaled normal weights and
    /// zero biases for MLPs.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match &self.arch {
            LocalArch::Linear { input_dim } => vec![0.0; *input_dim],
            LocalArch::Mlp { widths } => {
                let mut w = Vec::with_capacity(self.param_dim());
                for pair in widths.windows(2) {
                    let (fan_in, fan_out) = (pair[0], pair[1]);
                    let scale = (2.0 / fan_in as f64).sqrt();
                    for _ in 0..fan_in * fan_out {
                        let z: f64 = rng.sample(StandardNormal);
                        w.push(scale * z);
                    }
                    w.extend(std::iter::repeat_n(0.0, fan_out));
                }
                w
            }
        }
    }

    fn check(&self, w: &[f64], x: &[f64]) -> Result<()> {
        if w.len() != self.param_dim() {
            return shape_err(format!("{} parameters, model needs {}", w.len(), self.param_dim()));
        }
        if x.len() != self.input_dim() {
            return shape_err(format!("input of length {}, model takes {}", x.len(), self.input_dim()));
        }
        Ok(())
    }

    /// Local output `c = F_m(w; x)`.
    pub fn forward(&self, w: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check(w, x)?;
        Ok(match &self.arch {
            LocalArch::Linear { .. } => vec![dot(w, x)],
            LocalArch::Mlp { widths } => mlp_layers(widths, w, x).pop().unwrap(),
        })
    }

    /// Parameter gradient of `g . F_m(w; x)`; needs a white-box model.
    pub fn vjp(&self, w: &[f64], x: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        self.check(w, x)?;
        if g.len() != self.output_dim() {
            return shape_err(format!("cotangent of length {}, output is {}", g.len(), self.output_dim()));
        }
        Ok(match &self.arch {
            LocalArch::Linear { .. } => x.iter().map(|xi| g[0] * xi).collect(),
            LocalArch::Mlp { widths } => mlp_vjp(widths, w, x, g),
        })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Activations of every layer, input included.
fn mlp_layers(widths: &[usize], w: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
    let layers = widths.len() - 1;
    let mut acts = vec![x.to_vec()];
    let mut offset = 0;
    for (l, pair) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let weights = &w[offset..offset + fan_in * fan_out];
        let bias = &w[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        offset += fan_in * fan_out + fan_out;
        let prev = acts.last().unwrap();
        let mut next: Vec<f64> = (0..fan_out)
            .map(|o| dot(&weights[o * fan_in..(o + 1) * fan_in], prev) + bias[o])
            .collect();
        if l + 1 < layers {
            next.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        acts.push(next);
    }
    acts
}

fn mlp_vjp(widths: &[usize], w: &[f64], x: &[f64], g: &[f64]) -> Vec<f64> {
    let acts = mlp_layers(widths, w, x);
    let layers = widths.len() - 1;
    let mut offsets = Vec::with_capacity(layers);
    let mut offset = 0;
    for pair in widths.windows(2) {
        offsets.push(offset);
        offset += pair[0] * pair[1] + pair[1];
    }
    let mut grad = vec![0.0; w.len()];
    let mut delta = g.to_vec();
    for l in (0..layers).rev() {
        let (fan_in, fan_out) = (widths[l], widths[l + 1]);
        if l + 1 < layers {
            // rectifier derivative at the post-activation value
            for (d, a) in delta.iter_mut().zip(&acts[l + 1]) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let base = offsets[l];
        let input = &acts[l];
        for o in 0..fan_out {
            for k in 0..fan_in {
                grad[base + o * fan_in + k] = delta[o] * input[k];
            }
            grad[base + fan_in * fan_out + o] = delta[o];
        }
        if l > 0 {
            let weights = &w[base..base + fan_in * fan_out];
            delta = (0..fan_in)
                .map(|k| (0..fan_out).map(|o| weights[o * fan_in + k] * delta[o]).sum())
                .collect();
        }
    }
    grad
}
