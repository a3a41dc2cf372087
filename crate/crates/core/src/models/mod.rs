//! Composite objective: private local models feeding a server-side head.

mod data;
mod global;
mod local;
pub mod synthetic;

pub use data::{partition_features, DenseDataset, PartitionedDataset};
pub use global::{sigmoid, softplus, GlobalModel};
pub use local::{LocalArch, LocalModel};

use crate::error::{domain_err, shape_err, Result};
use crate::rng::{Purpose, Streams};

/// Parameters of every block: `w0` on the server, `blocks[m]` on party `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub w0: Vec<f64>,
    pub blocks: Vec<Vec<f64>>,
}

impl ModelState {
    pub fn zeros(d0: usize, dims: &[usize]) -> Self {
        Self { w0: vec![0.0; d0], blocks: dims.iter().map(|&d| vec![0.0; d]).collect() }
    }

    /// `w_m <- w_m - eta * step`. Rejects mismatched or non-finite updates
    /// and leaves the block untouched in that case.
    pub fn step_block(&mut self, m: usize, step: &[f64], eta: f64) -> Result<()> {
        let block = self
            .blocks
            .get_mut(m)
            .ok_or_else(|| crate::Error::Shape(format!("no block {m}")))?;
        descend(block, step, eta)
    }

    pub fn step_global(&mut self, step: &[f64], eta: f64) -> Result<()> {
        descend(&mut self.w0, step, eta)
    }

    /// All local blocks concatenated in party order.
    pub fn flat_blocks(&self) -> Vec<f64> {
        self.blocks.concat()
    }

    pub fn squared_norm(&self) -> f64 {
        self.w0.iter().chain(self.blocks.iter().flatten()).map(|v| v * v).sum()
    }
}

pub(crate) fn descend(w: &mut [f64], step: &[f64], eta: f64) -> Result<()> {
    if w.len() != step.len() {
        return shape_err(format!("step of length {} for block of {}", step.len(), w.len()));
    }
    if w.iter().zip(step).any(|(a, s)| !(a - eta * s).is_finite()) {
        return domain_err("update would produce a non-finite parameter");
    }
    w.iter_mut().zip(step).for_each(|(a, s)| *a -= eta * s);
    Ok(())
}

/// `sum_i w_i^2 / (1 + w_i^2)`.
pub fn nonconvex_reg(w: &[f64]) -> f64 {
    w.iter().map(|v| v * v / (1.0 + v * v)).sum()
}

/// The regularizer evaluated at `w + mu * u` without materializing the point.
pub fn nonconvex_reg_at(w: &[f64], mu: f64, u: &[f64]) -> f64 {
    w.iter()
        .zip(u)
        .map(|(a, b)| {
            let v = a + mu * b;
            v * v / (1.0 + v * v)
        })
        .sum()
}

pub fn nonconvex_reg_grad(w: &[f64]) -> Vec<f64> {
    w.iter()
        .map(|v| {
            let s = 1.0 + v * v;
            2.0 * v / (s * s)
        })
        .collect()
}

/// The full model: one local model per party and the server head.
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub locals: Vec<LocalModel>,
    pub global: GlobalModel,
}

impl Composite {
    /// Linear parties under a logistic head.
    pub fn logistic_glm(block_dims: &[usize]) -> Self {
        Self {
            locals: block_dims.iter().map(|&d| LocalModel::linear(d)).collect(),
            global: GlobalModel::Logistic,
        }
    }

    /// Per-party MLP `d_m -> hidden -> out_dim` under a softmax head.
    pub fn mlp_softmax(block_dims: &[usize], hidden: usize, out_dim: usize, classes: usize) -> Result<Self> {
        let locals = block_dims
            .iter()
            .map(|&d| LocalModel::mlp(vec![d, hidden, out_dim]))
            .collect::<Result<Vec<_>>>()?;
        let inputs = out_dim * block_dims.len();
        Ok(Self { locals, global: GlobalModel::SoftmaxFcn { inputs, classes } })
    }

    pub fn into_black_box(mut self) -> Self {
        self.locals = self.locals.into_iter().map(LocalModel::into_black_box).collect();
        self
    }

    pub fn is_black_box(&self) -> bool {
        self.locals.iter().any(|m| m.black_box)
    }

    pub fn q(&self) -> usize {
        self.locals.len()
    }

    pub fn d0(&self) -> usize {
        self.global.param_dim()
    }

    pub fn param_dims(&self) -> Vec<usize> {
        self.locals.iter().map(LocalModel::param_dim).collect()
    }

    pub fn output_dims(&self) -> Vec<usize> {
        self.locals.iter().map(LocalModel::output_dim).collect()
    }

    pub fn max_output_dim(&self) -> usize {
        self.output_dims().into_iter().max().unwrap_or(0)
    }

    /// Offsets of each party's output inside the concatenated `c_i`.
    pub fn output_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.locals
            .iter()
            .map(|m| {
                let o = acc;
                acc += m.output_dim();
                o
            })
            .collect()
    }

    /// Deterministic initial parameters drawn from the run's `Init` streams.
    pub fn init_state(&self, streams: &Streams) -> ModelState {
        let blocks = self
            .locals
            .iter()
            .enumerate()
            .map(|(m, model)| model.init_params(&mut streams.stream(Purpose::Init, m as u64 + 1, 0)))
            .collect();
        let w0 = self.global.init_params(&mut streams.stream(Purpose::Init, 0, 0));
        ModelState { w0, blocks }
    }

    pub fn validate(&self, state: &ModelState, data: &PartitionedDataset) -> Result<()> {
        if data.q() != self.q() || state.blocks.len() != self.q() {
            return shape_err(format!(
                "{} local models, {} data blocks, {} parameter blocks",
                self.q(),
                data.q(),
                state.blocks.len()
            ));
        }
        for (m, model) in self.locals.iter().enumerate() {
            if model.input_dim() != data.block_dims()[m] {
                return shape_err(format!("party {m}: model input {} vs block {}", model.input_dim(), data.block_dims()[m]));
            }
            if model.param_dim() != state.blocks[m].len() {
                return shape_err(format!("party {m}: {} parameters, model needs {}", state.blocks[m].len(), model.param_dim()));
            }
        }
        if state.w0.len() != self.d0() {
            return shape_err(format!("{} global parameters, head needs {}", state.w0.len(), self.d0()));
        }
        Ok(())
    }

    /// Concatenated `c_i` with all parties at their current parameters.
    pub fn outputs(&self, state: &ModelState, data: &PartitionedDataset, i: usize) -> Result<Vec<f64>> {
        let mut c = Vec::new();
        for (m, model) in self.locals.iter().enumerate() {
            c.extend(model.forward(&state.blocks[m], data.x(m, i))?);
        }
        Ok(c)
    }

    /// Data term of sample `i`.
    pub fn sample_loss(&self, state: &ModelState, data: &PartitionedDataset, i: usize) -> Result<f64> {
        let c = self.outputs(state, data, i)?;
        self.global.value(&state.w0, &c, data.label(i))
    }

    pub fn regularizer(&self, state: &ModelState) -> f64 {
        state.blocks.iter().map(|w| nonconvex_reg(w)).sum()
    }

    /// `(1/n) sum_i F_0(w_0, c_i; y_i) + lambda * sum_m g(w_m)`.
    pub fn objective(&self, state: &ModelState, data: &PartitionedDataset, lambda: f64) -> Result<f64> {
        self.validate(state, data)?;
        let mut total = 0.0;
        for i in 0..data.n() {
            total += self.sample_loss(state, data, i)?;
        }
        Ok(total / data.n() as f64 + lambda * self.regularizer(state))
    }

    /// Exact gradient of [`Composite::objective`]; white-box models only.
    pub fn gradient(&self, state: &ModelState, data: &PartitionedDataset, lambda: f64) -> Result<ModelState> {
        self.validate(state, data)?;
        let mut grad = ModelState::zeros(self.d0(), &self.param_dims());
        let offsets = self.output_offsets();
        let n = data.n() as f64;
        for i in 0..data.n() {
            let c = self.outputs(state, data, i)?;
            let (dc, dw0) = self.global.grads(&state.w0, &c, data.label(i))?;
            for (g, d) in grad.w0.iter_mut().zip(&dw0) {
                *g += d / n;
            }
            for (m, model) in self.locals.iter().enumerate() {
                let slice = &dc[offsets[m]..offsets[m] + model.output_dim()];
                let gm = model.vjp(&state.blocks[m], data.x(m, i), slice)?;
                for (g, d) in grad.blocks[m].iter_mut().zip(&gm) {
                    *g += d / n;
                }
            }
        }
        for (g, w) in grad.blocks.iter_mut().zip(&state.blocks) {
            for (gi, ri) in g.iter_mut().zip(nonconvex_reg_grad(w)) {
                *gi += lambda * ri;
            }
        }
        Ok(grad)
    }

    /// Fraction of samples whose predicted label matches.
    pub fn accuracy(&self, state: &ModelState, data: &PartitionedDataset) -> Result<f64> {
        if data.n() == 0 {
            return Ok(0.0);
        }
        let mut hits = 0usize;
        for i in 0..data.n() {
            let c = self.outputs(state, data, i)?;
            if self.global.predict(&state.w0, &c)? == data.label(i) {
                hits += 1;
            }
        }
        Ok(hits as f64 / data.n() as f64)
    }
}

/// Free-function form of [`Composite::objective`].
pub fn composite_objective(
    state: &ModelState,
    data: &PartitionedDataset,
    lambda: f64,
    models: &Composite,
) -> Result<f64> {
    models.objective(state, data, lambda)
}
