use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{domain_err, shape_err, Result};

/// The server's head `F_0(w_0, c_i; y_i)`. `c` is always the concatenation
/// of all party outputs in party order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GlobalModel {
    /// `log(1 + exp(-y * sum(c)))` with `y` in {-1, +1}; no parameters.
    Logistic,
    /// One dense layer `inputs x classes` (no bias) followed by softmax
    /// cross-entropy; labels are class indices.
    SoftmaxFcn { inputs: usize, classes: usize },
}

impl GlobalModel {
    pub fn param_dim(&self) -> usize {
        match self {
            GlobalModel::Logistic => 0,
            GlobalModel::SoftmaxFcn { inputs, classes } => inputs * classes,
        }
    }

    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            GlobalModel::Logistic => Vec::new(),
            GlobalModel::SoftmaxFcn { inputs, .. } => {
                let scale = (1.0 / *inputs as f64).sqrt();
                (0..self.param_dim())
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
        }
    }

    fn check(&self, w0: &[f64], c: &[f64]) -> Result<()> {
        if w0.len() != self.param_dim() {
            return shape_err(format!("{} global parameters, head needs {}", w0.len(), self.param_dim()));
        }
        if let GlobalModel::SoftmaxFcn { inputs, .. } = self {
            if c.len() != *inputs {
                return shape_err(format!("{} party outputs, head takes {inputs}", c.len()));
            }
        }
        Ok(())
    }

    fn logits(&self, w0: &[f64], c: &[f64]) -> Vec<f64> {
        match self {
            GlobalModel::Logistic => vec![c.iter().sum()],
            GlobalModel::SoftmaxFcn { classes, .. } => {
                let mut z = vec![0.0; *classes];
                for (j, cj) in c.iter().enumerate() {
                    let row = &w0[j * classes..(j + 1) * classes];
                    for (zk, wk) in z.iter_mut().zip(row) {
                        *zk += cj * wk;
                    }
                }
                z
            }
        }
    }

    fn check_label(&self, label: i32) -> Result<()> {
        match self {
            GlobalModel::Logistic if label != 1 && label != -1 => {
                domain_err(format!("logistic head expects labels +-1, got {label}"))
            }
            GlobalModel::SoftmaxFcn { classes, .. } if label < 0 || label as usize >= *classes => {
                domain_err(format!("label {label} outside {classes} classes"))
            }
            _ => Ok(()),
        }
    }

    /// Per-sample loss.
    pub fn value(&self, w0: &[f64], c: &[f64], label: i32) -> Result<f64> {
        self.check(w0, c)?;
        self.check_label(label)?;
        let z = self.logits(w0, c);
        Ok(match self {
            GlobalModel::Logistic => softplus(-(label as f64) * z[0]),
            GlobalModel::SoftmaxFcn { .. } => log_sum_exp(&z) - z[label as usize],
        })
    }

    /// Gradients of the per-sample loss with respect to `c` and `w0`.
    pub fn grads(&self, w0: &[f64], c: &[f64], label: i32) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check(w0, c)?;
        self.check_label(label)?;
        let z = self.logits(w0, c);
        Ok(match self {
            GlobalModel::Logistic => {
                let y = label as f64;
                let dz = -y * sigmoid(-y * z[0]);
                (vec![dz; c.len()], Vec::new())
            }
            GlobalModel::SoftmaxFcn { classes, .. } => {
                let lse = log_sum_exp(&z);
                let mut dz: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
                dz[label as usize] -= 1.0;
                let dc = (0..c.len())
                    .map(|j| super::local::dot(&w0[j * classes..(j + 1) * classes], &dz))
                    .collect();
                let dw0 = c.iter().flat_map(|cj| dz.iter().map(move |d| cj * d)).collect();
                (dc, dw0)
            }
        })
    }

    pub fn predict(&self, w0: &[f64], c: &[f64]) -> Result<i32> {
        self.check(w0, c)?;
        let z = self.logits(w0, c);
        Ok(match self {
            GlobalModel::Logistic => {
                if z[0] >= 0.0 {
                    1
                } else {
                    -1
                }
            }
            GlobalModel::SoftmaxFcn { .. } => {
                let mut best = 0;
                for (k, v) in z.iter().enumerate() {
                    if *v > z[best] {
                        best = k;
                    }
                }
                best as i32
            }
        })
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_symmetry_point() {
        let v = GlobalModel::Logistic.value(&[], &[0.0, 0.0], 1).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn logistic_saturates() {
        let v = GlobalModel::Logistic.value(&[], &[20.0, 30.0], 1).unwrap();
        assert!((0.0..1e-20).contains(&v));
    }

    #[test]
    fn logistic_sign_symmetry() {
        let a = GlobalModel::Logistic.value(&[], &[1.3], -1).unwrap();
        let b = GlobalModel::Logistic.value(&[], &[-1.3], 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_labels() {
        assert!(matches!(GlobalModel::Logistic.value(&[], &[0.1], 0), Err(crate::Error::Domain(_))));
        let head = GlobalModel::SoftmaxFcn { inputs: 2, classes: 3 };
        assert!(matches!(head.value(&[0.0; 6], &[0.1, 0.2], 3), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn softmax_uniform_at_zero_weights() {
        let head = GlobalModel::SoftmaxFcn { inputs: 2, classes: 4 };
        let v = head.value(&[0.0; 8], &[1.0, -2.0], 2).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn softmax_grads_match_differences() {
        let head = GlobalModel::SoftmaxFcn { inputs: 3, classes: 2 };
        let w0 = [0.2, -0.1, 0.4, 0.3, -0.5, 0.05];
        let c = [0.7, -1.1, 0.25];
        let (dc, dw) = head.grads(&w0, &c, 1).unwrap();
        let h = 1e-6;
        for j in 0..c.len() {
            let (mut cp, mut cm) = (c, c);
            cp[j] += h;
            cm[j] -= h;
            let fd = (head.value(&w0, &cp, 1).unwrap() - head.value(&w0, &cm, 1).unwrap()) / (2.0 * h);
            assert!((fd - dc[j]).abs() < 1e-8);
        }
        for k in 0..w0.len() {
            let (mut wp, mut wm) = (w0, w0);
            wp[k] += h;
            wm[k] -= h;
            let fd = (head.value(&wp, &c, 1).unwrap() - head.value(&wm, &c, 1).unwrap()) / (2.0 * h);
            assert!((fd - dw[k]).abs() < 1e-8);
        }
    }
}
