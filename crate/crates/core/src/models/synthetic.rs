//! Seeded synthetic benchmarks so that everything runs without downloads.
//!
//! Features are i.i.d. standard normal; the planted direction has norm
//! `signal`, so the planted margin `w* . x` has standard deviation `signal`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{sigmoid, DenseDataset};
use crate::error::{domain_err, Result};
use crate::rng::{Purpose, Streams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// `y = sign(w* . x)`: linearly separable.
    Separable,
    /// `P(y = +1) = sigmoid(w* . x)`: label noise, no perfect separator.
    NoisyLogistic,
    /// `y = argmax_k (W*^T x)_k` over `classes` classes.
    Multiclass { classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub family: Family,
    pub n: usize,
    pub dim: usize,
    /// Norm of the planted separator; larger means cleaner labels.
    pub signal: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(family: Family, n: usize, dim: usize, seed: u64) -> Self {
        Self { family, n, dim, signal: 3.0, seed }
    }

    pub fn with_signal(mut self, signal: f64) -> Self {
        self.signal = signal;
        self
    }

    pub fn generate(&self) -> Result<DenseDataset> {
        if self.dim == 0 {
            return domain_err("synthetic data needs at least one feature");
        }
        let streams = Streams::new(self.seed);
        let mut rng = streams.stream(Purpose::Data, 0, 0);
        let outputs = match self.family {
            Family::Multiclass { classes } if classes < 2 => return domain_err("need >= 2 classes"),
            Family::Multiclass { classes } => classes,
            _ => 1,
        };
        let mut planted: Vec<f64> = (0..self.dim * outputs).map(|_| rng.sample(StandardNormal)).collect();
        for k in 0..outputs {
            let norm = (0..self.dim).map(|j| planted[j * outputs + k].powi(2)).sum::<f64>().sqrt();
            for j in 0..self.dim {
                planted[j * outputs + k] *= self.signal / norm;
            }
        }
        let mut features = Vec::with_capacity(self.n * self.dim);
        let mut labels = Vec::with_capacity(self.n);
        for _ in 0..self.n {
            let x: Vec<f64> = (0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let mut z = vec![0.0; outputs];
            for (j, xj) in x.iter().enumerate() {
                for (k, zk) in z.iter_mut().enumerate() {
                    *zk += xj * planted[j * outputs + k];
                }
            }
            let label = match self.family {
                Family::Separable => {
                    if z[0] >= 0.0 {
                        1
                    } else {
                        -1
                    }
                }
                Family::NoisyLogistic => {
                    if rng.random_bool(sigmoid(z[0])) {
                        1
                    } else {
                        -1
                    }
                }
                Family::Multiclass { .. } => {
                    let mut best = 0;
                    for k in 1..outputs {
                        if z[k] > z[best] {
                            best = k;
                        }
                    }
                    best as i32
                }
            };
            features.extend(x);
            labels.push(label);
        }
        DenseDataset::new(self.dim, features, labels)
    }
}

/// Shuffle with `seed`, cut into `folds` parts and hold out part `fold`.
pub fn holdout_split(data: &DenseDataset, folds: usize, fold: usize, seed: u64) -> Result<(DenseDataset, DenseDataset)> {
    if folds < 2 || fold >= folds {
        return domain_err(format!("fold {fold} of {folds} is not a valid holdout"));
    }
    if data.n() < folds {
        return domain_err(format!("{} samples cannot fill {folds} folds", data.n()));
    }
    let mut order: Vec<usize> = (0..data.n()).collect();
    order.shuffle(&mut Streams::new(seed).stream(Purpose::Data, 1, 0));
    let lo = fold * data.n() / folds;
    let hi = (fold + 1) * data.n() / folds;
    let test: Vec<usize> = order[lo..hi].to_vec();
    let train: Vec<usize> = order[..lo].iter().chain(&order[hi..]).copied().collect();
    Ok((data.subset(&train), data.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced_enough() {
        let spec = SyntheticSpec::new(Family::Separable, 400, 16, 9);
        let a = spec.generate().unwrap();
        assert_eq!(a, spec.generate().unwrap());
        let pos = a.labels().iter().filter(|&&y| y == 1).count();
        assert!(pos > 100 && pos < 300, "{pos}");
    }

    #[test]
    fn multiclass_labels_in_range() {
        let d = SyntheticSpec::new(Family::Multiclass { classes: 3 }, 300, 8, 1).generate().unwrap();
        assert!(d.labels().iter().all(|&y| (0..3).contains(&y)));
        for k in 0..3 {
            assert!(d.labels().contains(&k));
        }
    }

    #[test]
    fn holdout_is_a_partition() {
        let d = SyntheticSpec::new(Family::NoisyLogistic, 103, 4, 2).generate().unwrap();
        let (train, test) = holdout_split(&d, 10, 0, 5).unwrap();
        assert_eq!(train.n() + test.n(), 103);
        assert_eq!(test.n(), 10);
        assert!(holdout_split(&d, 10, 10, 5).is_err());
    }
}
