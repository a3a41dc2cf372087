//! Loads data, builds the models, runs one configured experiment and writes
//! its artifacts.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use revelight::engine::{run, RunMetrics};
use revelight::models::synthetic::{holdout_split, SyntheticSpec};
use revelight::models::{partition_features, Composite, DenseDataset, PartitionedDataset};

use crate::config::{DataSource, ExperimentSpec, ModelKind};
use crate::dataset::{load_dataset, LoadOptions};
use crate::error::{CliError, CliResult};

pub const SUMMARY_HEADER: &str = "algorithm,seed,final_loss,final_acc,total_bytes,vtime";

/// Everything needed to train: partitioned splits and the composite model.
pub struct Prepared {
    pub train: PartitionedDataset,
    pub test: Option<PartitionedDataset>,
    pub models: Composite,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub metrics: RunMetrics,
    pub metrics_csv: PathBuf,
    pub transcript: Option<PathBuf>,
    pub summary: PathBuf,
    pub summary_line: String,
}

pub fn load_source(source: &DataSource, run_seed: u64) -> CliResult<DenseDataset> {
    match source {
        DataSource::Synthetic { family, n, dim, seed, signal } => {
            Ok(SyntheticSpec::new(*family, *n, *dim, seed.unwrap_or(run_seed)).with_signal(*signal).generate()?)
        }
        DataSource::File { path, format, dim, labels } => {
            let opts = LoadOptions { dim: *dim, labels: labels.clone() };
            Ok(load_dataset(path, *format, &opts)?.to_dense())
        }
    }
}

/// Logistic heads want `{-1, +1}`: positive labels map to `+1`, the rest to
/// `-1`. Softmax heads want `0..K`: a `{-1, +1}` labelling maps to `{0, 1}`.
fn relabel(data: &mut DenseDataset, model: ModelKind) -> CliResult<usize> {
    let labels = data.labels_mut();
    match model {
        ModelKind::Glm => {
            labels.iter_mut().for_each(|y| *y = if *y > 0 { 1 } else { -1 });
            Ok(2)
        }
        ModelKind::Mlp { .. } => {
            let signed = labels.iter().all(|y| *y == 1 || *y == -1) && labels.contains(&-1);
            if signed {
                labels.iter_mut().for_each(|y| *y = (*y + 1) / 2);
            }
            if let Some(bad) = labels.iter().find(|y| **y < 0) {
                return Err(CliError::Check(format!("softmax labels must be >= 0, found {bad}")));
            }
            Ok(labels.iter().copied().max().unwrap_or(0).max(1) as usize + 1)
        }
    }
}

pub fn prepare(spec: &ExperimentSpec) -> CliResult<Prepared> {
    spec.check()?;
    let mut dense = load_source(&spec.data, spec.run.seed)?;
    let classes = relabel(&mut dense, spec.model)?;
    let (train, test) = if spec.folds >= 2 {
        let (a, b) = holdout_split(&dense, spec.folds, spec.fold, spec.run.seed)?;
        (a, Some(b))
    } else {
        (dense, None)
    };
    let dims = partition_features(train.dim(), spec.run.q)?;
    let models = match spec.model {
        ModelKind::Glm => Composite::logistic_glm(&dims),
        ModelKind::Mlp { hidden, out_dim } => Composite::mlp_softmax(&dims, hidden, out_dim, classes)?,
    };
    let models = if spec.black_box { models.into_black_box() } else { models };
    Ok(Prepared {
        train: PartitionedDataset::from_dense(&train, &dims)?,
        test: test.map(|t| PartitionedDataset::from_dense(&t, &dims)).transpose()?,
        models,
    })
}

fn write_file(path: &Path, body: &[u8]) -> CliResult<()> {
    fs::write(path, body).map_err(|e| CliError::io(path, e))
}

/// Creates `dir` and confirms files can be written there.
pub fn ensure_out_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let probe = dir.join(".write-probe");
    write_file(&probe, b"")?;
    fs::remove_file(&probe).map_err(|e| CliError::io(&probe, e))
}

/// Writes `metrics.csv`, `summary.csv` and, for runs with wire traffic,
/// `transcript.jsonl` under `spec.out`.
pub fn run_experiment(spec: &ExperimentSpec) -> CliResult<ExperimentOutput> {
    ensure_out_dir(&spec.out)?;
    let prep = prepare(spec)?;
    let metrics = run(&spec.run, &prep.train, prep.test.as_ref(), &prep.models)?;

    let metrics_csv = spec.out.join("metrics.csv");
    write_file(&metrics_csv, metrics.to_csv().as_bytes())?;
    let summary_line = metrics.summary_line();
    let summary = spec.out.join("summary.csv");
    write_file(&summary, format!("{SUMMARY_HEADER}\n{summary_line}\n").as_bytes())?;

    let transcript = match &metrics.transcript {
        Some(t) if spec.run.algorithm.is_federated() && t.is_recording() => {
            let path = spec.out.join("transcript.jsonl");
            let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
            let mut w = BufWriter::new(file);
            t.write_jsonl(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(&path, e))?;
            Some(path)
        }
        _ => None,
    };
    Ok(ExperimentOutput { metrics, metrics_csv, transcript, summary, summary_line })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_spec;

    #[test]
    fn relabeling() {
        let mut d = DenseDataset::new(1, vec![0.0; 3], vec![0, 1, 2]).unwrap();
        assert_eq!(relabel(&mut d.clone(), ModelKind::Glm).unwrap(), 2);
        assert_eq!(relabel(&mut d, ModelKind::Mlp { hidden: 2, out_dim: 1 }).unwrap(), 3);
        let mut d = DenseDataset::new(1, vec![0.0; 2], vec![-1, 1]).unwrap();
        relabel(&mut d, ModelKind::Mlp { hidden: 2, out_dim: 1 }).unwrap();
        assert_eq!(d.labels(), &[0, 1]);
        let mut d = DenseDataset::new(1, vec![0.0; 2], vec![0, 3]).unwrap();
        relabel(&mut d, ModelKind::Glm).unwrap();
        assert_eq!(d.labels(), &[-1, 1]);
    }

    #[test]
    fn prepare_splits_and_partitions() {
        let spec = parse_spec("q = 3\nn = 100\ndim = 10\n").unwrap();
        let p = prepare(&spec).unwrap();
        assert_eq!(p.train.n() + p.test.as_ref().unwrap().n(), 100);
        assert_eq!(p.train.block_dims().iter().sum::<usize>(), 10);
        assert_eq!(p.models.q(), 3);
        let spec = parse_spec("folds = 0\nn = 50\nmodel = mlp\nfamily = multiclass\nclasses = 3\nblack_box = true\n").unwrap();
        let p = prepare(&spec).unwrap();
        assert!(p.test.is_none() && p.models.is_black_box());
        assert_eq!(p.models.d0(), p.models.output_dims().iter().sum::<usize>() * 3);
    }
}
