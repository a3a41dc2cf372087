//! Flat `key = value` experiment files. `#` starts a comment. Every run
//! parameter has a key of the same name; the rest describe data, model and
//! output.

use std::collections::HashSet;
use std::path::PathBuf;
use std::str::FromStr;

use revelight::engine::{Activation, Algorithm, Clock, RunConfig, Schedule, Straggler};
use revelight::estimator::Scheme;
use revelight::models::synthetic::Family;

use crate::dataset::DataFormat;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// `seed: None` follows the run seed.
    Synthetic { family: Family, n: usize, dim: usize, seed: Option<u64>, signal: f64 },
    File { path: PathBuf, format: DataFormat, dim: Option<usize>, labels: Option<PathBuf> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    Glm,
    Mlp { hidden: usize, out_dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub run: RunConfig,
    pub data: DataSource,
    /// Hold out fold `fold` of `folds`; `folds < 2` trains on everything.
    pub folds: usize,
    pub fold: usize,
    pub model: ModelKind,
    pub black_box: bool,
    pub out: PathBuf,
}

impl ExperimentSpec {
    pub fn check(&self) -> CliResult<()> {
        self.run.validate()?;
        if self.run.stop_loss.is_some_and(|v| !v.is_finite()) {
            return Err(CliError::Config { line: 0, reason: "stop_loss must be finite".into() });
        }
        if self.folds >= 2 && self.fold >= self.folds {
            return Err(CliError::Config { line: 0, reason: format!("fold {} of {} does not exist", self.fold, self.folds) });
        }
        Ok(())
    }
}

const RUN_KEYS: [&str; 23] = [
    "algorithm",
    "q",
    "horizon",
    "eta",
    "eta_server",
    "mu",
    "lambda",
    "tau",
    "activation",
    "seed",
    "straggler",
    "clock",
    "schedule",
    "scheme",
    "eval_every",
    "trace_every",
    "stop_loss",
    "stop_tol",
    "base_compute",
    "latency",
    "jitter",
    "refresh_cost",
    "record_transcript",
];

const OTHER_KEYS: [&str; 16] = [
    "dataset", "format", "dim", "labels", "family", "classes", "n", "data_seed", "signal", "folds", "fold", "model",
    "hidden", "out_dim", "black_box", "out",
];

fn is_none(v: &str) -> bool {
    matches!(v, "none" | "")
}

fn num<T: FromStr>(line: usize, key: &str, v: &str) -> CliResult<T> {
    v.parse().map_err(|_| CliError::Config { line, reason: format!("`{key}` expects a number, got `{v}`") })
}

fn opt<T: FromStr>(line: usize, key: &str, v: &str) -> CliResult<Option<T>> {
    if is_none(v) {
        Ok(None)
    } else {
        num(line, key, v).map(Some)
    }
}

fn flag(line: usize, key: &str, v: &str) -> CliResult<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::Config { line, reason: format!("`{key}` expects true or false, got `{v}`") }),
    }
}

fn core<T>(line: usize, r: revelight::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::Config { line, reason: e.to_string() })
}

/// Splits into `(line number, key, value)` triples, rejecting duplicates.
pub fn parse_pairs(text: &str) -> CliResult<Vec<(usize, String, String)>> {
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(CliError::Config { line, reason: format!("expected `key = value`, got `{body}`") });
        };
        let key = key.trim().to_string();
        if !seen.insert(key.clone()) {
            return Err(CliError::Config { line, reason: format!("duplicate key `{key}`") });
        }
        pairs.push((line, key, value.trim().to_string()));
    }
    Ok(pairs)
}

pub fn parse_spec(text: &str) -> CliResult<ExperimentSpec> {
    let pairs = parse_pairs(text)?;
    let get = |name: &str| pairs.iter().find(|(_, k, _)| k == name).map(|(l, _, v)| (*l, v.as_str()));
    for (line, key, _) in &pairs {
        if !RUN_KEYS.contains(&key.as_str()) && !OTHER_KEYS.contains(&key.as_str()) {
            return Err(CliError::Config { line: *line, reason: format!("unknown key `{key}`") });
        }
    }

    let algorithm = match get("algorithm") {
        Some((l, v)) => core(l, Algorithm::from_str(v))?,
        None => Algorithm::AsyrevelGau,
    };
    let q = match get("q") {
        Some((l, v)) => num(l, "q", v)?,
        None => 4,
    };
    let horizon = match get("horizon") {
        Some((l, v)) => num(l, "horizon", v)?,
        None => 10_000,
    };
    let mut run = RunConfig::new(algorithm, q, horizon);
    for (line, key, v) in &pairs {
        let (l, v) = (*line, v.as_str());
        match key.as_str() {
            "eta" => run.eta = num(l, key, v)?,
            "eta_server" => run.eta_server = if v == "auto" { None } else { opt(l, key, v)? },
            "mu" => run.mu = num(l, key, v)?,
            "lambda" => run.lambda = num(l, key, v)?,
            "tau" => run.tau = if v == "inf" { u64::MAX / 2 } else { num(l, key, v)? },
            "activation" => {
                run.activation = match v {
                    "uniform" => Activation::Uniform,
                    "by_speed" => Activation::BySpeed,
                    list => Activation::Explicit(
                        list.split(',').map(|p| num(l, key, p.trim())).collect::<CliResult<Vec<f64>>>()?,
                    ),
                }
            }
            "seed" => run.seed = num(l, key, v)?,
            "straggler" => {
                run.straggler = if is_none(v) {
                    None
                } else {
                    let Some((p, f)) = v.split_once(':') else {
                        return Err(CliError::Config { line: l, reason: "straggler expects `party:factor`".into() });
                    };
                    Some(Straggler { party: num(l, key, p.trim())?, factor: num(l, key, f.trim())? })
                }
            }
            "clock" => run.clock = core(l, Clock::from_str(v))?,
            "schedule" => run.schedule = core(l, Schedule::from_str(v))?,
            "scheme" => run.scheme = core(l, Scheme::from_str(v))?,
            "eval_every" => run.eval_every = opt(l, key, v)?,
            "trace_every" => run.trace_every = opt(l, key, v)?,
            "stop_loss" => run.stop_loss = opt(l, key, v)?,
            "stop_tol" => run.stop_tol = opt(l, key, v)?,
            "base_compute" => run.base_compute = num(l, key, v)?,
            "latency" => run.latency = num(l, key, v)?,
            "jitter" => run.jitter = num(l, key, v)?,
            "refresh_cost" => run.refresh_cost = num(l, key, v)?,
            "record_transcript" => run.record_transcript = flag(l, key, v)?,
            _ => {}
        }
    }

    let data = match get("dataset") {
        None | Some((_, "synthetic")) => {
            let family = match get("family") {
                None | Some((_, "separable")) => Family::Separable,
                Some((_, "noisy_logistic")) => Family::NoisyLogistic,
                Some((l, "multiclass")) => Family::Multiclass {
                    classes: match get("classes") {
                        Some((l, v)) => num(l, "classes", v)?,
                        None => {
                            return Err(CliError::Config { line: l, reason: "multiclass needs `classes`".into() });
                        }
                    },
                },
                Some((l, other)) => return Err(CliError::Config { line: l, reason: format!("unknown family `{other}`") }),
            };
            DataSource::Synthetic {
                family,
                n: get("n").map(|(l, v)| num(l, "n", v)).transpose()?.unwrap_or(512),
                dim: get("dim").map(|(l, v)| num(l, "dim", v)).transpose()?.unwrap_or(32),
                seed: get("data_seed").map(|(l, v)| num(l, "data_seed", v)).transpose()?,
                signal: get("signal").map(|(l, v)| num(l, "signal", v)).transpose()?.unwrap_or(3.0),
            }
        }
        Some((l, path)) => DataSource::File {
            path: PathBuf::from(path),
            format: match get("format") {
                Some((l, v)) => DataFormat::from_str(v).map_err(|reason| CliError::Config { line: l, reason })?,
                None => DataFormat::guess(path).ok_or_else(|| CliError::Config {
                    line: l,
                    reason: format!("cannot tell the format of `{path}`; set `format`"),
                })?,
            },
            dim: get("dim").map(|(l, v)| num(l, "dim", v)).transpose()?,
            labels: get("labels").map(|(_, v)| PathBuf::from(v)),
        },
    };

    let model = match get("model") {
        None | Some((_, "glm")) => ModelKind::Glm,
        Some((_, "mlp")) => ModelKind::Mlp {
            hidden: get("hidden").map(|(l, v)| num(l, "hidden", v)).transpose()?.unwrap_or(16),
            out_dim: get("out_dim").map(|(l, v)| num(l, "out_dim", v)).transpose()?.unwrap_or(1),
        },
        Some((l, other)) => return Err(CliError::Config { line: l, reason: format!("unknown model `{other}`") }),
    };

    let spec = ExperimentSpec {
        run,
        data,
        folds: get("folds").map(|(l, v)| num(l, "folds", v)).transpose()?.unwrap_or(10),
        fold: get("fold").map(|(l, v)| num(l, "fold", v)).transpose()?.unwrap_or(0),
        model,
        black_box: get("black_box").map(|(l, v)| flag(l, "black_box", v)).transpose()?.unwrap_or(false),
        out: PathBuf::from(get("out").map_or("out", |(_, v)| v)),
    };
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_from_empty_file() {
        let s = parse_spec("# nothing\n\n").unwrap();
        assert_eq!(s.run, RunConfig::new(Algorithm::AsyrevelGau, 4, 10_000));
        assert_eq!(s.model, ModelKind::Glm);
        assert!(matches!(s.data, DataSource::Synthetic { n: 512, dim: 32, .. }));
        assert_eq!((s.folds, s.fold), (10, 0));
    }

    #[test]
    fn every_run_key_parses() {
        let text = "algorithm = synrevel\nq = 3\nhorizon = 77\neta = 0.5\neta_server = 0.1\nmu = 0.01\nlambda = 0\n\
                    tau = inf\nactivation = 0.2, 0.3, 0.5\nseed = 9\nstraggler = 2:1.4\nclock = wall\n\
                    schedule = free\nscheme = sphere\neval_every = 5\ntrace_every = none\nstop_loss = 0.3\n\
                    stop_tol = 5e-4\nbase_compute = 2\nlatency = 0.1\njitter = 0.2\nrefresh_cost = 0\n\
                    record_transcript = false # trailing comment\n";
        let r = parse_spec(text).unwrap().run;
        assert_eq!((r.algorithm, r.q, r.horizon), (Algorithm::Synrevel, 3, 77));
        assert_eq!((r.eta, r.eta_server, r.mu, r.lambda), (0.5, Some(0.1), 0.01, 0.0));
        assert_eq!(r.tau, u64::MAX / 2);
        assert_eq!(r.activation, Activation::Explicit(vec![0.2, 0.3, 0.5]));
        assert_eq!(r.straggler, Some(Straggler { party: 2, factor: 1.4 }));
        assert_eq!((r.clock, r.schedule, r.scheme), (Clock::Wall, Schedule::Free, Scheme::Sphere));
        assert_eq!((r.eval_every, r.trace_every, r.stop_loss, r.stop_tol), (Some(5), None, Some(0.3), Some(5e-4)));
        assert_eq!((r.base_compute, r.latency, r.jitter, r.refresh_cost), (2.0, 0.1, 0.2, 0.0));
        assert!(!r.record_transcript);
        assert_eq!(r.seed, 9);
        assert_eq!(RUN_KEYS.len(), 23);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_spec("q = 2\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, CliError::Config { line: 2, .. }), "{err}");
        let err = parse_spec("q = 2\nq = 3\n").unwrap_err();
        assert!(matches!(err, CliError::Config { line: 2, .. }));
        let err = parse_spec("\neta = fast\n").unwrap_err();
        assert!(matches!(err, CliError::Config { line: 2, .. }));
        let err = parse_spec("just words\n").unwrap_err();
        assert!(matches!(err, CliError::Config { line: 1, .. }));
        let err = parse_spec("algorithm = sgd\n").unwrap_err();
        assert!(err.to_string().contains("unknown algorithm"), "{err}");
    }

    #[test]
    fn data_and_model_keys() {
        let s = parse_spec("dataset = a9a.libsvm\ndim = 123\nmodel = mlp\nhidden = 8\nout_dim = 2\nblack_box = true\nfolds = 0\n").unwrap();
        assert_eq!(
            s.data,
            DataSource::File { path: "a9a.libsvm".into(), format: DataFormat::Libsvm, dim: Some(123), labels: None }
        );
        assert_eq!(s.model, ModelKind::Mlp { hidden: 8, out_dim: 2 });
        assert!(s.black_box);
        let s = parse_spec("family = multiclass\nclasses = 3\nn = 40\ndata_seed = 2\n").unwrap();
        assert!(matches!(s.data, DataSource::Synthetic { family: Family::Multiclass { classes: 3 }, n: 40, seed: Some(2), .. }));
    }

    #[test]
    fn check_rejects_bad_stop_and_fold() {
        let mut s = parse_spec("stop_loss = 0.1\n").unwrap();
        s.check().unwrap();
        s.run.stop_loss = Some(f64::NAN);
        assert!(s.check().is_err());
        assert!(parse_spec("fold = 10\n").unwrap().check().is_err());
        assert!(parse_spec("stop_tol = -1\n").unwrap().check().is_err());
    }
}
