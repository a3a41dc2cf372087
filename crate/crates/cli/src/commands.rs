//! One function per subcommand. Each returns the text to print, or an error
//! when a requested check fails.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use revelight::engine::{measure_comm, run, run_asyrevel, run_tig_baseline, Algorithm, CommPair, Link, RunConfig};
use revelight::estimator::Scheme;
use revelight::fedproto::{audit_transcript, AuditDims, Transcript};
use revelight::models::synthetic::{Family, SyntheticSpec};
use revelight::models::{Composite, PartitionedDataset};
use revelight::verify::{
    check_smoothing_bounds, check_unbiasedness, compute_speedup, fit_convergence_rate, ideal_schedule_times,
    reports_to_csv, reports_to_text, BoundReport,
};

use crate::config::{parse_spec, DataSource, ExperimentSpec};
use crate::dataset::DataFormat;
use crate::error::{CliError, CliResult};
use crate::experiment::{ensure_out_dir, prepare, run_experiment};

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Common {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<DataFormat>,
}

impl Common {
    /// Reads the config (or defaults) and applies the flag overrides.
    pub fn spec(&self) -> CliResult<ExperimentSpec> {
        let text = match &self.config {
            Some(p) => fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
            None => String::new(),
        };
        let mut spec = parse_spec(&text)?;
        if let Some(seed) = self.seed {
            spec.run.seed = seed;
        }
        if let Some(out) = &self.out {
            spec.out = out.clone();
        }
        if let (Some(f), DataSource::File { format, .. }) = (self.format, &mut spec.data) {
            *format = f;
        }
        Ok(spec)
    }

    fn out_dir(&self, spec: &ExperimentSpec) -> CliResult<PathBuf> {
        ensure_out_dir(&spec.out)?;
        Ok(spec.out.clone())
    }
}

fn write(path: &Path, body: &str) -> CliResult<()> {
    fs::write(path, body).map_err(|e| CliError::io(path, e))
}

pub fn train(common: &Common) -> CliResult<String> {
    let spec = common.spec()?;
    let out = run_experiment(&spec)?;
    let mut text = format!("{}\n", out.summary_line);
    let _ = writeln!(text, "metrics: {}", out.metrics_csv.display());
    if let Some(t) = &out.transcript {
        let _ = writeln!(text, "transcript: {}", t.display());
    }
    Ok(text)
}

#[derive(Debug, Clone)]
pub struct VerifyArgs {
    pub trials: usize,
    pub draws: usize,
    pub unbiased_draws: usize,
    pub instances: usize,
    /// Also fit the convergence rate of the configured run.
    pub rate: bool,
}

impl Default for VerifyArgs {
    fn default() -> Self {
        Self { trials: 50, draws: 10_000, unbiased_draws: 100_000, instances: 50, rate: false }
    }
}

/// Lemma checks for both schemes, plus an optional rate fit; writes
/// `verify.csv` and `verify.txt`.
pub fn verify(common: &Common, args: &VerifyArgs) -> CliResult<String> {
    let spec = common.spec()?;
    let seed = spec.run.seed;
    let mut reports: Vec<BoundReport> = Vec::new();
    for scheme in [Scheme::Gaussian, Scheme::Sphere] {
        reports.extend(check_smoothing_bounds(scheme, args.trials, args.draws, seed)?);
        reports.push(check_unbiasedness(scheme, args.unbiased_draws, args.instances, 0.98, seed)?.0);
    }
    if args.rate {
        let mut run_cfg = spec.run.clone();
        run_cfg.trace_every.get_or_insert((run_cfg.horizon / 200).max(1));
        run_cfg.record_transcript = false;
        let prep = prepare(&spec)?;
        let metrics = run(&run_cfg, &prep.train, None, &prep.models)?;
        let fit = fit_convergence_rate(&metrics, &prep.models, &prep.train, run_cfg.lambda, run_cfg.horizon)?;
        reports.push(BoundReport::new("rate_slope_upper", fit.slope, -0.25, 0.0));
        reports.push(BoundReport::new("rate_slope_lower", -fit.slope, 0.9, 0.0));
    }
    let dir = common.out_dir(&spec)?;
    write(&dir.join("verify.csv"), &reports_to_csv(&reports))?;
    let table = reports_to_text(&reports);
    write(&dir.join("verify.txt"), &table)?;
    let failed: Vec<&BoundReport> = reports.iter().filter(|r| !r.pass).collect();
    if let Some(first) = failed.first() {
        return Err(CliError::Check(format!(
            "{} of {} verification reports failed, first {} ({:e} > {:e} + {:e})",
            failed.len(),
            reports.len(),
            first.quantity,
            first.measured,
            first.bound,
            first.slack
        )));
    }
    Ok(table.lines().last().unwrap_or("").to_string() + "\n")
}

#[derive(Debug, Clone)]
pub struct CommArgs {
    pub blocks: Vec<usize>,
    pub events: u64,
    pub parties: usize,
}

impl Default for CommArgs {
    fn default() -> Self {
        Self { blocks: vec![16, 64, 256, 1024], events: 200, parties: 2 }
    }
}

/// TIG against AsyREVEL on linear parties of each block size; writes
/// `comm.csv`. Fails unless every ratio exceeds 1 and they never decrease.
pub fn bench_comm(common: &Common, args: &CommArgs) -> CliResult<String> {
    let spec = common.spec()?;
    if args.blocks.is_empty() || args.parties == 0 {
        return Err(CliError::Core(revelight::Error::Usage("need at least one block size and one party".into())));
    }
    let mut rows = Vec::new();
    for &d in &args.blocks {
        let dims = vec![d; args.parties];
        let dense = SyntheticSpec::new(Family::Separable, 32, d * args.parties, spec.run.seed).generate()?;
        let data = PartitionedDataset::from_dense(&dense, &dims)?;
        let models = Composite::logistic_glm(&dims);
        let mut cfg = RunConfig::new(Algorithm::Tig, args.parties, args.events);
        cfg.seed = spec.run.seed;
        cfg.eta = spec.run.eta;
        cfg.record_transcript = false;
        let tig = run_tig_baseline(&cfg, &data, None, &models)?;
        cfg.algorithm = Algorithm::AsyrevelGau;
        let asy = run_asyrevel(&cfg, &data, None, &models)?;
        rows.extend(measure_comm(&[CommPair { label: format!("d{d}"), tig: &tig, asyrevel: &asy }], Link::default())?);
    }
    let mut csv = String::from("label,tig_bytes,asyrevel_bytes,byte_ratio,time_ratio\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{},{}", r.label, r.tig_bytes, r.asyrevel_bytes, r.byte_ratio, r.time_ratio);
    }
    write(&common.out_dir(&spec)?.join("comm.csv"), &csv)?;
    if let Some(r) = rows.iter().find(|r| r.byte_ratio <= 1.0) {
        return Err(CliError::Check(format!("byte ratio {} at {} is not above 1", r.byte_ratio, r.label)));
    }
    if let Some(w) = rows.windows(2).find(|w| w[1].byte_ratio < w[0].byte_ratio) {
        return Err(CliError::Check(format!("byte ratio drops from {} to {}", w[0].label, w[1].label)));
    }
    Ok(csv)
}

#[derive(Debug, Clone)]
pub struct SpeedupArgs {
    pub qs: Vec<usize>,
    /// Target training loss; the config's `stop_loss` when absent.
    pub target: Option<f64>,
    /// Time a fixed number of ideal-schedule events instead.
    pub ideal: bool,
}

impl Default for SpeedupArgs {
    fn default() -> Self {
        Self { qs: vec![1, 2, 4, 8], target: None, ideal: false }
    }
}

/// Time to target for each party count; writes `speedup.csv`.
pub fn speedup(common: &Common, args: &SpeedupArgs) -> CliResult<String> {
    let spec = common.spec()?;
    if !args.qs.contains(&1) {
        return Err(CliError::Core(revelight::Error::Usage("speedup needs q = 1 as the baseline".into())));
    }
    let times: BTreeMap<usize, f64> = if args.ideal {
        ideal_schedule_times(&args.qs, spec.run.horizon, spec.run.seed)?
    } else {
        let target = args.target.or(spec.run.stop_loss).ok_or_else(|| {
            CliError::Core(revelight::Error::Usage("speedup needs --target or stop_loss in the config".into()))
        })?;
        let mut times = BTreeMap::new();
        for &q in &args.qs {
            let mut s = spec.clone();
            s.run.q = q;
            s.run.stop_loss = Some(target);
            s.run.record_transcript = false;
            if let Some(st) = s.run.straggler {
                if st.party >= q {
                    s.run.straggler = None;
                }
            }
            let prep = prepare(&s)?;
            let m = run(&s.run, &prep.train, None, &prep.models)?;
            let t = m
                .time_to_loss(target)
                .ok_or_else(|| CliError::Check(format!("q = {q} never reached loss {target} within {} steps", s.run.horizon)))?;
            times.insert(q, t);
        }
        times
    };
    let speed = compute_speedup(&times)?;
    let mut csv = String::from("q,time,speedup\n");
    for (q, t) in &times {
        let _ = writeln!(csv, "{q},{t},{}", speed[q]);
    }
    write(&common.out_dir(&spec)?.join("speedup.csv"), &csv)?;
    Ok(csv)
}

/// Audits a JSON-Lines transcript against the configured model's shapes.
pub fn audit(common: &Common, transcript: &Path) -> CliResult<String> {
    let spec = common.spec()?;
    let prep = prepare(&spec)?;
    let file = fs::File::open(transcript).map_err(|e| CliError::io(transcript, e))?;
    let t = Transcript::read_jsonl(BufReader::new(file))?;
    match audit_transcript(&t, &AuditDims::of(&prep.models)) {
        Ok(()) => Ok(format!("audit: {} entries clean\n", t.len())),
        Err(v) => Err(CliError::Check(format!("audit: entry {}: {}", v.entry, v.reason))),
    }
}
