//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Pass criterion numbers as arguments to run a subset.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use revelight::engine::*;
use revelight::estimator::{client_block_zoe, sample_direction, Scheme, TwoPointValues};
use revelight::fedproto::{audit_transcript, AuditDims, Dir, Transcript, TranscriptEntry};
use revelight::models::synthetic::{holdout_split, Family, SyntheticSpec};
use revelight::models::*;
use revelight::rng::{Purpose, Streams};
use revelight::verify::*;
use revelight::Error;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// Audit results for every transcript produced by criteria 3-6.
#[derive(Default)]
struct AuditLog {
    checked: Vec<(String, Option<String>)>,
    spent: Duration,
}

impl AuditLog {
    fn check(&mut self, label: String, r: &RunMetrics, dims: &AuditDims) {
        let Some(t) = r.transcript.as_ref() else {
            self.checked.push((label, Some("no transcript recorded".into())));
            return;
        };
        let start = Instant::now();
        let verdict = audit_transcript(t, dims).err().map(|v| format!("entry {}: {}", v.entry, v.reason));
        self.spent += start.elapsed();
        self.checked.push((label, verdict));
    }
}

fn benchmark(n: usize, seed: u64) -> (PartitionedDataset, Composite) {
    let dense = SyntheticSpec::new(Family::Separable, n, 32, seed).generate().unwrap();
    let dims = partition_features(32, 4).unwrap();
    (PartitionedDataset::from_dense(&dense, &dims).unwrap(), Composite::logistic_glm(&dims))
}

fn criterion_1(_: &mut AuditLog) -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for scheme in [Scheme::Gaussian, Scheme::Sphere] {
        let (report, tally) = check_unbiasedness(scheme, 100_000, 50, 0.98, 1).unwrap();
        pass &= report.pass;
        details.push(format!(
            "{}: {}/{} coordinates within 3se, worst z {:.2}",
            scheme.name(),
            tally.within,
            tally.comparisons,
            tally.worst_z
        ));
    }
    Outcome::new(pass, details.join("; "))
}

fn criterion_2(_: &mut AuditLog) -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for scheme in [Scheme::Gaussian, Scheme::Sphere] {
        let reports = check_smoothing_bounds(scheme, 50, 10_000, 2).unwrap();
        let failed: Vec<&BoundReport> = reports.iter().filter(|r| !r.pass).collect();
        pass &= failed.is_empty();
        details.push(format!("{}: {}/{} reports pass", scheme.name(), reports.len() - failed.len(), reports.len()));
        if let Some(f) = failed.first() {
            details.push(format!("first failure {} measured {:e} bound {:e}", f.quantity, f.measured, f.bound));
        }
    }
    Outcome::new(pass, details.join("; "))
}

fn criterion_3(audit: &mut AuditLog) -> Outcome {
    let horizon = 50_000;
    let mut pass = true;
    let mut details = Vec::new();
    for alg in [Algorithm::AsyrevelGau, Algorithm::AsyrevelUni] {
        let mut slopes = Vec::new();
        for seed in 0..5u64 {
            let (data, models) = benchmark(512, 100 + seed);
            let mut cfg = RunConfig::new(alg, 4, horizon);
            cfg.seed = seed;
            cfg.tau = 4;
            cfg.trace_every = Some(250);
            let r = run_asyrevel(&cfg, &data, None, &models).unwrap();
            audit.check(format!("c3/{}/seed{seed}", alg.name()), &r, &AuditDims::of(&models));
            slopes.push(fit_convergence_rate(&r, &models, &data, cfg.lambda, horizon).unwrap().slope);
        }
        let good = slopes.iter().filter(|s| (-0.9..=-0.25).contains(*s)).count();
        pass &= good >= 4;
        let shown: Vec<String> = slopes.iter().map(|s| format!("{s:.3}")).collect();
        details.push(format!("{}: slopes [{}], {good}/5 in range", alg.name(), shown.join(", ")));
    }
    Outcome::new(pass, details.join("; "))
}

fn criterion_4(audit: &mut AuditLog) -> Outcome {
    let mut identical = 0;
    let (mut asy_sum, mut ind_sum) = (0.0, 0.0);
    for seed in 0..10u64 {
        let dense = SyntheticSpec::new(Family::Separable, 20_480, 32, 300 + seed).generate().unwrap();
        let (tr, te) = holdout_split(&dense, 10, 0, seed).unwrap();
        let dims = partition_features(32, 4).unwrap();
        let train = PartitionedDataset::from_dense(&tr, &dims).unwrap();
        let test = PartitionedDataset::from_dense(&te, &dims).unwrap();
        let models = Composite::logistic_glm(&dims);
        let mk = |alg, s| {
            let mut c = RunConfig::new(alg, 4, 200_000);
            c.seed = s;
            c.stop_loss = Some(0.2);
            c.eval_every = Some(256);
            c
        };
        let asy = run_asyrevel(&mk(Algorithm::AsyrevelGau, seed), &train, Some(&test), &models).unwrap();
        audit.check(format!("c4/seed{seed}"), &asy, &AuditDims::of(&models));
        let shared = run_nonfederated(&mk(Algorithm::Nonfed, seed), &train, Some(&test), &models).unwrap();
        let indep = run_nonfederated(&mk(Algorithm::Nonfed, seed + 1000), &train, Some(&test), &models).unwrap();
        if asy.final_acc == shared.final_acc {
            identical += 1;
        }
        asy_sum += asy.final_acc;
        ind_sum += indep.final_acc;
    }
    let (a, b) = (asy_sum / 10.0, ind_sum / 10.0);
    Outcome::new(
        identical == 10 && (a - b).abs() <= 0.005,
        format!("shared-stream identical {identical}/10; independent means {:.3}% vs {:.3}%", 100.0 * a, 100.0 * b),
    )
}

fn criterion_5(audit: &mut AuditLog) -> Outcome {
    let mut rows = Vec::new();
    let mut per_round = Vec::new();
    for d in [16usize, 64, 256, 1024] {
        let dense = SyntheticSpec::new(Family::Separable, 32, 2 * d, 15).generate().unwrap();
        let data = PartitionedDataset::from_dense(&dense, &[d, d]).unwrap();
        let models = Composite::logistic_glm(&[d, d]);
        let mut c = RunConfig::new(Algorithm::Tig, 2, 200);
        c.eta = 0.01;
        let tig = run_tig_baseline(&c, &data, None, &models).unwrap();
        c.algorithm = Algorithm::AsyrevelGau;
        let asy = run_asyrevel(&c, &data, None, &models).unwrap();
        audit.check(format!("c5/d{d}"), &asy, &AuditDims::of(&models));
        per_round.push((asy.total_bytes() - asy.warmup_bytes) as f64 / asy.events as f64);
        rows.extend(measure_comm(&[CommPair { label: format!("d{d}"), tig: &tig, asyrevel: &asy }], Link::default()).unwrap());
    }
    let constant = per_round.iter().all(|v| *v == per_round[0]);
    let above = rows.iter().all(|r| r.byte_ratio > 1.0);
    let monotone = rows.windows(2).all(|w| w[1].byte_ratio >= w[0].byte_ratio);
    let ratios: Vec<String> = rows.iter().map(|r| format!("{}={:.2}", r.label, r.byte_ratio)).collect();
    Outcome::new(
        constant && above && monotone,
        format!("AsyREVEL bytes/round {per_round:?}; TIG/AsyREVEL byte ratios {}", ratios.join(" ")),
    )
}

fn criterion_6(audit: &mut AuditLog) -> Outcome {
    let target = 0.45;
    let mut wins = 0;
    let mut shown = Vec::new();
    for seed in 0..5u64 {
        let (data, models) = benchmark(512, 200 + seed);
        let straggler = Some(Straggler { party: 3, factor: 1.4 });
        let mut a = RunConfig::new(Algorithm::AsyrevelGau, 4, 40_000);
        a.seed = seed;
        a.schedule = Schedule::Free;
        a.tau = u64::MAX / 2;
        a.straggler = straggler;
        a.eval_every = Some(64);
        a.stop_loss = Some(target);
        let ra = run_asyrevel(&a, &data, None, &models).unwrap();
        audit.check(format!("c6/seed{seed}"), &ra, &AuditDims::of(&models));
        let mut s = RunConfig::new(Algorithm::Synrevel, 4, 10_000);
        s.seed = seed;
        s.straggler = straggler;
        s.eval_every = Some(16);
        s.stop_loss = Some(target);
        let rs = run_synrevel(&s, &data, None, &models).unwrap();
        audit.check(format!("c6/sync/seed{seed}"), &rs, &AuditDims::of(&models));
        match (ra.time_to_loss(target), rs.time_to_loss(target)) {
            (Some(ta), Some(ts)) => {
                if ta < ts {
                    wins += 1;
                }
                shown.push(format!("{ta:.0}/{ts:.0}"));
            }
            (ta, ts) => shown.push(format!("{ta:?}/{ts:?}")),
        }
    }
    let times = ideal_schedule_times(&[1, 2, 4, 8], 4096, 7).unwrap();
    let speedup = compute_speedup(&times).unwrap();
    let ideal = [2usize, 4, 8].iter().all(|q| speedup[q] >= 0.9 * *q as f64);
    let sp: Vec<String> = speedup.iter().map(|(q, v)| format!("q{q}={v:.3}")).collect();
    Outcome::new(
        wins == 5 && ideal,
        format!("async/sync time to loss {target}: {} ({wins}/5 async faster); ideal speedup {}", shown.join(" "), sp.join(" ")),
    )
}

fn criterion_7(audit: &mut AuditLog) -> Outcome {
    let start = Instant::now();
    let clean = audit.checked.iter().filter(|(_, v)| v.is_none()).count();
    let covered = ["c3/", "c4/", "c5/", "c6/"].iter().all(|p| audit.checked.iter().any(|(l, _)| l.starts_with(p)));
    let first_bad = audit.checked.iter().find_map(|(l, v)| v.as_ref().map(|v| format!("{l}: {v}")));

    // a party leaking its 8 parameters in an upload must be caught
    let dense = SyntheticSpec::new(Family::Separable, 16, 16, 5).generate().unwrap();
    let data = PartitionedDataset::from_dense(&dense, &[8, 8]).unwrap();
    let models = Composite::logistic_glm(&[8, 8]);
    let mut c = RunConfig::new(Algorithm::AsyrevelGau, 2, 50);
    c.seed = 5;
    let r = run_asyrevel(&c, &data, None, &models).unwrap();
    let mut t: Transcript = r.transcript.clone().unwrap();
    let dims = AuditDims::of(&models);
    let base_ok = audit_transcript(&t, &dims).is_ok();
    let leak = r.final_state.blocks[0].clone();
    t.push_raw(TranscriptEntry {
        time: r.vtime,
        dir: Dir::Up,
        variant: "upload",
        party: 0,
        sample: 0,
        seq: 51,
        width: leak.len(),
        bytes: 19 + 8 * leak.len(),
        payload: leak,
    });
    let flagged = audit_transcript(&t, &dims).err();
    let spent = audit.spent + start.elapsed();
    let pass = covered && clean == audit.checked.len() && base_ok && flagged.is_some() && spent < Duration::from_secs(10);
    let mut detail = format!(
        "{clean}/{} transcripts clean, audit time {:.2}s; injected payload {}",
        audit.checked.len(),
        spent.as_secs_f64(),
        match &flagged {
            Some(v) => format!("flagged at entry {}", v.entry),
            None => "NOT flagged".into(),
        }
    );
    if !covered {
        detail += "; criteria 3-6 must run first";
    }
    if let Some(b) = first_bad {
        detail += &format!("; {b}");
    }
    Outcome::new(pass, detail)
}

fn criterion_8(_: &mut AuditLog) -> Outcome {
    let dense = SyntheticSpec::new(Family::Separable, 64, 6, 3).generate().unwrap();
    let data = PartitionedDataset::from_dense(&dense, &[6]).unwrap();
    let models = Composite::logistic_glm(&[6]);
    let mut oracle_ok = true;
    for scheme in [Scheme::Gaussian, Scheme::Sphere] {
        let alg = if scheme == Scheme::Gaussian { Algorithm::AsyrevelGau } else { Algorithm::AsyrevelUni };
        let mut c = RunConfig::new(alg, 1, 1000);
        c.eta = 0.01;
        c.seed = 17;
        let r = run_asyrevel(&c, &data, None, &models).unwrap();
        let streams = Streams::new(17);
        let model = LocalModel::linear(6);
        let mut w = models.init_state(&streams).blocks[0].clone();
        for k in 0..1000u64 {
            let i = streams.stream(Purpose::Sample, 0, k).random_range(0..data.n());
            let dir = sample_direction(scheme, 6, &mut streams.stream(Purpose::Direction, 0, k)).unwrap();
            let shifted: Vec<f64> = w.iter().zip(&dir.u).map(|(a, b)| a + c.mu * b).collect();
            let y = data.label(i);
            let h = GlobalModel::Logistic.value(&[], &model.forward(&w, data.x(0, i)).unwrap(), y).unwrap();
            let h_bar = GlobalModel::Logistic.value(&[], &model.forward(&shifted, data.x(0, i)).unwrap(), y).unwrap();
            let values = TwoPointValues { h, h_bar, reg: nonconvex_reg(&w), reg_perturbed: nonconvex_reg(&shifted) };
            let est = client_block_zoe(values, c.lambda, c.mu, &dir).unwrap();
            for (wi, gi) in w.iter_mut().zip(&est) {
                *wi -= c.eta * gi;
            }
        }
        oracle_ok &= r.final_state.blocks[0] == w;
    }

    let mut a = RunConfig::new(Algorithm::AsyrevelGau, 1, 1000);
    a.tau = 0;
    a.eta = 0.01;
    let mut s = RunConfig::new(Algorithm::Synrevel, 1, 1000);
    s.scheme = Scheme::Gaussian;
    s.eta = 0.01;
    let ra = run_asyrevel(&a, &data, None, &models).unwrap();
    let rs = run_synrevel(&s, &data, None, &models).unwrap();
    let sync_ok = ra.final_state == rs.final_state && ra.loss_series() == rs.loss_series();

    let (bench, bmodels) = benchmark(128, 8);
    let mut a = RunConfig::new(Algorithm::AsyrevelGau, 4, 1000);
    a.tau = 0;
    let ra = run_asyrevel(&a, &bench, None, &bmodels).unwrap();
    let rn = run_nonfederated(&RunConfig::new(Algorithm::Nonfed, 4, 1000), &bench, None, &bmodels).unwrap();
    let nonf_ok = ra.final_state == rn.final_state;
    Outcome::new(
        oracle_ok && sync_ok && nonf_ok,
        format!("q=1 vs ZOO-SGD bitwise {oracle_ok}; tau=0 vs SynREVEL (q=1) {sync_ok}; tau=0 vs NonF (q=4) {nonf_ok}"),
    )
}

fn criterion_9(_: &mut AuditLog) -> Outcome {
    let mut pass = true;
    let mut details = Vec::new();
    let dense = SyntheticSpec::new(Family::Multiclass { classes: 3 }, 256, 16, 9).generate().unwrap();
    let mc = PartitionedDataset::from_dense(&dense, &[8, 8]).unwrap();
    let (glm_data, glm) = benchmark(256, 9);
    let cases = [
        ("glm", glm.into_black_box(), &glm_data, 4usize, 0.01),
        ("mlp", Composite::mlp_softmax(&[8, 8], 8, 2, 3).unwrap().into_black_box(), &mc, 2usize, 1e-3),
    ];
    for (name, models, data, q, eta) in cases {
        let mut c = RunConfig::new(Algorithm::Tig, q, 100);
        c.eta = eta;
        let refused = matches!(run_tig_baseline(&c, data, None, &models), Err(Error::Unsupported(_)));
        c.algorithm = Algorithm::AsyrevelGau;
        c.horizon = 8000;
        c.eval_every = Some(500);
        let r = run_asyrevel(&c, data, None, &models).unwrap();
        let losses = r.loss_series();
        let half = losses.len() / 2;
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let decreasing = r.final_loss < r.initial_loss() && mean(&losses[half..]) < mean(&losses[..half]);
        pass &= refused && decreasing;
        details.push(format!("{name}: TIG refused {refused}, AsyREVEL loss {:.4} -> {:.4}", r.initial_loss(), r.final_loss));
    }
    Outcome::new(pass, details.join("; "))
}

type Criterion = (u32, &'static str, u64, fn(&mut AuditLog) -> Outcome);

const CRITERIA: [Criterion; 9] = [
    (1, "estimator unbiasedness", 120, criterion_1),
    (2, "smoothing bounds", 120, criterion_2),
    (3, "rate shape", 300, criterion_3),
    (4, "losslessness", 300, criterion_4),
    (5, "communication", 60, criterion_5),
    (6, "asynchrony", 180, criterion_6),
    (7, "privacy surface", 10, criterion_7),
    (8, "equivalence oracles", 60, criterion_8),
    (9, "TIG inapplicability", 60, criterion_9),
];

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut audit = AuditLog::default();
    let mut failed = 0;
    for (id, name, limit, run) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = run(&mut audit);
        let secs = start.elapsed().as_secs_f64();
        // criterion 7 times its own audits, not the runs that produced them
        let in_time = id == 7 || secs < limit as f64;
        let pass = outcome.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id} ({name}): {} [{secs:.1}s of {limit}s] {}",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail
        );
    }
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    } else {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    }
}
