use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn revelight(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_revelight")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = "q = 2\nhorizon = 600\neta = 0.01\nn = 80\ndim = 8\neval_every = 100\n";

#[test]
fn train_writes_valid_artifacts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "a.conf", SMALL);
    let out = tmp.path().join("run");
    let o = revelight(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next().unwrap(), "algorithm,seed,final_loss,final_acc,total_bytes,vtime");
    let line = lines.next().unwrap();
    assert!(line.starts_with("asyrevel_gau,0,"), "{line}");
    assert_eq!(line.split(',').count(), 6);
    assert!(stdout(&o).starts_with(line));

    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, revelight::engine::CSV_HEADER);
    let width = header.split(',').count();
    assert!(csv.lines().skip(1).all(|l| l.split(',').count() == width));
    assert_eq!(csv.lines().count(), 600 / 100 + 2);

    let jsonl = fs::read_to_string(out.join("transcript.jsonl")).unwrap();
    assert!(!jsonl.is_empty());
    for l in jsonl.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(v["variant"].is_string() && v["payload"].is_array());
    }

    let o = revelight(&["audit", "--config", &cfg, "--transcript", out.join("transcript.jsonl").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("clean"));
}

#[test]
fn nonfed_emits_no_transcript() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "n.conf", &format!("{SMALL}algorithm = nonfed\n"));
    let out = tmp.path().join("run");
    let o = revelight(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("metrics.csv").exists());
    assert!(!out.join("transcript.jsonl").exists());
}

#[test]
fn same_spec_and_seed_give_identical_metrics() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "a.conf", &format!("{SMALL}schedule = free\nstraggler = 1:1.4\njitter = 0.3\n"));
    let run = |name: &str, seed: &str| {
        let out = tmp.path().join(name);
        let o = revelight(&["train", "--config", &cfg, "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(out.join("metrics.csv")).unwrap()
    };
    let a = run("a", "3");
    assert_eq!(a, run("b", "3"));
    assert_ne!(a, run("c", "4"));
}

#[test]
fn tolerance_stop_ends_before_the_horizon() {
    let tmp = TempDir::new().unwrap();
    let body = "q = 8\nhorizon = 200000\nstop_tol = 5e-4\nfamily = noisy_logistic\nn = 2048\ndim = 128\nrecord_transcript = false\n";
    let cfg = write_config(tmp.path(), "d4.conf", body);
    let out = tmp.path().join("run");
    let o = revelight(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let last_t: u64 = csv.lines().last().unwrap().split(',').next().unwrap().parse().unwrap();
    assert!(last_t < 200_000, "ran to {last_t}");
}

#[test]
fn libsvm_and_csv_files_train() {
    let tmp = TempDir::new().unwrap();
    let mut svm = String::new();
    let mut csv = String::from("f1,f2,f3,f4,label\n");
    for i in 0..60 {
        let x = [(i % 7) as f64 / 7.0, (i % 5) as f64 / 5.0 - 0.5, (i % 3) as f64, 0.25];
        let y = if x[0] + x[1] > 0.4 { 1 } else { -1 };
        svm += &format!("{y} 1:{} 2:{} 3:{} 4:{}\n", x[0], x[1], x[2], x[3]);
        csv += &format!("{},{},{},{},{y}\n", x[0], x[1], x[2], x[3]);
    }
    fs::write(tmp.path().join("d.libsvm"), svm).unwrap();
    fs::write(tmp.path().join("d.csv"), csv).unwrap();
    for (file, extra) in [("d.libsvm", "dim = 4\n"), ("d.csv", "format = csv\n")] {
        let body = format!("q = 2\nhorizon = 200\ndataset = {}\n{extra}", tmp.path().join(file).display());
        let cfg = write_config(tmp.path(), "f.conf", &body);
        let out = tmp.path().join(format!("out-{file}"));
        let o = revelight(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{file}: {}", stderr(&o));
    }
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.conf", "q = 2\nwhat = 1\n");
    let o = revelight(&["train", "--config", &cfg, "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("revelight: error: config line 2"), "{err}");

    fs::write(tmp.path().join("bad.libsvm"), "1 1:1\n1 9:1\n").unwrap();
    let body = format!("dataset = {}\ndim = 4\n", tmp.path().join("bad.libsvm").display());
    let cfg = write_config(tmp.path(), "f.conf", &body);
    let o = revelight(&["train", "--config", &cfg, "--out", tmp.path().join("y").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let cfg = write_config(tmp.path(), "tig.conf", &format!("{SMALL}algorithm = tig\nblack_box = true\n"));
    let o = revelight(&["train", "--config", &cfg, "--out", tmp.path().join("z").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unsupported model"), "{}", stderr(&o));
}

#[test]
fn audit_flags_a_leaked_parameter_vector() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "a.conf", SMALL);
    let out = tmp.path().join("run");
    assert!(revelight(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let path = out.join("transcript.jsonl");
    let mut body = fs::read_to_string(&path).unwrap();
    body += "{\"time\":9.0,\"dir\":\"up\",\"variant\":\"refresh\",\"party\":0,\"sample\":1,\"seq\":0,\
             \"payload\":[0.1,0.2,0.3,0.4],\"bytes\":51}\n";
    fs::write(&path, body).unwrap();
    let o = revelight(&["audit", "--config", &cfg, "--transcript", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("check failed: audit"), "{}", stderr(&o));
}

#[test]
fn verify_bench_comm_and_speedup() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("v");
    let o = revelight(&[
        "verify", "--out", out.to_str().unwrap(), "--trials", "2", "--draws", "2000", "--unbiased-draws", "10000",
        "--instances", "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("verify.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "quantity,measured,bound,slack,pass");
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));

    let o = revelight(&["bench-comm", "--out", out.to_str().unwrap(), "--blocks", "16,64,256", "--events", "100"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("comm.csv")).unwrap().lines().count(), 4);

    let cfg = write_config(tmp.path(), "s.conf", "horizon = 2048\n");
    let o = revelight(&["speedup", "--config", &cfg, "--ideal", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<f64> = stdout(&o).lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(rows, vec![1.0, 2.0, 4.0, 8.0]);

    let o = revelight(&["speedup", "--config", &cfg, "--qs", "2,4", "--target", "0.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("q = 1"), "{}", stderr(&o));
}
