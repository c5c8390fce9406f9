use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use asym_ac::agent::checkpoint::load_checkpoint;

const SMALL: &str = r#"
env = "pendulum_swingup"
critic_hidden = [16, 16]
total_steps = 400
eval_interval = 200
eval_episodes = 1
batch_size = 16
warmup_steps = 100
"#;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asym-ac")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// A temp root holding `small.toml` and a provisioned validation buffer.
fn provisioned() -> (tempfile::TempDir, PathBuf, String) {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let root = tmp.path().join("out");
    let out = cli(&[
        "provision",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "1000",
        "--size",
        "100",
        "--out",
        root.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    (tmp, root, cfg.to_str().unwrap().to_string())
}

fn run_args<'a>(cfg: &'a str, root: &'a Path, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["run", "--config", cfg, "--out", root.to_str().unwrap()];
    v.extend_from_slice(extra);
    v
}

fn single_run_dir(root: &Path) -> PathBuf {
    let mut dirs: Vec<_> = fs::read_dir(root.join("runs")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1);
    dirs.pop().unwrap()
}

#[test]
fn run_writes_artifacts_and_refuses_rerun() {
    let (_tmp, root, cfg) = provisioned();
    let args = run_args(&cfg, &root, &["--env", "pendulum_swingup", "--actor-size", "xs", "--agg", "mean", "--seed", "0"]);
    let out = cli(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("xs/mean seed 0"));
    let dir = single_run_dir(&root);
    for f in ["config.toml", "log.jsonl", "diagnostics.jsonl", "checkpoint.bin"] {
        assert!(dir.join(f).exists(), "{f} missing");
    }
    assert!(dir.file_name().unwrap().to_string_lossy().ends_with("-seed0"));

    let again = cli(&args);
    assert_eq!(code(&again), 3);
    let mut forced = args.clone();
    forced.push("--force");
    assert_eq!(code(&cli(&forced)), 0);
}

#[test]
fn baseline_flags_name_r_min() {
    let (_tmp, root, cfg) = provisioned();
    let out = cli(&run_args(&cfg, &root, &["--agg", "min", "--actor-size", "r", "--seed", "3", "--no-diagnostics"]));
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("r/min seed 3"));
}

#[test]
fn exit_codes_for_bad_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("out");
    let r = root.to_str().unwrap();
    assert_eq!(code(&cli(&["run", "--env", "nope", "--out", r])), 1);
    assert_eq!(code(&cli(&["run", "--env", "pendulum_swingup", "--agg", "median", "--out", r])), 1);
    assert_eq!(code(&cli(&["run", "--env", "pendulum_swingup", "--bogus-flag", "--out", r])), 1);
    assert_eq!(code(&cli(&["run", "--env", "pendulum_swingup", "--data-source", "tandem:", "--out", r])), 1);
    // diagnostics on, no validation buffer provisioned
    let out = cli(&["run", "--env", "pendulum_swingup", "--steps", "10", "--out", r]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("validation buffer"));
    assert!(!root.join("runs").exists());
    assert_eq!(code(&cli(&["report", tmp.path().to_str().unwrap()])), 2);
    let junk = tmp.path().join("junk.bin");
    fs::write(&junk, b"definitely not a checkpoint").unwrap();
    assert_eq!(code(&cli(&["inspect", junk.to_str().unwrap()])), 2);
    assert_eq!(code(&cli(&["inspect", tmp.path().join("absent.bin").to_str().unwrap()])), 2);
}

#[test]
fn seed_collision_with_validation_is_a_config_error() {
    let (_tmp, root, cfg) = provisioned();
    assert_eq!(code(&cli(&run_args(&cfg, &root, &["--seed", "1000"]))), 1);
}

#[test]
fn tandem_and_switch_runs_from_provider_config() {
    let (tmp, root, cfg) = provisioned();
    let prov = tmp.path().join("provider.toml");
    fs::write(&prov, "env = \"pendulum_swingup\"\nactor_size = \"xs\"\nseed = 7\n").unwrap();
    let tandem = format!("tandem:{}", prov.display());
    let out = cli(&run_args(&cfg, &root, &["--actor-size", "xs", "--data-source", &tandem, "--seed", "1"]));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("xs/min<tandem:xs/min"));
    let switch = format!("switch:{}:0.5", prov.display());
    assert_eq!(code(&cli(&run_args(&cfg, &root, &["--data-source", &switch, "--seed", "2"]))), 0);

    fs::write(&prov, "env = \"cartpole_swingup\"\n").unwrap();
    assert_eq!(code(&cli(&run_args(&cfg, &root, &["--data-source", &tandem, "--seed", "4"]))), 1);
}

fn recomputed_norm(net: &asym_ac::nn::DenseNetwork) -> f64 {
    let mut sum = 0.0;
    for layer in net.layers() {
        for r in 0..layer.weight.rows() {
            for c in 0..layer.weight.cols() {
                sum += layer.weight[(r, c)] * layer.weight[(r, c)];
            }
        }
        for b in &layer.bias {
            sum += b * b;
        }
        if layer.norm == asym_ac::nn::norm::NormKind::LayerNorm {
            sum += layer.ln_gain.iter().chain(&layer.ln_shift).map(|x| x * x).sum::<f64>();
        }
    }
    sum.sqrt()
}

#[test]
fn inspect_reports_architecture() {
    let (_tmp, root, cfg) = provisioned();
    assert_eq!(code(&cli(&run_args(&cfg, &root, &["--actor-size", "xs", "--reg", "layernorm", "--seed", "0"]))), 0);
    let ckpt = single_run_dir(&root).join("checkpoint.bin");
    let out = cli(&["inspect", ckpt.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let (agent, _) = load_checkpoint(&ckpt).unwrap();
    assert!(text.contains("actor size       xs"));
    assert!(text.contains("aggregation      min"));
    assert!(text.contains("regularizers     layernorm"));
    assert!(text.contains("env steps        400"));
    let actor = text.lines().find(|l| l.starts_with("actor ") && l.contains("hidden")).unwrap();
    assert!(actor.contains("hidden [8, 8]"), "{actor}");
    let stats = agent.policy.net.parameter_stats();
    assert!(actor.contains(&format!("params {}", stats.count)));
    for (line, net) in [("actor ", &agent.policy.net), ("critic 1", &agent.critics.online[0])] {
        let l = text.lines().find(|l| l.starts_with(line) && l.contains("hidden")).unwrap();
        let printed: f64 = l.rsplit(' ').next().unwrap().parse().unwrap();
        assert!((printed - recomputed_norm(net)).abs() < 1e-9, "{line}: {printed}");
    }
}

const MANIFEST: &str = r#"
name = "mini"
[defaults]
env = "pendulum_swingup"
critic_hidden = [16, 16]
total_steps = 400
eval_interval = 200
eval_episodes = 1
batch_size = 16
warmup_steps = 100
[[run]]
seeds = [0, 1, 2]
"#;

fn read_tsv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split('\t').map(String::from).collect()).collect()
}

#[test]
fn baseline_only_study_report() {
    let (tmp, root, _) = provisioned();
    let manifest = tmp.path().join("study.toml");
    fs::write(&manifest, MANIFEST).unwrap();
    let out = cli(&["study", manifest.to_str().unwrap(), "--jobs", "3", "--out", root.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(root.join("results.jsonl")).unwrap().lines().count(), 3);

    let report = root.join("report");
    let final_rows = read_tsv(&report.join("final_performance.tsv"));
    assert_eq!(final_rows.len(), 1);
    assert_eq!(final_rows[0][1], "r/min");
    assert_eq!(final_rows[0][3], "3");

    for row in read_tsv(&report.join("relative_to_baseline.tsv")) {
        for cell in &row[3..] {
            assert!(cell == "0" || cell == "NA", "nonzero delta {cell}");
        }
    }

    let mut series = Vec::new();
    let mut stack = vec![report.join("timeseries")];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                series.push(p);
            }
        }
    }
    assert!(!series.is_empty());
    for f in &series {
        for row in read_tsv(f) {
            let v: Vec<f64> = row[1..].iter().map(|x| x.parse().unwrap()).collect();
            assert!(v[1] <= v[0] && v[0] <= v[2], "{}: {row:?}", f.display());
        }
    }

    let before: Vec<(PathBuf, Vec<u8>)> = {
        let mut all = series.clone();
        all.push(report.join("final_performance.tsv"));
        all.push(report.join("relative_to_baseline.tsv"));
        all.sort();
        all.into_iter().map(|p| {
            let b = fs::read(&p).unwrap();
            (p, b)
        }).collect()
    };
    assert_eq!(code(&cli(&["report", root.to_str().unwrap()])), 0);
    for (p, bytes) in &before {
        assert_eq!(&fs::read(p).unwrap(), bytes, "{} changed", p.display());
    }

    // rerunning the study reuses completed runs
    let again = cli(&["study", manifest.to_str().unwrap(), "--out", root.to_str().unwrap()]);
    assert_eq!(code(&again), 0);
    assert!(fs::read_to_string(root.join("results.jsonl")).unwrap().lines().all(|l| l.contains("\"reused\"")));
}
