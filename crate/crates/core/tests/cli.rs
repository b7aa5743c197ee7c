use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use phasemarket::io::{read_final_prices, read_json, RunMetadata};
use phasemarket::SimulationConfig;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phasemarket"))
        .args(args)
        .env_remove("PHASEMARKET_WORKERS")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const SMALL: [&str; 6] = ["--set", "n_traders=80", "--set", "n_stocks=20", "--steps", "8"];

fn simulate(dir: &Path, extra: &[&str]) -> RunMetadata {
    let out = dir.to_str().unwrap();
    let mut args = vec!["simulate", "--out", out];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    ok(&args);
    read_json(&dir.join("meta.json")).unwrap()
}

#[test]
fn simulate_is_deterministic_and_self_describing() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let ma = simulate(&a, &["--seed", "17", "--alpha", "60"]);
    simulate(&b, &["--seed", "17", "--alpha", "60"]);
    for f in ["final_prices.csv", "ledger.csv", "config.toml", "meta.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    assert_eq!(ma.seed, 17);
    assert_eq!(ma.config.alpha, 60.0);
    let echoed = SimulationConfig::from_file(&a.join("config.toml")).unwrap();
    assert_eq!(echoed, ma.config);
    let direct = phasemarket::run_simulation(&ma.config, 17).unwrap();
    let prices: Vec<u32> = read_final_prices(&a.join("final_prices.csv")).unwrap().into_iter().map(|r| r.0).collect();
    assert_eq!(prices, direct.final_prices());
}

#[test]
fn resolved_config_is_announced() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["simulate", "--out", dir.path().to_str().unwrap(), "--seed", "4"];
    args.extend_from_slice(&SMALL);
    let out = ok(&args);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("seed = 4"), "{err}");
    assert!(err.contains("n_traders = 80"), "{err}");
    assert!(out.stdout.is_empty());
}

#[test]
fn flags_beat_file_beat_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("model.toml");
    fs::write(&cfg_path, "alpha = 33.0\nbeta = 7.0\nn_traders = 50\nn_stocks = 10\nt_steps = 5\n").unwrap();
    let cfg = cfg_path.to_str().unwrap();

    let m = simulate(&dir.path().join("file"), &["--config", cfg]);
    assert_eq!((m.config.alpha, m.config.beta), (33.0, 7.0));
    assert_eq!(m.config.c_max, SimulationConfig::default().c_max);

    let m = simulate(&dir.path().join("set"), &["--config", cfg, "--set", "alpha=44"]);
    assert_eq!((m.config.alpha, m.config.beta), (44.0, 7.0));

    let m = simulate(&dir.path().join("flag"), &["--config", cfg, "--set", "alpha=44", "--alpha", "55"]);
    assert_eq!((m.config.alpha, m.config.beta), (55.0, 7.0));

    let m = simulate(&dir.path().join("none"), &[]);
    assert_eq!(m.config.alpha, SimulationConfig::default().alpha);
}

#[test]
fn errors_exit_nonzero_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();

    let out = cli(&["simulate", "--out", out_dir, "--set", "nonsense=1"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonsense"));

    let out = cli(&["simulate", "--out", out_dir, "--fs", "2.0"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("f_s"));

    let out = cli(&["simulate", "--out", out_dir, "--config", "/no/such/model.toml"]);
    assert_eq!(out.status.code(), Some(4));

    let out = cli(&["analyze", "--out", out_dir, "/no/such/histogram.csv"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/histogram.csv"));

    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let target = blocker.join("sub");
    let mut args = vec!["simulate", "--out", target.to_str().unwrap()];
    args.extend_from_slice(&SMALL);
    assert_eq!(cli(&args).status.code(), Some(5));
}

#[test]
fn ensemble_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let point = dir.path().join("point");
    let mut args = vec!["ensemble", "--out", point.to_str().unwrap(), "--sims", "8", "--batch-sets", "2", "--alpha", "60"];
    args.extend_from_slice(&SMALL);
    ok(&args);
    for f in ["histogram.csv", "decomposition.json", "chi.csv", "fits.json", "meta.json"] {
        assert!(point.join(f).exists(), "{f} missing");
    }
    let hist = fs::read(point.join("histogram.csv")).unwrap();
    args.extend_from_slice(&["--workers", "2"]);
    ok(&args);
    assert_eq!(fs::read(point.join("histogram.csv")).unwrap(), hist);

    let report = dir.path().join("report");
    ok(&["analyze", "--out", report.to_str().unwrap(), point.to_str().unwrap()]);
    assert!(report.join("decomposition.json").exists());
}

#[test]
fn chi_from_ledger_and_from_runs() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let meta = simulate(&run, &["--seed", "2", "--alpha", "40"]);
    let ledger = run.join("ledger.csv");
    let out = ok(&["chi", "--ledger", ledger.to_str().unwrap()]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("alpha,beta,f_s,f_b,chi,chi_err"));
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    let direct = phasemarket::run_simulation(&meta.config, 2).unwrap();
    let chi = phasemarket::observables::susceptibility_fast(&direct.ledgers, meta.config.n_stocks).unwrap();
    assert_eq!(row[0], 40.0);
    assert_eq!(row[4], chi.chi);

    let table = dir.path().join("chi.csv");
    let mut args = vec!["chi", "--alpha-grid", "30,50", "--sims", "3", "--out", table.to_str().unwrap()];
    args.extend_from_slice(&SMALL);
    ok(&args);
    let rows = phasemarket::io::read_chi(&table, 8, 20).unwrap();
    assert_eq!(rows.iter().map(|r| r.alpha).collect::<Vec<_>>(), vec![30.0, 50.0]);
}

#[test]
fn sweep_then_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let mut args = vec![
        "sweep", "--out", out.to_str().unwrap(), "--alpha-grid", "20:80:20", "--beta-grid", "10",
        "--sims", "4", "--batch-sets", "2", "--no-refine", "--workers", "1",
    ];
    args.extend_from_slice(&SMALL);
    ok(&args);
    assert!(out.join("phase_diagram.csv").exists());
    let rows = phasemarket::sweep::read_phase_diagram(&out.join("phase_diagram.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    ok(&["boundary", "--sweep", out.to_str().unwrap()]);
    assert!(out.join("boundaries.csv").exists());
}
