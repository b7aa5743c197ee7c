use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use phasemarket::dynamics::{run_simulation_with, RecordOptions};
use phasemarket::fitting::{fit_power_law, PowerLawOptions};
use phasemarket::io::{self, RunMetadata};
use phasemarket::observables::{
    decompose, susceptibility_fast, DecomposeOptions, Sample, SusceptibilityRecord,
};
use phasemarket::sweep::{
    self, f0_points, run_or_load_point, BoundaryOptions, Grid, PointOptions, SweepSpec, WORKERS_ENV,
};
use phasemarket::{Error, Profile, SimulationConfig};

/// Order-book market simulator and phase-diagram toolkit.
#[derive(Parser)]
#[command(name = "phasemarket", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its prices, ledger and metadata.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
        /// Skip the trade ledger.
        #[arg(long)]
        no_ledger: bool,
    },
    /// Run an ensemble at one point: histogram, decomposition, χ.
    Ensemble {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
        /// Sample prices over steps FIRST:LAST instead of the final step.
        #[arg(long, value_name = "FIRST:LAST")]
        window: Option<String>,
    },
    /// Run a parameter sweep and write the phase-diagram tree.
    Sweep {
        /// Sweep manifest (TOML). Defaults apply when absent.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
        /// α grid as START:STOP:STEP or a comma list.
        #[arg(long)]
        alpha_grid: Option<String>,
        /// β grid as START:STOP:STEP or a comma list.
        #[arg(long)]
        beta_grid: Option<String>,
        /// f_s grid as START:STOP:STEP or a comma list.
        #[arg(long)]
        fs_grid: Option<String>,
        /// f_b grid as START:STOP:STEP or a comma list.
        #[arg(long)]
        fb_grid: Option<String>,
        /// Skip the refinement pass around each provisional α_c.
        #[arg(long)]
        no_refine: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decompose existing histograms and fit F0(α) across them.
    Analyze {
        /// Point directories or histogram CSV files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Price floor of bare histogram files.
        #[arg(long, default_value_t = 1)]
        floor: u32,
        /// Simulation count of bare histogram files.
        #[arg(long, default_value_t = 1000)]
        sims: usize,
        /// Fit without 1/σ² weights.
        #[arg(long)]
        unweighted: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// χ(α) table from existing ledgers or fresh ensembles.
    Chi {
        /// Ledger CSVs written by `simulate` (their meta.json is read too).
        #[arg(long = "ledger")]
        ledgers: Vec<PathBuf>,
        /// α grid for fresh runs, START:STOP:STEP or a comma list.
        #[arg(long)]
        alpha_grid: Option<String>,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Output CSV; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// α_c and α0 tables plus line fits from a finished sweep.
    Boundary {
        /// Sweep output directory.
        #[arg(long)]
        sweep: PathBuf,
        /// Fit without 1/σ² weights.
        #[arg(long)]
        unweighted: bool,
        /// Output directory; the sweep directory when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Default)]
struct ModelArgs {
    /// Configuration file (TOML) or `default`.
    #[arg(long)]
    config: Option<String>,
    /// Parameter preset applied before the file and flags.
    #[arg(long, value_enum)]
    profile: Option<Profile>,
    /// Override any configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    fs: Option<f64>,
    #[arg(long)]
    fb: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Simulations per point; the profile's default when absent.
    #[arg(long)]
    sims: Option<usize>,
    /// Worker threads; all cores when absent.
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
    /// Disjoint sets used for batch errors.
    #[arg(long, default_value_t = 10)]
    batch_sets: usize,
}

impl ModelArgs {
    /// Defaults, then profile, then file, then `--set`, then named flags.
    fn resolve(&self) -> Result<SimulationConfig, Error> {
        let mut cfg = self.profile.map(Profile::config).unwrap_or_default();
        if let Some(path) = self.config.as_deref().filter(|p| *p != "default") {
            let file = SimulationConfig::from_file(Path::new(path))?;
            cfg = match self.profile {
                Some(p) => SimulationConfig {
                    n_traders: p.config().n_traders,
                    n_stocks: p.config().n_stocks,
                    ..file
                },
                None => file,
            };
        }
        cfg.apply_overrides(&self.set)?;
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.fs {
            cfg.f_s = v;
        }
        if let Some(v) = self.fb {
            cfg.f_b = v;
        }
        if let Some(v) = self.steps {
            cfg.t_steps = v;
        }
        cfg.check()?;
        Ok(cfg)
    }

    fn sims(&self, run: &RunArgs) -> usize {
        run.sims
            .unwrap_or_else(|| self.profile.unwrap_or_default().sims_per_point())
    }
}

fn announce(cfg: &SimulationConfig) {
    eprintln!("# resolved configuration (seed = {})", cfg.seed);
    for line in cfg.to_toml_string().lines() {
        eprintln!("#   {line}");
    }
}

fn parse_grid(text: &str) -> Result<Grid, Error> {
    let bad = |reason: &str| Error::BadValue {
        key: "grid".into(),
        value: text.to_string(),
        reason: reason.to_string(),
    };
    let nums = |sep: char| -> Result<Vec<f64>, Error> {
        text.split(sep)
            .map(|t| t.trim().parse::<f64>().map_err(|_| bad("not a number")))
            .collect()
    };
    if text.contains(':') {
        let v = nums(':')?;
        match v[..] {
            [start, stop, step] if step > 0.0 && stop >= start => Ok(Grid::Range { start, stop, step }),
            _ => Err(bad("expected START:STOP:STEP with STEP > 0")),
        }
    } else {
        Ok(Grid::List(nums(',')?))
    }
}

fn parse_window(text: &str) -> Result<Sample, Error> {
    let bad = || Error::BadValue {
        key: "window".into(),
        value: text.to_string(),
        reason: "expected FIRST:LAST step indices".into(),
    };
    let (a, b) = text.split_once(':').ok_or_else(bad)?;
    let first = a.trim().parse().map_err(|_| bad())?;
    let last = b.trim().parse().map_err(|_| bad())?;
    Ok(Sample::Window { first, last })
}

fn simulate(model: &ModelArgs, out: &Path, no_ledger: bool) -> Result<(), Error> {
    let cfg = model.resolve()?;
    announce(&cfg);
    let record = RecordOptions {
        ledgers: !no_ledger,
        snapshots: false,
    };
    let result = run_simulation_with(&cfg, cfg.seed, record)?;
    io::ensure_dir(out)?;
    io::write_final_prices(&out.join("final_prices.csv"), &result)?;
    if !no_ledger {
        io::write_ledger(&out.join("ledger.csv"), &result.ledgers)?;
    }
    io::write_text(&out.join("config.toml"), &result.config.to_toml_string())?;
    io::write_json(&out.join("meta.json"), &RunMetadata::of(&result))?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn ensemble(model: &ModelArgs, run: &RunArgs, out: &Path, window: Option<&str>) -> Result<(), Error> {
    let cfg = model.resolve()?;
    announce(&cfg);
    let opts = PointOptions {
        sample: window.map(parse_window).transpose()?.unwrap_or_default(),
        batch_sets: run.batch_sets,
        ..Default::default()
    };
    let n = model.sims(run);
    eprintln!("running {n} simulations");
    let (p, fresh) = run_or_load_point(out, &cfg, n, cfg.seed, &opts, run.workers)?;
    if !fresh {
        eprintln!("{} is up to date", out.display());
    }
    let d = &p.decomposition;
    eprintln!(
        "split = {:.2}  F0 = {:.3} ± {:.3}  peak = {}",
        d.split_price,
        d.f0,
        d.f0_err,
        d.gaussian.map_or("none".to_string(), |g| format!("{:.2} (σ {:.2})", g.mean, g.sigma))
    );
    Ok(())
}

fn sweep_cmd(
    manifest: Option<&Path>,
    model: &ModelArgs,
    run: &RunArgs,
    grids: [Option<&str>; 4],
    no_refine: bool,
    out: Option<&Path>,
) -> Result<(), Error> {
    let mut spec = match manifest {
        Some(p) => SweepSpec::from_file(p)?,
        None => SweepSpec::default(),
    };
    if let Some(p) = model.profile {
        spec.model.n_traders = p.config().n_traders;
        spec.model.n_stocks = p.config().n_stocks;
        if manifest.is_none() {
            spec.n_sims_per_point = p.sims_per_point();
        }
    }
    if let Some(path) = model.config.as_deref().filter(|p| *p != "default") {
        spec.model = SimulationConfig::from_file(Path::new(path))?;
    }
    spec.model.apply_overrides(&model.set)?;
    if let Some(v) = model.seed {
        spec.base_seed = v;
    }
    if let Some(v) = model.steps {
        spec.model.t_steps = v;
    }
    if let Some(v) = run.sims {
        spec.n_sims_per_point = v;
    }
    spec.point.batch_sets = run.batch_sets;
    let [a, b, fs, fb] = grids;
    if let Some(g) = a.map(parse_grid).transpose()? {
        spec.alpha_grid = g;
    }
    if let Some(g) = b.map(parse_grid).transpose()? {
        spec.beta_grid = g;
    }
    if let Some(g) = fs.map(parse_grid).transpose()? {
        spec.f_s_grid = g;
    }
    if let Some(g) = fb.map(parse_grid).transpose()? {
        spec.f_b_grid = g;
    }
    if no_refine {
        spec.refine = false;
    }
    if let Some(o) = out {
        spec.outputs = o.to_path_buf();
    }
    spec.check()?;
    spec.model.seed = spec.base_seed;
    announce(&spec.model);
    eprintln!(
        "# {} grid points, {} simulations each, output {}",
        spec.configs().len(),
        spec.n_sims_per_point,
        spec.outputs.display()
    );
    let outcome = sweep::run_sweep(&spec, run.workers, |msg| eprintln!("{msg}"))?;
    for b in &outcome.boundaries {
        eprintln!(
            "beta = {} f_s = {} f_b = {}: alpha_c = {:.3} ± {:.3}, gamma = {:.3}, alpha0 = {}",
            b.beta,
            b.f_s,
            b.f_b,
            b.alpha_c,
            b.d_alpha_c,
            b.fit.gamma,
            b.alpha0.map_or("none".into(), |a| a.to_string())
        );
    }
    for (beta, f, e) in &outcome.boundary_errors {
        eprintln!("beta = {beta} f = {f}: {e}");
    }
    eprintln!("{} points computed, {} total", outcome.computed, outcome.points.len());
    Ok(())
}

fn analyze(inputs: &[PathBuf], floor: u32, sims: usize, unweighted: bool, out: &Path) -> Result<(), Error> {
    io::ensure_dir(out)?;
    let mut rows = Vec::new();
    for input in inputs {
        let (hist, alpha, label) = if input.is_dir() {
            let p = sweep::load_point(input)?;
            let name = input.file_name().map_or("point".into(), |n| n.to_string_lossy().into_owned());
            (p.histogram, Some(p.config.alpha), name)
        } else {
            let h = io::read_histogram(input, floor, sims, 1)?;
            let name = input
                .parent()
                .and_then(|d| d.file_name())
                .map_or("histogram".into(), |n| n.to_string_lossy().into_owned());
            (h, None, name)
        };
        let d = decompose(&hist, &DecomposeOptions::default())?;
        let target = if inputs.len() == 1 { out.to_path_buf() } else { out.join(&label) };
        io::ensure_dir(&target)?;
        io::write_json(&target.join("decomposition.json"), &d)?;
        eprintln!("{label}: F0 = {:.3} ± {:.3}", d.f0, d.f0_err);
        if let Some(a) = alpha {
            rows.push((a, d));
        }
    }
    if rows.len() >= 4 {
        rows.sort_by(|x, y| x.0.total_cmp(&y.0));
        let pts: Vec<_> = rows
            .iter()
            .map(|(a, d)| phasemarket::fitting::PowerLawPoint {
                alpha: *a,
                f0: d.f0,
                sigma: d.f0_err,
            })
            .collect();
        let opts = PowerLawOptions {
            weighted: !unweighted,
            ..Default::default()
        };
        let fit = fit_power_law(&pts, &opts)?;
        io::write_json(&out.join("fits.json"), &fit)?;
        let curve: Vec<(f64, f64)> = pts.iter().map(|p| (p.alpha, fit.eval(p.alpha))).collect();
        io::write_curve(&out.join("power_law_curve.csv"), ("alpha", "f0"), &curve)?;
        eprintln!(
            "G0 = {:.4} ± {:.4}  alpha_c = {:.4} ± {:.4}  gamma = {:.4} ± {:.4}",
            fit.g0, fit.g0_err, fit.alpha_c, fit.alpha_c_err, fit.gamma, fit.gamma_err
        );
    }
    Ok(())
}

fn chi(ledgers: &[PathBuf], grid: Option<&str>, model: &ModelArgs, run: &RunArgs, out: Option<&Path>) -> Result<(), Error> {
    let mut records = Vec::new();
    if !ledgers.is_empty() {
        for path in ledgers {
            let meta_path = path.with_file_name("meta.json");
            let meta: RunMetadata = io::read_json(&meta_path)?;
            let l = io::read_ledger(path, &meta.config)?;
            let s = susceptibility_fast(&l, meta.config.n_stocks)?;
            records.push(SusceptibilityRecord::from_values(&meta.config, &[s.chi]));
        }
    } else {
        let base = model.resolve()?;
        announce(&base);
        let alphas = match grid {
            Some(g) => parse_grid(g)?.values(),
            None => vec![base.alpha],
        };
        let opts = PointOptions {
            batch_sets: 0,
            ..Default::default()
        };
        let n = model.sims(run);
        for a in alphas {
            let cfg = SimulationConfig { alpha: a, ..base.clone() };
            let p = sweep::run_point(&cfg, n, base.seed, &opts, run.workers)?;
            let rec = p.chi.ok_or(Error::PerTraderLedger)?;
            eprintln!("alpha = {a}: chi = {:.5} ± {:.5}", rec.chi, rec.chi_err);
            records.push(rec);
        }
    }
    match out {
        Some(path) => io::write_chi(path, &records),
        None => {
            let mut w = std::io::stdout().lock();
            let mut text = String::from("alpha,beta,f_s,f_b,chi,chi_err\n");
            for r in &records {
                text.push_str(&format!("{},{},{},{},{},{}\n", r.alpha, r.beta, r.f_s, r.f_b, r.chi, r.chi_err));
            }
            w.write_all(text.as_bytes()).map_err(|e| Error::Write {
                path: "<stdout>".into(),
                source: e,
            })
        }
    }
}

fn boundary(sweep_dir: &Path, unweighted: bool, out: Option<&Path>) -> Result<(), Error> {
    let points = sweep::load_sweep_points(sweep_dir)?;
    if points.is_empty() {
        return Err(Error::Empty("sweep has no points"));
    }
    let spec = SweepSpec::from_file(&sweep_dir.join("sweep.toml"))?;
    let mut opts: BoundaryOptions = spec.boundary;
    opts.power_law.weighted = !unweighted;
    let out = out.unwrap_or(sweep_dir);
    io::ensure_dir(out)?;
    let mut table = String::from("beta,f_s,f_b,alpha_c,d_alpha_c,alpha0,g0,gamma,gamma_err,n_points,error\n");
    let mut ok = Vec::new();
    for (beta, f_s, f_b, est) in sweep::boundaries_from_points(&points, &opts) {
        match est {
            Ok(b) => {
                table.push_str(&format!(
                    "{beta},{f_s},{f_b},{},{},{},{},{},{},{},\n",
                    b.alpha_c,
                    b.d_alpha_c,
                    b.alpha0.map_or(String::new(), |a| a.to_string()),
                    b.fit.g0,
                    b.fit.gamma,
                    b.fit.gamma_err,
                    b.fit.n_points
                ));
                ok.push(b);
            }
            Err(e) => table.push_str(&format!("{beta},{f_s},{f_b},,,,,,,,{}\n", e.to_string().replace(',', ";"))),
        }
    }
    io::write_text(&out.join("boundaries.csv"), &table)?;
    let lines = sweep::boundary_lines(&ok, &spec);
    io::write_json(&out.join("lines.json"), &lines)?;
    for b in &ok {
        let line: Vec<_> = points
            .iter()
            .filter(|p| p.config.beta == b.beta && p.config.f_s == b.f_s && p.config.f_b == b.f_b)
            .collect();
        let mut pts = f0_points(&line);
        pts.sort_by(|x, y| x.alpha.total_cmp(&y.alpha));
        let curve: Vec<(f64, f64)> = pts.iter().map(|p| (p.alpha, b.fit.eval(p.alpha))).collect();
        let name = format!("power_law_b{}_fs{}_fb{}.csv", b.beta, b.f_s, b.f_b);
        io::write_curve(&out.join(name), ("alpha", "f0"), &curve)?;
    }
    eprint!("{table}");
    Ok(())
}

/// Exit status for each failure class.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::UnknownKey(_) | Error::BadValue { .. } | Error::InvalidSweep(_) => 3,
        Error::Io { .. } | Error::Corrupt { .. } | Error::MissingSnapshots => 4,
        Error::Write { .. } => 5,
        Error::InsufficientPoints { .. }
        | Error::NoPositiveRegion
        | Error::NotConverged(_)
        | Error::Degenerate(_)
        | Error::UnequalSets
        | Error::BoundaryOutsideGrid
        | Error::Empty(_)
        | Error::MixedConfig
        | Error::PerTraderLedger => 6,
        Error::Simulation { source, .. } => exit_code(source),
        Error::NotHeld { .. } | Error::WorkerPool(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { model, out, no_ledger } => simulate(model, out, *no_ledger),
        Command::Ensemble { model, run, out, window } => ensemble(model, run, out, window.as_deref()),
        Command::Sweep {
            manifest,
            model,
            run,
            alpha_grid,
            beta_grid,
            fs_grid,
            fb_grid,
            no_refine,
            out,
        } => sweep_cmd(
            manifest.as_deref(),
            model,
            run,
            [alpha_grid.as_deref(), beta_grid.as_deref(), fs_grid.as_deref(), fb_grid.as_deref()],
            *no_refine,
            out.as_deref(),
        ),
        Command::Analyze {
            inputs,
            floor,
            sims,
            unweighted,
            out,
        } => analyze(inputs, *floor, *sims, *unweighted, out),
        Command::Chi {
            ledgers,
            alpha_grid,
            model,
            run,
            out,
        } => chi(ledgers, alpha_grid.as_deref(), model, run, out.as_deref()),
        Command::Boundary { sweep, unweighted, out } => boundary(sweep, *unweighted, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
