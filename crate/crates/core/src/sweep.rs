//! Ensembles, parameter grids, phase classification and the on-disk
//! result tree.
//!
//! A sweep writes one directory per `(α, β, f_s, f_b)` point:
//!
//! ```text
//! points/a50_b10_fs0_fb0/
//!     histogram.csv  decomposition.json  chi.csv  fits.json  phase.json  meta.json
//! phase_diagram.csv  boundaries.json  lines.json  sweep.toml
//! ```
//!
//! `meta.json` is written last and carries a key over everything that
//! determines the point's numbers, so an interrupted sweep resumes where it
//! stopped and a finished point is never recomputed.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ScheduleMode, SimulationConfig};
use crate::dynamics::{run_simulation_observed, run_simulation_with, RecordOptions, SimulationResult};
use crate::error::{Error, Result};
use crate::fitting::{
    batch_error, detect_crossover, fit_line, fit_polynomial, fit_power_law, BatchStats,
    BoundaryFit, LinePoint, PolynomialFit, PowerLawFit, PowerLawOptions, PowerLawPoint,
};
use crate::io;
use crate::observables::{
    decompose, DecomposeOptions, PriceHistogram, Sample, SubDistributionDecomposition,
    SusceptibilityAccumulator, SusceptibilityRecord,
};
use crate::rng::derive_seed;

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "PHASEMARKET_WORKERS";

fn with_pool<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(job()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map(|pool| pool.install(job))
            .map_err(|e| Error::WorkerPool(e.to_string())),
    }
}

fn tag(index: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Simulation {
        index,
        source: Box::new(e),
    }
}

/// Runs `n_sims` simulations; member `k` uses `derive_seed(base_seed, k)`.
/// Results come back in index order.
pub fn run_ensemble(config: &SimulationConfig, n_sims: usize, base_seed: u64) -> Result<Vec<SimulationResult>> {
    run_ensemble_with(config, n_sims, base_seed, RecordOptions::default(), None)
}

/// [`run_ensemble`] with explicit recording and worker count (`None` uses
/// the global pool).
pub fn run_ensemble_with(
    config: &SimulationConfig,
    n_sims: usize,
    base_seed: u64,
    record: RecordOptions,
    workers: Option<usize>,
) -> Result<Vec<SimulationResult>> {
    if n_sims == 0 {
        return Err(Error::Empty("ensemble of zero simulations"));
    }
    config.check()?;
    with_pool(workers, || {
        (0..n_sims)
            .into_par_iter()
            .map(|k| run_simulation_with(config, derive_seed(base_seed, k as u64), record).map_err(tag(k)))
            .collect()
    })?
}

/// How a point's ensemble is run and reduced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointOptions {
    pub sample: Sample,
    /// Number of disjoint simulation sets for batch errors.
    pub batch_sets: usize,
    /// Accumulate the susceptibility (half-cycle schedules only).
    pub chi: bool,
    pub decompose: DecomposeOptions,
}

impl Default for PointOptions {
    fn default() -> Self {
        PointOptions {
            sample: Sample::FinalStep,
            batch_sets: 10,
            chi: true,
            decompose: DecomposeOptions::default(),
        }
    }
}

/// Plateau height of one batch set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetEstimate {
    pub f0: f64,
    pub f0_err: f64,
}

/// Reduced ensemble at one parameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    /// Configuration with `seed` set to the ensemble's base seed.
    pub config: SimulationConfig,
    pub n_sims: usize,
    pub options: PointOptions,
    pub histogram: PriceHistogram,
    pub decomposition: SubDistributionDecomposition,
    pub sets: Vec<SetEstimate>,
    pub chi: Option<SusceptibilityRecord>,
    /// Mean number of trades in the final step.
    pub final_trades: f64,
    pub key: String,
}

impl PointResult {
    pub fn alpha(&self) -> f64 {
        self.config.alpha
    }

    pub fn gauss_mean(&self) -> Option<f64> {
        self.decomposition.gaussian.map(|g| g.mean)
    }
}

/// Identity of a point's numbers: configuration, base seed, ensemble size
/// and reduction options.
pub fn point_key(config: &SimulationConfig, n_sims: usize, base_seed: u64, opts: &PointOptions) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        config: &'a SimulationConfig,
        n_sims: usize,
        base_seed: u64,
        options: &'a PointOptions,
    }
    let json = serde_json::to_string(&Key {
        config: &config.model_key(),
        n_sims,
        base_seed,
        options: opts,
    })
    .expect("key serializes");
    Sha256::digest(json.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

struct SimSummary {
    hist: PriceHistogram,
    chi: Option<f64>,
    final_trades: usize,
}

fn summarize_one(config: &SimulationConfig, seed: u64, opts: &PointOptions) -> Result<SimSummary> {
    let mut hist = PriceHistogram::new(config.price_floor);
    let want_chi = opts.chi && config.schedule_mode == ScheduleMode::HalfCycle;
    let mut chi = want_chi.then(|| SusceptibilityAccumulator::new(config.n_stocks));
    let mut chi_err = None;
    let window = match opts.sample {
        Sample::FinalStep => None,
        Sample::Window { first, last } => {
            if first > last || last >= config.t_steps {
                return Err(Error::BadValue {
                    key: "window".into(),
                    value: format!("{first}..={last}"),
                    reason: format!("outside the {} steps", config.t_steps),
                });
            }
            hist.snapshots = last - first + 1;
            Some((first, last))
        }
    };
    let result = run_simulation_observed(config, seed, RecordOptions::PRICES_ONLY, |market, ledger| {
        if let Some(acc) = chi.as_mut() {
            if let Err(e) = acc.push(ledger) {
                chi_err.get_or_insert(e);
            }
        }
        if let Some((first, last)) = window {
            let t = ledger.step as usize;
            if (first..=last).contains(&t) {
                hist.add_prices(market.stocks().iter().map(|s| s.price));
            }
        }
    })?;
    if let Some(e) = chi_err {
        return Err(e);
    }
    if window.is_none() {
        hist.add_prices(result.final_stocks.iter().map(|s| s.price));
    }
    hist.n_sims = 1;
    let final_trades = result
        .activity
        .last()
        .map_or(0, |a| (a.buys + a.sells) as usize);
    Ok(SimSummary {
        hist,
        chi: chi.map(|a| a.finish().chi),
        final_trades,
    })
}

/// Runs and reduces the ensemble at one point without keeping ledgers.
pub fn run_point(
    config: &SimulationConfig,
    n_sims: usize,
    base_seed: u64,
    opts: &PointOptions,
    workers: Option<usize>,
) -> Result<PointResult> {
    if n_sims == 0 {
        return Err(Error::Empty("ensemble of zero simulations"));
    }
    config.check()?;
    let summaries: Vec<SimSummary> = with_pool(workers, || {
        (0..n_sims)
            .into_par_iter()
            .map(|k| summarize_one(config, derive_seed(base_seed, k as u64), opts).map_err(tag(k)))
            .collect::<Result<Vec<_>>>()
    })??;
    reduce_point(config, base_seed, opts, summaries)
}

fn reduce_point(
    config: &SimulationConfig,
    base_seed: u64,
    opts: &PointOptions,
    summaries: Vec<SimSummary>,
) -> Result<PointResult> {
    let n_sims = summaries.len();
    let snapshots = summaries[0].hist.snapshots;
    let mut histogram = PriceHistogram::new(config.price_floor);
    histogram.snapshots = snapshots;
    for s in &summaries {
        histogram.merge(&s.hist)?;
    }
    let decomposition = decompose(&histogram, &opts.decompose)?;

    let mut sets = Vec::new();
    let per_set = if opts.batch_sets >= 2 { n_sims / opts.batch_sets } else { 0 };
    if per_set >= 1 {
        for chunk in summaries.chunks(per_set).take(opts.batch_sets) {
            let mut h = PriceHistogram::new(config.price_floor);
            h.snapshots = snapshots;
            for s in chunk {
                h.merge(&s.hist)?;
            }
            let d = decompose(&h, &opts.decompose)?;
            sets.push(SetEstimate {
                f0: d.f0,
                f0_err: d.f0_err,
            });
        }
    }

    let chi_values: Vec<f64> = summaries.iter().filter_map(|s| s.chi).collect();
    let chi = (chi_values.len() == n_sims).then(|| SusceptibilityRecord::from_values(config, &chi_values));
    let final_trades =
        summaries.iter().map(|s| s.final_trades as f64).sum::<f64>() / n_sims as f64;
    let config = SimulationConfig {
        seed: base_seed,
        ..config.clone()
    };
    Ok(PointResult {
        key: point_key(&config, n_sims, base_seed, opts),
        config,
        n_sims,
        options: *opts,
        histogram,
        decomposition,
        sets,
        chi,
        final_trades,
    })
}

/// Phase of a classified point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhaseLabel {
    I,
    II,
    III,
    #[serde(rename = "unresolved")]
    Unresolved,
}

impl fmt::Display for PhaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhaseLabel::I => "I",
            PhaseLabel::II => "II",
            PhaseLabel::III => "III",
            PhaseLabel::Unresolved => "unresolved",
        })
    }
}

/// Classification thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Plateau height separating phase I from the others, per 1000 sims.
    pub theta_i: f64,
    /// Peak-position slope (ticks per unit α) above which the peak moves.
    pub slope: f64,
    /// Gaussian width (ticks) from which a peak counts as broad.
    pub broad_sigma: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            theta_i: 0.0,
            slope: 0.05,
            broad_sigma: 10.0,
        }
    }
}

impl Thresholds {
    /// θ_I at 5% of a reference plateau taken deep in phase II.
    pub fn from_reference(f0_ref: f64) -> Self {
        Thresholds {
            theta_i: 0.05 * f0_ref,
            ..Default::default()
        }
    }
}

/// Peak positions at the grid neighbours of a point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Neighbors {
    pub lower: Option<(f64, f64)>,
    pub upper: Option<(f64, f64)>,
}

/// Labels one point from its decomposition and neighbouring peak positions.
pub fn classify_point(
    decomp: &SubDistributionDecomposition,
    alpha: f64,
    neighbors: &Neighbors,
    th: &Thresholds,
) -> PhaseLabel {
    let broad = decomp.gaussian.filter(|g| g.sigma >= th.broad_sigma);
    if decomp.f0 < th.theta_i {
        return if broad.is_none() { PhaseLabel::I } else { PhaseLabel::Unresolved };
    }
    let Some(g) = decomp.gaussian else {
        return PhaseLabel::Unresolved;
    };
    let here = (alpha, g.mean);
    let slope = match (neighbors.lower, neighbors.upper) {
        (Some(l), Some(u)) => (u.1 - l.1) / (u.0 - l.0),
        (Some(l), None) => (here.1 - l.1) / (here.0 - l.0),
        (None, Some(u)) => (u.1 - here.1) / (u.0 - here.0),
        (None, None) => return PhaseLabel::Unresolved,
    };
    if !slope.is_finite() {
        PhaseLabel::Unresolved
    } else if slope > th.slope {
        PhaseLabel::II
    } else if slope.abs() <= th.slope {
        PhaseLabel::III
    } else {
        PhaseLabel::Unresolved
    }
}

/// α_c and α0 along one `(β, f)` line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEstimate {
    pub beta: f64,
    pub f_s: f64,
    pub f_b: f64,
    pub alpha_c: f64,
    pub d_alpha_c: f64,
    /// Power-law fit to the full-ensemble plateau heights.
    pub fit: PowerLawFit,
    /// Spread of α_c over batch sets; absent when fewer than two sets fit.
    pub batch: Option<BatchStats>,
    pub alpha0: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundaryOptions {
    pub power_law: PowerLawOptions,
    /// Slope below which the peak counts as stalled.
    pub crossover_slope: f64,
    /// Consecutive stalled intervals that mark the crossover.
    pub crossover_run: usize,
}

impl Default for BoundaryOptions {
    fn default() -> Self {
        BoundaryOptions {
            power_law: PowerLawOptions::default(),
            crossover_slope: 0.05,
            crossover_run: 3,
        }
    }
}

/// Order-parameter samples of `points` (sorted by α).
pub fn f0_points(points: &[&PointResult]) -> Vec<PowerLawPoint> {
    points
        .iter()
        .map(|p| PowerLawPoint {
            alpha: p.alpha(),
            f0: p.decomposition.f0,
            sigma: p.decomposition.f0_err,
        })
        .collect()
}

/// Locates α_c (batch power-law pipeline) and the II–III crossover α0
/// along points that share β and f.
pub fn phase_boundary(points: &[&PointResult], opts: &BoundaryOptions) -> Result<BoundaryEstimate> {
    let first = points.first().ok_or(Error::Empty("no points on the line"))?;
    let mut sorted: Vec<&PointResult> = points.to_vec();
    sorted.sort_by(|a, b| a.alpha().total_cmp(&b.alpha()));

    let fit = fit_power_law(&f0_points(&sorted), &opts.power_law).map_err(|e| match e {
        Error::NoPositiveRegion => Error::BoundaryOutsideGrid,
        e => e,
    })?;

    let n_sets = sorted.iter().map(|p| p.sets.len()).min().unwrap_or(0);
    let set_points: Vec<Vec<PowerLawPoint>> = (0..n_sets)
        .map(|k| {
            sorted
                .iter()
                .map(|p| PowerLawPoint {
                    alpha: p.alpha(),
                    f0: p.sets[k].f0,
                    sigma: p.sets[k].f0_err,
                })
                .collect()
        })
        .collect();
    let batch = batch_error(&set_points, |pts| {
        fit_power_law(pts, &opts.power_law).map(|f| f.alpha_c)
    })
    .ok();
    let (alpha_c, d_alpha_c) = match &batch {
        Some(b) => (b.mean, b.std),
        None => (fit.alpha_c, fit.alpha_c_err),
    };

    let peaks: Vec<(f64, f64)> = sorted
        .iter()
        .filter_map(|p| p.gauss_mean().map(|m| (p.alpha(), m)))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = peaks.into_iter().unzip();
    let alpha0 = detect_crossover(&xs, &ys, opts.crossover_slope, opts.crossover_run);

    Ok(BoundaryEstimate {
        beta: first.config.beta,
        f_s: first.config.f_s,
        f_b: first.config.f_b,
        alpha_c,
        d_alpha_c,
        fit,
        batch,
        alpha0,
    })
}

/// List of values or an inclusive arithmetic range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Grid::List(v) => v.clone(),
            Grid::Range { start, stop, step } => {
                if step.is_nan() || *step <= 0.0 || stop < start {
                    return Vec::new();
                }
                let n = ((stop - start) / step + 1e-9).floor() as usize;
                (0..=n).map(|k| round6(start + k as f64 * step)).collect()
            }
        }
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// A parameter sweep as read from its TOML manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub alpha_grid: Grid,
    pub beta_grid: Grid,
    pub f_s_grid: Grid,
    pub f_b_grid: Grid,
    pub n_sims_per_point: usize,
    pub base_seed: u64,
    pub outputs: PathBuf,
    /// Add α points at step 0.5 within ±6 of each provisional α_c.
    pub refine: bool,
    /// Plateau height of the phase-II reference; measured at
    /// `(α, β) = (100, 100)` when absent.
    pub reference_f0: Option<f64>,
    pub model: SimulationConfig,
    pub point: PointOptions,
    pub thresholds: Thresholds,
    pub boundary: BoundaryOptions,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            alpha_grid: Grid::Range { start: 10.0, stop: 100.0, step: 2.0 },
            beta_grid: Grid::Range { start: 10.0, stop: 100.0, step: 10.0 },
            f_s_grid: Grid::List(vec![0.0]),
            f_b_grid: Grid::List(vec![0.0]),
            n_sims_per_point: 1000,
            base_seed: 1,
            outputs: PathBuf::from("sweep-out"),
            refine: true,
            reference_f0: None,
            model: SimulationConfig::default(),
            point: PointOptions::default(),
            thresholds: Thresholds::default(),
            boundary: BoundaryOptions::default(),
        }
    }
}

fn nontrivial(v: &[f64]) -> bool {
    v.len() > 1 || v.iter().any(|&x| x != 0.0)
}

impl SweepSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: SweepSpec = toml::from_str(text).map_err(|e| Error::InvalidSweep(e.message().to_string()))?;
        spec.check()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("sweep spec is representable as TOML")
    }

    pub fn check(&self) -> Result<()> {
        for (name, g) in [
            ("alpha_grid", &self.alpha_grid),
            ("beta_grid", &self.beta_grid),
            ("f_s_grid", &self.f_s_grid),
            ("f_b_grid", &self.f_b_grid),
        ] {
            if g.values().is_empty() {
                return Err(Error::InvalidSweep(format!("{name} is empty")));
            }
        }
        if nontrivial(&self.f_s_grid.values()) && nontrivial(&self.f_b_grid.values()) {
            return Err(Error::InvalidSweep(
                "f_s_grid and f_b_grid cannot both vary in one sweep".into(),
            ));
        }
        if self.n_sims_per_point == 0 {
            return Err(Error::InvalidSweep("n_sims_per_point must be positive".into()));
        }
        self.model.check()
    }

    /// The stochastic fraction that varies in this sweep.
    pub fn f_of(&self, config: &SimulationConfig) -> f64 {
        if nontrivial(&self.f_b_grid.values()) {
            config.f_b
        } else {
            config.f_s
        }
    }

    fn config_at(&self, alpha: f64, beta: f64, f_s: f64, f_b: f64) -> SimulationConfig {
        SimulationConfig {
            alpha,
            beta,
            f_s,
            f_b,
            ..self.model.clone()
        }
    }

    /// Every grid configuration, β-major then f then α.
    pub fn configs(&self) -> Vec<SimulationConfig> {
        let mut out = Vec::new();
        for &beta in &self.beta_grid.values() {
            for &f_s in &self.f_s_grid.values() {
                for &f_b in &self.f_b_grid.values() {
                    for &alpha in &self.alpha_grid.values() {
                        out.push(self.config_at(alpha, beta, f_s, f_b));
                    }
                }
            }
        }
        out
    }
}

/// Directory name of a point.
pub fn point_dir_name(c: &SimulationConfig) -> String {
    format!("a{}_b{}_fs{}_fb{}", c.alpha, c.beta, c.f_s, c.f_b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PointMeta {
    key: String,
    config: SimulationConfig,
    config_digest: String,
    n_sims: usize,
    base_seed: u64,
    options: PointOptions,
    price_floor: u32,
    snapshots: usize,
    final_trades: f64,
    version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PointFits {
    gaussian: Option<crate::fitting::GaussianFit>,
    sets: Vec<SetEstimate>,
}

/// Classified point as written to `phase.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub alpha: f64,
    pub beta: f64,
    pub f_s: f64,
    pub f_b: f64,
    pub f0: f64,
    pub f0_err: f64,
    pub gauss_mean: Option<f64>,
    pub gauss_mean_err: Option<f64>,
    pub chi: Option<f64>,
    pub label: PhaseLabel,
    pub theta_i: f64,
}

/// Writes a point's files; `meta.json` goes last.
pub fn persist_point(dir: &Path, p: &PointResult) -> Result<()> {
    io::ensure_dir(dir)?;
    io::write_histogram(&dir.join("histogram.csv"), &p.histogram)?;
    io::write_json(&dir.join("decomposition.json"), &p.decomposition)?;
    io::write_chi(&dir.join("chi.csv"), p.chi.as_slice())?;
    io::write_json(
        &dir.join("fits.json"),
        &PointFits {
            gaussian: p.decomposition.gaussian,
            sets: p.sets.clone(),
        },
    )?;
    io::write_json(
        &dir.join("meta.json"),
        &PointMeta {
            key: p.key.clone(),
            config: p.config.clone(),
            config_digest: p.config.digest(),
            n_sims: p.n_sims,
            base_seed: p.config.seed,
            options: p.options,
            price_floor: p.histogram.price_floor,
            snapshots: p.histogram.snapshots,
            final_trades: p.final_trades,
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
    )
}

/// Key stored in a point directory, if its `meta.json` exists.
pub fn stored_key(dir: &Path) -> Result<Option<String>> {
    let path = dir.join("meta.json");
    if !path.exists() {
        return Ok(None);
    }
    let meta: PointMeta = io::read_json(&path)?;
    Ok(Some(meta.key))
}

/// Reads a point directory written by [`persist_point`].
pub fn load_point(dir: &Path) -> Result<PointResult> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such directory"),
        ));
    }
    let meta: PointMeta = io::read_json(&dir.join("meta.json"))?;
    let histogram = io::read_histogram(
        &dir.join("histogram.csv"),
        meta.price_floor,
        meta.n_sims,
        meta.snapshots,
    )?;
    let decomposition: SubDistributionDecomposition = io::read_json(&dir.join("decomposition.json"))?;
    let fits: PointFits = io::read_json(&dir.join("fits.json"))?;
    let chi_path = dir.join("chi.csv");
    let mut chi = io::read_chi(&chi_path, meta.config.t_steps, meta.config.n_stocks)?;
    if chi.len() > 1 {
        return Err(Error::corrupt(&chi_path, "expected at most one row"));
    }
    let expect = point_key(&meta.config, meta.n_sims, meta.base_seed, &meta.options);
    if expect != meta.key {
        return Err(Error::corrupt(dir.join("meta.json"), "key does not match contents"));
    }
    Ok(PointResult {
        config: meta.config,
        n_sims: meta.n_sims,
        options: meta.options,
        histogram,
        decomposition,
        sets: fits.sets,
        chi: chi.pop(),
        final_trades: meta.final_trades,
        key: meta.key,
    })
}

/// Loads the point in `dir` when its key matches, otherwise runs and
/// persists it. The flag reports whether anything was computed.
pub fn run_or_load_point(
    dir: &Path,
    config: &SimulationConfig,
    n_sims: usize,
    base_seed: u64,
    opts: &PointOptions,
    workers: Option<usize>,
) -> Result<(PointResult, bool)> {
    let key = point_key(config, n_sims, base_seed, opts);
    if stored_key(dir)?.as_deref() == Some(key.as_str()) {
        return Ok((load_point(dir)?, false));
    }
    let p = run_point(config, n_sims, base_seed, opts, workers)?;
    persist_point(dir, &p)?;
    Ok((p, true))
}

/// One row of `phase_diagram.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub alpha: f64,
    pub beta: f64,
    pub f: f64,
    pub label: PhaseLabel,
    pub alpha_c: Option<f64>,
    pub d_alpha_c: Option<f64>,
    pub alpha0: Option<f64>,
}

pub fn write_phase_diagram(path: &Path, rows: &[PhaseRow]) -> Result<()> {
    io::write_csv_rows(path, rows)
}

pub fn read_phase_diagram(path: &Path) -> Result<Vec<PhaseRow>> {
    io::read_csv_rows(path)
}

/// Boundary lines at one stochastic fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSummary {
    pub f: f64,
    /// `β = m α + c` through the I–II boundary points.
    pub transition: Option<BoundaryFit>,
    /// α0 as a polynomial in β (ascending coefficients).
    pub crossover: Option<PolynomialFit>,
    pub notes: Vec<String>,
}

/// Everything a sweep produced.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub points: Vec<PointResult>,
    pub phases: Vec<PhasePoint>,
    pub boundaries: Vec<BoundaryEstimate>,
    pub boundary_errors: Vec<(f64, f64, String)>,
    pub lines: Vec<LineSummary>,
    pub reference_f0: f64,
    pub computed: usize,
}

/// Key of a `(β, f)` line; f64 keys compared bitwise.
fn line_key(c: &SimulationConfig) -> (u64, u64, u64) {
    (c.beta.to_bits(), c.f_s.to_bits(), c.f_b.to_bits())
}

/// Runs (or resumes) a sweep and writes its whole output tree.
pub fn run_sweep(
    spec: &SweepSpec,
    workers: Option<usize>,
    mut progress: impl FnMut(&str),
) -> Result<SweepOutcome> {
    spec.check()?;
    let root = &spec.outputs;
    io::ensure_dir(&root.join("points"))?;
    io::write_text(&root.join("sweep.toml"), &spec.to_toml_string())?;

    let mut computed = 0;
    let mut results: BTreeMap<String, PointResult> = BTreeMap::new();
    let mut run = |cfg: &SimulationConfig, results: &mut BTreeMap<String, PointResult>| -> Result<()> {
        let name = point_dir_name(cfg);
        if results.contains_key(&name) {
            return Ok(());
        }
        let dir = root.join("points").join(&name);
        let (p, fresh) =
            run_or_load_point(&dir, cfg, spec.n_sims_per_point, spec.base_seed, &spec.point, workers)?;
        if fresh {
            computed += 1;
        }
        progress(&format!(
            "{} {name}: F0 = {:.3} ± {:.3}",
            if fresh { "ran   " } else { "loaded" },
            p.decomposition.f0,
            p.decomposition.f0_err
        ));
        results.insert(name, p);
        Ok(())
    };

    let grid = spec.configs();
    for cfg in &grid {
        run(cfg, &mut results)?;
    }

    if spec.refine {
        let mut extra = Vec::new();
        for line in lines_of(&results) {
            if let Ok(fit) = fit_power_law(&f0_points(&line), &spec.boundary.power_law) {
                let base = line[0].config.clone();
                let centre = (fit.alpha_c * 2.0).round() / 2.0;
                for k in -12..=12 {
                    let alpha = centre + 0.5 * k as f64;
                    if alpha > 0.0 {
                        extra.push(SimulationConfig { alpha, ..base.clone() });
                    }
                }
            }
        }
        for cfg in &extra {
            run(cfg, &mut results)?;
        }
    }

    let reference_f0 = match spec.reference_f0 {
        Some(v) => v,
        None => {
            let cfg = spec.config_at(100.0, 100.0, 0.0, 0.0);
            run(&cfg, &mut results)?;
            results[&point_dir_name(&cfg)].decomposition.f0
        }
    };
    let th = Thresholds {
        theta_i: if spec.thresholds.theta_i > 0.0 {
            spec.thresholds.theta_i
        } else {
            0.05 * reference_f0
        },
        ..spec.thresholds
    };

    let mut phases = Vec::new();
    let mut boundaries = Vec::new();
    let mut boundary_errors = Vec::new();
    let mut rows = Vec::new();
    for line in lines_of(&results) {
        let est = phase_boundary(&line, &spec.boundary);
        match &est {
            Ok(b) => boundaries.push(b.clone()),
            Err(e) => boundary_errors.push((line[0].config.beta, spec.f_of(&line[0].config), e.to_string())),
        }
        for (i, p) in line.iter().enumerate() {
            let peak = |q: &PointResult| q.gauss_mean().map(|m| (q.alpha(), m));
            let nb = Neighbors {
                lower: i.checked_sub(1).and_then(|j| peak(line[j])),
                upper: line.get(i + 1).and_then(|q| peak(q)),
            };
            let label = classify_point(&p.decomposition, p.alpha(), &nb, &th);
            let pp = PhasePoint {
                alpha: p.alpha(),
                beta: p.config.beta,
                f_s: p.config.f_s,
                f_b: p.config.f_b,
                f0: p.decomposition.f0,
                f0_err: p.decomposition.f0_err,
                gauss_mean: p.gauss_mean(),
                gauss_mean_err: p.decomposition.gaussian.map(|g| g.mean_err),
                chi: p.chi.map(|c| c.chi),
                label,
                theta_i: th.theta_i,
            };
            io::write_json(&root.join("points").join(point_dir_name(&p.config)).join("phase.json"), &pp)?;
            let b = est.as_ref().ok();
            rows.push(PhaseRow {
                alpha: p.alpha(),
                beta: p.config.beta,
                f: spec.f_of(&p.config),
                label,
                alpha_c: b.map(|b| b.alpha_c),
                d_alpha_c: b.map(|b| b.d_alpha_c),
                alpha0: b.and_then(|b| b.alpha0),
            });
            phases.push(pp);
        }
    }
    write_phase_diagram(&root.join("phase_diagram.csv"), &rows)?;
    io::write_json(&root.join("boundaries.json"), &boundaries)?;

    let lines = boundary_lines(&boundaries, spec);
    io::write_json(&root.join("lines.json"), &lines)?;

    Ok(SweepOutcome {
        points: results.into_values().collect(),
        phases,
        boundaries,
        boundary_errors,
        lines,
        reference_f0,
        computed,
    })
}

/// Groups points into `(β, f)` lines sorted by α, skipping the reference
/// point when it is off-grid.
fn lines_of(results: &BTreeMap<String, PointResult>) -> Vec<Vec<&PointResult>> {
    let mut by_line: BTreeMap<(u64, u64, u64), Vec<&PointResult>> = BTreeMap::new();
    for p in results.values() {
        by_line.entry(line_key(&p.config)).or_default().push(p);
    }
    by_line
        .into_values()
        .filter(|v| v.len() > 1)
        .map(|mut v| {
            v.sort_by(|a, b| a.alpha().total_cmp(&b.alpha()));
            v
        })
        .collect()
}

/// Straight-line fit of the I–II boundary and polynomial fit of the II–III
/// crossover for each stochastic fraction.
pub fn boundary_lines(boundaries: &[BoundaryEstimate], spec: &SweepSpec) -> Vec<LineSummary> {
    let mut by_f: BTreeMap<u64, Vec<&BoundaryEstimate>> = BTreeMap::new();
    let varies_b = nontrivial(&spec.f_b_grid.values());
    for b in boundaries {
        let f = if varies_b { b.f_b } else { b.f_s };
        by_f.entry(f.to_bits()).or_default().push(b);
    }
    by_f.into_iter()
        .map(|(bits, bs)| {
            let mut notes = Vec::new();
            let pts: Vec<LinePoint> = bs
                .iter()
                .map(|b| LinePoint {
                    alpha_c: b.alpha_c,
                    beta: b.beta,
                    sigma: b.d_alpha_c,
                })
                .collect();
            let transition = fit_line(&pts)
                .map_err(|e| notes.push(format!("transition line: {e}")))
                .ok();
            let locus: Vec<(f64, f64)> = bs.iter().filter_map(|b| b.alpha0.map(|a| (b.beta, a))).collect();
            let crossover = if locus.len() >= 2 {
                fit_polynomial(&locus, (locus.len() - 1).min(3))
                    .map_err(|e| notes.push(format!("crossover locus: {e}")))
                    .ok()
            } else {
                notes.push(format!("crossover locus: {} point(s)", locus.len()));
                None
            };
            LineSummary {
                f: f64::from_bits(bits),
                transition,
                crossover,
                notes,
            }
        })
        .collect()
}

/// Loads every point directory of a finished sweep.
pub fn load_sweep_points(root: &Path) -> Result<Vec<PointResult>> {
    let dir = root.join("points");
    let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut out = Vec::new();
    let mut names: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    names.sort();
    for p in names {
        out.push(load_point(&p)?);
    }
    Ok(out)
}

/// Recomputes boundaries and line fits from loaded points.
pub fn boundaries_from_points(points: &[PointResult], opts: &BoundaryOptions) -> Vec<(f64, f64, f64, Result<BoundaryEstimate>)> {
    let map: BTreeMap<String, PointResult> = points
        .iter()
        .map(|p| (point_dir_name(&p.config), p.clone()))
        .collect();
    lines_of(&map)
        .into_iter()
        .map(|line| {
            let c = &line[0].config;
            (c.beta, c.f_s, c.f_b, phase_boundary(&line, opts))
        })
        .collect()
}
