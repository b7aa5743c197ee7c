//! Ensemble observables: accumulated price histograms, their plateau/peak
//! decomposition, and the order-book spin susceptibility.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::config::{ScheduleMode, SimulationConfig};
use crate::dynamics::{SimulationResult, StepLedger};
use crate::error::{Error, Result};
use crate::fitting::{fit_gaussian, GaussianFit};

/// Which prices of a simulation enter a histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sample {
    /// Prices after the last step.
    #[default]
    FinalStep,
    /// Prices after each step in `first..=last` (zero-based step indices).
    Window { first: usize, last: usize },
}

impl Sample {
    fn snapshots(self) -> usize {
        match self {
            Sample::FinalStep => 1,
            Sample::Window { first, last } => last.saturating_sub(first) + 1,
        }
    }
}

/// Integer-binned price counts summed over an ensemble.
///
/// Bin `k` holds the count of price `price_floor + k`; the last bin is the
/// highest price observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceHistogram {
    pub price_floor: u32,
    pub counts: Vec<u64>,
    pub n_sims: usize,
    /// Price snapshots taken per simulation.
    pub snapshots: usize,
}

impl PriceHistogram {
    pub fn new(price_floor: u32) -> Self {
        PriceHistogram {
            price_floor,
            counts: Vec::new(),
            n_sims: 0,
            snapshots: 1,
        }
    }

    /// Builds a histogram from explicit `(price, count)` pairs.
    pub fn from_counts(
        price_floor: u32,
        pairs: impl IntoIterator<Item = (u32, u64)>,
        n_sims: usize,
        snapshots: usize,
    ) -> Self {
        let mut h = PriceHistogram {
            price_floor,
            counts: Vec::new(),
            n_sims,
            snapshots,
        };
        for (p, c) in pairs {
            h.add(p, c);
        }
        h.trim();
        h
    }

    fn add(&mut self, price: u32, count: u64) {
        let k = price.saturating_sub(self.price_floor) as usize;
        if k >= self.counts.len() {
            self.counts.resize(k + 1, 0);
        }
        self.counts[k] += count;
    }

    fn trim(&mut self) {
        while self.counts.last() == Some(&0) {
            self.counts.pop();
        }
    }

    /// Adds one snapshot of prices. Does not touch `n_sims`.
    pub fn add_prices(&mut self, prices: impl IntoIterator<Item = u32>) {
        for p in prices {
            self.add(p, 1);
        }
    }

    /// Adds another histogram's counts and simulations.
    pub fn merge(&mut self, other: &PriceHistogram) -> Result<()> {
        if other.price_floor != self.price_floor || other.snapshots != self.snapshots {
            return Err(Error::MixedConfig);
        }
        if other.counts.len() > self.counts.len() {
            self.counts.resize(other.counts.len(), 0);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.n_sims += other.n_sims;
        Ok(())
    }

    pub fn count(&self, price: u32) -> u64 {
        price
            .checked_sub(self.price_floor)
            .and_then(|k| self.counts.get(k as usize).copied())
            .unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn max_price(&self) -> Option<u32> {
        (!self.counts.is_empty()).then(|| self.price_floor + self.counts.len() as u32 - 1)
    }

    /// `(price, count)` for every bin in `[price_floor, max_price]`.
    pub fn bins(&self) -> impl Iterator<Item = (u32, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .map(|(k, &c)| (self.price_floor + k as u32, c))
    }

    pub fn mean(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| {
            self.bins().map(|(p, c)| p as f64 * c as f64).sum::<f64>() / n as f64
        })
    }

    pub fn std_dev(&self) -> Option<f64> {
        let n = self.total();
        let m = self.mean()?;
        let var = self
            .bins()
            .map(|(p, c)| c as f64 * (p as f64 - m).powi(2))
            .sum::<f64>()
            / n as f64;
        Some(var.sqrt())
    }

    /// Factor turning raw counts into counts per 1000 simulations and per
    /// snapshot.
    pub fn per_thousand(&self) -> f64 {
        1000.0 / (self.n_sims.max(1) * self.snapshots.max(1)) as f64
    }
}

/// Histogram of one simulation's prices under `sample`.
pub fn simulation_histogram(result: &SimulationResult, sample: Sample) -> Result<PriceHistogram> {
    let mut h = PriceHistogram::new(result.config.price_floor);
    h.snapshots = sample.snapshots();
    match sample {
        Sample::FinalStep => h.add_prices(result.final_stocks.iter().map(|s| s.price)),
        Sample::Window { first, last } => {
            let snaps = result.price_snapshots.as_ref().ok_or(Error::MissingSnapshots)?;
            if first > last || last >= snaps.len() {
                return Err(Error::BadValue {
                    key: "window".into(),
                    value: format!("{first}..={last}"),
                    reason: format!("outside the {} recorded steps", snaps.len()),
                });
            }
            for s in &snaps[first..=last] {
                h.add_prices(s.iter().copied());
            }
        }
    }
    h.n_sims = 1;
    h.trim();
    Ok(h)
}

/// Sums the price histograms of an ensemble sharing one configuration.
pub fn accumulate_histogram(results: &[SimulationResult], sample: Sample) -> Result<PriceHistogram> {
    let first = results.first().ok_or(Error::Empty("no simulation results"))?;
    let key = first.config.model_key();
    let mut acc = PriceHistogram::new(first.config.price_floor);
    acc.snapshots = sample.snapshots();
    for r in results {
        if r.config.model_key() != key {
            return Err(Error::MixedConfig);
        }
        acc.merge(&simulation_histogram(r, sample)?)?;
    }
    Ok(acc)
}

/// Tunables of [`decompose`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecomposeOptions {
    /// Explicit plateau window; `None` means `[floor + 4, 0.8 * split]`.
    pub plateau_window: Option<(u32, u32)>,
    /// Fraction of bins trimmed from each end before averaging.
    pub trim: f64,
    /// Shoulder threshold as a fraction of F0.
    pub shoulder_fraction: f64,
    /// Consecutive low bins that make a shoulder.
    pub shoulder_run: usize,
    /// Minimum above-split share of the mass for a gaussian to be fitted.
    pub min_peak_mass: f64,
    /// Largest `|slope| * width / F0` across the window that still counts
    /// as flat.
    pub flatness: f64,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        DecomposeOptions {
            plateau_window: None,
            trim: 0.1,
            shoulder_fraction: 0.25,
            shoulder_run: 3,
            min_peak_mass: 0.01,
            flatness: 0.5,
        }
    }
}

/// Plateau + gaussian description of a price histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubDistributionDecomposition {
    /// Mean price of the whole distribution.
    pub split_price: f64,
    /// Plateau height in counts per bin per 1000 simulations.
    pub f0: f64,
    pub f0_err: f64,
    /// Plateau window actually used, inclusive.
    pub plateau_window: Option<(u32, u32)>,
    /// False when the window is too short or its counts are not flat.
    pub plateau_found: bool,
    pub gaussian: Option<GaussianFit>,
    /// Why no gaussian is reported, if none is.
    pub gaussian_note: Option<String>,
    pub shoulder_price: Option<u32>,
    pub total: u64,
    pub n_sims: usize,
}

/// Trimmed mean and standard error of `values`.
fn trimmed_mean(values: &[f64], trim: f64) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let cut = ((v.len() as f64) * trim).floor() as usize;
    let kept = if v.len() > 2 * cut { &v[cut..v.len() - cut] } else { &v[..] };
    let n = kept.len() as f64;
    let mean = kept.iter().sum::<f64>() / n;
    if kept.len() < 2 {
        return (mean, 0.0);
    }
    let var = kept.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

struct Plateau {
    window: (u32, u32),
    raw: f64,
    err: f64,
}

fn plateau(hist: &PriceHistogram, window: (u32, u32), trim: f64) -> Option<Plateau> {
    let (lo, hi) = window;
    if hi < lo {
        return None;
    }
    let vals: Vec<f64> = (lo..=hi).map(|p| hist.count(p) as f64).collect();
    let (raw, err) = trimmed_mean(&vals, trim);
    Some(Plateau { window, raw, err })
}

fn median_count(hist: &PriceHistogram, lo: u32, hi: u32) -> f64 {
    let mut v: Vec<u64> = (lo..=hi).map(|p| hist.count(p)).collect();
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

fn find_shoulder(hist: &PriceHistogram, top: u32, threshold: f64, run: usize) -> Option<u32> {
    let floor = hist.price_floor;
    let run = run as u32;
    let mut p = top;
    while p >= floor + run {
        if (1..=run).all(|k| (hist.count(p - k) as f64) < threshold) {
            return Some(p);
        }
        p -= 1;
    }
    None
}

fn is_flat(hist: &PriceHistogram, window: (u32, u32), level: f64, tolerance: f64) -> bool {
    let (lo, hi) = window;
    if hi < lo + 4 || level <= 0.0 {
        return false;
    }
    let n = (hi - lo + 1) as f64;
    let xm = (lo + hi) as f64 / 2.0;
    let ym = (lo..=hi).map(|p| hist.count(p) as f64).sum::<f64>() / n;
    let sxy: f64 = (lo..=hi).map(|p| (p as f64 - xm) * (hist.count(p) as f64 - ym)).sum();
    let sxx: f64 = (lo..=hi).map(|p| (p as f64 - xm).powi(2)).sum();
    let slope = sxy / sxx;
    (slope * (n - 1.0)).abs() / level <= tolerance
}

/// Splits a histogram into its below-average plateau and above-average peak.
pub fn decompose(hist: &PriceHistogram, opts: &DecomposeOptions) -> Result<SubDistributionDecomposition> {
    let total = hist.total();
    let split = hist.mean().ok_or(Error::Empty("histogram has no counts"))?;
    let floor = hist.price_floor;
    let scale = hist.per_thousand();

    let default_window = opts
        .plateau_window
        .unwrap_or((floor + 4, (0.8 * split).floor().max(0.0) as u32));
    let (mut lo, mut hi) = default_window;
    let mut shoulder = None;
    if opts.plateau_window.is_none() && hi >= lo {
        let level = median_count(hist, lo, hi);
        if level > 0.0 {
            let cut = opts.shoulder_fraction * level;
            while hi > lo && (hist.count(hi) as f64) < cut {
                hi -= 1;
            }
            shoulder = find_shoulder(hist, hi, cut, opts.shoulder_run);
            if let Some(sh) = shoulder {
                lo = lo.max(sh);
            }
        }
    }
    let chosen = plateau(hist, (lo, hi), opts.trim);

    let (f0, f0_err, window, plateau_found) = match &chosen {
        Some(pl) => (
            pl.raw * scale,
            pl.err * scale,
            Some(pl.window),
            is_flat(hist, pl.window, pl.raw, opts.flatness),
        ),
        None => (0.0, 0.0, None, false),
    };

    let above: Vec<(f64, f64)> = hist
        .bins()
        .filter(|&(p, _)| p as f64 > split)
        .map(|(p, c)| (p as f64, c as f64))
        .collect();
    let above_mass: f64 = above.iter().map(|x| x.1).sum();
    let (gaussian, gaussian_note) = if above_mass < opts.min_peak_mass * total as f64 {
        (None, Some("no gaussian: above-split mass below threshold".to_string()))
    } else {
        match fit_gaussian(&above) {
            Ok(g) => (Some(g), None),
            Err(e) => (None, Some(format!("no gaussian: {e}"))),
        }
    };

    Ok(SubDistributionDecomposition {
        split_price: split,
        f0,
        f0_err,
        plateau_window: window,
        plateau_found,
        gaussian,
        gaussian_note,
        shoulder_price: shoulder,
        total,
        n_sims: hist.n_sims,
    })
}

/// Accumulated pair score of one simulation and its normalised value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Susceptibility {
    pub accumulated: i64,
    pub t_steps: usize,
    pub n_stocks: usize,
    pub chi: f64,
}

impl Susceptibility {
    fn new(accumulated: i64, t_steps: usize, n_stocks: usize) -> Self {
        let chi = if t_steps == 0 {
            0.0
        } else {
            accumulated as f64 / (t_steps as f64 * n_stocks.max(1) as f64)
        };
        Susceptibility {
            accumulated,
            t_steps,
            n_stocks,
            chi,
        }
    }
}

/// One row of a χ table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SusceptibilityRecord {
    pub alpha: f64,
    pub beta: f64,
    pub f_s: f64,
    pub f_b: f64,
    pub chi: f64,
    pub chi_err: f64,
    pub t_steps: usize,
    pub n_stocks: usize,
}

impl SusceptibilityRecord {
    /// Ensemble mean and standard error of per-simulation χ values.
    pub fn from_values(config: &SimulationConfig, values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let err = if values.len() > 1 {
            (values.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        SusceptibilityRecord {
            alpha: config.alpha,
            beta: config.beta,
            f_s: config.f_s,
            f_b: config.f_b,
            chi: mean,
            chi_err: err,
            t_steps: config.t_steps,
            n_stocks: config.n_stocks,
        }
    }
}

fn check_mode(ledgers: &[StepLedger]) -> Result<()> {
    if ledgers.iter().any(|l| l.mode == ScheduleMode::PerTrader) {
        return Err(Error::PerTraderLedger);
    }
    Ok(())
}

/// Pair-enumeration reference for [`susceptibility_fast`]. Quadratic in the
/// number of traders.
pub fn susceptibility_naive(ledgers: &[StepLedger], n_stocks: usize) -> Result<Susceptibility> {
    check_mode(ledgers)?;
    let mut acc = 0i64;
    let pairs_same = |events: &[crate::dynamics::TradeEvent]| -> i64 {
        let mut n = 0;
        for (x, a) in events.iter().enumerate() {
            for b in &events[x + 1..] {
                if a.trader != b.trader && a.stock == b.stock {
                    n += 1;
                }
            }
        }
        n
    };
    let cross = |buys: &[crate::dynamics::TradeEvent], sells: &[crate::dynamics::TradeEvent]| -> i64 {
        let mut n = 0;
        for b in buys {
            for s in sells {
                if b.trader != s.trader && b.stock == s.stock {
                    n += 1;
                }
            }
        }
        n
    };
    for (t, l) in ledgers.iter().enumerate() {
        acc += pairs_same(&l.buy_events);
        acc += pairs_same(&l.sell_events);
        acc -= cross(&l.buy_events, &l.sell_events);
        if let Some(next) = ledgers.get(t + 1) {
            acc -= cross(&next.buy_events, &l.sell_events);
        }
    }
    Ok(Susceptibility::new(acc, ledgers.len(), n_stocks))
}

/// Streaming susceptibility: feed ledgers in step order with [`push`].
///
/// [`push`]: SusceptibilityAccumulator::push
#[derive(Debug, Clone)]
pub struct SusceptibilityAccumulator {
    n_stocks: usize,
    steps: usize,
    acc: i64,
    prev_sells: Vec<(u32, u32)>,
    prev_counts: HashMap<u32, i64>,
}

/// `(stock, trader)` pairs sorted, and per-stock counts.
fn keyed(events: &[crate::dynamics::TradeEvent]) -> (Vec<(u32, u32)>, HashMap<u32, i64>) {
    let mut keys: Vec<(u32, u32)> = events.iter().map(|e| (e.stock, e.trader)).collect();
    keys.sort_unstable();
    keys.dedup();
    let mut per_stock = HashMap::new();
    for &(s, _) in &keys {
        *per_stock.entry(s).or_insert(0) += 1;
    }
    (keys, per_stock)
}

fn overlap(a: &[(u32, u32)], b: &[(u32, u32)]) -> i64 {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn product(a: &HashMap<u32, i64>, b: &HashMap<u32, i64>) -> i64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small.iter().map(|(s, x)| x * large.get(s).copied().unwrap_or(0)).sum()
}

fn same_pairs(counts: &HashMap<u32, i64>) -> i64 {
    counts.values().map(|&c| c * (c - 1) / 2).sum()
}

impl SusceptibilityAccumulator {
    pub fn new(n_stocks: usize) -> Self {
        SusceptibilityAccumulator {
            n_stocks,
            steps: 0,
            acc: 0,
            prev_sells: Vec::new(),
            prev_counts: HashMap::new(),
        }
    }

    pub fn push(&mut self, ledger: &StepLedger) -> Result<()> {
        if ledger.mode == ScheduleMode::PerTrader {
            return Err(Error::PerTraderLedger);
        }
        let (buys, b) = keyed(&ledger.buy_events);
        let (sells, k) = keyed(&ledger.sell_events);
        self.acc += same_pairs(&b) + same_pairs(&k);
        self.acc -= product(&b, &k) - overlap(&buys, &sells);
        if self.steps > 0 {
            self.acc -= product(&b, &self.prev_counts) - overlap(&buys, &self.prev_sells);
        }
        self.prev_sells = sells;
        self.prev_counts = k;
        self.steps += 1;
        Ok(())
    }

    pub fn finish(&self) -> Susceptibility {
        Susceptibility::new(self.acc, self.steps, self.n_stocks)
    }
}

/// Per-stock counting form of the pair rules; equal to
/// [`susceptibility_naive`] on every input.
pub fn susceptibility_fast(ledgers: &[StepLedger], n_stocks: usize) -> Result<Susceptibility> {
    check_mode(ledgers)?;
    let mut acc = SusceptibilityAccumulator::new(n_stocks);
    for l in ledgers {
        acc.push(l)?;
    }
    Ok(acc.finish())
}
