//! CSV and JSON artifacts.
//!
//! Tabular outputs sit next to a `meta.json` that echoes the configuration
//! that produced them.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::SimulationConfig;
use crate::dynamics::{Side, SimulationResult, StepLedger, TradeEvent};
use crate::error::{Error, Result};
use crate::observables::{PriceHistogram, SusceptibilityRecord};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::write(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::write(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if let csv::ErrorKind::Io(_) = e.kind() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::write(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::corrupt(path, e)
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Reader::from_reader(f))
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    csv_reader(path)?
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::corrupt(path, e))
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::write(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::write(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| Error::write(path, e))?;
    w.flush().map_err(|e| Error::write(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::corrupt(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::write(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct PriceRow {
    stock_id: u32,
    price: u32,
    last_delta: i8,
    offered: u32,
}

/// `stock_id, price, last_delta, offered` after the last step.
pub fn write_final_prices(path: &Path, result: &SimulationResult) -> Result<()> {
    write_rows(
        path,
        result.final_stocks.iter().enumerate().map(|(i, s)| PriceRow {
            stock_id: i as u32,
            price: s.price,
            last_delta: s.last_delta,
            offered: s.offered,
        }),
    )
}

/// Reads `(price, last_delta, offered)` rows in stock order.
pub fn read_final_prices(path: &Path) -> Result<Vec<(u32, i8, u32)>> {
    let mut rows: Vec<PriceRow> = read_rows(path)?;
    rows.sort_by_key(|r| r.stock_id);
    Ok(rows.into_iter().map(|r| (r.price, r.last_delta, r.offered)).collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct LedgerRow {
    step: u32,
    trader: u32,
    stock: u32,
    side: Side,
    quantity: u32,
    unit_price: u32,
}

/// One row per trade: `step, trader, stock, side, quantity, unit_price`.
/// Buys of a step precede its sells.
pub fn write_ledger(path: &Path, ledgers: &[StepLedger]) -> Result<()> {
    let rows = ledgers
        .iter()
        .flat_map(|l| l.buy_events.iter().chain(&l.sell_events))
        .map(|e| LedgerRow {
            step: e.step,
            trader: e.trader,
            stock: e.stock,
            side: e.side,
            quantity: e.quantity,
            unit_price: e.unit_price,
        });
    write_rows(path, rows)
}

/// Rebuilds per-step ledgers for steps `0..t_steps` from a ledger CSV.
pub fn read_ledger(path: &Path, config: &SimulationConfig) -> Result<Vec<StepLedger>> {
    let rows: Vec<LedgerRow> = read_rows(path)?;
    let mut out: Vec<StepLedger> = (0..config.t_steps)
        .map(|t| StepLedger {
            step: t as u32,
            mode: config.schedule_mode,
            ..Default::default()
        })
        .collect();
    for r in rows {
        let l = out
            .get_mut(r.step as usize)
            .ok_or_else(|| Error::corrupt(path, format!("step {} beyond t_steps", r.step)))?;
        let ev = TradeEvent {
            trader: r.trader,
            stock: r.stock,
            side: r.side,
            quantity: r.quantity,
            unit_price: r.unit_price,
            step: r.step,
        };
        match r.side {
            Side::Buy => l.buy_events.push(ev),
            Side::Sell => l.sell_events.push(ev),
        }
    }
    Ok(out)
}

/// Self-description of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config: SimulationConfig,
    pub seed: u64,
    pub config_digest: String,
    pub final_buys: u32,
    pub final_sells: u32,
    pub version: String,
}

impl RunMetadata {
    pub fn of(result: &SimulationResult) -> Self {
        let last = result.activity.last().copied();
        RunMetadata {
            config: result.config.clone(),
            seed: result.seed,
            config_digest: result.config.digest(),
            final_buys: last.map_or(0, |a| a.buys),
            final_sells: last.map_or(0, |a| a.sells),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HistRow {
    price: u32,
    count: u64,
}

/// `price, count` for every bin from the floor to the highest price.
pub fn write_histogram(path: &Path, hist: &PriceHistogram) -> Result<()> {
    write_rows(path, hist.bins().map(|(price, count)| HistRow { price, count }))
}

/// Reads a histogram CSV; simulation counts come from the caller.
pub fn read_histogram(path: &Path, price_floor: u32, n_sims: usize, snapshots: usize) -> Result<PriceHistogram> {
    let rows: Vec<HistRow> = read_rows(path)?;
    if let Some(r) = rows.iter().find(|r| r.price < price_floor) {
        return Err(Error::corrupt(path, format!("price {} below floor {price_floor}", r.price)));
    }
    Ok(PriceHistogram::from_counts(
        price_floor,
        rows.into_iter().map(|r| (r.price, r.count)),
        n_sims,
        snapshots,
    ))
}

#[derive(Debug, Serialize, Deserialize)]
struct ChiRow {
    alpha: f64,
    beta: f64,
    f_s: f64,
    f_b: f64,
    chi: f64,
    chi_err: f64,
}

/// `alpha, beta, f_s, f_b, chi, chi_err`.
pub fn write_chi(path: &Path, records: &[SusceptibilityRecord]) -> Result<()> {
    write_rows(
        path,
        records.iter().map(|r| ChiRow {
            alpha: r.alpha,
            beta: r.beta,
            f_s: r.f_s,
            f_b: r.f_b,
            chi: r.chi,
            chi_err: r.chi_err,
        }),
    )
}

/// Reads a χ table; `t_steps` and `n_stocks` come from the caller.
pub fn read_chi(path: &Path, t_steps: usize, n_stocks: usize) -> Result<Vec<SusceptibilityRecord>> {
    let rows: Vec<ChiRow> = read_rows(path)?;
    Ok(rows
        .into_iter()
        .map(|r| SusceptibilityRecord {
            alpha: r.alpha,
            beta: r.beta,
            f_s: r.f_s,
            f_b: r.f_b,
            chi: r.chi,
            chi_err: r.chi_err,
            t_steps,
            n_stocks,
        })
        .collect())
}

/// Writes `(x, y)` samples with the given column names.
pub fn write_curve(path: &Path, columns: (&str, &str), points: &[(f64, f64)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([columns.0, columns.1]).map_err(|e| csv_err(path, e))?;
    for (x, y) in points {
        w.write_record([x.to_string(), y.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::write(path, e))
}

pub(crate) fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_rows(path, rows)
}

pub(crate) fn read_csv_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_rows(path)
}
