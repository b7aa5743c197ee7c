//! Trading rules of the deterministic, stochastic-sell, and stochastic-buy
//! models.
//!
//! A buy picks the offered stock with the highest call utility (or, with
//! probability `f_b`, a uniformly random offered stock) and takes as many
//! shares as the trader can afford and the book holds. A sell picks the held
//! stock with the highest put utility (or, with probability `f_s`, a random
//! held stock) and sells the whole position. Every transaction moves the
//! price one tick and is visible to the next trader.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ScheduleMode, SellScope, SimulationConfig};
use crate::error::{Error, Result};
use crate::market::{call_utility, init_market, put_utility, ClassIndex, MarketState, StockState};
use crate::rng::sim_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TradeEvent {
    pub trader: u32,
    pub stock: u32,
    pub side: Side,
    pub quantity: u32,
    /// Price at execution, before the one-tick update.
    pub unit_price: u32,
    pub step: u32,
}

/// Every transaction of one step, split by side in execution order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepLedger {
    pub step: u32,
    pub mode: ScheduleMode,
    pub buy_events: Vec<TradeEvent>,
    pub sell_events: Vec<TradeEvent>,
}

impl StepLedger {
    pub fn trade_count(&self) -> usize {
        self.buy_events.len() + self.sell_events.len()
    }
}

/// What to keep while a simulation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordOptions {
    pub ledgers: bool,
    pub snapshots: bool,
}

impl Default for RecordOptions {
    fn default() -> Self {
        RecordOptions {
            ledgers: true,
            snapshots: false,
        }
    }
}

impl RecordOptions {
    pub const PRICES_ONLY: RecordOptions = RecordOptions {
        ledgers: false,
        snapshots: false,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepActivity {
    pub buys: u32,
    pub sells: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    /// Configuration of the run, with `seed` set to the seed actually used.
    pub config: SimulationConfig,
    pub seed: u64,
    pub final_stocks: Vec<StockState>,
    /// Prices after each step, when recorded.
    pub price_snapshots: Option<Vec<Vec<u32>>>,
    /// One ledger per step, when recorded.
    pub ledgers: Vec<StepLedger>,
    /// Trade counts per step, always recorded.
    pub activity: Vec<StepActivity>,
}

impl SimulationResult {
    pub fn final_prices(&self) -> Vec<u32> {
        self.final_stocks.iter().map(|s| s.price).collect()
    }
}

/// Chooses the stock a trader buys, or `None` when nothing is on offer.
pub fn select_buy_target<R: Rng + ?Sized>(
    market: &MarketState,
    alpha: f64,
    f_b: f64,
    rng: &mut R,
) -> Option<usize> {
    let book = market.book();
    let available = book.available();
    if available.is_empty() {
        return None;
    }
    if f_b > 0.0 && rng.random_bool(f_b) {
        return Some(available[rng.random_range(0..available.len())] as usize);
    }

    let extreme = if alpha > 0.0 {
        Extreme::Lowest
    } else if alpha < 0.0 {
        Extreme::Highest
    } else {
        Extreme::Whole
    };
    pick_argmax(book.offered(), extreme, |p, d| call_utility(alpha, p, d), rng)
}

#[derive(Clone, Copy)]
enum Extreme {
    Lowest,
    Highest,
    Whole,
}

/// Uniformly random member of the argmax set of `utility` over an index.
///
/// `utility` must be monotone in price within each last-delta class, in the
/// direction `extreme` names (`Whole` when it does not depend on price), so
/// the maximum of each class sits in one extreme price bucket.
fn pick_argmax<R, U>(index: &ClassIndex, extreme: Extreme, utility: U, rng: &mut R) -> Option<usize>
where
    R: Rng + ?Sized,
    U: Fn(u32, i8) -> f64,
{
    let mut best = f64::NEG_INFINITY;
    let mut tied: [(i8, usize); 3] = [(0, 0); 3];
    let mut n_tied = 0;
    for delta in [-1i8, 0, 1] {
        let lowest = !matches!(extreme, Extreme::Highest);
        let Some((price, bucket)) = index.extreme(delta, lowest) else {
            continue;
        };
        let count = match extreme {
            Extreme::Whole => index.len(delta),
            _ => bucket.len(),
        };
        let u = utility(price, delta);
        if u > best {
            best = u;
            n_tied = 0;
        }
        if u == best {
            tied[n_tied] = (delta, count);
            n_tied += 1;
        }
    }
    let total: usize = tied[..n_tied].iter().map(|t| t.1).sum();
    if total == 0 {
        return None;
    }
    let mut k = if total > 1 { rng.random_range(0..total) } else { 0 };
    for &(delta, count) in &tied[..n_tied] {
        if k < count {
            let stock = match extreme {
                Extreme::Whole => index.members(delta).nth(k),
                Extreme::Lowest => index.extreme(delta, true).map(|(_, b)| b[k]),
                Extreme::Highest => index.extreme(delta, false).map(|(_, b)| b[k]),
            };
            return stock.map(|s| s as usize);
        }
        k -= count;
    }
    unreachable!("tie index within total")
}

/// Buys the affordable quantity of `stock`. No-op returning `None` when the
/// trader cannot afford a single share or the book holds none.
pub fn execute_buy(
    market: &mut MarketState,
    trader: usize,
    stock: usize,
    step: u32,
) -> Option<TradeEvent> {
    let st = market.stocks()[stock];
    if st.offered == 0 {
        return None;
    }
    let affordable = market.traders()[trader].capital / u64::from(st.price);
    let quantity = affordable.min(u64::from(st.offered)) as u32;
    if quantity == 0 {
        return None;
    }
    market.apply_buy(trader, stock, quantity);
    Some(TradeEvent {
        trader: trader as u32,
        stock: stock as u32,
        side: Side::Buy,
        quantity,
        unit_price: st.price,
        step,
    })
}

/// Chooses the stock a trader sells, or `None` when the trader sells
/// nothing this turn.
///
/// With [`SellScope::AllStocks`] the put-utility argmax runs over every stock
/// and the trader sells only if it holds the winner. With
/// [`SellScope::Held`] the argmax is restricted to held stocks.
pub fn select_sell_target<R: Rng + ?Sized>(
    market: &MarketState,
    trader: usize,
    beta: f64,
    f_s: f64,
    scope: SellScope,
    rng: &mut R,
) -> Option<usize> {
    let holder = &market.traders()[trader];
    let portfolio = &holder.portfolio;
    if portfolio.is_empty() {
        return None;
    }
    if f_s > 0.0 && rng.random_bool(f_s) {
        return Some(portfolio[rng.random_range(0..portfolio.len())].stock as usize);
    }
    if scope == SellScope::AllStocks {
        let target = pick_argmax(
            market.book().all(),
            Extreme::Highest,
            |p, d| put_utility(beta, p, d),
            rng,
        )?;
        return (holder.quantity_of(target) > 0).then_some(target);
    }
    let stocks = market.stocks();
    let mut best = f64::NEG_INFINITY;
    let mut ties = 0usize;
    let mut choice = 0usize;
    for h in portfolio {
        let st = &stocks[h.stock as usize];
        let v = put_utility(beta, st.price, st.last_delta);
        if v > best {
            best = v;
            ties = 1;
            choice = h.stock as usize;
        } else if v == best {
            // Reservoir pick keeps every tied stock equally likely.
            ties += 1;
            if rng.random_range(0..ties) == 0 {
                choice = h.stock as usize;
            }
        }
    }
    Some(choice)
}

/// Sells the trader's whole position in `stock`.
pub fn execute_sell(
    market: &mut MarketState,
    trader: usize,
    stock: usize,
    step: u32,
) -> Result<TradeEvent> {
    let unit_price = market.stocks()[stock].price;
    match market.apply_sell(trader, stock) {
        0 => Err(Error::NotHeld { trader, stock }),
        quantity => Ok(TradeEvent {
            trader: trader as u32,
            stock: stock as u32,
            side: Side::Sell,
            quantity,
            unit_price,
            step,
        }),
    }
}

fn buy_turn<R: Rng + ?Sized>(
    market: &mut MarketState,
    cfg: &SimulationConfig,
    trader: usize,
    step: u32,
    rng: &mut R,
    ledger: &mut StepLedger,
) {
    if let Some(stock) = select_buy_target(market, cfg.alpha, cfg.f_b, rng) {
        if let Some(ev) = execute_buy(market, trader, stock, step) {
            ledger.buy_events.push(ev);
        }
    }
}

fn sell_turn<R: Rng + ?Sized>(
    market: &mut MarketState,
    cfg: &SimulationConfig,
    trader: usize,
    step: u32,
    rng: &mut R,
    ledger: &mut StepLedger,
) {
    if let Some(stock) = select_sell_target(market, trader, cfg.beta, cfg.f_s, cfg.sell_scope, rng) {
        let ev = execute_sell(market, trader, stock, step)
            .expect("sell selection only returns held stocks");
        ledger.sell_events.push(ev);
    }
}

/// Runs one time step and returns its ledger.
pub fn run_step<R: Rng + ?Sized>(
    market: &mut MarketState,
    config: &SimulationConfig,
    rng: &mut R,
) -> StepLedger {
    let step = market.time() as u32;
    let n = market.traders().len();
    let mut ledger = StepLedger {
        step,
        mode: config.schedule_mode,
        buy_events: Vec::with_capacity(n),
        sell_events: Vec::with_capacity(n),
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    match config.schedule_mode {
        ScheduleMode::HalfCycle => {
            for &i in &order {
                buy_turn(market, config, i, step, rng, &mut ledger);
            }
            order.shuffle(rng);
            for &i in &order {
                sell_turn(market, config, i, step, rng, &mut ledger);
            }
        }
        ScheduleMode::PerTrader => {
            for &i in &order {
                buy_turn(market, config, i, step, rng, &mut ledger);
                sell_turn(market, config, i, step, rng, &mut ledger);
            }
        }
    }
    market.advance_time();
    ledger
}

/// Runs a full simulation, calling `observer` after every step with the
/// updated market and that step's ledger.
pub fn run_simulation_observed<F>(
    config: &SimulationConfig,
    seed: u64,
    record: RecordOptions,
    mut observer: F,
) -> Result<SimulationResult>
where
    F: FnMut(&MarketState, &StepLedger),
{
    config.check()?;
    let mut rng = sim_rng(seed);
    let mut market = init_market(config, &mut rng);
    let mut ledgers = Vec::with_capacity(if record.ledgers { config.t_steps } else { 0 });
    let mut snapshots = record
        .snapshots
        .then(|| Vec::with_capacity(config.t_steps));
    let mut activity = Vec::with_capacity(config.t_steps);
    for _ in 0..config.t_steps {
        let ledger = run_step(&mut market, config, &mut rng);
        observer(&market, &ledger);
        activity.push(StepActivity {
            buys: ledger.buy_events.len() as u32,
            sells: ledger.sell_events.len() as u32,
        });
        if let Some(s) = snapshots.as_mut() {
            s.push(market.prices());
        }
        if record.ledgers {
            ledgers.push(ledger);
        }
    }
    Ok(SimulationResult {
        config: SimulationConfig {
            seed,
            ..config.clone()
        },
        seed,
        final_stocks: market.stocks().to_vec(),
        price_snapshots: snapshots,
        ledgers,
        activity,
    })
}

pub fn run_simulation_with(
    config: &SimulationConfig,
    seed: u64,
    record: RecordOptions,
) -> Result<SimulationResult> {
    run_simulation_observed(config, seed, record, |_, _| {})
}

/// Runs a full simulation recording ledgers.
pub fn run_simulation(config: &SimulationConfig, seed: u64) -> Result<SimulationResult> {
    run_simulation_with(config, seed, RecordOptions::default())
}
