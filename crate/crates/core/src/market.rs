//! Market state, initialization, and the two trading utilities.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{CapitalMode, SimulationConfig};

/// Buy-side utility `alpha / price + last_delta`.
pub fn call_utility(alpha: f64, price: u32, last_delta: i8) -> f64 {
    alpha / f64::from(price) + f64::from(last_delta)
}

/// Sell-side utility `price - beta * last_delta`.
pub fn put_utility(beta: f64, price: u32, last_delta: i8) -> f64 {
    f64::from(price) - beta * f64::from(last_delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StockState {
    pub price: u32,
    /// Sign of the last price change; 0 until the first transaction.
    pub last_delta: i8,
    /// Shares on offer in the order book.
    pub offered: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Holding {
    pub stock: u32,
    pub quantity: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TraderState {
    pub capital: u64,
    /// Positive holdings only, in acquisition order.
    pub portfolio: Vec<Holding>,
}

impl TraderState {
    pub fn quantity_of(&self, stock: usize) -> u32 {
        self.portfolio
            .iter()
            .find(|h| h.stock as usize == stock)
            .map_or(0, |h| h.quantity)
    }
}

fn class_of(delta: i8) -> usize {
    (delta + 1) as usize
}

/// Stocks grouped by last price change, then by price.
#[derive(Debug, Clone, Default)]
pub(crate) struct ClassIndex {
    classes: [BTreeMap<u32, Vec<u32>>; 3],
    slot: Vec<u32>,
}

impl ClassIndex {
    fn with_len(n: usize) -> Self {
        ClassIndex {
            classes: Default::default(),
            slot: vec![0; n],
        }
    }

    fn insert(&mut self, s: u32, st: &StockState) {
        let bucket = self.classes[class_of(st.last_delta)]
            .entry(st.price)
            .or_default();
        self.slot[s as usize] = bucket.len() as u32;
        bucket.push(s);
    }

    fn remove(&mut self, s: u32, st: &StockState) {
        let class = &mut self.classes[class_of(st.last_delta)];
        let bucket = class.get_mut(&st.price).expect("indexed stock has a bucket");
        let at = self.slot[s as usize] as usize;
        bucket.swap_remove(at);
        if let Some(&moved) = bucket.get(at) {
            self.slot[moved as usize] = at as u32;
        }
        if bucket.is_empty() {
            class.remove(&st.price);
        }
    }

    /// Bucket with the given last delta at the lowest (`lowest = true`) or
    /// highest price.
    pub(crate) fn extreme(&self, delta: i8, lowest: bool) -> Option<(u32, &[u32])> {
        let class = &self.classes[class_of(delta)];
        let entry = if lowest {
            class.iter().next()
        } else {
            class.iter().next_back()
        };
        entry.map(|(&p, v)| (p, v.as_slice()))
    }

    pub(crate) fn members(&self, delta: i8) -> impl Iterator<Item = u32> + '_ {
        self.classes[class_of(delta)].values().flatten().copied()
    }

    pub(crate) fn len(&self, delta: i8) -> usize {
        self.classes[class_of(delta)].values().map(Vec::len).sum()
    }
}

/// Order-book index: offered stocks by class and price, all stocks by class
/// and price, and a flat set of offered stocks for uniform sampling.
#[derive(Debug, Clone, Default)]
pub(crate) struct BookIndex {
    offered: ClassIndex,
    all: ClassIndex,
    available: Vec<u32>,
    available_pos: Vec<u32>,
}

const ABSENT: u32 = u32::MAX;

impl BookIndex {
    fn build(stocks: &[StockState]) -> Self {
        let mut idx = BookIndex {
            offered: ClassIndex::with_len(stocks.len()),
            all: ClassIndex::with_len(stocks.len()),
            available: Vec::with_capacity(stocks.len()),
            available_pos: vec![ABSENT; stocks.len()],
        };
        for (s, st) in stocks.iter().enumerate() {
            idx.insert(s as u32, st);
        }
        idx
    }

    fn insert(&mut self, s: u32, st: &StockState) {
        self.all.insert(s, st);
        if st.offered > 0 {
            self.offered.insert(s, st);
            self.available_pos[s as usize] = self.available.len() as u32;
            self.available.push(s);
        }
    }

    fn remove(&mut self, s: u32, st: &StockState) {
        self.all.remove(s, st);
        if st.offered > 0 {
            self.offered.remove(s, st);
            let at = self.available_pos[s as usize] as usize;
            self.available.swap_remove(at);
            if let Some(&moved) = self.available.get(at) {
                self.available_pos[moved as usize] = at as u32;
            }
            self.available_pos[s as usize] = ABSENT;
        }
    }

    fn update(&mut self, s: u32, old: &StockState, new: &StockState) {
        self.remove(s, old);
        self.insert(s, new);
    }

    pub(crate) fn available(&self) -> &[u32] {
        &self.available
    }

    pub(crate) fn offered(&self) -> &ClassIndex {
        &self.offered
    }

    pub(crate) fn all(&self) -> &ClassIndex {
        &self.all
    }
}

/// Complete simulation state. Mutation goes through the trading operations so
/// the order-book index stays consistent with the stock list.
#[derive(Debug, Clone)]
pub struct MarketState {
    stocks: Vec<StockState>,
    traders: Vec<TraderState>,
    time: usize,
    price_floor: u32,
    book: BookIndex,
}

impl PartialEq for MarketState {
    fn eq(&self, other: &Self) -> bool {
        self.stocks == other.stocks
            && self.traders == other.traders
            && self.time == other.time
            && self.price_floor == other.price_floor
    }
}

impl MarketState {
    /// Builds a state from explicit parts.
    ///
    /// # Panics
    /// If any price is below `price_floor` or any holding is zero.
    pub fn from_parts(stocks: Vec<StockState>, traders: Vec<TraderState>, price_floor: u32) -> Self {
        assert!(stocks.iter().all(|s| s.price >= price_floor), "price below floor");
        assert!(
            traders
                .iter()
                .flat_map(|t| &t.portfolio)
                .all(|h| h.quantity > 0 && (h.stock as usize) < stocks.len()),
            "portfolio entries must be positive and reference existing stocks"
        );
        let book = BookIndex::build(&stocks);
        MarketState {
            stocks,
            traders,
            time: 0,
            price_floor,
            book,
        }
    }

    pub fn stocks(&self) -> &[StockState] {
        &self.stocks
    }

    pub fn traders(&self) -> &[TraderState] {
        &self.traders
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn price_floor(&self) -> u32 {
        self.price_floor
    }

    pub fn prices(&self) -> Vec<u32> {
        self.stocks.iter().map(|s| s.price).collect()
    }

    pub(crate) fn book(&self) -> &BookIndex {
        &self.book
    }

    pub(crate) fn advance_time(&mut self) {
        self.time += 1;
    }

    /// Shares of each stock held by traders plus those on offer.
    pub fn share_totals(&self) -> Vec<u64> {
        let mut totals: Vec<u64> = self.stocks.iter().map(|s| u64::from(s.offered)).collect();
        for h in self.traders.iter().flat_map(|t| &t.portfolio) {
            totals[h.stock as usize] += u64::from(h.quantity);
        }
        totals
    }

    /// Moves `quantity` shares of `stock` from the book to `trader` at the
    /// current price, then raises the price by one tick.
    pub(crate) fn apply_buy(&mut self, trader: usize, stock: usize, quantity: u32) {
        let st = self.stocks[stock];
        let cost = u64::from(quantity) * u64::from(st.price);
        debug_assert!(quantity <= st.offered && cost <= self.traders[trader].capital);
        let t = &mut self.traders[trader];
        t.capital -= cost;
        match t.portfolio.iter_mut().find(|h| h.stock as usize == stock) {
            Some(h) => h.quantity += quantity,
            None => t.portfolio.push(Holding {
                stock: stock as u32,
                quantity,
            }),
        }
        let next = StockState {
            price: st.price + 1,
            last_delta: 1,
            offered: st.offered - quantity,
        };
        self.book.update(stock as u32, &st, &next);
        self.stocks[stock] = next;
    }

    /// Sells the trader's entire holding of `stock` back to the book at the
    /// current price, then lowers the price by one tick (clamped at the
    /// floor). Returns the quantity sold; zero means nothing was held.
    pub(crate) fn apply_sell(&mut self, trader: usize, stock: usize) -> u32 {
        let t = &mut self.traders[trader];
        let Some(at) = t.portfolio.iter().position(|h| h.stock as usize == stock) else {
            return 0;
        };
        let quantity = t.portfolio.remove(at).quantity;
        let st = self.stocks[stock];
        t.capital += u64::from(quantity) * u64::from(st.price);
        let next = StockState {
            price: st.price.saturating_sub(1).max(self.price_floor),
            last_delta: -1,
            offered: st.offered + quantity,
        };
        self.book.update(stock as u32, &st, &next);
        self.stocks[stock] = next;
        quantity
    }
}

/// Draws the initial market.
///
/// Draw order: for each stock its price then its offer; then for each trader
/// its capital, its portfolio stocks, and one quantity per held stock.
pub fn init_market<R: Rng + ?Sized>(config: &SimulationConfig, rng: &mut R) -> MarketState {
    let stocks: Vec<StockState> = (0..config.n_stocks)
        .map(|_| {
            let price = rng.random_range(config.price_floor..=config.p_max);
            let offered = rng.random_range(1..=config.q_max);
            StockState {
                price,
                last_delta: 0,
                offered,
            }
        })
        .collect();
    let traders = (0..config.n_traders)
        .map(|_| {
            let capital = match config.capital_mode {
                CapitalMode::UniformRandom => rng.random_range(1..=config.c_max),
                CapitalMode::Fixed => config.c_max,
            };
            let picks = index::sample(rng, config.n_stocks, config.initial_portfolio_stocks);
            let portfolio = picks
                .iter()
                .map(|s| Holding {
                    stock: s as u32,
                    quantity: rng.random_range(1..=config.q_max),
                })
                .collect();
            TraderState { capital, portfolio }
        })
        .collect();
    MarketState::from_parts(stocks, traders, config.price_floor)
}
