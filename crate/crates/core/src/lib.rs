//! Agent-based order-book market simulator with tools for locating its
//! phases: steady-state price histograms, plateau/peak decomposition,
//! order-book spin susceptibility, critical power-law fits, and parameter
//! sweeps.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod fitting;
pub mod io;
pub mod market;
pub mod observables;
pub mod rng;
pub mod sweep;

pub use config::{CapitalMode, Profile, ScheduleMode, SellScope, SimulationConfig, Violation};
pub use dynamics::{
    run_simulation, run_simulation_with, RecordOptions, Side, SimulationResult, StepLedger,
    TradeEvent,
};
pub use error::{Error, Result};
pub use market::{call_utility, init_market, put_utility, MarketState, StockState, TraderState};
