//! Simulation parameters, validation, and key-value loading.
//!
//! Configuration files are flat TOML documents whose keys are exactly the
//! field names of [`SimulationConfig`]. Missing keys take their defaults,
//! unknown keys are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Order in which traders act within one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    /// Every trader buys (in one random order), then every trader sells
    /// (in an independent random order).
    #[default]
    HalfCycle,
    /// One random order; each trader buys and then immediately sells.
    PerTrader,
}

/// Which stocks the sell-side argmax ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SellScope {
    /// Only stocks the trader holds.
    #[default]
    Held,
    /// Every stock in the market; the trader sells only if it holds the
    /// winner.
    AllStocks,
}

/// How initial trader capital is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CapitalMode {
    /// Uniform integer in `[1, c_max]`.
    #[default]
    UniformRandom,
    /// Exactly `c_max`.
    Fixed,
}

/// Named parameter presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// N = 10000 traders, M = 1000 stocks, 1000 simulations per point.
    #[default]
    Full,
    /// N = 1000 traders, M = 100 stocks, 100 simulations per point.
    Desk,
}

impl Profile {
    pub fn config(self) -> SimulationConfig {
        match self {
            Profile::Full => SimulationConfig::default(),
            Profile::Desk => SimulationConfig {
                n_traders: 1000,
                n_stocks: 100,
                ..SimulationConfig::default()
            },
        }
    }

    pub fn sims_per_point(self) -> usize {
        match self {
            Profile::Full => 1000,
            Profile::Desk => 100,
        }
    }
}

/// Every model and run parameter of one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_traders: usize,
    pub n_stocks: usize,
    /// Upper bound of initial capital (ticks).
    pub c_max: u64,
    /// Upper bound of initial prices (ticks).
    pub p_max: u32,
    /// Upper bound of initial offers and holdings (shares).
    pub q_max: u32,
    /// Weight of the price-level term in the buy utility.
    pub alpha: f64,
    /// Weight of the price-change term in the sell utility.
    pub beta: f64,
    /// Probability that a sell targets a random held stock.
    pub f_s: f64,
    /// Probability that a buy targets a random offered stock.
    pub f_b: f64,
    pub t_steps: usize,
    pub seed: u64,
    pub price_floor: u32,
    pub schedule_mode: ScheduleMode,
    pub initial_portfolio_stocks: usize,
    pub capital_mode: CapitalMode,
    pub sell_scope: SellScope,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n_traders: 10_000,
            n_stocks: 1000,
            c_max: 100,
            p_max: 100,
            q_max: 100,
            alpha: 10.0,
            beta: 10.0,
            f_s: 0.0,
            f_b: 0.0,
            t_steps: 100,
            seed: 0,
            price_floor: 1,
            schedule_mode: ScheduleMode::HalfCycle,
            initial_portfolio_stocks: 1,
            capital_mode: CapitalMode::UniformRandom,
            sell_scope: SellScope::Held,
        }
    }
}

/// One failed invariant of a [`SimulationConfig`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn violation(field: &'static str, message: impl Into<String>) -> Violation {
    Violation {
        field,
        message: message.into(),
    }
}

impl SimulationConfig {
    /// Lists every invariant this configuration breaks. Empty means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let counts: [(&'static str, u64); 7] = [
            ("n_traders", self.n_traders as u64),
            ("n_stocks", self.n_stocks as u64),
            ("c_max", self.c_max),
            ("p_max", u64::from(self.p_max)),
            ("q_max", u64::from(self.q_max)),
            ("t_steps", self.t_steps as u64),
            ("initial_portfolio_stocks", self.initial_portfolio_stocks as u64),
        ];
        for (field, value) in counts {
            if value < 1 {
                out.push(violation(field, "must be at least 1"));
            }
        }
        if self.price_floor == 0 {
            out.push(violation("price_floor", "must be positive"));
        } else if self.price_floor > self.p_max {
            out.push(violation(
                "price_floor",
                format!("{} exceeds p_max = {}", self.price_floor, self.p_max),
            ));
        }
        for (field, value) in [("f_s", self.f_s), ("f_b", self.f_b)] {
            if !(0.0..=1.0).contains(&value) {
                out.push(violation(field, format!("{value} is not a probability")));
            }
        }
        for (field, value) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !value.is_finite() {
                out.push(violation(field, "must be finite"));
            }
        }
        if self.initial_portfolio_stocks > self.n_stocks {
            out.push(violation(
                "initial_portfolio_stocks",
                format!(
                    "{} distinct stocks requested but only {} exist",
                    self.initial_portfolio_stocks, self.n_stocks
                ),
            ));
        }
        out
    }

    /// Returns `Ok(())` or every violation wrapped in [`Error::InvalidConfig`].
    pub fn check(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::BadValue {
            key: "<file>".into(),
            value: String::new(),
            reason: e.message().to_string(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::corrupt(path, e))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Sets one field from its textual value, rejecting unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut map = match serde_json::to_value(&*self).expect("config serializes") {
            serde_json::Value::Object(map) => map,
            _ => unreachable!(),
        };
        let slot = map
            .get_mut(key)
            .ok_or_else(|| Error::UnknownKey(key.to_string()))?;
        let bad = |reason: String| Error::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            reason,
        };
        *slot = match slot {
            serde_json::Value::String(_) => serde_json::Value::String(value.to_string()),
            serde_json::Value::Number(n) if n.is_f64() => {
                let x = f64::from_str(value).map_err(|e| bad(e.to_string()))?;
                serde_json::Number::from_f64(x)
                    .map(serde_json::Value::Number)
                    .ok_or_else(|| bad("not a finite number".into()))?
            }
            serde_json::Value::Number(_) => {
                let x = u64::from_str(value).map_err(|e| bad(e.to_string()))?;
                serde_json::Value::from(x)
            }
            _ => return Err(bad("unsupported field type".into())),
        };
        *self = serde_json::from_value(serde_json::Value::Object(map))
            .map_err(|e| bad(e.to_string()))?;
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for item in overrides {
            let item = item.as_ref();
            let (key, value) = item.split_once('=').ok_or_else(|| Error::BadValue {
                key: item.to_string(),
                value: String::new(),
                reason: "expected key=value".into(),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Stable hex digest of the canonical JSON form.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        let hash = Sha256::digest(json.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Simulation-level parameters with the run seed cleared, so results of
    /// different seeds compare equal when their models match.
    pub fn model_key(&self) -> SimulationConfig {
        SimulationConfig {
            seed: 0,
            ..self.clone()
        }
    }
}
