//! Episodic single-stock trading environment.
//!
//! Each step the agent observes the current close and picks a target
//! position of `-lot`, `0` or `+lot` shares, executed at that close. The
//! reward is the mark-to-market P&L of the new position over the following
//! day plus the ledger's net cashflow (rebates in, taxes and costs out).

use std::sync::Arc;

use thiserror::Error;

use crate::ledger::{self, BasisState, LedgerError, LossOffsetCap, TaxCashflow, TaxParams};
use crate::market::{DataError, EpisodeWindow, PriceSeries, TRADING_DAYS_PER_YEAR};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("invalid env config: {0}")]
    Config(String),
    #[error("step called before reset")]
    NotReset,
    #[error("step called after episode end")]
    Done,
    #[error("episode has no transitions")]
    EmptyEpisode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Short,
    Flat,
    Long,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Short, Action::Flat, Action::Long];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        match self {
            Action::Short => 0,
            Action::Flat => 1,
            Action::Long => 2,
        }
    }

    pub fn direction(self) -> f64 {
        match self {
            Action::Short => -1.0,
            Action::Flat => 0.0,
            Action::Long => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub tax_enabled: bool,
    pub lot_size: f64,
    pub episode_length: usize,
    pub tax_params: TaxParams,
    /// Append the normalized position to the observation.
    pub include_position: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            tax_enabled: true,
            lot_size: 100.0,
            episode_length: 1260,
            tax_params: TaxParams::default(),
            include_position: true,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.lot_size > 0.0) || !self.lot_size.is_finite() {
            return Err(EnvError::Config(format!("lot_size must be positive, got {}", self.lot_size)));
        }
        if self.episode_length < 1 {
            return Err(EnvError::Config("episode_length must be >= 1".into()));
        }
        self.tax_params.validate()?;
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        if self.include_position {
            5
        } else {
            4
        }
    }
}

/// Normalized observation: price and basis over the window's first close,
/// volume over the series mean, holding in years, position in lots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub price: f64,
    pub volume: f64,
    pub avg_basis: f64,
    pub avg_holding: f64,
    pub position: f64,
}

impl Observation {
    pub fn features(&self, include_position: bool) -> Vec<f64> {
        let mut v = vec![self.price, self.volume, self.avg_basis, self.avg_holding];
        if include_position {
            v.push(self.position);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Observation,
    pub action: Action,
    pub reward: f64,
    /// Mark-to-market part of the reward.
    pub pnl: f64,
    pub cashflow: TaxCashflow,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct TradingEnv {
    config: EnvConfig,
    series: Arc<PriceSeries>,
    mean_volume: f64,
    window: Option<EpisodeWindow>,
    t: usize,
    state: BasisState,
    loss_cap: Option<LossOffsetCap>,
}

impl TradingEnv {
    pub fn new(config: EnvConfig, series: Arc<PriceSeries>) -> Result<Self, EnvError> {
        config.validate()?;
        if series.len() < config.episode_length + 1 {
            return Err(DataError::WindowTooLong { len: series.len(), length: config.episode_length }.into());
        }
        let mean_volume = series.mean_volume();
        let first = series.closes()[0];
        Ok(Self {
            config,
            series,
            mean_volume,
            window: None,
            t: 0,
            state: BasisState::flat(first),
            loss_cap: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn series(&self) -> &Arc<PriceSeries> {
        &self.series
    }

    pub fn window(&self) -> Option<EpisodeWindow> {
        self.window
    }

    pub fn ledger_state(&self) -> BasisState {
        self.state
    }

    /// Overwrites the ledger state mid-episode (scripted scenarios).
    pub fn set_ledger_state(&mut self, state: BasisState) {
        self.state = state;
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.window.is_some_and(|w| self.t >= w.length)
    }

    pub fn reset(&mut self, window: EpisodeWindow) -> Result<Observation, EnvError> {
        if window.length != self.config.episode_length {
            return Err(EnvError::Config(format!(
                "window length {} differs from episode_length {}",
                window.length, self.config.episode_length
            )));
        }
        let window = EpisodeWindow::new(&self.series, window.start, window.length)?;
        self.window = Some(window);
        self.t = 0;
        self.state = BasisState::flat(self.series.closes()[window.start]);
        let p = &self.config.tax_params;
        self.loss_cap = p.annual_loss_offset_cap.map(|cap| LossOffsetCap::new(cap, TRADING_DAYS_PER_YEAR));
        Ok(self.observe())
    }

    fn first_price(&self) -> f64 {
        let start = self.window.map_or(0, |w| w.start);
        self.series.closes()[start]
    }

    /// Factor mapping currency rewards to episode-return units.
    pub fn reward_scale(&self) -> f64 {
        1.0 / (self.config.lot_size * self.first_price())
    }

    pub fn observe(&self) -> Observation {
        let idx = self.window.map_or(0, |w| w.start) + self.t;
        let first = self.first_price();
        Observation {
            price: self.series.closes()[idx] / first,
            volume: self.series.volumes()[idx] / self.mean_volume,
            avg_basis: self.state.avg_basis / first,
            avg_holding: self.state.avg_holding / TRADING_DAYS_PER_YEAR,
            position: self.state.position / self.config.lot_size,
        }
    }

    pub fn observe_features(&self) -> Vec<f64> {
        self.observe().features(self.config.include_position)
    }

    pub fn step(&mut self, action: Action) -> Result<Transition, EnvError> {
        let window = self.window.ok_or(EnvError::NotReset)?;
        if self.t >= window.length {
            return Err(EnvError::Done);
        }
        let closes = self.series.closes();
        let price = closes[window.start + self.t];
        let next_price = closes[window.start + self.t + 1];
        let target = self.config.lot_size * action.direction();
        let params = &self.config.tax_params;

        let (next_state, full) = ledger::step_ledger(&self.state, price, target, params)?;
        let cashflow = if self.config.tax_enabled {
            let mut cf = full;
            if let Some(cap) = self.loss_cap.as_mut() {
                let pnl = ledger::realized_pnl(&self.state, price, target);
                let (gain, loss) = if cf.loss_rebate > 0.0 {
                    (0.0, cf.loss_rebate / params.rate_short)
                } else {
                    (pnl.max(0.0), 0.0)
                };
                cap.apply(&mut cf, gain, loss, params.rate_short, params.dt);
            }
            cf
        } else {
            full.cost_only()
        };

        let pnl = target * (next_price - price);
        self.state = next_state;
        self.t += 1;
        Ok(Transition {
            observation: self.observe(),
            action,
            reward: pnl + cashflow.net,
            pnl,
            cashflow,
            done: self.t == window.length,
        })
    }
}

/// Cumulative reward over the initial notional `lot_size * first_price`.
pub fn episode_return(transitions: &[Transition], lot_size: f64, first_price: f64) -> Result<f64, EnvError> {
    if transitions.is_empty() {
        return Err(EnvError::EmptyEpisode);
    }
    let total: f64 = transitions.iter().map(|t| t.reward).sum();
    Ok(total / (lot_size * first_price))
}
