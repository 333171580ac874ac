//! Average-basis / average-holding-period capital gains ledger.
//!
//! The whole open position is summarized by a single per-share cost figure
//! (`avg_basis`) and a basis-weighted age (`avg_holding`, in trading days).
//! Both update from the previous state, the next price and the next position
//! only, which keeps the tax state Markovian.
//!
//! Positions are signed share counts. A short position carries a positive
//! basis equal to the average price the borrowed shares were sold at.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LedgerError {
    #[error("price must be positive and finite, got {0}")]
    InvalidPrice(f64),
    #[error("position must be finite, got {0}")]
    InvalidPosition(f64),
    #[error("invalid tax parameters: {0}")]
    InvalidParams(String),
    #[error("degenerate transition {from} -> {to}: {what}")]
    Degenerate { from: f64, to: f64, what: &'static str },
}

/// How realized P&L on short covers is signed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ShortCoverConvention {
    /// Covering above the basis is taxed as a gain, exactly as the closed-form
    /// tax expression reads.
    #[default]
    AsWritten,
    /// Covering above the basis is a loss (rebated), covering below is a gain.
    Economic,
}

/// Base on which the per-trade transaction cost rate is charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CostMode {
    /// `rate * price * |shares traded|`
    #[default]
    Notional,
    /// `rate * |price - basis| * realized shares`
    Pnl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaxParams {
    pub rate_long: f64,
    pub rate_short: f64,
    /// Holding period (trading days) at or above which gains are long-term.
    pub long_term_threshold: f64,
    pub txn_cost_rate: f64,
    pub txn_cost_mode: CostMode,
    /// Trading days per step.
    pub dt: f64,
    pub short_cover_convention: ShortCoverConvention,
    /// Optional yearly cap on losses rebated beyond the year's realized gains.
    /// `None` rebates every loss.
    pub annual_loss_offset_cap: Option<f64>,
}

impl Default for TaxParams {
    fn default() -> Self {
        Self {
            rate_long: 0.15,
            rate_short: 0.25,
            long_term_threshold: 252.0,
            txn_cost_rate: 0.001,
            txn_cost_mode: CostMode::Notional,
            dt: 1.0,
            short_cover_convention: ShortCoverConvention::AsWritten,
            annual_loss_offset_cap: None,
        }
    }
}

impl TaxParams {
    pub fn validate(&self) -> Result<(), LedgerError> {
        let bad = |msg: String| Err(LedgerError::InvalidParams(msg));
        if !(0.0..1.0).contains(&self.rate_short) || !(0.0..=self.rate_short).contains(&self.rate_long) {
            return bad(format!(
                "need 0 <= rate_long <= rate_short < 1, got long={} short={}",
                self.rate_long, self.rate_short
            ));
        }
        if !(self.long_term_threshold > 0.0) || !self.long_term_threshold.is_finite() {
            return bad(format!("long_term_threshold must be positive, got {}", self.long_term_threshold));
        }
        if !(self.txn_cost_rate >= 0.0) || !self.txn_cost_rate.is_finite() {
            return bad(format!("txn_cost_rate must be >= 0, got {}", self.txn_cost_rate));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if let Some(cap) = self.annual_loss_offset_cap {
            if !(cap >= 0.0) {
                return bad(format!("annual_loss_offset_cap must be >= 0, got {cap}"));
            }
        }
        Ok(())
    }

    /// Rate applied to a realized gain given the holding period entering the step.
    pub fn gain_rate(&self, avg_holding: f64) -> f64 {
        if avg_holding < self.long_term_threshold {
            self.rate_short
        } else {
            self.rate_long
        }
    }
}

/// Markov tax state: signed position, average basis, average holding period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisState {
    pub position: f64,
    pub avg_basis: f64,
    pub avg_holding: f64,
}

impl BasisState {
    /// Flat state normalized to the given reset price.
    pub fn flat(price: f64) -> Self {
        Self { position: 0.0, avg_basis: price, avg_holding: 0.0 }
    }

    /// Total cost basis carried by the open position (negative for shorts).
    pub fn total_cost(&self) -> f64 {
        self.avg_basis * self.position
    }

    /// Advance the holding period by `days` without trading.
    pub fn aged(self, days: f64) -> Self {
        if self.position == 0.0 {
            return self;
        }
        Self { avg_holding: self.avg_holding + days, ..self }
    }
}

/// Tax and cost consequences of one step. `net` is what feeds the reward.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TaxCashflow {
    pub gain_tax: f64,
    pub loss_rebate: f64,
    pub txn_cost: f64,
    pub net: f64,
}

impl TaxCashflow {
    pub fn new(gain_tax: f64, loss_rebate: f64, txn_cost: f64) -> Self {
        Self { gain_tax, loss_rebate, txn_cost, net: loss_rebate - gain_tax - txn_cost }
    }

    /// Same step with taxes switched off: only the transaction cost survives.
    pub fn cost_only(&self) -> Self {
        Self::new(0.0, 0.0, self.txn_cost)
    }
}

/// Which arm of the basis recursion a transition falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    /// `a_t * a_{t+1} <= 0`: opened from flat, closed to flat, or flipped sides.
    Reset,
    /// `a_{t+1} < a_t < 0`: short extended.
    ShortExtend,
    /// Everything else: long extended, long reduced, short covered, or no trade.
    Otherwise,
}

pub fn branch(prev_position: f64, next_position: f64) -> Branch {
    if prev_position * next_position <= 0.0 {
        Branch::Reset
    } else if next_position < prev_position && prev_position < 0.0 {
        Branch::ShortExtend
    } else {
        Branch::Otherwise
    }
}

fn check_price(price: f64) -> Result<(), LedgerError> {
    if price > 0.0 && price.is_finite() {
        Ok(())
    } else {
        Err(LedgerError::InvalidPrice(price))
    }
}

fn check_position(position: f64) -> Result<(), LedgerError> {
    if position.is_finite() {
        Ok(())
    } else {
        Err(LedgerError::InvalidPosition(position))
    }
}

/// Average basis after moving from `prev` to `next_position` at `next_price`.
///
/// Selling part of a long or buying back part of a short releases cost in
/// proportion to the shares closed, so the per-share basis is unchanged in
/// both cases; that value is returned directly rather than recomputed so the
/// no-change case is bit-exact.
pub fn update_basis(prev: &BasisState, next_price: f64, next_position: f64) -> Result<f64, LedgerError> {
    check_price(next_price)?;
    check_position(next_position)?;
    let (a, a_next) = (prev.position, next_position);
    let basis = match branch(a, a_next) {
        Branch::Reset => return Ok(next_price),
        Branch::ShortExtend => (prev.avg_basis * a + next_price * (a_next - a)) / a_next,
        Branch::Otherwise if a > 0.0 && a_next > a => {
            // long extended; max(a, a_next) = a_next
            (prev.avg_basis * a + next_price * (a_next - a)) / a_next
        }
        Branch::Otherwise => prev.avg_basis,
    };
    if !basis.is_finite() || basis < 0.0 {
        return Err(LedgerError::Degenerate { from: a, to: a_next, what: "average basis" });
    }
    Ok(basis)
}

/// Average holding period after the same transition, given the basis that
/// [`update_basis`] produced for it.
pub fn update_holding(
    prev: &BasisState,
    next_basis: f64,
    next_position: f64,
    dt: f64,
) -> Result<f64, LedgerError> {
    check_position(next_position)?;
    let (a, a_next) = (prev.position, next_position);
    let extended = match branch(a, a_next) {
        Branch::Reset => return Ok(0.0),
        Branch::ShortExtend => true,
        Branch::Otherwise => a > 0.0 && a_next > a,
    };
    if !extended {
        return Ok(prev.avg_holding + dt);
    }
    let denom = next_basis * a_next;
    if denom == 0.0 {
        return Err(LedgerError::Degenerate { from: a, to: a_next, what: "holding period denominator" });
    }
    let holding = prev.avg_basis * a * (prev.avg_holding + dt) / denom;
    if !holding.is_finite() || holding < 0.0 {
        return Err(LedgerError::Degenerate { from: a, to: a_next, what: "average holding" });
    }
    Ok(holding)
}

/// Shares whose gain or loss is realized by moving between the two positions.
///
/// Long side: shares sold out of a long, capped at the long itself when the
/// trade flips to short. Short side: shares bought back, capped at the short
/// when the trade flips to long.
pub fn realized_quantity(prev_position: f64, next_position: f64) -> f64 {
    let (a, a_next) = (prev_position, next_position);
    let pos_part = a_next.max(0.0);
    let neg_part = (-a_next).max(0.0);
    let long_side = if a >= a_next && a >= 0.0 { a - pos_part } else { 0.0 };
    let short_side = if a <= a_next && a <= 0.0 { a + neg_part } else { 0.0 };
    long_side - short_side
}

/// True when the realization (if any) closes short shares.
fn realizes_short(prev_position: f64, next_position: f64) -> bool {
    prev_position < 0.0 && next_position > prev_position
}

/// Economic P&L realized by the transition, before tax.
pub fn realized_pnl(prev: &BasisState, next_price: f64, next_position: f64) -> f64 {
    let q = realized_quantity(prev.position, next_position);
    if realizes_short(prev.position, next_position) {
        (prev.avg_basis - next_price) * q
    } else {
        (next_price - prev.avg_basis) * q
    }
}

pub fn transaction_cost(prev: &BasisState, next_price: f64, next_position: f64, params: &TaxParams) -> f64 {
    match params.txn_cost_mode {
        CostMode::Notional => params.txn_cost_rate * next_price * (next_position - prev.position).abs(),
        CostMode::Pnl => {
            params.txn_cost_rate
                * (next_price - prev.avg_basis).abs()
                * realized_quantity(prev.position, next_position)
        }
    }
}

/// Gain tax, loss rebate and transaction cost for one step, all evaluated
/// against the state entering the step.
pub fn compute_tax(
    prev: &BasisState,
    next_price: f64,
    next_position: f64,
    params: &TaxParams,
) -> Result<TaxCashflow, LedgerError> {
    check_price(next_price)?;
    check_position(next_position)?;
    let q = realized_quantity(prev.position, next_position);
    let cost = transaction_cost(prev, next_price, next_position, params);
    if q == 0.0 {
        return Ok(TaxCashflow::new(0.0, 0.0, cost));
    }
    let basis = prev.avg_basis;
    let flip = params.short_cover_convention == ShortCoverConvention::Economic
        && realizes_short(prev.position, next_position);
    // price move in the direction the formula treats as a gain
    let up = if flip { basis - next_price } else { next_price - basis };
    let (gain_tax, loss_rebate) = if up >= 0.0 {
        (up * q * params.gain_rate(prev.avg_holding), 0.0)
    } else {
        (0.0, -up * q * params.rate_short)
    };
    Ok(TaxCashflow::new(gain_tax, loss_rebate, cost))
}

/// One full ledger transition: tax from the entering state, then the basis
/// and holding updates.
pub fn step_ledger(
    prev: &BasisState,
    next_price: f64,
    next_position: f64,
    params: &TaxParams,
) -> Result<(BasisState, TaxCashflow), LedgerError> {
    let cashflow = compute_tax(prev, next_price, next_position, params)?;
    let avg_basis = update_basis(prev, next_price, next_position)?;
    let avg_holding = update_holding(prev, avg_basis, next_position, params.dt)?;
    Ok((BasisState { position: next_position, avg_basis, avg_holding }, cashflow))
}

/// Yearly limit on rebated losses in excess of realized gains.
///
/// Within one tax year, losses are rebated in full up to the year's realized
/// gains plus `cap`; anything beyond earns nothing. Gains realized later in
/// the year do not retroactively unlock earlier denied losses.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOffsetCap {
    cap: f64,
    year_length: f64,
    elapsed: f64,
    year_gains: f64,
    year_losses: f64,
}

impl LossOffsetCap {
    pub fn new(cap: f64, year_length: f64) -> Self {
        Self { cap, year_length, elapsed: 0.0, year_gains: 0.0, year_losses: 0.0 }
    }

    /// Adjusts `cashflow` in place and advances the year clock by `dt`.
    pub fn apply(&mut self, cashflow: &mut TaxCashflow, realized_gain: f64, realized_loss: f64, rate_short: f64, dt: f64) {
        self.year_gains += realized_gain;
        if realized_loss > 0.0 {
            let room = (self.year_gains + self.cap - self.year_losses).max(0.0);
            let allowed = realized_loss.min(room);
            self.year_losses += realized_loss;
            *cashflow = TaxCashflow::new(cashflow.gain_tax, allowed * rate_short, cashflow.txn_cost);
        }
        self.elapsed += dt;
        if self.elapsed >= self.year_length {
            self.elapsed -= self.year_length;
            self.year_gains = 0.0;
            self.year_losses = 0.0;
        }
    }
}
