//! Trade-log replay through the basis ledger.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use taxtrade::ledger::{step_ledger, BasisState, TaxParams};

#[derive(Debug, Clone, PartialEq)]
pub struct Trade {
    pub date: String,
    pub price: f64,
    pub target_position: f64,
    /// Trading days since the previous row; `None` means one step.
    pub elapsed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub date: String,
    pub price: f64,
    pub position_before: f64,
    pub target_position: f64,
    /// Average basis just before the trade.
    pub basis: f64,
    /// Average holding just before the trade, including the current step.
    pub holding: f64,
    pub gain_tax: f64,
    pub loss_rebate: f64,
    pub txn_cost: f64,
    pub after: BasisState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerReport {
    pub rows: Vec<ReportRow>,
    pub total_gain_tax: f64,
    pub total_loss_rebate: f64,
    pub total_txn_cost: f64,
}

pub fn read_trades(path: &Path) -> Result<Vec<Trade>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read trade log {}", path.display()))?;
    parse_trades(&text).with_context(|| format!("trade log {}", path.display()))
}

pub fn parse_trades(text: &str) -> Result<Vec<Trade>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(di), Some(pi), Some(ti)) = (col("date"), col("price"), col("target_position")) else {
        bail!("header must contain date, price, target_position");
    };
    let ei = col("elapsed");
    let mut trades = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| anyhow!("line {line}: {e}"))?;
        let field = |j: usize| rec.get(j).ok_or_else(|| anyhow!("line {line}: missing column"));
        let num = |j: usize, what: &str| -> Result<f64> {
            let s = field(j)?;
            s.parse::<f64>().map_err(|_| anyhow!("line {line}: bad {what} {s:?}"))
        };
        let elapsed = match ei {
            Some(j) if !field(j)?.is_empty() => Some(num(j, "elapsed")?),
            _ => None,
        };
        if let Some(e) = elapsed {
            if !(e >= 0.0 && e.is_finite()) {
                bail!("line {line}: elapsed must be non-negative");
            }
        }
        trades.push(Trade {
            date: field(di)?.to_string(),
            price: num(pi, "price")?,
            target_position: num(ti, "target_position")?,
            elapsed,
        });
    }
    Ok(trades)
}

/// Starts flat at the first row's price. Before each later row the state is
/// aged by `elapsed - dt`, so the ledger step itself supplies the final `dt`.
pub fn replay(trades: &[Trade], params: &TaxParams) -> Result<LedgerReport> {
    params.validate()?;
    let mut report = LedgerReport { rows: Vec::new(), total_gain_tax: 0.0, total_loss_rebate: 0.0, total_txn_cost: 0.0 };
    let Some(first) = trades.first() else {
        return Ok(report);
    };
    let mut state = BasisState::flat(first.price);
    for (i, t) in trades.iter().enumerate() {
        if i > 0 {
            let gap = t.elapsed.unwrap_or(params.dt) - params.dt;
            if gap < 0.0 {
                bail!("row {}: elapsed is shorter than one step", i + 1);
            }
            state = state.aged(gap);
        }
        let (next, cf) = step_ledger(&state, t.price, t.target_position, params).with_context(|| format!("row {}", i + 1))?;
        let holding = if state.position == 0.0 { 0.0 } else { state.avg_holding + params.dt };
        report.rows.push(ReportRow {
            date: t.date.clone(),
            price: t.price,
            position_before: state.position,
            target_position: t.target_position,
            basis: state.avg_basis,
            holding,
            gain_tax: cf.gain_tax,
            loss_rebate: cf.loss_rebate,
            txn_cost: cf.txn_cost,
            after: next,
        });
        report.total_gain_tax += cf.gain_tax;
        report.total_loss_rebate += cf.loss_rebate;
        report.total_txn_cost += cf.txn_cost;
        state = next;
    }
    Ok(report)
}

pub const REPORT_HEADER: &str = "date,price,position_before,target_position,avg_basis,holding_days,holding_years,gain_tax,loss_rebate,txn_cost,basis_after,holding_after";

impl LedgerReport {
    pub fn to_csv(&self, days_per_year: f64) -> String {
        let mut s = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.date,
                r.price,
                r.position_before,
                r.target_position,
                r.basis,
                r.holding,
                r.holding / days_per_year,
                r.gain_tax,
                r.loss_rebate,
                r.txn_cost,
                r.after.avg_basis,
                r.after.avg_holding
            )
            .unwrap();
        }
        writeln!(s, "total,,,,,,,{},{},{},,", self.total_gain_tax, self.total_loss_rebate, self.total_txn_cost).unwrap();
        s
    }
}
