//! Reproducible synthetic market data generated by the model itself.

use crate::calibration::{index_spread_analytic, x0s_from_cds};
use crate::error::Result;
use crate::market_data::{build_schedule, CdsQuote, IndexQuote, MarketEnv, BP};
use crate::model::ModelParams;

/// `n` constituents with five-year spreads spread geometrically between
/// `low_bp` and `high_bp`.
pub fn portfolio(n: usize, low_bp: f64, high_bp: f64) -> Result<Vec<CdsQuote>> {
    (0..n)
        .map(|k| {
            let u = if n > 1 {
                k as f64 / (n - 1) as f64
            } else {
                0.0
            };
            CdsQuote::from_bp(format!("NAME{k:03}"), low_bp * (high_bp / low_bp).powf(u))
        })
        .collect()
}

/// 125 names between 20bp and 90bp, tight enough to resemble an investment
/// grade index before the credit crunch.
pub fn pre_crunch_portfolio() -> Vec<CdsQuote> {
    portfolio(125, 20.0, 90.0).unwrap()
}

/// Index quotes priced by the model at `params` for the given maturities,
/// with a fixed coupon of `coupon_bp`.
pub fn index_quotes(
    portfolio: &[CdsQuote],
    params: &ModelParams,
    env: &MarketEnv,
    maturities: &[f64],
    coupon_bp: f64,
    frequency: u32,
) -> Result<Vec<IndexQuote>> {
    let x0s = x0s_from_cds(portfolio, params, env, frequency)?;
    maturities
        .iter()
        .map(|&m| {
            let s = index_spread_analytic(&x0s, params, &build_schedule(0.0, m, frequency)?, env);
            IndexQuote::from_bp(m, coupon_bp, s / BP)
        })
        .collect()
}
