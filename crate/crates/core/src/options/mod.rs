//! Black-Scholes pricing and the market-neutral straddle backtest driven by
//! a volatility forecaster.

mod backtest;
mod pricing;

pub use backtest::{
    future_vol, run_backtest, select_trades, straddle_value, BacktestConfig, BacktestReport,
    BacktestSummary, Candidate, DayRecord, Direction, OracleVol, RandomClassVol, StraddlePosition,
    TradeSelection, VolForecaster,
};
pub use pricing::{bs_price, estimate_vol, lower_bound, norm_cdf, OptionKind, OptionQuote};
