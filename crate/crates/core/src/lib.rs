//! Supertrend indicator, long/flat backtesting and Gaussian-process Bayesian
//! optimization of the indicator's (ATR period, ATR multiplier) pair.
//!
//! Pipeline: [`market_data`] loads and splits bars, [`indicator`] computes the
//! bands, [`strategy`] turns direction flips into positions, [`backtest`]
//! compounds them into an equity curve and metric table, [`bayes_opt`] tunes
//! the parameters, and [`app`] wires it together for the CLI.

pub mod app;
pub mod backtest;
pub mod bayes_opt;
pub mod indicator;
pub mod market_data;
pub mod strategy;
