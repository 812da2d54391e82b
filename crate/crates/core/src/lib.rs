pub mod autodiff;
pub mod backtest;
pub mod cli;
pub mod error;
pub mod fgp;
pub mod icnn;
pub mod market_data;
pub mod report;
pub mod training;

pub use error::{Error, Result};
