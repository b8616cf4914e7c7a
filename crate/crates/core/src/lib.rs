//! Exact and Monte Carlo laboratory for the annealed charged-polymer
//! model on Z^d: partition functions, single-site charge integrals,
//! free-energy ladders, the collapsed/extended phase boundary, and the
//! large-deviation machinery (self-intersection local time, weakly
//! self-avoiding walk, bridges, trimmed range) behind them.

pub mod bridge;
pub mod charge;
pub mod error;
pub mod ldp;
pub mod numeric;
pub mod partition;
pub mod report;
pub mod returns;
pub mod single_site;
pub mod stream;
pub mod walk;

mod board;
mod enumerate;

pub use error::{Error, Result};
