//! Net present value of costs and outcomes in multistate models from
//! right-censored event histories.

pub mod cli;
pub mod cost_estimators;
pub mod cox;
pub mod design;
pub mod error;
pub mod event_history;
pub mod io;
pub mod linalg;
pub mod markov;
pub mod npv;
pub mod regression;
pub mod simulator;
pub mod stepfn;
pub mod study;
pub mod survival;

pub use error::{Error, Result};
