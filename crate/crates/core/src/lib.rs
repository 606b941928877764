//! D-vine copula quantile regression for mixed discrete-continuous data.

pub mod bicop;
pub mod dvine;
pub mod error;
pub mod margins;
pub mod mixedpair;
pub mod npcop;
pub mod optim;
pub mod simkit;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
