pub mod bench;
pub mod config;
pub mod dataset;
pub mod em;
pub mod eval;
pub mod error;
pub mod fitted;
pub mod hawkes;
pub mod kernel;
pub mod layout;
pub mod mle;
pub mod optim;
pub mod pg;
pub mod quadrature;
pub mod rates;
pub mod registry;
pub mod report;
pub mod scenario;
pub mod sgp;
pub mod vi;

pub use error::{Error, Result};
