//! Wilson line expectations in the `Z_m × Z_n` lattice Higgs model, computed by exact
//! enumeration, transfer matrices, high-temperature expansion and truncated cluster
//! expansions, together with the perimeter-law constants those expansions produce.

pub mod asymptotics;
pub mod checks;
pub mod cli;
pub mod clusters;
pub mod dec;
pub mod error;
pub mod gaugemodel;
pub mod hte;
pub mod mc;
pub mod oracle;

pub use error::{Error, Result};
