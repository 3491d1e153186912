//! Manufactured problems, convergence studies, the brute-force oracle and
//! run configuration.

pub mod cli;
pub mod config;
pub mod eoc;
pub mod manufactured;
pub mod oracle;
