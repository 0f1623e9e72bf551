//! Config parsing and the command implementations behind the `asyncnet`
//! binary. Everything here returns values instead of printing so the
//! binary, the bindings and the tests share one code path.

mod commands;
mod config;

pub use commands::*;
pub use config::*;
