//! Library surface of the triroute experiment runner; the `triroute`
//! binary is a thin wrapper over these modules.

pub mod commands;
pub mod config;
pub mod phase;
pub mod svg;
