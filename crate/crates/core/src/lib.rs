//! Quasi-static elasto-plastic lattice spring models written as a
//! state-dependent sweeping process and integrated with the implicit
//! catch-up scheme.

pub mod lattice;
pub mod numlin;
pub mod polyproj;
pub mod spring;
pub mod catchup;
pub mod scenarios;
pub mod sweep;
pub mod cli;
