pub mod actions;
pub mod assist;
pub mod bench;
pub mod control;
pub mod env;
pub mod error;
pub mod grid;
pub mod policy;
pub mod redispatch;
pub mod scenario;
pub mod search;

/// Maximum line load below which the grid counts as safe.
pub const SAFE_THRESHOLD: f64 = 0.98;
