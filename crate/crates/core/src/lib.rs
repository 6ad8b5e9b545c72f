//! Outage detection and localization for partially observable radial
//! distribution feeders.

pub mod coordinator;
pub mod eval;
pub mod feeder;
pub mod gan;
pub mod par;
pub mod sim;
pub mod window;
pub mod zones;
