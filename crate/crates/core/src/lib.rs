//! Simulation and analysis of a long-distance entangled-photon link:
//! pair generation, lossy detection with drifting clocks, time tagging,
//! cross-correlation synchronization, CHSH evaluation and BBM92 key
//! distillation.

pub mod analysis;
pub mod bell;
pub mod physics;
pub mod qkd;
pub mod scenario;
pub mod sim;
pub mod sync;
pub mod timetag;
