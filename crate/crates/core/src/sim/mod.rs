//! Source, link, detector and clock simulation producing tag streams.

mod clock;
mod config;
mod detect;
mod fading;
mod run;
mod source;

use thiserror::Error;

use crate::timetag::TagError;

pub use clock::apply_clock;
pub use config::{
    db_to_transmission, AnalyzerSettings, ChannelConfig, ClockConfig, DetectorConfig, DriftStep, FadingModel, LinkSetup,
    SourceConfig, GPS_DRIFT_BOUND, MAX_DRIFT, MAX_PAIR_PROB,
};
pub use detect::{apply_channel_and_detect, DetectionEvent, DetectorChain, Origin, Photon, Transmission, MIN_DEAD_TIME_S};
pub use fading::link_efficiency_series;
pub use run::{simulate_run, GroundTruth, OriginCounts, SimOutput};
pub use source::{measure_pair, pulse_count, sample_pair_emissions, EmissionSampler, PairEmission, PairMeasurer};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("pair probability per pulse {0} must be in [0, 0.1)")]
    PairProbTooHigh(f64),
    #[error("duration {0} s must be finite and >= 0")]
    InvalidDuration(f64),
    #[error(transparent)]
    Tag(#[from] TagError),
}
