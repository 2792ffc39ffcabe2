//! Clock offset and drift recovery, coincidence extraction, histograms and
//! pulse gating.

mod correlate;
mod gate;
mod histogram;
mod matcher;
mod tracker;

use thiserror::Error;

pub use correlate::{estimate_offset, OffsetEstimate, OffsetSearch};
pub use gate::{estimate_pulse_phase, pulse_gate, GateSide, PulsePhase, RAYLEIGH_THRESHOLD};
pub use histogram::{analyze_peak_comb, coincidence_histogram, CoincidenceHistogram, PeakComb};
pub use matcher::{
    brute_force_coincidences, find_coincidences, CoincidenceMatcher, CoincidencePair, WINDOW_NARROW_S, WINDOW_WIDE_S,
};
pub use tracker::{track_drift, ClockSegment, ClockSolution, Knot, Tracker};

/// Default drift-tracking segment length.
pub const DEFAULT_SEGMENT_S: f64 = 10.0;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SyncError {
    #[error("cannot correlate an empty stream")]
    EmptyStream,
    #[error("no significant correlation peak (confidence {confidence:.2})")]
    NoSignificantPeak { confidence: f64 },
    #[error("lock lost in segment {segment} (confidence {confidence:.2})")]
    LockLost { segment: u64, confidence: f64 },
    #[error("no pulse structure in tag phases (Rayleigh Z = {rayleigh_z:.2})")]
    NoPulseStructure { rayleigh_z: f64 },
    #[error("tags fed out of order")]
    Unsorted,
    #[error("invalid {0}")]
    InvalidParameter(&'static str),
}
