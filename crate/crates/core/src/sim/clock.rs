use super::config::ClockConfig;
use super::detect::DetectionEvent;
use crate::physics::PolarizationChannel;

/// Maps events onto a party's local timescale. Order is preserved because
/// the clock map is strictly increasing.
pub fn apply_clock(events: &[DetectionEvent], clock: &ClockConfig) -> Vec<(f64, PolarizationChannel)> {
    events.iter().map(|e| (clock.local_time(e.true_time_s), e.channel)).collect()
}
