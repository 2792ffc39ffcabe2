use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::FadingModel;
use super::SimError;

/// Link loss in dB (positive = attenuation), one sample every `dt` seconds.
///
/// The deviation from `mean_loss_db` is a stationary Ornstein-Uhlenbeck
/// process, so transmission is log-normal with the model's correlation time.
/// With a tracking-off ramp the beam only ever walks further off target:
/// the loss follows the running maximum of the same process plus the ramp.
pub fn link_efficiency_series(
    fading: &FadingModel,
    mean_loss_db: f64,
    duration_s: f64,
    dt: f64,
    seed: u64,
) -> Result<Vec<f64>, SimError> {
    fading.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SimError::InvalidConfig { field: "dt", reason: "must be positive".into() });
    }
    if !(duration_s >= 0.0 && duration_s.is_finite()) {
        return Err(SimError::InvalidDuration(duration_s));
    }
    let n = (duration_s / dt).ceil() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = (-dt / fading.correlation_time_s).exp();
    let kick = fading.sigma_db * (1.0 - a * a).sqrt();
    let z0: f64 = StandardNormal.sample(&mut rng);
    let mut x = fading.sigma_db * z0;
    let mut worst = f64::NEG_INFINITY;
    let ramp = fading.tracking_off_ramp_db_per_s;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        if k > 0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            x = a * x + kick * z;
        }
        let loss = if ramp > 0.0 {
            worst = worst.max(x);
            mean_loss_db + worst + ramp * k as f64 * dt
        } else {
            mean_loss_db + x
        };
        out.push(loss);
    }
    Ok(out)
}
