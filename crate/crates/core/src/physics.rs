//! Singlet-state polarization statistics with imperfect visibility.
//!
//! This is the analytic model the simulator samples from and that every
//! Monte-Carlo test compares against. Angles are polarization analyzer
//! orientations in degrees; analyzers are π-periodic so every angle is kept in
//! `[0, 180)`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("visibility {name} = {value} outside [0, 1]")]
    VisibilityOutOfRange { name: &'static str, value: f64 },
    #[error("analyzer angle {0} is not finite")]
    NonFiniteAngle(f64),
}

/// Polarization analyzer orientation, normalized into `[0, 180)` degrees.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AnalyzerAngle(f64);

impl AnalyzerAngle {
    pub fn new(degrees: f64) -> Result<Self, PhysicsError> {
        if !degrees.is_finite() {
            return Err(PhysicsError::NonFiniteAngle(degrees));
        }
        let mut d = degrees.rem_euclid(180.0);
        // rem_euclid can round up to exactly 180.0 for tiny negative inputs
        if d >= 180.0 {
            d = 0.0;
        }
        Ok(Self(d))
    }

    pub const fn zero() -> Self {
        Self(0.0)
    }

    pub fn degrees(self) -> f64 {
        self.0
    }

    pub fn radians(self) -> f64 {
        self.0.to_radians()
    }

    fn is_near(self, target: f64) -> bool {
        (self.0 - target).abs() < 1e-9
    }

    fn is_rectilinear(self) -> bool {
        self.is_near(0.0) || self.is_near(90.0)
    }

    fn is_diagonal(self) -> bool {
        self.is_near(45.0) || self.is_near(135.0)
    }
}

impl TryFrom<f64> for AnalyzerAngle {
    type Error = PhysicsError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<AnalyzerAngle> for f64 {
    fn from(a: AnalyzerAngle) -> f64 {
        a.0
    }
}

impl fmt::Display for AnalyzerAngle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}°", self.0)
    }
}

/// Output port of a two-channel polarizing analyzer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Plus,
    Minus,
}

impl Outcome {
    pub const BOTH: [Outcome; 2] = [Outcome::Plus, Outcome::Minus];

    /// +1 for `Plus`, -1 for `Minus`.
    pub fn sign(self) -> f64 {
        match self {
            Outcome::Plus => 1.0,
            Outcome::Minus => -1.0,
        }
    }
}

/// Analyzer basis picked by the passive 50/50 beam splitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    /// H/V, nominally 0°.
    Hv,
    /// ±45°, nominally 45°.
    Diag,
}

impl Basis {
    pub const BOTH: [Basis; 2] = [Basis::Hv, Basis::Diag];

    pub fn nominal_angle(self) -> AnalyzerAngle {
        match self {
            Basis::Hv => AnalyzerAngle(0.0),
            Basis::Diag => AnalyzerAngle(45.0),
        }
    }
}

/// One of the four detectors behind a passive-basis-choice analyzer.
/// The discriminant is the channel id carried in a time tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum PolarizationChannel {
    H = 0,
    V = 1,
    /// +45°
    P = 2,
    /// −45°
    M = 3,
}

impl PolarizationChannel {
    pub const ALL: [PolarizationChannel; 4] =
        [PolarizationChannel::H, PolarizationChannel::V, PolarizationChannel::P, PolarizationChannel::M];

    pub fn new(basis: Basis, outcome: Outcome) -> Self {
        match (basis, outcome) {
            (Basis::Hv, Outcome::Plus) => Self::H,
            (Basis::Hv, Outcome::Minus) => Self::V,
            (Basis::Diag, Outcome::Plus) => Self::P,
            (Basis::Diag, Outcome::Minus) => Self::M,
        }
    }

    /// Channels 4..=15 are valid tag channels but not analyzer ports.
    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn basis(self) -> Basis {
        match self {
            Self::H | Self::V => Basis::Hv,
            Self::P | Self::M => Basis::Diag,
        }
    }

    pub fn outcome(self) -> Outcome {
        match self {
            Self::H | Self::P => Outcome::Plus,
            Self::V | Self::M => Outcome::Minus,
        }
    }
}

impl fmt::Display for PolarizationChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::H => "H",
            Self::V => "V",
            Self::P => "+",
            Self::M => "-",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityModel {
    pub v_hv: f64,
    pub v_diag: f64,
}

impl VisibilityModel {
    pub fn new(v_hv: f64, v_diag: f64) -> Result<Self, PhysicsError> {
        let m = Self { v_hv, v_diag };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        for (name, value) in [("v_hv", self.v_hv), ("v_diag", self.v_diag)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(PhysicsError::VisibilityOutOfRange { name, value });
            }
        }
        Ok(())
    }
}

/// The four analyzer settings of a CHSH test, `{Φ_A, Φ'_A, Φ_B, Φ'_B}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshSettings {
    pub a: AnalyzerAngle,
    pub a_prime: AnalyzerAngle,
    pub b: AnalyzerAngle,
    pub b_prime: AnalyzerAngle,
}

impl ChshSettings {
    /// `{0°, 45°, 22.5°, 67.5°}`, where the singlet reaches |S| = 2√2.
    pub fn canonical() -> Self {
        Self {
            a: AnalyzerAngle(0.0),
            a_prime: AnalyzerAngle(45.0),
            b: AnalyzerAngle(22.5),
            b_prime: AnalyzerAngle(67.5),
        }
    }

    pub fn from_degrees(a: f64, a_prime: f64, b: f64, b_prime: f64) -> Result<Self, PhysicsError> {
        Ok(Self {
            a: AnalyzerAngle::new(a)?,
            a_prime: AnalyzerAngle::new(a_prime)?,
            b: AnalyzerAngle::new(b)?,
            b_prime: AnalyzerAngle::new(b_prime)?,
        })
    }

    /// Setting pairs in the order the CHSH sum consumes them:
    /// `(a,b), (a,b'), (a',b), (a',b')`.
    pub fn pairs(&self) -> [(AnalyzerAngle, AnalyzerAngle); 4] {
        [
            (self.a, self.b),
            (self.a, self.b_prime),
            (self.a_prime, self.b),
            (self.a_prime, self.b_prime),
        ]
    }
}

/// Polarization-entangled pair close to |ψ−⟩, dephased per basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingletModel {
    pub visibility: VisibilityModel,
}

impl SingletModel {
    pub fn new(visibility: VisibilityModel) -> Self {
        Self { visibility }
    }

    /// Perfect singlet, V = 1 in every basis.
    pub fn ideal() -> Self {
        Self {
            visibility: VisibilityModel { v_hv: 1.0, v_diag: 1.0 },
        }
    }

    /// Visibility applying to a setting pair. Basis-aligned settings use the
    /// measured visibility of that basis; anything else uses the geometric
    /// mean of the two.
    pub fn effective_visibility(&self, a: AnalyzerAngle, b: AnalyzerAngle) -> f64 {
        let v = self.visibility;
        if a.is_rectilinear() && b.is_rectilinear() {
            v.v_hv
        } else if a.is_diagonal() && b.is_diagonal() {
            v.v_diag
        } else {
            (v.v_hv * v.v_diag).sqrt()
        }
    }

    /// P(i, j | a, b) = ¼ (1 − s_ij · V · cos 2(a − b)), with s_ij = +1 for
    /// equal outcomes.
    pub fn joint_probability(&self, a: AnalyzerAngle, b: AnalyzerAngle, i: Outcome, j: Outcome) -> f64 {
        let v = self.effective_visibility(a, b);
        let s = i.sign() * j.sign();
        0.25 * (1.0 - s * v * (2.0 * (a.radians() - b.radians())).cos())
    }

    /// The four joint probabilities in `[++, +-, -+, --]` order.
    pub fn joint_distribution(&self, a: AnalyzerAngle, b: AnalyzerAngle) -> [f64; 4] {
        use Outcome::*;
        [
            self.joint_probability(a, b, Plus, Plus),
            self.joint_probability(a, b, Plus, Minus),
            self.joint_probability(a, b, Minus, Plus),
            self.joint_probability(a, b, Minus, Minus),
        ]
    }

    /// E(a, b) = −V · cos 2(a − b).
    pub fn correlation_expectation(&self, a: AnalyzerAngle, b: AnalyzerAngle) -> f64 {
        -self.effective_visibility(a, b) * (2.0 * (a.radians() - b.radians())).cos()
    }

    /// S = E(a,b) − E(a,b') + E(a',b) + E(a',b').
    pub fn ideal_chsh(&self, settings: &ChshSettings) -> f64 {
        let [e1, e2, e3, e4] = settings.pairs().map(|(a, b)| self.correlation_expectation(a, b));
        e1 - e2 + e3 + e4
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn deg(d: f64) -> AnalyzerAngle {
        AnalyzerAngle::new(d).unwrap()
    }

    fn link_model() -> SingletModel {
        SingletModel::new(VisibilityModel::new(0.98, 0.96).unwrap())
    }

    #[test]
    fn channel_ids_round_trip() {
        for c in PolarizationChannel::ALL {
            assert_eq!(PolarizationChannel::from_id(c.id()), Some(c));
            assert_eq!(PolarizationChannel::new(c.basis(), c.outcome()), c);
        }
        assert_eq!(PolarizationChannel::from_id(4), None);
    }

    #[test]
    fn angles_normalize_into_half_turn() {
        assert_eq!(deg(180.0).degrees(), 0.0);
        assert_eq!(deg(-45.0).degrees(), 135.0);
        assert_eq!(deg(400.0).degrees(), 40.0);
        assert!(deg(-1e-18).degrees() < 180.0);
        assert!(AnalyzerAngle::new(f64::NAN).is_err());
    }

    #[test]
    fn visibility_range_checked() {
        assert!(VisibilityModel::new(1.01, 0.5).is_err());
        assert!(VisibilityModel::new(0.5, -0.1).is_err());
    }

    #[test]
    fn effective_visibility_examples() {
        let m = link_model();
        assert_eq!(m.effective_visibility(deg(0.0), deg(0.0)), 0.98);
        assert_eq!(m.effective_visibility(deg(90.0), deg(0.0)), 0.98);
        assert_eq!(m.effective_visibility(deg(45.0), deg(135.0)), 0.96);
        let mixed = m.effective_visibility(deg(0.0), deg(22.5));
        assert!((mixed - (0.98f64 * 0.96).sqrt()).abs() < 1e-15);
        assert!((mixed - 0.9699).abs() < 1e-4);
        let ideal = SingletModel::ideal();
        assert_eq!(ideal.effective_visibility(deg(12.0), deg(77.0)), 1.0);
    }

    #[test]
    fn joint_probability_examples() {
        use Outcome::*;
        let ideal = SingletModel::ideal();
        assert!(ideal.joint_probability(deg(0.0), deg(0.0), Plus, Plus).abs() < 1e-15);
        let p = ideal.joint_probability(deg(0.0), deg(22.5), Plus, Plus);
        assert!((p - 0.25 * (1.0 - std::f64::consts::FRAC_1_SQRT_2)).abs() < 1e-12);
        assert!((p - 0.07322).abs() < 1e-5);
        let m = SingletModel::new(VisibilityModel::new(0.96, 0.96).unwrap());
        let p = m.joint_probability(deg(45.0), deg(45.0), Plus, Minus);
        assert!((p - 0.49).abs() < 1e-12);
    }

    #[test]
    fn correlation_examples() {
        let ideal = SingletModel::ideal();
        assert!((ideal.correlation_expectation(deg(0.0), deg(0.0)) + 1.0).abs() < 1e-12);
        assert!((ideal.correlation_expectation(deg(0.0), deg(22.5)) + 0.70711).abs() < 1e-5);
        assert!((ideal.correlation_expectation(deg(0.0), deg(67.5)) - 0.70711).abs() < 1e-5);
    }

    #[test]
    fn chsh_examples() {
        let c = ChshSettings::canonical();
        let s = SingletModel::ideal().ideal_chsh(&c);
        assert!((s.abs() - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!((s.abs() - 2.82843).abs() < 1e-5);
        let dephased = SingletModel::new(VisibilityModel::new(0.0, 0.0).unwrap());
        assert_eq!(dephased.ideal_chsh(&c), 0.0);
        let partial = SingletModel::new(VisibilityModel::new(0.887, 0.887).unwrap());
        let s = partial.ideal_chsh(&c).abs();
        assert!((s - 2.0 * 2f64.sqrt() * 0.887).abs() < 1e-12);
        assert!((s - 2.509).abs() < 1e-3);
    }

    #[test]
    fn chsh_bounded_over_random_settings() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let v = VisibilityModel::new(rng.random(), rng.random()).unwrap();
            let m = SingletModel::new(v);
            let c = ChshSettings::from_degrees(
                rng.random_range(0.0..180.0),
                rng.random_range(0.0..180.0),
                rng.random_range(0.0..180.0),
                rng.random_range(0.0..180.0),
            )
            .unwrap();
            let bound = 2.0 * 2f64.sqrt() * v.v_hv.max(v.v_diag);
            assert!(m.ideal_chsh(&c).abs() <= bound + 1e-12);
        }
    }

    fn arb_model() -> impl Strategy<Value = SingletModel> {
        (0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(h, d)| SingletModel::new(VisibilityModel::new(h, d).unwrap()))
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(m in arb_model(), a in 0.0..180.0f64, b in 0.0..180.0f64) {
            let total: f64 = m.joint_distribution(deg(a), deg(b)).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn correlation_matches_signed_sum(m in arb_model(), a in 0.0..180.0f64, b in 0.0..180.0f64) {
            let (a, b) = (deg(a), deg(b));
            let mut sum = 0.0;
            for i in Outcome::BOTH {
                for j in Outcome::BOTH {
                    sum += i.sign() * j.sign() * m.joint_probability(a, b, i, j);
                }
            }
            prop_assert!((sum - m.correlation_expectation(a, b)).abs() < 1e-12);
        }

        #[test]
        fn half_turn_periodic(m in arb_model(), a in 0.0..180.0f64, b in 0.0..180.0f64) {
            let p0 = m.joint_distribution(deg(a), deg(b));
            let p1 = m.joint_distribution(deg(a + 180.0), deg(b + 180.0));
            for k in 0..4 {
                prop_assert!((p0[k] - p1[k]).abs() < 1e-12);
            }
        }

        #[test]
        fn exchange_symmetric(m in arb_model(), a in 0.0..180.0f64, b in 0.0..180.0f64) {
            for i in Outcome::BOTH {
                for j in Outcome::BOTH {
                    let lhs = m.joint_probability(deg(a), deg(b), i, j);
                    let rhs = m.joint_probability(deg(b), deg(a), j, i);
                    prop_assert!((lhs - rhs).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn ideal_matches_sine_squared_law(a in 0.0..180.0f64, b in 0.0..180.0f64) {
            let p = SingletModel::ideal().joint_probability(deg(a), deg(b), Outcome::Plus, Outcome::Plus);
            let expected = 0.5 * (a.to_radians() - b.to_radians()).sin().powi(2);
            prop_assert!((p - expected).abs() < 1e-12);
            prop_assert!((-1e-15..=0.5 + 1e-15).contains(&p));
        }
    }
}
