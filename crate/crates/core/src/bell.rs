//! Correlation coefficients, the CHSH parameter and its Poissonian error.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics::{AnalyzerAngle, Basis, ChshSettings, Outcome, PolarizationChannel};
use crate::sync::CoincidencePair;

#[derive(Debug, Error, PartialEq)]
pub enum BellError {
    #[error("no coincidences at setting ({a}, {b}); correlation undefined")]
    EmptySetting { a: AnalyzerAngle, b: AnalyzerAngle },
}

/// Coincidence counts at one analyzer setting pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettingCounts {
    pub a: AnalyzerAngle,
    pub b: AnalyzerAngle,
    pub n_pp: u64,
    pub n_pm: u64,
    pub n_mp: u64,
    pub n_mm: u64,
}

impl SettingCounts {
    pub fn new(a: AnalyzerAngle, b: AnalyzerAngle, counts: [u64; 4]) -> Self {
        Self { a, b, n_pp: counts[0], n_pm: counts[1], n_mp: counts[2], n_mm: counts[3] }
    }

    pub fn total(&self) -> u64 {
        self.n_pp + self.n_pm + self.n_mp + self.n_mm
    }

    fn add(&mut self, a: Outcome, b: Outcome) {
        match (a, b) {
            (Outcome::Plus, Outcome::Plus) => self.n_pp += 1,
            (Outcome::Plus, Outcome::Minus) => self.n_pm += 1,
            (Outcome::Minus, Outcome::Plus) => self.n_mp += 1,
            (Outcome::Minus, Outcome::Minus) => self.n_mm += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub e_value: f64,
    pub sigma: f64,
}

impl Correlation {
    pub fn new(e_value: f64, sigma: f64) -> Self {
        Self { e_value, sigma }
    }
}

/// `E = (N++ + N-- - N+- - N-+) / N` with the first-order Poisson error.
///
/// With every cell non-zero the propagated error reduces to
/// `sqrt((1 - E²) / N)`; otherwise the full sum over cells is used.
pub fn correlation_coefficient(c: &SettingCounts) -> Result<Correlation, BellError> {
    let n = c.total();
    if n == 0 {
        return Err(BellError::EmptySetting { a: c.a, b: c.b });
    }
    let nf = n as f64;
    let same = (c.n_pp + c.n_mm) as f64;
    let diff = (c.n_pm + c.n_mp) as f64;
    let e = (same - diff) / nf;
    let sigma = if [c.n_pp, c.n_pm, c.n_mp, c.n_mm].iter().all(|&x| x > 0) {
        ((1.0 - e * e) / nf).sqrt()
    } else {
        // dE/dN_same = 2 N_diff / N², dE/dN_diff = -2 N_same / N²
        let d_same = 2.0 * diff / (nf * nf);
        let d_diff = 2.0 * same / (nf * nf);
        (d_same * d_same * same + d_diff * d_diff * diff).sqrt()
    };
    Ok(Correlation { e_value: e, sigma })
}

/// Signs applied to the four correlations, in the order
/// E(a,b), E(a,b'), E(a',b), E(a',b').
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignPattern(pub [i8; 4]);

impl SignPattern {
    /// `S = E(a,b) - E(a,b') + E(a',b) + E(a',b')`.
    pub const STANDARD: SignPattern = SignPattern([1, -1, 1, 1]);

    /// The four CHSH patterns with a single minus sign.
    pub fn all() -> [SignPattern; 4] {
        [SignPattern([-1, 1, 1, 1]), SignPattern::STANDARD, SignPattern([1, 1, -1, 1]), SignPattern([1, 1, 1, -1])]
    }
}

impl Default for SignPattern {
    fn default() -> Self {
        Self::STANDARD
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshResult {
    /// Signed S as combined.
    pub s_value: f64,
    pub sigma_s: f64,
    /// `(|S| - 2) / σ_S`.
    pub violation_sigmas: f64,
}

impl ChshResult {
    pub fn abs_s(&self) -> f64 {
        self.s_value.abs()
    }
}

pub fn chsh_s(e: [Correlation; 4], pattern: SignPattern) -> ChshResult {
    let s: f64 = e.iter().zip(pattern.0).map(|(c, sign)| sign as f64 * c.e_value).sum();
    let sigma = e.iter().map(|c| c.sigma * c.sigma).sum::<f64>().sqrt();
    let violation = if sigma > 0.0 { (s.abs() - 2.0) / sigma } else { f64::INFINITY.copysign(s.abs() - 2.0) };
    ChshResult { s_value: s, sigma_s: sigma, violation_sigmas: violation }
}

/// Which analyzer angles each basis combination realizes. Built from the
/// two parties' analyzer orientations for a CHSH run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingMap {
    entries: Vec<((Basis, Basis), (AnalyzerAngle, AnalyzerAngle))>,
}

impl SettingMap {
    pub fn new(entries: Vec<((Basis, Basis), (AnalyzerAngle, AnalyzerAngle))>) -> Self {
        Self { entries }
    }

    /// Alice's H/V port at `a`, diagonal at `a'`; Bob's at `b` and `b'`.
    /// Order follows the CHSH terms.
    pub fn chsh(settings: &ChshSettings) -> Self {
        Self::new(vec![
            ((Basis::Hv, Basis::Hv), (settings.a, settings.b)),
            ((Basis::Hv, Basis::Diag), (settings.a, settings.b_prime)),
            ((Basis::Diag, Basis::Hv), (settings.a_prime, settings.b)),
            ((Basis::Diag, Basis::Diag), (settings.a_prime, settings.b_prime)),
        ])
    }

    fn lookup(&self, bases: (Basis, Basis)) -> Option<usize> {
        self.entries.iter().position(|(k, _)| *k == bases)
    }
}

/// Coincidences partitioned by setting, plus those the map does not cover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub settings: Vec<SettingCounts>,
    /// Pairs in basis combinations absent from the map.
    pub unmapped: u64,
    /// Pairs with a tag on a channel that is not an analyzer port.
    pub foreign_channel: u64,
}

impl Tally {
    pub fn total(&self) -> u64 {
        self.settings.iter().map(|s| s.total()).sum::<u64>() + self.unmapped + self.foreign_channel
    }
}

pub fn tally_coincidences(pairs: &[CoincidencePair], map: &SettingMap) -> Tally {
    let mut settings: Vec<SettingCounts> =
        map.entries.iter().map(|(_, (a, b))| SettingCounts::new(*a, *b, [0; 4])).collect();
    let (mut unmapped, mut foreign) = (0, 0);
    for p in pairs {
        let (Some(ca), Some(cb)) = (PolarizationChannel::from_id(p.alice.channel()), PolarizationChannel::from_id(p.bob.channel()))
        else {
            foreign += 1;
            continue;
        };
        match map.lookup((ca.basis(), cb.basis())) {
            Some(i) => settings[i].add(ca.outcome(), cb.outcome()),
            None => unmapped += 1,
        }
    }
    Tally { settings, unmapped, foreign_channel: foreign }
}

/// Per-setting correlations and the combined S.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BellReport {
    pub counts: [SettingCounts; 4],
    pub correlations: [Correlation; 4],
    pub chsh: ChshResult,
    pub unmapped: u64,
}

impl BellReport {
    pub fn from_tally(tally: &Tally, pattern: SignPattern) -> Result<Self, BellError> {
        let counts: [SettingCounts; 4] = tally.settings[..4].try_into().expect("four CHSH settings");
        let mut correlations = [Correlation::new(0.0, 0.0); 4];
        for (c, s) in correlations.iter_mut().zip(&counts) {
            *c = correlation_coefficient(s)?;
        }
        Ok(Self { counts, correlations, chsh: chsh_s(correlations, pattern), unmapped: tally.unmapped })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|c| c.total()).sum()
    }

    /// `setting_a,setting_b,E,sigma,n_pp,n_pm,n_mp,n_mm` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("phi_a_deg,phi_b_deg,e,sigma,n_pp,n_pm,n_mp,n_mm\n");
        for (c, e) in self.counts.iter().zip(&self.correlations) {
            writeln!(
                s,
                "{},{},{:.6},{:.6},{},{},{},{}",
                c.a.degrees(),
                c.b.degrees(),
                e.e_value,
                e.sigma,
                c.n_pp,
                c.n_pm,
                c.n_mp,
                c.n_mm
            )
            .unwrap();
        }
        s
    }

    /// Key/value summary for machine consumption.
    pub fn to_toml(&self) -> String {
        let mut m = BTreeMap::new();
        m.insert("s", self.chsh.s_value);
        m.insert("abs_s", self.chsh.abs_s());
        m.insert("sigma_s", self.chsh.sigma_s);
        m.insert("violation_sigmas", self.chsh.violation_sigmas);
        m.insert("coincidences", self.total() as f64);
        toml::to_string(&m).expect("plain table")
    }
}

impl fmt::Display for BellReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>16}", "")?;
        for c in &self.counts {
            write!(f, " {:>16}", format!("E({}, {})", c.a, c.b))?;
        }
        writeln!(f)?;
        write!(f, "{:>16}", "correlation")?;
        for e in &self.correlations {
            write!(f, " {:>16}", format!("{:+.3} ± {:.3}", e.e_value, e.sigma))?;
        }
        writeln!(f)?;
        write!(f, "{:>16}", "coincidences")?;
        for c in &self.counts {
            write!(f, " {:>16}", c.total())?;
        }
        writeln!(f)?;
        writeln!(
            f,
            "S = {:+.3} ± {:.3}   |S| = {:.3}   violation = {:.1} σ   ({} coincidences, {} unmapped)",
            self.chsh.s_value,
            self.chsh.sigma_s,
            self.chsh.abs_s(),
            self.chsh.violation_sigmas,
            self.total(),
            self.unmapped
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{SingletModel, VisibilityModel};
    use crate::timetag::TimeTag;
    use proptest::prelude::*;

    fn counts(n: [u64; 4]) -> SettingCounts {
        SettingCounts::new(AnalyzerAngle::zero(), AnalyzerAngle::zero(), n)
    }

    #[test]
    fn perfect_correlation_has_no_error() {
        let c = correlation_coefficient(&counts([100, 0, 0, 100])).unwrap();
        assert_eq!(c.e_value, 1.0);
        assert_eq!(c.sigma, 0.0);
    }

    #[test]
    fn uniform_counts_are_uncorrelated() {
        let c = correlation_coefficient(&counts([25, 25, 25, 25])).unwrap();
        assert_eq!(c.e_value, 0.0);
        assert!((c.sigma - 0.1).abs() < 1e-15);
    }

    #[test]
    fn empty_setting_is_an_error() {
        assert!(correlation_coefficient(&counts([0; 4])).is_err());
    }

    #[test]
    fn zero_cell_uses_full_propagation() {
        // N_same = 30, N_diff = 10 with one empty cell: sigma² = 4·N_s·N_d/N³
        let c = correlation_coefficient(&counts([30, 10, 0, 0])).unwrap();
        let expect = (4.0 * 30.0 * 10.0 / 40f64.powi(3)).sqrt();
        assert!((c.sigma - expect).abs() < 1e-15);
        assert!((c.sigma - ((1.0 - 0.25) / 40.0f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ideal_correlations_give_tsirelson_bound() {
        for v in [1.0, 0.96, 0.887, 0.5, 0.0] {
            let m = SingletModel::new(VisibilityModel::new(v, v).unwrap());
            let st = ChshSettings::canonical();
            let e = st.pairs().map(|(a, b)| Correlation::new(m.correlation_expectation(a, b), 0.0));
            let r = chsh_s(e, SignPattern::STANDARD);
            assert!((r.abs_s() - 2.0 * 2f64.sqrt() * v).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_correlations_do_not_violate() {
        let e = [Correlation::new(0.0, 0.1); 4];
        let r = chsh_s(e, SignPattern::STANDARD);
        assert_eq!(r.s_value, 0.0);
        assert!(r.violation_sigmas < 0.0);
    }

    #[test]
    fn only_standard_pattern_is_maximal_at_canonical_settings() {
        let m = SingletModel::ideal();
        let e = ChshSettings::canonical().pairs().map(|(a, b)| Correlation::new(m.correlation_expectation(a, b), 0.0));
        for p in SignPattern::all() {
            let s = chsh_s(e, p).abs_s();
            let expect = if p == SignPattern::STANDARD { 2.0 * 2f64.sqrt() } else { 0.0 };
            assert!((s - expect).abs() < 1e-12, "{p:?}: {s}");
        }
    }

    #[test]
    fn tally_partitions_everything() {
        let tag = |c: u8| TimeTag::from_parts(c, 0).unwrap();
        let mk = |a: u8, b: u8| CoincidencePair { alice: tag(a), bob: tag(b), residual_s: 0.0, alice_index: 0, bob_index: 0 };
        let pairs = vec![mk(0, 1), mk(2, 3), mk(0, 2), mk(7, 0), mk(1, 1)];
        let map = SettingMap::new(vec![((Basis::Hv, Basis::Hv), (AnalyzerAngle::zero(), AnalyzerAngle::zero()))]);
        let t = tally_coincidences(&pairs, &map);
        assert_eq!(t.settings[0].total(), 2);
        assert_eq!(t.settings[0].n_pm, 1);
        assert_eq!(t.settings[0].n_mm, 1);
        assert_eq!(t.unmapped, 2);
        assert_eq!(t.foreign_channel, 1);
        assert_eq!(t.total(), pairs.len() as u64);
    }

    #[test]
    fn empty_tally_has_four_zero_settings() {
        let t = tally_coincidences(&[], &SettingMap::chsh(&ChshSettings::canonical()));
        assert_eq!(t.settings.len(), 4);
        assert!(t.settings.iter().all(|s| s.total() == 0));
    }

    proptest! {
        #[test]
        fn correlation_is_bounded(n in prop::array::uniform4(0u64..40)) {
            prop_assume!(n.iter().sum::<u64>() > 0);
            let c = correlation_coefficient(&counts(n)).unwrap();
            prop_assert!(c.e_value.abs() <= 1.0);
            prop_assert!(c.sigma >= 0.0 && c.sigma.is_finite());
        }
    }
}
