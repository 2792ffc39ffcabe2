//! Scenario files: a link setup, a run length and seed, and the analysis
//! applied to the result.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::AnalysisConfig;
use crate::sim::LinkSetup;

const BUNDLED: [(&str, &str); 2] = [
    ("paper-144km", include_str!("../scenarios/paper-144km.toml")),
    ("paper-qkd", include_str!("../scenarios/paper-qkd.toml")),
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown bundled scenario {0:?}")]
    UnknownBundled(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
    pub link: LinkSetup,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |r| line_col(text, r.start));
            ScenarioError::Syntax { line, column, message: e.message().trim().to_string() }
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn bundled(name: &str) -> Result<Self, ScenarioError> {
        let (_, text) =
            BUNDLED.iter().find(|(n, _)| *n == name).ok_or_else(|| ScenarioError::UnknownBundled(name.to_string()))?;
        Self::from_toml(text)
    }

    pub fn bundled_names() -> impl Iterator<Item = &'static str> {
        BUNDLED.iter().map(|(n, _)| *n)
    }

    /// A bundled name or a path to a scenario file.
    pub fn resolve(spec: &str) -> Result<Self, ScenarioError> {
        if BUNDLED.iter().any(|(n, _)| *n == spec) {
            Self::bundled(spec)
        } else {
            Self::load(Path::new(spec))
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return Err(ScenarioError::Invalid(format!("duration_s must be finite and non-negative, got {}", self.duration_s)));
        }
        self.link.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        self.analysis.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_parse() {
        for name in Scenario::bundled_names() {
            let s = Scenario::bundled(name).unwrap();
            assert_eq!(s.name, name);
        }
    }

    #[test]
    fn round_trip() {
        let s = Scenario::bundled("paper-qkd").unwrap();
        assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn unknown_field_reports_its_line() {
        let text = Scenario::bundled("paper-144km").unwrap().to_toml().replacen("duration_s", "durration_s", 1);
        let line = text.lines().position(|l| l.starts_with("durration_s")).unwrap() + 1;
        match Scenario::from_toml(&text).unwrap_err() {
            ScenarioError::Syntax { line: l, message, .. } => {
                assert_eq!(l, line);
                assert!(message.contains("durration_s"), "{message}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn semantic_errors_are_invalid() {
        let mut s = Scenario::bundled("paper-qkd").unwrap();
        s.link.bob_detector.efficiency = 1.5;
        assert!(matches!(Scenario::from_toml(&s.to_toml()), Err(ScenarioError::Invalid(_))));
        s = Scenario::bundled("paper-qkd").unwrap();
        s.duration_s = -1.0;
        assert!(matches!(Scenario::from_toml(&s.to_toml()), Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn wrong_type_reports_position() {
        let err = Scenario::from_toml("name = \"x\"\nduration_s = \"long\"\n").unwrap_err();
        assert!(matches!(err, ScenarioError::Syntax { line: 2, .. }), "{err}");
    }

    #[test]
    fn unknown_bundled_name() {
        assert!(matches!(Scenario::bundled("nope"), Err(ScenarioError::UnknownBundled(_))));
    }

    #[test]
    fn line_col_counts_from_one() {
        assert_eq!(line_col("ab\ncd", 0), (1, 1));
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
    }
}
