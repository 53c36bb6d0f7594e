//! JSON campaign configuration: the law to run, the floors and ceilings,
//! the starts, exponents and Monte Carlo budgets. Every referenced field is
//! validated before any work starts and unknown keys are rejected.

use crate::process::{
    FadingWalk, FadingWalkParams, GeometricTail, LawError, State, TabularLaw, TransitionLaw,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Law(#[from] LawError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// One explicit table row of a tabular law: a strictly decreasing memory
/// run and its next-state distribution as `[state, probability]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub run: Vec<State>,
    pub dist: Vec<(State, f64)>,
}

/// Law description in a campaign config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec {
    /// The fading walk (see [`FadingWalk`]); omitted params take the
    /// classic defaults.
    FadingWalk {
        #[serde(default)]
        params: FadingWalkParams,
        #[serde(default)]
        floor: State,
        #[serde(default)]
        ceiling: Option<State>,
    },
    /// Explicit table with a fallback kernel for unlisted memory states.
    Tabular {
        entries: Vec<TableEntry>,
        fallback: Box<LawSpec>,
        #[serde(default)]
        tail: Option<GeometricTail>,
    },
}

impl LawSpec {
    /// Builds the law, validating parameters and every listed distribution.
    pub fn build(&self) -> Result<Box<dyn TransitionLaw>, ConfigError> {
        match self {
            LawSpec::FadingWalk { params, floor, ceiling } => {
                Ok(Box::new(FadingWalk::new(*params, *floor, *ceiling)?))
            }
            LawSpec::Tabular { entries, fallback, tail } => {
                let fallback = fallback.build()?;
                let rows = entries.iter().map(|e| (e.run.clone(), e.dist.clone())).collect();
                Ok(Box::new(TabularLaw::new(rows, fallback, *tail)?))
            }
        }
    }

    pub fn ceiling(&self) -> Option<State> {
        match self {
            LawSpec::FadingWalk { ceiling, .. } => *ceiling,
            LawSpec::Tabular { fallback, .. } => fallback.ceiling(),
        }
    }
}

fn default_output_dir() -> String {
    "out".into()
}

/// A full campaign: the law plus every knob the subcommands consume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub law: LawSpec,
    pub alphas: Vec<f64>,
    pub x0_list: Vec<State>,
    pub n_traj: usize,
    pub horizon: usize,
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

impl CampaignConfig {
    pub fn from_json(text: &str) -> Result<CampaignConfig, ConfigError> {
        let config: CampaignConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<CampaignConfig, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        CampaignConfig::from_json(&text)
    }

    /// Checks every referenced field; the law itself is built (and thereby
    /// validated) as part of the check.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.law.build()?;
        if self.n_traj == 0 {
            return Err(ConfigError::Invalid("n_traj must be positive".into()));
        }
        for &a in &self.alphas {
            if !a.is_finite() || a < 0.0 {
                return Err(ConfigError::Invalid(format!("alpha {a} must be finite and >= 0")));
            }
        }
        if let Some(c) = self.law.ceiling() {
            if let Some(&x0) = self.x0_list.iter().find(|&&x| x > c) {
                return Err(ConfigError::Invalid(format!(
                    "start {x0} lies above the ceiling {c}"
                )));
            }
        }
        Ok(())
    }

    pub fn build_law(&self) -> Result<Box<dyn TransitionLaw>, ConfigError> {
        self.law.build()
    }

    /// Hash of the canonical JSON form, used to stamp every emitted file.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "law": {"kind": "fading_walk", "ceiling": 6},
        "alphas": [0.01, 0.05],
        "x0_list": [1, 3, 5],
        "n_traj": 1000,
        "horizon": 10000,
        "seed": 42
    }"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let config = CampaignConfig::from_json(MINIMAL).unwrap();
        assert_eq!(config.output_dir, "out");
        match config.law {
            LawSpec::FadingWalk { params, floor, ceiling } => {
                assert_eq!(params, FadingWalkParams::default());
                assert_eq!(floor, 0);
                assert_eq!(ceiling, Some(6));
            }
            _ => panic!("wrong law kind"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replacen("\"seed\": 42", "\"seed\": 42, \"surprise\": 1", 1);
        assert!(matches!(CampaignConfig::from_json(&text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn start_above_ceiling_is_rejected() {
        let text = MINIMAL.replacen("[1, 3, 5]", "[1, 3, 9]", 1);
        assert!(matches!(CampaignConfig::from_json(&text), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn bad_simplex_is_rejected() {
        let text = MINIMAL.replacen(
            "\"kind\": \"fading_walk\"",
            "\"kind\": \"fading_walk\", \"params\": {\"up\": 0.5}",
            1,
        );
        assert!(matches!(CampaignConfig::from_json(&text), Err(ConfigError::Law(_))));
    }

    #[test]
    fn tabular_law_builds_from_json() {
        let text = r#"{
            "law": {
                "kind": "tabular",
                "entries": [{"run": [1], "dist": [[0, 1.0]]}],
                "fallback": {"kind": "fading_walk", "ceiling": 6}
            },
            "alphas": [0.05],
            "x0_list": [3],
            "n_traj": 10,
            "horizon": 100,
            "seed": 1
        }"#;
        let config = CampaignConfig::from_json(text).unwrap();
        let law = config.build_law().unwrap();
        let memory = crate::process::MemoryState::new(1);
        assert_eq!(law.distribution(&memory).mass_at(0), 1.0);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = CampaignConfig::from_json(MINIMAL).unwrap();
        let b = CampaignConfig::from_json(MINIMAL).unwrap();
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.seed = 43;
        assert_ne!(a.hash(), c.hash());
    }
}
