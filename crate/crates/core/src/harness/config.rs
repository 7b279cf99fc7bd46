//! Run configuration: one file holding every tunable constant.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::metrics::FailureConfig;
use super::runner::{standard_ablation, SuiteConfig};
use crate::advisors::{AdvisorError, ConfusionVerifier, CooccurrencePrior, PriorScorer, RemoteAdvisor, VerifierConfig};
use crate::policy::{AgentConfig, HelperToggles};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config toml: {0}")]
    TomlDe(#[from] toml::de::Error),
    #[error("config toml: {0}")]
    TomlSer(#[from] toml::ser::Error),
    #[error("config json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported config extension {0:?} (expected .toml or .json)")]
    Extension(PathBuf),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Advisor(#[from] AdvisorError),
}

/// Where frontier scores and target verdicts come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdvisorConfig {
    /// Co-occurrence prior scorer and confusion-rate verifier, in process.
    Local {
        /// Prior matrix file; the bundled prior when unset.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prior: Option<PathBuf>,
    },
    /// Both advisors behind an HTTP endpoint.
    Remote { url: String, timeout_s: f64 },
}

impl Default for AdvisorConfig {
    fn default() -> Self {
        AdvisorConfig::Local { prior: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub suite: SuiteConfig,
    /// Agent settings; `agent.policy.toggles` selects the helpers for single runs.
    pub agent: AgentConfig,
    pub failure: FailureConfig,
    pub verifier: VerifierConfig,
    pub advisor: AdvisorConfig,
    /// Directory written by `gen-scenes`. Scenes come from `suite` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// 0 uses the available parallelism.
    pub workers: usize,
    /// Helper combinations for ablations.
    pub ablation: Vec<HelperToggles>,
}

/// Map and scene resolution of the standard suite (m per cell).
pub const SUITE_RESOLUTION: f64 = 0.1;

impl Default for RunConfig {
    /// The standard ablation suite: 200 episodes over 50 scenes with narrow
    /// dead-ends and decoys, judged by a verifier with a 15% false-positive rate.
    fn default() -> Self {
        let mut suite = SuiteConfig {
            master_seed: 7,
            scene_count: 50,
            episodes_per_scene: 4,
            ..SuiteConfig::default()
        };
        suite.scene_params.resolution = SUITE_RESOLUTION;
        suite.scene_params.dead_ends = (2, 4);
        let mut agent = AgentConfig::at_resolution(SUITE_RESOLUTION);
        agent.corrupt_labels = true;
        Self {
            suite,
            agent,
            failure: FailureConfig::default(),
            verifier: VerifierConfig {
                epsilon_fp: 0.15,
                epsilon_fn: 0.0,
                seed: 7,
            },
            advisor: AdvisorConfig::default(),
            dataset: None,
            workers: 0,
            ablation: standard_ablation(),
        }
    }
}

enum Format {
    Toml,
    Json,
}

fn format_of(path: &Path) -> Result<Format, ConfigError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => Ok(Format::Toml),
        Some("json") => Ok(Format::Json),
        _ => Err(ConfigError::Extension(path.to_path_buf())),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn to_json(&self) -> Result<String, ConfigError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Reads a `.toml` or `.json` file. Missing keys take their defaults.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        match format_of(path)? {
            Format::Toml => Self::from_toml(&text),
            Format::Json => Self::from_json(&text),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let text = match format_of(path)? {
            Format::Toml => self.to_toml()?,
            Format::Json => self.to_json()?,
        };
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let res = self.agent.map.resolution;
        if !(res > 0.0) {
            return bad(format!("agent.map.resolution {res} must be positive"));
        }
        if self.agent.map.width < 2 || self.agent.map.height < 2 {
            return bad("agent.map must be at least 2x2".into());
        }
        if !(self.suite.scene_params.resolution > 0.0) {
            return bad("suite.scene_params.resolution must be positive".into());
        }
        if !(self.suite.success_radius > 0.0) {
            return bad("suite.success_radius must be positive".into());
        }
        if self.suite.max_steps == 0 {
            return bad("suite.max_steps must be positive".into());
        }
        for (name, v) in [("epsilon_fp", self.verifier.epsilon_fp), ("epsilon_fn", self.verifier.epsilon_fn)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("verifier.{name} {v} outside [0, 1]"));
            }
        }
        if let AdvisorConfig::Remote { url, timeout_s } = &self.advisor {
            if url.is_empty() {
                return bad("advisor.url is empty".into());
            }
            if !(*timeout_s > 0.0) {
                return bad("advisor.timeout_s must be positive".into());
            }
        }
        if self.agent.policy.goal_update_interval == 0 {
            return bad("agent.policy.goal_update_interval must be positive".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, with the worker count left out.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.workers = 0;
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build_advisors(&self) -> Result<BuiltAdvisors, ConfigError> {
        match &self.advisor {
            AdvisorConfig::Local { prior } => {
                let prior = match prior {
                    Some(p) => CooccurrencePrior::load(p)?,
                    None => CooccurrencePrior::default(),
                };
                let scorer = PriorScorer::new(prior, self.agent.policy.prior.clone());
                let verifier = ConfusionVerifier::new(self.verifier.clone())?;
                Ok(BuiltAdvisors::Local { scorer, verifier })
            }
            AdvisorConfig::Remote { url, timeout_s } => {
                let remote = RemoteAdvisor::new(url, Duration::from_secs_f64(*timeout_s));
                Ok(BuiltAdvisors::Remote(remote))
            }
        }
    }
}

/// Owned advisors built from a [`RunConfig`].
pub enum BuiltAdvisors {
    Local { scorer: PriorScorer, verifier: ConfusionVerifier },
    Remote(RemoteAdvisor),
}

impl BuiltAdvisors {
    pub fn as_advisors(&self) -> super::runner::Advisors<'_> {
        match self {
            BuiltAdvisors::Local { scorer, verifier } => super::runner::Advisors { scorer, verifier },
            BuiltAdvisors::Remote(r) => super::runner::Advisors { scorer: r, verifier: r },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_takes_defaults() {
        let cfg = RunConfig::from_toml("workers = 3\n[suite]\nscene_count = 2\n").unwrap();
        assert_eq!(cfg.workers, 3);
        assert_eq!(cfg.suite.scene_count, 2);
        assert_eq!(cfg.agent, RunConfig::default().agent);
    }

    #[test]
    fn step_and_threshold_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.agent.motion.forward_step_m, 0.25);
        assert_eq!(cfg.agent.motion.turn_angle_deg, 30.0);
        assert_eq!(cfg.suite.max_steps, 500);
        assert_eq!(cfg.agent.policy.goal_update_interval, 10);
        assert_eq!(cfg.agent.policy.helpers.dormant_threshold_m, 0.5);
        assert_eq!(cfg.agent.policy.helpers.sleep_time, 20);
        assert_eq!(cfg.agent.policy.helpers.detection_threshold, 400);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        b.workers = 5;
        assert_eq!(a.hash(), b.hash());
        b.suite.master_seed += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn rejects_bad_rates_and_extensions() {
        let err = RunConfig::from_toml("[verifier]\nepsilon_fp = 1.5\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err}");
        let err = RunConfig::load(Path::new("x.yaml")).unwrap_err();
        assert!(matches!(err, ConfigError::Io(_) | ConfigError::Extension(_)));
    }

    #[test]
    fn remote_advisor_section() {
        let cfg = RunConfig::from_toml("[advisor]\nkind = \"remote\"\nurl = \"http://127.0.0.1:9\"\ntimeout_s = 2.0\n").unwrap();
        assert_eq!(
            cfg.advisor,
            AdvisorConfig::Remote {
                url: "http://127.0.0.1:9".into(),
                timeout_s: 2.0
            }
        );
    }
}
