//! Frontier-scoring and target-verification advisors.
//!
//! The frontier scorer answers "how likely is the target near a frontier
//! whose surroundings contain these objects?" from a co-occurrence prior
//! table; the verifier gives a yes/no judgement on a detection with
//! configurable confusion rates. Both sit behind traits so a remote service
//! ([`remote::RemoteAdvisor`]) can stand in for them.

pub mod remote;

pub use remote::RemoteAdvisor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Cell;

const DEFAULT_PRIOR_JSON: &str = include_str!("../../data/cooccurrence_prior.json");

#[derive(Debug, Error)]
pub enum AdvisorError {
    #[error("invalid prior table: {0}")]
    InvalidPrior(String),
    #[error("no frontier to select")]
    NoFrontier,
    #[error("remote advisor: {0}")]
    Remote(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `matrix[j][t]`: affinity in `[0, 1]` of object category `j` appearing near target `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CooccurrencePrior {
    pub categories: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

impl Default for CooccurrencePrior {
    fn default() -> Self {
        Self::from_json(DEFAULT_PRIOR_JSON).expect("bundled prior table is valid")
    }
}

impl CooccurrencePrior {
    pub fn new(categories: Vec<String>, matrix: Vec<Vec<f64>>) -> Result<Self, AdvisorError> {
        let p = Self { categories, matrix };
        p.validate()?;
        Ok(p)
    }

    pub fn from_json(json: &str) -> Result<Self, AdvisorError> {
        let p: Self = serde_json::from_str(json)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, AdvisorError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String, AdvisorError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<(), AdvisorError> {
        let n = self.categories.len();
        if self.matrix.len() != n || self.matrix.iter().any(|row| row.len() != n) {
            return Err(AdvisorError::InvalidPrior(format!("matrix must be {n}x{n}")));
        }
        for (j, row) in self.matrix.iter().enumerate() {
            for (t, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(AdvisorError::InvalidPrior(format!("entry [{j}][{t}] = {v} outside [0, 1]")));
                }
            }
            if row[j] != 1.0 {
                return Err(AdvisorError::InvalidPrior(format!("diagonal entry [{j}][{j}] must be 1")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn get(&self, object: u8, target: u8) -> f64 {
        self.matrix
            .get(usize::from(object))
            .and_then(|row| row.get(usize::from(target)))
            .copied()
            .unwrap_or(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Max,
    NoisyOr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorScorerConfig {
    pub aggregation: Aggregation,
    /// Score of a frontier with no objects nearby.
    pub p_min: f64,
}

impl Default for PriorScorerConfig {
    fn default() -> Self {
        Self {
            aggregation: Aggregation::Max,
            p_min: 0.05,
        }
    }
}

/// Probability-like score of a frontier for `target` given the object
/// categories seen near it.
pub fn score_frontier_prior(prior: &CooccurrencePrior, nearby: &[u8], target: u8, cfg: &PriorScorerConfig) -> f64 {
    if nearby.is_empty() {
        return cfg.p_min.clamp(0.0, 1.0);
    }
    let p = match cfg.aggregation {
        Aggregation::Max => nearby.iter().map(|&j| prior.get(j, target)).fold(0.0, f64::max),
        Aggregation::NoisyOr => 1.0 - nearby.iter().map(|&j| 1.0 - prior.get(j, target)).product::<f64>(),
    };
    p.clamp(0.0, 1.0)
}

/// Scores frontiers for a target.
pub trait FrontierScorer: Send + Sync {
    fn score(&self, nearby: &[u8], target: u8) -> Result<f64, AdvisorError>;
}

#[derive(Clone, Debug, Default)]
pub struct PriorScorer {
    pub prior: CooccurrencePrior,
    pub config: PriorScorerConfig,
}

impl PriorScorer {
    pub fn new(prior: CooccurrencePrior, config: PriorScorerConfig) -> Self {
        Self { prior, config }
    }
}

impl FrontierScorer for PriorScorer {
    fn score(&self, nearby: &[u8], target: u8) -> Result<f64, AdvisorError> {
        Ok(score_frontier_prior(&self.prior, nearby, target, &self.config))
    }
}

/// A scored candidate for [`select_frontier`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredFrontier {
    pub p: f64,
    /// Geodesic distance from the agent; `INFINITY` when unknown or unreachable.
    pub distance: f64,
}

/// Index of the highest-scoring frontier; ties go to the nearer one, then to
/// the lower index.
pub fn select_frontier(scores: &[ScoredFrontier]) -> Result<usize, AdvisorError> {
    scores
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            b.p.total_cmp(&a.p)
                .then(a.distance.total_cmp(&b.distance))
                .then(ia.cmp(ib))
        })
        .map(|(i, _)| i)
        .ok_or(AdvisorError::NoFrontier)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
}

/// What the verifier gets to see about a detection. The simulator supplies
/// the ground-truth judgement in place of image evidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub is_target: bool,
    pub cells: Vec<Cell>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DetectionKey {
    pub episode: u64,
    pub detection_index: u32,
}

pub trait TargetVerifier: Send + Sync {
    fn verify(&self, evidence: &Evidence, target: u8, key: DetectionKey) -> Result<Answer, AdvisorError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierConfig {
    pub epsilon_fp: f64,
    pub epsilon_fn: f64,
    pub seed: u64,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            epsilon_fp: 0.0,
            epsilon_fn: 0.0,
            seed: 0,
        }
    }
}

/// Ground truth passed through a seeded confusion channel: a true target is
/// rejected with probability `epsilon_fn`, a false one accepted with `epsilon_fp`.
#[derive(Clone, Debug, Default)]
pub struct ConfusionVerifier {
    pub config: VerifierConfig,
}

impl ConfusionVerifier {
    pub fn new(config: VerifierConfig) -> Result<Self, AdvisorError> {
        for (name, v) in [("epsilon_fp", config.epsilon_fp), ("epsilon_fn", config.epsilon_fn)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(AdvisorError::InvalidPrior(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(Self { config })
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl TargetVerifier for ConfusionVerifier {
    fn verify(&self, evidence: &Evidence, _target: u8, key: DetectionKey) -> Result<Answer, AdvisorError> {
        let seed = mix64(mix64(self.config.seed ^ mix64(key.episode)) ^ u64::from(key.detection_index));
        let u: f64 = ChaCha8Rng::seed_from_u64(seed).random();
        let answer = if evidence.is_target {
            if u < self.config.epsilon_fn {
                Answer::No
            } else {
                Answer::Yes
            }
        } else if u < self.config.epsilon_fp {
            Answer::Yes
        } else {
            Answer::No
        };
        Ok(answer)
    }
}
