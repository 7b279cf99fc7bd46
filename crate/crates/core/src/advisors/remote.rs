//! HTTP-backed advisor.
//!
//! Wire protocol (JSON over POST):
//! - `{base}/score`  request `{"objects": [..names], "target": "name"}`, response `{"p": 0.42}`
//! - `{base}/verify` request `{"target": "name", "evidence": {..}}`, response `{"answer": "yes"}`

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AdvisorError, Answer, DetectionKey, Evidence, FrontierScorer, TargetVerifier};
use crate::scene::CATEGORY_NAMES;

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub objects: Vec<String>,
    pub target: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub p: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerifyRequest {
    pub target: String,
    pub evidence: Evidence,
    pub episode: u64,
    pub detection_index: u32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerifyResponse {
    pub answer: Answer,
}

pub struct RemoteAdvisor {
    base: String,
    agent: ureq::Agent,
}

fn category_name(k: u8) -> Result<String, AdvisorError> {
    CATEGORY_NAMES
        .get(usize::from(k))
        .map(|s| s.to_string())
        .ok_or_else(|| AdvisorError::Remote(format!("unknown category {k}")))
}

impl RemoteAdvisor {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            agent,
        }
    }

    fn post<Req: Serialize, Resp: serde::de::DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, AdvisorError> {
        let url = format!("{}/{path}", self.base);
        let mut resp = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| AdvisorError::Remote(format!("{url}: {e}")))?;
        resp.body_mut()
            .read_json::<Resp>()
            .map_err(|e| AdvisorError::Remote(format!("{url}: bad response: {e}")))
    }
}

impl FrontierScorer for RemoteAdvisor {
    fn score(&self, nearby: &[u8], target: u8) -> Result<f64, AdvisorError> {
        let req = ScoreRequest {
            objects: nearby.iter().map(|&k| category_name(k)).collect::<Result<_, _>>()?,
            target: category_name(target)?,
        };
        let resp: ScoreResponse = self.post("score", &req)?;
        if !resp.p.is_finite() || !(0.0..=1.0).contains(&resp.p) {
            return Err(AdvisorError::Remote(format!("score {} outside [0, 1]", resp.p)));
        }
        Ok(resp.p)
    }
}

impl TargetVerifier for RemoteAdvisor {
    fn verify(&self, evidence: &Evidence, target: u8, key: DetectionKey) -> Result<Answer, AdvisorError> {
        let req = VerifyRequest {
            target: category_name(target)?,
            evidence: evidence.clone(),
            episode: key.episode,
            detection_index: key.detection_index,
        };
        let resp: VerifyResponse = self.post("verify", &req)?;
        Ok(resp.answer)
    }
}
