//! SR / SPL / DTG and failure classification.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::fmm_until;
use crate::policy::{Mode, TraceRecord};
use crate::scene::{Action, AgentPose, Scene};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no episode results")]
    Empty,
    #[error("target category {0} is not reachable from the start")]
    Unreachable(u8),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureClass {
    Collision,
    Exploration,
    Detection,
}

/// The per-episode quantities the metrics need.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricInput {
    pub success: bool,
    /// Shortest feasible path length (m), positive.
    pub shortest_length: f64,
    /// Length actually travelled (m).
    pub path_length: f64,
    /// Distance from the final position to the nearest target instance (m).
    pub final_distance: f64,
    pub success_radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub sr: f64,
    pub spl: f64,
    /// Mean over episodes.
    pub dtg: f64,
    pub episodes: usize,
}

pub fn episode_dtg(final_distance: f64, success_radius: f64) -> f64 {
    (final_distance - success_radius).max(0.0)
}

pub fn episode_spl(r: &MetricInput) -> f64 {
    if !r.success {
        return 0.0;
    }
    r.shortest_length / r.path_length.max(r.shortest_length)
}

pub fn compute_metrics(results: &[MetricInput]) -> Result<Metrics, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = results.len() as f64;
    let sr = results.iter().filter(|r| r.success).count() as f64 / n;
    let spl = results.iter().map(episode_spl).sum::<f64>() / n;
    let dtg = results
        .iter()
        .map(|r| episode_dtg(r.final_distance, r.success_radius))
        .sum::<f64>()
        / n;
    Ok(Metrics {
        sr,
        spl,
        dtg,
        episodes: results.len(),
    })
}

/// Geodesic distance (m) from `start` to the nearest instance of `target`
/// over ground-truth free space, minus `success_radius`, floored at one cell.
pub fn shortest_path_length(scene: &Scene, start: &AgentPose, target: u8, success_radius: f64) -> Result<f64, MetricsError> {
    let mut traversable = scene.occupancy.map(|&o| !o);
    let mut sources = Vec::new();
    for inst in scene.target_instances.iter().filter(|i| i.category == target) {
        for &c in &inst.cells {
            traversable.set(c, true);
            sources.push(c);
        }
    }
    let start_cell = scene.cell_of(start.position());
    let field = fmm_until(&traversable, &sources, Some(start_cell)).map_err(|_| MetricsError::Unreachable(target))?;
    let d = field.get(start_cell);
    if !d.is_finite() {
        return Err(MetricsError::Unreachable(target));
    }
    Ok((d * scene.resolution - success_radius).max(scene.resolution))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FailureConfig {
    /// Trailing window (steps) for the stuck test.
    pub window_steps: usize,
    /// Net displacement (m) over the window below which the agent counts as stuck.
    pub min_displacement_m: f64,
    /// Trailing infeasible plans that count as a collision ending.
    pub infeasible_tail: usize,
}

impl Default for FailureConfig {
    fn default() -> Self {
        Self {
            window_steps: 50,
            min_displacement_m: 0.25,
            infeasible_tail: 5,
        }
    }
}

/// Class of a failed episode: a wrong stop or a false-target ending is a
/// detection failure, a stationary or plan-less ending a collision failure,
/// anything else an exploration failure.
pub fn classify_failure(trace: &[TraceRecord], start: &AgentPose, cfg: &FailureConfig) -> FailureClass {
    let Some(last) = trace.last() else {
        return FailureClass::Exploration;
    };
    if last.action == Action::Stop || last.mode == Mode::FalseTargetNav {
        return FailureClass::Detection;
    }
    let window = cfg.window_steps.max(1);
    let from = if trace.len() > window {
        trace[trace.len() - window - 1].pose.position()
    } else {
        start.position()
    };
    if last.pose.position().dist(from) < cfg.min_displacement_m {
        return FailureClass::Collision;
    }
    let tail = cfg.infeasible_tail.max(1);
    if trace.len() >= tail && trace[trace.len() - tail..].iter().all(|r| !r.feasible) {
        return FailureClass::Collision;
    }
    FailureClass::Exploration
}
