//! Collision, exploration and detection helpers.
//!
//! * Collision: a stuck forward move or an infeasible local plan puts the agent
//!   in collision state; the recovery goal is the centroid of the largest
//!   4-connected navigable region.
//! * Exploration: when the agent sits within `dormant_threshold_m` of its goal
//!   and the advisor keeps choosing the same frontier, the advisor sleeps for
//!   `sleep_time` global-policy cycles.
//! * Detection: verifier answers are turned into navigate / mask decisions and
//!   rejected detections are kept in a registry for late-episode fallback.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advisors::Answer;
use crate::grid::{BitGrid, Cell, Connectivity};
use crate::regions::label_regions;
use crate::scene::{Action, Point};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HelperError {
    #[error("navigable grid is empty")]
    EmptyNavigable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionKind {
    StuckMotion,
    NoFeasiblePath,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub kind: CollisionKind,
    pub step: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HelperConfig {
    pub dormant_threshold_m: f64,
    /// Advisor-free global-policy cycles once dormancy starts.
    pub sleep_time: u32,
    /// Step after which a recorded false target becomes the final goal.
    pub detection_threshold: u32,
    /// Consecutive stuck moves before the collision state latches.
    pub stuck_latch: u32,
    /// Count `sleep_time` in global-policy cycles (true) or simulator steps (false).
    pub sleep_counts_cycles: bool,
    /// Selected frontiers whose centers are at most this many cells apart count as the same.
    pub frontier_match_cells: f64,
}

impl Default for HelperConfig {
    fn default() -> Self {
        Self {
            dormant_threshold_m: 0.50,
            sleep_time: 20,
            detection_threshold: 400,
            stuck_latch: 3,
            sleep_counts_cycles: true,
            frontier_match_cells: 2.0,
        }
    }
}

/// A detection the verifier rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FalseTarget {
    pub cells: Vec<Cell>,
    pub step: u32,
}

/// Append-only record of rejected detections.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FalseTargetRegistry {
    entries: Vec<FalseTarget>,
}

impl FalseTargetRegistry {
    pub fn record(&mut self, cells: Vec<Cell>, step: u32) {
        self.entries.push(FalseTarget { cells, step });
    }

    pub fn entries(&self) -> &[FalseTarget] {
        &self.entries
    }

    pub fn latest(&self) -> Option<&FalseTarget> {
        self.entries.last()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Collision state for one step: a forward move that covered less than a
/// full step, or no feasible local plan.
pub fn detect_collision_state(
    last_action: Option<Action>,
    displacement: f64,
    planner_feasible: bool,
    forward_step_m: f64,
) -> bool {
    !planner_feasible || (last_action == Some(Action::MoveForward) && displacement < forward_step_m)
}

/// Latches a stuck-motion collision after `k` consecutive stuck moves.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StuckLatch {
    consecutive: u32,
}

impl StuckLatch {
    /// Feeds one step; returns true when the latch fires (and re-arms it).
    pub fn update(&mut self, stuck: bool, k: u32) -> bool {
        if !stuck {
            self.consecutive = 0;
            return false;
        }
        self.consecutive += 1;
        if self.consecutive >= k.max(1) {
            self.consecutive = 0;
            true
        } else {
            false
        }
    }

    pub fn consecutive(&self) -> u32 {
        self.consecutive
    }
}

/// Largest 4-connected region of `navigable`; ties go to the region that
/// contains the lexicographically smallest cell.
pub fn largest_connected_region(navigable: &BitGrid) -> Result<Vec<Cell>, HelperError> {
    // Regions come back ordered by smallest cell, so the first maximum wins ties.
    let mut best: Option<Vec<Cell>> = None;
    for region in label_regions(navigable, Connectivity::Four) {
        if best.as_ref().is_none_or(|b| region.len() > b.len()) {
            best = Some(region);
        }
    }
    best.ok_or(HelperError::EmptyNavigable)
}

/// Mean cell of `region`, rounded. When that cell is not a member, the member
/// nearest to the exact mean is used (ties to the smallest cell).
pub fn region_centroid(region: &[Cell]) -> Option<Cell> {
    if region.is_empty() {
        return None;
    }
    let n = region.len() as f64;
    let mx = region.iter().map(|c| f64::from(c.x)).sum::<f64>() / n;
    let my = region.iter().map(|c| f64::from(c.y)).sum::<f64>() / n;
    let rounded = Cell::new(mx.round() as i32, my.round() as i32);
    if region.contains(&rounded) {
        return Some(rounded);
    }
    region
        .iter()
        .map(|&c| ((f64::from(c.x) - mx).hypot(f64::from(c.y) - my), c))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, c)| c)
}

pub fn agent_goal_distance(agent: Point, goal: Point) -> f64 {
    ((goal.x - agent.x).powi(2) + (goal.y - agent.y).powi(2)).sqrt()
}

/// One dormancy decision. Frontiers are identified by their center cell,
/// within `frontier_match_cells`.
/// Returns `(sleeping, new_counter)`.
pub fn dormancy_check(
    d: f64,
    f_llm_current: Option<Cell>,
    f_llm_previous: Option<Cell>,
    cfg: &HelperConfig,
    sleep_counter: u32,
) -> (bool, u32) {
    if sleep_counter > 0 {
        return (true, sleep_counter - 1);
    }
    let unchanged = match (f_llm_current, f_llm_previous) {
        (Some(a), Some(b)) => a.dist(b) <= cfg.frontier_match_cells,
        _ => false,
    };
    if d < cfg.dormant_threshold_m && unchanged {
        return (true, cfg.sleep_time);
    }
    (false, 0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionDecision {
    NavigateToTarget,
    MaskAndContinue,
    NavigateToFalseTarget,
}

/// Turns a verifier answer (if a detection is pending) and the episode clock
/// into a decision. `None` means nothing to do. On `MaskAndContinue` the
/// caller records the detection in the registry.
pub fn detection_decision(
    step: u32,
    verifier_answer: Option<Answer>,
    registry: &FalseTargetRegistry,
    cfg: &HelperConfig,
    target_confirmed: bool,
) -> Option<DetectionDecision> {
    match verifier_answer {
        Some(Answer::Yes) => Some(DetectionDecision::NavigateToTarget),
        Some(Answer::No) => Some(DetectionDecision::MaskAndContinue),
        None if step >= cfg.detection_threshold && !registry.is_empty() && !target_confirmed => {
            Some(DetectionDecision::NavigateToFalseTarget)
        }
        None => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collision_state_rules() {
        assert!(detect_collision_state(Some(Action::MoveForward), 0.0, true, 0.25));
        assert!(!detect_collision_state(Some(Action::MoveForward), 0.25, true, 0.25));
        assert!(detect_collision_state(Some(Action::TurnLeft), 0.0, false, 0.25));
        assert!(!detect_collision_state(Some(Action::TurnLeft), 0.0, true, 0.25));
        assert!(!detect_collision_state(None, 0.0, true, 0.25));
    }

    #[test]
    fn latch_needs_consecutive_hits() {
        let mut l = StuckLatch::default();
        assert!(!l.update(true, 3));
        assert!(!l.update(true, 3));
        assert!(l.update(true, 3));
        assert!(!l.update(true, 3));
        assert!(!l.update(false, 3));
        assert_eq!(l.consecutive(), 0);
    }

    fn blob(cells: &[(i32, i32)], w: usize, h: usize) -> BitGrid {
        let mut g = BitGrid::new(w, h, false);
        for &(x, y) in cells {
            g.set(Cell::new(x, y), true);
        }
        g
    }

    #[test]
    fn picks_bigger_blob() {
        let mut cells = Vec::new();
        // 5-cell blob and a 3x3 blob.
        for x in 0..5 {
            cells.push((x, 0));
        }
        for y in 4..7 {
            for x in 4..7 {
                cells.push((x, y));
            }
        }
        let g = blob(&cells, 10, 10);
        let r = largest_connected_region(&g).unwrap();
        assert_eq!(r.len(), 9);
        assert!(r.contains(&Cell::new(5, 5)));
    }

    #[test]
    fn full_grid_is_one_region() {
        let g = BitGrid::new(6, 4, true);
        assert_eq!(largest_connected_region(&g).unwrap().len(), 24);
    }

    #[test]
    fn diagonal_blobs_are_separate() {
        let g = blob(&[(0, 0), (1, 0), (2, 1), (3, 1)], 5, 5);
        let r = largest_connected_region(&g).unwrap();
        // Equal sizes: the region holding (0, 0) wins.
        assert_eq!(r, vec![Cell::new(0, 0), Cell::new(1, 0)]);
    }

    #[test]
    fn empty_navigable_errors() {
        assert_eq!(
            largest_connected_region(&BitGrid::new(3, 3, false)),
            Err(HelperError::EmptyNavigable)
        );
    }

    #[test]
    fn centroid_cases() {
        let square: Vec<Cell> = (0..3).flat_map(|y| (0..3).map(move |x| Cell::new(x, y))).collect();
        assert_eq!(region_centroid(&square), Some(Cell::new(1, 1)));
        assert_eq!(region_centroid(&[Cell::new(4, 7)]), Some(Cell::new(4, 7)));
        assert_eq!(region_centroid(&[]), None);
    }

    #[test]
    fn centroid_snaps_for_l_shape() {
        // L: column x=0, y=0..=4 and row y=0, x=1..=4. Mean (10/9, 10/9)
        // rounds to (1, 1), which is off the region.
        let mut l: Vec<Cell> = (0..5).map(|y| Cell::new(0, y)).collect();
        l.extend((1..5).map(|x| Cell::new(x, 0)));
        let c = region_centroid(&l).unwrap();
        assert!(l.contains(&c));
        // Enumerated by hand: (0,1) and (1,0) are both ~1.117 from the mean;
        // lexicographic tie-break picks (0,1).
        assert_eq!(c, Cell::new(0, 1));
    }

    #[test]
    fn pythagorean_distance() {
        assert_eq!(agent_goal_distance(Point::new(0.0, 0.0), Point::new(3.0, 4.0)), 5.0);
        assert_eq!(agent_goal_distance(Point::new(2.0, 2.0), Point::new(2.0, 2.0)), 0.0);
        assert_eq!(agent_goal_distance(Point::new(1.0, 1.0), Point::new(1.0, 2.0)), 1.0);
    }

    #[test]
    fn dormancy_rules() {
        let cfg = HelperConfig::default();
        let f = Some(Cell::new(3, 3));
        assert_eq!(dormancy_check(0.3, f, f, &cfg, 0), (true, 20));
        assert_eq!(dormancy_check(0.6, f, f, &cfg, 0), (false, 0));
        assert_eq!(dormancy_check(0.3, Some(Cell::new(9, 3)), f, &cfg, 0), (false, 0));
        let exact = HelperConfig {
            frontier_match_cells: 0.0,
            ..HelperConfig::default()
        };
        assert_eq!(dormancy_check(0.3, Some(Cell::new(4, 3)), f, &exact, 0), (false, 0));
        assert_eq!(dormancy_check(0.3, Some(Cell::new(4, 3)), f, &cfg, 0), (true, 20));
        assert_eq!(dormancy_check(5.0, None, None, &cfg, 7), (true, 6));
        assert_eq!(dormancy_check(0.3, None, None, &cfg, 0), (false, 0));
    }

    #[test]
    fn detection_rules() {
        let cfg = HelperConfig::default();
        let mut reg = FalseTargetRegistry::default();
        assert_eq!(
            detection_decision(100, Some(Answer::Yes), &reg, &cfg, false),
            Some(DetectionDecision::NavigateToTarget)
        );
        assert_eq!(
            detection_decision(100, Some(Answer::No), &reg, &cfg, false),
            Some(DetectionDecision::MaskAndContinue)
        );
        assert_eq!(detection_decision(420, None, &reg, &cfg, false), None);
        reg.record(vec![Cell::new(1, 1)], 50);
        assert_eq!(
            detection_decision(420, None, &reg, &cfg, false),
            Some(DetectionDecision::NavigateToFalseTarget)
        );
        assert_eq!(detection_decision(399, None, &reg, &cfg, false), None);
        assert_eq!(detection_decision(420, None, &reg, &cfg, true), None);
    }
}
