//! Local policy: fast-marching distance fields and goal-directed action selection.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{BitGrid, Cell, Grid, NEIGHBORS_8};
use crate::scene::{normalize_heading, Action};

#[derive(Debug, Error, PartialEq)]
pub enum PlannerError {
    #[error("no traversable source cell")]
    NoTraversableSource,
}

/// Geodesic distances in cells; `f64::INFINITY` marks unreachable or untouched cells.
#[derive(Clone, Debug)]
pub struct DistanceField {
    values: Grid<f64>,
    sources: Vec<Cell>,
    final_limit: f64,
}

impl DistanceField {
    #[inline]
    pub fn get(&self, c: Cell) -> f64 {
        self.values.get(c).copied().unwrap_or(f64::INFINITY)
    }

    pub fn is_reachable(&self, c: Cell) -> bool {
        self.get(c).is_finite()
    }

    /// Whether the value at `c` is final. Early-stopped solves leave
    /// tentative values beyond the stop cell.
    pub fn is_final(&self, c: Cell) -> bool {
        let v = self.get(c);
        v.is_finite() && v <= self.final_limit
    }

    pub fn sources(&self) -> &[Cell] {
        &self.sources
    }

    pub fn values(&self) -> &Grid<f64> {
        &self.values
    }

    /// Follows the steepest 8-neighbour descent from `from` for at most
    /// `max_len` moves, stopping at a source. Values along the path strictly
    /// decrease; an unreachable start yields just `[from]`.
    pub fn descent_path(&self, from: Cell, max_len: usize) -> Vec<Cell> {
        let mut path = vec![from];
        let mut cur = from;
        let mut v = self.get(cur);
        if !v.is_finite() {
            return path;
        }
        while path.len() <= max_len && v > 0.0 {
            let mut best = None;
            let mut best_v = v;
            for &(dx, dy) in &NEIGHBORS_8 {
                let n = cur.offset(dx, dy);
                let nv = self.get(n);
                if nv < best_v {
                    best_v = nv;
                    best = Some(n);
                }
            }
            match best {
                Some(n) => {
                    cur = n;
                    v = best_v;
                    path.push(n);
                }
                None => break,
            }
        }
        path
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Trial {
    value: f64,
    index: usize,
}

impl Eq for Trial {}

impl Ord for Trial {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on value, ties on index for determinism.
        other
            .value
            .total_cmp(&self.value)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Trial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const FAR: u8 = 0;
const TRIAL: u8 = 1;
const KNOWN: u8 = 2;

/// Fast marching solve, on the axis and diagonal stencils, of `|grad T| = 1` (unit cell spacing)
/// from `sources` over the traversable cells.
pub fn fmm_distance_field(traversable: &BitGrid, sources: &[Cell]) -> Result<DistanceField, PlannerError> {
    fmm_until(traversable, sources, None)
}

/// Like [`fmm_distance_field`] but stops once `stop_at` is accepted. Every
/// cell with a value below `stop_at`'s is final at that point, which is all
/// a descent from `stop_at` needs.
pub fn fmm_until(traversable: &BitGrid, sources: &[Cell], stop_at: Option<Cell>) -> Result<DistanceField, PlannerError> {
    let (w, h) = (traversable.width(), traversable.height());
    let mut values = Grid::new(w, h, f64::INFINITY);
    let mut state = vec![FAR; w * h];
    let mut heap = BinaryHeap::new();
    let mut used_sources = Vec::new();

    for &s in sources {
        if let Some(i) = traversable.index(s) {
            if traversable.as_slice()[i] && state[i] != KNOWN {
                state[i] = KNOWN;
                values.as_mut_slice()[i] = 0.0;
                used_sources.push(s);
            }
        }
    }
    if used_sources.is_empty() {
        return Err(PlannerError::NoTraversableSource);
    }
    let stop_index = stop_at.and_then(|c| traversable.index(c));
    if let Some(si) = stop_index {
        if state[si] == KNOWN {
            return Ok(DistanceField {
                values,
                sources: used_sources,
                final_limit: 0.0,
            });
        }
    }

    // Exact Euclidean values around each source: the first-order update is
    // least accurate right next to a point source.
    for &s in &used_sources {
        for &(dx, dy) in &NEIGHBORS_8 {
            let n = s.offset(dx, dy);
            let Some(i) = traversable.index(n) else { continue };
            if !traversable.as_slice()[i] || state[i] == KNOWN {
                continue;
            }
            // Diagonal seeding only when the corner is not pinched by obstacles.
            if dx != 0 && dy != 0 && !traversable.is_set(s.offset(dx, 0)) && !traversable.is_set(s.offset(0, dy)) {
                continue;
            }
            let d = f64::from(dx * dx + dy * dy).sqrt();
            if d < values.as_slice()[i] {
                values.as_mut_slice()[i] = d;
                state[i] = TRIAL;
                heap.push(Trial { value: d, index: i });
            }
        }
    }
    for &s in &used_sources {
        let i = traversable.index(s).unwrap_or_default();
        update_neighbors(traversable, &mut values, &mut state, &mut heap, i);
    }

    let mut final_limit = f64::INFINITY;
    while let Some(Trial { value, index }) = heap.pop() {
        if state[index] == KNOWN || value > values.as_slice()[index] {
            continue;
        }
        state[index] = KNOWN;
        if Some(index) == stop_index {
            final_limit = value;
            break;
        }
        update_neighbors(traversable, &mut values, &mut state, &mut heap, index);
    }
    Ok(DistanceField {
        values,
        sources: used_sources,
        final_limit,
    })
}

fn update_neighbors(
    traversable: &BitGrid,
    values: &mut Grid<f64>,
    state: &mut [u8],
    heap: &mut BinaryHeap<Trial>,
    index: usize,
) {
    let c = traversable.cell_at(index);
    for &(dx, dy) in &NEIGHBORS_8 {
        let n = c.offset(dx, dy);
        let Some(ni) = traversable.index(n) else { continue };
        if state[ni] == KNOWN || !traversable.as_slice()[ni] {
            continue;
        }
        let v = solve_axis(values, state, n).min(solve_diagonal(traversable, values, state, n));
        if v < values.as_slice()[ni] {
            values.as_mut_slice()[ni] = v;
            state[ni] = TRIAL;
            heap.push(Trial { value: v, index: ni });
        }
    }
}

/// Upwind two-neighbour solution of `|grad T| = 1` for neighbour values
/// `a`, `b` along orthogonal directions at spacing `h`.
fn upwind(a: f64, b: f64, h: f64) -> f64 {
    if !a.is_finite() && !b.is_finite() {
        return f64::INFINITY;
    }
    let diff = a - b;
    if diff.abs() >= h {
        a.min(b) + h
    } else {
        (a + b + (2.0 * h * h - diff * diff).sqrt()) / 2.0
    }
}

fn known_value(values: &Grid<f64>, state: &[u8], n: Cell) -> f64 {
    match values.index(n) {
        Some(i) if state[i] == KNOWN => values.as_slice()[i],
        _ => f64::INFINITY,
    }
}

/// Update from the accepted 4-neighbours of `c`.
fn solve_axis(values: &Grid<f64>, state: &[u8], c: Cell) -> f64 {
    let known = |n: Cell| known_value(values, state, n);
    let a = known(c.offset(-1, 0)).min(known(c.offset(1, 0)));
    let b = known(c.offset(0, -1)).min(known(c.offset(0, 1)));
    upwind(a, b, 1.0)
}

/// Update on the 45-degree stencil (spacing sqrt 2) from the accepted diagonal
/// neighbours of `c`. A diagonal pair is used only when the 4-neighbour between
/// them is free; a single diagonal is skipped when it squeezes between two
/// obstacle cells.
fn solve_diagonal(traversable: &BitGrid, values: &Grid<f64>, state: &[u8], c: Cell) -> f64 {
    let known = |n: Cell| known_value(values, state, n);
    let free = |dx: i32, dy: i32| traversable.is_set(c.offset(dx, dy));
    let mut best = f64::INFINITY;
    for (dx, dy) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
        if free(dx, 0) || free(0, dy) {
            best = best.min(known(c.offset(dx, dy)) + SQRT_2);
        }
    }
    // Pairs of diagonals sharing the 4-neighbour (sx, sy).
    for (sx, sy) in [(0, 1), (0, -1), (1, 0), (-1, 0)] {
        if !free(sx, sy) {
            continue;
        }
        let (p, q) = if sx == 0 { ((1, sy), (-1, sy)) } else { ((sx, 1), (sx, -1)) };
        let (a, b) = (known(c.offset(p.0, p.1)), known(c.offset(q.0, q.1)));
        if a.is_finite() && b.is_finite() {
            best = best.min(upwind(a, b, SQRT_2));
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalPlannerConfig {
    /// Forward when the desired bearing is within this many degrees of the heading.
    pub heading_tolerance_deg: f64,
    /// Cells followed along the descent path to set the desired bearing.
    pub lookahead_cells: usize,
    /// When the goal cell itself is blocked, traversable cells this close to it become sources.
    pub goal_tolerance_cells: f64,
    /// Recompute the distance field every step even if the goal and map are unchanged.
    pub recompute_every_step: bool,
    pub infeasible_action: InfeasibleAction,
}

/// What the agent does when no path to the goal exists.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasibleAction {
    /// Rotate in place.
    #[default]
    Turn,
    /// Head straight for the goal, ignoring the map.
    StraightLine,
}

impl Default for LocalPlannerConfig {
    fn default() -> Self {
        Self {
            heading_tolerance_deg: 15.0,
            lookahead_cells: 1,
            goal_tolerance_cells: 3.0,
            recompute_every_step: false,
            infeasible_action: InfeasibleAction::Turn,
        }
    }
}

/// Agent state as seen by the local planner, in map cell units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlannerPose {
    pub cell: Cell,
    /// Continuous position; cell `(i, j)` is centered on `(i, j)`.
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalPlan {
    pub action: Action,
    pub feasible: bool,
    /// Geodesic distance from the agent to the goal in cells, if reachable.
    pub distance: Option<f64>,
    pub desired_bearing: Option<f64>,
}

/// Signed smallest rotation from `heading` to `bearing`, in `(-180, 180]`.
pub fn angle_diff(bearing: f64, heading: f64) -> f64 {
    let d = normalize_heading(bearing - heading);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Forward if aligned within tolerance, otherwise the shorter turn; an exact
/// half-turn goes right.
pub fn turn_toward(heading: f64, bearing: f64, tolerance_deg: f64) -> Action {
    let d = angle_diff(bearing, heading);
    if d.abs() <= tolerance_deg {
        Action::MoveForward
    } else if d == 180.0 {
        Action::TurnRight
    } else if d > 0.0 {
        Action::TurnLeft
    } else {
        Action::TurnRight
    }
}

pub fn bearing_between(from_x: f64, from_y: f64, to: Cell) -> f64 {
    normalize_heading((f64::from(to.y) - from_y).atan2(f64::from(to.x) - from_x).to_degrees())
}

/// Goal sources: the goal itself when traversable, else nearby traversable cells.
pub fn goal_sources(traversable: &BitGrid, goal: Cell, tolerance: f64) -> Vec<Cell> {
    if traversable.is_set(goal) {
        return vec![goal];
    }
    crate::grid::disk_offsets(tolerance)
        .into_iter()
        .map(|(dx, dy)| goal.offset(dx, dy))
        .filter(|&c| traversable.is_set(c))
        .collect()
}

/// Chooses the next action toward `goal`. `stop_radius` (cells) enables the
/// stop action once the agent is that close to the goal.
pub fn plan_local(
    traversable: &BitGrid,
    pose: &PlannerPose,
    goal: Cell,
    stop_radius: Option<f64>,
    cfg: &LocalPlannerConfig,
) -> LocalPlan {
    let straight = || bearing_between(pose.x, pose.y, goal);
    if let Some(r) = stop_radius {
        let d = (f64::from(goal.x) - pose.x).hypot(f64::from(goal.y) - pose.y);
        if d < r {
            return LocalPlan {
                action: Action::Stop,
                feasible: true,
                distance: Some(d),
                desired_bearing: None,
            };
        }
    }
    let sources = goal_sources(traversable, goal, cfg.goal_tolerance_cells);
    let field = match fmm_until(traversable, &sources, Some(pose.cell)) {
        Ok(f) => f,
        Err(_) => return infeasible(pose, straight(), cfg),
    };
    plan_with_field(&field, pose, goal, cfg)
}

/// Action selection against a precomputed field (sources at the goal).
pub fn plan_with_field(field: &DistanceField, pose: &PlannerPose, goal: Cell, cfg: &LocalPlannerConfig) -> LocalPlan {
    let dist = field.get(pose.cell);
    if !dist.is_finite() {
        return infeasible(pose, bearing_between(pose.x, pose.y, goal), cfg);
    }
    if pose.cell == goal {
        // Already there: scan in place rather than chase the cell center.
        return LocalPlan {
            action: Action::TurnLeft,
            feasible: true,
            distance: Some(dist),
            desired_bearing: None,
        };
    }
    let path = field.descent_path(pose.cell, cfg.lookahead_cells.max(1));
    let aim = *path.last().unwrap_or(&pose.cell);
    let bearing = if aim == pose.cell {
        bearing_between(pose.x, pose.y, goal)
    } else {
        bearing_between(pose.x, pose.y, aim)
    };
    LocalPlan {
        action: turn_toward(pose.heading, bearing, cfg.heading_tolerance_deg),
        feasible: true,
        distance: Some(dist),
        desired_bearing: Some(bearing),
    }
}

/// Plan for a goal the agent cannot reach.
pub fn infeasible(pose: &PlannerPose, straight_bearing: f64, cfg: &LocalPlannerConfig) -> LocalPlan {
    let action = match cfg.infeasible_action {
        InfeasibleAction::Turn => Action::TurnRight,
        InfeasibleAction::StraightLine => turn_toward(pose.heading, straight_bearing, cfg.heading_tolerance_deg),
    };
    LocalPlan {
        action,
        feasible: false,
        distance: None,
        desired_bearing: Some(straight_bearing),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open(w: usize, h: usize) -> BitGrid {
        BitGrid::new(w, h, true)
    }

    fn pose(x: i32, y: i32, heading: f64) -> PlannerPose {
        PlannerPose {
            cell: Cell::new(x, y),
            x: f64::from(x),
            y: f64::from(y),
            heading,
        }
    }

    #[test]
    fn source_is_zero() {
        let f = fmm_distance_field(&open(10, 10), &[Cell::new(2, 3)]).unwrap();
        assert_eq!(f.get(Cell::new(2, 3)), 0.0);
    }

    #[test]
    fn euclidean_on_open_grid() {
        let f = fmm_distance_field(&open(20, 20), &[Cell::new(0, 0)]).unwrap();
        let d = f.get(Cell::new(3, 4));
        assert!((d - 5.0).abs() <= 2.0, "{d}");
        assert!(d >= 5.0 - 1e-9);
    }

    #[test]
    fn blocked_source_errors() {
        let mut g = open(5, 5);
        g.set(Cell::new(1, 1), false);
        assert_eq!(
            fmm_distance_field(&g, &[Cell::new(1, 1)]).unwrap_err(),
            PlannerError::NoTraversableSource
        );
        assert_eq!(fmm_distance_field(&g, &[]).unwrap_err(), PlannerError::NoTraversableSource);
    }

    #[test]
    fn walled_off_cells_stay_infinite() {
        let mut g = open(10, 10);
        for y in 0..10 {
            g.set(Cell::new(5, y), false);
        }
        let f = fmm_distance_field(&g, &[Cell::new(0, 0)]).unwrap();
        assert!(f.get(Cell::new(8, 8)).is_infinite());
        assert!(f.get(Cell::new(5, 5)).is_infinite());
        assert!(f.get(Cell::new(4, 9)).is_finite());
    }

    #[test]
    fn early_stop_matches_full_solve_below_target() {
        let g = open(40, 40);
        let full = fmm_distance_field(&g, &[Cell::new(5, 5)]).unwrap();
        let part = fmm_until(&g, &[Cell::new(5, 5)], Some(Cell::new(20, 12))).unwrap();
        let limit = full.get(Cell::new(20, 12));
        for c in g.cells() {
            if full.get(c) < limit {
                assert_eq!(full.get(c), part.get(c));
            }
        }
    }

    #[test]
    fn aligned_goal_moves_forward() {
        let g = open(40, 40);
        let plan = plan_local(&g, &pose(5, 20, 0.0), Cell::new(30, 20), None, &LocalPlannerConfig::default());
        assert!(plan.feasible);
        assert_eq!(plan.action, Action::MoveForward);
    }

    #[test]
    fn goal_to_the_left_turns_left() {
        let g = open(40, 40);
        let plan = plan_local(&g, &pose(20, 5, 0.0), Cell::new(20, 30), None, &LocalPlannerConfig::default());
        assert_eq!(plan.desired_bearing, Some(90.0));
        assert_eq!(plan.action, Action::TurnLeft);
        let plan = plan_local(&g, &pose(20, 30, 0.0), Cell::new(20, 5), None, &LocalPlannerConfig::default());
        assert_eq!(plan.action, Action::TurnRight);
    }

    #[test]
    fn half_turn_goes_right() {
        assert_eq!(turn_toward(0.0, 180.0, 15.0), Action::TurnRight);
        assert_eq!(turn_toward(0.0, 15.0, 15.0), Action::MoveForward);
        assert_eq!(turn_toward(350.0, 10.0, 15.0), Action::TurnLeft);
        assert_eq!(turn_toward(10.0, 340.0, 15.0), Action::TurnRight);
    }

    #[test]
    fn walled_goal_is_infeasible() {
        let mut g = open(30, 30);
        for c in g.cells().collect::<Vec<_>>() {
            let d = (c.x - 20).abs().max((c.y - 20).abs());
            if d == 3 || d == 4 {
                g.set(c, false);
            }
        }
        let plan = plan_local(&g, &pose(3, 3, 0.0), Cell::new(20, 20), None, &LocalPlannerConfig::default());
        assert!(!plan.feasible);
        assert_eq!(plan.distance, None);
    }

    #[test]
    fn stops_inside_radius() {
        let g = open(30, 30);
        let plan = plan_local(&g, &pose(10, 10, 0.0), Cell::new(12, 10), Some(3.0), &LocalPlannerConfig::default());
        assert_eq!(plan.action, Action::Stop);
        let plan = plan_local(&g, &pose(10, 10, 0.0), Cell::new(12, 10), None, &LocalPlannerConfig::default());
        assert_ne!(plan.action, Action::Stop);
    }

    #[test]
    fn blocked_goal_uses_nearby_sources() {
        let mut g = open(30, 30);
        g.set(Cell::new(20, 20), false);
        let plan = plan_local(&g, &pose(5, 20, 0.0), Cell::new(20, 20), None, &LocalPlannerConfig::default());
        assert!(plan.feasible);
    }
}
