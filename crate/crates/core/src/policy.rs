//! Global goal policy and the per-step agent loop.
//!
//! When the current goal is `goal_update_interval` steps old, and on event
//! steps (a new target detection, or a collision while the collision helper
//! is on), the agent
//! runs one global-policy cycle that picks a long-term goal and a mode. In
//! between, the FMM local planner drives toward the current goal.
//!
//! Cycle decision order:
//! 1. pending detections: verify (or commit directly without the detection helper);
//! 2. a committed goal (confirmed target, or a false target past the detection
//!    threshold) persists, with transient untrap goals on collision;
//! 3. collision: centroid of the largest navigable region;
//! 4. sleeping advisor: best frontier by cost-utility;
//! 5. otherwise the advisor's frontier, possibly starting a sleep.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advisors::{
    select_frontier, AdvisorError, Answer, DetectionKey, Evidence, FrontierScorer, PriorScorerConfig, ScoredFrontier,
    TargetVerifier,
};
use crate::frontier::{frontiers_from_map, score_frontier_cu, Frontier, FrontierConfig};
use crate::grid::{disk_offsets, BitGrid, Cell};
use crate::helpers::{
    agent_goal_distance, detection_decision, dormancy_check, largest_connected_region, region_centroid, CollisionKind,
    DetectionDecision, FalseTargetRegistry, HelperConfig, StuckLatch,
};
use crate::mapping::{MapConfig, MapError, SemanticMap};
use crate::planner::{bearing_between, fmm_distance_field, fmm_until, goal_sources, infeasible, plan_with_field, DistanceField, LocalPlan, LocalPlannerConfig, PlannerPose};
use crate::scene::{corrupt_labels, sense, step as sim_step, Action, AgentPose, MotionConfig, Scene, SensorConfig};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Advisor(#[from] AdvisorError),
    #[error("episode already finished")]
    Finished,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Explore,
    Untrap,
    FreeExplore,
    TargetNav,
    FalseTargetNav,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HelperToggles {
    pub collision: bool,
    pub exploration: bool,
    pub detection: bool,
}

impl Default for HelperToggles {
    fn default() -> Self {
        Self::all()
    }
}

impl HelperToggles {
    pub const fn all() -> Self {
        Self {
            collision: true,
            exploration: true,
            detection: true,
        }
    }

    pub const fn none() -> Self {
        Self {
            collision: false,
            exploration: false,
            detection: false,
        }
    }

    /// Short label: `none`, `all`, or the enabled helpers' initials.
    pub fn label(&self) -> String {
        match (self.collision, self.exploration, self.detection) {
            (false, false, false) => "none".into(),
            (true, true, true) => "all".into(),
            (c, e, d) => [(c, "C"), (e, "E"), (d, "D")]
                .iter()
                .filter(|(on, _)| *on)
                .map(|(_, s)| *s)
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// A goal is replaced by a scheduled cycle once it is this many steps old.
    pub goal_update_interval: u32,
    pub toggles: HelperToggles,
    pub frontier: FrontierConfig,
    pub prior: PriorScorerConfig,
    pub helpers: HelperConfig,
    pub planner: LocalPlannerConfig,
    /// Dilated (but not raw) obstacle cells within this radius of the agent stay traversable.
    pub agent_clearance_cells: f64,
    /// New target cells this close to a masked detection are masked without verification.
    pub false_target_merge_cells: f64,
    /// Stop radius toward a final goal, as a fraction of the success radius.
    pub stop_radius_factor: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            goal_update_interval: 10,
            toggles: HelperToggles::all(),
            frontier: FrontierConfig::default(),
            prior: PriorScorerConfig::default(),
            helpers: HelperConfig::default(),
            planner: LocalPlannerConfig::default(),
            agent_clearance_cells: 2.0,
            false_target_merge_cells: 5.0,
            stop_radius_factor: 0.8,
        }
    }
}

impl PolicyConfig {
    /// Copy with every cell-valued constant multiplied by `factor`, e.g.
    /// 0.5 when moving from 0.05 m to 0.1 m cells. The cost weight of the
    /// cost-utility score scales too, since utility counts area.
    pub fn rescaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        let f = &mut out.frontier;
        f.dilation_radius *= factor;
        f.min_region_size = ((f.min_region_size as f64 * factor).round() as usize).max(1);
        f.object_radius *= factor;
        f.utility_radius *= factor;
        f.lambda_cu *= factor;
        let dilation = f.dilation_radius;
        out.helpers.frontier_match_cells *= factor;
        // The tolerance has to reach past the dilation band around a blocked goal.
        out.planner.goal_tolerance_cells = (out.planner.goal_tolerance_cells * factor).max(dilation + 1.0);
        out.agent_clearance_cells *= factor;
        out.false_target_merge_cells *= factor;
        out
    }
}

/// Everything an agent needs besides the scene and advisors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub motion: MotionConfig,
    pub sensor: SensorConfig,
    pub map: MapConfig,
    /// Let decoys show up under their apparent category.
    pub corrupt_labels: bool,
    pub policy: PolicyConfig,
}

impl AgentConfig {
    /// Defaults with the map at `resolution` m per cell, covering the same
    /// area, and cell-valued policy constants scaled to the same metric size.
    pub fn at_resolution(resolution: f64) -> Self {
        let base = Self::default();
        let factor = base.map.resolution / resolution;
        let side = |n: usize| (((n as f64 * factor) / 2.0).round() as usize * 2).max(2);
        Self {
            map: MapConfig {
                width: side(base.map.width),
                height: side(base.map.height),
                resolution,
                ..base.map
            },
            policy: base.policy.rescaled(factor),
            ..base
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceEvent {
    Collision { kind: CollisionKind },
    /// A detection cluster; `answer` is absent when no verifier ran.
    Detection { cells: Vec<Cell>, answer: Option<Answer> },
    Masked { cells: Vec<Cell> },
    /// Fresh object cells next to a registered false target, masked without asking.
    AutoMasked { cells: Vec<Cell> },
    TargetConfirmed,
    FalseTargetFallback,
    SleepStart,
    NoFrontier,
}

/// One line of the episode trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u32,
    /// Pose after the action.
    pub pose: AgentPose,
    pub action: Action,
    pub mode: Mode,
    pub goal: Option<Cell>,
    pub events: Vec<TraceEvent>,
    /// On cycle steps: the counter the cycle saw (the new value when a sleep
    /// starts). Elsewhere: the current counter.
    pub sleep_counter: u32,
    /// Frontier-scorer invocations during this step.
    pub advisor_calls: u32,
    /// A global-policy cycle ran this step.
    pub global_update: bool,
    pub feasible: bool,
    pub collided: bool,
    pub displacement: f64,
}

/// Per-episode policy state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub mode: Mode,
    pub long_term_goal: Option<Cell>,
    pub f_llm_previous: Option<Cell>,
    pub sleep_counter: u32,
    pub registry: FalseTargetRegistry,
    pub step: u32,
    pub goal_age: u32,
    /// Cells of the detection the agent committed to.
    pub confirmed: Option<Vec<Cell>>,
    pub detections: u32,
    pub advisor_calls: u64,
}

impl Default for PolicyState {
    fn default() -> Self {
        Self {
            mode: Mode::Explore,
            long_term_goal: None,
            f_llm_previous: None,
            sleep_counter: 0,
            registry: FalseTargetRegistry::default(),
            step: 0,
            goal_age: 0,
            confirmed: None,
            detections: 0,
            advisor_calls: 0,
        }
    }
}

struct FieldCache {
    goal: Cell,
    traversable: BitGrid,
    field: DistanceField,
}

/// One agent running one episode in a scene.
pub struct Agent<'a> {
    scene: &'a Scene,
    cfg: &'a AgentConfig,
    scorer: &'a dyn FrontierScorer,
    verifier: &'a dyn TargetVerifier,
    episode_id: u64,
    target: u8,
    success_radius: f64,
    pose: AgentPose,
    map: SemanticMap,
    state: PolicyState,
    dilated: BitGrid,
    dilation: Vec<(i32, i32)>,
    cache: Option<FieldCache>,
    latch: StuckLatch,
    last_action: Option<Action>,
    last_displacement: f64,
    last_feasible: bool,
    stopped: bool,
}

impl<'a> Agent<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        scene: &'a Scene,
        start: AgentPose,
        target: u8,
        success_radius: f64,
        episode_id: u64,
        cfg: &'a AgentConfig,
        scorer: &'a dyn FrontierScorer,
        verifier: &'a dyn TargetVerifier,
    ) -> Result<Self, PolicyError> {
        let map = SemanticMap::reset(cfg.map.clone(), start.position())?;
        let dilated = BitGrid::new(map.width(), map.height(), false);
        Ok(Self {
            scene,
            cfg,
            scorer,
            verifier,
            episode_id,
            target,
            success_radius,
            pose: start,
            map,
            state: PolicyState::default(),
            dilated,
            dilation: disk_offsets(cfg.policy.frontier.dilation_radius),
            cache: None,
            latch: StuckLatch::default(),
            last_action: None,
            last_displacement: 0.0,
            last_feasible: true,
            stopped: false,
        })
    }

    pub fn pose(&self) -> &AgentPose {
        &self.pose
    }

    pub fn map(&self) -> &SemanticMap {
        &self.map
    }

    pub fn into_map(self) -> SemanticMap {
        self.map
    }

    pub fn state(&self) -> &PolicyState {
        &self.state
    }

    pub fn stopped(&self) -> bool {
        self.stopped
    }

    fn policy(&self) -> &'a PolicyConfig {
        &self.cfg.policy
    }

    /// Sense, update the map, run a global cycle when due, plan locally and
    /// apply the action.
    pub fn step(&mut self) -> Result<TraceRecord, PolicyError> {
        if self.stopped {
            return Err(PolicyError::Finished);
        }
        let pc = self.policy();
        let mut obs = sense(self.scene, &self.pose, &self.cfg.sensor);
        if self.cfg.corrupt_labels {
            corrupt_labels(self.scene, &mut obs);
        }
        self.map.integrate_observation(&self.pose, &obs)?;
        self.update_dilation();

        let mut events = Vec::new();
        let pending = self.collect_detections(&mut events);

        let stuck = self.last_action == Some(Action::MoveForward)
            && self.last_displacement < self.cfg.motion.forward_step_m;
        let latched = if self.last_action == Some(Action::MoveForward) {
            self.latch.update(stuck, pc.helpers.stuck_latch)
        } else {
            false
        };
        let collision = if !self.last_feasible {
            Some(CollisionKind::NoFeasiblePath)
        } else if latched {
            Some(CollisionKind::StuckMotion)
        } else {
            None
        };
        if let Some(kind) = collision {
            events.push(TraceEvent::Collision { kind });
        }

        if !pc.helpers.sleep_counts_cycles && pc.toggles.exploration && self.state.sleep_counter > 0 && self.state.step > 0 {
            self.state.sleep_counter -= 1;
        }

        let step = self.state.step;
        let scheduled = self.state.goal_age >= pc.goal_update_interval.max(1);
        let collision_event = collision.is_some() && pc.toggles.collision;
        let run_cycle = scheduled || self.state.long_term_goal.is_none() || !pending.is_empty() || collision_event;
        let mut advisor_calls = 0;
        let mut sleep_shown = self.state.sleep_counter;
        if run_cycle {
            let calls_before = self.state.advisor_calls;
            sleep_shown = self.plan_global(pending, collision_event, &mut events)?;
            advisor_calls = (self.state.advisor_calls - calls_before) as u32;
            self.state.goal_age = 0;
        }

        let plan = self.plan_local();
        let outcome = sim_step(self.scene, &self.pose, plan.action, &self.cfg.motion);
        self.pose = outcome.pose;
        self.last_action = Some(plan.action);
        self.last_displacement = outcome.displacement;
        self.last_feasible = plan.feasible;
        if plan.action == Action::Stop {
            self.stopped = true;
        }
        let record = TraceRecord {
            step,
            pose: self.pose,
            action: plan.action,
            mode: self.state.mode,
            goal: self.state.long_term_goal,
            events,
            sleep_counter: sleep_shown,
            advisor_calls,
            global_update: run_cycle,
            feasible: plan.feasible,
            collided: outcome.collided,
            displacement: outcome.displacement,
        };
        self.state.step += 1;
        self.state.goal_age += 1;
        Ok(record)
    }

    fn update_dilation(&mut self) {
        for &c in self.map.fresh_obstacles() {
            for &(dx, dy) in &self.dilation {
                self.dilated.set(c.offset(dx, dy), true);
            }
        }
    }

    fn agent_cell(&self) -> Cell {
        self.map.current_cell()
    }

    /// Continuous agent position in map cell units.
    fn planner_pose(&self) -> PlannerPose {
        let res = self.map.resolution();
        let o = self.map.origin();
        let c = self.map.config().center();
        PlannerPose {
            cell: self.agent_cell(),
            x: f64::from(c.x) + (self.pose.x - o.x) / res,
            y: f64::from(c.y) + (self.pose.y - o.y) / res,
            heading: self.pose.heading,
        }
    }

    fn near(cells: &[Cell], c: Cell, r: f64) -> bool {
        let r2 = r * r + 1e-9;
        cells.iter().any(|&m| m.dist_sq(c) as f64 <= r2)
    }

    /// New target-labeled cells that need a decision this step.
    fn collect_detections(&mut self, events: &mut Vec<TraceEvent>) -> Vec<Cell> {
        let merge = self.policy().false_target_merge_cells;
        let fresh: Vec<Cell> = self
            .map
            .fresh_objects()
            .iter()
            .filter(|&&(_, k)| k == self.target)
            .map(|&(c, _)| c)
            .collect();
        let mut pending = Vec::new();
        let mut auto = Vec::new();
        for c in fresh {
            if let Some(conf) = self.state.confirmed.as_mut() {
                if Self::near(conf, c, merge) {
                    conf.push(c);
                }
                continue;
            }
            let masked = self
                .state
                .registry
                .entries()
                .iter()
                .any(|e| Self::near(&e.cells, c, merge));
            if masked {
                auto.push(c);
            } else {
                pending.push(c);
            }
        }
        if !auto.is_empty() {
            self.map.mark_false_target(&auto);
            events.push(TraceEvent::AutoMasked { cells: auto });
        }
        pending
    }

    fn clusters(&self, cells: Vec<Cell>) -> Vec<Vec<Cell>> {
        let merge = self.policy().false_target_merge_cells;
        let mut out: Vec<Vec<Cell>> = Vec::new();
        let mut cells = cells;
        cells.sort_unstable();
        for c in cells {
            match out.iter_mut().find(|cl| Self::near(cl, c, merge)) {
                Some(cl) => cl.push(c),
                None => out.push(vec![c]),
            }
        }
        out
    }

    fn evidence(&self, cells: &[Cell]) -> Evidence {
        let scene_cells: Vec<Cell> = cells
            .iter()
            .filter_map(|&c| self.map.map_to_world(c).ok())
            .map(|p| self.scene.cell_of(p))
            .collect();
        Evidence {
            is_target: self.scene.is_true_target(&scene_cells, self.target),
            cells: cells.to_vec(),
        }
    }

    fn nearest(&self, cells: &[Cell]) -> Option<Cell> {
        let a = self.agent_cell();
        cells.iter().copied().min_by_key(|&c| (c.dist_sq(a), c))
    }

    fn set_goal(&mut self, mode: Mode, goal: Option<Cell>) {
        self.state.mode = mode;
        if goal.is_some() {
            self.state.long_term_goal = goal;
        }
    }

    /// One global-policy cycle. Returns the sleep counter value to report.
    fn plan_global(&mut self, pending: Vec<Cell>, collision: bool, events: &mut Vec<TraceEvent>) -> Result<u32, PolicyError> {
        let pc = self.policy();
        let counts_cycles = pc.helpers.sleep_counts_cycles;
        let pre_sleep = self.state.sleep_counter;
        if counts_cycles && pre_sleep > 0 {
            self.state.sleep_counter = pre_sleep - 1;
        }
        let step = self.state.step;

        // Detections.
        if !pending.is_empty() && self.state.confirmed.is_none() {
            for cluster in self.clusters(pending) {
                if !pc.toggles.detection {
                    events.push(TraceEvent::Detection {
                        cells: cluster.clone(),
                        answer: None,
                    });
                    events.push(TraceEvent::TargetConfirmed);
                    self.state.confirmed = Some(cluster);
                    break;
                }
                let evidence = self.evidence(&cluster);
                let key = DetectionKey {
                    episode: self.episode_id,
                    detection_index: self.state.detections,
                };
                self.state.detections += 1;
                let answer = self.verifier.verify(&evidence, self.target, key)?;
                events.push(TraceEvent::Detection {
                    cells: cluster.clone(),
                    answer: Some(answer),
                });
                let confirmed = self.state.confirmed.is_some();
                match detection_decision(step, Some(answer), &self.state.registry, &pc.helpers, confirmed) {
                    Some(DetectionDecision::NavigateToTarget) => {
                        events.push(TraceEvent::TargetConfirmed);
                        self.state.confirmed = Some(cluster);
                        break;
                    }
                    _ => {
                        self.map.mark_false_target(&cluster);
                        events.push(TraceEvent::Masked { cells: cluster.clone() });
                        self.state.registry.record(cluster, step);
                    }
                }
            }
            if let Some(conf) = self.state.confirmed.clone() {
                let goal = self.nearest(&conf);
                self.set_goal(Mode::TargetNav, goal);
                return Ok(pre_sleep);
            }
        }

        // Committed final goals.
        if let Some(conf) = self.state.confirmed.clone() {
            if collision {
                let goal = self.untrap_goal();
                self.set_goal(Mode::Untrap, goal);
            } else {
                let goal = self.nearest(&conf);
                self.set_goal(Mode::TargetNav, goal);
            }
            return Ok(pre_sleep);
        }
        if detection_decision(step, None, &self.state.registry, &pc.helpers, false)
            == Some(DetectionDecision::NavigateToFalseTarget)
        {
            if collision {
                let goal = self.untrap_goal();
                self.set_goal(Mode::Untrap, goal);
            } else {
                if self.state.mode != Mode::FalseTargetNav {
                    events.push(TraceEvent::FalseTargetFallback);
                }
                let cells = self.state.registry.latest().map(|e| e.cells.clone()).unwrap_or_default();
                let goal = self.nearest(&cells);
                self.set_goal(Mode::FalseTargetNav, goal);
            }
            return Ok(pre_sleep);
        }

        if collision {
            let goal = self.untrap_goal();
            self.set_goal(Mode::Untrap, goal);
            return Ok(pre_sleep);
        }

        let sleeping = pc.toggles.exploration && pre_sleep > 0;
        let frontiers = frontiers_from_map(&self.map, &self.dilated, &pc.frontier);
        if frontiers.is_empty() {
            events.push(TraceEvent::NoFrontier);
            let goal = self.untrap_goal();
            let mode = if sleeping { Mode::FreeExplore } else { Mode::Explore };
            self.set_goal(mode, goal);
            return Ok(pre_sleep);
        }
        let field = self.agent_field();

        if sleeping {
            let goal = self.best_cost_utility(&frontiers, field.as_ref());
            self.set_goal(Mode::FreeExplore, goal);
            return Ok(pre_sleep);
        }

        let mut scored = Vec::with_capacity(frontiers.len());
        for f in &frontiers {
            let p = self.scorer.score(&f.nearby_objects, self.target)?;
            self.state.advisor_calls += 1;
            let distance = field.as_ref().map_or(f64::INFINITY, |fd| fd.get(f.center));
            scored.push(ScoredFrontier { p, distance });
        }
        let f_llm = frontiers[select_frontier(&scored)?].center;

        if pc.toggles.exploration {
            let d = match self.state.long_term_goal.map(|g| self.map.map_to_world(g)) {
                Some(Ok(g)) => agent_goal_distance(self.pose.position(), g),
                _ => f64::INFINITY,
            };
            let (sleep, counter) = dormancy_check(d, Some(f_llm), self.state.f_llm_previous, &pc.helpers, 0);
            self.state.f_llm_previous = Some(f_llm);
            if sleep {
                self.state.sleep_counter = counter;
                events.push(TraceEvent::SleepStart);
                let goal = self.best_cost_utility(&frontiers, field.as_ref());
                self.set_goal(Mode::FreeExplore, goal);
                return Ok(counter);
            }
        } else {
            self.state.f_llm_previous = Some(f_llm);
        }
        self.set_goal(Mode::Explore, Some(f_llm));
        Ok(pre_sleep)
    }

    /// Explored cells that are not dilated obstacles, plus the agent clearance disk.
    fn navigable(&self) -> BitGrid {
        let explored = self.map.explored();
        let mut nav = BitGrid::from_vec(
            explored.width(),
            explored.height(),
            explored
                .as_slice()
                .iter()
                .zip(self.dilated.as_slice())
                .map(|(&e, &d)| e && !d)
                .collect(),
        );
        self.clear_agent_disk(&mut nav);
        nav
    }

    fn clear_agent_disk(&self, grid: &mut BitGrid) {
        let a = self.agent_cell();
        let obstacles = self.map.obstacles();
        for (dx, dy) in disk_offsets(self.policy().agent_clearance_cells) {
            let c = a.offset(dx, dy);
            if grid.contains(c) && !obstacles.is_set(c) {
                grid.set(c, true);
            }
        }
    }

    /// Geodesic distances from the agent over known navigable space.
    fn agent_field(&self) -> Option<DistanceField> {
        fmm_distance_field(&self.navigable(), &[self.agent_cell()]).ok()
    }

    fn untrap_goal(&self) -> Option<Cell> {
        largest_connected_region(&self.navigable())
            .ok()
            .and_then(|r| region_centroid(&r))
    }

    fn best_cost_utility(&self, frontiers: &[Frontier], field: Option<&DistanceField>) -> Option<Cell> {
        let best = field.and_then(|field| {
            frontiers
                .iter()
                .map(|f| (score_frontier_cu(f, field, self.map.explored(), &self.policy().frontier), f))
                .filter(|(s, _)| s.is_finite())
                .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.id.cmp(&a.1.id)))
                .map(|(_, f)| f.center)
        });
        best.or_else(|| self.untrap_goal())
    }

    fn traversable(&self) -> BitGrid {
        let mut t = self.dilated.map(|&d| !d);
        self.clear_agent_disk(&mut t);
        t
    }

    fn stop_radius_cells(&self) -> Option<f64> {
        match self.state.mode {
            Mode::TargetNav | Mode::FalseTargetNav => {
                Some(self.policy().stop_radius_factor * self.success_radius / self.map.resolution())
            }
            _ => None,
        }
    }

    fn plan_local(&mut self) -> LocalPlan {
        let pose = self.planner_pose();
        let Some(goal) = self.state.long_term_goal else {
            return LocalPlan {
                action: Action::TurnRight,
                feasible: true,
                distance: None,
                desired_bearing: None,
            };
        };
        let pc = self.policy();
        if let Some(r) = self.stop_radius_cells() {
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
        let traversable = self.traversable();
        let reuse = !pc.planner.recompute_every_step
            && self
                .cache
                .as_ref()
                .is_some_and(|c| c.goal == goal && cache_still_valid(c, &traversable, pose.cell));
        if !reuse {
            let sources = goal_sources(&traversable, goal, pc.planner.goal_tolerance_cells);
            match fmm_until(&traversable, &sources, Some(pose.cell)) {
                Ok(field) => {
                    self.cache = Some(FieldCache {
                        goal,
                        traversable,
                        field,
                    })
                }
                Err(_) => {
                    self.cache = None;
                    return infeasible(&pose, bearing_between(pose.x, pose.y, goal), &pc.planner);
                }
            }
        }
        let field = &self.cache.as_ref().expect("field cached above").field;
        plan_with_field(field, &pose, goal, &pc.planner)
    }
}

/// A cached goal field stays exact for the agent as long as no cell at or
/// below the agent's distance (or next to one) changed traversability.
fn cache_still_valid(cache: &FieldCache, traversable: &BitGrid, agent: Cell) -> bool {
    let field = &cache.field;
    if !field.is_final(agent) {
        return false;
    }
    let limit = field.get(agent) + 1.0;
    for (i, (&old, &new)) in cache.traversable.as_slice().iter().zip(traversable.as_slice()).enumerate() {
        if old == new {
            continue;
        }
        let c = traversable.cell_at(i);
        let touches = std::iter::once((0, 0))
            .chain(crate::grid::NEIGHBORS_8)
            .any(|(dx, dy)| field.get(c.offset(dx, dy)) <= limit);
        if touches {
            return false;
        }
    }
    true
}

