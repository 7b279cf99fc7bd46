//! Ground-truth world: scenes, agent kinematics, ray sensing and episodes.
//!
//! World coordinates are meters with the origin at the outer corner of scene
//! cell `(0, 0)`; cell `(i, j)` covers `[i*res, (i+1)*res) x [j*res, (j+1)*res)`.
//! Headings are degrees counter-clockwise from +x.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{BitGrid, Cell, Grid, NEIGHBORS_4, NEIGHBORS_8};

/// Object categories, indexed 0..NUM_CATEGORIES.
pub const CATEGORY_NAMES: [&str; 6] = ["chair", "couch", "potted_plant", "bed", "toilet", "tv_monitor"];
pub const NUM_CATEGORIES: usize = CATEGORY_NAMES.len();

pub const CHAIR: u8 = 0;
pub const COUCH: u8 = 1;
pub const POTTED_PLANT: u8 = 2;
pub const BED: u8 = 3;
pub const TOILET: u8 = 4;
pub const TV_MONITOR: u8 = 5;

pub const DEFAULT_MAX_STEPS: u32 = 500;

pub fn category_index(name: &str) -> Option<u8> {
    CATEGORY_NAMES.iter().position(|&n| n == name).map(|i| i as u8)
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("infeasible generation parameters: {0}")]
    InfeasibleParams(String),
    #[error("scene generation failed after {0} attempts")]
    GenerationFailed(usize),
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("unsupported scene file version {0}")]
    Version(u32),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl AgentPose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_heading(heading),
        }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Maps any angle in degrees into `[0, 360)`.
pub fn normalize_heading(deg: f64) -> f64 {
    let h = deg.rem_euclid(360.0);
    if h >= 360.0 {
        0.0
    } else {
        h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    MoveForward,
    TurnLeft,
    TurnRight,
    LookUp,
    LookDown,
    Stop,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::MoveForward,
        Action::TurnLeft,
        Action::TurnRight,
        Action::LookUp,
        Action::LookDown,
        Action::Stop,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionConfig {
    pub forward_step_m: f64,
    pub turn_angle_deg: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            forward_step_m: 0.25,
            turn_angle_deg: 30.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    pub fov_deg: f64,
    pub ray_count: usize,
    pub max_range_m: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            fov_deg: 90.0,
            ray_count: 91,
            max_range_m: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    /// Degrees relative to the agent heading, positive to the left.
    pub bearing_deg: f64,
    /// Distance to the first obstacle cell boundary, or the max range.
    pub hit_distance: f64,
    pub hit_label: Option<u8>,
    pub hit_is_obstacle: bool,
    #[serde(skip)]
    pub hit_cell: Option<Cell>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub rays: Vec<Ray>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub category: u8,
    pub cells: Vec<Cell>,
}

/// An unlabeled object that a corrupted detector reports as `apparent_category`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoy {
    pub apparent_category: u8,
    pub cells: Vec<Cell>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub pose: AgentPose,
    pub collided: bool,
    pub displacement: f64,
}

/// Immutable ground-truth scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: String,
    pub resolution: f64,
    /// `true` marks an obstacle cell.
    pub occupancy: BitGrid,
    pub semantics: Grid<Option<u8>>,
    pub target_instances: Vec<ObjectInstance>,
    pub decoys: Vec<Decoy>,
    pub spawn_points: Vec<Cell>,
    decoy_labels: Grid<Option<u8>>,
}

impl Scene {
    /// Assembles and validates a scene.
    pub fn new(
        id: impl Into<String>,
        resolution: f64,
        occupancy: BitGrid,
        semantics: Grid<Option<u8>>,
        target_instances: Vec<ObjectInstance>,
        decoys: Vec<Decoy>,
        spawn_points: Vec<Cell>,
    ) -> Result<Self, SceneError> {
        let mut decoy_labels = Grid::new(occupancy.width(), occupancy.height(), None);
        for d in &decoys {
            for &c in &d.cells {
                decoy_labels.set(c, Some(d.apparent_category));
            }
        }
        let scene = Self {
            id: id.into(),
            resolution,
            occupancy,
            semantics,
            target_instances,
            decoys,
            spawn_points,
            decoy_labels,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn width(&self) -> usize {
        self.occupancy.width()
    }

    pub fn height(&self) -> usize {
        self.occupancy.height()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let inv = |m: String| Err(SceneError::Invalid(m));
        if !(self.resolution > 0.0) {
            return inv(format!("resolution {} must be positive", self.resolution));
        }
        if self.semantics.width() != self.width() || self.semantics.height() != self.height() {
            return inv("semantic grid shape differs from occupancy".into());
        }
        for (c, label) in self.semantics.iter() {
            if let Some(k) = *label {
                if usize::from(k) >= NUM_CATEGORIES {
                    return inv(format!("cell {c:?} has unknown category {k}"));
                }
                if !self.occupancy.is_set(c) {
                    return inv(format!("labeled cell {c:?} is not an obstacle"));
                }
            }
        }
        for inst in &self.target_instances {
            if inst.cells.is_empty() {
                return inv("empty object instance".into());
            }
            for &c in &inst.cells {
                if self.semantics.get(c).copied().flatten() != Some(inst.category) {
                    return inv(format!("instance cell {c:?} lacks label {}", inst.category));
                }
            }
        }
        for d in &self.decoys {
            for &c in &d.cells {
                if !self.occupancy.is_set(c) {
                    return inv(format!("decoy cell {c:?} is not an obstacle"));
                }
            }
        }
        for &s in &self.spawn_points {
            if !self.is_free(s) {
                return inv(format!("spawn point {s:?} is not free"));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn is_free(&self, c: Cell) -> bool {
        matches!(self.occupancy.get(c), Some(false))
    }

    pub fn cell_of(&self, p: Point) -> Cell {
        Cell::new(
            (p.x / self.resolution).floor() as i32,
            (p.y / self.resolution).floor() as i32,
        )
    }

    pub fn cell_center(&self, c: Cell) -> Point {
        Point::new(
            (f64::from(c.x) + 0.5) * self.resolution,
            (f64::from(c.y) + 0.5) * self.resolution,
        )
    }

    pub fn has_category(&self, category: u8) -> bool {
        self.target_instances.iter().any(|i| i.category == category)
    }

    /// Label a corrupted detector would report for `c`, ground truth first.
    pub fn apparent_label(&self, c: Cell) -> Option<u8> {
        self.semantics
            .get(c)
            .copied()
            .flatten()
            .or_else(|| self.decoy_labels.get(c).copied().flatten())
    }

    /// Ground-truth judgement used as verifier evidence: does any of the cells
    /// truly belong to an instance of `category`?
    pub fn is_true_target(&self, cells: &[Cell], category: u8) -> bool {
        cells
            .iter()
            .any(|&c| self.semantics.get(c).copied().flatten() == Some(category))
    }

    /// Euclidean distance from `p` to the nearest cell center of any instance of `category`.
    pub fn distance_to_category(&self, p: Point, category: u8) -> Option<f64> {
        self.target_instances
            .iter()
            .filter(|i| i.category == category)
            .flat_map(|i| i.cells.iter())
            .map(|&c| self.cell_center(c).dist(p))
            .min_by(f64::total_cmp)
    }

    pub fn spawn_pose(&self, spawn: Cell, heading: f64) -> AgentPose {
        let p = self.cell_center(spawn);
        AgentPose::new(p.x, p.y, heading)
    }
}

/// Applies one action. Forward motion is swept at half-cell spacing and
/// rejected wholesale if any sample lands on an obstacle or leaves the scene.
pub fn step(scene: &Scene, pose: &AgentPose, action: Action, motion: &MotionConfig) -> StepOutcome {
    let unchanged = |collided| StepOutcome {
        pose: *pose,
        collided,
        displacement: 0.0,
    };
    match action {
        Action::MoveForward => {
            let dist = motion.forward_step_m;
            let rad = pose.heading.to_radians();
            let (dx, dy) = (rad.cos() * dist, rad.sin() * dist);
            let samples = (dist / (scene.resolution * 0.5)).ceil().max(1.0) as usize;
            for i in 1..=samples {
                let t = i as f64 / samples as f64;
                let p = Point::new(pose.x + dx * t, pose.y + dy * t);
                if !scene.is_free(scene.cell_of(p)) {
                    return unchanged(true);
                }
            }
            StepOutcome {
                pose: AgentPose::new(pose.x + dx, pose.y + dy, pose.heading),
                collided: false,
                displacement: dist,
            }
        }
        Action::TurnLeft => StepOutcome {
            pose: AgentPose::new(pose.x, pose.y, pose.heading + motion.turn_angle_deg),
            collided: false,
            displacement: 0.0,
        },
        Action::TurnRight => StepOutcome {
            pose: AgentPose::new(pose.x, pose.y, pose.heading - motion.turn_angle_deg),
            collided: false,
            displacement: 0.0,
        },
        Action::LookUp | Action::LookDown | Action::Stop => unchanged(false),
    }
}

/// Bearings of the sensor rays, evenly spread across the field of view.
pub fn ray_bearings(sensor: &SensorConfig) -> Vec<f64> {
    match sensor.ray_count {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n)
            .map(|i| -sensor.fov_deg / 2.0 + sensor.fov_deg * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Casts one ray per bearing through the occupancy grid (grid DDA).
/// Labels are ground truth; see [`corrupt_labels`] for the detector model.
pub fn sense(scene: &Scene, pose: &AgentPose, sensor: &SensorConfig) -> Observation {
    let rays = ray_bearings(sensor)
        .into_iter()
        .map(|bearing| {
            let (dist, cell) = cast_ray(scene, pose, pose.heading + bearing, sensor.max_range_m);
            match cell {
                Some(c) => Ray {
                    bearing_deg: bearing,
                    hit_distance: dist,
                    hit_label: scene.semantics.get(c).copied().flatten(),
                    hit_is_obstacle: true,
                    hit_cell: Some(c),
                },
                None => Ray {
                    bearing_deg: bearing,
                    hit_distance: sensor.max_range_m,
                    hit_label: None,
                    hit_is_obstacle: false,
                    hit_cell: None,
                },
            }
        })
        .collect();
    Observation { rays }
}

/// Replaces labels of rays that hit decoys with the decoy's apparent category.
pub fn corrupt_labels(scene: &Scene, obs: &mut Observation) {
    for ray in &mut obs.rays {
        if let Some(c) = ray.hit_cell {
            if ray.hit_label.is_none() {
                ray.hit_label = scene.decoy_labels.get(c).copied().flatten();
            }
        }
    }
}

fn cast_ray(scene: &Scene, pose: &AgentPose, heading_deg: f64, max_range: f64) -> (f64, Option<Cell>) {
    let res = scene.resolution;
    let rad = heading_deg.to_radians();
    let (dx, dy) = (rad.cos(), rad.sin());
    let (px, py) = (pose.x / res, pose.y / res);
    let mut cell = Cell::new(px.floor() as i32, py.floor() as i32);
    let step_x = if dx > 0.0 { 1 } else { -1 };
    let step_y = if dy > 0.0 { 1 } else { -1 };
    let t_delta_x = if dx.abs() < 1e-12 { f64::INFINITY } else { 1.0 / dx.abs() };
    let t_delta_y = if dy.abs() < 1e-12 { f64::INFINITY } else { 1.0 / dy.abs() };
    let mut t_max_x = if dx.abs() < 1e-12 {
        f64::INFINITY
    } else if dx > 0.0 {
        (f64::from(cell.x) + 1.0 - px) / dx
    } else {
        (px - f64::from(cell.x)) / -dx
    };
    let mut t_max_y = if dy.abs() < 1e-12 {
        f64::INFINITY
    } else if dy > 0.0 {
        (f64::from(cell.y) + 1.0 - py) / dy
    } else {
        (py - f64::from(cell.y)) / -dy
    };
    let max_t = max_range / res;
    loop {
        let t_entry;
        if t_max_x < t_max_y {
            t_entry = t_max_x;
            t_max_x += t_delta_x;
            cell.x += step_x;
        } else {
            t_entry = t_max_y;
            t_max_y += t_delta_y;
            cell.y += step_y;
        }
        if t_entry > max_t {
            return (max_range, None);
        }
        match scene.occupancy.get(cell) {
            Some(true) => return ((t_entry * res).min(max_range), Some(cell)),
            Some(false) => {}
            // Leaving the scene: nothing left to hit.
            None => return (max_range, None),
        }
    }
}

/// True iff the agent is strictly closer than `success_radius` to any instance of `target`.
pub fn check_success(scene: &Scene, pose: &AgentPose, target: u8, success_radius: f64) -> bool {
    scene
        .distance_to_category(pose.position(), target)
        .is_some_and(|d| d < success_radius)
}

/// One navigation episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: u64,
    pub scene_id: String,
    pub start: AgentPose,
    pub target: u8,
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
    #[serde(default = "default_success_radius")]
    pub success_radius: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_max_steps() -> u32 {
    DEFAULT_MAX_STEPS
}

fn default_success_radius() -> f64 {
    1.0
}

impl Episode {
    pub fn validate(&self, scene: &Scene) -> Result<(), SceneError> {
        if usize::from(self.target) >= NUM_CATEGORIES {
            return Err(SceneError::Invalid(format!("target {} out of range", self.target)));
        }
        if !scene.has_category(self.target) {
            return Err(SceneError::Invalid(format!(
                "scene {} has no instance of {}",
                scene.id, CATEGORY_NAMES[usize::from(self.target)]
            )));
        }
        if !scene.is_free(scene.cell_of(self.start.position())) {
            return Err(SceneError::Invalid("start pose is not on a free cell".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Procedural generation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub resolution: f64,
    pub room_count: (usize, usize),
    pub room_size_m: (f64, f64),
    /// Wall thickness between neighbouring rooms, i.e. corridor length.
    pub wall_gap_m: f64,
    pub corridor_width_m: f64,
    /// Objects per room, inclusive range.
    pub objects_per_room: (usize, usize),
    /// Probability that a room receives a decoy object.
    pub decoy_density: f64,
    pub dead_ends: (usize, usize),
    pub dead_end_width_m: f64,
    pub dead_end_length_m: (f64, f64),
    pub spawn_count: usize,
    /// Minimum clearance of spawn points from any obstacle.
    pub spawn_clearance_m: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            resolution: 0.05,
            room_count: (3, 5),
            room_size_m: (3.0, 4.5),
            wall_gap_m: 0.6,
            corridor_width_m: 1.0,
            objects_per_room: (1, 3),
            decoy_density: 0.3,
            dead_ends: (0, 2),
            dead_end_width_m: 0.4,
            dead_end_length_m: (1.0, 2.0),
            spawn_count: 4,
            spawn_clearance_m: 0.4,
        }
    }
}

impl SceneParams {
    fn check(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InfeasibleParams(m.to_string()));
        if !(self.resolution > 0.0) {
            return bad("resolution must be positive");
        }
        if self.room_count.0 == 0 || self.room_count.0 > self.room_count.1 {
            return bad("room_count must be a non-empty range starting at 1 or more");
        }
        if self.room_size_m.0 <= 0.0 || self.room_size_m.0 > self.room_size_m.1 {
            return bad("room_size_m must be a positive ordered range");
        }
        if self.objects_per_room.0 > self.objects_per_room.1 {
            return bad("objects_per_room must be ordered");
        }
        if self.dead_ends.0 > self.dead_ends.1 {
            return bad("dead_ends must be ordered");
        }
        if !(0.0..=1.0).contains(&self.decoy_density) {
            return bad("decoy_density must be in [0, 1]");
        }
        if self.wall_gap_m < 2.0 * self.resolution {
            return bad("wall_gap_m must be at least two cells");
        }
        // Neighbouring rooms are offset inside their slots; the corridor needs
        // room in the guaranteed overlap of their spans.
        let overlap = 2.0 * self.room_size_m.0 - self.room_size_m.1;
        if self.room_count.1 > 1 && overlap < self.corridor_width_m + 2.0 * self.resolution {
            return bad("room_size_m range too wide for corridor_width_m");
        }
        if self.corridor_width_m < self.resolution {
            return bad("corridor narrower than one cell");
        }
        if self.spawn_count == 0 {
            return bad("spawn_count must be positive");
        }
        if self.spawn_clearance_m * 2.0 >= self.room_size_m.0 {
            return bad("spawn clearance does not fit in the smallest room");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Rect {
    x0: i32,
    y0: i32,
    x1: i32, // exclusive
    y1: i32, // exclusive
}

impl Rect {
    fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (self.y0..self.y1).flat_map(move |y| (self.x0..self.x1).map(move |x| Cell::new(x, y)))
    }

    fn contains(&self, c: Cell) -> bool {
        c.x >= self.x0 && c.x < self.x1 && c.y >= self.y0 && c.y < self.y1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RoomKind {
    Bedroom,
    Bathroom,
    Living,
    Office,
}

impl RoomKind {
    const ALL: [RoomKind; 4] = [RoomKind::Bedroom, RoomKind::Bathroom, RoomKind::Living, RoomKind::Office];

    fn anchor(self) -> u8 {
        match self {
            RoomKind::Bedroom => BED,
            RoomKind::Bathroom => TOILET,
            RoomKind::Living => COUCH,
            RoomKind::Office => CHAIR,
        }
    }

    fn extras(self) -> &'static [u8] {
        match self {
            RoomKind::Bedroom => &[TV_MONITOR, CHAIR, POTTED_PLANT],
            RoomKind::Bathroom => &[POTTED_PLANT],
            RoomKind::Living => &[TV_MONITOR, CHAIR, POTTED_PLANT],
            RoomKind::Office => &[TV_MONITOR, POTTED_PLANT],
        }
    }
}

const MAX_ATTEMPTS: usize = 64;

/// Generates a connected multi-room scene, deterministic under `seed`.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<Scene, SceneError> {
    params.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        if let Some(scene) = try_generate(&mut rng, seed, params)? {
            return Ok(scene);
        }
    }
    Err(SceneError::GenerationFailed(MAX_ATTEMPTS))
}

fn try_generate(rng: &mut ChaCha8Rng, seed: u64, p: &SceneParams) -> Result<Option<Scene>, SceneError> {
    let res = p.resolution;
    let m = |meters: f64| (meters / res).round() as i32;
    let n_rooms = rng.random_range(p.room_count.0..=p.room_count.1);

    // Rooms occupy slots of a lattice grown as a random tree of adjacent slots.
    let span = (n_rooms as f64).sqrt().ceil() as i32 + 1;
    let mut slots: Vec<(i32, i32)> = vec![(0, 0)];
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut guard = 0;
    while slots.len() < n_rooms {
        guard += 1;
        if guard > 10_000 {
            return Ok(None);
        }
        let from = rng.random_range(0..slots.len());
        let (dx, dy) = NEIGHBORS_4[rng.random_range(0..4)];
        let cand = (slots[from].0 + dx, slots[from].1 + dy);
        if slots.contains(&cand) {
            continue;
        }
        let (minx, maxx, miny, maxy) = slots.iter().chain(std::iter::once(&cand)).fold(
            (i32::MAX, i32::MIN, i32::MAX, i32::MIN),
            |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
        );
        if maxx - minx >= span || maxy - miny >= span {
            continue;
        }
        slots.push(cand);
        edges.push((from, slots.len() - 1));
    }
    let minx = slots.iter().map(|s| s.0).min().unwrap_or(0);
    let miny = slots.iter().map(|s| s.1).min().unwrap_or(0);
    for s in &mut slots {
        s.0 -= minx;
        s.1 -= miny;
    }
    let cols = slots.iter().map(|s| s.0).max().unwrap_or(0) + 1;
    let rows = slots.iter().map(|s| s.1).max().unwrap_or(0) + 1;

    let border = m(p.wall_gap_m).max(2);
    let room_max = m(p.room_size_m.1);
    let room_min = m(p.room_size_m.0);
    let gap = m(p.wall_gap_m).max(2);
    let pitch = room_max + gap;
    let width = (border * 2 + cols * pitch - gap) as usize;
    let height = (border * 2 + rows * pitch - gap) as usize;

    let rooms: Vec<Rect> = slots
        .iter()
        .map(|&(sx, sy)| {
            let w = rng.random_range(room_min..=room_max);
            let h = rng.random_range(room_min..=room_max);
            let ox = border + sx * pitch + rng.random_range(0..=room_max - w);
            let oy = border + sy * pitch + rng.random_range(0..=room_max - h);
            Rect {
                x0: ox,
                y0: oy,
                x1: ox + w,
                y1: oy + h,
            }
        })
        .collect();

    let mut occupancy = BitGrid::new(width, height, true);
    let carve = |g: &mut BitGrid, r: &Rect| {
        for c in r.cells() {
            g.set(c, false);
        }
    };
    for r in &rooms {
        carve(&mut occupancy, r);
    }

    // Corridors along the tree edges.
    let cw = m(p.corridor_width_m).max(1);
    let mut doors: Vec<Rect> = Vec::new();
    for &(a, b) in &edges {
        let (ra, rb) = (rooms[a], rooms[b]);
        let horizontal = slots[a].1 == slots[b].1;
        let (lo, hi) = if horizontal {
            (ra.y0.max(rb.y0) + 1, ra.y1.min(rb.y1) - 1 - cw)
        } else {
            (ra.x0.max(rb.x0) + 1, ra.x1.min(rb.x1) - 1 - cw)
        };
        if hi < lo {
            return Ok(None);
        }
        let start = rng.random_range(lo..=hi);
        let corridor = if horizontal {
            let (left, right) = if ra.x0 < rb.x0 { (ra, rb) } else { (rb, ra) };
            Rect {
                x0: left.x1,
                y0: start,
                x1: right.x0,
                y1: start + cw,
            }
        } else {
            let (low, high) = if ra.y0 < rb.y0 { (ra, rb) } else { (rb, ra) };
            Rect {
                x0: start,
                y0: low.y1,
                x1: start + cw,
                y1: high.y0,
            }
        };
        carve(&mut occupancy, &corridor);
        doors.push(corridor);
    }

    // Narrow dead-end passages leading off a room into solid wall.
    let n_dead = rng.random_range(p.dead_ends.0..=p.dead_ends.1);
    let dw = m(p.dead_end_width_m).max(1);
    let mut dead_ends: Vec<Rect> = Vec::new();
    let mut tries = 0;
    while dead_ends.len() < n_dead && tries < 50 * (n_dead + 1) {
        tries += 1;
        let room = rooms[rng.random_range(0..rooms.len())];
        let len = m(rng.random_range(p.dead_end_length_m.0..=p.dead_end_length_m.1)).max(2);
        let side = rng.random_range(0..4);
        let rect = match side {
            0 | 1 => {
                if room.y1 - room.y0 < dw + 4 {
                    continue;
                }
                let y = rng.random_range(room.y0 + 2..=room.y1 - 2 - dw);
                if side == 0 {
                    Rect { x0: room.x1, y0: y, x1: room.x1 + len, y1: y + dw }
                } else {
                    Rect { x0: room.x0 - len, y0: y, x1: room.x0, y1: y + dw }
                }
            }
            _ => {
                if room.x1 - room.x0 < dw + 4 {
                    continue;
                }
                let x = rng.random_range(room.x0 + 2..=room.x1 - 2 - dw);
                if side == 2 {
                    Rect { x0: x, y0: room.y1, x1: x + dw, y1: room.y1 + len }
                } else {
                    Rect { x0: x, y0: room.y0 - len, x1: x + dw, y1: room.y0 }
                }
            }
        };
        // The passage plus a one-cell margin must be solid and inside the border.
        let margin = Rect {
            x0: rect.x0 - 1,
            y0: rect.y0 - 1,
            x1: rect.x1 + 1,
            y1: rect.y1 + 1,
        };
        let solid = margin.cells().all(|c| {
            room.contains(c)
                || (occupancy.is_set(c)
                    && c.x >= 1
                    && c.y >= 1
                    && (c.x as usize) < width - 1
                    && (c.y as usize) < height - 1)
        });
        if !solid {
            continue;
        }
        carve(&mut occupancy, &rect);
        dead_ends.push(rect);
    }

    // Keep-out zones in front of openings so furniture never seals a passage.
    let keep_out: Vec<Rect> = doors
        .iter()
        .chain(dead_ends.iter())
        .map(|d| {
            let k = m(0.6).max(2);
            Rect {
                x0: d.x0 - k,
                y0: d.y0 - k,
                x1: d.x1 + k,
                y1: d.y1 + k,
            }
        })
        .collect();

    let mut semantics: Grid<Option<u8>> = Grid::new(width, height, None);
    let mut instances: Vec<ObjectInstance> = Vec::new();
    let mut decoys: Vec<Decoy> = Vec::new();
    let kinds: Vec<RoomKind> = rooms
        .iter()
        .map(|_| RoomKind::ALL[rng.random_range(0..RoomKind::ALL.len())])
        .collect();

    for (ri, room) in rooms.iter().enumerate() {
        let count = rng.random_range(p.objects_per_room.0..=p.objects_per_room.1);
        let kind = kinds[ri];
        for k in 0..count {
            let category = if k == 0 {
                kind.anchor()
            } else {
                let extras = kind.extras();
                extras[rng.random_range(0..extras.len())]
            };
            if let Some(cells) = place_against_wall(rng, &mut occupancy, room, &keep_out, res) {
                for &c in &cells {
                    semantics.set(c, Some(category));
                }
                instances.push(ObjectInstance { category, cells });
            }
        }
    }
    let present: Vec<u8> = {
        let mut v: Vec<u8> = instances.iter().map(|i| i.category).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    if !present.is_empty() {
        for room in &rooms {
            if rng.random_bool(p.decoy_density) {
                let apparent = present[rng.random_range(0..present.len())];
                if let Some(cells) = place_against_wall(rng, &mut occupancy, room, &keep_out, res) {
                    decoys.push(Decoy {
                        apparent_category: apparent,
                        cells,
                    });
                }
            }
        }
    }

    // Spawn points: room cells with clearance, away from dead ends.
    let clearance = crate::grid::dilate(&occupancy, p.spawn_clearance_m / res);
    let mut candidates: Vec<Cell> = rooms
        .iter()
        .flat_map(|r| r.cells().collect::<Vec<_>>())
        .filter(|&c| !clearance.is_set(c))
        .collect();
    if candidates.is_empty() {
        return Ok(None);
    }
    candidates.shuffle(rng);
    let spawn_points: Vec<Cell> = candidates.into_iter().take(p.spawn_count).collect();

    let scene = Scene::new(
        format!("scene-{seed:016x}"),
        res,
        occupancy,
        semantics,
        instances,
        decoys,
        spawn_points,
    )?;
    if !all_targets_reachable(&scene) {
        return Ok(None);
    }
    Ok(Some(scene))
}

/// Places a rectangular object flush against one wall of `room`; the object
/// is rolled back if it would split the free space.
fn place_against_wall(
    rng: &mut ChaCha8Rng,
    occupancy: &mut BitGrid,
    room: &Rect,
    keep_out: &[Rect],
    res: f64,
) -> Option<Vec<Cell>> {
    let m = |meters: f64| ((meters / res).round() as i32).max(1);
    for _ in 0..20 {
        let along = m(rng.random_range(0.4..=1.0));
        let depth = m(rng.random_range(0.4..=0.8));
        let rw = room.x1 - room.x0;
        let rh = room.y1 - room.y0;
        let side = rng.random_range(0..4);
        let rect = match side {
            0 | 1 => {
                if along + 2 >= rw || depth * 2 + 2 >= rh {
                    continue;
                }
                let x0 = rng.random_range(room.x0 + 1..=room.x1 - 1 - along);
                let y0 = if side == 0 { room.y0 } else { room.y1 - depth };
                Rect { x0, y0, x1: x0 + along, y1: y0 + depth }
            }
            _ => {
                if along + 2 >= rh || depth * 2 + 2 >= rw {
                    continue;
                }
                let y0 = rng.random_range(room.y0 + 1..=room.y1 - 1 - along);
                let x0 = if side == 2 { room.x0 } else { room.x1 - depth };
                Rect { x0, y0, x1: x0 + depth, y1: y0 + along }
            }
        };
        let cells: Vec<Cell> = rect.cells().collect();
        if cells
            .iter()
            .any(|&c| occupancy.is_set(c) || keep_out.iter().any(|k| k.contains(c)))
        {
            continue;
        }
        let before = free_components(occupancy);
        for &c in &cells {
            occupancy.set(c, true);
        }
        if free_components(occupancy) != before {
            for &c in &cells {
                occupancy.set(c, false);
            }
            continue;
        }
        return Some(cells);
    }
    None
}

fn free_components(occupancy: &BitGrid) -> usize {
    let mut seen = BitGrid::new(occupancy.width(), occupancy.height(), false);
    let mut count = 0;
    for start in occupancy.cells() {
        if occupancy.is_set(start) || seen.is_set(start) {
            continue;
        }
        count += 1;
        seen.set(start, true);
        let mut queue = VecDeque::from([start]);
        while let Some(c) = queue.pop_front() {
            for &(dx, dy) in &NEIGHBORS_4 {
                let n = c.offset(dx, dy);
                if occupancy.get(n) == Some(&false) && !seen.is_set(n) {
                    seen.set(n, true);
                    queue.push_back(n);
                }
            }
        }
    }
    count
}

/// Free cells 4-reachable from `start`.
pub fn reachable_free_cells(scene: &Scene, start: Cell) -> BitGrid {
    let mut seen = BitGrid::new(scene.width(), scene.height(), false);
    if !scene.is_free(start) {
        return seen;
    }
    seen.set(start, true);
    let mut queue = VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        for &(dx, dy) in &NEIGHBORS_4 {
            let n = c.offset(dx, dy);
            if scene.is_free(n) && !seen.is_set(n) {
                seen.set(n, true);
                queue.push_back(n);
            }
        }
    }
    seen
}

/// Every target instance touches (8-neighbourhood) a free cell reachable from every spawn point.
pub fn all_targets_reachable(scene: &Scene) -> bool {
    scene.spawn_points.iter().all(|&s| {
        let reach = reachable_free_cells(scene, s);
        scene.spawn_points.iter().all(|&o| reach.is_set(o))
            && scene.target_instances.iter().all(|inst| {
                inst.cells.iter().any(|c| {
                    NEIGHBORS_8
                        .iter()
                        .any(|&(dx, dy)| reach.is_set(c.offset(dx, dy)))
                })
            })
    })
}

// ---------------------------------------------------------------------------
// Scene file format
// ---------------------------------------------------------------------------

pub const SCENE_FILE_VERSION: u32 = 1;

/// Versioned JSON scene file. Occupancy is run-length encoded in row-major
/// order as alternating runs, starting with a free run (possibly empty).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub version: u32,
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub occupancy_rle: Vec<u32>,
    /// Sparse `[x, y, category]` triples.
    pub semantic_cells: Vec<(i32, i32, u8)>,
    pub target_instances: Vec<ObjectInstance>,
    #[serde(default)]
    pub decoys: Vec<Decoy>,
    pub spawn_points: Vec<Cell>,
}

impl From<&Scene> for SceneFile {
    fn from(s: &Scene) -> Self {
        let mut rle = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &v in s.occupancy.as_slice() {
            if v == current {
                run += 1;
            } else {
                rle.push(run);
                current = v;
                run = 1;
            }
        }
        rle.push(run);
        let semantic_cells = s
            .semantics
            .iter()
            .filter_map(|(c, l)| l.map(|k| (c.x, c.y, k)))
            .collect();
        Self {
            version: SCENE_FILE_VERSION,
            id: s.id.clone(),
            width: s.width(),
            height: s.height(),
            resolution: s.resolution,
            occupancy_rle: rle,
            semantic_cells,
            target_instances: s.target_instances.clone(),
            decoys: s.decoys.clone(),
            spawn_points: s.spawn_points.clone(),
        }
    }
}

impl TryFrom<SceneFile> for Scene {
    type Error = SceneError;

    fn try_from(f: SceneFile) -> Result<Self, SceneError> {
        if f.version != SCENE_FILE_VERSION {
            return Err(SceneError::Version(f.version));
        }
        let total = f.width * f.height;
        let mut data = Vec::with_capacity(total);
        let mut value = false;
        for &run in &f.occupancy_rle {
            data.extend(std::iter::repeat_n(value, run as usize));
            value = !value;
        }
        if data.len() != total {
            return Err(SceneError::Invalid(format!(
                "occupancy runs cover {} cells, expected {total}",
                data.len()
            )));
        }
        let occupancy = BitGrid::from_vec(f.width, f.height, data);
        let mut semantics = Grid::new(f.width, f.height, None);
        for (x, y, k) in f.semantic_cells {
            if !semantics.set(Cell::new(x, y), Some(k)) {
                return Err(SceneError::Invalid(format!("semantic cell ({x}, {y}) out of bounds")));
            }
        }
        Scene::new(
            f.id,
            f.resolution,
            occupancy,
            semantics,
            f.target_instances,
            f.decoys,
            f.spawn_points,
        )
    }
}

pub fn scene_to_json(scene: &Scene) -> Result<String, SceneError> {
    Ok(serde_json::to_string(&SceneFile::from(scene))?)
}

pub fn scene_from_json(json: &str) -> Result<Scene, SceneError> {
    let file: SceneFile = serde_json::from_str(json)?;
    Scene::try_from(file)
}

pub fn save_scene(scene: &Scene, path: &std::path::Path) -> Result<(), SceneError> {
    std::fs::write(path, scene_to_json(scene)?)?;
    Ok(())
}

pub fn load_scene(path: &std::path::Path) -> Result<Scene, SceneError> {
    scene_from_json(&std::fs::read_to_string(path)?)
}
