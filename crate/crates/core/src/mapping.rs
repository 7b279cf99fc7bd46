//! The agent's top-down semantic belief map.
//!
//! Channel layout for `n` object categories (`C = n + 5`):
//!
//! | channel        | content                        |
//! |----------------|--------------------------------|
//! | 0              | obstacles                      |
//! | 1              | explored area                  |
//! | 2              | current agent location         |
//! | 3              | past agent locations           |
//! | 4 .. 4+n-1     | per-category object masks      |
//! | C-1            | rejected (false) targets       |
//!
//! Map cell `(W/2, H/2)` is centered on the episode start position.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{line_cells, BitGrid, Cell};
use crate::scene::{AgentPose, Observation, Point};

pub const OBSTACLE: usize = 0;
pub const EXPLORED: usize = 1;
pub const CURRENT: usize = 2;
pub const PAST: usize = 3;
pub const OBJECT_BASE: usize = 4;

const SNAPSHOT_MAGIC: &str = "OBJNAV-MAP 1";

#[derive(Debug, Error)]
pub enum MapError {
    #[error("invalid map config: {0}")]
    InvalidConfig(String),
    #[error("point ({x:.3}, {y:.3}) is outside the map")]
    OutOfBounds { x: f64, y: f64 },
    #[error("cell ({0}, {1}) is outside the map")]
    CellOutOfBounds(i32, i32),
    #[error("malformed map snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapConfig {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub num_categories: usize,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            width: 480,
            height: 480,
            resolution: 0.05,
            num_categories: crate::scene::NUM_CATEGORIES,
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<(), MapError> {
        if self.width == 0 || self.height == 0 || self.width % 2 != 0 || self.height % 2 != 0 {
            return Err(MapError::InvalidConfig(format!(
                "dimensions {}x{} must be positive and even",
                self.width, self.height
            )));
        }
        if !(self.resolution > 0.0) {
            return Err(MapError::InvalidConfig("resolution must be positive".into()));
        }
        Ok(())
    }

    pub fn num_channels(&self) -> usize {
        self.num_categories + 5
    }

    pub fn center(&self) -> Cell {
        Cell::new((self.width / 2) as i32, (self.height / 2) as i32)
    }
}

/// Counters for rays that could not be fully integrated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapDiagnostics {
    pub clipped_rays: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticMap {
    config: MapConfig,
    channels: Vec<BitGrid>,
    origin: Point,
    current: Cell,
    fresh_obstacles: Vec<Cell>,
    fresh_objects: Vec<(Cell, u8)>,
    pub diagnostics: MapDiagnostics,
}

impl SemanticMap {
    /// Fresh map with only the agent cell set, centered on `origin`.
    pub fn reset(config: MapConfig, origin: Point) -> Result<Self, MapError> {
        config.validate()?;
        let channels = (0..config.num_channels())
            .map(|_| BitGrid::new(config.width, config.height, false))
            .collect();
        let current = config.center();
        let mut map = Self {
            config,
            channels,
            origin,
            current,
            fresh_obstacles: Vec::new(),
            fresh_objects: Vec::new(),
            diagnostics: MapDiagnostics::default(),
        };
        map.channels[CURRENT].set(current, true);
        Ok(map)
    }

    pub fn config(&self) -> &MapConfig {
        &self.config
    }

    pub fn resolution(&self) -> f64 {
        self.config.resolution
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn height(&self) -> usize {
        self.config.height
    }

    /// `(C, W, H)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels.len(), self.config.width, self.config.height)
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn num_categories(&self) -> usize {
        self.config.num_categories
    }

    pub fn false_target_channel(&self) -> usize {
        self.channels.len() - 1
    }

    pub fn channel(&self, index: usize) -> &BitGrid {
        &self.channels[index]
    }

    pub fn obstacles(&self) -> &BitGrid {
        &self.channels[OBSTACLE]
    }

    pub fn explored(&self) -> &BitGrid {
        &self.channels[EXPLORED]
    }

    pub fn past(&self) -> &BitGrid {
        &self.channels[PAST]
    }

    pub fn objects(&self, category: u8) -> &BitGrid {
        &self.channels[OBJECT_BASE + usize::from(category)]
    }

    pub fn false_targets(&self) -> &BitGrid {
        &self.channels[self.channels.len() - 1]
    }

    /// Obstacle cells first marked by the latest [`Self::integrate_observation`].
    pub fn fresh_obstacles(&self) -> &[Cell] {
        &self.fresh_obstacles
    }

    /// Object cells (with category) first marked by the latest integration.
    pub fn fresh_objects(&self) -> &[(Cell, u8)] {
        &self.fresh_objects
    }

    pub fn current_cell(&self) -> Cell {
        self.current
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        self.channels[0].contains(c)
    }

    pub fn world_to_map(&self, p: Point) -> Result<Cell, MapError> {
        let res = self.config.resolution;
        let center = self.config.center();
        let c = Cell::new(
            center.x + ((p.x - self.origin.x) / res).round() as i32,
            center.y + ((p.y - self.origin.y) / res).round() as i32,
        );
        if self.in_bounds(c) {
            Ok(c)
        } else {
            Err(MapError::OutOfBounds { x: p.x, y: p.y })
        }
    }

    pub fn map_to_world(&self, c: Cell) -> Result<Point, MapError> {
        if !self.in_bounds(c) {
            return Err(MapError::CellOutOfBounds(c.x, c.y));
        }
        Ok(self.cell_to_world_unchecked(c))
    }

    fn cell_to_world_unchecked(&self, c: Cell) -> Point {
        let res = self.config.resolution;
        let center = self.config.center();
        Point::new(
            self.origin.x + f64::from(c.x - center.x) * res,
            self.origin.y + f64::from(c.y - center.y) * res,
        )
    }

    /// Unclamped map-cell coordinate of a world point.
    fn world_to_cell_unchecked(&self, p: Point) -> Cell {
        let res = self.config.resolution;
        let center = self.config.center();
        Cell::new(
            center.x + ((p.x - self.origin.x) / res).round() as i32,
            center.y + ((p.y - self.origin.y) / res).round() as i32,
        )
    }

    /// Projects each ray into the map: traversed cells become explored, the
    /// hit cell becomes obstacle (and object, when labeled). Rays leaving the
    /// map are clipped and counted in [`MapDiagnostics::clipped_rays`].
    pub fn integrate_observation(&mut self, pose: &AgentPose, obs: &Observation) -> Result<(), MapError> {
        let agent = self.world_to_map(pose.position())?;
        let res = self.config.resolution;
        let ft = self.false_target_channel();
        self.fresh_obstacles.clear();
        self.fresh_objects.clear();
        for ray in &obs.rays {
            let rad = (pose.heading + ray.bearing_deg).to_radians();
            // Land just past the cell boundary the ray entered through.
            let reach = if ray.hit_is_obstacle {
                ray.hit_distance + 1e-3 * res
            } else {
                ray.hit_distance
            };
            let end = self.world_to_cell_unchecked(Point::new(
                pose.x + rad.cos() * reach,
                pose.y + rad.sin() * reach,
            ));
            let cells = line_cells(agent, end);
            let last = cells.len() - 1;
            let mut clipped = false;
            for (i, &c) in cells.iter().enumerate() {
                if !self.in_bounds(c) {
                    clipped = true;
                    break;
                }
                self.channels[EXPLORED].set(c, true);
                if i == last && ray.hit_is_obstacle {
                    if !self.channels[OBSTACLE].is_set(c) {
                        self.channels[OBSTACLE].set(c, true);
                        self.fresh_obstacles.push(c);
                    }
                    if let Some(k) = ray.hit_label {
                        let ch = OBJECT_BASE + usize::from(k);
                        if usize::from(k) < self.config.num_categories
                            && !self.channels[ft].is_set(c)
                            && !self.channels[ch].is_set(c)
                        {
                            self.channels[ch].set(c, true);
                            self.fresh_objects.push((c, k));
                        }
                    }
                }
            }
            if clipped {
                self.diagnostics.clipped_rays += 1;
            }
        }
        self.channels[EXPLORED].set(agent, true);
        self.move_agent(agent);
        Ok(())
    }

    fn move_agent(&mut self, cell: Cell) {
        let prev = self.current;
        self.channels[CURRENT].set(prev, false);
        self.channels[PAST].set(prev, true);
        self.channels[CURRENT].set(cell, true);
        self.current = cell;
    }

    /// Moves `cells` from every object channel into the false-target channel.
    /// Returns how many in-bounds cells were processed.
    pub fn mark_false_target(&mut self, cells: &[Cell]) -> usize {
        let ft = self.false_target_channel();
        let mut n = 0;
        for &c in cells {
            if !self.in_bounds(c) {
                continue;
            }
            n += 1;
            self.channels[ft].set(c, true);
            for k in 0..self.config.num_categories {
                self.channels[OBJECT_BASE + k].set(c, false);
            }
        }
        n
    }

    pub fn channel_names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["obstacle", "explored", "current_location", "past_locations"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for k in 0..self.config.num_categories {
            let name = crate::scene::CATEGORY_NAMES
                .get(k)
                .map_or_else(|| format!("category_{k}"), |n| n.to_string());
            names.push(format!("object:{name}"));
        }
        names.push("false_target".into());
        names
    }

    /// Multi-channel dump: a magic line, a JSON header line, then `C*H*W`
    /// bytes (0/1), channel-major and row-major within a channel.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<(), MapError> {
        let header = SnapshotHeader {
            channels: self.channel_names(),
            width: self.config.width,
            height: self.config.height,
            resolution: self.config.resolution,
            origin: self.origin,
            current: self.current,
        };
        writeln!(out, "{SNAPSHOT_MAGIC}")?;
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        for ch in &self.channels {
            let bytes: Vec<u8> = ch.as_slice().iter().map(|&b| u8::from(b)).collect();
            out.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: BufRead>(mut input: R) -> Result<Self, MapError> {
        let mut line = String::new();
        input.read_line(&mut line)?;
        if line.trim_end() != SNAPSHOT_MAGIC {
            return Err(MapError::Snapshot("bad magic line".into()));
        }
        line.clear();
        input.read_line(&mut line)?;
        let header: SnapshotHeader = serde_json::from_str(line.trim_end())?;
        let n = header.channels.len();
        if n < 5 {
            return Err(MapError::Snapshot(format!("{n} channels, need at least 5")));
        }
        let config = MapConfig {
            width: header.width,
            height: header.height,
            resolution: header.resolution,
            num_categories: n - 5,
        };
        config.validate()?;
        let plane = header.width * header.height;
        let mut raw = vec![0u8; plane * n];
        input
            .read_exact(&mut raw)
            .map_err(|e| MapError::Snapshot(format!("truncated channel data: {e}")))?;
        let channels = raw
            .chunks(plane)
            .map(|chunk| BitGrid::from_vec(header.width, header.height, chunk.iter().map(|&b| b != 0).collect()))
            .collect();
        Ok(Self {
            config,
            channels,
            origin: header.origin,
            current: header.current,
            fresh_obstacles: Vec::new(),
            fresh_objects: Vec::new(),
            diagnostics: MapDiagnostics::default(),
        })
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<(), MapError> {
        let file = std::fs::File::create(path)?;
        self.write_snapshot(std::io::BufWriter::new(file))
    }

    pub fn load_snapshot(path: &Path) -> Result<Self, MapError> {
        let file = std::fs::File::open(path)?;
        Self::read_snapshot(std::io::BufReader::new(file))
    }

    /// Binary PGM (P5) of one channel; set cells are white. Row 0 of the
    /// image is the top (largest y) of the map.
    pub fn write_channel_pgm<W: Write>(&self, channel: usize, mut out: W) -> Result<(), MapError> {
        let ch = &self.channels[channel];
        write!(out, "P5\n{} {}\n255\n", ch.width(), ch.height())?;
        for row in (0..ch.height()).rev() {
            let start = row * ch.width();
            let bytes: Vec<u8> = ch.as_slice()[start..start + ch.width()]
                .iter()
                .map(|&b| if b { 255 } else { 0 })
                .collect();
            out.write_all(&bytes)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SnapshotHeader {
    channels: Vec<String>,
    width: usize,
    height: usize,
    resolution: f64,
    origin: Point,
    current: Cell,
}
