//! Top-down images of a map snapshot and/or an episode trace.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::io::TraceMeta;
use crate::frontier::build_frontier_map;
use crate::grid::{line_cells, Cell};
use crate::mapping::{MapConfig, SemanticMap};
use crate::policy::{TraceEvent, TraceRecord};
use crate::scene::Point;

pub type Rgb = [u8; 3];

pub const UNEXPLORED: Rgb = [128, 128, 128];
pub const EXPLORED: Rgb = [255, 255, 255];
pub const OBSTACLE: Rgb = [0, 0, 0];
pub const FRONTIER: Rgb = [0, 0, 255];
pub const FALSE_TARGET: Rgb = [255, 0, 255];
pub const TRAJECTORY: Rgb = [0, 160, 0];
pub const GOAL: Rgb = [255, 0, 0];

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("nothing to render: need a map snapshot or a trace with its metadata")]
    NoGeometry,
    #[error("unsupported image extension {0:?} (expected .png or .ppm)")]
    Extension(PathBuf),
    #[error("cannot write {path}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("png encoding: {0}")]
    Png(#[from] png::EncodingError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    /// Pixels per map cell.
    pub scale: usize,
    /// Obstacle dilation used when drawing frontiers (cells).
    pub frontier_dilation: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            scale: 1,
            frontier_dilation: 1.0,
        }
    }
}

/// RGB raster; row 0 is the top (largest map y).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Self {
        Self {
            width,
            height,
            pixels: fill.iter().copied().cycle().take(width * height * 3).collect(),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn put(&mut self, x: usize, y: usize, c: Rgb) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    pub fn write_ppm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.pixels)
    }

    pub fn write_png<W: Write>(&self, out: W) -> Result<(), png::EncodingError> {
        let mut enc = png::Encoder::new(out, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header()?;
        w.write_image_data(&self.pixels)?;
        w.finish()
    }

    /// Format chosen by extension.
    pub fn save(&self, path: &Path) -> Result<(), RenderError> {
        let werr = |source| RenderError::Write {
            path: path.to_path_buf(),
            source,
        };
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !matches!(ext.as_deref(), Some("png" | "ppm")) {
            return Err(RenderError::Extension(path.to_path_buf()));
        }
        let file = std::fs::File::create(path).map_err(werr)?;
        let mut out = std::io::BufWriter::new(file);
        match ext.as_deref() {
            Some("png") => self.write_png(&mut out)?,
            _ => self.write_ppm(&mut out).map_err(werr)?,
        }
        out.flush().map_err(werr)
    }
}

/// Map cell of a world point under the given map geometry.
fn cell_of(cfg: &MapConfig, origin: Point, p: Point) -> Cell {
    let c = cfg.center();
    Cell::new(
        c.x + ((p.x - origin.x) / cfg.resolution).round() as i32,
        c.y + ((p.y - origin.y) / cfg.resolution).round() as i32,
    )
}

struct Canvas {
    img: Image,
    width: usize,
    height: usize,
    scale: usize,
}

impl Canvas {
    fn paint(&mut self, c: Cell, color: Rgb) {
        if c.x < 0 || c.y < 0 || c.x as usize >= self.width || c.y as usize >= self.height {
            return;
        }
        let s = self.scale;
        let px = c.x as usize * s;
        let py = (self.height - 1 - c.y as usize) * s;
        for dy in 0..s {
            for dx in 0..s {
                self.img.put(px + dx, py + dy, color);
            }
        }
    }
}

/// Draws the map layers (when given) and then the trace layers.
/// The trace is placed by `map`'s geometry, or by its metadata otherwise.
pub fn render(
    map: Option<&SemanticMap>,
    trace: Option<(&[TraceRecord], Option<&TraceMeta>)>,
    opts: &RenderOptions,
) -> Result<Image, RenderError> {
    let (cfg, origin) = match (map, trace) {
        (Some(m), _) => (m.config().clone(), m.origin()),
        (None, Some((_, Some(meta)))) => (meta.map.clone(), meta.origin),
        _ => return Err(RenderError::NoGeometry),
    };
    let scale = opts.scale.max(1);
    let mut canvas = Canvas {
        img: Image::new(cfg.width * scale, cfg.height * scale, UNEXPLORED),
        width: cfg.width,
        height: cfg.height,
        scale,
    };
    if let Some(m) = map {
        for c in m.explored().set_cells() {
            canvas.paint(c, EXPLORED);
        }
        for c in build_frontier_map(m, opts.frontier_dilation).set_cells() {
            canvas.paint(c, FRONTIER);
        }
        for c in m.obstacles().set_cells() {
            canvas.paint(c, OBSTACLE);
        }
        for c in m.false_targets().set_cells() {
            canvas.paint(c, FALSE_TARGET);
        }
    }
    if let Some((records, _)) = trace {
        for r in records {
            for e in &r.events {
                if let TraceEvent::Masked { cells } | TraceEvent::AutoMasked { cells } = e {
                    for &c in cells {
                        canvas.paint(c, FALSE_TARGET);
                    }
                }
            }
        }
        let mut prev = cell_of(&cfg, origin, origin);
        canvas.paint(prev, TRAJECTORY);
        for r in records {
            let c = cell_of(&cfg, origin, r.pose.position());
            for p in line_cells(prev, c) {
                canvas.paint(p, TRAJECTORY);
            }
            prev = c;
        }
        if let Some(g) = records.iter().rev().find_map(|r| r.goal) {
            for (dx, dy) in [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)] {
                canvas.paint(g.offset(dx, dy), GOAL);
            }
        }
    }
    Ok(canvas.img)
}

/// Pixel (x, y) at the top-left of map cell `c`.
pub fn pixel_of(cfg: &MapConfig, c: Cell, scale: usize) -> (usize, usize) {
    let s = scale.max(1);
    (c.x as usize * s, (cfg.height - 1 - c.y as usize) * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Action, AgentPose};

    fn meta(w: usize) -> TraceMeta {
        TraceMeta {
            episode_id: 0,
            scene_id: "s".into(),
            target: 0,
            map: MapConfig {
                width: w,
                height: w,
                resolution: 0.05,
                num_categories: 6,
            },
            origin: Point::new(1.0, 1.0),
        }
    }

    #[test]
    fn empty_map_is_uniform() {
        let map = SemanticMap::reset(meta(16).map, Point::new(1.0, 1.0)).unwrap();
        let img = render(Some(&map), None, &RenderOptions::default()).unwrap();
        assert_eq!((img.width, img.height), (16, 16));
        assert!(img.pixels.chunks(3).all(|p| p == UNEXPLORED));
    }

    #[test]
    fn goal_marker_at_goal_pixel() {
        let m = meta(20);
        let goal = Cell::new(3, 15);
        let rec = TraceRecord {
            step: 0,
            pose: AgentPose::new(1.0, 1.0, 0.0),
            action: Action::TurnLeft,
            mode: crate::policy::Mode::Explore,
            goal: Some(goal),
            events: vec![],
            sleep_counter: 0,
            advisor_calls: 0,
            global_update: true,
            feasible: true,
            collided: false,
            displacement: 0.0,
        };
        let img = render(None, Some((&[rec], Some(&m))), &RenderOptions { scale: 2, ..Default::default() }).unwrap();
        let (x, y) = pixel_of(&m.map, goal, 2);
        assert_eq!(img.pixel(x, y), GOAL);
        assert_eq!(img.pixel(x + 1, y + 1), GOAL);
        let (sx, sy) = pixel_of(&m.map, m.map.center(), 2);
        assert_eq!(img.pixel(sx, sy), TRAJECTORY);
    }

    #[test]
    fn needs_geometry() {
        assert!(matches!(render(None, Some((&[], None)), &RenderOptions::default()), Err(RenderError::NoGeometry)));
    }

    #[test]
    fn unwritable_path_errors() {
        let img = Image::new(2, 2, EXPLORED);
        let err = img.save(Path::new("/nonexistent-dir/x/out.png")).unwrap_err();
        assert!(matches!(err, RenderError::Write { .. }), "{err}");
        assert!(matches!(img.save(Path::new("out.bmp")), Err(RenderError::Extension(_))));
    }
}
