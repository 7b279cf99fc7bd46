//! Frontier map, frontier regions and the cost-utility score.

use serde::{Deserialize, Serialize};

use crate::grid::{dilate, disk_offsets, BitGrid, Cell, Connectivity, NEIGHBORS_4};
use crate::helpers::region_centroid;
use crate::mapping::SemanticMap;
use crate::planner::DistanceField;
use crate::regions::label_regions;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrontierConfig {
    /// Obstacle dilation (cells) removed from the frontier map.
    pub dilation_radius: f64,
    pub min_region_size: usize,
    /// Radius (cells) around a frontier center searched for object labels.
    pub object_radius: f64,
    /// Weight of the travel cost against the utility.
    pub lambda_cu: f64,
    /// Radius (cells) around a frontier center counted for utility.
    pub utility_radius: f64,
}

impl Default for FrontierConfig {
    fn default() -> Self {
        Self {
            dilation_radius: 2.0,
            min_region_size: 10,
            object_radius: 20.0,
            lambda_cu: 0.5,
            utility_radius: 20.0,
        }
    }
}

/// A connected run of frontier cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frontier {
    /// Position in the extraction order of the current cycle.
    pub id: usize,
    pub center: Cell,
    pub cells: Vec<Cell>,
    /// Sorted, deduplicated object categories near the center.
    pub nearby_objects: Vec<u8>,
}

/// Explored cells with at least one unexplored 4-neighbour inside the map,
/// minus the obstacle channel dilated by `dilation_radius`.
pub fn build_frontier_map(map: &SemanticMap, dilation_radius: f64) -> BitGrid {
    frontier_cells(map.explored(), &dilate(map.obstacles(), dilation_radius))
}

/// [`build_frontier_map`] against an already dilated obstacle grid.
pub fn frontier_cells(explored: &BitGrid, dilated_obstacles: &BitGrid) -> BitGrid {
    let mut out = BitGrid::new(explored.width(), explored.height(), false);
    for c in explored.set_cells() {
        if dilated_obstacles.is_set(c) {
            continue;
        }
        let open_side = NEIGHBORS_4.iter().any(|&(dx, dy)| {
            let n = c.offset(dx, dy);
            explored.contains(n) && !explored.is_set(n)
        });
        if open_side {
            out.set(c, true);
        }
    }
    out
}

/// 8-connected regions of `frontier` with at least `min_region_size` cells.
/// `nearby_objects` is left empty; see [`annotate_objects`].
pub fn extract_frontiers(frontier: &BitGrid, min_region_size: usize) -> Vec<Frontier> {
    label_regions(frontier, Connectivity::Eight)
        .into_iter()
        .filter(|r| r.len() >= min_region_size.max(1))
        .enumerate()
        .map(|(id, cells)| Frontier {
            id,
            center: region_centroid(&cells).expect("regions are non-empty"),
            cells,
            nearby_objects: Vec::new(),
        })
        .collect()
}

/// Fills `nearby_objects` from the map's object channels.
pub fn annotate_objects(frontiers: &mut [Frontier], map: &SemanticMap, radius: f64) {
    let mut objects: Vec<(Cell, u8)> = Vec::new();
    for k in 0..map.num_categories() {
        let k = k as u8;
        objects.extend(map.objects(k).set_cells().map(|c| (c, k)));
    }
    let r2 = radius * radius + 1e-9;
    for f in frontiers {
        let mut near: Vec<u8> = objects
            .iter()
            .filter(|(c, _)| c.dist_sq(f.center) as f64 <= r2)
            .map(|&(_, k)| k)
            .collect();
        near.sort_unstable();
        near.dedup();
        f.nearby_objects = near;
    }
}

/// Frontier map, regions and object annotations in one pass.
pub fn frontiers_from_map(map: &SemanticMap, dilated_obstacles: &BitGrid, cfg: &FrontierConfig) -> Vec<Frontier> {
    let grid = frontier_cells(map.explored(), dilated_obstacles);
    let mut frontiers = extract_frontiers(&grid, cfg.min_region_size);
    annotate_objects(&mut frontiers, map, cfg.object_radius);
    frontiers
}

/// Unexplored in-map cells within `radius` of `center`.
pub fn utility(explored: &BitGrid, center: Cell, radius: f64) -> usize {
    disk_offsets(radius)
        .into_iter()
        .map(|(dx, dy)| center.offset(dx, dy))
        .filter(|&c| explored.contains(c) && !explored.is_set(c))
        .count()
}

/// `U - lambda * C`, or `-inf` when the cost is not finite.
pub fn cost_utility(u: f64, cost: f64, lambda: f64) -> f64 {
    if cost.is_finite() {
        u - lambda * cost
    } else {
        f64::NEG_INFINITY
    }
}

/// Cost-utility score of `frontier`; `agent_field` holds geodesic distances
/// from the agent cell.
pub fn score_frontier_cu(frontier: &Frontier, agent_field: &DistanceField, explored: &BitGrid, cfg: &FrontierConfig) -> f64 {
    let u = utility(explored, frontier.center, cfg.utility_radius) as f64;
    cost_utility(u, agent_field.get(frontier.center), cfg.lambda_cu)
}
