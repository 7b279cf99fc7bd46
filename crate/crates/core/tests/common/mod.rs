//! Independent oracles shared by the integration tests. Nothing here calls
//! into the implementation paths it is used to check.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use objnav_core::grid::{BitGrid, Cell};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 4-connected components of the set cells by breadth-first flood fill,
/// each sorted, in order of their first cell in row-major scan.
pub fn bfs_components(grid: &BitGrid) -> Vec<Vec<Cell>> {
    let (w, h) = (grid.width() as i32, grid.height() as i32);
    let mut seen = vec![false; (w * h) as usize];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            if seen[i] || !grid.is_set(Cell::new(x, y)) {
                continue;
            }
            seen[i] = true;
            let mut comp = Vec::new();
            let mut q = VecDeque::from([(x, y)]);
            while let Some((cx, cy)) = q.pop_front() {
                comp.push(Cell::new(cx, cy));
                for (nx, ny) in [(cx + 1, cy), (cx - 1, cy), (cx, cy + 1), (cx, cy - 1)] {
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let j = (ny * w + nx) as usize;
                    if !seen[j] && grid.is_set(Cell::new(nx, ny)) {
                        seen[j] = true;
                        q.push_back((nx, ny));
                    }
                }
            }
            comp.sort();
            out.push(comp);
        }
    }
    out
}

/// Largest 4-connected component; ties go to the component holding the
/// lexicographically smallest cell.
pub fn bfs_largest(grid: &BitGrid) -> Option<Vec<Cell>> {
    bfs_components(grid)
        .into_iter()
        .max_by(|a, b| a.len().cmp(&b.len()).then_with(|| b[0].cmp(&a[0])))
}

#[derive(PartialEq)]
struct Node(f64, usize);
impl Eq for Node {}
impl Ord for Node {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0)
    }
}
impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Grid Dijkstra over set cells. With `diagonal`, diagonal moves cost
/// sqrt(2) and may not squeeze between two blocked cells.
pub fn dijkstra(grid: &BitGrid, sources: &[Cell], diagonal: bool) -> Vec<f64> {
    let (w, h) = (grid.width() as i32, grid.height() as i32);
    let mut dist = vec![f64::INFINITY; (w * h) as usize];
    let mut heap = BinaryHeap::new();
    for s in sources {
        if grid.is_set(*s) {
            let i = (s.y * w + s.x) as usize;
            dist[i] = 0.0;
            heap.push(Node(0.0, i));
        }
    }
    let free = |x: i32, y: i32| x >= 0 && y >= 0 && x < w && y < h && grid.is_set(Cell::new(x, y));
    while let Some(Node(d, i)) = heap.pop() {
        if d > dist[i] {
            continue;
        }
        let (x, y) = ((i as i32) % w, (i as i32) / w);
        let mut moves = vec![(1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0)];
        if diagonal {
            for (dx, dy) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
                if free(x + dx, y) || free(x, y + dy) {
                    moves.push((dx, dy, std::f64::consts::SQRT_2));
                }
            }
        }
        for (dx, dy, cost) in moves {
            let (nx, ny) = (x + dx, y + dy);
            if !free(nx, ny) {
                continue;
            }
            let j = (ny * w + nx) as usize;
            if d + cost < dist[j] {
                dist[j] = d + cost;
                heap.push(Node(d + cost, j));
            }
        }
    }
    dist
}

/// Grid with independent per-cell fill probability `density`.
pub fn random_grid(rng: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> BitGrid {
    let data = (0..w * h).map(|_| rng.random_bool(density)).collect();
    BitGrid::from_vec(w, h, data)
}

/// Traversable grid with `blocks` random rectangular obstacles.
pub fn block_obstacle_grid(seed: u64, w: usize, h: usize, blocks: usize) -> BitGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = BitGrid::new(w, h, true);
    for _ in 0..blocks {
        let bw = rng.random_range(2..15);
        let bh = rng.random_range(2..15);
        let x0 = rng.random_range(0..w as i32 - bw);
        let y0 = rng.random_range(0..h as i32 - bh);
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                g.set(Cell::new(x, y), false);
            }
        }
    }
    g
}
