//! Connected-region labelling of binary grids (union-find, two-pass).

use crate::grid::{BitGrid, Cell, Connectivity};

/// Disjoint-set forest with path halving and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(len: usize) -> Self {
        Self {
            parent: (0..len).collect(),
            size: vec![1; len],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] { (ra, rb) } else { (rb, ra) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
    }
}

/// Connected regions of the set cells. Each region's cells are sorted and
/// regions are ordered by their smallest cell.
pub fn label_regions(grid: &BitGrid, connectivity: Connectivity) -> Vec<Vec<Cell>> {
    let (w, h) = (grid.width(), grid.height());
    let data = grid.as_slice();
    let mut uf = UnionFind::new(w * h);
    // Only look back at already-visited neighbours.
    let back: &[(i32, i32)] = match connectivity {
        Connectivity::Four => &[(-1, 0), (0, -1)],
        Connectivity::Eight => &[(-1, 0), (0, -1), (-1, -1), (1, -1)],
    };
    for i in 0..w * h {
        if !data[i] {
            continue;
        }
        let c = grid.cell_at(i);
        for &(dx, dy) in back {
            if let Some(j) = grid.index(c.offset(dx, dy)) {
                if data[j] {
                    uf.union(i, j);
                }
            }
        }
    }
    let mut slot = vec![usize::MAX; w * h];
    let mut regions: Vec<Vec<Cell>> = Vec::new();
    for i in 0..w * h {
        if !data[i] {
            continue;
        }
        let root = uf.find(i);
        if slot[root] == usize::MAX {
            slot[root] = regions.len();
            regions.push(Vec::new());
        }
        regions[slot[root]].push(grid.cell_at(i));
    }
    for r in &mut regions {
        r.sort_unstable();
    }
    regions.sort_by_key(|r| r[0]);
    regions
}
