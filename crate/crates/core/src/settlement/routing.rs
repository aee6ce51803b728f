//! Tour construction and grid shortest paths.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::geom::{Rect, Tile};
use crate::terrain::TerrainGrid;

/// Per-tile entry costs on a rectangular grid. `None` is impassable.
#[derive(Debug, Clone, PartialEq)]
pub struct CostGrid {
    pub width: u32,
    pub height: u32,
    pub costs: Vec<Option<f64>>,
}

impl CostGrid {
    pub fn new(width: u32, height: u32, costs: Vec<Option<f64>>) -> Self {
        assert_eq!(costs.len(), (width * height) as usize, "cost grid size mismatch");
        Self { width, height, costs }
    }

    pub fn from_terrain(terrain: &TerrainGrid) -> Self {
        Self::new(terrain.width, terrain.height, terrain.move_cost.clone())
    }

    pub fn block(&mut self, rect: &Rect) {
        for t in rect.tiles() {
            if self.in_bounds(t) {
                let i = self.index(t);
                self.costs[i] = None;
            }
        }
    }

    pub fn in_bounds(&self, t: Tile) -> bool {
        t.x >= 0 && t.y >= 0 && (t.x as u32) < self.width && (t.y as u32) < self.height
    }

    pub fn index(&self, t: Tile) -> usize {
        t.y as usize * self.width as usize + t.x as usize
    }

    pub fn tile_at(&self, i: usize) -> Tile {
        Tile::new((i % self.width as usize) as i32, (i / self.width as usize) as i32)
    }

    pub fn cost(&self, t: Tile) -> Option<f64> {
        if self.in_bounds(t) {
            self.costs[self.index(t)]
        } else {
            None
        }
    }

    pub fn min_cost(&self) -> f64 {
        self.costs.iter().flatten().copied().reduce(f64::min).unwrap_or(1.0)
    }

    /// Total cost of walking `path`: the entry cost of every tile after the first.
    pub fn path_cost(&self, path: &[Tile]) -> Option<f64> {
        path.iter().skip(1).map(|t| self.cost(*t)).sum()
    }

    /// 4-connected component label per tile; impassable tiles get `usize::MAX`.
    pub fn components(&self) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.costs.len()];
        let mut next = 0;
        let mut stack = Vec::new();
        for start in 0..self.costs.len() {
            if label[start] != usize::MAX || self.costs[start].is_none() {
                continue;
            }
            label[start] = next;
            stack.push(start);
            while let Some(i) = stack.pop() {
                for n in self.tile_at(i).neighbors4() {
                    if self.cost(n).is_some() {
                        let j = self.index(n);
                        if label[j] == usize::MAX {
                            label[j] = next;
                            stack.push(j);
                        }
                    }
                }
            }
            next += 1;
        }
        label
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub tiles: Vec<Tile>,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no path between the given tiles")]
pub struct NoPath;

#[derive(Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    tile: Tile,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        self.f.total_cmp(&other.f).then_with(|| self.tile.cmp(&other.tile))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Cheapest 4-connected path. The heuristic is Manhattan distance times the
/// grid's minimum cost, and equal f-scores pop the smaller `(y, x)` first.
pub fn astar(grid: &CostGrid, start: Tile, goal: Tile) -> Result<Path, NoPath> {
    if grid.cost(start).is_none() || grid.cost(goal).is_none() {
        return Err(NoPath);
    }
    let h_scale = grid.min_cost();
    let h = |t: Tile| f64::from(t.manhattan(goal)) * h_scale;
    let n = grid.costs.len();
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    g[grid.index(start)] = 0.0;
    open.push(Reverse(Open { f: h(start), tile: start }));
    while let Some(Reverse(Open { tile, .. })) = open.pop() {
        let i = grid.index(tile);
        if closed[i] {
            continue;
        }
        closed[i] = true;
        if tile == goal {
            let mut tiles = vec![tile];
            let mut j = i;
            while parent[j] != usize::MAX {
                j = parent[j];
                tiles.push(grid.tile_at(j));
            }
            tiles.reverse();
            return Ok(Path { tiles, cost: g[i] });
        }
        for nb in tile.neighbors4() {
            let Some(c) = grid.cost(nb) else { continue };
            let j = grid.index(nb);
            if closed[j] {
                continue;
            }
            let cand = g[i] + c;
            if cand < g[j] {
                g[j] = cand;
                parent[j] = i;
                open.push(Reverse(Open { f: cand + h(nb), tile: nb }));
            }
        }
    }
    Err(NoPath)
}

/// Single-source distances to every tile (`INFINITY` when unreachable).
pub fn dijkstra(grid: &CostGrid, start: Tile) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; grid.costs.len()];
    if grid.cost(start).is_none() {
        return dist;
    }
    let mut heap = BinaryHeap::new();
    dist[grid.index(start)] = 0.0;
    heap.push(Reverse(Open { f: 0.0, tile: start }));
    while let Some(Reverse(Open { f, tile })) = heap.pop() {
        let i = grid.index(tile);
        if f > dist[i] {
            continue;
        }
        for nb in tile.neighbors4() {
            if let Some(c) = grid.cost(nb) {
                let j = grid.index(nb);
                if f + c < dist[j] {
                    dist[j] = f + c;
                    heap.push(Reverse(Open { f: f + c, tile: nb }));
                }
            }
        }
    }
    dist
}

fn edge(points: &[(f64, f64)], a: usize, b: usize) -> f64 {
    let (dx, dy) = (points[a].0 - points[b].0, points[a].1 - points[b].1);
    (dx * dx + dy * dy).sqrt()
}

/// Length of the closed tour.
pub fn tour_length(points: &[(f64, f64)], tour: &[usize]) -> f64 {
    if tour.len() < 2 {
        return 0.0;
    }
    (0..tour.len()).map(|i| edge(points, tour[i], tour[(i + 1) % tour.len()])).sum()
}

const IMPROVEMENT_EPS: f64 = 1e-9;

/// Gain of reversing `tour[i+1..=j]`, positive when the tour gets shorter.
pub fn two_opt_gain(points: &[(f64, f64)], tour: &[usize], i: usize, j: usize) -> f64 {
    let n = tour.len();
    let (a, b) = (tour[i], tour[i + 1]);
    let (c, d) = (tour[j], tour[(j + 1) % n]);
    edge(points, a, b) + edge(points, c, d) - edge(points, a, c) - edge(points, b, d)
}

/// Nearest-neighbour tour from point 0, then 2-opt until no swap improves it.
pub fn tsp_route(points: &[(f64, f64)]) -> Vec<usize> {
    let n = points.len();
    if n == 0 {
        return vec![];
    }
    let mut visited = vec![false; n];
    let mut tour = Vec::with_capacity(n);
    let mut cur = 0;
    visited[0] = true;
    tour.push(0);
    for _ in 1..n {
        let mut best = None;
        for j in 0..n {
            if !visited[j] {
                let d = edge(points, cur, j);
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
        }
        let (j, _) = best.expect("an unvisited point remains");
        visited[j] = true;
        tour.push(j);
        cur = j;
    }
    if n < 4 {
        return tour;
    }
    loop {
        let mut improved = false;
        for i in 0..n - 1 {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                if two_opt_gain(points, &tour, i, j) > IMPROVEMENT_EPS {
                    tour[i + 1..=j].reverse();
                    improved = true;
                }
            }
        }
        if !improved {
            return tour;
        }
    }
}

/// Whether no single 2-opt move shortens the tour by more than the epsilon.
pub fn is_two_opt_optimal(points: &[(f64, f64)], tour: &[usize]) -> bool {
    let n = tour.len();
    if n < 4 {
        return true;
    }
    for i in 0..n - 1 {
        for j in i + 2..n {
            if !(i == 0 && j == n - 1) && two_opt_gain(points, tour, i, j) > IMPROVEMENT_EPS {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(w: u32, h: u32) -> CostGrid {
        CostGrid::new(w, h, vec![Some(1.0); (w * h) as usize])
    }

    #[test]
    fn trivial_paths() {
        let g = uniform(10, 10);
        let p = astar(&g, Tile::new(2, 2), Tile::new(2, 2)).unwrap();
        assert_eq!(p.tiles, vec![Tile::new(2, 2)]);
        assert_eq!(p.cost, 0.0);
        let p = astar(&g, Tile::new(0, 0), Tile::new(5, 7)).unwrap();
        assert_eq!(p.cost, 12.0);
        assert_eq!(p.tiles.len(), 13);
        assert_eq!(g.path_cost(&p.tiles), Some(12.0));
    }

    #[test]
    fn wall_means_no_path() {
        let mut g = uniform(5, 5);
        g.block(&Rect::new(2, 0, 1, 5));
        assert_eq!(astar(&g, Tile::new(0, 0), Tile::new(4, 4)), Err(NoPath));
        let comp = g.components();
        assert_ne!(comp[0], comp[24]);
    }

    #[test]
    fn astar_matches_dijkstra_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..30 {
            let costs = (0..32 * 32)
                .map(|_| if rng.random_bool(0.2) { None } else { Some(f64::from(rng.random_range(1..=16)) / 4.0) })
                .collect();
            let g = CostGrid::new(32, 32, costs);
            let s = Tile::new(rng.random_range(0..32), rng.random_range(0..32));
            let t = Tile::new(rng.random_range(0..32), rng.random_range(0..32));
            if g.cost(s).is_none() || g.cost(t).is_none() {
                continue;
            }
            let d = dijkstra(&g, s)[g.index(t)];
            match astar(&g, s, t) {
                Ok(p) => {
                    assert_eq!(p.cost, d);
                    assert_eq!(g.path_cost(&p.tiles), Some(d));
                }
                Err(NoPath) => assert!(d.is_infinite()),
            }
        }
    }

    #[test]
    fn small_tours() {
        assert_eq!(tsp_route(&[(3.0, 4.0)]), vec![0]);
        let tri = [(0.0, 0.0), (3.0, 0.0), (0.0, 4.0)];
        let t = tsp_route(&tri);
        assert_eq!(t.len(), 3);
        assert!((tour_length(&tri, &t) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn two_opt_untangles_a_cross() {
        let pts = [(0.0, 0.0), (10.0, 10.0), (10.0, 0.0), (0.0, 10.0)];
        let t = tsp_route(&pts);
        assert!((tour_length(&pts, &t) - 40.0).abs() < 1e-9);
        assert!(is_two_opt_optimal(&pts, &t));
    }
}
