//! Occupancy-grid baseline planner, used to put route-graph timings in
//! context. It ignores headings entirely.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::plan::PlanRequest;
use crate::geometry::PointCloud;
use crate::scalar::{total_cmp, Scalar};
use crate::semantic::{Label, SemanticMap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridPlanError {
    #[error("grid cell size must be positive")]
    Cell,
    #[error("labels cover {labels} points but the map has {points}")]
    SizeMismatch { labels: usize, points: usize },
    #[error("map has no traversable ground")]
    NoGround,
    #[error("{0} lies in a blocked or unobserved cell")]
    Blocked(&'static str),
    #[error("no grid path between start and goal")]
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GridPath<T> {
    /// Start pose, cell centres, goal pose.
    pub polyline: Vec<[T; 2]>,
    pub length: T,
    pub cells_expanded: usize,
}

struct Item {
    d: f64,
    c: usize,
}
impl PartialEq for Item {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Item {}
impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Item {
    fn cmp(&self, o: &Self) -> Ordering {
        total_cmp(o.d, self.d).then(o.c.cmp(&self.c))
    }
}

/// Rasterizes the labelled map into square cells (a cell is free when it
/// holds ground points and no tree or obstacle points) and runs 8-connected
/// Dijkstra between the cells of the start and goal positions. Diagonal
/// moves may not cut a blocked corner.
pub fn naive_grid_plan<T: Scalar>(
    map: &PointCloud<T>,
    semantic: &SemanticMap<T>,
    request: &PlanRequest<T>,
    cell: T,
) -> Result<GridPath<T>, GridPlanError> {
    if !(cell > T::zero()) {
        return Err(GridPlanError::Cell);
    }
    if semantic.labels.len() != map.len() {
        return Err(GridPlanError::SizeMismatch { labels: semantic.labels.len(), points: map.len() });
    }
    let b = map.bounds().ok_or(GridPlanError::NoGround)?;
    let (x0, y0) = (b.min[0], b.min[1]);
    let nx = (b.extent(0) / cell).floor().to_usize().unwrap_or(0) + 1;
    let ny = (b.extent(1) / cell).floor().to_usize().unwrap_or(0) + 1;
    let index = |x: T, y: T| -> Option<usize> {
        let i = ((x - x0) / cell).floor();
        let j = ((y - y0) / cell).floor();
        if i < T::zero() || j < T::zero() {
            return None;
        }
        let (i, j) = (i.to_usize()?, j.to_usize()?);
        (i < nx && j < ny).then_some(j * nx + i)
    };

    // 0 unobserved, 1 ground, 2 blocked
    let mut state = vec![0u8; nx * ny];
    for (p, l) in map.points().iter().zip(&semantic.labels) {
        let c = index(p.x, p.y).expect("points lie within their bounds");
        state[c] = match l {
            Label::Ground => state[c].max(1),
            Label::Tree | Label::Obstacle => 2,
        };
    }
    if !state.contains(&1) {
        return Err(GridPlanError::NoGround);
    }
    let free = |c: usize| state[c] == 1;
    let start = index(request.start.x, request.start.y).filter(|&c| free(c)).ok_or(GridPlanError::Blocked("start"))?;
    let goal = index(request.goal.x, request.goal.y).filter(|&c| free(c)).ok_or(GridPlanError::Blocked("goal"))?;

    let step = cell.to_f64_lossy();
    let diag = step * std::f64::consts::SQRT_2;
    let mut best = vec![f64::INFINITY; nx * ny];
    let mut prev = vec![usize::MAX; nx * ny];
    let mut heap = BinaryHeap::new();
    let mut expanded = 0;
    best[start] = 0.0;
    heap.push(Item { d: 0.0, c: start });
    while let Some(Item { d, c }) = heap.pop() {
        if d > best[c] {
            continue;
        }
        expanded += 1;
        if c == goal {
            break;
        }
        let (i, j) = ((c % nx) as i64, (c / nx) as i64);
        for dj in -1i64..=1 {
            for di in -1i64..=1 {
                if di == 0 && dj == 0 {
                    continue;
                }
                let (ni, nj) = (i + di, j + dj);
                if ni < 0 || nj < 0 || ni >= nx as i64 || nj >= ny as i64 {
                    continue;
                }
                let n = nj as usize * nx + ni as usize;
                if !free(n) {
                    continue;
                }
                let w = if di != 0 && dj != 0 {
                    if !free(j as usize * nx + ni as usize) || !free(nj as usize * nx + i as usize) {
                        continue;
                    }
                    diag
                } else {
                    step
                };
                let nd = d + w;
                if nd < best[n] {
                    best[n] = nd;
                    prev[n] = c;
                    heap.push(Item { d: nd, c: n });
                }
            }
        }
    }
    if !best[goal].is_finite() {
        return Err(GridPlanError::Unreachable);
    }
    let mut cells = vec![goal];
    while *cells.last().expect("non-empty") != start {
        cells.push(prev[*cells.last().expect("non-empty")]);
    }
    cells.reverse();
    let half = cell / T::lit(2.0);
    let mut polyline = vec![[request.start.x, request.start.y]];
    polyline.extend(cells.iter().map(|&c| {
        [x0 + T::from_usize_lossy(c % nx) * cell + half, y0 + T::from_usize_lossy(c / nx) * cell + half]
    }));
    polyline.push([request.goal.x, request.goal.y]);
    let length = polyline.windows(2).map(|w| super::dist(w[0], w[1])).sum();
    Ok(GridPath { polyline, length, cells_expanded: expanded })
}
