//! Heading-constrained shortest paths on the route graph.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{dist, heading_diff, NodeKind, VisibilityGraph};
use crate::scalar::{total_cmp, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("{which} pose is off the graph: no node with a compatible heading within {radius} m")]
    OffGraph { which: &'static str, radius: f64 },
    #[error("no directed path from node {from} to node {to}")]
    Unreachable { from: usize, to: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Pose<T> {
    pub x: T,
    pub y: T,
    pub heading: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PlanRequest<T> {
    pub start: Pose<T>,
    pub goal: Pose<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Path<T> {
    pub nodes: Vec<usize>,
    pub length: T,
    /// Heading of the node reached by each segment.
    pub headings: Vec<T>,
}

impl<T: Scalar> Path<T> {
    /// Node positions in order, for external viewers.
    pub fn polyline(&self, graph: &VisibilityGraph<T>) -> Vec<[T; 2]> {
        self.nodes.iter().map(|&v| graph.nodes[v].position()).collect()
    }

    pub fn visits(&self, graph: &VisibilityGraph<T>, kind: NodeKind) -> bool {
        self.nodes.iter().any(|&v| graph.nodes[v].kind == kind)
    }
}

struct Item<T> {
    d: T,
    v: usize,
}

impl<T: Scalar> PartialEq for Item<T> {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl<T: Scalar> Eq for Item<T> {}
impl<T: Scalar> PartialOrd for Item<T> {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl<T: Scalar> Ord for Item<T> {
    // min-heap on (distance, node id)
    fn cmp(&self, o: &Self) -> Ordering {
        total_cmp(o.d, self.d).then(o.v.cmp(&self.v))
    }
}

/// Dijkstra from `from` to `to`. Nodes settle in (distance, id) order and
/// predecessors change only on strict improvement, so ties resolve the same
/// way on every run.
pub fn shortest_path<T: Scalar>(graph: &VisibilityGraph<T>, from: usize, to: usize) -> Result<Path<T>, PlanError> {
    let n = graph.nodes.len();
    let unreachable = PlanError::Unreachable { from, to };
    if from >= n || to >= n {
        return Err(unreachable);
    }
    let mut best = vec![T::infinity(); n];
    let mut prev = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    best[from] = T::zero();
    heap.push(Item { d: T::zero(), v: from });
    while let Some(Item { d, v }) = heap.pop() {
        if done[v] {
            continue;
        }
        done[v] = true;
        if v == to {
            break;
        }
        for e in graph.outgoing(v) {
            let nd = d + e.length;
            if nd < best[e.to] {
                best[e.to] = nd;
                prev[e.to] = v;
                heap.push(Item { d: nd, v: e.to });
            }
        }
    }
    if !done[to] {
        return Err(unreachable);
    }
    let mut nodes = vec![to];
    let mut v = to;
    while v != from {
        v = prev[v];
        nodes.push(v);
    }
    nodes.reverse();
    let headings = nodes[1..].iter().map(|&v| graph.nodes[v].heading).collect();
    Ok(Path { nodes, length: best[to], headings })
}

/// Nearest node within the snap radius whose heading matches `pose`.
pub fn snap<T: Scalar>(graph: &VisibilityGraph<T>, pose: &Pose<T>) -> Option<usize> {
    let radius = T::lit(graph.params.snap_radius);
    let tol = T::lit(graph.params.heading_tolerance());
    graph
        .nodes
        .iter()
        .filter(|n| heading_diff(n.heading, pose.heading) <= tol)
        .map(|n| (dist(n.position(), [pose.x, pose.y]), n.id))
        .filter(|(d, _)| *d <= radius)
        .min_by(|a, b| total_cmp(a.0, b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
}

/// Plans from the start pose to the goal pose, both snapped to
/// heading-compatible nodes.
pub fn plan_path<T: Scalar>(graph: &VisibilityGraph<T>, request: &PlanRequest<T>) -> Result<Path<T>, PlanError> {
    let radius = graph.params.snap_radius;
    let from = snap(graph, &request.start).ok_or(PlanError::OffGraph { which: "start", radius })?;
    let to = snap(graph, &request.goal).ok_or(PlanError::OffGraph { which: "goal", radius })?;
    shortest_path(graph, from, to)
}

#[cfg(test)]
mod tests {
    use super::super::tests::layout;
    use super::super::*;
    use super::*;

    fn pose(n: &AccessNode<f64>) -> Pose<f64> {
        Pose { x: n.x, y: n.y, heading: n.heading }
    }

    #[test]
    fn same_lane_goal_stays_in_lane() {
        let (rows, c) = layout(2, 5, 4.0, 3.0);
        let g = build_graph(&rows, &c, 0.8, &GraphParams::default()).unwrap();
        let lane = &g.lanes[0].nodes;
        let req = PlanRequest { start: pose(&g.nodes[lane[1]]), goal: pose(&g.nodes[lane[4]]) };
        let p = plan_path(&g, &req).unwrap();
        assert_eq!(p.nodes, lane[1..=4].to_vec());
        assert!((p.length - 9.0).abs() < 1e-9);
    }

    #[test]
    fn opposite_heading_goal_turns_around() {
        let (rows, c) = layout(2, 5, 4.0, 3.0);
        let g = build_graph(&rows, &c, 0.8, &GraphParams::default()).unwrap();
        let a = &g.nodes[g.lanes[0].nodes[2]];
        let b = g.nodes.iter().find(|n| n.lane == 1 && n.kind == NodeKind::TreeAccess && (n.x - a.x).abs() < 1e-9).unwrap();
        let p = plan_path(&g, &PlanRequest { start: pose(a), goal: pose(b) }).unwrap();
        assert!(p.visits(&g, NodeKind::Uturn));
        assert!(p.length > ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt());
        assert!(heading_diff(*p.headings.last().unwrap(), b.heading) < 1e-9);
    }

    #[test]
    fn far_goal_is_off_graph() {
        let (rows, c) = layout(2, 3, 4.0, 3.0);
        let g = build_graph(&rows, &c, 0.8, &GraphParams::default()).unwrap();
        let req = PlanRequest { start: pose(&g.nodes[1]), goal: Pose { x: 100.0, y: 100.0, heading: 0.0 } };
        assert!(matches!(plan_path(&g, &req), Err(PlanError::OffGraph { which: "goal", .. })));
    }

    #[test]
    fn goal_without_incoming_edges_is_unreachable() {
        let node = |id: usize, x: f64| AccessNode {
            id,
            x,
            y: 0.0,
            heading: 0.0,
            kind: NodeKind::TreeAccess,
            tree_ref: None,
            row_ref: 0,
            side: Side::Left,
            lane: 0,
        };
        let g = VisibilityGraph::from_parts(
            vec![node(0, 0.0), node(1, 5.0)],
            vec![CorridorEdge { from: 1, to: 0, length: 5.0, kind: EdgeKind::Lane }],
            GraphParams::default(),
        )
        .unwrap();
        let req = PlanRequest { start: pose(&g.nodes[0]), goal: pose(&g.nodes[1]) };
        assert_eq!(plan_path(&g, &req), Err(PlanError::Unreachable { from: 0, to: 1 }));
    }
}
