//! Independent reference implementations and scene builders shared by the
//! integration tests. Nothing here calls into the code under test for the
//! quantity being checked.
#![allow(dead_code)]

use nalgebra::{Matrix3, SymmetricEigen};
use orchard_core::geometry::{Detection, Point3, PointCloud};
use orchard_core::graph::{AccessNode, CorridorEdge, EdgeKind, GraphParams, NodeKind, Side, VisibilityGraph};
use rand::Rng;

/// Angle from +z of the dominant covariance axis, via nalgebra.
/// Also returns the relative gap between the two largest eigenvalues.
pub fn principal_angle_oracle(points: &[[f64; 3]]) -> (f64, f64) {
    let n = points.len() as f64;
    let mut mean = [0.0; 3];
    for p in points {
        for k in 0..3 {
            mean[k] += p[k] / n;
        }
    }
    let mut m = Matrix3::<f64>::zeros();
    for p in points {
        let d = nalgebra::Vector3::new(p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]);
        m += d * d.transpose();
    }
    let e = SymmetricEigen::new(m);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| e.eigenvalues[b].total_cmp(&e.eigenvalues[a]));
    let v = e.eigenvectors.column(idx[0]);
    let gap = (e.eigenvalues[idx[0]] - e.eigenvalues[idx[1]]) / e.eigenvalues[idx[0]].abs().max(1e-300);
    let horiz = (v[0] * v[0] + v[1] * v[1]).sqrt();
    (horiz.atan2(v[2].abs()), gap)
}

fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    if inter == 0.0 {
        return 0.0;
    }
    let area = |r: [f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    inter / (area(a) + area(b) - inter)
}

fn corners(d: &Detection<f64>) -> [f64; 4] {
    let f = d.footprint();
    [f.x_min(), f.y_min(), f.x_max(), f.y_max()]
}

/// Brute-force greedy suppression: repeatedly take the best remaining box
/// (confidence, then lower corner) and discard everything overlapping it.
pub fn nms_oracle(dets: &[Detection<f64>], thr: f64) -> Vec<Detection<f64>> {
    let mut left: Vec<Detection<f64>> = dets.to_vec();
    let mut kept = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for i in 1..left.len() {
            let (a, b) = (&left[i], &left[best]);
            let (ca, cb) = (corners(a), corners(b));
            let better = a.confidence() > b.confidence()
                || (a.confidence() == b.confidence() && (ca[0] < cb[0] || (ca[0] == cb[0] && ca[1] < cb[1])));
            if better {
                best = i;
            }
        }
        let top = left.swap_remove(best);
        let c = corners(&top);
        left.retain(|d| iou(corners(d), c) <= thr);
        kept.push(top);
    }
    kept
}

/// Minimum path length from `s` to `t` by enumerating simple paths
/// (with pruning against the best length found so far).
pub fn exhaustive_shortest(n: usize, edges: &[(usize, usize, f64)], s: usize, t: usize) -> Option<f64> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b, w) in edges {
        adj[a].push((b, w));
    }
    let mut best: Option<f64> = None;
    let mut on = vec![false; n];
    fn dfs(v: usize, t: usize, d: f64, adj: &[Vec<(usize, f64)>], on: &mut [bool], best: &mut Option<f64>) {
        if best.is_some_and(|b| d > b) {
            return;
        }
        if v == t {
            *best = Some(best.map_or(d, |b: f64| b.min(d)));
            return;
        }
        on[v] = true;
        for &(u, w) in &adj[v] {
            if !on[u] {
                dfs(u, t, d + w, adj, on, best);
            }
        }
        on[v] = false;
    }
    dfs(s, t, 0.0, &adj, &mut on, &mut best);
    best
}

/// Random directed graph on up to `max_nodes` nodes with distinct headings
/// far apart in space, so snapping a node's own pose returns that node.
pub fn random_graph<R: Rng>(rng: &mut R, max_nodes: usize) -> (VisibilityGraph<f64>, Vec<(usize, usize, f64)>) {
    let n = rng.random_range(2..=max_nodes);
    let nodes: Vec<AccessNode<f64>> = (0..n)
        .map(|id| AccessNode {
            id,
            x: (id % 6) as f64 * 10.0,
            y: (id / 6) as f64 * 10.0,
            heading: rng.random_range(-3.1..3.1),
            kind: NodeKind::TreeAccess,
            tree_ref: None,
            row_ref: 0,
            side: Side::Left,
            lane: 0,
        })
        .collect();
    let mut edges = Vec::new();
    let mut raw = Vec::new();
    for a in 0..n {
        for _ in 0..rng.random_range(0..=3) {
            let b = rng.random_range(0..n);
            if b == a || raw.iter().any(|&(x, y, _)| x == a && y == b) {
                continue;
            }
            let dx = nodes[a].x - nodes[b].x;
            let dy = nodes[a].y - nodes[b].y;
            let w = (dx * dx + dy * dy).sqrt() * rng.random_range(1.0..2.0);
            raw.push((a, b, w));
            edges.push(CorridorEdge { from: a, to: b, length: w, kind: EdgeKind::Lane });
        }
    }
    (VisibilityGraph::from_parts(nodes, edges, GraphParams::default()).unwrap(), raw)
}

/// Straight rows of tree centres along +x, `gap` apart, optionally jittered.
pub fn row_layout<R: Rng>(rng: &mut R, rows: usize, per_row: usize, gap: f64, spacing: f64, jitter: f64) -> Vec<Vec<[f64; 2]>> {
    (0..rows)
        .map(|r| {
            (0..per_row)
                .map(|t| {
                    let j = |rng: &mut R| if jitter > 0.0 { rng.random_range(-jitter..=jitter) } else { 0.0 };
                    [t as f64 * spacing + j(rng), r as f64 * gap + j(rng)]
                })
                .collect()
        })
        .collect()
}

pub fn rotate(p: [f64; 2], phi: f64) -> [f64; 2] {
    let (s, c) = phi.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

/// Undirected line angle difference in `[0, π/2]`.
pub fn line_angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::PI);
    d.min(std::f64::consts::PI - d)
}

/// Flat plane sampled on a jittered grid, plus optional axis-aligned boxes
/// sampled on their top faces. Returns the cloud and the plane indices.
pub fn plane_with_boxes<R: Rng>(
    rng: &mut R,
    size: f64,
    step: f64,
    height: impl Fn(f64, f64) -> f64,
    boxes: &[([f64; 4], f64)],
) -> (PointCloud<f64>, Vec<usize>, Vec<usize>) {
    let mut pts = Vec::new();
    let mut ground = Vec::new();
    let mut tops = Vec::new();
    let n = (size / step) as usize;
    for i in 0..n {
        for j in 0..n {
            let x = (i as f64 + rng.random_range(0.1..0.9)) * step;
            let y = (j as f64 + rng.random_range(0.1..0.9)) * step;
            let inside = boxes.iter().any(|(b, _)| x >= b[0] && x <= b[2] && y >= b[1] && y <= b[3]);
            if !inside {
                ground.push(pts.len());
                pts.push(Point3::new(x, y, height(x, y)));
            }
        }
    }
    for (b, h) in boxes {
        let m = ((b[2] - b[0]) / step * 2.0) as usize;
        for i in 0..m {
            for j in 0..m {
                let x = b[0] + (i as f64 + 0.5) * (b[2] - b[0]) / m as f64;
                let y = b[1] + (j as f64 + 0.5) * (b[3] - b[1]) / m as f64;
                tops.push(pts.len());
                pts.push(Point3::new(x, y, height(x, y) + h));
            }
        }
    }
    (PointCloud::new(pts).unwrap(), ground, tops)
}
