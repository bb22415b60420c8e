//! Directed route graph over an orchard.
//!
//! Every corridor between two adjacent tree rows carries two one-way lanes
//! running in opposite directions. A lane holds one access node per tree of
//! the row it serves, plus an entry node and an exit node in the open
//! headland beyond the row ends. In each headland every lane exit connects
//! to every lane entry: within the same corridor that edge is a U-turn,
//! across corridors it is a switch. Lanes therefore form loops around the
//! rows and the whole graph is strongly connected.

mod grid;
mod plan;

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{total_cmp, Scalar};
use crate::semantic::TreeRow;

pub use grid::{naive_grid_plan, GridPath, GridPlanError};
pub use plan::{plan_path, shortest_path, Path as PlannedPath, PlanError, PlanRequest, Pose};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid graph parameters: {0}")]
    Params(String),
    #[error("no rows to build a graph from")]
    NoRows,
    #[error("no usable corridor: every gap between rows is narrower than twice the clearance")]
    NoCorridor,
    #[error("malformed graph: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphParams {
    /// Lane distance from the canopy edge; `None` splits the free corridor
    /// width in quarters (never closer than `clearance_min`).
    #[serde(rename = "lane_offset_m", skip_serializing_if = "Option::is_none")]
    pub lane_offset: Option<f64>,
    /// Distance of headland nodes beyond the outermost trees.
    #[serde(rename = "end_extension_m")]
    pub end_extension: f64,
    #[serde(rename = "heading_tolerance_deg")]
    pub heading_tolerance_deg: f64,
    /// Minimum lateral gap between a lane and any canopy edge.
    #[serde(rename = "clearance_min_m")]
    pub clearance_min: f64,
    #[serde(rename = "snap_radius_m")]
    pub snap_radius: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self { lane_offset: None, end_extension: 2.0, heading_tolerance_deg: 15.0, clearance_min: 0.3, snap_radius: 2.0 }
    }
}

impl GraphParams {
    pub fn heading_tolerance(&self) -> f64 {
        self.heading_tolerance_deg.to_radians()
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: &str| Err(GraphError::Params(m.into()));
        if let Some(o) = self.lane_offset {
            if !(o > 0.0) {
                return bad("lane_offset_m must be positive");
            }
        }
        if !(self.end_extension > 0.0) {
            return bad("end_extension_m must be positive");
        }
        if !(self.heading_tolerance_deg > 0.0 && self.heading_tolerance_deg < 90.0) {
            return bad("heading_tolerance_deg must be in (0, 90)");
        }
        if !(self.clearance_min >= 0.0) {
            return bad("clearance_min_m must be non-negative");
        }
        if !(self.snap_radius > 0.0) {
            return bad("snap_radius_m must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    TreeAccess,
    /// Where a lane leaves its corridor.
    RowEnd,
    /// Where a lane begins after turning in the headland.
    Uturn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Lane,
    Uturn,
    Switch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AccessNode<T> {
    pub id: usize,
    pub x: T,
    pub y: T,
    /// Required travel direction through the node, radians.
    pub heading: T,
    pub kind: NodeKind,
    #[serde(default)]
    pub tree_ref: Option<usize>,
    /// Row the node's lane serves.
    pub row_ref: usize,
    /// Side of that row, looking along its direction.
    pub side: Side,
    pub lane: usize,
}

impl<T: Scalar> AccessNode<T> {
    pub fn position(&self) -> [T; 2] {
        [self.x, self.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CorridorEdge<T> {
    pub from: usize,
    pub to: usize,
    pub length: T,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Lane<T> {
    pub id: usize,
    /// `None` for the outer lanes around a lone row.
    pub corridor: Option<usize>,
    pub row: usize,
    /// Permitted travel direction, radians.
    pub heading: T,
    /// Node ids in travel order: entry, access nodes, exit.
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Corridor<T> {
    pub id: usize,
    /// Row indices (in the input order) on either side.
    pub rows: [usize; 2],
    /// Free width between canopy edges.
    pub width: T,
    pub lanes: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct VisibilityGraph<T: Scalar> {
    pub nodes: Vec<AccessNode<T>>,
    pub edges: Vec<CorridorEdge<T>>,
    #[serde(default)]
    pub lanes: Vec<Lane<T>>,
    #[serde(default)]
    pub corridors: Vec<Corridor<T>>,
    #[serde(default)]
    pub params: GraphParams,
    #[serde(skip)]
    out: Vec<Vec<usize>>,
    #[serde(skip)]
    inc: Vec<Vec<usize>>,
}

/// Heading difference folded into `[0, π]`.
pub fn heading_diff<T: Scalar>(a: T, b: T) -> T {
    let tau = T::PI() + T::PI();
    let mut d = (a - b) % tau;
    if d < T::zero() {
        d = d + tau;
    }
    d.min(tau - d)
}

fn dist<T: Scalar>(a: [T; 2], b: [T; 2]) -> T {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl<T: Scalar> VisibilityGraph<T> {
    /// Assembles a graph from raw parts, checking ids and lengths.
    pub fn from_parts(
        nodes: Vec<AccessNode<T>>,
        edges: Vec<CorridorEdge<T>>,
        params: GraphParams,
    ) -> Result<Self, GraphError> {
        let mut g = VisibilityGraph { nodes, edges, lanes: Vec::new(), corridors: Vec::new(), params, out: Vec::new(), inc: Vec::new() };
        g.index()?;
        Ok(g)
    }

    fn index(&mut self) -> Result<(), GraphError> {
        self.params.validate()?;
        let n = self.nodes.len();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i {
                return Err(GraphError::Malformed(format!("node at position {i} has id {}", node.id)));
            }
            if !(node.x.is_finite() && node.y.is_finite() && node.heading.is_finite()) {
                return Err(GraphError::Malformed(format!("node {i} has a non-finite pose")));
            }
        }
        self.out = vec![Vec::new(); n];
        self.inc = vec![Vec::new(); n];
        for (k, e) in self.edges.iter().enumerate() {
            if e.from >= n || e.to >= n || e.from == e.to {
                return Err(GraphError::Malformed(format!("edge {k} ({} -> {}) is invalid", e.from, e.to)));
            }
            if !(e.length >= T::zero() && e.length.is_finite()) {
                return Err(GraphError::Malformed(format!("edge {k} has length {}", e.length)));
            }
            self.out[e.from].push(k);
            self.inc[e.to].push(k);
        }
        for lane in &self.lanes {
            if let Some(&bad) = lane.nodes.iter().find(|&&v| v >= n) {
                return Err(GraphError::Malformed(format!("lane {} names missing node {bad}", lane.id)));
            }
        }
        Ok(())
    }

    pub fn outgoing(&self, node: usize) -> impl Iterator<Item = &CorridorEdge<T>> {
        self.out[node].iter().map(move |&k| &self.edges[k])
    }

    pub fn incoming(&self, node: usize) -> impl Iterator<Item = &CorridorEdge<T>> {
        self.inc[node].iter().map(move |&k| &self.edges[k])
    }

    pub fn edge(&self, from: usize, to: usize) -> Option<&CorridorEdge<T>> {
        self.outgoing(from).find(|e| e.to == to)
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    fn reach(&self, start: usize, forward: bool) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(v) = queue.pop_front() {
            let next: Vec<usize> = if forward {
                self.outgoing(v).map(|e| e.to).collect()
            } else {
                self.incoming(v).map(|e| e.from).collect()
            };
            for w in next {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        seen
    }

    /// Whether every node reaches every other node.
    pub fn is_strongly_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        self.reach(0, true).iter().all(|&s| s) && self.reach(0, false).iter().all(|&s| s)
    }

    /// Whether following lane and U-turn edges from every lane node leads
    /// back to it.
    pub fn lanes_form_loops(&self) -> bool {
        (0..self.nodes.len()).all(|start| {
            let mut v = start;
            for _ in 0..=self.nodes.len() {
                let Some(e) = self.outgoing(v).find(|e| e.kind != EdgeKind::Switch) else {
                    return false;
                };
                v = e.to;
                if v == start {
                    return true;
                }
            }
            false
        })
    }

    /// Checks that each lane edge runs along both endpoint headings.
    pub fn lane_edges_follow_headings(&self) -> bool {
        let tol = T::lit(self.params.heading_tolerance());
        self.edges.iter().filter(|e| e.kind == EdgeKind::Lane).all(|e| {
            let a = &self.nodes[e.from];
            let b = &self.nodes[e.to];
            let h = (b.y - a.y).atan2(b.x - a.x);
            heading_diff(h, a.heading) <= tol && heading_diff(h, b.heading) <= tol
        })
    }

    pub fn to_json(&self) -> Result<String, GraphError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let mut g: Self = serde_json::from_str(text)?;
        g.index()?;
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<(), GraphError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Row geometry in a shared frame: `u` along the rows, `n` across them.
struct Frame<T> {
    u: [T; 2],
    n: [T; 2],
}

impl<T: Scalar> Frame<T> {
    fn along(&self, p: [T; 2]) -> T {
        p[0] * self.u[0] + p[1] * self.u[1]
    }

    fn across(&self, p: [T; 2]) -> T {
        p[0] * self.n[0] + p[1] * self.n[1]
    }

    fn point(&self, t: T, s: T) -> [T; 2] {
        [self.u[0] * t + self.n[0] * s, self.u[1] * t + self.n[1] * s]
    }

    fn heading(&self, forward: bool) -> T {
        let h = self.u[1].atan2(self.u[0]);
        if forward {
            h
        } else if h > T::zero() {
            h - T::PI()
        } else {
            h + T::PI()
        }
    }
}

/// One row's trees in the shared frame.
struct PlacedRow<T> {
    input: usize,
    /// `(tree index, along, across)` sorted by `along`.
    trees: Vec<(usize, T, T)>,
    across: T,
}

/// Straight rows given directly as ordered tree centres, bypassing row
/// detection (for hand-placed nodes in irregular plantings).
pub fn rows_from_centers<T: Scalar>(rows: &[Vec<[T; 2]>]) -> (Vec<TreeRow<T>>, Vec<[T; 2]>) {
    let mut centers = Vec::new();
    let mut out = Vec::new();
    for row in rows {
        let base = centers.len();
        centers.extend_from_slice(row);
        let members: Vec<usize> = (base..base + row.len()).collect();
        let (theta, rho) = if row.len() >= 2 {
            fit(&centers, &members)
        } else {
            (T::FRAC_PI_2(), row.first().map_or(T::zero(), |c| c[1]))
        };
        let mut tr = TreeRow { theta, rho, members, endpoints: [[T::zero(); 2]; 2] };
        let mut m = std::mem::take(&mut tr.members);
        m.sort_by(|&a, &b| total_cmp(tr.along(centers[a]), tr.along(centers[b])).then(a.cmp(&b)));
        tr.members = m;
        if let (Some(&f), Some(&l)) = (tr.members.first(), tr.members.last()) {
            tr.endpoints = [tr.at(tr.along(centers[f])), tr.at(tr.along(centers[l]))];
        }
        out.push(tr);
    }
    (out, centers)
}

fn fit<T: Scalar>(c: &[[T; 2]], idx: &[usize]) -> (T, T) {
    let n = T::from_usize_lossy(idx.len());
    let mx = idx.iter().map(|&i| c[i][0]).sum::<T>() / n;
    let my = idx.iter().map(|&i| c[i][1]).sum::<T>() / n;
    let (mut sxx, mut syy, mut sxy) = (T::zero(), T::zero(), T::zero());
    for &i in idx {
        let (dx, dy) = (c[i][0] - mx, c[i][1] - my);
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
        sxy = sxy + dx * dy;
    }
    let phi = T::lit(0.5) * (T::lit(2.0) * sxy).atan2(sxx - syy);
    let mut theta = phi + T::FRAC_PI_2();
    while theta >= T::PI() {
        theta = theta - T::PI();
    }
    while theta < T::zero() {
        theta = theta + T::PI();
    }
    (theta, mx * theta.cos() + my * theta.sin())
}

/// Builds the lane graph for `rows` over tree `centers`. `canopy_radius` is
/// the mean canopy half-width used to find the free corridor width.
pub fn build_graph<T: Scalar>(
    rows: &[TreeRow<T>],
    centers: &[[T; 2]],
    canopy_radius: T,
    params: &GraphParams,
) -> Result<VisibilityGraph<T>, GraphError> {
    params.validate()?;
    let rows: Vec<(usize, &TreeRow<T>)> = rows.iter().enumerate().filter(|(_, r)| !r.members.is_empty()).collect();
    if rows.is_empty() {
        return Err(GraphError::NoRows);
    }
    if let Some(bad) = rows.iter().flat_map(|(_, r)| &r.members).find(|&&m| m >= centers.len()) {
        return Err(GraphError::Params(format!("row member {bad} has no centre")));
    }

    // Shared frame from the row with the most trees.
    let (_, lead) = rows
        .iter()
        .max_by(|a, b| a.1.members.len().cmp(&b.1.members.len()).then(b.0.cmp(&a.0)))
        .expect("non-empty");
    let mut u = lead.direction();
    // make the frame independent of the θ fold: point u into x ≥ 0 (or +y)
    if u[0] < T::zero() || (u[0] == T::zero() && u[1] < T::zero()) {
        u = [-u[0], -u[1]];
    }
    let frame = Frame { u, n: [-u[1], u[0]] };

    let mut placed: Vec<PlacedRow<T>> = rows
        .iter()
        .map(|&(input, row)| {
            let nrm = row.normal();
            let mut trees: Vec<(usize, T, T)> = row
                .members
                .iter()
                .map(|&m| {
                    let c = centers[m];
                    let off = row.offset(c);
                    let p = [c[0] - nrm[0] * off, c[1] - nrm[1] * off];
                    (m, frame.along(p), frame.across(p))
                })
                .collect();
            trees.sort_by(|a, b| total_cmp(a.1, b.1).then(a.0.cmp(&b.0)));
            let across = trees.iter().map(|t| t.2).sum::<T>() / T::from_usize_lossy(trees.len());
            PlacedRow { input, trees, across }
        })
        .collect();
    placed.sort_by(|a, b| total_cmp(a.across, b.across).then(a.input.cmp(&b.input)));

    let ext = T::lit(params.end_extension);
    let clearance = T::lit(params.clearance_min);
    let fixed_offset = params.lane_offset.map(T::lit);

    let mut g = VisibilityGraph {
        nodes: Vec::new(),
        edges: Vec::new(),
        lanes: Vec::new(),
        corridors: Vec::new(),
        params: *params,
        out: Vec::new(),
        inc: Vec::new(),
    };
    // (lane id, headland at low `along` end?) for entries and exits
    let mut entries: Vec<(usize, bool)> = Vec::new();
    let mut exits: Vec<(usize, bool)> = Vec::new();

    // Adds a lane serving `row` at across-offset `s_off` (signed, from the
    // row's line) running forward (+u) or backward, between `t_lo` and `t_hi`.
    let add_lane = |g: &mut VisibilityGraph<T>, row: &PlacedRow<T>, s_off: T, forward: bool, t_lo: T, t_hi: T, corridor: Option<usize>| {
        let lane_id = g.lanes.len();
        let heading = frame.heading(forward);
        let side = if s_off > T::zero() { Side::Left } else { Side::Right };
        let s_lane = row.trees.iter().map(|t| t.2 + s_off).sum::<T>() / T::from_usize_lossy(row.trees.len());
        let push = |g: &mut VisibilityGraph<T>, p: [T; 2], kind: NodeKind, tree: Option<usize>| {
            let id = g.nodes.len();
            g.nodes.push(AccessNode { id, x: p[0], y: p[1], heading, kind, tree_ref: tree, row_ref: row.input, side, lane: lane_id });
            id
        };
        let (t_in, t_out) = if forward { (t_lo, t_hi) } else { (t_hi, t_lo) };
        let mut ids = vec![push(g, frame.point(t_in, s_lane), NodeKind::Uturn, None)];
        let order: Vec<&(usize, T, T)> =
            if forward { row.trees.iter().collect() } else { row.trees.iter().rev().collect() };
        for &&(tree, t, s) in &order {
            ids.push(push(g, frame.point(t, s + s_off), NodeKind::TreeAccess, Some(tree)));
        }
        ids.push(push(g, frame.point(t_out, s_lane), NodeKind::RowEnd, None));
        for w in ids.windows(2) {
            let length = dist(g.nodes[w[0]].position(), g.nodes[w[1]].position());
            g.edges.push(CorridorEdge { from: w[0], to: w[1], length, kind: EdgeKind::Lane });
        }
        g.lanes.push(Lane { id: lane_id, corridor, row: row.input, heading, nodes: ids });
        lane_id
    };
    let span = |rs: &[&PlacedRow<T>]| {
        let lo = rs.iter().map(|r| r.trees[0].1).fold(T::infinity(), |a, b| a.min(b));
        let hi = rs.iter().map(|r| r.trees[r.trees.len() - 1].1).fold(T::neg_infinity(), |a, b| a.max(b));
        (lo - ext, hi + ext)
    };

    if placed.len() == 1 {
        let row = &placed[0];
        let off = canopy_radius + fixed_offset.unwrap_or(clearance + clearance).max(clearance);
        let (lo, hi) = span(&[row]);
        let a = add_lane(&mut g, row, -off, true, lo, hi, None);
        let b = add_lane(&mut g, row, off, false, lo, hi, None);
        entries.extend([(a, true), (b, false)]);
        exits.extend([(a, false), (b, true)]);
    } else {
        for pair in placed.windows(2) {
            let (ra, rb) = (&pair[0], &pair[1]);
            let gap = rb.across - ra.across;
            let width = gap - canopy_radius - canopy_radius;
            if width < clearance + clearance {
                log::warn!(
                    "corridor between rows {} and {} is {:.2} m wide, below twice the clearance; omitted",
                    ra.input,
                    rb.input,
                    width.to_f64_lossy()
                );
                continue;
            }
            let edge_gap = fixed_offset.unwrap_or(width / T::lit(4.0)).max(clearance).min(width - clearance);
            let off = canopy_radius + edge_gap;
            let (lo, hi) = span(&[ra, rb]);
            let cid = g.corridors.len();
            let a = add_lane(&mut g, ra, off, true, lo, hi, Some(cid));
            let b = add_lane(&mut g, rb, -off, false, lo, hi, Some(cid));
            g.corridors.push(Corridor { id: cid, rows: [ra.input, rb.input], width, lanes: [a, b] });
            entries.extend([(a, true), (b, false)]);
            exits.extend([(a, false), (b, true)]);
        }
        if g.corridors.is_empty() {
            return Err(GraphError::NoCorridor);
        }
    }

    // Headland connections: every exit to every entry at the same end.
    for &(xl, x_low) in &exits {
        for &(el, e_low) in &entries {
            if x_low != e_low {
                continue;
            }
            let from = *g.lanes[xl].nodes.last().expect("lane has nodes");
            let to = g.lanes[el].nodes[0];
            let same = g.lanes[xl].corridor == g.lanes[el].corridor;
            let kind = if same { EdgeKind::Uturn } else { EdgeKind::Switch };
            let length = dist(g.nodes[from].position(), g.nodes[to].position());
            g.edges.push(CorridorEdge { from, to, length, kind });
        }
    }
    g.index()?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn layout(rows: usize, per_row: usize, gap: f64, spacing: f64) -> (Vec<TreeRow<f64>>, Vec<[f64; 2]>) {
        let rows: Vec<Vec<[f64; 2]>> = (0..rows)
            .map(|r| (0..per_row).map(|t| [t as f64 * spacing, r as f64 * gap]).collect())
            .collect();
        rows_from_centers(&rows)
    }

    #[test]
    fn two_rows_make_one_corridor() {
        let (rows, c) = layout(2, 5, 4.0, 3.0);
        let g = build_graph(&rows, &c, 0.8, &GraphParams::default()).unwrap();
        assert_eq!(g.corridors.len(), 1);
        assert_eq!(g.lanes.len(), 2);
        assert_eq!(g.count(NodeKind::TreeAccess), 10);
        assert_eq!(g.count(NodeKind::RowEnd) + g.count(NodeKind::Uturn), 4);
        assert!(g.is_strongly_connected());
        assert!(g.lanes_form_loops());
        assert!(g.lane_edges_follow_headings());
        assert!((heading_diff(g.lanes[0].heading, g.lanes[1].heading) - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn access_nodes_keep_clearance() {
        let (rows, c) = layout(3, 4, 4.0, 3.0);
        let p = GraphParams::default();
        let g = build_graph(&rows, &c, 0.8, &p).unwrap();
        for n in g.nodes.iter().filter(|n| n.kind == NodeKind::TreeAccess) {
            // rows at y = 0, 4, 8
            let gaps = [0.0, 4.0, 8.0].map(|y: f64| (n.y - y).abs() - 0.8);
            assert!(gaps.iter().all(|&d| d >= p.clearance_min - 1e-9), "{n:?}");
            assert!(n.y > 0.0 && n.y < 8.0);
        }
    }

    #[test]
    fn single_row_is_one_loop() {
        let (rows, c) = layout(1, 4, 4.0, 3.0);
        let g = build_graph(&rows, &c, 0.8, &GraphParams::default()).unwrap();
        assert_eq!(g.lanes.len(), 2);
        assert!(g.corridors.is_empty());
        assert!(g.is_strongly_connected());
        assert!(g.lanes_form_loops());
    }

    #[test]
    fn narrow_rows_have_no_corridor() {
        let (rows, c) = layout(2, 4, 2.0, 3.0);
        assert!(matches!(build_graph(&rows, &c, 0.8, &GraphParams::default()), Err(GraphError::NoCorridor)));
    }

    #[test]
    fn json_round_trip() {
        let (rows, c) = layout(3, 3, 4.0, 3.0);
        let g = build_graph(&rows, &c, 0.8, &GraphParams::default()).unwrap();
        let back = VisibilityGraph::<f64>::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back.nodes, g.nodes);
        assert_eq!(back.edges, g.edges);
        assert!(back.is_strongly_connected());
    }

    #[test]
    fn heading_difference_wraps() {
        let pi = std::f64::consts::PI;
        assert!((heading_diff(pi - 0.1, -pi + 0.1) - 0.2).abs() < 1e-12);
        assert!((heading_diff(0.0, pi) - pi).abs() < 1e-12);
    }
}
