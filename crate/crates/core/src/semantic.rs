//! Per-point semantic labels and tree-row extraction.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Detection, DetectionBox, PointCloud};
use crate::scalar::{total_cmp, Scalar};
use crate::terrain::GroundSegmentation;

#[derive(Debug, Error)]
pub enum SemanticError {
    #[error("invalid row parameters: {0}")]
    Params(String),
    #[error("ground segmentation covers {seg} points but the map has {map}")]
    SizeMismatch { seg: usize, map: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Tree,
    Ground,
    Obstacle,
}

impl Label {
    /// Integer code used in labelled cloud exports.
    pub fn code(self) -> u8 {
        match self {
            Label::Tree => 0,
            Label::Ground => 1,
            Label::Obstacle => 2,
        }
    }
}

/// A line of trees in normal form `x·cos θ + y·sin θ = ρ`, θ ∈ [0, π).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TreeRow<T> {
    pub theta: T,
    pub rho: T,
    /// Tree indices ordered by position along the line.
    pub members: Vec<usize>,
    /// Projections of the first and last member centres onto the line.
    pub endpoints: [[T; 2]; 2],
}

impl<T: Scalar> TreeRow<T> {
    pub fn normal(&self) -> [T; 2] {
        [self.theta.cos(), self.theta.sin()]
    }

    /// Unit direction along the row, pointing towards increasing members.
    pub fn direction(&self) -> [T; 2] {
        [-self.theta.sin(), self.theta.cos()]
    }

    /// Signed perpendicular distance of `p` from the line.
    pub fn offset(&self, p: [T; 2]) -> T {
        p[0] * self.theta.cos() + p[1] * self.theta.sin() - self.rho
    }

    /// Position of `p` along the line.
    pub fn along(&self, p: [T; 2]) -> T {
        let d = self.direction();
        p[0] * d[0] + p[1] * d[1]
    }

    /// Point on the line at parameter `t`.
    pub fn at(&self, t: T) -> [T; 2] {
        let n = self.normal();
        let d = self.direction();
        [n[0] * self.rho + d[0] * t, n[1] * self.rho + d[1] * t]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RowParams {
    #[serde(rename = "lateral_tolerance_m")]
    pub lateral_tolerance: f64,
    pub min_trees_per_row: usize,
}

impl Default for RowParams {
    fn default() -> Self {
        Self { lateral_tolerance: 0.5, min_trees_per_row: 3 }
    }
}

impl RowParams {
    pub fn validate(&self) -> Result<(), SemanticError> {
        if !(self.lateral_tolerance > 0.0) {
            return Err(SemanticError::Params("lateral_tolerance must be positive".into()));
        }
        if self.min_trees_per_row < 2 {
            return Err(SemanticError::Params("min_trees_per_row must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SemanticMap<T: Scalar> {
    pub labels: Vec<Label>,
    pub trees: Vec<Detection<T>>,
    pub rows: Vec<TreeRow<T>>,
}

impl<T: Scalar> SemanticMap<T> {
    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Trees not assigned to any row.
    pub fn unassigned_trees(&self) -> Vec<usize> {
        let mut used = vec![false; self.trees.len()];
        for r in &self.rows {
            for &m in &r.members {
                used[m] = true;
            }
        }
        (0..self.trees.len()).filter(|&i| !used[i]).collect()
    }

    pub fn tree_centers(&self) -> Vec<[T; 2]> {
        self.trees.iter().map(|d| d.footprint().center()).collect()
    }

    /// Writes `x y z label` lines, label codes 0 tree, 1 ground, 2 obstacle.
    pub fn write_labelled_xyz<W: Write>(&self, map: &PointCloud<T>, mut out: W) -> std::io::Result<()> {
        let mut line = String::new();
        writeln!(out, "# x y z label (0 tree, 1 ground, 2 obstacle)")?;
        for (p, l) in map.points().iter().zip(&self.labels) {
            line.clear();
            let _ = writeln!(line, "{} {} {} {}", p.x, p.y, p.z, l.code());
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    /// `{trees, rows}` summary without the per-point labels.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({ "trees": self.trees, "rows": self.rows })
    }

    pub fn save(&self, map: &PointCloud<T>, xyz: &Path, json: &Path) -> Result<(), SemanticError> {
        let f = std::io::BufWriter::new(std::fs::File::create(xyz)?);
        self.write_labelled_xyz(map, f)?;
        std::fs::write(json, serde_json::to_string_pretty(&self.summary_json())?)?;
        Ok(())
    }
}

/// Labels every point: inside any tree box → tree; otherwise ground if the
/// segmentation says so; otherwise obstacle. Planar detections act as
/// boxes of unlimited height.
pub fn fuse_labels<T: Scalar>(
    map: &PointCloud<T>,
    trees: &[Detection<T>],
    ground: &GroundSegmentation,
) -> Result<SemanticMap<T>, SemanticError> {
    if ground.len() != map.len() {
        return Err(SemanticError::SizeMismatch { seg: ground.len(), map: map.len() });
    }
    let is_ground = ground.mask(map.len());
    let labels = map
        .points()
        .par_iter()
        .zip(is_ground.par_iter())
        .map(|(p, &g)| {
            let in_tree = trees.iter().any(|d| match &d.bbox {
                DetectionBox::Volume(b) => b.contains(p),
                DetectionBox::Planar(f) => f.contains_xy(p.x, p.y),
            });
            if in_tree {
                Label::Tree
            } else if g {
                Label::Ground
            } else {
                Label::Obstacle
            }
        })
        .collect();
    Ok(SemanticMap { labels, trees: trees.to_vec(), rows: Vec::new() })
}

const THETA_BINS: usize = 180;
const REFINE_ROUNDS: usize = 16;

/// Iterative Hough line extraction over tree centres.
///
/// Each round votes the remaining centres into 1° × (tolerance/2) bins,
/// takes the bin with the most votes within the tolerance band, gathers
/// the centres within the lateral tolerance of it and refits the line by
/// orthogonal least squares until the member set stops changing. Members
/// are removed and the search repeats until no band holds
/// `min_trees_per_row` votes.
pub fn detect_tree_rows<T: Scalar>(centers: &[[T; 2]], params: &RowParams) -> Result<Vec<TreeRow<T>>, SemanticError> {
    params.validate()?;
    let tol = T::lit(params.lateral_tolerance);
    let rho_bin = tol / T::lit(2.0);
    let (sin, cos): (Vec<T>, Vec<T>) = (0..THETA_BINS)
        .map(|k| (T::PI() * T::from_usize_lossy(k) / T::from_usize_lossy(THETA_BINS)).sin_cos())
        .unzip();
    let mut remaining: Vec<usize> = (0..centers.len()).collect();
    let mut rows = Vec::new();

    while remaining.len() >= params.min_trees_per_row {
        let Some((theta, rho, votes)) = hough_peak(centers, &remaining, &sin, &cos, rho_bin) else {
            break;
        };
        if votes < params.min_trees_per_row {
            break;
        }
        let mut line = (theta, rho);
        let mut members = within(centers, &remaining, line, tol);
        for _ in 0..REFINE_ROUNDS {
            if members.len() < 2 {
                break;
            }
            line = fit_line(centers, &members);
            let next = within(centers, &remaining, line, tol);
            if next == members {
                break;
            }
            members = next;
        }
        if members.len() < params.min_trees_per_row {
            break;
        }
        let mut row = TreeRow { theta: line.0, rho: line.1, members: Vec::new(), endpoints: [[T::zero(); 2]; 2] };
        members.sort_by(|&a, &b| total_cmp(row.along(centers[a]), row.along(centers[b])).then(a.cmp(&b)));
        row.members = members;
        let first = row.along(centers[row.members[0]]);
        let last = row.along(centers[*row.members.last().expect("non-empty")]);
        row.endpoints = [row.at(first), row.at(last)];
        remaining.retain(|i| !row.members.contains(i));
        rows.push(row);
    }
    Ok(rows)
}

/// Rows over the footprint centres of detections.
pub fn detect_rows_from_trees<T: Scalar>(
    trees: &[Detection<T>],
    params: &RowParams,
) -> Result<Vec<TreeRow<T>>, SemanticError> {
    let centers: Vec<[T; 2]> = trees.iter().map(|d| d.footprint().center()).collect();
    detect_tree_rows(&centers, params)
}

/// Strongest accumulator bin as `(θ, mean ρ of its votes, votes)`, where
/// the votes of a bin include its neighbours within the lateral tolerance;
/// ties go to the lowest θ bin, then the lowest ρ bin.
fn hough_peak<T: Scalar>(
    centers: &[[T; 2]],
    idx: &[usize],
    sin: &[T],
    cos: &[T],
    rho_bin: T,
) -> Option<(T, T, usize)> {
    let reach = idx
        .iter()
        .map(|&i| centers[i][0].abs() + centers[i][1].abs())
        .fold(T::zero(), |a, b| a.max(b));
    let rho_min = -reach - rho_bin;
    let nrho = ((reach + rho_bin) * T::lit(2.0) / rho_bin).ceil().to_usize()? + 1;
    let mut acc = vec![0usize; THETA_BINS * nrho];
    for &i in idx {
        let [x, y] = centers[i];
        for k in 0..THETA_BINS {
            let rho = x * cos[k] + y * sin[k];
            let b = ((rho - rho_min) / rho_bin).floor().to_usize().unwrap_or(0).min(nrho - 1);
            acc[k * nrho + b] += 1;
        }
    }
    // score each bin by the votes within ±tolerance (two bins) of it, so a
    // jittered row spread over neighbouring bins counts in full
    let reach_bins = 2;
    let mut score = vec![0usize; acc.len()];
    for k in 0..THETA_BINS {
        let row = &acc[k * nrho..(k + 1) * nrho];
        for b in 0..nrho {
            let lo = b.saturating_sub(reach_bins);
            let hi = (b + reach_bins).min(nrho - 1);
            score[k * nrho + b] = row[lo..=hi].iter().sum();
        }
    }
    let (best, &votes) = score.iter().enumerate().rev().max_by_key(|(_, &v)| v)?;
    let (k, b) = (best / nrho, best % nrho);
    let theta = T::PI() * T::from_usize_lossy(k) / T::from_usize_lossy(THETA_BINS);
    // a plateau of equal scores can put the winning bin at its edge, so
    // seed with the mean ρ of the votes actually counted
    let (lo, hi) = (b.saturating_sub(reach_bins), (b + reach_bins).min(nrho - 1));
    let mut sum = T::zero();
    for &i in idx {
        let rho = centers[i][0] * cos[k] + centers[i][1] * sin[k];
        let bin = ((rho - rho_min) / rho_bin).floor().to_usize().unwrap_or(0).min(nrho - 1);
        if (lo..=hi).contains(&bin) {
            sum = sum + rho;
        }
    }
    let rho = if votes > 0 { sum / T::from_usize_lossy(votes) } else { rho_min + (T::from_usize_lossy(b) + T::lit(0.5)) * rho_bin };
    Some((theta, rho, votes))
}

fn within<T: Scalar>(centers: &[[T; 2]], idx: &[usize], (theta, rho): (T, T), tol: T) -> Vec<usize> {
    let (s, c) = theta.sin_cos();
    idx.iter()
        .copied()
        .filter(|&i| (centers[i][0] * c + centers[i][1] * s - rho).abs() <= tol)
        .collect()
}

/// Orthogonal least-squares line through the selected centres.
fn fit_line<T: Scalar>(centers: &[[T; 2]], idx: &[usize]) -> (T, T) {
    let n = T::from_usize_lossy(idx.len());
    let mx = idx.iter().map(|&i| centers[i][0]).sum::<T>() / n;
    let my = idx.iter().map(|&i| centers[i][1]).sum::<T>() / n;
    let (mut sxx, mut syy, mut sxy) = (T::zero(), T::zero(), T::zero());
    for &i in idx {
        let dx = centers[i][0] - mx;
        let dy = centers[i][1] - my;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
        sxy = sxy + dx * dy;
    }
    // principal axis angle, then the normal is a quarter turn away
    let phi = T::lit(0.5) * (T::lit(2.0) * sxy).atan2(sxx - syy);
    let mut theta = phi + T::FRAC_PI_2();
    while theta >= T::PI() {
        theta = theta - T::PI();
    }
    while theta < T::zero() {
        theta = theta + T::PI();
    }
    let rho = mx * theta.cos() + my * theta.sin();
    (theta, rho)
}
