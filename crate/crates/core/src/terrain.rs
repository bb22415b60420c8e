//! Cloth-simulation ground filtering.
//!
//! The cloud is flipped upside down and a grid of particles is dropped onto
//! it. Each particle obeys `m·ẍ = F_gravity + F_spring + F_damping`,
//! integrated with position-based (Verlet) steps: gravity enters as a fixed
//! displacement per step, damping through the velocity carried by
//! `pos - prev`, and springs as rounds of pairwise height relaxation between
//! 4-connected neighbours. A particle that reaches the highest inverted
//! point of its cell is pinned there. Points close to the settled cloth are
//! ground.

use std::collections::HashSet;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PointCloud;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TerrainError {
    #[error("cannot segment an empty map")]
    EmptyMap,
    #[error("invalid cloth parameters: {0}")]
    Params(String),
    #[error("ground truth set is empty")]
    EmptyTruth,
    #[error("index {0} is out of range for the cloud")]
    IndexOutOfRange(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsfParams {
    /// Particle spacing, metres.
    #[serde(rename = "resolution_m")]
    pub cloth_resolution: f64,
    /// Max vertical point-to-cloth distance for ground, metres.
    #[serde(rename = "class_threshold_m")]
    pub class_threshold: f64,
    pub iterations: usize,
    /// Spring relaxation rounds per step, 1 to 3.
    pub rigidness: u8,
    #[serde(rename = "time_step_s")]
    pub time_step: f64,
    /// Downward acceleration in the inverted frame.
    pub gravity: f64,
    /// Fraction of velocity removed per step.
    pub damping: f64,
}

impl Default for CsfParams {
    fn default() -> Self {
        Self {
            cloth_resolution: 0.1,
            class_threshold: 0.1,
            iterations: 500,
            rigidness: 3,
            time_step: 0.65,
            gravity: 0.2,
            damping: 0.01,
        }
    }
}

impl CsfParams {
    pub fn validate(&self) -> Result<(), TerrainError> {
        let bad = |m: String| Err(TerrainError::Params(m));
        if !(self.cloth_resolution > 0.0) {
            return bad(format!("cloth_resolution {} must be positive", self.cloth_resolution));
        }
        if !(self.class_threshold > 0.0) {
            return bad(format!("class_threshold {} must be positive", self.class_threshold));
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if !(1..=3).contains(&self.rigidness) {
            return bad(format!("rigidness {} not in 1..=3", self.rigidness));
        }
        if !(self.time_step > 0.0) {
            return bad("time_step must be positive".into());
        }
        if !(self.gravity > 0.0) {
            return bad("gravity must be positive".into());
        }
        if !(0.0..1.0).contains(&self.damping) {
            return bad("damping must be in [0, 1)".into());
        }
        Ok(())
    }
}

/// Ground / non-ground split of a cloud; both lists ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundSegmentation {
    pub ground: Vec<usize>,
    pub nonground: Vec<usize>,
}

impl GroundSegmentation {
    pub fn len(&self) -> usize {
        self.ground.len() + self.nonground.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-point ground flags.
    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &i in &self.ground {
            m[i] = true;
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettleReport {
    pub iterations_run: usize,
    /// Largest movement of a free particle in the final step, metres.
    pub max_displacement: f64,
    pub settled: bool,
}

/// Tolerance on the last step's largest displacement.
pub const SETTLE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
struct Particle<T> {
    pos: T,
    prev: T,
    movable: bool,
}

/// Lattice of particles covering the map footprint with a margin cell.
#[derive(Debug, Clone)]
pub struct ClothGrid<T> {
    origin: [T; 2],
    spacing: T,
    nx: usize,
    ny: usize,
    particles: Vec<Particle<T>>,
    /// Collision height per particle in the inverted frame.
    surface: Vec<T>,
}

impl<T: Scalar> ClothGrid<T> {
    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn origin(&self) -> [T; 2] {
        self.origin
    }

    pub fn spacing(&self) -> T {
        self.spacing
    }

    /// Cloth height at particle `(i, j)` in the original (non-inverted) frame.
    pub fn height_at(&self, i: usize, j: usize) -> T {
        -self.particles[j * self.nx + i].pos
    }

    /// Lowest original-frame point under particle `(i, j)`, or the filled-in
    /// neighbour value for an empty cell.
    pub fn surface_at(&self, i: usize, j: usize) -> T {
        -self.surface[j * self.nx + i]
    }

    pub fn is_pinned(&self, i: usize, j: usize) -> bool {
        !self.particles[j * self.nx + i].movable
    }

    /// Bilinear cloth height (inverted frame) at a map position.
    fn interpolate_inverted(&self, x: T, y: T) -> T {
        let fx = ((x - self.origin[0]) / self.spacing).max(T::zero());
        let fy = ((y - self.origin[1]) / self.spacing).max(T::zero());
        let i0 = fx.floor().to_usize().unwrap_or(0).min(self.nx - 2);
        let j0 = fy.floor().to_usize().unwrap_or(0).min(self.ny - 2);
        let tx = (fx - T::from_usize_lossy(i0)).min(T::one());
        let ty = (fy - T::from_usize_lossy(j0)).min(T::one());
        let h = |i: usize, j: usize| self.particles[j * self.nx + i].pos;
        let one = T::one();
        h(i0, j0) * (one - tx) * (one - ty)
            + h(i0 + 1, j0) * tx * (one - ty)
            + h(i0, j0 + 1) * (one - tx) * ty
            + h(i0 + 1, j0 + 1) * tx * ty
    }

    /// Vertical distance from a point to the cloth, in metres.
    pub fn distance(&self, x: T, y: T, z: T) -> T {
        (-z - self.interpolate_inverted(x, y)).abs()
    }
}

/// Settled cloth plus convergence details.
#[derive(Debug, Clone)]
pub struct SettledCloth<T> {
    pub grid: ClothGrid<T>,
    pub report: SettleReport,
}

impl<T: Scalar> SettledCloth<T> {
    /// Splits the cloud by distance to the cloth.
    pub fn classify(&self, map: &PointCloud<T>, class_threshold: f64) -> GroundSegmentation {
        let thr = T::lit(class_threshold);
        let flags: Vec<bool> = map
            .points()
            .par_iter()
            .map(|p| self.grid.distance(p.x, p.y, p.z) <= thr)
            .collect();
        let mut seg = GroundSegmentation { ground: Vec::new(), nonground: Vec::new() };
        for (i, g) in flags.into_iter().enumerate() {
            if g {
                seg.ground.push(i);
            } else {
                seg.nonground.push(i);
            }
        }
        seg
    }
}

/// Runs the cloth simulation without classifying.
pub fn simulate_cloth<T: Scalar>(map: &PointCloud<T>, params: &CsfParams) -> Result<SettledCloth<T>, TerrainError> {
    params.validate()?;
    let b = map.bounds().ok_or(TerrainError::EmptyMap)?;
    let spacing = T::lit(params.cloth_resolution);
    let cells = |axis: usize| {
        (b.extent(axis) / spacing).ceil().to_usize().unwrap_or(0) + 1 + 2 * MARGIN_CELLS
    };
    let (nx, ny) = (cells(0), cells(1));
    let margin = spacing * T::from_usize_lossy(MARGIN_CELLS);
    let origin = [b.min[0] - margin, b.min[1] - margin];

    let surface = collision_surface(map, origin, spacing, nx, ny);
    let top = -b.min[2] + T::lit(CLOTH_START_GAP);
    let particles = vec![Particle { pos: top, prev: top, movable: true }; nx * ny];
    let mut grid = ClothGrid { origin, spacing, nx, ny, particles, surface };

    // Uniform particle mass cancels: gravity alone sets the per-step fall.
    let fall = T::lit(params.gravity * params.time_step * params.time_step);
    let keep = T::one() - T::lit(params.damping);
    let tol = T::lit(SETTLE_TOLERANCE);

    let mut report = SettleReport { iterations_run: 0, max_displacement: f64::INFINITY, settled: false };
    for it in 0..params.iterations {
        let before: Vec<T> = grid.particles.iter().map(|p| p.pos).collect();

        grid.particles
            .par_iter_mut()
            .zip(grid.surface.par_iter())
            .for_each(|(p, &floor)| {
                if !p.movable {
                    return;
                }
                let next = p.pos + (p.pos - p.prev) * keep - fall;
                p.prev = p.pos;
                p.pos = next;
                if p.pos <= floor {
                    p.pos = floor;
                    p.prev = floor;
                    p.movable = false;
                }
            });

        for _ in 0..params.rigidness {
            relax_springs(&mut grid);
        }

        let max_disp = grid
            .particles
            .iter()
            .zip(&before)
            .filter(|(p, _)| p.movable)
            .map(|(p, &b)| (p.pos - b).abs())
            .fold(T::zero(), |a, d| a.max(d));
        report.iterations_run = it + 1;
        report.max_displacement = max_disp.to_f64_lossy();
        if max_disp < tol && it > 0 {
            report.settled = true;
            break;
        }
    }

    // No particle may rest below the surface it collides with.
    for (p, &floor) in grid.particles.iter_mut().zip(&grid.surface) {
        if p.pos < floor {
            p.pos = floor;
            p.movable = false;
        }
    }
    if !report.settled {
        log::warn!(
            "cloth did not settle after {} iterations (residual {:.3e} m)",
            report.iterations_run,
            report.max_displacement
        );
    }
    Ok(SettledCloth { grid, report })
}

/// Simulates the cloth and classifies every point.
pub fn csf_segment<T: Scalar>(
    map: &PointCloud<T>,
    params: &CsfParams,
) -> Result<(GroundSegmentation, SettleReport), TerrainError> {
    let cloth = simulate_cloth(map, params)?;
    Ok((cloth.classify(map, params.class_threshold), cloth.report))
}

const MARGIN_CELLS: usize = 1;
const CLOTH_START_GAP: f64 = 0.05;

/// One round over all 4-connected pairs, row-major. A free pair closes half
/// its height gap; a free particle next to a pinned one closes half the gap
/// on its own.
fn relax_springs<T: Scalar>(grid: &mut ClothGrid<T>) {
    let (nx, ny) = (grid.nx, grid.ny);
    let half = T::lit(0.5);
    let quarter = T::lit(0.25);
    let pair = |a: usize, b: usize, ps: &mut [Particle<T>]| {
        let diff = ps[b].pos - ps[a].pos;
        match (ps[a].movable, ps[b].movable) {
            (true, true) => {
                ps[a].pos = ps[a].pos + diff * quarter;
                ps[b].pos = ps[b].pos - diff * quarter;
            }
            (true, false) => ps[a].pos = ps[a].pos + diff * half,
            (false, true) => ps[b].pos = ps[b].pos - diff * half,
            (false, false) => {}
        }
    };
    let ps = &mut grid.particles;
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            if i + 1 < nx {
                pair(k, k + 1, ps);
            }
            if j + 1 < ny {
                pair(k, k + nx, ps);
            }
        }
    }
}

/// Highest inverted point nearest to each particle; empty cells take the
/// mean of the nearest filled cells along their row and column, or failing
/// that the nearest filled cell found by breadth-first search.
fn collision_surface<T: Scalar>(map: &PointCloud<T>, origin: [T; 2], spacing: T, nx: usize, ny: usize) -> Vec<T> {
    let mut surface: Vec<Option<T>> = vec![None; nx * ny];
    let half = T::lit(0.5);
    for p in map.points() {
        let i = ((p.x - origin[0]) / spacing + half).floor().to_usize().unwrap_or(0).min(nx - 1);
        let j = ((p.y - origin[1]) / spacing + half).floor().to_usize().unwrap_or(0).min(ny - 1);
        let slot = &mut surface[j * nx + i];
        let inv = -p.z;
        *slot = Some(slot.map_or(inv, |v: T| v.max(inv)));
    }

    let mut filled = surface.clone();
    let mut missing = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if surface[j * nx + i].is_some() {
                continue;
            }
            let left = (0..i).rev().find_map(|ii| surface[j * nx + ii]);
            let right = (i + 1..nx).find_map(|ii| surface[j * nx + ii]);
            let down = (0..j).rev().find_map(|jj| surface[jj * nx + i]);
            let up = (j + 1..ny).find_map(|jj| surface[jj * nx + i]);
            let found: Vec<T> = [left, right, down, up].into_iter().flatten().collect();
            if found.is_empty() {
                missing.push(j * nx + i);
            } else {
                filled[j * nx + i] = Some(found.iter().copied().sum::<T>() / T::from_usize_lossy(found.len()));
            }
        }
    }

    if !missing.is_empty() {
        let mut queue: std::collections::VecDeque<usize> =
            (0..nx * ny).filter(|&k| filled[k].is_some()).collect();
        while let Some(k) = queue.pop_front() {
            let v = filled[k];
            let (i, j) = (k % nx, k / nx);
            let mut visit = |n: usize| {
                if filled[n].is_none() {
                    filled[n] = v;
                    queue.push_back(n);
                }
            };
            if i > 0 {
                visit(k - 1);
            }
            if i + 1 < nx {
                visit(k + 1);
            }
            if j > 0 {
                visit(k - nx);
            }
            if j + 1 < ny {
                visit(k + nx);
            }
        }
    }
    filled.into_iter().map(|v| v.expect("map is non-empty")).collect()
}

/// Surface accuracy / error ratios against a ground-truth ground set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScore {
    /// `|predicted ground \ truth| / |truth|`
    pub ser: f64,
    /// `|predicted ground ∩ truth| / |truth|`
    pub sar: f64,
}

pub fn compute_ser_sar(pred: &GroundSegmentation, truth: &[usize]) -> Result<SegmentationScore, TerrainError> {
    if truth.is_empty() {
        return Err(TerrainError::EmptyTruth);
    }
    let n = pred.len();
    if let Some(&bad) = truth.iter().find(|&&i| i >= n) {
        return Err(TerrainError::IndexOutOfRange(bad));
    }
    let truth: HashSet<usize> = truth.iter().copied().collect();
    let hit = pred.ground.iter().filter(|i| truth.contains(i)).count();
    let extra = pred.ground.len() - hit;
    let t = truth.len() as f64;
    Ok(SegmentationScore { ser: extra as f64 / t, sar: hit as f64 / t })
}

/// `(cloth resolution, class threshold)` pairs swept by default.
pub const DEFAULT_STUDY_GRID: [(f64, f64); 6] = [(0.5, 0.5), (0.25, 0.5), (0.1, 0.5), (0.05, 0.5), (0.1, 0.1), (0.1, 0.05)];

/// One row of a cloth-parameter sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsfStudyRow {
    pub resolution: f64,
    pub class_threshold: f64,
    pub ser: f64,
    pub sar: f64,
    pub running_time_ms: f64,
    pub settled: bool,
}

/// Runs the filter for each `(resolution, class_threshold)` pair, timing
/// each run.
pub fn csf_parameter_study<T: Scalar>(
    map: &PointCloud<T>,
    truth: &[usize],
    base: &CsfParams,
    grid: &[(f64, f64)],
) -> Result<Vec<CsfStudyRow>, TerrainError> {
    grid.iter()
        .map(|&(resolution, class_threshold)| {
            let params = CsfParams { cloth_resolution: resolution, class_threshold, ..*base };
            let start = Instant::now();
            let (seg, report) = csf_segment(map, &params)?;
            let running_time_ms = start.elapsed().as_secs_f64() * 1e3;
            let score = compute_ser_sar(&seg, truth)?;
            Ok(CsfStudyRow {
                resolution,
                class_threshold,
                ser: score.ser,
                sar: score.sar,
                running_time_ms,
                settled: report.settled,
            })
        })
        .collect()
}
