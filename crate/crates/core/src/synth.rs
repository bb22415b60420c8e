//! Seeded synthetic orchards with per-point ground truth.
//!
//! Randomness comes from ChaCha8 seeded with `seed`; the ground uses stream
//! 0 and tree `k` uses stream `k + 1`, so adding trees never changes the
//! samples of existing ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Box2D, Box3D, Detection, DetectionBox, GeometryError, Point3, PointCloud, CLASS_FRUIT_TREE};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid orchard spec: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Terrain {
    Flat,
    /// `z = grade · x`.
    Slope { grade: f64 },
    /// `z = A·(sin(2πx/λ) + sin(2πy/λ))/2`.
    Rolling {
        #[serde(rename = "amplitude_m")]
        amplitude: f64,
        #[serde(rename = "wavelength_m")]
        wavelength: f64,
    },
}

impl Terrain {
    pub fn height(&self, x: f64, y: f64) -> f64 {
        match *self {
            Terrain::Flat => 0.0,
            Terrain::Slope { grade } => grade * x,
            Terrain::Rolling { amplitude, wavelength } => {
                let k = std::f64::consts::TAU / wavelength;
                amplitude * ((k * x).sin() + (k * y).sin()) / 2.0
            }
        }
    }
}

/// Rows run along +x; row `r` sits at `y = headland + r·row_spacing`, tree
/// `t` at `x = headland + t·tree_spacing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrchardSpec {
    pub rows: usize,
    pub trees_per_row: usize,
    #[serde(rename = "row_spacing_m")]
    pub row_spacing: f64,
    #[serde(rename = "tree_spacing_m")]
    pub tree_spacing: f64,
    #[serde(rename = "trunk_height_m")]
    pub trunk_height: f64,
    #[serde(rename = "trunk_radius_m")]
    pub trunk_radius: f64,
    #[serde(rename = "canopy_radius_m")]
    pub canopy_radius: f64,
    /// Full vertical extent of the canopy ellipsoid.
    #[serde(rename = "canopy_height_m")]
    pub canopy_height: f64,
    /// Open margin around the planted block.
    #[serde(rename = "headland_m")]
    pub headland: f64,
    pub ground: Terrain,
    /// Ground points per square metre.
    pub point_density: f64,
    /// Tree surface density as a multiple of `point_density`.
    pub canopy_density_factor: f64,
    #[serde(rename = "noise_sigma_m")]
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for OrchardSpec {
    fn default() -> Self {
        Self {
            rows: 3,
            trees_per_row: 10,
            row_spacing: 4.0,
            tree_spacing: 3.0,
            trunk_height: 0.8,
            trunk_radius: 0.1,
            canopy_radius: 0.8,
            canopy_height: 1.6,
            headland: 4.0,
            ground: Terrain::Flat,
            point_density: 100.0,
            canopy_density_factor: 4.0,
            noise_sigma: 0.01,
            seed: 7,
        }
    }
}

impl OrchardSpec {
    /// Parses a spec from TOML (unknown keys rejected) and validates it.
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let spec: Self = toml::from_str(text).map_err(|e| SynthError::Invalid(vec![e.to_string()]))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let mut bad = Vec::new();
        if self.rows == 0 || self.trees_per_row == 0 {
            bad.push("rows and trees_per_row must be positive".to_string());
        }
        let positive = [
            ("row_spacing_m", self.row_spacing),
            ("tree_spacing_m", self.tree_spacing),
            ("trunk_height_m", self.trunk_height),
            ("trunk_radius_m", self.trunk_radius),
            ("canopy_radius_m", self.canopy_radius),
            ("canopy_height_m", self.canopy_height),
            ("point_density", self.point_density),
            ("canopy_density_factor", self.canopy_density_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                bad.push(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.headland >= 0.0) {
            bad.push("headland_m must be non-negative".into());
        }
        if !(self.noise_sigma >= 0.0) {
            bad.push("noise_sigma_m must be non-negative".into());
        }
        let diameter = 2.0 * self.canopy_radius;
        if self.rows > 1 && !(self.row_spacing > diameter) {
            bad.push(format!("row_spacing_m {} must exceed the canopy diameter {diameter}", self.row_spacing));
        }
        if self.trees_per_row > 1 && !(self.tree_spacing > diameter) {
            bad.push(format!("tree_spacing_m {} must exceed the canopy diameter {diameter}", self.tree_spacing));
        }
        if self.trunk_radius > self.canopy_radius {
            bad.push("trunk_radius_m must not exceed canopy_radius_m".into());
        }
        match self.ground {
            Terrain::Rolling { wavelength, amplitude } if !(wavelength > 0.0 && amplitude >= 0.0) => {
                bad.push("rolling terrain needs wavelength_m > 0 and amplitude_m >= 0".into());
            }
            Terrain::Slope { grade } if !grade.is_finite() => bad.push("slope grade must be finite".into()),
            _ => {}
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(SynthError::Invalid(bad))
        }
    }

    /// Ground-plane extent `[x_max, y_max]`; the minimum corner is the origin.
    pub fn extent(&self) -> [f64; 2] {
        [
            2.0 * self.headland + (self.trees_per_row.saturating_sub(1)) as f64 * self.tree_spacing,
            2.0 * self.headland + (self.rows.saturating_sub(1)) as f64 * self.row_spacing,
        ]
    }

    pub fn tree_count(&self) -> usize {
        self.rows * self.trees_per_row
    }

    /// Trunk base position of tree `k` (row-major).
    pub fn tree_base(&self, k: usize) -> [f64; 2] {
        let (r, t) = (k / self.trees_per_row, k % self.trees_per_row);
        [self.headland + t as f64 * self.tree_spacing, self.headland + r as f64 * self.row_spacing]
    }

    pub fn expected_ground_points(&self) -> usize {
        let [w, h] = self.extent();
        (self.point_density * w * h).round() as usize
    }

    pub fn expected_trunk_points(&self) -> usize {
        let area = std::f64::consts::TAU * self.trunk_radius * self.trunk_height;
        (area * self.tree_density()).round() as usize
    }

    pub fn expected_canopy_points(&self) -> usize {
        let a = self.canopy_radius;
        let c = self.canopy_height / 2.0;
        (spheroid_area(a, c) * self.tree_density()).round() as usize
    }

    fn tree_density(&self) -> f64 {
        self.point_density * self.canopy_density_factor
    }
}

/// Surface area of a spheroid with equatorial radius `a` and polar semi-axis
/// `c` (Thomsen's approximation, within 1.1%).
fn spheroid_area(a: f64, c: f64) -> f64 {
    const P: f64 = 1.6075;
    let ap = a.powf(P);
    let cp = c.powf(P);
    4.0 * std::f64::consts::PI * ((ap * ap + 2.0 * ap * cp) / 3.0).powf(1.0 / P)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointSource {
    Ground,
    Trunk,
    Canopy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GroundTruth<T: Scalar> {
    /// Tight boxes around each tree's points, as confidence-1 detections.
    pub trees: Vec<Detection<T>>,
    /// Row membership: `rows[r]` lists tree indices along the row.
    pub rows: Vec<Vec<usize>>,
    pub ground_indices: Vec<usize>,
    pub sources: Vec<PointSource>,
    /// Owning tree of each point, `None` for ground.
    pub point_tree: Vec<Option<usize>>,
}

impl<T: Scalar> GroundTruth<T> {
    pub fn tree_boxes(&self) -> Vec<Box3D<T>> {
        self.trees.iter().filter_map(|d| d.bbox.as_3d().copied()).collect()
    }

    pub fn tree_centers(&self) -> Vec<[T; 2]> {
        self.trees.iter().map(|d| d.footprint().center()).collect()
    }
}

/// Draws a Gaussian sample clipped to ±5σ by resampling.
fn clipped_normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    loop {
        let n: f64 = StandardNormal.sample(rng);
        if n.abs() < 5.0 {
            return n * sigma;
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn tree_points(spec: &OrchardSpec, k: usize) -> Vec<([f64; 3], PointSource)> {
    let mut rng = stream(spec.seed, k as u64 + 1);
    let [cx, cy] = spec.tree_base(k);
    let base = spec.ground.height(cx, cy);
    let sigma = spec.noise_sigma;
    let mut out = Vec::with_capacity(spec.expected_trunk_points() + spec.expected_canopy_points());
    let jitter = |rng: &mut ChaCha8Rng, p: [f64; 3]| {
        [p[0] + clipped_normal(rng, sigma), p[1] + clipped_normal(rng, sigma), p[2] + clipped_normal(rng, sigma)]
    };

    for _ in 0..spec.expected_trunk_points() {
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let h = rng.random_range(0.0..spec.trunk_height);
        let p = [cx + spec.trunk_radius * phi.cos(), cy + spec.trunk_radius * phi.sin(), base + h];
        out.push((jitter(&mut rng, p), PointSource::Trunk));
    }

    // Uniform on the spheroid surface: uniform sphere direction, accepted
    // in proportion to the local area stretch of the mapping.
    let a = spec.canopy_radius;
    let c = spec.canopy_height / 2.0;
    let zc = base + spec.trunk_height + c;
    let stretch_max = (a * c).max(a * a);
    let mut n = 0;
    while n < spec.expected_canopy_points() {
        let u: [f64; 3] = [
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        ];
        let len = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
        if len < 1e-12 {
            continue;
        }
        let u = [u[0] / len, u[1] / len, u[2] / len];
        let stretch = ((a * c * u[0]).powi(2) + (a * c * u[1]).powi(2) + (a * a * u[2]).powi(2)).sqrt();
        if rng.random::<f64>() * stretch_max > stretch {
            continue;
        }
        let p = [cx + a * u[0], cy + a * u[1], zc + c * u[2]];
        out.push((jitter(&mut rng, p), PointSource::Canopy));
        n += 1;
    }
    out
}

/// Generates the cloud and its ground truth. Points are emitted ground
/// first, then tree by tree in row-major order.
pub fn generate<T: Scalar>(spec: &OrchardSpec) -> Result<(PointCloud<T>, GroundTruth<T>), SynthError> {
    spec.validate()?;
    let [w, h] = spec.extent();
    let mut rng = stream(spec.seed, 0);
    let n_ground = spec.expected_ground_points();
    let mut points = Vec::with_capacity(n_ground);
    for _ in 0..n_ground {
        let x = rng.random_range(0.0..=w);
        let y = rng.random_range(0.0..=h);
        let z = spec.ground.height(x, y) + clipped_normal(&mut rng, spec.noise_sigma);
        points.push(Point3::new(T::lit(x), T::lit(y), T::lit(z)));
    }
    let mut sources = vec![PointSource::Ground; n_ground];
    let mut point_tree = vec![None; n_ground];
    let ground_indices: Vec<usize> = (0..n_ground).collect();

    let per_tree: Vec<_> = (0..spec.tree_count()).into_par_iter().map(|k| tree_points(spec, k)).collect();
    let mut trees = Vec::with_capacity(per_tree.len());
    for (k, pts) in per_tree.into_iter().enumerate() {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for (p, src) in pts {
            let q = Point3::new(T::lit(p[0]), T::lit(p[1]), T::lit(p[2]));
            // bounds in the output precision so every point is inside its box
            for (a, v) in [q.x, q.y, q.z].into_iter().enumerate() {
                lo[a] = lo[a].min(v.to_f64_lossy());
                hi[a] = hi[a].max(v.to_f64_lossy());
            }
            points.push(q);
            sources.push(src);
            point_tree.push(Some(k));
        }
        let f = Box2D::new(T::lit(lo[0]), T::lit(lo[1]), T::lit(hi[0]), T::lit(hi[1]))?;
        let b = Box3D::new(f, T::lit(lo[2]), T::lit(hi[2]))?;
        trees.push(Detection::new(DetectionBox::Volume(b), T::one(), CLASS_FRUIT_TREE)?);
    }
    let rows = (0..spec.rows)
        .map(|r| (r * spec.trees_per_row..(r + 1) * spec.trees_per_row).collect())
        .collect();
    let cloud = PointCloud::new(points)?;
    Ok((cloud, GroundTruth { trees, rows, ground_indices, sources, point_tree }))
}
