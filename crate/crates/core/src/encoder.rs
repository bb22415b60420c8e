//! Bird's-eye-view pillar encoding of a local window into a three-channel
//! pseudo-image: point density, mean height and the tilt of the principal
//! axis away from vertical.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eigen::sym_eigen3;
use crate::geometry::{Point3, PointCloud};
use crate::scalar::Scalar;
use crate::subdivision::LocalWindow;

pub const CHANNELS: usize = 3;
pub const DENSITY: usize = 0;
pub const HEIGHT: usize = 1;
pub const ANGLE: usize = 2;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("resolution must be at least 8, got {0}")]
    Resolution(usize),
    #[error("density cap must be positive")]
    DensityCap,
    #[error("malformed feature image: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderParams {
    /// Cells per window side.
    pub resolution: usize,
    /// A pillar contributes only when it holds strictly more points.
    pub min_points: usize,
    /// Point count mapped to density 1.
    pub density_cap: f64,
}

impl Default for EncoderParams {
    fn default() -> Self {
        Self { resolution: 128, min_points: 100, density_cap: 500.0 }
    }
}

impl EncoderParams {
    pub fn validate(&self) -> Result<(), EncodeError> {
        if self.resolution < 8 {
            return Err(EncodeError::Resolution(self.resolution));
        }
        if !(self.density_cap > 0.0) {
            return Err(EncodeError::DensityCap);
        }
        Ok(())
    }
}

/// Angle of the dominant covariance axis from the z axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrincipalAngle<T> {
    /// Radians in `[0, π/2]`.
    pub angle: T,
    /// All points coincide; `angle` is then π/2.
    pub degenerate: bool,
}

/// Angle between the eigenvector of the largest covariance eigenvalue and
/// the z axis, folded into `[0, π/2]`.
pub fn principal_angle<T: Scalar>(points: &[[T; 3]]) -> PrincipalAngle<T> {
    let degenerate = PrincipalAngle { angle: T::FRAC_PI_2(), degenerate: true };
    if points.len() < 2 {
        return degenerate;
    }
    let n = T::from_usize_lossy(points.len());
    let mut mean = [T::zero(); 3];
    for p in points {
        for k in 0..3 {
            mean[k] = mean[k] + p[k];
        }
    }
    mean = mean.map(|m| m / n);
    let mut cov = [[T::zero(); 3]; 3];
    for p in points {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for i in 0..3 {
            for j in i..3 {
                cov[i][j] = cov[i][j] + d[i] * d[j];
            }
        }
    }
    for i in 0..3 {
        for j in 0..i {
            cov[i][j] = cov[j][i];
        }
    }
    if cov[0][0] + cov[1][1] + cov[2][2] <= T::zero() {
        return degenerate;
    }
    let e = sym_eigen3(&cov);
    let v = e.vectors[0];
    let horizontal = (v[0] * v[0] + v[1] * v[1]).sqrt();
    PrincipalAngle { angle: horizontal.atan2(v[2].abs()), degenerate: false }
}

/// `R × R × 3` pseudo-image, channel-major then row-major (`y` rows, `x`
/// columns). Every value lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage<T> {
    resolution: usize,
    pillar_side: T,
    data: Vec<T>,
}

impl<T: Scalar> FeatureImage<T> {
    pub fn zeros(resolution: usize, window_size: T) -> Self {
        Self {
            resolution,
            pillar_side: window_size / T::from_usize_lossy(resolution),
            data: vec![T::zero(); CHANNELS * resolution * resolution],
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn pillar_side(&self) -> T {
        self.pillar_side
    }

    pub fn window_size(&self) -> T {
        self.pillar_side * T::from_usize_lossy(self.resolution)
    }

    pub fn pillar_area(&self) -> T {
        self.pillar_side * self.pillar_side
    }

    #[inline]
    fn offset(&self, channel: usize, ix: usize, iy: usize) -> usize {
        debug_assert!(channel < CHANNELS && ix < self.resolution && iy < self.resolution);
        (channel * self.resolution + iy) * self.resolution + ix
    }

    pub fn get(&self, channel: usize, ix: usize, iy: usize) -> T {
        self.data[self.offset(channel, ix, iy)]
    }

    /// Sets a value, clamped to `[0, 1]`.
    pub fn set(&mut self, channel: usize, ix: usize, iy: usize, v: T) {
        let o = self.offset(channel, ix, iy);
        self.data[o] = v.max(T::zero()).min(T::one());
    }

    pub fn channel(&self, channel: usize) -> &[T] {
        let n = self.resolution * self.resolution;
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn values(&self) -> &[T] {
        &self.data
    }

    /// Flat little-endian layout: `R: u32`, `channels: u32`, `pillar_side:
    /// f64`, then `3·R·R` `f32` values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(&(self.resolution as u32).to_le_bytes());
        out.extend_from_slice(&(CHANNELS as u32).to_le_bytes());
        out.extend_from_slice(&self.pillar_side.to_f64_lossy().to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EncodeError> {
        let malformed = |m: &str| EncodeError::Malformed(m.to_string());
        if bytes.len() < 16 {
            return Err(malformed("short header"));
        }
        let r = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
        let c = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let side = f64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        if c != CHANNELS {
            return Err(malformed("channel count must be 3"));
        }
        if !(side > 0.0) {
            return Err(malformed("pillar side must be positive"));
        }
        let body = &bytes[16..];
        if body.len() != 4 * CHANNELS * r * r {
            return Err(malformed("payload length does not match resolution"));
        }
        let data = body
            .chunks_exact(4)
            .map(|b| T::lit(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64))
            .collect();
        Ok(Self { resolution: r, pillar_side: T::lit(side), data })
    }
}

/// Encoding parameters written next to a serialized image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingSidecar {
    pub resolution: usize,
    pub window_size: f64,
    pub pillar_side: f64,
    pub min_points: usize,
    pub density_cap: f64,
    pub window_origin: [f64; 2],
    pub window_z_range: Option<[f64; 2]>,
    pub occupied_pillars: usize,
}

/// Result of encoding one window.
#[derive(Debug, Clone)]
pub struct EncodedWindow<T> {
    pub image: FeatureImage<T>,
    pub sidecar: EncodingSidecar,
}

/// Pillar index of a window-local coordinate: half-open cells, the last
/// cell closed.
#[inline]
fn cell_index<T: Scalar>(local: T, side: T, r: usize) -> Option<usize> {
    if local < T::zero() {
        return None;
    }
    let k = (local / side).floor().to_usize()?;
    if k < r {
        Some(k)
    } else if local <= side * T::from_usize_lossy(r) {
        Some(r - 1)
    } else {
        None
    }
}

pub fn encode_pillars<T: Scalar>(
    window: &LocalWindow<T>,
    map: &PointCloud<T>,
    params: &EncoderParams,
) -> Result<EncodedWindow<T>, EncodeError> {
    params.validate()?;
    let pts = map.points();
    let points: Vec<Point3<T>> = window.point_indices.iter().map(|&i| pts[i]).collect();
    encode_points(&points, window.origin, window.size, params)
}

/// Encodes points given in map coordinates against a window at `origin`.
pub fn encode_points<T: Scalar>(
    points: &[Point3<T>],
    origin: [T; 2],
    window_size: T,
    params: &EncoderParams,
) -> Result<EncodedWindow<T>, EncodeError> {
    params.validate()?;
    let r = params.resolution;
    let mut image = FeatureImage::zeros(r, window_size);
    let side = image.pillar_side();

    // counting sort of points into cells keeps input order within a cell
    let cells: Vec<Option<usize>> = points
        .iter()
        .map(|p| {
            let ix = cell_index(p.x - origin[0], side, r)?;
            let iy = cell_index(p.y - origin[1], side, r)?;
            Some(iy * r + ix)
        })
        .collect();
    let mut start = vec![0usize; r * r + 1];
    for c in cells.iter().flatten() {
        start[c + 1] += 1;
    }
    for k in 0..r * r {
        start[k + 1] += start[k];
    }
    let mut fill = start.clone();
    let mut order = vec![0usize; start[r * r]];
    for (i, c) in cells.iter().enumerate() {
        if let Some(c) = c {
            order[fill[*c]] = i;
            fill[*c] += 1;
        }
    }

    let z_range = order.iter().map(|&i| points[i].z).fold(None, |acc: Option<(T, T)>, z| {
        Some(acc.map_or((z, z), |(lo, hi)| (lo.min(z), hi.max(z))))
    });
    let cap = T::lit(params.density_cap);
    let mut occupied = 0;
    let mut buf: Vec<[T; 3]> = Vec::new();
    for cell in 0..r * r {
        let members = &order[start[cell]..start[cell + 1]];
        if members.len() <= params.min_points || members.is_empty() {
            continue;
        }
        occupied += 1;
        let (ix, iy) = (cell % r, cell / r);
        buf.clear();
        buf.extend(members.iter().map(|&i| {
            let p = points[i];
            [p.x - origin[0], p.y - origin[1], p.z]
        }));
        let n = T::from_usize_lossy(members.len());
        let mean_z = buf.iter().map(|p| p[2]).sum::<T>() / n;
        let (z_lo, z_hi) = z_range.expect("non-empty cell implies a z range");
        let height = if z_hi > z_lo { (mean_z - z_lo) / (z_hi - z_lo) } else { T::zero() };
        let angle = principal_angle(&buf).angle;
        image.set(DENSITY, ix, iy, (n / cap).min(T::one()));
        image.set(HEIGHT, ix, iy, height);
        image.set(ANGLE, ix, iy, angle / T::FRAC_PI_2());
    }

    let sidecar = EncodingSidecar {
        resolution: r,
        window_size: window_size.to_f64_lossy(),
        pillar_side: side.to_f64_lossy(),
        min_points: params.min_points,
        density_cap: params.density_cap,
        window_origin: origin.map(|v| v.to_f64_lossy()),
        window_z_range: z_range.map(|(a, b)| [a.to_f64_lossy(), b.to_f64_lossy()]),
        occupied_pillars: occupied,
    };
    Ok(EncodedWindow { image, sidecar })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pillar_geometry_for_ten_metres_at_128() {
        let img = FeatureImage::<f64>::zeros(128, 10.0);
        assert_eq!(img.pillar_side(), 0.078125);
        assert!((img.pillar_area() - 0.006103515625).abs() < 1e-15);
        assert_eq!(img.window_size(), 10.0);
    }

    #[test]
    fn empty_window_is_all_zero() {
        let out = encode_points::<f64>(&[], [0.0, 0.0], 10.0, &EncoderParams::default()).unwrap();
        assert_eq!(out.image.values().len(), 3 * 128 * 128);
        assert!(out.image.values().iter().all(|&v| v == 0.0));
        assert_eq!(out.sidecar.occupied_pillars, 0);
    }

    #[test]
    fn vertical_segment_pillar() {
        // 150 points on a vertical segment inside cell (20, 30)
        let x = 20.5 * 0.078125;
        let y = 30.5 * 0.078125;
        let pts: Vec<Point3<f64>> = (0..150).map(|k| Point3::new(x, y, k as f64 * 0.02)).collect();
        let out = encode_points(&pts, [0.0, 0.0], 10.0, &EncoderParams::default()).unwrap();
        let img = &out.image;
        assert_eq!(img.get(ANGLE, 20, 30), 0.0);
        assert!((img.get(DENSITY, 20, 30) - 150.0 / 500.0).abs() < 1e-12);
        assert!((img.get(HEIGHT, 20, 30) - 0.5).abs() < 1e-12);
        let nonzero = img.values().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, 2);
    }

    #[test]
    fn min_points_is_strict() {
        let pts: Vec<Point3<f64>> = (0..100).map(|k| Point3::new(0.01, 0.01, k as f64 * 0.01)).collect();
        let out = encode_points(&pts, [0.0, 0.0], 10.0, &EncoderParams::default()).unwrap();
        assert!(out.image.values().iter().all(|&v| v == 0.0));
        let params = EncoderParams { min_points: 99, ..Default::default() };
        let out = encode_points(&pts, [0.0, 0.0], 10.0, &params).unwrap();
        assert!(out.image.get(DENSITY, 0, 0) > 0.0);
    }

    #[test]
    fn principal_angle_reference_cases() {
        let vertical: Vec<[f64; 3]> = (0..10).map(|k| [1.0, 2.0, k as f64]).collect();
        assert_eq!(principal_angle(&vertical).angle, 0.0);
        let plane: Vec<[f64; 3]> = (0..20).map(|k| [(k % 5) as f64 * 2.0, (k / 5) as f64, 3.0]).collect();
        let a = principal_angle(&plane);
        assert!((a.angle - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!(!a.degenerate);
        let same = vec![[1.0, 1.0, 1.0f64]; 4];
        let d = principal_angle(&same);
        assert!(d.degenerate);
        assert_eq!(d.angle, std::f64::consts::FRAC_PI_2);
        // 45 degree tilt
        let tilted: Vec<[f32; 3]> = (0..10).map(|k| [k as f32, 0.0, k as f32]).collect();
        assert!((principal_angle(&tilted).angle - std::f32::consts::FRAC_PI_4).abs() < 1e-6);
    }

    #[test]
    fn edge_points_fall_in_next_cell_and_last_cell_is_closed() {
        let side = 10.0 / 8.0;
        assert_eq!(cell_index(side, side, 8), Some(1));
        assert_eq!(cell_index(10.0, side, 8), Some(7));
        assert_eq!(cell_index(10.0 + 1e-9, side, 8), None);
        assert_eq!(cell_index(-1e-9, side, 8), None);
    }

    #[test]
    fn binary_layout_round_trip() {
        let mut img = FeatureImage::<f64>::zeros(8, 10.0);
        img.set(DENSITY, 1, 2, 0.5);
        img.set(ANGLE, 7, 7, 2.0);
        let bytes = img.to_bytes();
        assert_eq!(bytes.len(), 16 + 4 * 3 * 64);
        assert_eq!(&bytes[0..8], &[8, 0, 0, 0, 3, 0, 0, 0]);
        let offset = 16 + 4 * (2 * 8 + 1);
        assert_eq!(&bytes[offset..offset + 4], &0.5f32.to_le_bytes());
        let back = FeatureImage::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back, img);
        assert_eq!(back.get(ANGLE, 7, 7), 1.0);
        assert!(FeatureImage::<f64>::from_bytes(&bytes[..20]).is_err());
    }
}
