//! Semantic mapping and route planning for orchard point-cloud maps.

pub mod detector;
pub mod eigen;
pub mod encoder;
pub mod eval;
pub mod geometry;
pub mod graph;
pub mod pipeline;
pub mod scalar;
pub mod semantic;
pub mod subdivision;
pub mod synth;
pub mod terrain;

pub use scalar::Scalar;

/// Double-precision aliases for the common case.
pub type PointCloudMap = geometry::PointCloud<f64>;
pub type Point = geometry::Point3<f64>;
pub type Box2 = geometry::Box2D<f64>;
pub type Box3 = geometry::Box3D<f64>;
pub type Detection3D = geometry::Detection<f64>;
pub type FeatureImage = encoder::FeatureImage<f64>;
pub type SemanticMap = semantic::SemanticMap<f64>;
pub type TreeRow = semantic::TreeRow<f64>;
pub type VisibilityGraph = graph::VisibilityGraph<f64>;
