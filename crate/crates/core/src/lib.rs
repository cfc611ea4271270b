pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod field;
pub mod geometry;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod optimizer;
pub mod progressive;
pub mod renderer;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Vec3f = linalg::Vec3<f32>;
pub type Vec3d = linalg::Vec3<f64>;
pub type Pose32 = geometry::Pose<f32>;
pub type Pose64 = geometry::Pose<f64>;
pub type Intrinsics32 = geometry::Intrinsics<f32>;
pub type Intrinsics64 = geometry::Intrinsics<f64>;
pub type LocalField32 = field::LocalField<f32>;
pub type LocalField64 = field::LocalField<f64>;
pub type HexPlane32 = field::HexPlaneGrid<f32>;
pub type HexPlane64 = field::HexPlaneGrid<f64>;
