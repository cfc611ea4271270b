//! The HexPlane representation and its decoders.

pub mod checkpoint;
pub mod grid;
pub mod local;
pub mod mlp;

pub use checkpoint::{load_field, read_field, save_field, write_field};
pub use grid::{FeatureCache, HexPlaneGrid, Plane, PLANE_AXES, PLANE_NAMES, PLANE_PAIRS};
pub use local::{FieldConfig, FieldGrad, FieldScratch, FrameSpan, LocalField, PointCache};
pub use mlp::{Mlp, MlpScratch};
