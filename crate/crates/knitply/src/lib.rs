//! Procedural knitted-fabric modeling and rendering.
//!
//! The pipeline tiles a knit pattern cell into full yarn curves, twists ply
//! centerlines around them, maps the flat textile onto a UV-mapped triangle
//! mesh, and renders it with a two-stage ray tracer (base-surface shell
//! prisms globally, ply cylinders locally) with an aggregated fiber BSDF.

pub mod fit;
pub mod intersect;
pub mod mapping;
pub mod math;
pub mod pattern;
pub mod plygen;
pub mod render;
pub mod rng;
pub mod shading;
