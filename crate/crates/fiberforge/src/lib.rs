//! Co-optimization of structural topology, curved print layers, and fiber
//! orientations for composites with strongly anisotropic strength.
//!
//! Three implicit neural scalar fields carry the whole design state: a
//! density field for material occupancy, a deposition field whose isosurfaces
//! are the print layers, and an auxiliary field whose gradient crossed with
//! the deposition gradient gives the fiber direction. Strength (Hoffman
//! failure index through an orthotropic voxel FEA), volume, and a family of
//! manufacturability measures (layer curvature, fiber-path curvature, setup
//! orientation, layer thickness) are differentiable losses over those fields;
//! a first-order optimizer trains all three networks at once, and a marching
//! cubes slicer extracts the trimmed curved layers from the result.
//!
//! See the `examples/` directory for runnable entry points to each stage and
//! the `fiberforge` binary for the batch pipeline.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod curvature;
pub mod fea;
pub mod field;
pub mod loss;
pub mod material;
pub mod mlp;
pub mod mc_tables;
pub mod optim;
pub mod pipeline;
pub mod problem;
pub mod simd;
pub mod slicer;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
