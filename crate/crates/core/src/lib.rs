//! Disentangled graphics-code network for single-image volumetric
//! reconstruction.
//!
//! An encoder maps an image (or a stacked 5-frame video) to a graphics code
//! split into shape and transformation slots. A volume decoder reads only the
//! shape slots and predicts a voxel occupancy grid; an image decoder reads the
//! full code and reconstructs the input. Everything runs on a small
//! reverse-mode tensor library in [`tensor`].

pub mod datagen;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod mesh;
pub mod model;
pub mod nn;
pub mod stn;
pub mod tensor;
pub mod train;
pub mod voxel;

pub use error::{Error, Result};

pub use datagen::{Dataset, Family};
pub use eval::TTestResult;
pub use mesh::TriMesh;
pub use model::{ActivationTrace, GraphicsCode, Model, NetworkConfig};
pub use tensor::{Real, Tape, Tensor, Var};
pub use train::{TrainConfig, TrainMode};
pub use voxel::VoxelGrid;

