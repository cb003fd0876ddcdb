//! Long walkthrough synthesis over a progressively built triangle mesh.
//!
//! Each step projects the scene mesh into the next camera, asks a content
//! provider to fill in whatever the mesh does not cover, aligns the provider's
//! depth to the existing geometry, and merges the new content back into the
//! mesh. A procedural ground-truth world ships with the crate so the whole loop
//! can be exercised and measured without any learned model.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod artifacts;
pub mod camera;
pub mod config;
pub mod eval;
pub mod grid;
pub mod imageio;
pub mod mesh;
pub mod mesh_io;
pub mod pipeline;
pub mod provider;
pub mod render;
pub mod trajectory;

pub use camera::{CameraPose, Intrinsics};
pub use grid::{DepthMap, Grid, ImageBuffer, MaskMap};
pub use mesh::{MeshPatch, SceneMesh, Vertex};
pub use render::RenderOutput;
pub use trajectory::Trajectory;
