//! On-disk layout of a run directory.
//!
//! ```text
//! frames/%05d.png          output frames, 8-bit RGB
//! depth/%05d.png           16-bit depth codes, 0 = no geometry
//! depth/%05d.txt           "scale offset": depth = code·scale + offset
//! masks/%05d.png           inpainting mask, 255 = synthesized
//! mesh/final.ply           final mesh
//! mesh/snapshots/%05d.ply  periodic mesh snapshots
//! state/%05d.state         lossless mesh snapshots for resuming and export
//! trajectory.txt           the poses used
//! diagnostics.jsonl        one JSON object per frame
//! config.resolved          the effective configuration
//! ```

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::grid::{DepthMap, ImageBuffer, MaskMap};
use crate::imageio::{
    decode_depth_png, encode_depth_png, read_mask_png, read_rgb_png, write_mask_png, write_rgb_png, ImageIoError,
};
use crate::mesh_io::{self, MeshFormat, MeshIoError, Snapshot};

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: ImageIoError },
    #[error("{path}: {source}")]
    Mesh { path: PathBuf, source: MeshIoError },
    #[error("{path}: malformed depth sidecar")]
    Sidecar { path: PathBuf },
    #[error("missing artifacts:\n{}", .0.iter().map(|p| format!("  {}", p.display())).collect::<Vec<_>>().join("\n"))]
    Missing(Vec<PathBuf>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunLayout {
    pub root: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn image_err(path: &Path) -> impl FnOnce(ImageIoError) -> ArtifactError + '_ {
    move |source| ArtifactError::Image {
        path: path.to_path_buf(),
        source,
    }
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn create_dirs(&self) -> Result<(), ArtifactError> {
        for dir in ["frames", "depth", "masks", "mesh/snapshots", "state"] {
            let p = self.root.join(dir);
            std::fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        Ok(())
    }

    pub fn frame(&self, i: usize) -> PathBuf {
        self.root.join(format!("frames/{i:05}.png"))
    }

    pub fn depth_png(&self, i: usize) -> PathBuf {
        self.root.join(format!("depth/{i:05}.png"))
    }

    pub fn depth_sidecar(&self, i: usize) -> PathBuf {
        self.root.join(format!("depth/{i:05}.txt"))
    }

    pub fn mask(&self, i: usize) -> PathBuf {
        self.root.join(format!("masks/{i:05}.png"))
    }

    pub fn final_mesh(&self) -> PathBuf {
        self.root.join("mesh/final.ply")
    }

    pub fn snapshot_mesh(&self, i: usize) -> PathBuf {
        self.root.join(format!("mesh/snapshots/{i:05}.ply"))
    }

    pub fn state(&self, i: usize) -> PathBuf {
        self.root.join(format!("state/{i:05}.state"))
    }

    pub fn trajectory(&self) -> PathBuf {
        self.root.join("trajectory.txt")
    }

    pub fn diagnostics(&self) -> PathBuf {
        self.root.join("diagnostics.jsonl")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.resolved")
    }

    pub fn write_text(&self, path: &Path, text: &str) -> Result<(), ArtifactError> {
        std::fs::write(path, text).map_err(io_err(path))
    }

    pub fn write_frame(&self, i: usize, image: &ImageBuffer) -> Result<(), ArtifactError> {
        let p = self.frame(i);
        write_rgb_png(&p, image).map_err(image_err(&p))
    }

    pub fn read_frame(&self, i: usize) -> Result<ImageBuffer, ArtifactError> {
        let p = self.frame(i);
        read_rgb_png(&p).map_err(image_err(&p))
    }

    pub fn write_mask(&self, i: usize, mask: &MaskMap) -> Result<(), ArtifactError> {
        let p = self.mask(i);
        write_mask_png(&p, mask).map_err(image_err(&p))
    }

    pub fn read_mask(&self, i: usize) -> Result<MaskMap, ArtifactError> {
        let p = self.mask(i);
        read_mask_png(&p).map_err(image_err(&p))
    }

    pub fn write_depth(&self, i: usize, depth: &DepthMap) -> Result<(), ArtifactError> {
        let p = self.depth_png(i);
        let (png, scale, offset) = encode_depth_png(depth).map_err(image_err(&p))?;
        std::fs::write(&p, png).map_err(io_err(&p))?;
        let s = self.depth_sidecar(i);
        std::fs::write(&s, format!("{scale} {offset}\n")).map_err(io_err(&s))
    }

    /// Decoded depth; pixels with code 0 are `NaN`.
    pub fn read_depth(&self, i: usize) -> Result<DepthMap, ArtifactError> {
        let s = self.depth_sidecar(i);
        let text = std::fs::read_to_string(&s).map_err(io_err(&s))?;
        let nums: Vec<f64> = text.split_whitespace().filter_map(|t| t.parse().ok()).collect();
        let [scale, offset] = nums[..] else {
            return Err(ArtifactError::Sidecar { path: s });
        };
        let p = self.depth_png(i);
        let bytes = std::fs::read(&p).map_err(io_err(&p))?;
        decode_depth_png(&bytes, scale, offset).map_err(image_err(&p))
    }

    pub fn write_mesh(&self, path: &Path, mesh: &crate::mesh::SceneMesh) -> Result<(), ArtifactError> {
        mesh_io::write_mesh(mesh, path, MeshFormat::Ply).map_err(|source| ArtifactError::Mesh {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn write_state(&self, snapshot: &Snapshot) -> Result<(), ArtifactError> {
        let p = self.state(snapshot.frame_index);
        let file = std::fs::File::create(&p).map_err(io_err(&p))?;
        mesh_io::write_snapshot(snapshot, file).map_err(|source| ArtifactError::Mesh { path: p, source })
    }

    pub fn read_state(&self, i: usize) -> Result<Snapshot, ArtifactError> {
        let p = self.state(i);
        let file = std::fs::File::open(&p).map_err(io_err(&p))?;
        mesh_io::read_snapshot(file).map_err(|source| ArtifactError::Mesh { path: p, source })
    }

    /// Frame indices with a saved state, ascending.
    pub fn saved_states(&self) -> Vec<usize> {
        let mut found: Vec<usize> = std::fs::read_dir(self.root.join("state"))
            .into_iter()
            .flatten()
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(".state")?.parse().ok()
            })
            .collect();
        found.sort_unstable();
        found
    }

    /// Count of consecutive frames `0..n` present under `frames/`.
    pub fn frame_count(&self) -> usize {
        (0..).take_while(|&i| self.frame(i).exists()).count()
    }

    /// Fails listing every per-frame file absent for frames `0..frames`,
    /// plus the trajectory and config.
    pub fn check_complete(&self, frames: usize) -> Result<(), ArtifactError> {
        let mut missing = Vec::new();
        for p in [self.trajectory(), self.config(), self.diagnostics()] {
            if !p.exists() {
                missing.push(p);
            }
        }
        for i in 0..frames {
            for p in [self.frame(i), self.depth_png(i), self.depth_sidecar(i), self.mask(i)] {
                if !p.exists() {
                    missing.push(p);
                }
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(ArtifactError::Missing(missing))
        }
    }
}
