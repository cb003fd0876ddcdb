//! The unified scene mesh and every mutation applied to it.
//!
//! Vertices carry a world position and a baked color; faces are index
//! triples wound counter-clockwise as seen from the camera that created them,
//! so `(p1 - p0) × (p2 - p0)` points back toward that camera. Edges are not
//! stored; [`SceneMesh::edges`] derives them from the faces.

use std::collections::BTreeSet;

use nalgebra::Point3;
use thiserror::Error;

use crate::camera::CameraPose;
use crate::grid::{DepthMap, Grid, ImageBuffer, MaskMap};
use crate::render::{self, RenderOutput, NO_FACE};

pub type Face = [u32; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("invalid depth {value} at pixel (row {row}, col {col})")]
    InvalidDepth { row: usize, col: usize, value: f64 },
    #[error("raster size mismatch: {0}")]
    SizeMismatch(String),
    #[error("face {face} references vertex {index} but only {count} vertices exist")]
    IndexOutOfRange { face: usize, index: u32, count: usize },
    #[error("face {face} is degenerate ({indices:?})")]
    DegenerateFace { face: usize, indices: [u32; 3] },
    #[error("bridge {bridge} is invalid: {reason}")]
    InvalidBridge { bridge: usize, reason: String },
    #[error("face id {id} out of range ({count} faces)")]
    InvalidFaceId { id: u32, count: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vertex {
    pub position: [f64; 3],
    pub color: [f32; 3],
}

impl Vertex {
    pub fn point(&self) -> Point3<f64> {
        Point3::from(self.position)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SceneMesh {
    vertices: Vec<Vertex>,
    faces: Vec<Face>,
    generation: u64,
}

impl SceneMesh {
    pub fn new() -> Self {
        Self::default()
    }

    /// Assembles a mesh from raw parts, checking the structural invariants.
    pub fn from_parts(vertices: Vec<Vertex>, faces: Vec<Face>, generation: u64) -> Result<Self, MeshError> {
        validate_faces(&faces, vertices.len())?;
        Ok(Self {
            vertices,
            faces,
            generation,
        })
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        validate_faces(&self.faces, self.vertices.len())
    }

    /// Undirected edge set implied by the faces, each as `(low, high)`.
    pub fn edges(&self) -> BTreeSet<(u32, u32)> {
        let mut edges = BTreeSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges
    }

    pub fn face_points(&self, face: usize) -> [Point3<f64>; 3] {
        let f = self.faces[face];
        [
            self.vertices[f[0] as usize].point(),
            self.vertices[f[1] as usize].point(),
            self.vertices[f[2] as usize].point(),
        ]
    }

    /// Removes faces by id, keeping all vertices. Ids must be valid.
    pub(crate) fn remove_faces(&mut self, ids: &[u32]) -> Result<usize, MeshError> {
        let count = self.faces.len();
        let mut drop = vec![false; count];
        for &id in ids {
            if id as usize >= count {
                return Err(MeshError::InvalidFaceId { id, count });
            }
            drop[id as usize] = true;
        }
        let mut keep = drop.iter().map(|d| !d);
        self.faces.retain(|_| keep.next().unwrap());
        Ok(count - self.faces.len())
    }
}

fn validate_faces(faces: &[Face], count: usize) -> Result<(), MeshError> {
    for (i, f) in faces.iter().enumerate() {
        for &index in f {
            if index as usize >= count {
                return Err(MeshError::IndexOutOfRange { face: i, index, count });
            }
        }
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            return Err(MeshError::DegenerateFace { face: i, indices: *f });
        }
    }
    Ok(())
}

/// Newly unprojected content with patch-local indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MeshPatch {
    pub vertices: Vec<Vertex>,
    pub faces: Vec<Face>,
    /// Source pixel `(row, col)` of every vertex.
    pub pixels: Vec<(u32, u32)>,
}

impl MeshPatch {
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Patch-local vertex index per source pixel.
    pub fn pixel_lookup(&self, width: usize, height: usize) -> Grid<Option<u32>> {
        let mut lookup = Grid::new(width, height, None);
        for (i, &(r, c)) in self.pixels.iter().enumerate() {
            lookup[(r as usize, c as usize)] = Some(i as u32);
        }
        lookup
    }
}

/// A bridge-face corner: either a vertex already in the mesh or one in the
/// patch being merged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VertexRef {
    Existing(u32),
    Patch(u32),
}

pub type BridgeFace = [VertexRef; 3];

fn check_frame(image: &ImageBuffer, depth: &DepthMap) -> Result<(), MeshError> {
    if !image.same_shape(depth) {
        return Err(MeshError::SizeMismatch(format!(
            "image {}x{} vs depth {}x{}",
            image.width(),
            image.height(),
            depth.width(),
            depth.height()
        )));
    }
    Ok(())
}

fn checked_depth(depth: &DepthMap, row: usize, col: usize) -> Result<f64, MeshError> {
    let value = depth[(row, col)];
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(MeshError::InvalidDepth { row, col, value })
    }
}

/// Emits the two faces of every grid quad whose four corners all resolve.
///
/// Corners `a=(i,j) b=(i+1,j) c=(i,j+1) d=(i+1,j+1)` give faces `(a,b,c)` and
/// `(c,b,d)`, front-facing for the camera that produced the grid.
fn triangulate_grid<T: Copy>(corners: &Grid<Option<T>>, mut emit: impl FnMut([T; 3], [Option<T>; 4])) {
    let (w, h) = (corners.width(), corners.height());
    for i in 0..h.saturating_sub(1) {
        for j in 0..w.saturating_sub(1) {
            let a = corners[(i, j)];
            let b = corners[(i + 1, j)];
            let c = corners[(i, j + 1)];
            let d = corners[(i + 1, j + 1)];
            if let (Some(a), Some(b), Some(c), Some(d)) = (a, b, c, d) {
                let quad = [Some(a), Some(b), Some(c), Some(d)];
                emit([a, b, c], quad);
                emit([c, b, d], quad);
            }
        }
    }
}

/// Lifts a whole RGBD frame into a fresh mesh: one vertex per pixel, two
/// faces per 2×2 quad.
pub fn init_scene(image: &ImageBuffer, depth: &DepthMap, camera: &CameraPose) -> Result<SceneMesh, MeshError> {
    let full = MaskMap::new(image.width(), image.height(), true);
    let patch = unproject_frame(&full, image, depth, camera)?;
    Ok(SceneMesh {
        vertices: patch.vertices,
        faces: patch.faces,
        generation: 0,
    })
}

/// Unprojects the masked pixels through their centers and meshes every quad
/// whose four corners are masked.
pub fn unproject_frame(
    mask: &MaskMap,
    image: &ImageBuffer,
    depth: &DepthMap,
    camera: &CameraPose,
) -> Result<MeshPatch, MeshError> {
    check_frame(image, depth)?;
    if !mask.same_shape(image) {
        return Err(MeshError::SizeMismatch("mask vs image".into()));
    }
    let mut patch = MeshPatch::default();
    let mut lookup: Grid<Option<u32>> = Grid::new(mask.width(), mask.height(), None);
    for (row, col, &m) in mask.indexed() {
        if !m {
            continue;
        }
        let z = checked_depth(depth, row, col)?;
        let p = camera.unproject_pixel(row, col, z);
        lookup[(row, col)] = Some(patch.vertices.len() as u32);
        patch.vertices.push(Vertex {
            position: [p.x, p.y, p.z],
            color: image[(row, col)],
        });
        patch.pixels.push((row as u32, col as u32));
    }
    triangulate_grid(&lookup, |tri, _| patch.faces.push(tri));
    Ok(patch)
}

/// 8-connected one-pixel ring just outside `mask`.
pub fn boundary_ring(mask: &MaskMap) -> MaskMap {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    Grid::from_fn(mask.width(), mask.height(), |r, c| {
        if mask[(r, c)] {
            return false;
        }
        for dr in -1..=1isize {
            for dc in -1..=1isize {
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr >= 0 && rr < h && cc >= 0 && cc < w && mask[(rr as usize, cc as usize)] {
                    return true;
                }
            }
        }
        false
    })
}

/// Connects the existing mesh to a freshly unprojected patch.
///
/// Renders the mesh from `camera` to find which faces cover the ring around
/// the mask; see [`stitch_boundary_with`].
pub fn stitch_boundary(mesh: &SceneMesh, patch: &MeshPatch, mask: &MaskMap, camera: &CameraPose) -> Vec<BridgeFace> {
    if mask.count() == 0 || mesh.is_empty() {
        return Vec::new();
    }
    let render = render::project(mesh, camera, mask.width(), mask.height());
    stitch_boundary_with(mesh, patch, mask, camera, &render)
}

/// Bridge faces from an existing render of `mesh` at `camera`.
///
/// Every ring pixel covered by a mesh face is represented by that face's
/// vertex closest to the camera center; the ring then joins the pixel-grid
/// triangulation of the patch, and every quad mixing patch and mesh corners
/// yields bridge faces.
pub fn stitch_boundary_with(
    mesh: &SceneMesh,
    patch: &MeshPatch,
    mask: &MaskMap,
    camera: &CameraPose,
    render: &RenderOutput,
) -> Vec<BridgeFace> {
    let (w, h) = (mask.width(), mask.height());
    if mask.count() == 0 || mesh.is_empty() {
        return Vec::new();
    }
    let eye = camera.center();
    let mut corners: Grid<Option<VertexRef>> = Grid::new(w, h, None);
    for (i, &(r, c)) in patch.pixels.iter().enumerate() {
        corners[(r as usize, c as usize)] = Some(VertexRef::Patch(i as u32));
    }
    let ring = boundary_ring(mask);
    for (r, c, &on_ring) in ring.indexed() {
        if !on_ring {
            continue;
        }
        let face = render.face_ids[(r, c)];
        if face == NO_FACE {
            continue;
        }
        corners[(r, c)] = Some(VertexRef::Existing(closest_vertex(mesh, face, &eye)));
    }
    let mut bridges = Vec::new();
    triangulate_grid(&corners, |tri, quad| {
        let has_patch = quad.iter().any(|v| matches!(v, Some(VertexRef::Patch(_))));
        let has_existing = quad.iter().any(|v| matches!(v, Some(VertexRef::Existing(_))));
        if !(has_patch && has_existing) {
            return;
        }
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            return;
        }
        bridges.push(tri);
    });
    bridges
}

/// Index of the face vertex nearest to `eye`. Ties go to the earliest corner.
pub fn closest_vertex(mesh: &SceneMesh, face: u32, eye: &Point3<f64>) -> u32 {
    let f = mesh.faces()[face as usize];
    let mut best = f[0];
    let mut best_d = f64::INFINITY;
    for &v in &f {
        let d = (mesh.vertices()[v as usize].point() - eye).norm_squared();
        if d < best_d {
            best_d = d;
            best = v;
        }
    }
    best
}

/// `mesh ∪ patch ∪ bridges`. Pre-existing vertices and faces are untouched;
/// the mesh is left unmodified if anything fails validation.
pub fn merge(mesh: &mut SceneMesh, patch: &MeshPatch, bridges: &[BridgeFace]) -> Result<(), MeshError> {
    validate_faces(&patch.faces, patch.vertices.len())?;
    let offset = mesh.vertices.len() as u64;
    if offset + patch.vertices.len() as u64 > u32::MAX as u64 {
        return Err(MeshError::SizeMismatch("vertex count exceeds u32 range".into()));
    }
    let offset = offset as u32;
    let mut resolved = Vec::with_capacity(bridges.len());
    for (i, bridge) in bridges.iter().enumerate() {
        let mut face = [0u32; 3];
        for (k, v) in bridge.iter().enumerate() {
            face[k] = match *v {
                VertexRef::Existing(idx) if (idx as usize) < mesh.vertices.len() => idx,
                VertexRef::Patch(idx) if (idx as usize) < patch.vertices.len() => offset + idx,
                other => {
                    return Err(MeshError::InvalidBridge {
                        bridge: i,
                        reason: format!("{other:?} out of range"),
                    })
                }
            };
        }
        if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
            return Err(MeshError::InvalidBridge {
                bridge: i,
                reason: "repeated vertex".into(),
            });
        }
        resolved.push(face);
    }
    mesh.vertices.extend_from_slice(&patch.vertices);
    mesh.faces.extend(
        patch
            .faces
            .iter()
            .map(|f| [f[0] + offset, f[1] + offset, f[2] + offset]),
    );
    mesh.faces.extend(resolved);
    mesh.generation += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Intrinsics;

    fn flat_frame(w: usize, h: usize, z: f64) -> (ImageBuffer, DepthMap, CameraPose) {
        let image = ImageBuffer::from_fn(w, h, |r, c| [r as f32 / h as f32, c as f32 / w as f32, 0.5]);
        let depth = DepthMap::new(w, h, z);
        let cam = CameraPose::identity(Intrinsics::from_vertical_fov(w, h, 55.0));
        (image, depth, cam)
    }

    #[test]
    fn smallest_frame_meshes_to_two_faces() {
        let image = ImageBuffer::new(2, 2, [1.0, 0.0, 0.0]);
        let depth = DepthMap::new(2, 2, 1.0);
        let cam = CameraPose::identity(Intrinsics::new(1.0, 1.0, 0.5, 0.5));
        let mesh = init_scene(&image, &depth, &cam).unwrap();
        assert_eq!(mesh.vertex_count(), 4);
        assert_eq!(mesh.face_count(), 2);
        // pixel (0,0) sits on the principal point
        assert_eq!(mesh.vertices()[0].position, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn counts_follow_grid_identity() {
        for (w, h) in [(3, 5), (7, 2), (16, 9)] {
            let (image, depth, cam) = flat_frame(w, h, 2.0);
            let mesh = init_scene(&image, &depth, &cam).unwrap();
            assert_eq!(mesh.vertex_count(), w * h);
            assert_eq!(mesh.face_count(), 2 * (w - 1) * (h - 1));
            assert!(mesh.validate().is_ok());
        }
    }

    #[test]
    fn principal_axis_pixel_lands_on_axis() {
        let (image, mut depth, _) = flat_frame(5, 5, 1.0);
        depth[(2, 2)] = 3.5;
        let cam = CameraPose::identity(Intrinsics::new(4.0, 4.0, 2.5, 2.5));
        let mesh = init_scene(&image, &depth, &cam).unwrap();
        assert_eq!(mesh.vertices()[2 * 5 + 2].position, [0.0, 0.0, 3.5]);
    }

    #[test]
    fn faces_point_toward_creating_camera() {
        let (image, depth, cam) = flat_frame(6, 4, 2.0);
        let mesh = init_scene(&image, &depth, &cam).unwrap();
        let eye = cam.center();
        for f in 0..mesh.face_count() {
            let [p0, p1, p2] = mesh.face_points(f);
            let n = (p1 - p0).cross(&(p2 - p0));
            let centroid = p0 + ((p1 - p0) + (p2 - p0)) / 3.0;
            assert!((centroid - eye).dot(&n) < 0.0, "face {f} faces away");
        }
    }

    #[test]
    fn rejects_bad_depth() {
        let (image, mut depth, cam) = flat_frame(4, 4, 1.0);
        depth[(1, 3)] = 0.0;
        assert_eq!(
            init_scene(&image, &depth, &cam).unwrap_err(),
            MeshError::InvalidDepth {
                row: 1,
                col: 3,
                value: 0.0
            }
        );
        depth[(1, 3)] = f64::NAN;
        assert!(matches!(
            init_scene(&image, &depth, &cam),
            Err(MeshError::InvalidDepth { row: 1, col: 3, .. })
        ));
    }

    #[test]
    fn full_mask_matches_init_scene() {
        let (image, depth, cam) = flat_frame(5, 4, 1.5);
        let mesh = init_scene(&image, &depth, &cam).unwrap();
        let patch = unproject_frame(&MaskMap::new(5, 4, true), &image, &depth, &cam).unwrap();
        assert_eq!(patch.vertices, mesh.vertices());
        assert_eq!(patch.faces, mesh.faces());
    }

    #[test]
    fn block_mask_counts() {
        let (image, depth, cam) = flat_frame(8, 8, 1.0);
        let mask = MaskMap::from_fn(8, 8, |r, c| (2..5).contains(&r) && (3..6).contains(&c));
        let patch = unproject_frame(&mask, &image, &depth, &cam).unwrap();
        assert_eq!(patch.vertices.len(), 9);
        assert_eq!(patch.faces.len(), 8);
    }

    #[test]
    fn l_shaped_mask_matches_quad_enumeration() {
        let (image, depth, cam) = flat_frame(6, 6, 1.0);
        let cells = [(1, 1), (2, 1), (3, 1), (3, 2), (2, 2)];
        let mask = MaskMap::from_fn(6, 6, |r, c| cells.contains(&(r, c)));
        let patch = unproject_frame(&mask, &image, &depth, &cam).unwrap();
        // brute force: count quads with all four corners masked
        let mut quads = 0;
        for i in 0..5 {
            for j in 0..5 {
                if mask[(i, j)] && mask[(i + 1, j)] && mask[(i, j + 1)] && mask[(i + 1, j + 1)] {
                    quads += 1;
                }
            }
        }
        assert_eq!(patch.vertices.len(), 5);
        assert_eq!(patch.faces.len(), 2 * quads);
        assert_eq!(quads, 1);
    }

    #[test]
    fn empty_mask_gives_empty_patch_and_no_bridges() {
        let (image, depth, cam) = flat_frame(4, 4, 1.0);
        let mask = MaskMap::new(4, 4, false);
        let patch = unproject_frame(&mask, &image, &depth, &cam).unwrap();
        assert!(patch.is_empty());
        let mesh = init_scene(&image, &depth, &cam).unwrap();
        assert!(stitch_boundary(&mesh, &patch, &mask, &cam).is_empty());
    }

    #[test]
    fn first_frame_has_nothing_to_stitch() {
        let (image, depth, cam) = flat_frame(4, 4, 1.0);
        let mask = MaskMap::new(4, 4, true);
        let patch = unproject_frame(&mask, &image, &depth, &cam).unwrap();
        assert!(stitch_boundary(&SceneMesh::new(), &patch, &mask, &cam).is_empty());
    }

    #[test]
    fn closest_vertex_is_argmin_distance() {
        let v = |z: f64| Vertex {
            position: [0.0, 0.0, z],
            color: [0.0; 3],
        };
        let mesh = SceneMesh::from_parts(vec![v(2.0), v(3.0), v(1.0)], vec![[0, 1, 2]], 0).unwrap();
        let eye = Point3::origin();
        assert_eq!(closest_vertex(&mesh, 0, &eye), 2);
    }

    #[test]
    fn merge_appends_and_offsets() {
        let (image, depth, cam) = flat_frame(10, 10, 1.0);
        let mut mesh = init_scene(&image, &depth, &cam).unwrap();
        let before = mesh.clone();
        let mask = MaskMap::from_fn(10, 10, |r, c| r < 5 && c < 8);
        let patch = unproject_frame(&mask, &image, &depth, &cam).unwrap();
        assert_eq!(patch.vertices.len(), 40);
        merge(&mut mesh, &patch, &[]).unwrap();
        assert_eq!(mesh.vertex_count(), 140);
        assert_eq!(mesh.generation(), 1);
        assert_eq!(&mesh.vertices()[..100], before.vertices());
        assert_eq!(&mesh.faces()[..before.face_count()], before.faces());
        assert!(mesh.validate().is_ok());
    }

    #[test]
    fn merge_empty_patch_bumps_generation_only() {
        let (image, depth, cam) = flat_frame(3, 3, 1.0);
        let mut mesh = init_scene(&image, &depth, &cam).unwrap();
        let before = mesh.clone();
        merge(&mut mesh, &MeshPatch::default(), &[]).unwrap();
        assert_eq!(mesh.vertices(), before.vertices());
        assert_eq!(mesh.faces(), before.faces());
        assert_eq!(mesh.generation(), before.generation() + 1);
    }

    #[test]
    fn merge_rejects_bad_bridge_atomically() {
        let (image, depth, cam) = flat_frame(3, 3, 1.0);
        let mut mesh = init_scene(&image, &depth, &cam).unwrap();
        let before = mesh.clone();
        let patch = unproject_frame(&MaskMap::new(3, 3, true), &image, &depth, &cam).unwrap();
        let bad = [[VertexRef::Existing(0), VertexRef::Patch(1), VertexRef::Existing(99)]];
        assert!(matches!(
            merge(&mut mesh, &patch, &bad),
            Err(MeshError::InvalidBridge { bridge: 0, .. })
        ));
        assert_eq!(mesh, before);
    }

    #[test]
    fn edges_are_derived_from_faces() {
        let (image, depth, cam) = flat_frame(2, 2, 1.0);
        let mesh = init_scene(&image, &depth, &cam).unwrap();
        // two triangles sharing a diagonal: 4 border edges + 1 diagonal
        assert_eq!(mesh.edges().len(), 5);
    }

    #[test]
    fn ring_is_one_pixel_outside() {
        let mask = MaskMap::from_fn(5, 5, |r, c| r == 2 && c == 2);
        let ring = boundary_ring(&mask);
        assert_eq!(ring.count(), 8);
        assert!(!ring[(2, 2)]);
    }
}
