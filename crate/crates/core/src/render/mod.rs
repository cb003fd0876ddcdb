//! Z-buffered software rasterization of the scene mesh, plus the three
//! rendering fixes layered on top of it: supersampled antialiasing,
//! stretched-triangle removal, and floating-region masking.

mod antialias;
mod floating;
mod stretched;

pub use antialias::{gaussian_kernel, render_antialiased, render_antialiased_with, AntialiasedRender};
pub use floating::{floating_region_mask, floating_region_mask_with};
pub use stretched::{
    cull_faces, depth_edges, detect_stretched_triangles, detect_stretched_triangles_from, normalized_disparity,
    StretchParams,
};

use crate::camera::CameraPose;
use crate::grid::{DepthMap, Grid, ImageBuffer, MaskMap};
use crate::mesh::SceneMesh;

/// Marks pixels no face covers in [`RenderOutput::face_ids`].
pub const NO_FACE: u32 = u32::MAX;

pub const DEFAULT_NEAR_PLANE: f64 = 1e-3;

/// Barycentric slack when testing pixel centers against triangle edges.
/// Pixel centers sit exactly on vertices when re-rendering a frame from its
/// own camera; the slack keeps them from slipping through rounding cracks.
const EDGE_SLACK: f64 = 1e-9;

/// `(I, D, M)` for one camera, plus the winning face per pixel.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    /// Zero where `mask` is false.
    pub image: ImageBuffer,
    /// `NaN` where `mask` is false.
    pub depth: DepthMap,
    /// True where some face covers the pixel center.
    pub mask: MaskMap,
    pub face_ids: Grid<u32>,
}

impl RenderOutput {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            image: ImageBuffer::new(width, height, [0.0; 3]),
            depth: DepthMap::new(width, height, f64::NAN),
            mask: MaskMap::new(width, height, false),
            face_ids: Grid::new(width, height, NO_FACE),
        }
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }
}

#[derive(Clone, Copy, Debug)]
struct ScreenVertex {
    u: f64,
    v: f64,
    z: f64,
}

/// Camera-space transform and perspective division of every vertex. Vertices
/// closer than the near plane come back as `None`.
fn screen_vertices(mesh: &SceneMesh, camera: &CameraPose, near: f64) -> Vec<Option<ScreenVertex>> {
    let intr = camera.intrinsics();
    mesh.vertices()
        .iter()
        .map(|v| {
            let q = camera.to_camera(&v.point());
            if q.z >= near && q.z.is_finite() {
                let (u, v) = intr.project(&q);
                Some(ScreenVertex { u, v, z: q.z })
            } else {
                None
            }
        })
        .collect()
}

#[inline]
fn edge(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

/// Normalized screen-space barycentrics of `(px, py)`, or `None` for
/// degenerate triangles.
#[inline]
fn barycentric(s: &[ScreenVertex; 3], px: f64, py: f64) -> Option<[f64; 3]> {
    let area = edge(s[0].u, s[0].v, s[1].u, s[1].v, s[2].u, s[2].v);
    if area.abs() < 1e-14 {
        return None;
    }
    let w0 = edge(s[1].u, s[1].v, s[2].u, s[2].v, px, py) / area;
    let w1 = edge(s[2].u, s[2].v, s[0].u, s[0].v, px, py) / area;
    let w2 = edge(s[0].u, s[0].v, s[1].u, s[1].v, px, py) / area;
    Some([w0, w1, w2])
}

/// Perspective-correct depth at a point with screen barycentrics `w`.
#[inline]
fn interpolate_depth(s: &[ScreenVertex; 3], w: &[f64; 3]) -> f64 {
    1.0 / (w[0] / s[0].z + w[1] / s[1].z + w[2] / s[2].z)
}

/// Projects `mesh` into `camera` at `width`×`height`.
pub fn project(mesh: &SceneMesh, camera: &CameraPose, width: usize, height: usize) -> RenderOutput {
    project_with(mesh, camera, width, height, DEFAULT_NEAR_PLANE)
}

/// [`project`] with an explicit near plane. Faces with any vertex in front of
/// the near plane are dropped whole.
///
/// Every pixel keeps the face with the smallest depth at its center; equal
/// depths go to the lowest face id. Depth and color are interpolated
/// perspective-correctly, so depth equals the exact ray–plane intersection.
pub fn project_with(mesh: &SceneMesh, camera: &CameraPose, width: usize, height: usize, near: f64) -> RenderOutput {
    let mut out = RenderOutput::empty(width, height);
    if mesh.is_empty() || width == 0 || height == 0 {
        return out;
    }
    let screen = screen_vertices(mesh, camera, near);
    let mut zbuf = vec![f64::INFINITY; width * height];
    let mut ids = vec![NO_FACE; width * height];
    let (wf, hf) = (width as f64, height as f64);

    for (fid, face) in mesh.faces().iter().enumerate() {
        let (Some(a), Some(b), Some(c)) = (
            screen[face[0] as usize],
            screen[face[1] as usize],
            screen[face[2] as usize],
        ) else {
            continue;
        };
        let min_u = a.u.min(b.u).min(c.u);
        let max_u = a.u.max(b.u).max(c.u);
        let min_v = a.v.min(b.v).min(c.v);
        let max_v = a.v.max(b.v).max(c.v);
        // pixel centers inside the bounding box, with a hair of slack
        let col0 = (min_u - 0.5 - 1e-7).ceil().max(0.0);
        let col1 = (max_u - 0.5 + 1e-7).floor().min(wf - 1.0);
        let row0 = (min_v - 0.5 - 1e-7).ceil().max(0.0);
        let row1 = (max_v - 0.5 + 1e-7).floor().min(hf - 1.0);
        if col0 > col1 || row0 > row1 || !(col1.is_finite() && row1.is_finite()) {
            continue;
        }
        let tri = [a, b, c];
        let area = edge(a.u, a.v, b.u, b.v, c.u, c.v);
        if area.abs() < 1e-14 {
            continue;
        }
        for row in row0 as usize..=row1 as usize {
            let py = row as f64 + 0.5;
            for col in col0 as usize..=col1 as usize {
                let px = col as f64 + 0.5;
                let w0 = edge(b.u, b.v, c.u, c.v, px, py) / area;
                let w1 = edge(c.u, c.v, a.u, a.v, px, py) / area;
                let w2 = edge(a.u, a.v, b.u, b.v, px, py) / area;
                if w0 < -EDGE_SLACK || w1 < -EDGE_SLACK || w2 < -EDGE_SLACK {
                    continue;
                }
                let z = interpolate_depth(&tri, &[w0, w1, w2]);
                if !(z > 0.0) {
                    continue;
                }
                let idx = row * width + col;
                if z < zbuf[idx] {
                    zbuf[idx] = z;
                    ids[idx] = fid as u32;
                }
            }
        }
    }

    for idx in 0..width * height {
        let fid = ids[idx];
        if fid == NO_FACE {
            continue;
        }
        let face = mesh.faces()[fid as usize];
        let tri = [
            screen[face[0] as usize].unwrap(),
            screen[face[1] as usize].unwrap(),
            screen[face[2] as usize].unwrap(),
        ];
        let (row, col) = (idx / width, idx % width);
        let w = barycentric(&tri, col as f64 + 0.5, row as f64 + 0.5).unwrap();
        let z = zbuf[idx];
        let mut rgb = [0.0f32; 3];
        for k in 0..3 {
            let color = mesh.vertices()[face[k] as usize].color;
            let weight = w[k] / tri[k].z * z;
            for ch in 0..3 {
                rgb[ch] += (weight * color[ch] as f64) as f32;
            }
        }
        out.image.data_mut()[idx] = rgb;
        out.depth.data_mut()[idx] = z;
        out.mask.data_mut()[idx] = true;
        out.face_ids.data_mut()[idx] = fid;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Intrinsics;
    use crate::mesh::{init_scene, Vertex};

    fn cam(w: usize, h: usize) -> CameraPose {
        CameraPose::identity(Intrinsics::from_vertical_fov(w, h, 55.0))
    }

    #[test]
    fn empty_mesh_covers_nothing() {
        let out = project(&SceneMesh::new(), &cam(8, 8), 8, 8);
        assert_eq!(out.mask.count(), 0);
        assert!(out.depth.data().iter().all(|d| d.is_nan()));
    }

    #[test]
    fn reprojects_generating_frame_exactly() {
        let (w, h) = (23, 17);
        let image = ImageBuffer::from_fn(w, h, |r, c| {
            [((r * 7 + c * 3) % 11) as f32 / 10.0, (c % 5) as f32 / 4.0, 0.25]
        });
        let depth = DepthMap::from_fn(w, h, |r, c| 1.0 + 0.1 * r as f64 + 0.05 * (c % 3) as f64);
        let camera = cam(w, h);
        let mesh = init_scene(&image, &depth, &camera).unwrap();
        let out = project(&mesh, &camera, w, h);
        assert_eq!(out.mask.count(), w * h);
        for idx in 0..w * h {
            assert!((out.depth.data()[idx] - depth.data()[idx]).abs() <= 1e-4);
            for ch in 0..3 {
                assert!((out.image.data()[idx][ch] - image.data()[idx][ch]).abs() <= 1e-4);
            }
        }
    }

    #[test]
    fn nearer_triangle_wins() {
        let v = |x: f64, y: f64, z: f64, c: [f32; 3]| Vertex {
            position: [x * z, y * z, z],
            color: c,
        };
        let red = [1.0, 0.0, 0.0];
        let blue = [0.0, 0.0, 1.0];
        // far triangle listed first so the z-test, not submission order, decides
        let verts = vec![
            v(-1.0, -1.0, 2.0, blue),
            v(1.0, -1.0, 2.0, blue),
            v(0.0, 1.0, 2.0, blue),
            v(-1.0, -1.0, 1.0, red),
            v(1.0, -1.0, 1.0, red),
            v(0.0, 1.0, 1.0, red),
        ];
        let mesh = SceneMesh::from_parts(verts, vec![[0, 1, 2], [3, 4, 5]], 0).unwrap();
        let camera = CameraPose::identity(Intrinsics::new(4.0, 4.0, 4.0, 4.0));
        let out = project(&mesh, &camera, 8, 8);
        // pixel (4,4) looks along (0.125, 0.125, 1): inside both triangles
        assert!(out.mask[(4, 4)]);
        assert_eq!(out.face_ids[(4, 4)], 1);
        assert!((out.depth[(4, 4)] - 1.0).abs() < 1e-12);
        assert_eq!(out.image[(4, 4)], red);
    }

    #[test]
    fn near_plane_drops_faces() {
        let v = |x: f64, y: f64, z: f64| Vertex {
            position: [x, y, z],
            color: [1.0; 3],
        };
        let mesh = SceneMesh::from_parts(
            vec![v(-1.0, -1.0, 1.0), v(1.0, -1.0, 1.0), v(0.0, 1.0, 1e-4)],
            vec![[0, 1, 2]],
            0,
        )
        .unwrap();
        let out = project(&mesh, &cam(8, 8), 8, 8);
        assert_eq!(out.mask.count(), 0);
    }
}
