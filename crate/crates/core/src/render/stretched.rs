use nalgebra::Point3;

use crate::camera::CameraPose;
use crate::grid::{DepthMap, Grid, MaskMap};
use crate::mesh::{MeshError, SceneMesh};

use super::DEFAULT_NEAR_PLANE;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StretchParams {
    /// Sobel magnitude on min–max normalized disparity above which a pixel
    /// counts as a depth edge.
    pub sobel_threshold: f64,
    /// Candidate faces whose unit view/normal cosine is below this survive.
    pub normal_epsilon: f64,
    pub near_plane: f64,
}

impl Default for StretchParams {
    fn default() -> Self {
        Self {
            sobel_threshold: 0.3,
            normal_epsilon: -0.05,
            near_plane: DEFAULT_NEAR_PLANE,
        }
    }
}

/// Disparity rescaled to `[0, 1]` over the frame's valid pixels. Invalid
/// pixels stay `NaN`; a constant frame maps to zero.
pub fn normalized_disparity(depth: &DepthMap) -> Grid<f64> {
    let disp = depth.map(|&d| if d.is_finite() && d > 0.0 { 1.0 / d } else { f64::NAN });
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in disp.data().iter().filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = hi - lo;
    disp.map(|&v| {
        if !v.is_finite() {
            f64::NAN
        } else if span > 0.0 {
            (v - lo) / span
        } else {
            0.0
        }
    })
}

/// Pixels where the Sobel gradient magnitude of normalized disparity exceeds
/// `threshold`. Pixels with an invalid 3×3 neighbor (inside the image) never
/// qualify; the image border is edge-replicated.
pub fn depth_edges(depth: &DepthMap, threshold: f64) -> MaskMap {
    let nd = normalized_disparity(depth);
    let (w, h) = (nd.width(), nd.height());
    Grid::from_fn(w, h, |r, c| {
        let at = |dr: isize, dc: isize| *nd.clamped(r as isize + dr, c as isize + dc);
        let n = [
            [at(-1, -1), at(-1, 0), at(-1, 1)],
            [at(0, -1), at(0, 0), at(0, 1)],
            [at(1, -1), at(1, 0), at(1, 1)],
        ];
        if n.iter().flatten().any(|v| !v.is_finite()) {
            return false;
        }
        let gx = (n[0][2] + 2.0 * n[1][2] + n[2][2]) - (n[0][0] + 2.0 * n[1][0] + n[2][0]);
        let gy = (n[2][0] + 2.0 * n[2][1] + n[2][2]) - (n[0][0] + 2.0 * n[0][1] + n[0][2]);
        (gx * gx + gy * gy).sqrt() > threshold
    })
}

/// Faces to cull, judged from one camera: see [`detect_stretched_triangles_from`].
pub fn detect_stretched_triangles(mesh: &SceneMesh, depth: &DepthMap, camera: &CameraPose) -> Vec<u32> {
    detect_stretched_triangles_from(mesh, depth, camera, &camera.center(), &StretchParams::default())
}

/// Stretched faces along depth discontinuities.
///
/// `depth` is a rendered depth map seen from `depth_camera`. A face is a
/// candidate when any of its vertices projects onto a depth-edge pixel of it.
/// A candidate is kept only if `cos(center − eye, n) < ε` for its unit normal
/// `n`, i.e. it faces `eye` at better than a grazing angle; all other
/// candidates are returned, sorted by id.
pub fn detect_stretched_triangles_from(
    mesh: &SceneMesh,
    depth: &DepthMap,
    depth_camera: &CameraPose,
    eye: &Point3<f64>,
    params: &StretchParams,
) -> Vec<u32> {
    if mesh.is_empty() {
        return Vec::new();
    }
    let edges = depth_edges(depth, params.sobel_threshold);
    if edges.count() == 0 {
        return Vec::new();
    }
    let (w, h) = (edges.width() as f64, edges.height() as f64);
    let on_edge: Vec<bool> = mesh
        .vertices()
        .iter()
        .map(|v| match depth_camera.project(&v.point()) {
            Some((u, vv, z)) if z >= params.near_plane && u >= 0.0 && vv >= 0.0 && u < w && vv < h => {
                edges[(vv as usize, u as usize)]
            }
            _ => false,
        })
        .collect();

    let mut culled = Vec::new();
    for (fid, f) in mesh.faces().iter().enumerate() {
        if !f.iter().any(|&v| on_edge[v as usize]) {
            continue;
        }
        let [p0, p1, p2] = mesh.face_points(fid);
        let n = (p1 - p0).cross(&(p2 - p0));
        let centroid = Point3::from((p0.coords + p1.coords + p2.coords) / 3.0);
        let view = centroid - eye;
        let (nn, vn) = (n.norm(), view.norm());
        if nn == 0.0 || vn == 0.0 {
            continue;
        }
        let cosine = view.dot(&n) / (nn * vn);
        if cosine >= params.normal_epsilon {
            culled.push(fid as u32);
        }
    }
    culled
}

/// Removes the listed faces; all vertices are retained.
pub fn cull_faces(mesh: &mut SceneMesh, faces: &[u32]) -> Result<usize, MeshError> {
    mesh.remove_faces(faces)
}
