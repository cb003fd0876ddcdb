#![allow(dead_code)]

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scenewalk::config::RunConfig;
use scenewalk::mesh::{SceneMesh, Vertex};
use scenewalk::{CameraPose, DepthMap, Intrinsics, MaskMap};

/// Proptest settings with a fixed seed so runs are reproducible.
pub fn proptest_config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        rng_seed: proptest::test_runner::RngSeed::Fixed(0x5ce7e),
        failure_persistence: None,
        ..Default::default()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn camera(w: usize, h: usize) -> CameraPose {
    CameraPose::identity(Intrinsics::from_vertical_fov(w, h, 55.0))
}

/// Small oracle-provider configuration for pipeline tests.
pub fn small_config(extra: &str, overrides: &[&str]) -> RunConfig {
    let text = format!("[run]\nseed = 5\nwidth = 96\nheight = 96\nframes = 6\nsnapshot_every = 2\n{extra}");
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    RunConfig::from_toml_with(&text, &overrides).unwrap()
}

/// Random triangles inside the view frustum of `camera` at depths 1–10.
pub fn random_mesh(rng: &mut impl Rng, camera: &CameraPose, w: usize, h: usize, faces: usize) -> SceneMesh {
    let mut vertices = Vec::with_capacity(3 * faces);
    let mut tris = Vec::with_capacity(faces);
    for f in 0..faces {
        let z: f64 = rng.random_range(1.0..10.0);
        let u: f64 = rng.random_range(-0.1..1.1) * w as f64;
        let v: f64 = rng.random_range(-0.1..1.1) * h as f64;
        let center = camera.unproject(u, v, z);
        let size = z * rng.random_range(0.01..0.4);
        let color = [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()];
        for _ in 0..3 {
            let offset = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ) * size;
            vertices.push(Vertex {
                position: (center + offset).coords.into(),
                color,
            });
        }
        let b = 3 * f as u32;
        tris.push([b, b + 1, b + 2]);
    }
    SceneMesh::from_parts(vertices, tris, 0).unwrap()
}

/// Camera-space hit depth of the ray through `(u, v)` with a triangle given
/// in camera coordinates (Möller–Trumbore).
pub fn ray_triangle(dir: &Vector3<f64>, tri: &[Vector3<f64>; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-15 {
        return None;
    }
    let s = -tri[0];
    let a = s.dot(&p) / det;
    if !(0.0..=1.0).contains(&a) {
        return None;
    }
    let q = s.cross(&e1);
    let b = dir.dot(&q) / det;
    if b < 0.0 || a + b > 1.0 {
        return None;
    }
    let t = e2.dot(&q) / det;
    (t > 0.0).then_some(t * dir.z)
}

pub struct CastPixel {
    pub face: Option<u32>,
    pub depth: f64,
    /// Depth of the nearest hit on another face.
    pub runner_up: f64,
}

/// Per-pixel ray casting against every face; faces with a vertex nearer than
/// `near` are ignored.
pub fn ray_cast(mesh: &SceneMesh, camera: &CameraPose, w: usize, h: usize, near: f64) -> Vec<CastPixel> {
    let cam_tris: Vec<Option<[Vector3<f64>; 3]>> = mesh
        .faces()
        .iter()
        .map(|f| {
            let t = f.map(|i| camera.to_camera(&mesh.vertices()[i as usize].point()));
            t.iter().all(|q| q.z >= near).then_some(t)
        })
        .collect();
    let k = camera.intrinsics();
    let mut out = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let dir = Vector3::new((col as f64 + 0.5 - k.cx) / k.fx, (row as f64 + 0.5 - k.cy) / k.fy, 1.0);
            let mut best = (None, f64::INFINITY);
            let mut runner_up = f64::INFINITY;
            for (fid, tri) in cam_tris.iter().enumerate() {
                let Some(tri) = tri else { continue };
                if let Some(z) = ray_triangle(&dir, tri) {
                    if z < best.1 {
                        runner_up = best.1;
                        best = (Some(fid as u32), z);
                    } else if z < runner_up {
                        runner_up = z;
                    }
                }
            }
            out.push(CastPixel {
                face: best.0,
                depth: best.1,
                runner_up,
            });
        }
    }
    out
}

/// Connected components (4-neighborhood) of uncovered pixels that do not
/// touch the image border.
pub fn count_holes(mask: &MaskMap) -> usize {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut holes = 0;
    for start in 0..w * h {
        if seen[start] || mask.data()[start] {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut touches_border = false;
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            if r == 0 || c == 0 || r + 1 == h || c + 1 == w {
                touches_border = true;
            }
            let mut push = |rr: usize, cc: usize| {
                let j = rr * w + cc;
                if !seen[j] && !mask.data()[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if r > 0 {
                push(r - 1, c);
            }
            if r + 1 < h {
                push(r + 1, c);
            }
            if c > 0 {
                push(r, c - 1);
            }
            if c + 1 < w {
                push(r, c + 1);
            }
        }
        if !touches_border {
            holes += 1;
        }
    }
    holes
}

pub fn point(p: [f64; 3]) -> Point3<f64> {
    Point3::from(p)
}

/// Every file under `root`, keyed by relative path.
pub fn file_tree(root: &std::path::Path) -> std::collections::BTreeMap<std::path::PathBuf, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// The pairwise definition: mean over all valid pixel pairs of the squared
/// difference of log-depth differences.
pub fn brute_si_rmse(a: &DepthMap, b: &DepthMap, valid: &MaskMap) -> f64 {
    let idx: Vec<usize> = (0..valid.len()).filter(|&i| valid.data()[i]).collect();
    let n = idx.len() as f64;
    let mut sum = 0.0;
    for &p in &idx {
        for &q in &idx {
            let out = a.data()[p].ln() - a.data()[q].ln();
            let reference = b.data()[p].ln() - b.data()[q].ln();
            sum += (out - reference).powi(2);
        }
    }
    (sum / (n * n)).sqrt()
}
