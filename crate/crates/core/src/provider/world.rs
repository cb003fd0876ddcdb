use nalgebra::{Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::camera::CameraPose;
use crate::grid::{DepthMap, Grid, ImageBuffer};

/// Axis-aligned box, `min < max` on every axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub const fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|k| p[k] > self.min[k] && p[k] < self.max[k])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    /// Ray parameter; equals camera-space depth for rays with unit z.
    pub t: f64,
    pub point: Point3<f64>,
    /// Index into the world's surfaces: 0 is the room, `1 + i` is box `i`.
    pub surface: usize,
    /// Axis of the face that was hit.
    pub axis: usize,
}

/// Procedural ground-truth scene: a textured corridor with boxes along the
/// walls. Color is a pure function of the 3-D surface point, so renders from
/// any two cameras agree wherever they see the same surface.
#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    pub room: Aabb,
    pub boxes: Vec<Aabb>,
    pub texture_seed: u64,
}

const PALETTE: [[f32; 3]; 8] = [
    [0.85, 0.78, 0.66],
    [0.75, 0.35, 0.30],
    [0.30, 0.55, 0.75],
    [0.40, 0.70, 0.40],
    [0.80, 0.70, 0.30],
    [0.60, 0.40, 0.70],
    [0.35, 0.65, 0.65],
    [0.70, 0.50, 0.35],
];

impl Default for SyntheticWorld {
    fn default() -> Self {
        Self::corridor(7)
    }
}

impl SyntheticWorld {
    /// The default corridor: x ∈ [−1.5, 1.5], y ∈ [−1.2, 1.2] (y points down,
    /// the floor is at +1.2), z ∈ [−30, 6], with boxes between z = −8 and 5.
    pub fn corridor(texture_seed: u64) -> Self {
        Self {
            room: Aabb::new([-1.5, -1.2, -30.0], [1.5, 1.2, 6.0]),
            boxes: vec![
                Aabb::new([1.0, 0.4, 2.0], [1.5, 1.2, 3.2]),
                Aabb::new([-1.5, 0.2, 0.5], [-0.9, 1.2, 1.5]),
                Aabb::new([-1.5, -1.2, 3.0], [-1.1, -0.3, 4.5]),
                Aabb::new([0.6, -1.2, 3.5], [0.9, 1.2, 3.8]),
                Aabb::new([-0.3, 0.9, 4.0], [0.3, 1.2, 4.6]),
                Aabb::new([1.1, -0.6, -2.5], [1.5, 0.6, -1.5]),
                Aabb::new([-1.5, 0.5, -6.0], [-1.0, 1.2, -4.8]),
                Aabb::new([1.0, 0.6, -8.0], [1.5, 1.2, -6.5]),
            ],
            texture_seed,
        }
    }

    /// Nearest surface along `origin + t·dir`, `t > 0`. The origin must lie
    /// inside the room and outside every box.
    pub fn cast(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        // leaving the room through the nearest wall
        let mut best: Option<(f64, usize, usize)> = None;
        for k in 0..3 {
            if dir[k] == 0.0 {
                continue;
            }
            let bound = if dir[k] > 0.0 {
                self.room.max[k]
            } else {
                self.room.min[k]
            };
            let t = (bound - origin[k]) / dir[k];
            if t > 0.0 && best.is_none_or(|(bt, _, _)| t < bt) {
                best = Some((t, 0, k));
            }
        }
        for (i, b) in self.boxes.iter().enumerate() {
            let (mut t0, mut t1, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0);
            let mut miss = false;
            for k in 0..3 {
                if dir[k] == 0.0 {
                    if origin[k] <= b.min[k] || origin[k] >= b.max[k] {
                        miss = true;
                        break;
                    }
                    continue;
                }
                let (mut a, mut z) = ((b.min[k] - origin[k]) / dir[k], (b.max[k] - origin[k]) / dir[k]);
                if a > z {
                    std::mem::swap(&mut a, &mut z);
                }
                if a > t0 {
                    t0 = a;
                    axis = k;
                }
                t1 = t1.min(z);
            }
            if miss || t0 > t1 || t0 <= 0.0 {
                continue;
            }
            if best.is_none_or(|(bt, _, _)| t0 < bt) {
                best = Some((t0, i + 1, axis));
            }
        }
        best.map(|(t, surface, axis)| Hit {
            t,
            point: origin + dir * t,
            surface,
            axis,
        })
    }

    /// Albedo at a surface point of `surface` on a face normal to `axis`.
    pub fn color(&self, point: &Point3<f64>, surface: usize, axis: usize) -> [f32; 3] {
        let (s, t) = match axis {
            0 => (point.z, point.y),
            1 => (point.x, point.z),
            _ => (point.x, point.y),
        };
        let seed = self.texture_seed.wrapping_add(surface as u64 * 0x9E37_79B9);
        let check = soft_checker(s, t, 0.5);
        let noise = 0.5 * value_noise(s / 0.6, t / 0.6, seed)
            + 0.3 * value_noise(s / 0.2, t / 0.2, seed ^ 0x51)
            + 0.2 * value_noise(s / 0.07, t / 0.07, seed ^ 0xA7);
        let shade = (0.35 + 0.25 * check + 0.5 * noise) as f32;
        let base = PALETTE[(surface + axis * 3) % PALETTE.len()];
        [
            (base[0] * shade).clamp(0.0, 1.0),
            (base[1] * shade).clamp(0.0, 1.0),
            (base[2] * shade).clamp(0.0, 1.0),
        ]
    }

    /// Exact color and depth at every pixel center of `camera`.
    pub fn render(&self, camera: &CameraPose, width: usize, height: usize) -> (ImageBuffer, DepthMap) {
        let origin = camera.center();
        let r_t = camera.rotation().transpose();
        let intr = camera.intrinsics();
        let mut image = ImageBuffer::new(width, height, [0.0; 3]);
        let mut depth = DepthMap::new(width, height, f64::NAN);
        for row in 0..height {
            for col in 0..width {
                let d_cam = Vector3::new(
                    (col as f64 + 0.5 - intr.cx) / intr.fx,
                    (row as f64 + 0.5 - intr.cy) / intr.fy,
                    1.0,
                );
                if let Some(hit) = self.cast(&origin, &(r_t * d_cam)) {
                    image[(row, col)] = self.color(&hit.point, hit.surface, hit.axis);
                    depth[(row, col)] = hit.t;
                }
            }
        }
        (image, depth)
    }

    /// True when `p` is strictly inside the room and outside every box.
    pub fn is_free(&self, p: &Point3<f64>) -> bool {
        self.room.contains(p) && !self.boxes.iter().any(|b| b.contains(p))
    }
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn soft_checker(s: f64, t: f64, size: f64) -> f64 {
    let v = (std::f64::consts::PI * s / size).sin() * (std::f64::consts::PI * t / size).sin();
    smoothstep(-0.25, 0.25, v)
}

fn hash(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn lattice(i: i64, j: i64, seed: u64) -> f64 {
    let h = hash(seed ^ hash((i as u64).wrapping_mul(0x1F1F_1F1F) ^ hash(j as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smoothly interpolated lattice noise in `[0, 1]`.
fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (xf, yf) = (x.floor(), y.floor());
    let (i, j) = (xf as i64, yf as i64);
    let (fx, fy) = (smoothstep(0.0, 1.0, x - xf), smoothstep(0.0, 1.0, y - yf));
    let a = lattice(i, j, seed);
    let b = lattice(i + 1, j, seed);
    let c = lattice(i, j + 1, seed);
    let d = lattice(i + 1, j + 1, seed);
    let top = a + (b - a) * fx;
    let bottom = c + (d - c) * fx;
    top + (bottom - top) * fy
}

/// Mixes a run seed and a frame index into a stream seed.
pub fn frame_seed(seed: u64, frame_index: usize) -> u64 {
    hash(seed ^ hash(frame_index as u64 ^ 0xD1B5_4A32_D192_ED03))
}

/// Emulates an inconsistent monocular predictor in disparity space:
/// `disp' = a·disp + b + A·field(u, v) + σ·n`, with a low-frequency field and
/// Gaussian noise drawn per frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub scale: f64,
    pub shift: f64,
    pub field_amplitude: f64,
    pub noise_sigma: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self::NONE
    }
}

impl Perturbation {
    pub const NONE: Self = Self {
        scale: 1.0,
        shift: 0.0,
        field_amplitude: 0.0,
        noise_sigma: 0.0,
    };

    pub fn is_identity(&self) -> bool {
        *self == Self::NONE
    }

    /// The smooth disparity offset for one frame.
    pub fn field(&self, width: usize, height: usize, seed: u64, frame_index: usize) -> Grid<f64> {
        let s = frame_seed(seed, frame_index);
        let phase = |k: u64| (hash(s ^ k) >> 11) as f64 / (1u64 << 53) as f64;
        let (p0, p1, f0, f1) = (phase(1), phase(2), 0.5 + phase(3), 0.5 + phase(4));
        let tau = std::f64::consts::TAU;
        Grid::from_fn(width, height, |r, c| {
            let x = (c as f64 + 0.5) / width as f64;
            let y = (r as f64 + 0.5) / height as f64;
            self.field_amplitude * (tau * (f0 * x + p0)).sin() * (tau * (f1 * y + p1)).cos()
        })
    }

    pub fn apply(&self, depth: &DepthMap, seed: u64, frame_index: usize) -> DepthMap {
        if self.is_identity() {
            return depth.clone();
        }
        let field = self.field(depth.width(), depth.height(), seed, frame_index);
        let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(seed, frame_index) ^ 0x6E6F_6973_65);
        Grid::from_fn(depth.width(), depth.height(), |r, c| {
            let n: f64 = StandardNormal.sample(&mut rng);
            let d = depth[(r, c)];
            if !(d.is_finite() && d > 0.0) {
                return d;
            }
            let disp = self.scale / d + self.shift + field[(r, c)] + self.noise_sigma * n;
            1.0 / disp.max(1e-6)
        })
    }
}
