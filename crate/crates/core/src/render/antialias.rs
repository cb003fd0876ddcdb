use crate::camera::CameraPose;
use crate::grid::{Grid, ImageBuffer};
use crate::mesh::SceneMesh;

use super::{project_with, RenderOutput, DEFAULT_NEAR_PLANE};

pub struct AntialiasedRender {
    pub image: ImageBuffer,
    /// Fraction of blurred supersamples covered by geometry, in `[0, 1]`.
    /// `image` is meaningful only where this is positive.
    pub coverage: Grid<f32>,
    /// The raw supersampled render, kept for callers that need its depth.
    pub supersampled: RenderOutput,
}

/// Normalized 1-D Gaussian with radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(0.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable blur with edge replication, over `channels` interleaved planes.
fn blur(data: &[f64], width: usize, height: usize, channels: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; data.len()];
    for r in 0..height {
        for c in 0..width {
            for ch in 0..channels {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let cc = (c as isize + k as isize - radius).clamp(0, width as isize - 1) as usize;
                    acc += w * data[(r * width + cc) * channels + ch];
                }
                tmp[(r * width + c) * channels + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0; data.len()];
    for r in 0..height {
        for c in 0..width {
            for ch in 0..channels {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let rr = (r as isize + k as isize - radius).clamp(0, height as isize - 1) as usize;
                    acc += w * tmp[(rr * width + c) * channels + ch];
                }
                out[(r * width + c) * channels + ch] = acc;
            }
        }
    }
    out
}

/// Renders at twice the resolution, blurs with σ = 1, and box-downsamples.
pub fn render_antialiased(mesh: &SceneMesh, camera: &CameraPose, width: usize, height: usize) -> AntialiasedRender {
    render_antialiased_with(mesh, camera, width, height, 2, 1.0, DEFAULT_NEAR_PLANE)
}

/// Supersampled render at `factor`× followed by a Gaussian blur of `sigma`
/// supersample pixels and a `factor`×`factor` box downsample.
///
/// Color is carried premultiplied by coverage so uncovered supersamples do
/// not bleed black into the edges of covered regions.
pub fn render_antialiased_with(
    mesh: &SceneMesh,
    camera: &CameraPose,
    width: usize,
    height: usize,
    factor: usize,
    sigma: f64,
    near: f64,
) -> AntialiasedRender {
    let factor = factor.max(1);
    let (sw, sh) = (width * factor, height * factor);
    let hi = project_with(mesh, &camera.supersampled(factor as f64), sw, sh, near);

    let mut premult = vec![0.0; sw * sh * 4];
    for (i, (rgb, &m)) in hi.image.data().iter().zip(hi.mask.data()).enumerate() {
        if m {
            premult[i * 4] = rgb[0] as f64;
            premult[i * 4 + 1] = rgb[1] as f64;
            premult[i * 4 + 2] = rgb[2] as f64;
            premult[i * 4 + 3] = 1.0;
        }
    }
    let blurred = if sigma > 0.0 {
        blur(&premult, sw, sh, 4, &gaussian_kernel(sigma))
    } else {
        premult
    };

    let norm = 1.0 / (factor * factor) as f64;
    let mut image = ImageBuffer::new(width, height, [0.0; 3]);
    let mut coverage = Grid::new(width, height, 0.0f32);
    for r in 0..height {
        for c in 0..width {
            let mut acc = [0.0f64; 4];
            for dr in 0..factor {
                for dc in 0..factor {
                    let i = ((r * factor + dr) * sw + c * factor + dc) * 4;
                    for ch in 0..4 {
                        acc[ch] += blurred[i + ch];
                    }
                }
            }
            let cov = acc[3] * norm;
            if cov > 1e-9 {
                image[(r, c)] = [
                    (acc[0] / acc[3]) as f32,
                    (acc[1] / acc[3]) as f32,
                    (acc[2] / acc[3]) as f32,
                ];
            }
            coverage[(r, c)] = cov.min(1.0) as f32;
        }
    }
    AntialiasedRender {
        image,
        coverage,
        supersampled: hi,
    }
}
