use crate::camera::CameraPose;
use crate::grid::{luminance, DepthMap, ImageBuffer};

use super::world::frame_seed;
use super::{check_request, ContentProvider, ProviderError, ProviderRequest};

/// Deterministic stand-in for a generative model: a procedural texture keyed
/// by `(seed, frame_index)`, with depth derived from the image.
#[derive(Clone, Debug)]
pub struct StubProvider {
    pub seed: u64,
}

impl StubProvider {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn texture(&self, width: usize, height: usize, frame_index: usize) -> ImageBuffer {
        let s = frame_seed(self.seed, frame_index);
        let phase = |k: u32| ((s >> (k * 8)) & 0xFF) as f64 / 255.0 * std::f64::consts::TAU;
        ImageBuffer::from_fn(width, height, |r, c| {
            let (x, y) = (c as f64 / width.max(1) as f64, r as f64 / height.max(1) as f64);
            let wave =
                |k: u32, fx: f64, fy: f64| 0.5 + 0.5 * (std::f64::consts::TAU * (fx * x + fy * y) + phase(k)).sin();
            [
                (0.2 + 0.6 * wave(0, 3.0, 1.0)) as f32,
                (0.2 + 0.6 * wave(1, 1.0, 4.0)) as f32,
                (0.2 + 0.6 * wave(2, 2.0, -2.0)) as f32,
            ]
        })
    }
}

impl ContentProvider for StubProvider {
    fn name(&self) -> &str {
        "stub"
    }

    fn health(&self) -> Result<(), ProviderError> {
        Ok(())
    }

    fn inpaint(&self, request: &ProviderRequest) -> Result<ImageBuffer, ProviderError> {
        check_request(request)?;
        Ok(self.texture(request.width(), request.height(), request.frame_index))
    }

    fn predict_depth(
        &self,
        image: &ImageBuffer,
        _frame_index: usize,
        _camera: &CameraPose,
    ) -> Result<DepthMap, ProviderError> {
        let h = image.height().max(1) as f64;
        Ok(DepthMap::from_fn(image.width(), image.height(), |r, c| {
            1.5 + luminance(&image[(r, c)]) as f64 + 0.5 * r as f64 / h
        }))
    }
}
