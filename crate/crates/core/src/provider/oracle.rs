use crate::camera::CameraPose;
use crate::grid::{DepthMap, ImageBuffer};

use super::world::{Perturbation, SyntheticWorld};
use super::{check_request, ContentProvider, ProviderError, ProviderRequest};

/// Ground truth as a provider: inpainting returns the exact world render at
/// the request camera, depth prediction returns the perturbed true depth.
#[derive(Clone, Debug)]
pub struct OracleProvider {
    pub world: SyntheticWorld,
    pub perturbation: Perturbation,
    pub seed: u64,
    /// Whether frame 0 depth is perturbed too. Off, the first frame fixes an
    /// exact metric scale for the run.
    pub perturb_first_frame: bool,
}

impl OracleProvider {
    pub fn new(world: SyntheticWorld, perturbation: Perturbation, seed: u64) -> Self {
        Self {
            world,
            perturbation,
            seed,
            perturb_first_frame: false,
        }
    }

    pub fn exact(world: SyntheticWorld) -> Self {
        Self::new(world, Perturbation::NONE, 0)
    }

    fn check_camera(&self, camera: &CameraPose) -> Result<(), ProviderError> {
        if self.world.is_free(&camera.center()) {
            Ok(())
        } else {
            Err(ProviderError::Unavailable(format!(
                "camera center {:?} is outside the free space of the synthetic world",
                camera.center().coords.as_slice()
            )))
        }
    }

    pub fn truth(&self, camera: &CameraPose, width: usize, height: usize) -> (ImageBuffer, DepthMap) {
        self.world.render(camera, width, height)
    }
}

impl ContentProvider for OracleProvider {
    fn name(&self) -> &str {
        "oracle"
    }

    fn health(&self) -> Result<(), ProviderError> {
        Ok(())
    }

    fn inpaint(&self, request: &ProviderRequest) -> Result<ImageBuffer, ProviderError> {
        check_request(request)?;
        self.check_camera(&request.camera)?;
        Ok(self.world.render(&request.camera, request.width(), request.height()).0)
    }

    fn predict_depth(
        &self,
        image: &ImageBuffer,
        frame_index: usize,
        camera: &CameraPose,
    ) -> Result<DepthMap, ProviderError> {
        self.check_camera(camera)?;
        let (_, depth) = self.world.render(camera, image.width(), image.height());
        if depth.data().iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(ProviderError::Unavailable(
                "camera sees outside the synthetic world".into(),
            ));
        }
        if frame_index == 0 && !self.perturb_first_frame {
            return Ok(depth);
        }
        Ok(self.perturbation.apply(&depth, self.seed, frame_index))
    }
}
