//! Sources of new content: inpainting and monocular depth behind one trait,
//! with a ground-truth oracle, a procedural stub, and an HTTP client.

mod mask;
mod oracle;
mod remote;
mod stub;
mod world;

pub use mask::{diffusion_fill, dilate, erode, open, preprocess_mask, PreparedMask};
pub use oracle::OracleProvider;
pub use remote::{DepthResponse, InpaintResponse, RemoteConfig, RemoteProvider, WireRequest, MIN_DISPARITY};
pub use stub::StubProvider;
pub use world::{frame_seed, Aabb, Hit, Perturbation, SyntheticWorld};

use thiserror::Error;

use crate::camera::CameraPose;
use crate::grid::{DepthMap, ImageBuffer, MaskMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RequestKind {
    Inpaint,
    Depth,
    Bootstrap,
}

/// One inpainting call. `mask` is true on known pixels; unknown pixels of
/// `image` are zero. `camera` is the pose being synthesized, which only
/// in-process providers can use.
#[derive(Clone, Debug)]
pub struct ProviderRequest {
    pub kind: RequestKind,
    pub prompt: String,
    pub image: ImageBuffer,
    pub mask: MaskMap,
    pub frame_index: usize,
    pub camera: CameraPose,
}

impl ProviderRequest {
    /// An unconditional first-frame request: black image, all-ones mask.
    pub fn bootstrap(prompt: &str, camera: CameraPose, width: usize, height: usize) -> Self {
        Self {
            kind: RequestKind::Bootstrap,
            prompt: prompt.to_string(),
            image: ImageBuffer::new(width, height, [0.0; 3]),
            mask: MaskMap::new(width, height, true),
            frame_index: 0,
            camera,
        }
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("server returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider unavailable: {0}")]
    Unavailable(String),
}

impl ProviderError {
    /// Transport failures, timeouts, malformed responses and 5xx are
    /// worth retrying; 4xx and bad requests are not.
    pub fn is_retriable(&self) -> bool {
        match self {
            Self::Transport(_) | Self::Timeout(_) | Self::Protocol(_) => true,
            Self::Http { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

pub trait ContentProvider {
    fn name(&self) -> &str;

    fn health(&self) -> Result<(), ProviderError>;

    /// Returns a full frame; known-region preservation is the caller's job.
    fn inpaint(&self, request: &ProviderRequest) -> Result<ImageBuffer, ProviderError>;

    /// Positive, finite metric depth for every pixel of `image`.
    fn predict_depth(
        &self,
        image: &ImageBuffer,
        frame_index: usize,
        camera: &CameraPose,
    ) -> Result<DepthMap, ProviderError>;
}

pub(crate) fn check_request(request: &ProviderRequest) -> Result<(), ProviderError> {
    if !request.image.same_shape(&request.mask) {
        return Err(ProviderError::InvalidRequest(format!(
            "image is {}x{} but mask is {}x{}",
            request.image.width(),
            request.image.height(),
            request.mask.width(),
            request.mask.height()
        )));
    }
    if request.kind == RequestKind::Bootstrap && request.mask.count() != request.mask.len() {
        return Err(ProviderError::InvalidRequest("bootstrap mask must be all ones".into()));
    }
    Ok(())
}
