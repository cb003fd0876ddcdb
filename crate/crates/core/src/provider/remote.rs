use std::io::Read;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::camera::CameraPose;
use crate::grid::{DepthMap, Grid, ImageBuffer, MaskMap};
use crate::imageio::{decode_rgb_png, encode_mask_png, encode_rgb_png};

use super::{check_request, ContentProvider, ProviderError, ProviderRequest};

/// Disparity floor used when converting responses to depth.
pub const MIN_DISPARITY: f64 = 1e-6;

const MAX_BODY: u64 = 512 << 20;

/// Request body for both `/inpaint` and `/depth`. Field order is the wire
/// order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub prompt: String,
    pub frame_index: usize,
    pub width: usize,
    pub height: usize,
    pub image_png_b64: String,
    /// 255 on known pixels.
    pub mask_png_b64: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InpaintResponse {
    pub image_png_b64: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthResponse {
    pub disparity_raw_b64: String,
    pub dtype: String,
    pub width: usize,
    pub height: usize,
}

impl WireRequest {
    pub fn new(prompt: &str, frame_index: usize, image: &ImageBuffer, mask: &MaskMap) -> Result<Self, ProviderError> {
        let png = |r: Result<Vec<u8>, crate::imageio::ImageIoError>| {
            r.map(|b| B64.encode(b))
                .map_err(|e| ProviderError::InvalidRequest(e.to_string()))
        };
        Ok(Self {
            prompt: prompt.to_string(),
            frame_index,
            width: image.width(),
            height: image.height(),
            image_png_b64: png(encode_rgb_png(image))?,
            mask_png_b64: png(encode_mask_png(mask))?,
        })
    }
}

impl DepthResponse {
    /// Little-endian `f32` disparity, row-major.
    pub fn disparity(&self) -> Result<Grid<f32>, ProviderError> {
        if self.dtype != "f32le" {
            return Err(ProviderError::Protocol(format!("unsupported dtype {:?}", self.dtype)));
        }
        let raw = B64
            .decode(&self.disparity_raw_b64)
            .map_err(|e| ProviderError::Protocol(format!("disparity is not base64: {e}")))?;
        let n = self.width * self.height;
        if raw.len() != 4 * n {
            return Err(ProviderError::Protocol(format!(
                "expected {} disparity bytes for {}x{}, got {}",
                4 * n,
                self.width,
                self.height,
                raw.len()
            )));
        }
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(Grid::from_vec(self.width, self.height, values))
    }

    /// `d = 1 / max(disp, 1e-6)`; any non-finite disparity is an error.
    pub fn depth(&self) -> Result<DepthMap, ProviderError> {
        let disp = self.disparity()?;
        if let Some(i) = disp.data().iter().position(|v| !v.is_finite()) {
            return Err(ProviderError::Protocol(format!(
                "non-finite disparity at pixel ({}, {})",
                i / self.width,
                i % self.width
            )));
        }
        Ok(disp.map(|&v| 1.0 / (v as f64).max(MIN_DISPARITY)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RemoteConfig {
    /// Base URL without a trailing slash, e.g. `http://127.0.0.1:8080`.
    pub url: String,
    pub timeout: Duration,
    pub retries: u32,
    /// Delay before retry `i` is `backoff · 2^i`.
    pub backoff: Duration,
}

impl RemoteConfig {
    pub fn new(url: &str) -> Self {
        Self {
            url: url.trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(120),
            retries: 3,
            backoff: Duration::from_secs(1),
        }
    }
}

/// Client for the HTTP provider protocol.
pub struct RemoteProvider {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        Self { config, agent }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn with_retries<T>(
        &self,
        what: &str,
        mut call: impl FnMut() -> Result<T, ProviderError>,
    ) -> Result<T, ProviderError> {
        let mut attempt = 0;
        loop {
            match call() {
                Err(e) if e.is_retriable() && attempt < self.config.retries => {
                    let delay = self.config.backoff * 2u32.pow(attempt);
                    log::warn!("{what}: {e}; retrying in {delay:?}");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    /// POSTs `body` and decodes the reply; malformed replies are retried
    /// like transport failures.
    fn post<T>(
        &self,
        path: &str,
        body: &WireRequest,
        decode: impl Fn(&str) -> Result<T, ProviderError>,
    ) -> Result<T, ProviderError> {
        let url = format!("{}{}", self.config.url, path);
        let json = serde_json::to_string(body).map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
        self.with_retries(path, || {
            let response = self
                .agent
                .post(&url)
                .set("Content-Type", "application/json")
                .send_string(&json);
            decode(&read_response(response, self.config.timeout)?)
        })
    }
}

fn read_response(response: Result<ureq::Response, ureq::Error>, timeout: Duration) -> Result<String, ProviderError> {
    match response {
        Ok(resp) => {
            let mut body = String::new();
            resp.into_reader()
                .take(MAX_BODY)
                .read_to_string(&mut body)
                .map_err(|e| classify_io(e, timeout))?;
            Ok(body)
        }
        Err(ureq::Error::Status(status, resp)) => Err(ProviderError::Http {
            status,
            body: resp.into_string().unwrap_or_default(),
        }),
        Err(ureq::Error::Transport(t)) => {
            if is_timeout(&t) {
                Err(ProviderError::Timeout(timeout))
            } else {
                Err(ProviderError::Transport(t.to_string()))
            }
        }
    }
}

fn classify_io(e: std::io::Error, timeout: Duration) -> ProviderError {
    match e.kind() {
        std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock => ProviderError::Timeout(timeout),
        _ => ProviderError::Transport(e.to_string()),
    }
}

fn is_timeout(t: &ureq::Transport) -> bool {
    let mut source: Option<&(dyn std::error::Error + 'static)> = std::error::Error::source(t);
    while let Some(err) = source {
        if let Some(io) = err.downcast_ref::<std::io::Error>() {
            if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) {
                return true;
            }
        }
        source = err.source();
    }
    t.to_string().contains("timed out")
}

fn parse<T: for<'de> Deserialize<'de>>(body: &str) -> Result<T, ProviderError> {
    serde_json::from_str(body).map_err(|e| ProviderError::Protocol(format!("malformed response: {e}")))
}

impl ContentProvider for RemoteProvider {
    fn name(&self) -> &str {
        "remote"
    }

    fn health(&self) -> Result<(), ProviderError> {
        let url = format!("{}/healthz", self.config.url);
        match self.agent.get(&url).call() {
            Ok(_) => Ok(()),
            Err(ureq::Error::Status(status, resp)) => Err(ProviderError::Http {
                status,
                body: resp.into_string().unwrap_or_default(),
            }),
            Err(ureq::Error::Transport(t)) => Err(ProviderError::Unavailable(t.to_string())),
        }
    }

    fn inpaint(&self, request: &ProviderRequest) -> Result<ImageBuffer, ProviderError> {
        check_request(request)?;
        let body = WireRequest::new(&request.prompt, request.frame_index, &request.image, &request.mask)?;
        self.post("/inpaint", &body, |text| {
            let response: InpaintResponse = parse(text)?;
            let png = B64
                .decode(&response.image_png_b64)
                .map_err(|e| ProviderError::Protocol(format!("image is not base64: {e}")))?;
            let image = decode_rgb_png(&png).map_err(|e| ProviderError::Protocol(format!("bad image: {e}")))?;
            if !image.same_shape(&request.image) {
                return Err(ProviderError::Protocol(format!(
                    "expected a {}x{} image, got {}x{}",
                    request.width(),
                    request.height(),
                    image.width(),
                    image.height()
                )));
            }
            Ok(image)
        })
    }

    fn predict_depth(
        &self,
        image: &ImageBuffer,
        frame_index: usize,
        _camera: &CameraPose,
    ) -> Result<DepthMap, ProviderError> {
        let mask = MaskMap::new(image.width(), image.height(), true);
        let body = WireRequest::new("", frame_index, image, &mask)?;
        self.post("/depth", &body, |text| {
            let response: DepthResponse = parse(text)?;
            if response.width != image.width() || response.height != image.height() {
                return Err(ProviderError::Protocol(format!(
                    "expected {}x{} disparity, got {}x{}",
                    image.width(),
                    image.height(),
                    response.width,
                    response.height
                )));
            }
            response.depth()
        })
    }
}
