//! Run configuration: a TOML file with `[run]`, `[trajectory]`, `[provider]`,
//! `[oracle]`, `[align]` and `[render]` tables, overridable key by key.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::AlignParams;
use crate::camera::Intrinsics;
use crate::provider::Perturbation;
use crate::render::StretchParams;
use crate::trajectory::PathParams;

/// Environment variable that overrides `provider.url`.
pub const PROVIDER_URL_ENV: &str = "SCENEWALK_PROVIDER_URL";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub prompt: String,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    /// Required; there is no clock-based fallback.
    pub seed: Option<u64>,
    pub output: PathBuf,
    pub snapshot_every: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            prompt: "a hallway with wooden boxes".into(),
            frames: 50,
            width: 512,
            height: 512,
            fov_deg: 55.0,
            seed: None,
            output: PathBuf::from("run"),
            snapshot_every: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySection {
    pub k: usize,
    pub n: usize,
    pub step: f64,
    pub pan_deg: f64,
    /// Pose file used instead of the generated path.
    pub file: Option<PathBuf>,
    pub filter_threshold: f64,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        Self {
            k: 5,
            n: 5,
            step: 0.1,
            pan_deg: 0.6,
            file: None,
            filter_threshold: 0.9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Oracle,
    Stub,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    pub kind: ProviderKind,
    pub url: String,
    pub timeout_s: f64,
    pub retries: u32,
    pub backoff_s: f64,
}

impl Default for ProviderSection {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Oracle,
            url: String::new(),
            timeout_s: 120.0,
            retries: 3,
            backoff_s: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub scale: f64,
    pub shift: f64,
    pub field_amplitude: f64,
    pub noise_sigma: f64,
    pub perturb_first_frame: bool,
    pub texture_seed: u64,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            scale: 1.0,
            shift: 0.0,
            field_amplitude: 0.0,
            noise_sigma: 0.0,
            perturb_first_frame: false,
            texture_seed: 7,
        }
    }
}

impl OracleSection {
    pub fn perturbation(&self) -> Perturbation {
        Perturbation {
            scale: self.scale,
            shift: self.shift,
            field_amplitude: self.field_amplitude,
            noise_sigma: self.noise_sigma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignSection {
    pub enabled: bool,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub lambda: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub grid_reweights: usize,
}

impl Default for AlignSection {
    fn default() -> Self {
        let p = AlignParams::default();
        Self {
            enabled: true,
            grid_rows: p.grid_rows,
            grid_cols: p.grid_cols,
            lambda: p.lambda,
            max_iterations: p.max_iterations,
            tolerance: p.tolerance,
            grid_reweights: p.grid_reweights,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSection {
    pub sobel_threshold: f64,
    pub normal_epsilon: f64,
    pub near_plane: f64,
    pub antialias: usize,
    pub blur_sigma: f64,
    pub pad_factor: f64,
    pub opening_kernel: usize,
    pub fill_iterations: usize,
    pub cull_stretched: bool,
    pub floating_fix: bool,
}

impl Default for RenderSection {
    fn default() -> Self {
        let s = StretchParams::default();
        Self {
            sobel_threshold: s.sobel_threshold,
            normal_epsilon: s.normal_epsilon,
            near_plane: s.near_plane,
            antialias: 2,
            blur_sigma: 1.0,
            pad_factor: 1.5,
            opening_kernel: 3,
            fill_iterations: 50,
            cull_stretched: true,
            floating_fix: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub trajectory: TrajectorySection,
    pub provider: ProviderSection,
    pub oracle: OracleSection,
    pub align: AlignSection,
    pub render: RenderSection,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("bad override {0:?}: expected key=value")]
    Override(String),
    #[error("invalid configuration:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<FieldError>),
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with(text, &[])
    }

    /// Parses `text`, applies `key=value` overrides (TOML values; bare words
    /// are taken as strings), and validates.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path, overrides: &[String]) -> Result<Self, ConfigError> {
        Self::from_toml_with(&std::fs::read_to_string(path)?, overrides)
    }

    /// The full effective configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn seed(&self) -> u64 {
        self.run.seed.expect("validated config has a seed")
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_vertical_fov(self.run.width, self.run.height, self.run.fov_deg)
    }

    pub fn path_params(&self) -> PathParams {
        PathParams {
            frames: self.run.frames,
            k: self.trajectory.k,
            n: self.trajectory.n,
            step: self.trajectory.step,
            pan_deg: self.trajectory.pan_deg,
            seed: self.run.seed.unwrap_or(0),
        }
    }

    pub fn align_params(&self) -> AlignParams {
        AlignParams {
            grid_rows: self.align.grid_rows,
            grid_cols: self.align.grid_cols,
            lambda: self.align.lambda,
            max_iterations: self.align.max_iterations,
            tolerance: self.align.tolerance,
            grid_reweights: self.align.grid_reweights,
        }
    }

    pub fn stretch_params(&self) -> StretchParams {
        StretchParams {
            sobel_threshold: self.render.sobel_threshold,
            normal_epsilon: self.render.normal_epsilon,
            near_plane: self.render.near_plane,
        }
    }

    /// Every field-level problem at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        let mut check = |ok: bool, field: &str, message: String| {
            if !ok {
                errors.push(FieldError {
                    field: field.to_string(),
                    message,
                });
            }
        };
        let (r, t, p, o, a, g) = (
            &self.run,
            &self.trajectory,
            &self.provider,
            &self.oracle,
            &self.align,
            &self.render,
        );
        check(r.seed.is_some(), "run.seed", "required".into());
        check(
            r.frames >= 1,
            "run.frames",
            format!("must be at least 1, got {}", r.frames),
        );
        check(
            r.width >= 2,
            "run.width",
            format!("must be at least 2, got {}", r.width),
        );
        check(
            r.height >= 2,
            "run.height",
            format!("must be at least 2, got {}", r.height),
        );
        check(
            r.fov_deg > 0.0 && r.fov_deg < 180.0,
            "run.fov_deg",
            format!("must be in (0, 180), got {}", r.fov_deg),
        );
        check(r.snapshot_every >= 1, "run.snapshot_every", "must be at least 1".into());
        check(t.n >= 1, "trajectory.n", "must be at least 1".into());
        check(
            t.step > 0.0 && t.step.is_finite(),
            "trajectory.step",
            format!("must be positive, got {}", t.step),
        );
        check(
            (0.0..=45.0).contains(&t.pan_deg),
            "trajectory.pan_deg",
            format!("must be in [0, 45], got {}", t.pan_deg),
        );
        check(
            (-1.0..=1.0).contains(&t.filter_threshold),
            "trajectory.filter_threshold",
            format!("must be in [-1, 1], got {}", t.filter_threshold),
        );
        if p.kind == ProviderKind::Remote {
            check(
                p.url.starts_with("http://") || p.url.starts_with("https://"),
                "provider.url",
                format!("remote provider needs an http(s) URL, got {:?}", p.url),
            );
        }
        check(
            p.timeout_s > 0.0 && p.timeout_s.is_finite(),
            "provider.timeout_s",
            format!("must be positive, got {}", p.timeout_s),
        );
        check(
            p.backoff_s >= 0.0 && p.backoff_s.is_finite(),
            "provider.backoff_s",
            format!("must be non-negative, got {}", p.backoff_s),
        );
        check(
            o.scale > 0.0 && o.scale.is_finite(),
            "oracle.scale",
            format!("must be positive, got {}", o.scale),
        );
        check(o.shift.is_finite(), "oracle.shift", "must be finite".into());
        check(
            o.field_amplitude >= 0.0 && o.field_amplitude.is_finite(),
            "oracle.field_amplitude",
            format!("must be non-negative, got {}", o.field_amplitude),
        );
        check(
            o.noise_sigma >= 0.0 && o.noise_sigma.is_finite(),
            "oracle.noise_sigma",
            format!("must be non-negative, got {}", o.noise_sigma),
        );
        check(
            a.grid_rows >= 2,
            "align.grid_rows",
            format!("must be at least 2, got {}", a.grid_rows),
        );
        check(
            a.grid_cols >= 2,
            "align.grid_cols",
            format!("must be at least 2, got {}", a.grid_cols),
        );
        check(
            a.lambda >= 0.0 && a.lambda.is_finite(),
            "align.lambda",
            format!("must be non-negative, got {}", a.lambda),
        );
        check(
            a.max_iterations >= 1,
            "align.max_iterations",
            "must be at least 1".into(),
        );
        check(
            a.tolerance > 0.0,
            "align.tolerance",
            format!("must be positive, got {}", a.tolerance),
        );
        check(
            g.sobel_threshold > 0.0 && g.sobel_threshold <= 6.0,
            "render.sobel_threshold",
            format!("must be in (0, 6], got {}", g.sobel_threshold),
        );
        check(
            (-1.0..=1.0).contains(&g.normal_epsilon),
            "render.normal_epsilon",
            format!("must be in [-1, 1], got {}", g.normal_epsilon),
        );
        check(
            g.near_plane > 0.0 && g.near_plane.is_finite(),
            "render.near_plane",
            format!("must be positive, got {}", g.near_plane),
        );
        check(
            (1..=8).contains(&g.antialias),
            "render.antialias",
            format!("must be in 1..=8, got {}", g.antialias),
        );
        check(
            g.blur_sigma >= 0.0 && g.blur_sigma <= 10.0,
            "render.blur_sigma",
            format!("must be in [0, 10], got {}", g.blur_sigma),
        );
        check(
            (1.0..=4.0).contains(&g.pad_factor),
            "render.pad_factor",
            format!("must be in [1, 4], got {}", g.pad_factor),
        );
        check(
            g.opening_kernel % 2 == 1,
            "render.opening_kernel",
            format!("must be odd, got {}", g.opening_kernel),
        );
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.len() != 2 || parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(spec.to_string()));
    }
    let section = table
        .entry(parts[0].to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match section {
        toml::Value::Table(t) => {
            t.insert(parts[1].to_string(), value);
            Ok(())
        }
        _ => Err(ConfigError::Override(spec.to_string())),
    }
}

/// One documented configuration key.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyDoc {
    pub key: String,
    pub default: String,
    pub description: &'static str,
    /// Set for defaults taken from the published method.
    pub published: bool,
}

const DESCRIPTIONS: &[(&str, &str, bool)] = &[
    ("run.prompt", "text prompt passed to the provider", false),
    ("run.frames", "number of frames to synthesize", true),
    ("run.width", "frame width in pixels", false),
    ("run.height", "frame height in pixels", false),
    ("run.fov_deg", "vertical field of view in degrees", false),
    ("run.seed", "seed for the trajectory and providers (required)", false),
    ("run.output", "run directory", false),
    (
        "run.snapshot_every",
        "write a mesh snapshot every this many frames",
        false,
    ),
    ("trajectory.k", "frames of pure backward motion before panning", true),
    ("trajectory.n", "frames between random pan-direction draws", true),
    ("trajectory.step", "camera step per frame in world units", false),
    ("trajectory.pan_deg", "yaw change per frame in degrees", false),
    (
        "trajectory.file",
        "pose file to use instead of the generated path",
        false,
    ),
    (
        "trajectory.filter_threshold",
        "backward-smoothness cosine threshold",
        true,
    ),
    ("provider.kind", "content provider: oracle, stub or remote", false),
    ("provider.url", "remote provider base URL", false),
    ("provider.timeout_s", "remote request timeout in seconds", false),
    ("provider.retries", "retries for retriable remote errors", false),
    (
        "provider.backoff_s",
        "first retry delay in seconds, doubled per retry",
        false,
    ),
    (
        "oracle.scale",
        "disparity scale of the oracle depth perturbation",
        false,
    ),
    (
        "oracle.shift",
        "disparity shift of the oracle depth perturbation",
        false,
    ),
    (
        "oracle.field_amplitude",
        "amplitude of the smooth disparity field",
        false,
    ),
    ("oracle.noise_sigma", "per-pixel disparity noise", false),
    (
        "oracle.perturb_first_frame",
        "perturb the first frame's depth too",
        false,
    ),
    ("oracle.texture_seed", "seed of the synthetic world's textures", false),
    ("align.enabled", "align provider depth to the scene", false),
    ("align.grid_rows", "residual grid rows", false),
    ("align.grid_cols", "residual grid columns", false),
    ("align.lambda", "residual grid smoothness weight", false),
    ("align.max_iterations", "IRLS iteration cap", false),
    ("align.tolerance", "IRLS parameter-change tolerance", false),
    (
        "align.grid_reweights",
        "robust reweighting passes of the residual grid (0 = plain least squares)",
        false,
    ),
    (
        "render.sobel_threshold",
        "depth-edge threshold on normalized disparity",
        true,
    ),
    ("render.normal_epsilon", "stretched-triangle cosine threshold", true),
    ("render.near_plane", "near clipping depth", false),
    ("render.antialias", "supersampling factor for output frames", true),
    ("render.blur_sigma", "Gaussian blur sigma in supersampled pixels", false),
    (
        "render.pad_factor",
        "depth padding factor for the floating-region fix",
        true,
    ),
    ("render.opening_kernel", "morphological opening kernel size", true),
    (
        "render.fill_iterations",
        "diffusion iterations for the opening ring",
        false,
    ),
    ("render.cull_stretched", "remove stretched triangles", false),
    ("render.floating_fix", "mask floating regions", false),
];

/// Every key with its default value, for help output.
pub fn documented_keys() -> Vec<KeyDoc> {
    let defaults: toml::Table = toml::to_string(&RunConfig::default())
        .expect("config serializes")
        .parse()
        .expect("round trip");
    DESCRIPTIONS
        .iter()
        .map(|&(key, description, published)| {
            let (section, name) = key.split_once('.').expect("dotted key");
            let default = defaults
                .get(section)
                .and_then(|s| s.get(name))
                .map(|v| v.to_string())
                .unwrap_or_else(|| "(unset)".into());
            KeyDoc {
                key: key.to_string(),
                default,
                description,
                published,
            }
        })
        .collect()
}

/// Help text listing every key.
pub fn keys_help() -> String {
    let keys = documented_keys();
    let width = keys.iter().map(|k| k.key.len()).max().unwrap_or(0);
    let mut out = String::from("Configuration keys (set in the config file or with --set key=value):\n");
    for k in keys {
        let tag = if k.published { " (published value)" } else { "" };
        out.push_str(&format!(
            "  {:width$}  {} [default: {}]{}\n",
            k.key, k.description, k.default, tag
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_required() {
        let err = RunConfig::from_toml("").unwrap_err();
        assert!(err.to_string().contains("run.seed: required"), "{err}");
        assert_eq!(RunConfig::from_toml("[run]\nseed = 1").unwrap().seed(), 1);
    }

    #[test]
    fn overrides_win_and_parse_types() {
        let c = RunConfig::from_toml_with(
            "[run]\nseed = 1\nframes = 10\n",
            &[
                "run.frames=3".into(),
                "run.prompt=hello world".into(),
                "render.cull_stretched=false".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.run.frames, 3);
        assert_eq!(c.run.prompt, "hello world");
        assert!(!c.render.cull_stretched);
    }

    #[test]
    fn field_level_errors() {
        let err = RunConfig::from_toml("[run]\nseed = 1\n[render]\nsobel_threshold = -1.0\nopening_kernel = 4\n")
            .unwrap_err();
        let ConfigError::Invalid(errors) = err else { panic!() };
        let fields: Vec<&str> = errors.iter().map(|e| e.field.as_str()).collect();
        assert_eq!(fields, ["render.sobel_threshold", "render.opening_kernel"]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            RunConfig::from_toml("[run]\nseed = 1\nframez = 2\n"),
            Err(ConfigError::Syntax(_))
        ));
    }

    #[test]
    fn resolved_roundtrip() {
        let c = RunConfig::from_toml("[run]\nseed = 5\n[provider]\nkind = \"stub\"\n").unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn every_serialized_key_is_documented() {
        let mut c = RunConfig::default();
        c.run.seed = Some(0);
        c.trajectory.file = Some("x".into());
        let table: toml::Table = c.to_toml().parse().unwrap();
        let mut keys: Vec<String> = table
            .iter()
            .flat_map(|(s, v)| v.as_table().unwrap().keys().map(move |k| format!("{s}.{k}")))
            .collect();
        keys.sort();
        let mut documented: Vec<String> = DESCRIPTIONS.iter().map(|d| d.0.to_string()).collect();
        documented.sort();
        assert_eq!(keys, documented);
    }
}
