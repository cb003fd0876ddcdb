//! Camera paths: the backward-and-pan generator, the backward-smoothness
//! filter, and a plain-text pose file format.
//!
//! A pose file has one pose per line as 12 whitespace-separated numbers, the
//! row-major `[R|t]` world-to-camera matrix. An optional first line
//! `intrinsics fx fy cx cy` sets the intrinsics; lines starting with `#` are
//! comments.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::camera::{yaw_rotation, CameraPose, Intrinsics, PoseError};

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    Pose { line: usize, source: PoseError },
    #[error("trajectory needs at least {needed} poses, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("no intrinsics header and no fallback intrinsics")]
    MissingIntrinsics,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PathParams {
    pub frames: usize,
    /// Frames of pure backward translation before panning starts.
    pub k: usize,
    /// Frames between pan-direction draws.
    pub n: usize,
    pub step: f64,
    /// Yaw increment per frame, degrees.
    pub pan_deg: f64,
    pub seed: u64,
}

impl Default for PathParams {
    fn default() -> Self {
        Self {
            frames: 50,
            k: 5,
            n: 5,
            step: 0.1,
            pan_deg: 0.6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<CameraPose>,
    /// Generator parameters, when the path was generated.
    pub params: Option<PathParams>,
}

impl Trajectory {
    pub fn new(poses: Vec<CameraPose>) -> Self {
        Self { poses, params: None }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn centers(&self) -> Vec<Point3<f64>> {
        self.poses.iter().map(|p| p.center()).collect()
    }

    /// Sum of distances between consecutive centers.
    pub fn path_length(&self) -> f64 {
        self.centers().windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    /// The same poses in reverse order.
    pub fn reversed(&self) -> Self {
        Self {
            poses: self.poses.iter().rev().copied().collect(),
            params: None,
        }
    }

    /// The same poses with every intrinsics replaced.
    pub fn with_intrinsics(&self, intrinsics: Intrinsics) -> Self {
        Self {
            poses: self.poses.iter().map(|p| p.with_intrinsics(intrinsics)).collect(),
            params: self.params,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(first) = self.poses.first() {
            let k = first.intrinsics();
            let _ = writeln!(out, "intrinsics {} {} {} {}", k.fx, k.fy, k.cx, k.cy);
        }
        if let Some(p) = &self.params {
            let _ = writeln!(
                out,
                "# frames={} k={} n={} step={} pan_deg={} seed={}",
                p.frames, p.k, p.n, p.step, p.pan_deg, p.seed
            );
        }
        for pose in &self.poses {
            let (r, t) = (pose.rotation(), pose.translation());
            let values: Vec<String> = (0..3)
                .flat_map(|i| (0..4).map(move |j| if j < 3 { r[(i, j)] } else { t[i] }))
                .map(|v| format!("{v}"))
                .collect();
            let _ = writeln!(out, "{}", values.join(" "));
        }
        out
    }

    /// Parses a pose file; `fallback` supplies intrinsics when the file has
    /// no header.
    pub fn parse(text: &str, fallback: Option<Intrinsics>) -> Result<Self, TrajectoryError> {
        let mut intrinsics = None;
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let parse_all = |fields: &[&str]| -> Result<Vec<f64>, TrajectoryError> {
                fields
                    .iter()
                    .map(|f| {
                        f.parse::<f64>().map_err(|_| TrajectoryError::Parse {
                            line,
                            message: format!("not a number: {f:?}"),
                        })
                    })
                    .collect()
            };
            let fields: Vec<&str> = s.split_whitespace().collect();
            if fields[0] == "intrinsics" {
                if intrinsics.is_some() || !rows.is_empty() {
                    return Err(TrajectoryError::Parse {
                        line,
                        message: "intrinsics header must come first".into(),
                    });
                }
                let v = parse_all(&fields[1..])?;
                if v.len() != 4 {
                    return Err(TrajectoryError::Parse {
                        line,
                        message: format!("intrinsics needs 4 numbers, got {}", v.len()),
                    });
                }
                intrinsics = Some(Intrinsics::new(v[0], v[1], v[2], v[3]));
                continue;
            }
            let v = parse_all(&fields)?;
            if v.len() != 12 {
                return Err(TrajectoryError::Parse {
                    line,
                    message: format!("expected 12 numbers, got {}", v.len()),
                });
            }
            rows.push((line, v));
        }
        let intrinsics = intrinsics.or(fallback).ok_or(TrajectoryError::MissingIntrinsics)?;
        let poses = rows
            .into_iter()
            .map(|(line, v)| {
                let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
                let t = Vector3::new(v[3], v[7], v[11]);
                CameraPose::new(r, t, intrinsics).map_err(|source| TrajectoryError::Pose { line, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(poses))
    }

    pub fn write(&self, path: &std::path::Path) -> Result<(), TrajectoryError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &std::path::Path, fallback: Option<Intrinsics>) -> Result<Self, TrajectoryError> {
        Self::parse(&std::fs::read_to_string(path)?, fallback)
    }
}

/// The backward-moving, panning camera path.
///
/// Frame 0 is the identity pose at the origin. Each later camera steps back
/// by `step` along the previous camera's view direction. The first `k` steps
/// keep the identity rotation; afterwards a pan direction of ±1 is drawn
/// every `n` frames and the yaw changes by `±pan_deg` per frame.
pub fn generate_path(params: &PathParams, intrinsics: Intrinsics) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let pan = params.pan_deg.to_radians();
    let mut poses = Vec::with_capacity(params.frames);
    let mut yaw = 0.0f64;
    let mut center = Point3::origin();
    let mut direction = 0.0;
    for i in 0..params.frames {
        if i > 0 {
            let view = Vector3::new(yaw.sin(), 0.0, yaw.cos());
            center -= view * params.step;
            if i > params.k {
                if (i - params.k - 1).is_multiple_of(params.n.max(1)) {
                    direction = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                }
                yaw += direction * pan;
            }
        }
        let pose =
            CameraPose::from_center(yaw_rotation(yaw), center, intrinsics).expect("yaw rotations are orthonormal");
        poses.push(pose);
    }
    Trajectory {
        poses,
        params: Some(*params),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmoothnessReport {
    pub passed: bool,
    pub threshold: f64,
    /// Cosine per consecutive pair; `None` where the centers coincide.
    pub cosines: Vec<Option<f64>>,
    /// Indices `t` of the failing pairs `(t, t+1)`.
    pub failures: Vec<usize>,
    pub diagnostics: Vec<String>,
}

/// Checks `(c_{t+1} − c_t)·v_t ≥ threshold·‖c_{t+1} − c_t‖·‖v_t‖` for every
/// consecutive pair, with `v_t` the view direction of pose `t`. Coincident
/// centers fail with a diagnostic.
pub fn backward_smoothness(traj: &Trajectory, threshold: f64) -> Result<SmoothnessReport, TrajectoryError> {
    if traj.len() < 2 {
        return Err(TrajectoryError::TooShort {
            needed: 2,
            got: traj.len(),
        });
    }
    let mut cosines = Vec::with_capacity(traj.len() - 1);
    let mut failures = Vec::new();
    let mut diagnostics = Vec::new();
    for (t, pair) in traj.poses.windows(2).enumerate() {
        let delta = pair[1].center() - pair[0].center();
        let v = pair[0].view_direction();
        let denom = delta.norm() * v.norm();
        if !(denom > 0.0) {
            cosines.push(None);
            failures.push(t);
            diagnostics.push(format!("poses {t} and {} share a center; cosine undefined", t + 1));
            continue;
        }
        let cosine = delta.dot(&v) / denom;
        cosines.push(Some(cosine));
        if !(cosine >= threshold) {
            failures.push(t);
        }
    }
    Ok(SmoothnessReport {
        passed: failures.is_empty(),
        threshold,
        cosines,
        failures,
        diagnostics,
    })
}

pub fn filter_backward_smooth(traj: &Trajectory, threshold: f64) -> Result<bool, TrajectoryError> {
    let report = backward_smoothness(traj, threshold)?;
    for d in &report.diagnostics {
        log::warn!("{d}");
    }
    Ok(report.passed)
}
