//! Consistency and pose metrics for a finished run, against the synthetic
//! world or an external reconstruction.

use nalgebra::{Matrix3, Point3, Vector3};
use serde::Serialize;
use thiserror::Error;

use crate::artifacts::{ArtifactError, RunLayout};
use crate::camera::CameraPose;
use crate::config::{ConfigError, RunConfig};
use crate::grid::{luminance, DepthMap, ImageBuffer, MaskMap};
use crate::provider::SyntheticWorld;
use crate::trajectory::{Trajectory, TrajectoryError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("depth maps differ in shape")]
    ShapeMismatch,
    #[error("no valid pixels")]
    EmptyMask,
    #[error("non-positive depth {value} at ({row}, {col})")]
    NonPositiveDepth { row: usize, col: usize, value: f64 },
    #[error("trajectories have {est} and {reference} poses")]
    LengthMismatch { est: usize, reference: usize },
    #[error("need at least {needed} poses, got {got}")]
    TooFewPoses { needed: usize, got: usize },
    #[error("estimated camera centers coincide")]
    DegenerateTrajectory,
    #[error("reference path has zero length")]
    ZeroLengthPath,
    #[error("only {0} trackable points (need 10)")]
    TooFewPoints(usize),
    #[error("reconstruction line {line}: {message}")]
    Reconstruction { line: usize, message: String },
    #[error("frame {frame}: {source}")]
    Frame { frame: usize, source: Box<EvalError> },
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Scale-invariant RMSE of log depth over `valid`: the root of the mean
/// squared pairwise difference, computed as √(2·Var(log a − log b)).
pub fn si_rmse(d_out: &DepthMap, d_ref: &DepthMap, valid: &MaskMap) -> Result<f64, EvalError> {
    if !d_out.same_shape(d_ref) || !d_out.same_shape(valid) {
        return Err(EvalError::ShapeMismatch);
    }
    let mut diffs = Vec::new();
    for (row, col, &v) in valid.indexed() {
        if !v {
            continue;
        }
        for d in [d_out[(row, col)], d_ref[(row, col)]] {
            if !(d > 0.0) {
                return Err(EvalError::NonPositiveDepth { row, col, value: d });
            }
        }
        diffs.push(d_out[(row, col)].ln() - d_ref[(row, col)].ln());
    }
    si_rmse_of_log_ratios(&diffs)
}

/// The same metric on precomputed `log a − log b` samples.
pub fn si_rmse_of_log_ratios(diffs: &[f64]) -> Result<f64, EvalError> {
    if diffs.is_empty() {
        return Err(EvalError::EmptyMask);
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    Ok((2.0 * var).sqrt())
}

/// `x ↦ scale·R·x + t`, mapping estimated positions into the reference frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.scale * (self.rotation * p.coords) + self.translation)
    }

    /// A pose moved along with the world: same image, transformed center and
    /// orientation.
    pub fn apply_pose(&self, pose: &CameraPose) -> CameraPose {
        let cam_to_world = self.rotation * pose.rotation().transpose();
        CameraPose::from_center(cam_to_world, self.apply(&pose.center()), *pose.intrinsics())
            .expect("product of rotations is a rotation")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryAlignment {
    pub transform: Similarity,
    /// Root mean squared center distance after alignment.
    pub residual_rms: f64,
    /// Centers were collinear; rotation about the line was fixed from the
    /// camera orientations instead.
    pub collinear: bool,
}

const COLLINEAR_RATIO: f64 = 1e-9;

/// Least-squares similarity taking estimated camera centers onto reference
/// centers.
pub fn align_trajectories(est: &Trajectory, reference: &Trajectory) -> Result<TrajectoryAlignment, EvalError> {
    if est.len() != reference.len() {
        return Err(EvalError::LengthMismatch {
            est: est.len(),
            reference: reference.len(),
        });
    }
    if est.len() < 3 {
        return Err(EvalError::TooFewPoses {
            needed: 3,
            got: est.len(),
        });
    }
    let x = est.centers();
    let y = reference.centers();
    let n = x.len() as f64;
    let mx = x.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let my = y.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let var_x = x.iter().map(|p| (p.coords - mx).norm_squared()).sum::<f64>() / n;
    if var_x <= f64::EPSILON * (1.0 + mx.norm_squared()) {
        return Err(EvalError::DegenerateTrajectory);
    }
    let mut cov = Matrix3::zeros();
    for (p, q) in x.iter().zip(&y) {
        cov += (q.coords - my) * (p.coords - mx).transpose();
    }
    cov /= n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut sv = svd.singular_values;
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let (s1, s2) = (sv[order[0]], sv[order[1]]);
    let collinear = s2 <= COLLINEAR_RATIO * s1;

    let (rotation, scale) = if collinear {
        let rotation = collinear_rotation(est, reference, &x, &y, &mx, &my);
        // scale from the projections onto the common line
        let num: f64 = x
            .iter()
            .zip(&y)
            .map(|(p, q)| (q.coords - my).dot(&(rotation * (p.coords - mx))))
            .sum::<f64>()
            / n;
        (rotation, num / var_x)
    } else {
        let mut s = Matrix3::identity();
        if (u.determinant() * v_t.determinant()) < 0.0 {
            s[(order[2], order[2])] = -1.0;
        }
        let rotation = u * s * v_t;
        for i in 0..3 {
            sv[i] *= s[(i, i)];
        }
        (rotation, sv.sum() / var_x)
    };
    let translation = my - scale * rotation * mx;
    let transform = Similarity {
        scale,
        rotation,
        translation,
    };
    let residual_rms = (x
        .iter()
        .zip(&y)
        .map(|(p, q)| (transform.apply(p) - q).norm_squared())
        .sum::<f64>()
        / n)
        .sqrt();
    if collinear {
        log::warn!("camera centers are collinear; rotation about the path axis taken from camera orientations");
    }
    Ok(TrajectoryAlignment {
        transform,
        residual_rms,
        collinear,
    })
}

/// Minimal rotation taking the estimated line onto the reference line,
/// followed by the rotation about the reference line that best matches the
/// camera orientations.
fn collinear_rotation(
    est: &Trajectory,
    reference: &Trajectory,
    x: &[Point3<f64>],
    y: &[Point3<f64>],
    mx: &Vector3<f64>,
    my: &Vector3<f64>,
) -> Matrix3<f64> {
    let principal = |pts: &[Point3<f64>], m: &Vector3<f64>| {
        let far = pts
            .iter()
            .map(|p| p.coords - m)
            .max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))
            .unwrap_or_else(Vector3::zeros);
        let mut dir = Vector3::zeros();
        for p in pts {
            let d = p.coords - m;
            dir += d * d.dot(&far).signum() * d.norm();
        }
        dir.try_normalize(1e-300).unwrap_or_else(Vector3::z)
    };
    let a = principal(x, mx);
    let mut b = principal(y, my);
    // orient b so the sign of the progression agrees
    let agree: f64 = x
        .iter()
        .zip(y)
        .map(|(p, q)| (p.coords - mx).dot(&a) * (q.coords - my).dot(&b))
        .sum();
    if agree < 0.0 {
        b = -b;
    }
    let r0 = rotation_between(&a, &b);
    let mut k = Matrix3::zeros();
    for (pe, pr) in est.poses.iter().zip(&reference.poses) {
        let est_c2w = r0 * pe.rotation().transpose();
        k += est_c2w * pr.rotation();
    }
    let aka = b.dot(&(k * b));
    let skew = b.cross_matrix();
    let sin_term = (skew * k).trace();
    let cos_term = k.trace() - aka;
    let phi = sin_term.atan2(cos_term);
    axis_angle(&b, phi) * r0
}

fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let outer = axis * axis.transpose();
    outer + angle.cos() * (Matrix3::identity() - outer) + angle.sin() * axis.cross_matrix()
}

fn rotation_between(a: &Vector3<f64>, b: &Vector3<f64>) -> Matrix3<f64> {
    let axis = a.cross(b);
    let sin = axis.norm();
    let cos = a.dot(b);
    if sin < 1e-15 {
        if cos > 0.0 {
            return Matrix3::identity();
        }
        let helper = if a.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let perp = a.cross(&helper).normalize();
        return axis_angle(&perp, std::f64::consts::PI);
    }
    axis_angle(&(axis / sin), sin.atan2(cos))
}

/// Geodesic angle between two rotations, in radians.
pub fn rotation_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let m = a.transpose() * b;
    let vee = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    vee.norm().atan2(m.trace() - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseErrors {
    /// Mean geodesic angle between aligned and reference orientations.
    pub rotation_deg: f64,
    /// Mean center distance as a percentage of the reference path length.
    pub translation_pct: f64,
    pub alignment: TrajectoryAlignment,
}

/// Aligns `est` onto `reference`, then compares pose by pose.
pub fn pose_errors(est: &Trajectory, reference: &Trajectory) -> Result<PoseErrors, EvalError> {
    let length = reference.path_length();
    if !(length > 0.0) {
        return Err(EvalError::ZeroLengthPath);
    }
    let alignment = align_trajectories(est, reference)?;
    let t = &alignment.transform;
    let n = est.len() as f64;
    let mut rot = 0.0;
    let mut trans = 0.0;
    for (pe, pr) in est.poses.iter().zip(&reference.poses) {
        let est_c2w = t.rotation * pe.rotation().transpose();
        rot += rotation_angle(&est_c2w, &pr.rotation().transpose());
        trans += (t.apply(&pe.center()) - pr.center()).norm();
    }
    Ok(PoseErrors {
        rotation_deg: (rot / n).to_degrees(),
        translation_pct: 100.0 * trans / n / length,
        alignment,
    })
}

/// Mean percentage of `true` pixels.
pub fn density(masks: &[MaskMap]) -> f64 {
    if masks.is_empty() {
        return 0.0;
    }
    100.0 * masks.iter().map(|m| m.fraction()).sum::<f64>() / masks.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackParams {
    /// Pixel spacing of the surface-point sampling grid.
    pub point_stride: usize,
    /// Points are sampled from every this-many frames.
    pub source_every: usize,
    /// Template half size; the patch is (2h+1)².
    pub half_patch: usize,
    /// Search radius in pixels around the predicted location.
    pub search_radius: usize,
    /// Tracks with a lower best correlation are dropped.
    pub min_ncc: f64,
    /// Templates with lower luminance standard deviation are skipped.
    pub min_texture: f64,
    /// Relative depth tolerance of the visibility test.
    pub occlusion_tolerance: f64,
}

impl Default for TrackParams {
    fn default() -> Self {
        Self {
            point_stride: 24,
            source_every: 10,
            half_patch: 3,
            search_radius: 5,
            min_ncc: 0.5,
            min_texture: 0.02,
            occlusion_tolerance: 1e-3,
        }
    }
}

/// Surface points seen on a regular pixel grid from every
/// `params.source_every`-th camera.
pub fn sample_surface_points(
    world: &SyntheticWorld,
    cameras: &[CameraPose],
    width: usize,
    height: usize,
    params: &TrackParams,
) -> Vec<Point3<f64>> {
    let stride = params.point_stride.max(1);
    let mut points = Vec::new();
    for camera in cameras.iter().step_by(params.source_every.max(1)) {
        let (_, depth) = world.render(camera, width, height);
        for row in (stride / 2..height).step_by(stride) {
            for col in (stride / 2..width).step_by(stride) {
                let z = depth[(row, col)];
                if z.is_finite() && z > 0.0 {
                    points.push(camera.unproject_pixel(row, col, z));
                }
            }
        }
    }
    points
}

fn gray(image: &ImageBuffer) -> crate::grid::Grid<f64> {
    image.map(|p| luminance(p) as f64)
}

fn patch(img: &crate::grid::Grid<f64>, row: isize, col: isize, h: isize) -> Option<Vec<f64>> {
    let (w, hh) = (img.width() as isize, img.height() as isize);
    if row - h < 0 || col - h < 0 || row + h >= hh || col + h >= w {
        return None;
    }
    let mut out = Vec::with_capacity(((2 * h + 1) * (2 * h + 1)) as usize);
    for r in row - h..=row + h {
        for c in col - h..=col + h {
            out.push(img[(r as usize, c as usize)]);
        }
    }
    Some(out)
}

fn normalized(mut v: Vec<f64>) -> (Vec<f64>, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let mut ss = 0.0;
    for x in &mut v {
        *x -= mean;
        ss += *x * *x;
    }
    let std = (ss / n).sqrt();
    let norm = ss.sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    (v, std)
}

fn subpixel(minus: f64, center: f64, plus: f64) -> f64 {
    let denom = minus - 2.0 * center + plus;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (minus - plus) / denom).clamp(-0.5, 0.5)
}

/// Tracks every visible point from the truth render into `output` and
/// returns the pixel distances between predicted and tracked positions.
pub fn track_frame(
    output: &ImageBuffer,
    truth: &ImageBuffer,
    truth_depth: &DepthMap,
    camera: &CameraPose,
    points: &[Point3<f64>],
    params: &TrackParams,
) -> Vec<f64> {
    let out_gray = gray(output);
    let truth_gray = gray(truth);
    let h = params.half_patch as isize;
    let radius = params.search_radius as isize;
    let (w, hh) = (output.width() as f64, output.height() as f64);
    let mut distances = Vec::new();
    for p in points {
        let Some((u, v, z)) = camera.project(p) else {
            continue;
        };
        if !(u >= 0.0 && v >= 0.0 && u < w && v < hh) {
            continue;
        }
        let (row, col) = (v.floor() as isize, u.floor() as isize);
        let seen = truth_depth[(row as usize, col as usize)];
        if !((seen - z).abs() <= params.occlusion_tolerance * z) {
            continue;
        }
        let Some(template) = patch(&truth_gray, row, col, h) else {
            continue;
        };
        let (template, std) = normalized(template);
        if std < params.min_texture {
            continue;
        }
        let side = (2 * radius + 1) as usize;
        let mut scores = vec![f64::NAN; side * side];
        let mut best: Option<(isize, isize, f64)> = None;
        for dr in -radius..=radius {
            for dc in -radius..=radius {
                let Some(candidate) = patch(&out_gray, row + dr, col + dc, h) else {
                    continue;
                };
                let (candidate, _) = normalized(candidate);
                let score: f64 = template.iter().zip(&candidate).map(|(a, b)| a * b).sum();
                scores[((dr + radius) as usize) * side + (dc + radius) as usize] = score;
                if best.is_none_or(|(_, _, s)| score > s) {
                    best = Some((dr, dc, score));
                }
            }
        }
        let Some((dr, dc, score)) = best else {
            continue;
        };
        if score < params.min_ncc {
            continue;
        }
        let at = |r: isize, c: isize| -> Option<f64> {
            if r.abs() > radius || c.abs() > radius {
                return None;
            }
            let s = scores[((r + radius) as usize) * side + (c + radius) as usize];
            s.is_finite().then_some(s)
        };
        let refine = |m: Option<f64>, p: Option<f64>| match (m, p) {
            (Some(m), Some(p)) => subpixel(m, score, p),
            _ => 0.0,
        };
        let sr = dr as f64 + refine(at(dr - 1, dc), at(dr + 1, dc));
        let sc = dc as f64 + refine(at(dr, dc - 1), at(dr, dc + 1));
        distances.push((sr * sr + sc * sc).sqrt());
    }
    distances
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReprojectionStats {
    pub mean_px: f64,
    pub observations: usize,
}

/// Mean of the observation distances; fewer than 10 is an error.
pub fn reprojection_error(distances: &[f64]) -> Result<ReprojectionStats, EvalError> {
    if distances.len() < 10 {
        return Err(EvalError::TooFewPoints(distances.len()));
    }
    Ok(ReprojectionStats {
        mean_px: distances.iter().sum::<f64>() / distances.len() as f64,
        observations: distances.len(),
    })
}

/// Sparse points with per-frame 2D observations, as exported from an
/// external structure-from-motion run.
///
/// ```text
/// NPOINTS k
/// x y z            (k lines)
/// FRAME i m
/// point_id u v     (m lines)
/// ```
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Reconstruction {
    pub points: Vec<Point3<f64>>,
    /// `(frame, [(point id, u, v)])`.
    pub frames: Vec<(usize, Vec<(usize, f64, f64)>)>,
}

impl Reconstruction {
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let bad = |line: usize, message: &str| EvalError::Reconstruction {
            line,
            message: message.to_string(),
        };
        let (ln, header) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
        let count: usize = match header.split_whitespace().collect::<Vec<_>>()[..] {
            ["NPOINTS", k] => k.parse().map_err(|_| bad(ln, "bad point count"))?,
            _ => return Err(bad(ln, "expected 'NPOINTS k'")),
        };
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, l) = lines.next().ok_or_else(|| bad(ln, "missing point lines"))?;
            let xyz = numbers::<f64>(l)
                .filter(|v| v.len() == 3)
                .ok_or_else(|| bad(ln, "expected 'x y z'"))?;
            points.push(Point3::new(xyz[0], xyz[1], xyz[2]));
        }
        let mut frames = Vec::new();
        while let Some((ln, l)) = lines.next() {
            let (frame, m) = match l.split_whitespace().collect::<Vec<_>>()[..] {
                ["FRAME", i, m] => (
                    i.parse().map_err(|_| bad(ln, "bad frame index"))?,
                    m.parse::<usize>().map_err(|_| bad(ln, "bad observation count"))?,
                ),
                _ => return Err(bad(ln, "expected 'FRAME i m'")),
            };
            let mut obs = Vec::with_capacity(m);
            for _ in 0..m {
                let (ln, l) = lines.next().ok_or_else(|| bad(ln, "missing observation lines"))?;
                let parts: Vec<&str> = l.split_whitespace().collect();
                let [id, u, v] = parts[..] else {
                    return Err(bad(ln, "expected 'point_id u v'"));
                };
                let id: usize = id.parse().map_err(|_| bad(ln, "bad point id"))?;
                if id >= points.len() {
                    return Err(bad(ln, "point id out of range"));
                }
                let u: f64 = u.parse().map_err(|_| bad(ln, "bad u"))?;
                let v: f64 = v.parse().map_err(|_| bad(ln, "bad v"))?;
                obs.push((id, u, v));
            }
            frames.push((frame, obs));
        }
        Ok(Self { points, frames })
    }

    pub fn read(path: &std::path::Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|source| ArtifactError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn observations(&self, frame: usize) -> &[(usize, f64, f64)] {
        self.frames
            .iter()
            .find(|(f, _)| *f == frame)
            .map(|(_, o)| o.as_slice())
            .unwrap_or(&[])
    }

    /// Pixel distances between observations and projected points.
    pub fn reprojection_distances(&self, cameras: &[CameraPose]) -> Vec<f64> {
        let mut out = Vec::new();
        for (frame, obs) in &self.frames {
            let Some(camera) = cameras.get(*frame) else {
                continue;
            };
            for &(id, u, v) in obs {
                if let Some((pu, pv, _)) = camera.project(&self.points[id]) {
                    out.push(((pu - u).powi(2) + (pv - v).powi(2)).sqrt());
                }
            }
        }
        out
    }
}

fn numbers<T: std::str::FromStr>(line: &str) -> Option<Vec<T>> {
    line.split_whitespace().map(|t| t.parse().ok()).collect()
}

/// What a run is compared against.
#[derive(Clone, Debug)]
pub enum Reference {
    /// The synthetic world the oracle provider renders; the configured path
    /// is the true trajectory.
    Oracle,
    /// Reconstructed points and poses estimated from the output frames.
    Reconstruction {
        reconstruction: Reconstruction,
        poses: Trajectory,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub frames: usize,
    pub si_rmse: Vec<f64>,
    pub mean_si_rmse: f64,
    pub rotation_deg: f64,
    pub translation_pct: f64,
    pub reprojection_px: f64,
    pub reprojection_observations: usize,
    pub density_pct: f64,
    pub collinear_trajectory: bool,
}

/// The trajectory a configuration describes: its pose file, or the
/// generated path.
pub fn configured_trajectory(config: &RunConfig) -> Result<Trajectory, TrajectoryError> {
    match &config.trajectory.file {
        Some(path) => Trajectory::read(path, Some(config.intrinsics())),
        None => Ok(crate::trajectory::generate_path(
            &config.path_params(),
            config.intrinsics(),
        )),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Evaluates a complete run directory.
pub fn evaluate_run(layout: &RunLayout, reference: &Reference) -> Result<EvalReport, EvalError> {
    let config_text = std::fs::read_to_string(layout.config()).map_err(|source| ArtifactError::Io {
        path: layout.config(),
        source,
    })?;
    let config = RunConfig::from_toml(&config_text)?;
    let frames = config.run.frames;
    layout.check_complete(frames)?;
    let echoed = Trajectory::read(&layout.trajectory(), Some(config.intrinsics()))?;
    if echoed.len() != frames {
        return Err(EvalError::LengthMismatch {
            est: echoed.len(),
            reference: frames,
        });
    }
    let (w, h) = (config.run.width, config.run.height);
    let frame_err = |frame: usize| {
        move |e: EvalError| EvalError::Frame {
            frame,
            source: Box::new(e),
        }
    };

    let mut si = Vec::with_capacity(frames);
    let mut coverage = Vec::with_capacity(frames);
    let (poses, distances) = match reference {
        Reference::Oracle => {
            let truth_path = configured_trajectory(&config)?;
            let truth_poses = Trajectory::new(truth_path.poses.iter().take(frames).copied().collect());
            let world = SyntheticWorld::corridor(config.oracle.texture_seed);
            let params = TrackParams::default();
            let points = sample_surface_points(&world, &truth_poses.poses, w, h, &params);
            let mut distances = Vec::new();
            for (i, camera) in truth_poses.poses.iter().enumerate() {
                let depth = layout.read_depth(i)?;
                let image = layout.read_frame(i)?;
                let (truth_image, truth_depth) = world.render(camera, w, h);
                let valid = depth.zip_map(&truth_depth, |a, b| a.is_finite() && b.is_finite() && *b > 0.0);
                si.push(si_rmse(&depth, &truth_depth, &valid).map_err(frame_err(i))?);
                coverage.push(depth.map(|d| d.is_finite()));
                distances.extend(track_frame(
                    &image,
                    &truth_image,
                    &truth_depth,
                    camera,
                    &points,
                    &params,
                ));
            }
            (pose_errors(&echoed, &truth_poses)?, distances)
        }
        Reference::Reconstruction { reconstruction, poses } => {
            for i in 0..frames {
                let depth = layout.read_depth(i)?;
                let camera = poses.poses.get(i).ok_or(EvalError::LengthMismatch {
                    est: poses.len(),
                    reference: frames,
                })?;
                let mut diffs = Vec::new();
                for &(id, u, v) in reconstruction.observations(i) {
                    let z = camera.to_camera(&reconstruction.points[id]).z;
                    let (row, col) = (v.floor(), u.floor());
                    if row < 0.0 || col < 0.0 || row >= h as f64 || col >= w as f64 || !(z > 0.0) {
                        continue;
                    }
                    let d = depth[(row as usize, col as usize)];
                    if d.is_finite() && d > 0.0 {
                        diffs.push(d.ln() - z.ln());
                    }
                }
                si.push(si_rmse_of_log_ratios(&diffs).map_err(frame_err(i))?);
                coverage.push(depth.map(|d| d.is_finite()));
            }
            (
                pose_errors(poses, &echoed)?,
                reconstruction.reprojection_distances(&poses.poses),
            )
        }
    };
    let reprojection = reprojection_error(&distances)?;
    Ok(EvalReport {
        frames,
        mean_si_rmse: mean(&si),
        si_rmse: si,
        rotation_deg: poses.rotation_deg,
        translation_pct: poses.translation_pct,
        reprojection_px: reprojection.mean_px,
        reprojection_observations: reprojection.observations,
        density_pct: density(&coverage),
        collinear_trajectory: poses.alignment.collinear,
    })
}
