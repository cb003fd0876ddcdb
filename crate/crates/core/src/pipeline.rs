//! The per-frame loop: cull, project, mask, inpaint, composite, predict and
//! align depth, unproject, stitch, merge, render.

use std::io::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::align::{align_depth_with, AlignError, AlignReport, DepthCorrection};
use crate::artifacts::{ArtifactError, RunLayout};
use crate::camera::CameraPose;
use crate::config::{ProviderKind, RunConfig};
use crate::grid::{DepthMap, ImageBuffer, MaskMap};
use crate::mesh::{init_scene, merge, stitch_boundary_with, unproject_frame, MeshError, SceneMesh};
use crate::mesh_io::Snapshot;
use crate::provider::{
    preprocess_mask, ContentProvider, OracleProvider, ProviderError, ProviderRequest, RemoteConfig, RemoteProvider,
    RequestKind, StubProvider, SyntheticWorld,
};
use crate::render::{
    cull_faces, detect_stretched_triangles_from, floating_region_mask_with, project_with, render_antialiased_with,
    RenderOutput,
};
use crate::trajectory::Trajectory;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("frame {frame}: provider failed: {source}")]
    Provider { frame: usize, source: ProviderError },
    #[error("frame {frame}: {source}")]
    Mesh { frame: usize, source: MeshError },
    #[error("frame {frame}: depth alignment failed: {source}")]
    Align { frame: usize, source: AlignError },
    #[error("frame {frame}: {message}")]
    Invalid { frame: usize, message: String },
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("trajectory has {got} poses but {needed} frames were requested")]
    ShortTrajectory { needed: usize, got: usize },
    #[error("cannot resume: {0}")]
    Resume(String),
}

/// Renders of the merged mesh at the current camera, reused by the next step.
#[derive(Clone, Debug)]
pub struct ViewCache {
    /// Base-resolution projection.
    pub base: RenderOutput,
    /// Antialiased frame and its coverage.
    pub image: ImageBuffer,
    pub coverage: crate::grid::Grid<f32>,
    /// Depth of the supersampled render.
    pub supersampled_depth: DepthMap,
}

impl ViewCache {
    pub fn compute(mesh: &SceneMesh, camera: &CameraPose, config: &RunConfig) -> Self {
        let (w, h) = (config.run.width, config.run.height);
        let r = &config.render;
        let base = project_with(mesh, camera, w, h, r.near_plane);
        let aa = render_antialiased_with(mesh, camera, w, h, r.antialias, r.blur_sigma, r.near_plane);
        Self {
            base,
            image: aa.image,
            coverage: aa.coverage,
            supersampled_depth: aa.supersampled.depth,
        }
    }

    /// Antialiased color where geometry covers the pixel, `fallback` elsewhere.
    pub fn frame(&self, fallback: &ImageBuffer) -> ImageBuffer {
        ImageBuffer::from_fn(fallback.width(), fallback.height(), |r, c| {
            if self.coverage[(r, c)] > 0.0 {
                self.image[(r, c)]
            } else {
                fallback[(r, c)]
            }
        })
    }
}

/// Everything a step reads: no lookahead, no earlier frames.
#[derive(Clone, Debug)]
pub struct PipelineState {
    pub mesh: SceneMesh,
    pub frame_index: usize,
    pub camera: CameraPose,
    pub view: ViewCache,
    pub config: RunConfig,
}

impl PipelineState {
    /// Rebuilds the state after `frame_index` from a saved mesh.
    pub fn restore(mesh: SceneMesh, frame_index: usize, camera: CameraPose, config: &RunConfig) -> Self {
        let view = ViewCache::compute(&mesh, &camera, config);
        Self {
            mesh,
            frame_index,
            camera,
            view,
            config: config.clone(),
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            frame_index: self.frame_index,
            mesh: self.mesh.clone(),
        }
    }
}

/// Per-frame record written to `diagnostics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameDiagnostics {
    pub frame: usize,
    pub generation: u64,
    pub vertices: usize,
    pub faces: usize,
    pub culled_faces: usize,
    /// Fraction of pixels to synthesize, before opening.
    pub mask_fraction: f64,
    pub opened_fraction: f64,
    pub ring_pixels: usize,
    pub floating_pixels: usize,
    pub new_vertices: usize,
    pub bridge_faces: usize,
    /// Fraction of pixels covered by the merged mesh.
    pub coverage: f64,
    pub align: Option<AlignReport>,
}

/// Everything produced for one frame.
#[derive(Clone, Debug)]
pub struct FrameOutput {
    pub index: usize,
    pub camera: CameraPose,
    /// The emitted frame.
    pub image: ImageBuffer,
    /// Known content, prefilled ring and provider output, before
    /// antialiasing.
    pub composite: ImageBuffer,
    /// Depth of the merged mesh at this camera; `NaN` where uncovered.
    pub depth: DepthMap,
    pub coverage: MaskMap,
    /// Pixels synthesized this frame (before opening).
    pub inpaint_mask: MaskMap,
    pub opened_mask: MaskMap,
    pub floating_mask: MaskMap,
    /// Projection of the (culled) mesh before merging.
    pub projected: Option<RenderOutput>,
    pub raw_depth: Option<DepthMap>,
    pub aligned_depth: Option<DepthMap>,
    /// Pixels the alignment was fitted on.
    pub align_mask: Option<MaskMap>,
    pub correction: Option<DepthCorrection>,
    pub diagnostics: FrameDiagnostics,
}

/// The provider a configuration selects.
pub fn provider_from_config(config: &RunConfig) -> Box<dyn ContentProvider> {
    match config.provider.kind {
        ProviderKind::Oracle => {
            let o = &config.oracle;
            Box::new(OracleProvider {
                world: SyntheticWorld::corridor(o.texture_seed),
                perturbation: o.perturbation(),
                seed: config.seed(),
                perturb_first_frame: o.perturb_first_frame,
            })
        }
        ProviderKind::Stub => Box::new(StubProvider::new(config.seed())),
        ProviderKind::Remote => {
            let p = &config.provider;
            Box::new(RemoteProvider::new(RemoteConfig {
                url: p.url.trim_end_matches('/').to_string(),
                timeout: std::time::Duration::from_secs_f64(p.timeout_s),
                retries: p.retries,
                backoff: std::time::Duration::from_secs_f64(p.backoff_s),
            }))
        }
    }
}

fn provider_err(frame: usize) -> impl FnOnce(ProviderError) -> PipelineError {
    move |source| PipelineError::Provider { frame, source }
}

fn mesh_err(frame: usize) -> impl FnOnce(MeshError) -> PipelineError {
    move |source| PipelineError::Mesh { frame, source }
}

/// First frame: an unconditional sample, its predicted depth, and the mesh
/// lifted from both.
pub fn bootstrap(
    provider: &dyn ContentProvider,
    camera: &CameraPose,
    config: &RunConfig,
) -> Result<(PipelineState, FrameOutput), PipelineError> {
    let (w, h) = (config.run.width, config.run.height);
    provider.health().map_err(provider_err(0))?;
    let request = ProviderRequest::bootstrap(&config.run.prompt, *camera, w, h);
    let image = provider.inpaint(&request).map_err(provider_err(0))?;
    if image.width() != w || image.height() != h {
        return Err(PipelineError::Invalid {
            frame: 0,
            message: format!(
                "provider returned {}x{}, expected {w}x{h}",
                image.width(),
                image.height()
            ),
        });
    }
    let depth = provider.predict_depth(&image, 0, camera).map_err(provider_err(0))?;
    let mesh = init_scene(&image, &depth, camera).map_err(mesh_err(0))?;
    let state = PipelineState::restore(mesh, 0, *camera, config);
    let all = MaskMap::new(w, h, true);
    let diagnostics = FrameDiagnostics {
        frame: 0,
        generation: state.mesh.generation(),
        vertices: state.mesh.vertex_count(),
        faces: state.mesh.face_count(),
        culled_faces: 0,
        mask_fraction: 1.0,
        opened_fraction: 1.0,
        ring_pixels: 0,
        floating_pixels: 0,
        new_vertices: state.mesh.vertex_count(),
        bridge_faces: 0,
        coverage: state.view.base.mask.fraction(),
        align: None,
    };
    let output = FrameOutput {
        index: 0,
        camera: *camera,
        composite: image.clone(),
        image,
        depth: state.view.base.depth.clone(),
        coverage: state.view.base.mask.clone(),
        inpaint_mask: all.clone(),
        opened_mask: all,
        floating_mask: MaskMap::new(w, h, false),
        projected: None,
        raw_depth: Some(depth),
        aligned_depth: None,
        align_mask: None,
        correction: None,
        diagnostics,
    };
    Ok((state, output))
}

/// Advances `state` to `next_camera`. On error `state` is left at the last
/// completed frame.
pub fn step(
    state: &mut PipelineState,
    next_camera: &CameraPose,
    provider: &dyn ContentProvider,
) -> Result<FrameOutput, PipelineError> {
    let config = state.config.clone();
    let frame = state.frame_index + 1;
    let (w, h) = (config.run.width, config.run.height);
    let r = &config.render;
    let mut mesh = state.mesh.clone();

    // stretched faces along the depth edges of the last view
    let mut culled = 0;
    if r.cull_stretched {
        let ids = detect_stretched_triangles_from(
            &mesh,
            &state.view.base.depth,
            &state.camera,
            &next_camera.center(),
            &config.stretch_params(),
        );
        culled = cull_faces(&mut mesh, &ids).map_err(mesh_err(frame))?;
    }

    let projected = project_with(&mesh, next_camera, w, h, r.near_plane);
    let floating = if r.floating_fix {
        let f = r.antialias.max(1);
        floating_region_mask_with(
            &state.view.supersampled_depth,
            &state.camera.supersampled(f as f64),
            &next_camera.supersampled(f as f64),
            r.pad_factor,
        )
        .downsample_any(f)
    } else {
        MaskMap::new(w, h, false)
    };
    let inpaint = projected.mask.not().or(&floating);

    let mut known_image = projected.image.clone();
    for (px, &m) in known_image.data_mut().iter_mut().zip(inpaint.data()) {
        if m {
            *px = [0.0; 3];
        }
    }
    let prepared = preprocess_mask(&inpaint, &known_image, r.opening_kernel, r.fill_iterations);

    let composite = if prepared.opened.count() > 0 {
        let request = ProviderRequest {
            kind: RequestKind::Inpaint,
            prompt: config.run.prompt.clone(),
            image: prepared.prefilled.clone(),
            mask: prepared.known(),
            frame_index: frame,
            camera: *next_camera,
        };
        let generated = provider.inpaint(&request).map_err(provider_err(frame))?;
        if !generated.same_shape(&known_image) {
            return Err(PipelineError::Invalid {
                frame,
                message: format!(
                    "provider returned {}x{}, expected {w}x{h}",
                    generated.width(),
                    generated.height()
                ),
            });
        }
        ImageBuffer::from_fn(w, h, |row, col| {
            if prepared.opened[(row, col)] {
                generated[(row, col)]
            } else {
                prepared.prefilled[(row, col)]
            }
        })
    } else {
        prepared.prefilled.clone()
    };

    let mut align_report = None;
    let mut raw_depth = None;
    let mut aligned_depth = None;
    let mut align_mask = None;
    let mut correction = None;
    let mut new_vertices = 0;
    let mut bridge_faces = 0;
    if inpaint.count() > 0 {
        let raw = provider
            .predict_depth(&composite, frame, next_camera)
            .map_err(provider_err(frame))?;
        let fit_mask = projected.mask.and_not(&floating);
        let aligned = if config.align.enabled {
            match align_depth_with(&raw, &projected.depth, &fit_mask, &config.align_params()) {
                Ok(outcome) => {
                    align_report = Some(outcome.report);
                    correction = Some(outcome.correction);
                    outcome.depth
                }
                Err(AlignError::Underdetermined(n)) => {
                    log::warn!("frame {frame}: only {n} pixels to align against; using raw depth");
                    raw.clone()
                }
                Err(source) => return Err(PipelineError::Align { frame, source }),
            }
        } else {
            raw.clone()
        };
        let patch = unproject_frame(&inpaint, &composite, &aligned, next_camera).map_err(mesh_err(frame))?;
        let bridges = stitch_boundary_with(&mesh, &patch, &inpaint, next_camera, &projected);
        new_vertices = patch.vertices.len();
        bridge_faces = bridges.len();
        merge(&mut mesh, &patch, &bridges).map_err(mesh_err(frame))?;
        raw_depth = Some(raw);
        aligned_depth = Some(aligned);
        align_mask = Some(fit_mask);
    } else {
        merge(&mut mesh, &Default::default(), &[]).map_err(mesh_err(frame))?;
    }

    let view = ViewCache::compute(&mesh, next_camera, &config);
    let image = view.frame(&composite);
    let diagnostics = FrameDiagnostics {
        frame,
        generation: mesh.generation(),
        vertices: mesh.vertex_count(),
        faces: mesh.face_count(),
        culled_faces: culled,
        mask_fraction: inpaint.fraction(),
        opened_fraction: prepared.opened.fraction(),
        ring_pixels: prepared.ring.count(),
        floating_pixels: floating.count(),
        new_vertices,
        bridge_faces,
        coverage: view.base.mask.fraction(),
        align: align_report,
    };
    let output = FrameOutput {
        index: frame,
        camera: *next_camera,
        image,
        composite,
        depth: view.base.depth.clone(),
        coverage: view.base.mask.clone(),
        inpaint_mask: inpaint,
        opened_mask: prepared.opened,
        floating_mask: floating,
        projected: Some(projected),
        raw_depth,
        aligned_depth,
        align_mask,
        correction,
        diagnostics,
    };
    state.mesh = mesh;
    state.frame_index = frame;
    state.camera = *next_camera;
    state.view = view;
    Ok(output)
}

/// Runs bootstrap and steps over the first `config.run.frames` poses,
/// handing every frame to `observe`. Nothing is written to disk.
pub fn run_in_memory(
    config: &RunConfig,
    trajectory: &Trajectory,
    provider: &dyn ContentProvider,
    mut observe: impl FnMut(&FrameOutput),
) -> Result<PipelineState, PipelineError> {
    let frames = config.run.frames;
    if trajectory.len() < frames {
        return Err(PipelineError::ShortTrajectory {
            needed: frames,
            got: trajectory.len(),
        });
    }
    let (mut state, first) = bootstrap(provider, &trajectory.poses[0], config)?;
    observe(&first);
    for pose in &trajectory.poses[1..frames] {
        let out = step(&mut state, pose, provider)?;
        observe(&out);
    }
    Ok(state)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub frames: usize,
    pub resumed_from: Option<usize>,
    pub vertices: usize,
    pub faces: usize,
}

fn write_frame(layout: &RunLayout, out: &FrameOutput) -> Result<(), PipelineError> {
    layout.write_frame(out.index, &out.image)?;
    layout.write_depth(out.index, &out.depth)?;
    layout.write_mask(out.index, &out.inpaint_mask)?;
    Ok(())
}

fn append_diagnostics(layout: &RunLayout, diag: &FrameDiagnostics) -> Result<(), PipelineError> {
    let path = layout.diagnostics();
    let io = |source| ArtifactError::Io {
        path: path.clone(),
        source,
    };
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(io)?;
    let line = serde_json::to_string(diag).expect("diagnostics serialize");
    writeln!(file, "{line}").map_err(io)?;
    Ok(())
}

fn truncate_diagnostics(layout: &RunLayout, last_frame: usize) -> Result<(), PipelineError> {
    let path = layout.diagnostics();
    let text = std::fs::read_to_string(&path).unwrap_or_default();
    let kept: String = text
        .lines()
        .filter(|line| {
            serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("frame").and_then(|f| f.as_u64()))
                .is_some_and(|f| f as usize <= last_frame)
        })
        .map(|l| format!("{l}\n"))
        .collect();
    layout.write_text(&path, &kept)?;
    Ok(())
}

fn checkpoint(layout: &RunLayout, state: &PipelineState, every: usize, last: bool) -> Result<(), PipelineError> {
    if state.frame_index.is_multiple_of(every) || last {
        layout.write_mesh(&layout.snapshot_mesh(state.frame_index), &state.mesh)?;
        layout.write_state(&state.snapshot())?;
    }
    Ok(())
}

/// Full run with artifacts under `layout`.
///
/// With `resume`, continues after the latest saved state instead of
/// bootstrapping. A failing step leaves every completed frame on disk along
/// with a state file for the last completed frame.
pub fn run(
    config: &RunConfig,
    trajectory: &Trajectory,
    provider: &dyn ContentProvider,
    layout: &RunLayout,
    resume: bool,
) -> Result<RunSummary, PipelineError> {
    run_observed(config, trajectory, provider, layout, resume, |_| {})
}

/// [`run`], handing every computed frame to `observe` after it is written.
pub fn run_observed(
    config: &RunConfig,
    trajectory: &Trajectory,
    provider: &dyn ContentProvider,
    layout: &RunLayout,
    resume: bool,
    mut observe: impl FnMut(&FrameOutput),
) -> Result<RunSummary, PipelineError> {
    let frames = config.run.frames;
    if trajectory.len() < frames {
        return Err(PipelineError::ShortTrajectory {
            needed: frames,
            got: trajectory.len(),
        });
    }
    let poses = Trajectory {
        poses: trajectory.poses[..frames].to_vec(),
        params: trajectory.params,
    };
    layout.create_dirs()?;
    layout.write_text(&layout.config(), &config.to_toml())?;
    layout.write_text(&layout.trajectory(), &poses.to_text())?;

    let every = config.run.snapshot_every.max(1);
    let (mut state, resumed_from) = match resume.then(|| layout.saved_states().last().copied()).flatten() {
        Some(saved) => {
            let snapshot = layout.read_state(saved)?;
            if snapshot.frame_index >= frames {
                return Err(PipelineError::Resume(format!(
                    "saved state is at frame {} but the run has {frames} frames",
                    snapshot.frame_index
                )));
            }
            truncate_diagnostics(layout, snapshot.frame_index)?;
            let camera = poses.poses[snapshot.frame_index];
            log::info!("resuming after frame {}", snapshot.frame_index);
            (
                PipelineState::restore(snapshot.mesh, snapshot.frame_index, camera, config),
                Some(snapshot.frame_index),
            )
        }
        None => {
            if resume {
                log::warn!("no saved state found; starting from scratch");
            }
            let _ = std::fs::remove_file(layout.diagnostics());
            let (state, first) = bootstrap(provider, &poses.poses[0], config)?;
            write_frame(layout, &first)?;
            append_diagnostics(layout, &first.diagnostics)?;
            checkpoint(layout, &state, every, frames == 1)?;
            observe(&first);
            (state, None)
        }
    };

    for pose in &poses.poses[state.frame_index + 1..] {
        let out = match step(&mut state, pose, provider) {
            Ok(out) => out,
            Err(e) => {
                layout.write_state(&state.snapshot())?;
                return Err(e);
            }
        };
        write_frame(layout, &out)?;
        append_diagnostics(layout, &out.diagnostics)?;
        checkpoint(layout, &state, every, out.index + 1 == frames)?;
        observe(&out);
        log::info!(
            "frame {}: {:.1}% synthesized, {} vertices",
            out.index,
            100.0 * out.diagnostics.mask_fraction,
            out.diagnostics.vertices
        );
    }
    layout.write_mesh(&layout.final_mesh(), &state.mesh)?;
    Ok(RunSummary {
        frames,
        resumed_from,
        vertices: state.mesh.vertex_count(),
        faces: state.mesh.face_count(),
    })
}
