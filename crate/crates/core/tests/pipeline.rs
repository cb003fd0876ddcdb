mod common;

use std::cell::Cell;

use scenewalk::artifacts::RunLayout;
use scenewalk::config::RunConfig;
use scenewalk::eval::configured_trajectory;
use scenewalk::pipeline::{bootstrap, provider_from_config, run, run_in_memory, step, FrameOutput, PipelineError};
use scenewalk::provider::{open, ContentProvider, OracleProvider, ProviderError, ProviderRequest, SyntheticWorld};
use scenewalk::{CameraPose, DepthMap, ImageBuffer, Trajectory};

use common::{file_tree, small_config};

fn exact_oracle(config: &RunConfig) -> OracleProvider {
    OracleProvider::exact(SyntheticWorld::corridor(config.oracle.texture_seed))
}

#[test]
fn bootstrap_frame_is_the_oracle_render() {
    let config = small_config("", &[]);
    let traj = configured_trajectory(&config).unwrap();
    let provider = exact_oracle(&config);
    let (state, out) = bootstrap(&provider, &traj.poses[0], &config).unwrap();
    let (truth, _) = provider.truth(&traj.poses[0], 96, 96);
    assert_eq!(out.image, truth);
    assert_eq!(state.mesh.vertex_count(), 96 * 96);
    assert_eq!(state.frame_index, 0);
    assert_eq!(out.inpaint_mask.count(), 96 * 96);
}

#[test]
fn bootstrap_stores_the_perturbed_first_depth() {
    let config = small_config(
        "[oracle]\nscale = 0.7\nshift = 0.05\nfield_amplitude = 0.02\nnoise_sigma = 0.01\nperturb_first_frame = true\n",
        &[],
    );
    let traj = configured_trajectory(&config).unwrap();
    let provider = provider_from_config(&config);
    let cam = traj.poses[0];
    let (state, out) = bootstrap(provider.as_ref(), &cam, &config).unwrap();
    let perturbed = provider.predict_depth(&out.image, 0, &cam).unwrap();
    let (_, truth) = OracleProvider::exact(SyntheticWorld::corridor(7)).truth(&cam, 96, 96);
    assert_ne!(perturbed, truth);
    for (i, v) in state.mesh.vertices().iter().enumerate() {
        let z = cam.to_camera(&v.point()).z;
        let d = perturbed.data()[i];
        assert!((z - d).abs() <= 1e-9 * d, "pixel {i}: {z} vs {d}");
    }
}

/// Checks the per-frame mask algebra and the compositing contract.
fn check_step(out: &FrameOutput, kernel: usize) {
    let projected = out.projected.as_ref().unwrap();
    assert_eq!(
        out.inpaint_mask,
        projected.mask.not().or(&out.floating_mask),
        "frame {}",
        out.index
    );
    assert_eq!(out.opened_mask, open(&out.inpaint_mask, kernel), "frame {}", out.index);
    for (r, c, &m) in out.inpaint_mask.indexed() {
        if !m {
            assert_eq!(
                out.composite[(r, c)],
                projected.image[(r, c)],
                "frame {} ({r}, {c})",
                out.index
            );
        }
    }
}

#[test]
fn exact_oracle_steps_composite_known_and_new_content() {
    let config = small_config("", &["run.frames=8"]);
    let traj = configured_trajectory(&config).unwrap();
    let provider = exact_oracle(&config);
    let mut checked = 0;
    run_in_memory(&config, &traj, &provider, |out| {
        if out.index == 0 {
            return;
        }
        check_step(out, 3);
        let (truth, _) = provider.truth(&out.camera, 96, 96);
        for (r, c, &m) in out.opened_mask.indexed() {
            if m {
                for ch in 0..3 {
                    assert!((out.composite[(r, c)][ch] - truth[(r, c)][ch]).abs() <= 1e-3);
                }
            }
        }
        assert!(out.opened_mask.count() > 0, "frame {}", out.index);
        // the merged mesh covers the whole view again
        assert_eq!(out.coverage.count(), 96 * 96, "frame {}", out.index);
        checked += 1;
    })
    .unwrap();
    assert_eq!(checked, 7);
}

#[test]
fn perturbed_run_keeps_mask_algebra() {
    let config = small_config(
        "[oracle]\nscale = 0.7\nshift = 0.05\nfield_amplitude = 0.02\nnoise_sigma = 0.01\n",
        &[],
    );
    let traj = configured_trajectory(&config).unwrap();
    let provider = provider_from_config(&config);
    run_in_memory(&config, &traj, provider.as_ref(), |out| {
        if out.index > 0 {
            check_step(out, 3);
            assert!(out
                .aligned_depth
                .as_ref()
                .unwrap()
                .data()
                .iter()
                .all(|d| d.is_finite() && *d > 0.0));
        }
    })
    .unwrap();
}

#[test]
fn zero_motion_steps_add_nothing() {
    let config = small_config("", &["render.cull_stretched=false"]);
    let cam = configured_trajectory(&config).unwrap().poses[0];
    let traj = Trajectory::new(vec![cam; 4]);
    let provider = exact_oracle(&config);
    let (mut state, _) = bootstrap(&provider, &cam, &config).unwrap();
    let mut previous: Option<ImageBuffer> = None;
    for _ in 1..traj.len() {
        let vertices = state.mesh.vertex_count();
        let faces = state.mesh.face_count();
        let generation = state.mesh.generation();
        let out = step(&mut state, &cam, &provider).unwrap();
        assert_eq!(out.opened_mask.count(), 0);
        assert_eq!(out.floating_mask.count(), 0);
        assert_eq!(state.mesh.generation(), generation + 1);
        assert_eq!((state.mesh.vertex_count(), state.mesh.face_count()), (vertices, faces));
        if let Some(prev) = &previous {
            for (a, b) in out.image.data().iter().zip(prev.data()) {
                for ch in 0..3 {
                    assert!((a[ch] - b[ch]).abs() <= 1e-3);
                }
            }
        }
        previous = Some(out.image);
    }
}

#[test]
fn zero_motion_culling_only_removes_faces() {
    let config = small_config("", &[]);
    let cam = configured_trajectory(&config).unwrap().poses[0];
    let provider = exact_oracle(&config);
    let (mut state, _) = bootstrap(&provider, &cam, &config).unwrap();
    let faces = state.mesh.face_count();
    let out = step(&mut state, &cam, &provider).unwrap();
    assert!(out.diagnostics.culled_faces > 0);
    assert_eq!(out.opened_mask.count(), 0);
    assert_eq!(
        state.mesh.face_count() + out.diagnostics.culled_faces,
        faces + out.diagnostics.bridge_faces
    );
}

#[test]
fn single_frame_run_only_bootstraps() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config("", &["run.frames=1"]);
    let layout = RunLayout::new(dir.path());
    let summary = run(
        &config,
        &configured_trajectory(&config).unwrap(),
        &exact_oracle(&config),
        &layout,
        false,
    )
    .unwrap();
    assert_eq!(summary.frames, 1);
    assert_eq!(summary.vertices, 96 * 96);
    layout.check_complete(1).unwrap();
    assert!(!layout.frame(1).exists());
    assert_eq!(layout.saved_states(), vec![0]);
    let diagnostics = std::fs::read_to_string(layout.diagnostics()).unwrap();
    assert_eq!(diagnostics.lines().count(), 1);
}

#[test]
fn stub_runs_are_bit_identical() {
    let config = small_config("[provider]\nkind = \"stub\"\n", &[]);
    let traj = configured_trajectory(&config).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let provider = provider_from_config(&config);
        run(&config, &traj, provider.as_ref(), &RunLayout::new(dir.path()), false).unwrap();
    }
    let (ta, tb) = (file_tree(a.path()), file_tree(b.path()));
    assert!(ta.len() > 20);
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (path, bytes) in &ta {
        assert!(tb[path] == *bytes, "{} differs", path.display());
    }
}

/// Delegates to an inner provider but fails every inpainting request for
/// `fail_at`.
struct FailAt<'a> {
    inner: &'a dyn ContentProvider,
    fail_at: usize,
    calls: Cell<usize>,
}

impl ContentProvider for FailAt<'_> {
    fn name(&self) -> &str {
        "fail-at"
    }

    fn health(&self) -> Result<(), ProviderError> {
        self.inner.health()
    }

    fn inpaint(&self, request: &ProviderRequest) -> Result<scenewalk::ImageBuffer, ProviderError> {
        self.calls.set(self.calls.get() + 1);
        if request.frame_index == self.fail_at {
            return Err(ProviderError::Http {
                status: 500,
                body: "injected".into(),
            });
        }
        self.inner.inpaint(request)
    }

    fn predict_depth(
        &self,
        image: &ImageBuffer,
        frame_index: usize,
        camera: &CameraPose,
    ) -> Result<DepthMap, ProviderError> {
        self.inner.predict_depth(image, frame_index, camera)
    }
}

#[test]
fn interrupted_run_resumes_to_identical_artifacts() {
    let config = small_config(
        "[oracle]\nscale = 0.7\nshift = 0.05\nfield_amplitude = 0.02\nnoise_sigma = 0.01\n",
        &["run.frames=7", "run.snapshot_every=3"],
    );
    let traj = configured_trajectory(&config).unwrap();
    let provider = provider_from_config(&config);
    let (whole, broken) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(&config, &traj, provider.as_ref(), &RunLayout::new(whole.path()), false).unwrap();

    let failing = FailAt {
        inner: provider.as_ref(),
        fail_at: 5,
        calls: Cell::new(0),
    };
    let layout = RunLayout::new(broken.path());
    let err = run(&config, &traj, &failing, &layout, false).unwrap_err();
    assert!(matches!(err, PipelineError::Provider { frame: 5, .. }), "{err}");
    // every completed frame is on disk, with a state for the last one
    for i in 0..5 {
        assert!(layout.frame(i).exists() && layout.depth_png(i).exists() && layout.mask(i).exists());
    }
    assert!(!layout.frame(5).exists());
    assert_eq!(layout.saved_states(), vec![0, 3, 4]);
    assert_eq!(
        std::fs::read_to_string(layout.diagnostics()).unwrap().lines().count(),
        5
    );

    let summary = run(&config, &traj, provider.as_ref(), &layout, true).unwrap();
    assert_eq!(summary.resumed_from, Some(4));
    let (a, mut b) = (file_tree(whole.path()), file_tree(broken.path()));
    // the failure left one extra state file behind
    assert!(b.remove(std::path::Path::new("state/00004.state")).is_some());
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (path, bytes) in &a {
        assert!(b[path] == *bytes, "{} differs", path.display());
    }
}

#[test]
fn resume_continues_after_the_latest_snapshot() {
    let config = small_config("", &["run.frames=5", "run.snapshot_every=2"]);
    let traj = configured_trajectory(&config).unwrap();
    let provider = exact_oracle(&config);
    let dir = tempfile::tempdir().unwrap();
    let layout = RunLayout::new(dir.path());
    let short = RunConfig {
        run: scenewalk::config::RunSection {
            frames: 3,
            ..config.run.clone()
        },
        ..config.clone()
    };
    run(&short, &traj, &provider, &layout, false).unwrap();
    assert_eq!(layout.saved_states(), vec![0, 2]);
    let summary = run(&config, &traj, &provider, &layout, true).unwrap();
    assert_eq!(summary.resumed_from, Some(2));
    layout.check_complete(5).unwrap();

    let fresh = tempfile::tempdir().unwrap();
    run(&config, &traj, &provider, &RunLayout::new(fresh.path()), false).unwrap();
    assert_eq!(file_tree(fresh.path()), file_tree(dir.path()));
}

#[test]
fn short_trajectory_is_rejected() {
    let config = small_config("", &[]);
    let traj = Trajectory::new(configured_trajectory(&config).unwrap().poses[..3].to_vec());
    let dir = tempfile::tempdir().unwrap();
    let err = run(
        &config,
        &traj,
        &exact_oracle(&config),
        &RunLayout::new(dir.path()),
        false,
    )
    .unwrap_err();
    assert!(matches!(err, PipelineError::ShortTrajectory { needed: 6, got: 3 }));
}
