mod common;

use proptest::prelude::*;
use rand::Rng;

use scenewalk::eval::configured_trajectory;
use scenewalk::mesh::{init_scene, merge, stitch_boundary, unproject_frame};
use scenewalk::pipeline::{bootstrap, provider_from_config, step};
use scenewalk::provider::SyntheticWorld;
use scenewalk::render::project;
use scenewalk::trajectory::{generate_path, PathParams};
use scenewalk::{DepthMap, ImageBuffer, MaskMap};

use common::{camera, count_holes, rng, small_config};

#[test]
fn stitched_merge_renders_hole_free() {
    let (w, h) = (96, 96);
    let world = SyntheticWorld::corridor(7);
    let intr = camera(w, h).intrinsics().to_owned();
    let params = PathParams {
        frames: 12,
        ..PathParams::default()
    };
    let path = generate_path(&params, intr);
    let (image0, depth0) = world.render(&path.poses[0], w, h);
    let mut mesh = init_scene(&image0, &depth0, &path.poses[0]).unwrap();
    let mut checked = 0;
    for t in 1..path.len() {
        let cam = &path.poses[t];
        let projected = project(&mesh, cam, w, h);
        let inpaint = projected.mask.not();
        let (image, depth) = world.render(cam, w, h);
        let patch = unproject_frame(&inpaint, &image, &depth, cam).unwrap();
        let bridges = stitch_boundary(&mesh, &patch, &inpaint, cam);
        if inpaint.count() > 0 {
            assert!(!bridges.is_empty(), "frame {t}: nothing stitched");
            checked += 1;
        }
        merge(&mut mesh, &patch, &bridges).unwrap();
        let rendered = project(&mesh, cam, w, h).mask;
        assert_eq!(count_holes(&rendered), 0, "frame {t}");
        assert_eq!(rendered.count(), w * h, "frame {t}");
    }
    assert!(checked > 5);
}

#[test]
fn hole_counter_sees_interior_holes() {
    let mut mask = MaskMap::new(10, 10, true);
    mask[(4, 4)] = false;
    mask[(4, 5)] = false;
    mask[(7, 2)] = false;
    mask[(0, 3)] = false;
    assert_eq!(count_holes(&mask), 2);
}

#[test]
fn pipeline_retains_vertices_and_grows_monotonically() {
    let config = small_config("", &[]);
    let traj = configured_trajectory(&config).unwrap();
    let provider = provider_from_config(&config);
    let (mut state, _) = bootstrap(provider.as_ref(), &traj.poses[0], &config).unwrap();
    assert_eq!(state.mesh.vertex_count(), 96 * 96);
    let mut previous = state.mesh.vertices().to_vec();
    for pose in &traj.poses[1..config.run.frames] {
        let generation = state.mesh.generation();
        step(&mut state, pose, provider.as_ref()).unwrap();
        assert_eq!(state.mesh.generation(), generation + 1);
        let now = state.mesh.vertices();
        assert!(now.len() >= previous.len());
        // bit-identical retention of every earlier vertex
        for (a, b) in previous.iter().zip(now) {
            assert_eq!(a.position.map(f64::to_bits), b.position.map(f64::to_bits));
            assert_eq!(a.color.map(f32::to_bits), b.color.map(f32::to_bits));
        }
        assert!(state.mesh.validate().is_ok());
        previous = now.to_vec();
    }
}

proptest! {
    #![proptest_config(common::proptest_config(32))]

    #[test]
    fn patch_vertices_project_to_their_pixels(seed in any::<u64>(), density in 0.1f64..1.0) {
        let (w, h) = (20, 16);
        let cam = camera(w, h);
        let mut r = rng(seed);
        let mask = MaskMap::from_fn(w, h, |_, _| r.random::<f64>() < density);
        let depth = DepthMap::from_fn(w, h, |_, _| r.random_range(0.5..20.0));
        let image = ImageBuffer::new(w, h, [0.2, 0.4, 0.6]);
        let patch = unproject_frame(&mask, &image, &depth, &cam).unwrap();
        prop_assert_eq!(patch.vertices.len(), mask.count());
        for (v, &(row, col)) in patch.vertices.iter().zip(&patch.pixels) {
            let (u, vv, _) = cam.project(&v.point()).unwrap();
            prop_assert!((u - (col as f64 + 0.5)).abs() <= 0.5);
            prop_assert!((vv - (row as f64 + 0.5)).abs() <= 0.5);
        }
        for f in &patch.faces {
            prop_assert!(f[0] != f[1] && f[1] != f[2] && f[0] != f[2]);
            prop_assert!(f.iter().all(|&i| (i as usize) < patch.vertices.len()));
        }
    }

    #[test]
    fn merge_never_shrinks(seed in any::<u64>()) {
        let (w, h) = (12, 10);
        let cam = camera(w, h);
        let mut r = rng(seed);
        let depth = DepthMap::from_fn(w, h, |_, _| r.random_range(1.0..3.0));
        let image = ImageBuffer::new(w, h, [0.5; 3]);
        let mut mesh = init_scene(&image, &depth, &cam).unwrap();
        let mask = MaskMap::from_fn(w, h, |_, _| r.random::<bool>());
        let patch = unproject_frame(&mask, &image, &depth, &cam).unwrap();
        let (v, f) = (mesh.vertex_count(), mesh.face_count());
        merge(&mut mesh, &patch, &[]).unwrap();
        prop_assert_eq!(mesh.vertex_count(), v + patch.vertices.len());
        prop_assert_eq!(mesh.face_count(), f + patch.faces.len());
    }
}
