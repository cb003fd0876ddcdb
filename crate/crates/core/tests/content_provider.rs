mod common;

use nalgebra::{Matrix3, Point3, Vector3};
use proptest::prelude::*;

use scenewalk::camera::yaw_rotation;
use scenewalk::provider::{
    dilate, erode, open, preprocess_mask, ContentProvider, OracleProvider, Perturbation, ProviderError,
    ProviderRequest, RequestKind, StubProvider, SyntheticWorld,
};
use scenewalk::{CameraPose, ImageBuffer, Intrinsics, MaskMap};

use common::{camera, rng};

fn from_rows(rows: &[&str]) -> MaskMap {
    MaskMap::from_fn(rows[0].len(), rows.len(), |r, c| rows[r].as_bytes()[c] == b'#')
}

/// Erosion then dilation by scanning every 3×3 neighborhood, skipping
/// out-of-image neighbors.
fn brute_open3(mask: &MaskMap) -> MaskMap {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let neighbors = |r: usize, c: usize| {
        let mut out = Vec::new();
        for dr in -1..=1isize {
            for dc in -1..=1isize {
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr >= 0 && cc >= 0 && rr < h && cc < w {
                    out.push((rr as usize, cc as usize));
                }
            }
        }
        out
    };
    let eroded = MaskMap::from_fn(mask.width(), mask.height(), |r, c| {
        neighbors(r, c).iter().all(|&p| mask[p])
    });
    MaskMap::from_fn(mask.width(), mask.height(), |r, c| {
        neighbors(r, c).iter().any(|&p| eroded[p])
    })
}

#[test]
fn opening_with_protrusion_matches_brute_force() {
    let mask = from_rows(&[
        ".......", ".###...", ".#####.", ".###...", ".......", "...#...", "...#...",
    ]);
    let opened = open(&mask, 3);
    assert_eq!(opened, brute_open3(&mask));
    // the protrusion and the thin tail go, the 3×3 block stays
    assert_eq!(
        opened,
        from_rows(&[".......", ".###...", ".###...", ".###...", ".......", ".......", ".......",])
    );
}

#[test]
fn thick_inpaint_mask_is_left_alone() {
    let mask = MaskMap::from_fn(24, 20, |r, c| (4..12).contains(&r) && (3..15).contains(&c) || r >= 17);
    let image = ImageBuffer::from_fn(24, 20, |r, c| [r as f32 / 20.0, c as f32 / 24.0, 0.3]);
    let prep = preprocess_mask(&mask, &image, 3, 50);
    assert_eq!(prep.opened, mask);
    assert_eq!(prep.ring.count(), 0);
    assert_eq!(prep.known(), mask.not());
    for (i, &m) in mask.data().iter().enumerate() {
        let expected = if m { [0.0; 3] } else { image.data()[i] };
        assert_eq!(prep.prefilled.data()[i], expected);
    }
}

#[test]
fn isolated_pixel_enters_the_ring() {
    let mut mask = MaskMap::new(9, 9, false);
    mask[(4, 4)] = true;
    let image = ImageBuffer::new(9, 9, [0.1, 0.6, 0.3]);
    let prep = preprocess_mask(&mask, &image, 3, 50);
    assert_eq!(prep.opened.count(), 0);
    assert_eq!(prep.ring, mask);
    assert_eq!(prep.prefilled[(4, 4)], [0.1, 0.6, 0.3]);
}

#[test]
fn ring_fill_spreads_from_known_pixels() {
    // a 1-px wide column of unknown pixels between two flat halves
    let mask = MaskMap::from_fn(9, 5, |_, c| c == 4);
    let image = ImageBuffer::from_fn(9, 5, |_, c| if c < 4 { [0.2; 3] } else { [0.8; 3] });
    let prep = preprocess_mask(&mask, &image, 3, 50);
    assert_eq!(prep.ring, mask);
    for r in 0..5 {
        let v = prep.prefilled[(r, 4)][0];
        assert!((v - 0.5).abs() < 1e-6, "row {r}: {v}");
    }
}

proptest! {
    #![proptest_config(common::proptest_config(64))]

    #[test]
    fn opening_properties(bits in prop::collection::vec(any::<bool>(), 12 * 10)) {
        let mask = MaskMap::from_vec(12, 10, bits);
        let opened = open(&mask, 3);
        prop_assert_eq!(opened.and_not(&mask).count(), 0);
        prop_assert_eq!(&dilate(&erode(&mask, 3), 3), &opened);
        prop_assert_eq!(&open(&opened, 3), &opened);
        prop_assert_eq!(&opened, &brute_open3(&mask));
    }

    #[test]
    fn ring_and_opened_partition_the_inpaint_mask(bits in prop::collection::vec(any::<bool>(), 10 * 8)) {
        let mask = MaskMap::from_vec(10, 8, bits);
        let image = ImageBuffer::new(10, 8, [0.5; 3]);
        let prep = preprocess_mask(&mask, &image, 3, 50);
        prop_assert_eq!(prep.ring.and(&prep.opened).count(), 0);
        prop_assert_eq!(&prep.ring.or(&prep.opened), &mask);
    }
}

fn side_camera(w: usize, h: usize) -> CameraPose {
    CameraPose::from_center(
        yaw_rotation(0.12),
        Point3::new(0.3, -0.1, -0.6),
        *camera(w, h).intrinsics(),
    )
    .unwrap()
}

/// Disparity interpolated bilinearly between the four pixel centers around
/// `(u, v)`, when all four see the same planar face as `hit`.
fn planar_disparity(
    world: &SyntheticWorld,
    cam: &CameraPose,
    depth: &scenewalk::DepthMap,
    u: f64,
    v: f64,
    face: (usize, usize),
) -> Option<f64> {
    let (x, y) = (u - 0.5, v - 0.5);
    let (c0, r0) = (x.floor(), y.floor());
    if c0 < 0.0 || r0 < 0.0 || c0 + 1.0 >= depth.width() as f64 || r0 + 1.0 >= depth.height() as f64 {
        return None;
    }
    let (c0, r0) = (c0 as usize, r0 as usize);
    let intr = cam.intrinsics();
    let r_t = cam.rotation().transpose();
    for (r, c) in [(r0, c0), (r0, c0 + 1), (r0 + 1, c0), (r0 + 1, c0 + 1)] {
        let dir = r_t
            * Vector3::new(
                (c as f64 + 0.5 - intr.cx) / intr.fx,
                (r as f64 + 0.5 - intr.cy) / intr.fy,
                1.0,
            );
        let hit = world.cast(&cam.center(), &dir)?;
        if (hit.surface, hit.axis) != face {
            return None;
        }
    }
    let (fx, fy) = (x - c0 as f64, y - r0 as f64);
    let d = |r, c| 1.0 / depth[(r, c)];
    let top = d(r0, c0) * (1.0 - fx) + d(r0, c0 + 1) * fx;
    let bottom = d(r0 + 1, c0) * (1.0 - fx) + d(r0 + 1, c0 + 1) * fx;
    Some(top * (1.0 - fy) + bottom * fy)
}

#[test]
fn oracle_renders_agree_across_cameras() {
    let (w, h) = (80, 64);
    let world = SyntheticWorld::corridor(7);
    let a = camera(w, h);
    let b = side_camera(w, h);
    let (_, depth_a) = world.render(&a, w, h);
    let (_, depth_b) = world.render(&b, w, h);
    let intr = a.intrinsics();
    let mut checked = 0;
    for (row, col, &d) in depth_a.indexed() {
        let p = a.unproject_pixel(row, col, d);
        let Some((u, v, z)) = b.project(&p) else { continue };
        // the surface A sees, and whether B sees the same point unoccluded
        let dir_a = Vector3::new(
            (col as f64 + 0.5 - intr.cx) / intr.fx,
            (row as f64 + 0.5 - intr.cy) / intr.fy,
            1.0,
        );
        let hit_a = world.cast(&a.center(), &(a.rotation().transpose() * dir_a)).unwrap();
        let to_p = p - b.center();
        let Some(hit_b) = world.cast(&b.center(), &to_p) else {
            continue;
        };
        if (hit_b.t - 1.0).abs() > 1e-9 {
            continue;
        }
        assert!((hit_b.point - p).norm() <= 1e-9 * (1.0 + p.coords.norm()));
        let Some(disp) = planar_disparity(&world, &b, &depth_b, u, v, (hit_a.surface, hit_a.axis)) else {
            continue;
        };
        assert!(
            (1.0 / disp - z).abs() <= 1e-3 * z,
            "({row}, {col}): {} vs {z}",
            1.0 / disp
        );
        checked += 1;
    }
    assert!(checked > w * h / 3, "only {checked} points compared");
}

fn request(frame_index: usize, w: usize, h: usize) -> ProviderRequest {
    let mut r = rng(frame_index as u64);
    use rand::Rng;
    ProviderRequest {
        kind: RequestKind::Inpaint,
        prompt: "a corridor".into(),
        image: ImageBuffer::from_fn(w, h, |_, _| [r.random(), r.random(), r.random()]),
        mask: MaskMap::from_fn(w, h, |row, _| row < h / 2),
        frame_index,
        camera: side_camera(w, h),
    }
}

#[test]
fn oracle_inpaint_is_the_world_render() {
    let (w, h) = (40, 32);
    let world = SyntheticWorld::corridor(4);
    let oracle = OracleProvider::exact(world.clone());
    let req = request(3, w, h);
    assert_eq!(oracle.inpaint(&req).unwrap(), world.render(&req.camera, w, h).0);
    let boot = ProviderRequest::bootstrap("x", camera(w, h), w, h);
    assert_eq!(oracle.inpaint(&boot).unwrap(), world.render(&camera(w, h), w, h).0);
}

#[test]
fn exact_oracle_depth_is_world_depth() {
    let (w, h) = (40, 32);
    let world = SyntheticWorld::corridor(4);
    let oracle = OracleProvider::exact(world.clone());
    let cam = side_camera(w, h);
    let image = ImageBuffer::new(w, h, [0.0; 3]);
    for frame in [0, 1, 7] {
        assert_eq!(
            oracle.predict_depth(&image, frame, &cam).unwrap(),
            world.render(&cam, w, h).1
        );
    }
}

#[test]
fn perturbed_oracle_follows_the_disparity_model() {
    let (w, h) = (32, 24);
    let world = SyntheticWorld::corridor(4);
    let perturbation = Perturbation {
        scale: 0.7,
        shift: 0.05,
        field_amplitude: 0.0,
        noise_sigma: 0.0,
    };
    let oracle = OracleProvider::new(world.clone(), perturbation, 9);
    let cam = camera(w, h);
    let truth = world.render(&cam, w, h).1;
    let image = ImageBuffer::new(w, h, [0.0; 3]);
    // the first frame is exact unless asked otherwise
    assert_eq!(oracle.predict_depth(&image, 0, &cam).unwrap(), truth);
    let got = oracle.predict_depth(&image, 4, &cam).unwrap();
    for (r, c, &d) in got.indexed() {
        let expected = 1.0 / (0.7 / truth[(r, c)] + 0.05);
        assert!((d - expected).abs() <= 1e-12 * expected);
    }
}

#[test]
fn providers_are_deterministic() {
    let (w, h) = (32, 24);
    let perturbation = Perturbation {
        scale: 0.7,
        shift: 0.05,
        field_amplitude: 0.02,
        noise_sigma: 0.01,
    };
    let make = || OracleProvider::new(SyntheticWorld::corridor(4), perturbation, 21);
    let cam = side_camera(w, h);
    let image = ImageBuffer::new(w, h, [0.0; 3]);
    let (p, q) = (make(), make());
    assert_eq!(
        p.predict_depth(&image, 5, &cam).unwrap(),
        q.predict_depth(&image, 5, &cam).unwrap()
    );
    assert_ne!(
        p.predict_depth(&image, 5, &cam).unwrap(),
        p.predict_depth(&image, 6, &cam).unwrap()
    );

    let stub = StubProvider::new(11);
    let req = request(2, w, h);
    let first = stub.inpaint(&req).unwrap();
    assert_eq!(first, StubProvider::new(11).inpaint(&req).unwrap());
    assert_eq!(first, stub.texture(w, h, 2));
    assert_ne!(first, stub.inpaint(&request(3, w, h)).unwrap());
    assert_ne!(first, StubProvider::new(12).inpaint(&req).unwrap());
    let depth = stub.predict_depth(&first, 2, &cam).unwrap();
    assert_eq!(depth, stub.predict_depth(&first, 2, &cam).unwrap());
    assert!(depth.data().iter().all(|d| d.is_finite() && *d > 0.0));
}

#[test]
fn malformed_requests_are_rejected() {
    let (w, h) = (16, 12);
    let mut req = request(1, w, h);
    req.mask = MaskMap::new(w + 1, h, true);
    let err = StubProvider::new(1).inpaint(&req).unwrap_err();
    assert!(matches!(err, ProviderError::InvalidRequest(_)));
    assert!(!err.is_retriable());

    let mut boot = ProviderRequest::bootstrap("x", camera(w, h), w, h);
    boot.mask[(0, 0)] = false;
    let err = OracleProvider::exact(SyntheticWorld::default())
        .inpaint(&boot)
        .unwrap_err();
    assert!(matches!(err, ProviderError::InvalidRequest(_)));
}

#[test]
fn oracle_refuses_cameras_outside_the_world() {
    let outside = CameraPose::from_center(
        Matrix3::identity(),
        Point3::new(0.0, 0.0, 50.0),
        Intrinsics::from_vertical_fov(8, 8, 55.0),
    )
    .unwrap();
    let err = OracleProvider::exact(SyntheticWorld::default())
        .predict_depth(&ImageBuffer::new(8, 8, [0.0; 3]), 1, &outside)
        .unwrap_err();
    assert!(matches!(err, ProviderError::Unavailable(_)));
}
