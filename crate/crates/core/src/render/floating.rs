use crate::camera::CameraPose;
use crate::grid::{DepthMap, MaskMap};

/// Relative depth difference under which two splats count as tied.
const DEPTH_TIE: f64 = 1e-9;

/// Pixels of the next view that would be filled by content beyond the
/// previous frame's borders; see [`floating_region_mask_with`].
pub fn floating_region_mask(prev_depth: &DepthMap, prev_camera: &CameraPose, next_camera: &CameraPose) -> MaskMap {
    floating_region_mask_with(prev_depth, prev_camera, next_camera, 1.5)
}

/// Edge-replicates `prev_depth` out to `pad_factor` times its extent, warps
/// every padded pixel into `next_camera` with a one-pixel splat, and marks
/// target pixels whose nearest splat came from the padded band.
///
/// Both cameras must carry intrinsics for the resolution of `prev_depth`.
/// A splat reaches every pixel whose center lies strictly within one pixel
/// of it on both axes. Nearest depth wins; depths within a relative 1e-9 are
/// tied and go to the splat landing closer to the pixel center.
pub fn floating_region_mask_with(
    prev_depth: &DepthMap,
    prev_camera: &CameraPose,
    next_camera: &CameraPose,
    pad_factor: f64,
) -> MaskMap {
    let (w, h) = (prev_depth.width(), prev_depth.height());
    let mut best_z = vec![f64::INFINITY; w * h];
    let mut best_dist = vec![f64::INFINITY; w * h];
    let mut from_pad = vec![false; w * h];
    if w == 0 || h == 0 {
        return MaskMap::new(w, h, false);
    }
    let pad_x = ((pad_factor - 1.0).max(0.0) * 0.5 * w as f64).round() as isize;
    let pad_y = ((pad_factor - 1.0).max(0.0) * 0.5 * h as f64).round() as isize;

    for pr in -pad_y..h as isize + pad_y {
        for pc in -pad_x..w as isize + pad_x {
            let in_band = pr < 0 || pc < 0 || pr >= h as isize || pc >= w as isize;
            let d = if in_band {
                band_depth(prev_depth, pr, pc)
            } else {
                prev_depth[(pr as usize, pc as usize)]
            };
            if !(d.is_finite() && d > 0.0) {
                continue;
            }
            let world = prev_camera.unproject(pc as f64 + 0.5, pr as f64 + 0.5, d);
            let Some((u, v, z)) = next_camera.project(&world) else {
                continue;
            };
            // candidate pixels: centers within (−1, 1) of (u, v) on both axes
            let c0 = (u - 1.5).floor().max(0.0) as isize;
            let c1 = ((u + 0.5).ceil() as isize).min(w as isize - 1);
            let r0 = (v - 1.5).floor().max(0.0) as isize;
            let r1 = ((v + 0.5).ceil() as isize).min(h as isize - 1);
            if !(u.is_finite() && v.is_finite()) {
                continue;
            }
            for r in r0..=r1 {
                let dy = v - (r as f64 + 0.5);
                if dy.abs() >= 1.0 {
                    continue;
                }
                for c in c0..=c1 {
                    let dx = u - (c as f64 + 0.5);
                    if dx.abs() >= 1.0 {
                        continue;
                    }
                    let idx = r as usize * w + c as usize;
                    let dist = dx * dx + dy * dy;
                    let cur = best_z[idx];
                    let tied = (z - cur).abs() <= DEPTH_TIE * cur.min(z);
                    if (!tied && z < cur) || (tied && dist < best_dist[idx]) {
                        best_z[idx] = z;
                        best_dist[idx] = dist;
                        from_pad[idx] = in_band;
                    }
                }
            }
        }
    }
    MaskMap::from_vec(w, h, from_pad)
}

/// Edge-replicated depth for a padded pixel. When the edge pixel is empty,
/// the first valid pixel inward along the line to the image center is used.
fn band_depth(depth: &DepthMap, pr: isize, pc: isize) -> f64 {
    let (w, h) = (depth.width() as isize, depth.height() as isize);
    let (r0, c0) = (pr.clamp(0, h - 1), pc.clamp(0, w - 1));
    let (dr, dc) = ((h / 2 - r0).signum(), (w / 2 - c0).signum());
    let (dr, dc) = match (pr < 0 || pr >= h, pc < 0 || pc >= w) {
        (true, true) => (dr, dc),
        (true, false) => (dr, 0),
        _ => (0, dc),
    };
    let reach = (w.min(h) / 8).max(1);
    for i in 0..=reach {
        let d = *depth.clamped(r0 + i * dr, c0 + i * dc);
        if d.is_finite() && d > 0.0 {
            return d;
        }
    }
    f64::NAN
}
