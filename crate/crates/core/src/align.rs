//! Aligning provider depth to the geometry already in the scene.
//!
//! Provider depth is corrected in disparity space by a global affine map,
//! fitted robustly under an L1 loss, followed by a smooth residual field on a
//! coarse control grid fitted by regularized least squares. Nothing carries
//! over between frames: every call starts from the identity correction.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::grid::{DepthMap, Grid, MaskMap};
use crate::render::RenderOutput;

/// Smoothing of `|r|` in the IRLS weights.
const IRLS_EPSILON: f64 = 1e-8;
/// Floor on corrected disparity so corrected depth stays finite and positive.
const MIN_DISPARITY: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("alignment needs at least 2 masked pixels, got {0}")]
    Underdetermined(usize),
    #[error("degenerate fit: scale {scale} is not positive")]
    DegenerateFit { scale: f64, shift: f64 },
    #[error("raster size mismatch")]
    SizeMismatch,
    #[error("linear solve failed for the residual grid")]
    Singular,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignParams {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub lambda: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Reweighting passes of the residual grid; 0 is the plain least-squares
    /// fit.
    pub grid_reweights: usize,
}

impl Default for AlignParams {
    fn default() -> Self {
        Self {
            grid_rows: 17,
            grid_cols: 17,
            lambda: 1e4,
            max_iterations: 100,
            tolerance: 1e-6,
            grid_reweights: 10,
        }
    }
}

/// Bilinearly interpolated control grid spanning the frame: node `(i, j)`
/// sits on pixel `(i·(H−1)/(Gh−1), j·(W−1)/(Gw−1))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualGrid {
    pub values: Grid<f64>,
}

impl ResidualGrid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            values: Grid::new(cols, rows, 0.0),
        }
    }

    pub fn rows(&self) -> usize {
        self.values.height()
    }

    pub fn cols(&self) -> usize {
        self.values.width()
    }

    /// Evaluates the field at pixel `(row, col)` of a `width`×`height` frame.
    pub fn sample(&self, row: usize, col: usize, width: usize, height: usize) -> f64 {
        bilinear_weights(row, col, width, height, self.rows(), self.cols())
            .iter()
            .map(|&(node, w)| w * self.values.data()[node])
            .sum()
    }
}

/// The four (node index, weight) pairs interpolating pixel `(row, col)`.
pub fn bilinear_weights(
    row: usize,
    col: usize,
    width: usize,
    height: usize,
    grid_rows: usize,
    grid_cols: usize,
) -> [(usize, f64); 4] {
    let axis = |p: usize, n: usize, g: usize| -> (usize, f64) {
        if g < 2 || n < 2 {
            return (0, 0.0);
        }
        let t = p as f64 * (g - 1) as f64 / (n - 1) as f64;
        let i = (t.floor() as usize).min(g - 2);
        (i, t - i as f64)
    };
    let (gi, fy) = axis(row, height, grid_rows);
    let (gj, fx) = axis(col, width, grid_cols);
    let gj1 = (gj + 1).min(grid_cols - 1);
    let gi1 = (gi + 1).min(grid_rows - 1);
    [
        (gi * grid_cols + gj, (1.0 - fy) * (1.0 - fx)),
        (gi * grid_cols + gj1, (1.0 - fy) * fx),
        (gi1 * grid_cols + gj, fy * (1.0 - fx)),
        (gi1 * grid_cols + gj1, fy * fx),
    ]
}

/// Graph Laplacian of the 4-connected control grid, `rows·cols` square.
/// Its null space is the constants.
pub fn grid_laplacian(rows: usize, cols: usize) -> DMatrix<f64> {
    let n = rows * cols;
    let mut l = DMatrix::zeros(n, n);
    for i in 0..rows {
        for j in 0..cols {
            let k = i * cols + j;
            let mut link = |m: usize| {
                l[(k, k)] += 1.0;
                l[(k, m)] -= 1.0;
            };
            if i > 0 {
                link(k - cols);
            }
            if i + 1 < rows {
                link(k + cols);
            }
            if j > 0 {
                link(k - 1);
            }
            if j + 1 < cols {
                link(k + 1);
            }
        }
    }
    l
}

/// Per-frame correction; applying [`DepthCorrection::identity`] is a no-op.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthCorrection {
    pub log_scale: f64,
    /// Additive disparity offset.
    pub shift: f64,
    pub residual: ResidualGrid,
}

impl DepthCorrection {
    pub fn identity(grid_rows: usize, grid_cols: usize) -> Self {
        Self {
            log_scale: 0.0,
            shift: 0.0,
            residual: ResidualGrid::zeros(grid_rows, grid_cols),
        }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    /// Corrected depth; undefined input stays undefined.
    pub fn apply(&self, depth: &DepthMap) -> DepthMap {
        let (w, h) = (depth.width(), depth.height());
        let is_identity =
            self.log_scale == 0.0 && self.shift == 0.0 && self.residual.values.data().iter().all(|&v| v == 0.0);
        if is_identity {
            return depth.clone();
        }
        let scale = self.scale();
        Grid::from_fn(w, h, |r, c| {
            let d = depth[(r, c)];
            if !(d.is_finite() && d > 0.0) {
                return d;
            }
            let disp = scale / d + self.shift + self.residual.sample(r, c, w, h);
            1.0 / disp.max(MIN_DISPARITY)
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffineFit {
    pub scale: f64,
    pub shift: f64,
    /// Summed absolute disparity residual at the returned parameters.
    pub l1_residual: f64,
    pub iterations: usize,
    /// L1 objective before the first and after every accepted iteration.
    pub objective_history: Vec<f64>,
}

fn masked_disparities(raw: &DepthMap, target: &DepthMap, mask: &MaskMap) -> Result<(Vec<f64>, Vec<f64>), AlignError> {
    if !raw.same_shape(target) || !raw.same_shape(mask) {
        return Err(AlignError::SizeMismatch);
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for ((&m, &r), &t) in mask.data().iter().zip(raw.data()).zip(target.data()) {
        if m && r.is_finite() && r > 0.0 && t.is_finite() && t > 0.0 {
            xs.push(1.0 / r);
            ys.push(1.0 / t);
        }
    }
    if xs.len() < 2 {
        return Err(AlignError::Underdetermined(xs.len()));
    }
    Ok((xs, ys))
}

fn l1(xs: &[f64], ys: &[f64], a: f64, b: f64) -> f64 {
    xs.iter().zip(ys).map(|(x, y)| (y - (a * x + b)).abs()).sum()
}

/// Weighted least-squares line through `(x, y)`. `None` when singular.
fn weighted_line(xs: &[f64], ys: &[f64], weights: Option<&[f64]>) -> Option<(f64, f64)> {
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..xs.len() {
        let w = weights.map_or(1.0, |w| w[i]);
        sw += w;
        sx += w * xs[i];
        sy += w * ys[i];
        sxx += w * xs[i] * xs[i];
        sxy += w * xs[i] * ys[i];
    }
    let det = sw * sxx - sx * sx;
    if !(det.abs() > 1e-300) || !det.is_finite() {
        return None;
    }
    let a = (sw * sxy - sx * sy) / det;
    let b = (sxx * sy - sx * sxy) / det;
    (a.is_finite() && b.is_finite()).then_some((a, b))
}

/// Fits `target_disp ≈ a·raw_disp + b` over `mask` under an L1 loss by
/// iteratively reweighted least squares, starting from the ordinary
/// least-squares line. An iteration that would raise the L1 objective is
/// rejected and ends the fit.
pub fn fit_scale_shift_l1(raw: &DepthMap, target: &DepthMap, mask: &MaskMap) -> Result<AffineFit, AlignError> {
    fit_scale_shift_l1_with(raw, target, mask, &AlignParams::default())
}

pub fn fit_scale_shift_l1_with(
    raw: &DepthMap,
    target: &DepthMap,
    mask: &MaskMap,
    params: &AlignParams,
) -> Result<AffineFit, AlignError> {
    let (xs, ys) = masked_disparities(raw, target, mask)?;
    let fit = irls_l1(&xs, &ys, params.max_iterations, params.tolerance);
    if !(fit.scale > 0.0) {
        return Err(AlignError::DegenerateFit {
            scale: fit.scale,
            shift: fit.shift,
        });
    }
    Ok(fit)
}

fn irls_l1(xs: &[f64], ys: &[f64], max_iterations: usize, tolerance: f64) -> AffineFit {
    // a constant raw disparity leaves the slope unidentifiable
    let (mut a, mut b) = weighted_line(xs, ys, None).unwrap_or_else(|| (0.0, median(ys.to_vec())));
    let mut objective = l1(xs, ys, a, b);
    let mut history = vec![objective];
    let mut iterations = 0;
    let mut weights = vec![0.0; xs.len()];
    // residual floor and shift tolerance are relative to the target's disparity
    // scale, so the iterates are equivariant under joint disparity scaling
    let unit = ys.iter().map(|y| y.abs()).sum::<f64>() / ys.len() as f64;
    let unit = if unit > 0.0 && unit.is_finite() { unit } else { 1.0 };
    while iterations < max_iterations {
        for i in 0..xs.len() {
            let r = ys[i] - (a * xs[i] + b);
            weights[i] = 1.0 / r.abs().max(IRLS_EPSILON * unit);
        }
        let Some((na, nb)) = weighted_line(xs, ys, Some(&weights)) else {
            break;
        };
        let next = l1(xs, ys, na, nb);
        if next > objective {
            break;
        }
        iterations += 1;
        let step = (na - a).abs().max((nb - b).abs() / unit);
        a = na;
        b = nb;
        objective = next;
        history.push(objective);
        if step < tolerance {
            break;
        }
    }
    AffineFit {
        scale: a,
        shift: b,
        l1_residual: objective,
        iterations,
        objective_history: history,
    }
}

/// Median with the mean-of-middles convention for even lengths.
pub fn median(mut values: Vec<f64>) -> f64 {
    assert!(!values.is_empty(), "median of empty set");
    let n = values.len();
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Smooth disparity residual on a `grid` control lattice.
///
/// Minimizes `Σ_mask (target_disp − corrected_disp − B(g))² + λ‖L g‖²` with
/// `B` the bilinear interpolation and `L` the grid Laplacian, by solving the
/// normal equations. Cells no masked pixel touches are set by the
/// regularizer alone.
pub fn fit_residual_grid(
    corrected: &DepthMap,
    target: &DepthMap,
    mask: &MaskMap,
    grid: (usize, usize),
    lambda: f64,
) -> Result<ResidualGrid, AlignError> {
    fit_residual_grid_robust(corrected, target, mask, grid, lambda, 0)
}

/// Residual floor of the grid reweighting, in disparity units.
const GRID_REWEIGHT_FLOOR: f64 = 1e-3;

/// [`fit_residual_grid`] followed by `reweights` passes with per-pixel
/// weights `1 / max(|r|, 1e-3)`, which moves the data term toward an L1
/// fit and keeps isolated bad target pixels from bending the grid.
pub fn fit_residual_grid_robust(
    corrected: &DepthMap,
    target: &DepthMap,
    mask: &MaskMap,
    grid: (usize, usize),
    lambda: f64,
    reweights: usize,
) -> Result<ResidualGrid, AlignError> {
    joint_fit(corrected, target, mask, grid, lambda, reweights, false).map(|(_, g)| g)
}

/// Like [`fit_residual_grid_robust`], but first solves for a relative scale
/// `s` so the model is `(1 + s)·corrected_disp + B(g)`. A spatial grid alone
/// cannot absorb a scale error, which depends on disparity rather than
/// position, and would carry it wrongly into unobserved parts of the frame.
///
/// The scale is estimated on 5×5 box means of both disparity maps, taken
/// only where the whole window is usable; the filter leaves the model
/// unchanged but removes most per-pixel noise from the regressor. The grid
/// is then refitted on the unfiltered maps.
pub fn fit_scale_and_grid(
    corrected: &DepthMap,
    target: &DepthMap,
    mask: &MaskMap,
    grid: (usize, usize),
    lambda: f64,
    reweights: usize,
) -> Result<(f64, ResidualGrid), AlignError> {
    if !corrected.same_shape(target) || !corrected.same_shape(mask) {
        return Err(AlignError::SizeMismatch);
    }
    let usable = Grid::from_fn(mask.width(), mask.height(), |r, c| {
        let (x, t) = (corrected[(r, c)], target[(r, c)]);
        mask[(r, c)] && x.is_finite() && x > 0.0 && t.is_finite() && t > 0.0
    });
    let disparity = |d: &DepthMap| d.zip_map(&usable, |&d, &u| if u { 1.0 / d } else { 0.0 });
    let (x_mean, window_ok) = box_mean(&disparity(corrected), &usable, 2);
    let (t_mean, _) = box_mean(&disparity(target), &usable, 2);
    let as_depth = |g: &Grid<f64>| g.zip_map(&window_ok, |&v, &ok| if ok && v > 0.0 { 1.0 / v } else { f64::NAN });
    let (scale, _) = joint_fit(
        &as_depth(&x_mean),
        &as_depth(&t_mean),
        &window_ok,
        grid,
        lambda,
        reweights,
        true,
    )?;
    if !(1.0 + scale > 0.0) {
        return Ok((
            0.0,
            fit_residual_grid_robust(corrected, target, mask, grid, lambda, reweights)?,
        ));
    }
    let rescaled = corrected.map(|&d| d / (1.0 + scale));
    let residual = fit_residual_grid_robust(&rescaled, target, mask, grid, lambda, reweights)?;
    Ok((scale, residual))
}

/// Mean over the `(2r+1)²` window at each pixel, and whether the whole
/// window lies inside the image and `valid`.
fn box_mean(values: &Grid<f64>, valid: &MaskMap, r: usize) -> (Grid<f64>, MaskMap) {
    let (w, h) = (values.width(), values.height());
    let mut sum = vec![0.0; (w + 1) * (h + 1)];
    let mut count = vec![0u32; (w + 1) * (h + 1)];
    for row in 0..h {
        for col in 0..w {
            let i = (row + 1) * (w + 1) + col + 1;
            let ok = valid[(row, col)];
            sum[i] = sum[i - 1] + sum[i - w - 1] - sum[i - w - 2] + if ok { values[(row, col)] } else { 0.0 };
            count[i] = count[i - 1] + count[i - w - 1] - count[i - w - 2] + u32::from(ok);
        }
    }
    let side = 2 * r + 1;
    let full = (side * side) as u32;
    let mut ok = MaskMap::new(w, h, false);
    let means = Grid::from_fn(w, h, |row, col| {
        if row < r || col < r || row + r >= h || col + r >= w {
            return 0.0;
        }
        let (r0, c0, r1, c1) = (row - r, col - r, row + r + 1, col + r + 1);
        let at = |rr: usize, cc: usize| rr * (w + 1) + cc;
        let n = count[at(r1, c1)] + count[at(r0, c0)] - count[at(r0, c1)] - count[at(r1, c0)];
        if n != full {
            return 0.0;
        }
        ok[(row, col)] = true;
        (sum[at(r1, c1)] + sum[at(r0, c0)] - sum[at(r0, c1)] - sum[at(r1, c0)]) / full as f64
    });
    (means, ok)
}

fn joint_fit(
    corrected: &DepthMap,
    target: &DepthMap,
    mask: &MaskMap,
    grid: (usize, usize),
    lambda: f64,
    reweights: usize,
    with_scale: bool,
) -> Result<(f64, ResidualGrid), AlignError> {
    if !corrected.same_shape(target) || !corrected.same_shape(mask) {
        return Err(AlignError::SizeMismatch);
    }
    let (rows, cols) = grid;
    let (w, h) = (corrected.width(), corrected.height());
    // (row, col, corrected disparity, residual)
    let samples: Vec<(usize, usize, f64, f64)> = mask
        .indexed()
        .filter_map(|(r, c, &m)| {
            let (x, t) = (corrected[(r, c)], target[(r, c)]);
            (m && x.is_finite() && x > 0.0 && t.is_finite() && t > 0.0).then(|| (r, c, 1.0 / x, 1.0 / t - 1.0 / x))
        })
        .collect();
    if samples.is_empty() {
        return Ok((0.0, ResidualGrid::zeros(rows, cols)));
    }
    let n = rows * cols;
    let extra = usize::from(with_scale);
    let basis: Vec<Vec<(usize, f64)>> = samples
        .iter()
        .map(|&(r, c, disp, _)| {
            let mut b: Vec<(usize, f64)> = bilinear_weights(r, c, w, h, rows, cols)
                .into_iter()
                .filter(|&(_, wi)| wi != 0.0)
                .collect();
            if with_scale {
                b.push((n, disp));
            }
            b
        })
        .collect();
    let lap = grid_laplacian(rows, cols);
    let mut penalty = DMatrix::<f64>::zeros(n + extra, n + extra);
    penalty
        .view_mut((0, 0), (n, n))
        .copy_from(&(lap.transpose() * &lap * lambda));
    let mut weights = vec![1.0; samples.len()];
    let mut solution = DVector::<f64>::zeros(n + extra);
    for pass in 0..=reweights {
        let mut normal = penalty.clone();
        let mut rhs = DVector::<f64>::zeros(n + extra);
        for ((&(_, _, _, residual), bw), &k) in samples.iter().zip(&basis).zip(&weights) {
            for &(i, wi) in bw {
                rhs[i] += k * wi * residual;
                for &(j, wj) in bw {
                    normal[(i, j)] += k * wi * wj;
                }
            }
        }
        solution = normal
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&rhs))
            .or_else(|| normal.lu().solve(&rhs))
            .ok_or(AlignError::Singular)?;
        if pass == reweights {
            break;
        }
        for ((&(_, _, _, residual), bw), k) in samples.iter().zip(&basis).zip(weights.iter_mut()) {
            let fitted: f64 = bw.iter().map(|&(i, wi)| wi * solution[i]).sum();
            *k = 1.0 / (residual - fitted).abs().max(GRID_REWEIGHT_FLOOR);
        }
    }
    let scale = if with_scale { solution[n] } else { 0.0 };
    Ok((
        scale,
        ResidualGrid {
            values: Grid::from_vec(cols, rows, solution.iter().take(n).copied().collect()),
        },
    ))
}

/// Diagnostics of one alignment, logged per frame.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlignReport {
    pub scale: f64,
    pub shift: f64,
    pub iterations: usize,
    pub masked_pixels: usize,
    /// Mean absolute disparity residual on the mask, before and after.
    pub raw_l1_disparity: f64,
    pub affine_l1_disparity: f64,
    pub final_l1_disparity: f64,
    /// Mean absolute depth residual on the mask after full correction.
    pub final_l1_depth: f64,
    pub fallback: bool,
    pub warning: Option<String>,
}

pub struct AlignOutcome {
    pub depth: DepthMap,
    pub correction: DepthCorrection,
    pub report: AlignReport,
}

fn mean_l1(a: &DepthMap, b: &DepthMap, mask: &MaskMap, disparity: bool) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((&m, &x), &y) in mask.data().iter().zip(a.data()).zip(b.data()) {
        if m && x.is_finite() && x > 0.0 && y.is_finite() && y > 0.0 {
            sum += if disparity {
                (1.0 / x - 1.0 / y).abs()
            } else {
                (x - y).abs()
            };
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Mean absolute depth residual of `depth` against `target` over `mask`.
pub fn masked_depth_l1(depth: &DepthMap, target: &DepthMap, mask: &MaskMap) -> f64 {
    mean_l1(depth, target, mask, false)
}

/// Aligns `raw` to the rendered geometry on `render.mask` and applies the
/// correction to the whole frame.
///
/// A degenerate affine fit falls back to a pure scale equal to the median
/// disparity ratio, recorded as a warning in the report. Fewer than two
/// usable pixels is an error.
pub fn align_depth(raw: &DepthMap, render: &RenderOutput) -> Result<AlignOutcome, AlignError> {
    align_depth_with(raw, &render.depth, &render.mask, &AlignParams::default())
}

pub fn align_depth_with(
    raw: &DepthMap,
    target: &DepthMap,
    mask: &MaskMap,
    params: &AlignParams,
) -> Result<AlignOutcome, AlignError> {
    let (xs, ys) = masked_disparities(raw, target, mask)?;
    let (mut fit, fallback, warning) = match fit_scale_shift_l1_with(raw, target, mask, params) {
        Ok(fit) => (fit, false, None),
        Err(AlignError::DegenerateFit { scale, shift }) => {
            let ratio = median(xs.iter().zip(&ys).map(|(x, y)| y / x).collect());
            let warning =
                format!("degenerate affine fit (scale {scale:.4e}, shift {shift:.4e}); using median ratio {ratio:.6}");
            log::warn!("{warning}");
            let fit = AffineFit {
                scale: ratio,
                shift: 0.0,
                l1_residual: l1(&xs, &ys, ratio, 0.0),
                iterations: 0,
                objective_history: Vec::new(),
            };
            (fit, true, Some(warning))
        }
        Err(e) => return Err(e),
    };
    if !(fit.scale > 0.0) {
        // even the median ratio is unusable; leave depth untouched
        fit.scale = 1.0;
        fit.shift = 0.0;
    }
    let mut correction = DepthCorrection::identity(params.grid_rows, params.grid_cols);
    correction.log_scale = fit.scale.ln();
    correction.shift = fit.shift;
    let affine = correction.apply(raw);
    let (refine, residual) = fit_scale_and_grid(
        &affine,
        target,
        mask,
        (params.grid_rows, params.grid_cols),
        params.lambda,
        params.grid_reweights,
    )?;
    correction.log_scale += (1.0 + refine).ln();
    correction.shift *= 1.0 + refine;
    correction.residual = residual;
    let depth = correction.apply(raw);
    let report = AlignReport {
        scale: fit.scale,
        shift: fit.shift,
        iterations: fit.iterations,
        masked_pixels: xs.len(),
        raw_l1_disparity: mean_l1(raw, target, mask, true),
        affine_l1_disparity: mean_l1(&affine, target, mask, true),
        final_l1_disparity: mean_l1(&depth, target, mask, true),
        final_l1_depth: mean_l1(&depth, target, mask, false),
        fallback,
        warning,
    };
    log::debug!(
        "align: scale={:.5} shift={:.5} iters={} l1_disp {:.3e} -> {:.3e}",
        report.scale,
        report.shift,
        report.iterations,
        report.raw_l1_disparity,
        report.final_l1_disparity
    );
    Ok(AlignOutcome {
        depth,
        correction,
        report,
    })
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("need the same nonzero number of provider and reference maps ({0} vs {1})")]
    Shape(usize, usize),
    #[error("provider median depth is zero or undefined")]
    ZeroMedian,
}

/// Global scale bringing provider depth to the reference's range: the ratio
/// of the median over all valid reference pixels to the median over all
/// valid provider pixels.
pub fn calibrate_global_scale(provider: &[DepthMap], reference: &[DepthMap]) -> Result<f64, CalibrationError> {
    if provider.is_empty() || provider.len() != reference.len() {
        return Err(CalibrationError::Shape(provider.len(), reference.len()));
    }
    let collect = |maps: &[DepthMap]| -> Vec<f64> {
        maps.iter()
            .flat_map(|m| m.data().iter().copied())
            .filter(|d| d.is_finite() && *d > 0.0)
            .collect()
    };
    let p = collect(provider);
    let r = collect(reference);
    if p.is_empty() || r.is_empty() {
        return Err(CalibrationError::ZeroMedian);
    }
    let pm = median(p);
    if pm == 0.0 {
        return Err(CalibrationError::ZeroMedian);
    }
    Ok(median(r) / pm)
}
