//! Dense pyramidal Lucas-Kanade optical flow, plus the forward mask warp the
//! repair stage uses to project an object mask from one frame into another.
//!
//! The estimator is the classic coarse-to-fine scheme: build Gaussian
//! pyramids of both frames' luminance, solve the LK normal equations per
//! pixel over a square window at the coarsest level, then upsample the field
//! (doubling the vectors) and refine at each finer level. Pixels whose
//! structure tensor is too close to singular — the smallest eigenvalue,
//! normalized by window size, falls below [`FlowParams::eigen_floor`] — keep
//! the estimate inherited from the coarser level instead of receiving an
//! unstable update. A frame pair with no usable texture anywhere therefore
//! comes back as an all-zero field flagged low-confidence.

use crate::mask::{BinaryMask, RgbFrame};

/// Tuning knobs for [`estimate_flow`].
#[derive(Debug, Clone, PartialEq)]
pub struct FlowParams {
    /// Side length of the square correlation window. Must be odd and >= 3.
    pub window_size: usize,
    /// Number of pyramid levels (>= 1). Levels that would shrink the image
    /// below a usable size are skipped automatically.
    pub pyramid_levels: usize,
    /// Fixed-point iterations of the normal-equation solve per level.
    pub iterations_per_level: usize,
    /// Minimum normalized structure-tensor eigenvalue for a pixel to receive
    /// an update. Luminance is normalized to [0, 1] and the tensor is divided
    /// by the window pixel count, so this threshold is scale-free.
    pub eigen_floor: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            window_size: 15,
            pyramid_levels: 3,
            iterations_per_level: 5,
            eigen_floor: 1e-4,
        }
    }
}

impl FlowParams {
    fn assert_valid(&self) {
        assert!(
            self.window_size >= 3 && self.window_size % 2 == 1,
            "window_size must be odd and >= 3, got {}",
            self.window_size
        );
        assert!(self.pyramid_levels >= 1, "pyramid_levels must be >= 1");
        assert!(self.iterations_per_level >= 1, "iterations_per_level must be >= 1");
        assert!(
            self.eigen_floor.is_finite() && self.eigen_floor >= 0.0,
            "eigen_floor must be finite and non-negative"
        );
    }
}

/// A dense per-pixel displacement field. `vector(r, c)` is `(drow, dcol)`:
/// the content at `(r, c)` in the source frame appears near
/// `(r + drow, c + dcol)` in the target frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    /// Row-major `(drow, dcol)` pairs.
    vectors: Vec<[f32; 2]>,
    /// Fraction of pixels that passed the texture gate at the finest level.
    coverage: f32,
}

impl FlowField {
    /// An all-zero field (marked low-confidence: nothing was estimated).
    pub fn zero(width: usize, height: usize) -> Self {
        Self { width, height, vectors: vec![[0.0, 0.0]; width * height], coverage: 0.0 }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn vector(&self, row: usize, col: usize) -> [f32; 2] {
        self.vectors[row * self.width + col]
    }

    pub fn vectors(&self) -> &[[f32; 2]] {
        &self.vectors
    }

    /// Fraction of pixels whose estimate came from actual image evidence.
    pub fn coverage(&self) -> f32 {
        self.coverage
    }

    /// True when essentially no pixel had enough texture to estimate from
    /// (e.g. both frames constant). The field is then all zeros and callers
    /// should not base corrections on it.
    pub fn low_confidence(&self) -> bool {
        self.coverage <= f32::EPSILON
    }
}

/// Elementwise negation: the cheap stand-in for the reverse-direction field
/// when projecting masks backwards. Confidence is carried over unchanged.
pub fn negate_flow(flow: &FlowField) -> FlowField {
    FlowField {
        width: flow.width,
        height: flow.height,
        vectors: flow.vectors.iter().map(|v| [-v[0], -v[1]]).collect(),
        coverage: flow.coverage,
    }
}

/// Projects a mask along a flow field by forward mapping: every true pixel
/// moves to the nearest integer target position; targets outside the raster
/// are dropped. Many-to-one collisions simply merge, so the warped area never
/// exceeds the input area.
pub fn warp_mask(mask: &BinaryMask, flow: &FlowField) -> BinaryMask {
    assert!(
        mask.width() == flow.width && mask.height() == flow.height,
        "warp_mask: mask {}x{} vs flow {}x{}",
        mask.width(),
        mask.height(),
        flow.width,
        flow.height
    );
    let mut out = BinaryMask::empty(mask.width(), mask.height());
    for (r, c) in mask.true_pixels() {
        let [dr, dc] = flow.vector(r, c);
        let tr = (r as f32 + dr).round() as isize;
        let tc = (c as f32 + dc).round() as isize;
        if tr >= 0 && tc >= 0 && (tr as usize) < mask.height() && (tc as usize) < mask.width() {
            out.set(tr as usize, tc as usize, true);
        }
    }
    out
}

/// A single grayscale pyramid level.
struct Level {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Level {
    #[inline]
    fn at(&self, row: isize, col: isize) -> f32 {
        // Replicate borders: clamp out-of-range coordinates.
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let c = col.clamp(0, self.width as isize - 1) as usize;
        self.data[r * self.width + c]
    }

    /// Bilinear sample with replicated borders.
    fn sample(&self, row: f32, col: f32) -> f32 {
        let r0 = row.floor();
        let c0 = col.floor();
        let fr = row - r0;
        let fc = col - c0;
        let (r0, c0) = (r0 as isize, c0 as isize);
        let v00 = self.at(r0, c0);
        let v01 = self.at(r0, c0 + 1);
        let v10 = self.at(r0 + 1, c0);
        let v11 = self.at(r0 + 1, c0 + 1);
        let top = v00 + (v01 - v00) * fc;
        let bottom = v10 + (v11 - v10) * fc;
        top + (bottom - top) * fr
    }
}

/// Rec. 601 luma, normalized to [0, 1].
fn to_luminance(frame: &RgbFrame) -> Level {
    let (w, h) = (frame.width(), frame.height());
    let mut data = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let [red, green, blue] = frame.rgb(r, c);
            let y = 0.299 * red as f32 + 0.587 * green as f32 + 0.114 * blue as f32;
            data.push(y / 255.0);
        }
    }
    Level { width: w, height: h, data }
}

/// 5-tap binomial blur ([1 4 6 4 1] / 16), separable, replicated borders,
/// then decimation by two. The standard pyramid reduction step.
fn downsample(level: &Level) -> Level {
    const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let (w, h) = (level.width, level.height);
    let mut horiz = vec![0.0f32; w * h];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (i, k) in K.iter().enumerate() {
                acc += k * level.at(r as isize, c as isize + i as isize - 2);
            }
            horiz[r * w + c] = acc;
        }
    }
    let blurred = Level { width: w, height: h, data: horiz };
    let (ow, oh) = (w.div_ceil(2), h.div_ceil(2));
    let mut data = Vec::with_capacity(ow * oh);
    for r in 0..oh {
        for c in 0..ow {
            let mut acc = 0.0;
            for (i, k) in K.iter().enumerate() {
                acc += k * blurred.at(2 * r as isize + i as isize - 2, 2 * c as isize);
            }
            data.push(acc);
        }
    }
    Level { width: ow, height: oh, data }
}

/// Central-difference gradients with replicated borders.
fn gradients(level: &Level) -> (Vec<f32>, Vec<f32>) {
    let (w, h) = (level.width, level.height);
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            gx[i] = 0.5 * (level.at(r as isize, c as isize + 1) - level.at(r as isize, c as isize - 1));
            gy[i] = 0.5 * (level.at(r as isize + 1, c as isize) - level.at(r as isize - 1, c as isize));
        }
    }
    (gx, gy)
}

/// Summed-area table over `data` (f64 accumulation), with one extra row and
/// column of zeros so window sums are four lookups.
fn integral(data: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut sat = vec![0.0f64; (w + 1) * (h + 1)];
    for r in 0..h {
        let mut row_sum = 0.0;
        for c in 0..w {
            row_sum += data[r * w + c];
            sat[(r + 1) * (w + 1) + (c + 1)] = sat[r * (w + 1) + (c + 1)] + row_sum;
        }
    }
    sat
}

/// Sum over the rectangle [r0, r1] x [c0, c1], inclusive, clamped to bounds.
fn window_sum(sat: &[f64], w: usize, h: usize, r0: isize, r1: isize, c0: isize, c1: isize) -> f64 {
    let r0 = r0.max(0) as usize;
    let c0 = c0.max(0) as usize;
    let r1 = (r1.min(h as isize - 1)) as usize;
    let c1 = (c1.min(w as isize - 1)) as usize;
    sat[(r1 + 1) * (w + 1) + (c1 + 1)] + sat[r0 * (w + 1) + c0]
        - sat[r0 * (w + 1) + (c1 + 1)]
        - sat[(r1 + 1) * (w + 1) + c0]
}

/// Dense Lucas-Kanade flow from `src` to `dst`.
///
/// Both frames must share dimensions and `params` must be valid (asserted).
/// Degenerate inputs are not an error: with no texture anywhere the result is
/// the zero field with [`FlowField::low_confidence`] set.
pub fn estimate_flow(src: &RgbFrame, dst: &RgbFrame, params: &FlowParams) -> FlowField {
    params.assert_valid();
    assert!(
        src.width() == dst.width() && src.height() == dst.height(),
        "estimate_flow: frame dimensions differ ({}x{} vs {}x{})",
        src.width(),
        src.height(),
        dst.width(),
        dst.height()
    );

    let (width, height) = (src.width(), src.height());
    let mut src_pyr = vec![to_luminance(src)];
    let mut dst_pyr = vec![to_luminance(dst)];
    for _ in 1..params.pyramid_levels {
        let next = downsample(src_pyr.last().unwrap());
        // Stop early rather than produce degenerate postage-stamp levels.
        if next.width < 4 || next.height < 4 {
            break;
        }
        src_pyr.push(next);
        dst_pyr.push(downsample(dst_pyr.last().unwrap()));
    }

    let radius = (params.window_size / 2) as isize;
    let window_px = (params.window_size * params.window_size) as f64;

    let coarsest = src_pyr.len() - 1;
    let mut flow_r = vec![0.0f32; src_pyr[coarsest].width * src_pyr[coarsest].height];
    let mut flow_c = vec![0.0f32; src_pyr[coarsest].width * src_pyr[coarsest].height];
    let mut coverage = 0.0f32;

    for lvl in (0..src_pyr.len()).rev() {
        let s = &src_pyr[lvl];
        let d = &dst_pyr[lvl];
        let (w, h) = (s.width, s.height);
        let (gx, gy) = gradients(s);

        // Structure tensor entries, window-summed via integral images. The
        // tensor depends only on the source level, so one pass serves every
        // iteration.
        let gxx: Vec<f64> = gx.iter().map(|&v| (v as f64) * v as f64).collect();
        let gxy: Vec<f64> = gx.iter().zip(&gy).map(|(&x, &y)| x as f64 * y as f64).collect();
        let gyy: Vec<f64> = gy.iter().map(|&v| (v as f64) * v as f64).collect();
        let sat_xx = integral(&gxx, w, h);
        let sat_xy = integral(&gxy, w, h);
        let sat_yy = integral(&gyy, w, h);

        let mut updated = 0usize;
        let max_disp = w.max(h) as f32;

        // Per-pixel gate + normal-equation matrix.
        let mut a11 = vec![0.0f64; w * h];
        let mut a12 = vec![0.0f64; w * h];
        let mut a22 = vec![0.0f64; w * h];
        let mut usable = vec![false; w * h];
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                let (ri, ci) = (r as isize, c as isize);
                let sxx = window_sum(&sat_xx, w, h, ri - radius, ri + radius, ci - radius, ci + radius);
                let sxy = window_sum(&sat_xy, w, h, ri - radius, ri + radius, ci - radius, ci + radius);
                let syy = window_sum(&sat_yy, w, h, ri - radius, ri + radius, ci - radius, ci + radius);
                let trace = sxx + syy;
                let det_part = ((sxx - syy) * (sxx - syy) + 4.0 * sxy * sxy).sqrt();
                let min_eig = 0.5 * (trace - det_part) / window_px;
                if min_eig >= params.eigen_floor {
                    usable[i] = true;
                    a11[i] = sxx;
                    a12[i] = sxy;
                    a22[i] = syy;
                    updated += 1;
                }
            }
        }

        for _ in 0..params.iterations_per_level {
            for r in 0..h {
                for c in 0..w {
                    let i = r * w + c;
                    if !usable[i] {
                        continue;
                    }
                    let (vr, vc) = (flow_r[i], flow_c[i]);
                    // Right-hand side: correlate template gradients with the
                    // residual against the warped target window.
                    let mut br = 0.0f64;
                    let mut bc = 0.0f64;
                    for dr in -radius..=radius {
                        for dc in -radius..=radius {
                            let rr = r as isize + dr;
                            let cc = c as isize + dc;
                            let template = s.at(rr, cc);
                            let warped = d.sample(rr as f32 + vr, cc as f32 + vc);
                            let residual = (template - warped) as f64;
                            // Gradient lookup replicates borders too.
                            let gr = rr.clamp(0, h as isize - 1) as usize;
                            let gc = cc.clamp(0, w as isize - 1) as usize;
                            br += gy[gr * w + gc] as f64 * residual;
                            bc += gx[gr * w + gc] as f64 * residual;
                        }
                    }
                    let (dr_step, dc_step) = solve_2x2(a22[i], a12[i], a11[i], br, bc);
                    flow_r[i] = (vr + dr_step as f32).clamp(-max_disp, max_disp);
                    flow_c[i] = (vc + dc_step as f32).clamp(-max_disp, max_disp);
                }
            }
        }

        if lvl == 0 {
            coverage = updated as f32 / (w * h) as f32;
        } else {
            // Upsample to the next finer level, doubling the displacement.
            let fine = &src_pyr[lvl - 1];
            let (fw, fh) = (fine.width, fine.height);
            let lvl_r = Level { width: w, height: h, data: flow_r.clone() };
            let lvl_c = Level { width: w, height: h, data: flow_c.clone() };
            let mut next_r = vec![0.0f32; fw * fh];
            let mut next_c = vec![0.0f32; fw * fh];
            for r in 0..fh {
                for c in 0..fw {
                    let sr = r as f32 / 2.0;
                    let sc = c as f32 / 2.0;
                    next_r[r * fw + c] = 2.0 * lvl_r.sample(sr, sc);
                    next_c[r * fw + c] = 2.0 * lvl_c.sample(sr, sc);
                }
            }
            flow_r = next_r;
            flow_c = next_c;
        }
    }

    let vectors = flow_r
        .iter()
        .zip(&flow_c)
        .map(|(&r, &c)| [r, c])
        .collect();
    FlowField { width, height, vectors, coverage }
}

/// Solves the symmetric 2x2 LK normal equations, rows ordered as
/// (row-gradient, column-gradient):
///
/// ```text
/// [a_rr a_rc] [dr]   [br]
/// [a_rc a_cc] [dc] = [bc]
/// ```
///
/// Near-singular systems return a zero step rather than exploding.
fn solve_2x2(a_rr: f64, a_rc: f64, a_cc: f64, br: f64, bc: f64) -> (f64, f64) {
    let det = a_rr * a_cc - a_rc * a_rc;
    if det.abs() < 1e-12 {
        return (0.0, 0.0);
    }
    let dr = (a_cc * br - a_rc * bc) / det;
    let dc = (a_rr * bc - a_rc * br) / det;
    (dr, dc)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Smooth, information-rich test pattern: mixed sinusoids plus a hashed
    /// per-pixel perturbation so every window carries gradients in both axes.
    fn textured_value(r: isize, c: isize) -> u8 {
        let rf = r as f32;
        let cf = c as f32;
        let smooth = 0.5
            + 0.2 * (0.37 * cf).sin()
            + 0.2 * (0.29 * rf).cos()
            + 0.1 * (0.13 * (rf + cf)).sin();
        let hash = {
            let mut x = (r as u64).wrapping_mul(0x9E3779B97F4A7C15) ^ (c as u64).wrapping_mul(0xD1B54A32D192ED03);
            x ^= x >> 31;
            x = x.wrapping_mul(0xBF58476D1CE4E5B9);
            x ^= x >> 27;
            (x % 32) as f32 / 255.0
        };
        ((smooth * 0.8 + hash).clamp(0.0, 1.0) * 255.0) as u8
    }

    fn textured_frame(w: usize, h: usize) -> RgbFrame {
        RgbFrame::from_fn(w, h, |r, c| {
            let v = textured_value(r as isize, c as isize);
            [v, v, v]
        })
    }

    /// `src` translated by integer `(drow, dcol)` with replicated borders.
    fn translated_frame(w: usize, h: usize, drow: isize, dcol: isize) -> RgbFrame {
        RgbFrame::from_fn(w, h, |r, c| {
            let sr = (r as isize - drow).clamp(0, h as isize - 1);
            let sc = (c as isize - dcol).clamp(0, w as isize - 1);
            let v = textured_value(sr, sc);
            [v, v, v]
        })
    }

    fn median(mut values: Vec<f32>) -> f32 {
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values[values.len() / 2]
    }

    #[test]
    fn identity_frames_give_near_zero_flow() {
        let f = textured_frame(48, 48);
        let flow = estimate_flow(&f, &f, &FlowParams::default());
        assert!(!flow.low_confidence());
        for v in flow.vectors() {
            assert!(v[0].abs() < 1e-3 && v[1].abs() < 1e-3, "non-zero flow {v:?}");
        }
    }

    #[test]
    fn integer_translation_recovered_within_half_pixel() {
        let (w, h) = (64, 64);
        let src = textured_frame(w, h);
        let dst = translated_frame(w, h, 2, 3);
        let flow = estimate_flow(&src, &dst, &FlowParams::default());
        assert!(!flow.low_confidence());
        let rows: Vec<f32> = flow.vectors().iter().map(|v| v[0]).collect();
        let cols: Vec<f32> = flow.vectors().iter().map(|v| v[1]).collect();
        assert!((median(rows) - 2.0).abs() <= 0.5);
        assert!((median(cols) - 3.0).abs() <= 0.5);
    }

    #[test]
    fn constant_frames_flag_low_confidence() {
        let flat = RgbFrame::from_fn(32, 32, |_, _| [90, 90, 90]);
        let flow = estimate_flow(&flat, &flat, &FlowParams::default());
        assert!(flow.low_confidence());
        assert!(flow.vectors().iter().all(|v| v == &[0.0, 0.0]));
    }

    #[test]
    fn flat_patch_keeps_prior_estimate() {
        // Single pyramid level, so the prior at gated pixels is exactly zero:
        // the flat patch's center must emit (0, 0) while the textured
        // surround tracks the translation.
        let (w, h) = (64, 64);
        let patch = |r: usize, c: usize| (20..44).contains(&r) && (20..44).contains(&c);
        let src = RgbFrame::from_fn(w, h, |r, c| {
            if patch(r, c) {
                [128, 128, 128]
            } else {
                let v = textured_value(r as isize, c as isize);
                [v, v, v]
            }
        });
        let dst = RgbFrame::from_fn(w, h, |r, c| {
            if patch(r, c) {
                [128, 128, 128]
            } else {
                let sr = (r as isize - 1).clamp(0, h as isize - 1);
                let sc = (c as isize - 2).clamp(0, w as isize - 1);
                // Keep the patch fixed; translate only the surround.
                if patch(sr as usize, sc as usize) {
                    [128, 128, 128]
                } else {
                    let v = textured_value(sr, sc);
                    [v, v, v]
                }
            }
        });
        let params = FlowParams { pyramid_levels: 1, ..FlowParams::default() };
        let flow = estimate_flow(&src, &dst, &params);
        let center = flow.vector(32, 32);
        assert_eq!(center, [0.0, 0.0], "gated pixel must keep its prior");
        let border: Vec<f32> = (0..w).map(|c| flow.vector(4, c)[1]).collect();
        assert!((median(border) - 2.0).abs() <= 0.5);
    }

    #[test]
    fn negate_flow_flips_every_vector() {
        let src = textured_frame(32, 32);
        let dst = translated_frame(32, 32, 1, 1);
        let flow = estimate_flow(&src, &dst, &FlowParams::default());
        let neg = negate_flow(&flow);
        for (a, b) in flow.vectors().iter().zip(neg.vectors()) {
            assert_eq!([-a[0], -a[1]], *b);
        }
        assert_eq!(flow.coverage(), neg.coverage());
    }

    #[test]
    fn warp_mask_translates_by_rounded_vectors() {
        let mut flow = FlowField::zero(8, 8);
        for v in flow.vectors.iter_mut() {
            *v = [1.0, 2.0];
        }
        let mask = BinaryMask::from_fn(8, 8, |r, c| r < 2 && c < 2);
        let warped = warp_mask(&mask, &flow);
        let expected = BinaryMask::from_fn(8, 8, |r, c| (1..3).contains(&r) && (2..4).contains(&c));
        assert_eq!(warped, expected);
    }

    #[test]
    fn warp_mask_never_grows_area() {
        // A field that squeezes everything onto one pixel.
        let mut flow = FlowField::zero(6, 6);
        for (i, v) in flow.vectors.iter_mut().enumerate() {
            let (r, c) = (i / 6, i % 6);
            *v = [3.0 - r as f32, 3.0 - c as f32];
        }
        let mask = BinaryMask::from_fn(6, 6, |_, _| true);
        let warped = warp_mask(&mask, &flow);
        assert!(warped.area() <= mask.area());
        assert_eq!(warped.area(), 1);
    }

    #[test]
    fn determinism_same_inputs_same_field() {
        let src = textured_frame(40, 40);
        let dst = translated_frame(40, 40, 1, 2);
        let a = estimate_flow(&src, &dst, &FlowParams::default());
        let b = estimate_flow(&src, &dst, &FlowParams::default());
        assert_eq!(a, b);
    }
}
