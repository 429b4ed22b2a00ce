//! Exact front-to-back alpha blending of depth-ordered splats, the warp-level
//! scan/reduce primitives used by the Gaussian-wise kernels, and the sequential
//! reference renderer that every kernel is checked against.

use std::ops::{Add, Mul};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::preprocess::{Gaussian2D, TileBinning};

pub const WARP_SIZE: usize = 32;
/// Upper clamp on per-splat alpha; keeps `1 - α` away from zero.
pub const ALPHA_CLAMP: f32 = 0.99;
/// Splats below this alpha are skipped.
pub const MIN_ALPHA: f32 = 1.0 / 255.0;
/// A pixel stops once its transmittance would fall below this.
pub const T_STOP: f32 = 1e-4;

/// Gaussian exponent and clamped alpha of `g` at `pixel`.
pub fn eval_alpha(g: &Gaussian2D, pixel: [f32; 2]) -> (f32, f32) {
    let dx = pixel[0] - g.xy[0];
    let dy = pixel[1] - g.xy[1];
    let [a, b, c] = g.conic;
    let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
    let alpha = (g.opacity * power.exp()).min(ALPHA_CLAMP);
    (power, alpha)
}

/// Sample position of pixel `(px, py)`.
#[inline]
pub fn pixel_center(px: u32, py: u32) -> [f32; 2] {
    [px as f32 + 0.5, py as f32 + 0.5]
}

/// One candidate contribution to a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendStep {
    pub alpha: f32,
    pub color: [f32; 3],
    pub depth: f32,
}

impl BlendStep {
    /// Evaluates `g` at `pixel`. A positive exponent is folded into `alpha = 0`
    /// so the step is skipped exactly like the `power > 0` branch.
    pub fn evaluate(g: &Gaussian2D, pixel: [f32; 2]) -> Self {
        let (power, alpha) = eval_alpha(g, pixel);
        BlendStep {
            alpha: if power > 0.0 { 0.0 } else { alpha },
            color: g.color,
            depth: g.depth,
        }
    }

    #[inline]
    pub fn is_skipped(&self) -> bool {
        self.alpha < MIN_ALPHA
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Skipped,
    Accumulated,
    Terminated,
}

/// Running accumulators of one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelState {
    pub color: [f32; 3],
    pub weight: f32,
    pub depth: f32,
    pub t: f32,
    /// Steps consumed so far, skipped ones included.
    pub steps: u32,
    pub contrib: u32,
    pub term: Option<u32>,
}

impl Default for PixelState {
    fn default() -> Self {
        PixelState {
            color: [0.0; 3],
            weight: 0.0,
            depth: 0.0,
            t: 1.0,
            steps: 0,
            contrib: 0,
            term: None,
        }
    }
}

impl PixelState {
    pub fn is_finished(&self) -> bool {
        self.term.is_some()
    }

    /// Applies one step. A terminating step commits nothing: neither its
    /// contribution nor its transmittance factor.
    pub fn step(&mut self, s: &BlendStep) -> StepOutcome {
        debug_assert!(!self.is_finished());
        self.steps += 1;
        if s.is_skipped() {
            return StepOutcome::Skipped;
        }
        let next_t = self.t * (1.0 - s.alpha);
        if next_t < T_STOP {
            self.term = Some(self.steps);
            return StepOutcome::Terminated;
        }
        let w = s.alpha * self.t;
        for (acc, c) in self.color.iter_mut().zip(s.color) {
            *acc += c * w;
        }
        self.depth += s.depth * w;
        self.weight += w;
        self.t = next_t;
        self.contrib += 1;
        StepOutcome::Accumulated
    }

    pub fn finalize(self, background: [f32; 3]) -> PixelResult {
        let mut color = self.color;
        for (c, bg) in color.iter_mut().zip(background) {
            *c += bg * self.t;
        }
        PixelResult {
            color,
            out_alpha: 1.0 - self.t,
            out_depth: self.depth,
            final_t: self.t,
            contrib_count: self.contrib,
            term_index: self.term,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelResult {
    pub color: [f32; 3],
    pub out_alpha: f32,
    /// `Σ depth·α·T`, not normalised by alpha.
    pub out_depth: f32,
    pub final_t: f32,
    pub contrib_count: u32,
    /// 1-based position of the step that triggered early stop.
    pub term_index: Option<u32>,
}

pub fn blend_pixel(steps: &[BlendStep], background: [f32; 3]) -> PixelResult {
    let mut state = PixelState::default();
    for s in steps {
        if state.step(s) == StepOutcome::Terminated {
            break;
        }
    }
    state.finalize(background)
}

pub fn termination_index(steps: &[BlendStep]) -> Option<u32> {
    blend_pixel(steps, [0.0; 3]).term_index
}

/// Inclusive warp scan of `1 - α` values by shuffle-up doubling (offsets 1, 2,
/// 4, 8, 16), scaled by the incoming transmittance. Lane `k` ends with
/// `t_in · Π_{j≤k} x[j]`; the second value is lane 31, the broadcast `t`.
pub fn warp_prefix_product<T>(one_minus_alphas: &[T; WARP_SIZE], t_in: T) -> ([T; WARP_SIZE], T)
where
    T: Copy + Mul<Output = T>,
{
    let mut lanes = *one_minus_alphas;
    let mut offset = 1;
    while offset < WARP_SIZE {
        let shuffled = lanes;
        for lane in offset..WARP_SIZE {
            lanes[lane] = lanes[lane] * shuffled[lane - offset];
        }
        offset *= 2;
    }
    let per_lane = lanes.map(|p| t_in * p);
    (per_lane, per_lane[WARP_SIZE - 1])
}

/// Butterfly (xor-shuffle) sum across a warp; every lane ends with the total.
pub fn warp_reduce_sum<T>(values: &[T; WARP_SIZE]) -> T
where
    T: Copy + Add<Output = T>,
{
    let mut lanes = *values;
    let mut offset = WARP_SIZE / 2;
    while offset > 0 {
        let shuffled = lanes;
        for lane in 0..WARP_SIZE {
            lanes[lane] = lanes[lane] + shuffled[lane ^ offset];
        }
        offset /= 2;
    }
    lanes[0]
}

/// Per-pixel results of one frame, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub dims: [u32; 2],
    pub pixels: Vec<PixelResult>,
}

impl RenderOutput {
    pub fn width(&self) -> u32 {
        self.dims[0]
    }

    pub fn height(&self) -> u32 {
        self.dims[1]
    }

    pub fn pixel(&self, px: u32, py: u32) -> &PixelResult {
        &self.pixels[(py * self.dims[0] + px) as usize]
    }

    pub fn colors(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.pixels.iter().map(|p| p.color)
    }

    pub fn alphas(&self) -> Vec<f32> {
        self.pixels.iter().map(|p| p.out_alpha).collect()
    }

    pub fn depths(&self) -> Vec<f32> {
        self.pixels.iter().map(|p| p.out_depth).collect()
    }
}

/// Blends one pixel through its tile's full list in order.
pub fn render_pixel(
    list: &[u32],
    gaussians: &[Gaussian2D],
    px: u32,
    py: u32,
    background: [f32; 3],
) -> PixelResult {
    let center = pixel_center(px, py);
    let mut state = PixelState::default();
    for &idx in list {
        let s = BlendStep::evaluate(&gaussians[idx as usize], center);
        if state.step(&s) == StepOutcome::Terminated {
            break;
        }
    }
    state.finalize(background)
}

/// Sequential ground-truth render. Rows are computed in parallel; each pixel is
/// independent so the result does not depend on thread count.
pub fn render_reference(
    binning: &TileBinning,
    gaussians: &[Gaussian2D],
    dims: [u32; 2],
    background: [f32; 3],
) -> Result<RenderOutput> {
    binning.check(dims, gaussians.len())?;
    let [w, h] = dims;
    let mut pixels = vec![PixelState::default().finalize(background); (w * h) as usize];
    pixels
        .par_chunks_mut(w as usize)
        .enumerate()
        .for_each(|(py, row)| {
            for (px, out) in row.iter_mut().enumerate() {
                let tile = binning.tile_of_pixel(px as u32, py as u32);
                *out = render_pixel(binning.tile_list(tile), gaussians, px as u32, py as u32, background);
            }
        });
    Ok(RenderOutput { dims, pixels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(alpha: f32, color: [f32; 3]) -> BlendStep {
        BlendStep {
            alpha,
            color,
            depth: 1.0,
        }
    }

    #[test]
    fn eval_alpha_center_and_offset() {
        let g = Gaussian2D {
            xy: [3.0, 4.0],
            conic: [1.0, 0.0, 1.0],
            opacity: 0.4,
            color: [0.0; 3],
            depth: 1.0,
            radius: 3.0,
        };
        assert_eq!(eval_alpha(&g, [3.0, 4.0]), (0.0, 0.4));
        let g1 = Gaussian2D { opacity: 1.0, ..g };
        let (power, alpha) = eval_alpha(&g1, [5.0, 4.0]);
        assert_eq!(power, -2.0);
        assert!((alpha as f64 - (-2.0f64).exp()).abs() < 1e-7);
        assert_eq!(eval_alpha(&g1, [3.0, 4.0]).1, 0.99);
    }

    #[test]
    fn empty_list_is_background() {
        let r = blend_pixel(&[], [0.1, 0.2, 0.3]);
        assert_eq!(r.color, [0.1, 0.2, 0.3]);
        assert_eq!((r.out_alpha, r.final_t, r.contrib_count, r.term_index), (0.0, 1.0, 0, None));
    }

    #[test]
    fn three_half_alphas() {
        let steps = [step(0.5, [1.0, 0.0, 0.0]), step(0.5, [0.0, 1.0, 0.0]), step(0.5, [0.0, 0.0, 1.0])];
        // Serial evaluation of Σ c_i α_i Π_{j<i}(1-α_j) in f64.
        let mut t = 1.0f64;
        let mut c = [0.0f64; 3];
        for s in &steps {
            for k in 0..3 {
                c[k] += s.color[k] as f64 * s.alpha as f64 * t;
            }
            t *= 1.0 - s.alpha as f64;
        }
        let r = blend_pixel(&steps, [0.0; 3]);
        assert_eq!(r.color, c.map(|v| v as f32));
        assert_eq!(r.color, [0.5, 0.25, 0.125]);
        assert_eq!(r.final_t, 0.125);
        assert_eq!(r.contrib_count, 3);
        assert_eq!(r.term_index, None);
    }

    #[test]
    fn early_stop_commits_nothing() {
        let steps = [step(0.999, [1.0, 0.0, 0.0]), step(0.999, [0.0, 1.0, 0.0])];
        // The clamp lives in eval_alpha; raw steps may carry larger alphas.
        let r = blend_pixel(&steps, [0.0; 3]);
        assert_eq!(r.contrib_count, 1);
        assert_eq!(r.term_index, Some(2));
        assert!((r.final_t - 0.001).abs() < 1e-7);
        assert_eq!(r.color[1], 0.0);
        assert_eq!(termination_index(&steps), Some(2));
    }

    #[test]
    fn termination_index_edge_cases() {
        let faint = [step(0.001, [1.0; 3]); 10];
        assert_eq!(termination_index(&faint), None);
        assert_eq!(termination_index(&[step(0.99995, [1.0; 3])]), Some(1));
    }

    #[test]
    fn prefix_product_identity_and_halves() {
        let (lanes, t) = warp_prefix_product(&[1.0f64; 32], 0.7);
        assert!(lanes.iter().all(|&v| v == 0.7));
        assert_eq!(t, 0.7);
        let (lanes, t) = warp_prefix_product(&[0.5f64; 32], 1.0);
        for (k, v) in lanes.iter().enumerate() {
            assert_eq!(*v, 0.5f64.powi(k as i32 + 1));
        }
        assert_eq!(t, 0.5f64.powi(32));
    }

    #[test]
    fn reduce_sums_all_lanes() {
        let v: [f64; 32] = std::array::from_fn(|k| k as f64);
        assert_eq!(warp_reduce_sum(&v), 496.0);
    }
}
