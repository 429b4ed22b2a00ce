//! Render kernel strategies.
//!
//! Every variant produces two things: the rendered frame (checked against
//! [`render_reference`](crate::blend::render_reference)) and a [`WorkTrace`]
//! of per-warp operation counts for the machine simulator. Counts carry no cost
//! constants; those live in [`CostModel`](crate::sim::CostModel).
//!
//! | variant               | task           | lanes                         | dispatch |
//! |-----------------------|----------------|-------------------------------|----------|
//! | `Naive`               | one tile       | one pixel per lane            | static   |
//! | `DynamicBlocks`       | one tile       | one pixel per lane            | dynamic  |
//! | `GaussianWise`        | one tile       | 32 splats per lane group      | static   |
//! | `FineGrainedCombined` | 4 tile pixels  | 32 splats per lane group      | dynamic  |
//! | `SharedMemOpt`        | one tile       | one pixel per lane            | static   |

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blend::{
    pixel_center, warp_prefix_product, warp_reduce_sum, BlendStep, PixelResult, PixelState,
    RenderOutput, T_STOP, WARP_SIZE,
};
use crate::error::{Error, Result};
use crate::preprocess::{Gaussian2D, TileBinning};

/// Splats loaded into shared memory per cooperative round (one per block thread).
pub const CHUNK_SIZE: u32 = 128;
/// Pixels handled by one fine-grained task, one per warp.
pub const FINE_TASK_PIXELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KernelVariant {
    Naive,
    DynamicBlocks,
    GaussianWise,
    FineGrainedCombined,
    SharedMemOpt,
}

/// How tasks reach block slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dispatch {
    /// Task `i` runs on slot `i mod slots`.
    Static,
    /// Persistent blocks pull the next task id from a shared counter.
    Dynamic,
}

impl fmt::Display for Dispatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dispatch::Static => "static",
            Dispatch::Dynamic => "dynamic",
        })
    }
}

impl KernelVariant {
    pub const ALL: [KernelVariant; 5] = [
        KernelVariant::Naive,
        KernelVariant::DynamicBlocks,
        KernelVariant::GaussianWise,
        KernelVariant::FineGrainedCombined,
        KernelVariant::SharedMemOpt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelVariant::Naive => "Naive",
            KernelVariant::DynamicBlocks => "DynamicBlocks",
            KernelVariant::GaussianWise => "GaussianWise",
            KernelVariant::FineGrainedCombined => "FineGrainedCombined",
            KernelVariant::SharedMemOpt => "SharedMemOpt",
        }
    }

    pub fn dispatch(self) -> Dispatch {
        match self {
            KernelVariant::DynamicBlocks | KernelVariant::FineGrainedCombined => Dispatch::Dynamic,
            _ => Dispatch::Static,
        }
    }

    /// Lanes of a warp cooperate on one pixel at a time.
    pub fn is_gaussian_wise(self) -> bool {
        matches!(self, KernelVariant::GaussianWise | KernelVariant::FineGrainedCombined)
    }

    pub fn is_fine_grained(self) -> bool {
        self == KernelVariant::FineGrainedCombined
    }

    /// Features and depths are staged in shared memory alongside positions.
    pub fn stages_features(self) -> bool {
        self == KernelVariant::SharedMemOpt
    }
}

impl fmt::Display for KernelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidParams(format!(
                    "unknown kernel variant `{s}` (expected one of {})",
                    KernelVariant::ALL.map(|v| v.name()).join(", ")
                ))
            })
    }
}

/// Lane layout of one task inside a tile: per warp, the local pixel indices
/// (row-major within the patch) its lanes are mapped to.
pub type TaskLanes = Vec<Vec<usize>>;

/// Task layouts for one tile of `tile_pixels` pixels.
pub fn tile_task_layout(variant: KernelVariant, tile_pixels: usize) -> Vec<TaskLanes> {
    if variant.is_fine_grained() {
        (0..tile_pixels.div_ceil(FINE_TASK_PIXELS))
            .map(|task| {
                (0..FINE_TASK_PIXELS)
                    .map(|w| {
                        let lane = task * FINE_TASK_PIXELS + w;
                        if lane < tile_pixels {
                            vec![lane]
                        } else {
                            Vec::new()
                        }
                    })
                    .collect()
            })
            .collect()
    } else {
        let warps = (0..tile_pixels.div_ceil(WARP_SIZE))
            .map(|w| (w * WARP_SIZE..((w + 1) * WARP_SIZE).min(tile_pixels)).collect())
            .collect();
        vec![warps]
    }
}

pub fn tasks_per_tile(variant: KernelVariant, tile_pixels: usize) -> usize {
    if variant.is_fine_grained() {
        tile_pixels.div_ceil(FINE_TASK_PIXELS)
    } else {
        1
    }
}

/// Pixels and warp plan of one launched task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub task_id: u32,
    pub tile_id: u32,
    /// In-image pixels covered by this task.
    pub pixels: Vec<[u32; 2]>,
    /// Per warp, indices into `pixels`.
    pub warps: Vec<Vec<usize>>,
}

fn local_to_pixel(binning: &TileBinning, tile: usize, local: usize) -> Option<[u32; 2]> {
    let [pw, ph] = binning.patch;
    let (cols, _) = binning.grid;
    let (tx, ty) = (tile as u32 % cols, tile as u32 / cols);
    let (lx, ly) = (local as u32 % pw, local as u32 / pw);
    let (px, py) = (tx * pw + lx, ty * ph + ly);
    (px < binning.dims[0] && py < binning.dims[1]).then_some([px, py])
}

/// All tasks of a frame in launch order.
pub fn task_specs(variant: KernelVariant, binning: &TileBinning) -> Vec<TaskSpec> {
    let tile_pixels = (binning.patch[0] * binning.patch[1]) as usize;
    let layout = tile_task_layout(variant, tile_pixels);
    let mut out = Vec::with_capacity(binning.num_tiles() * layout.len());
    for tile in 0..binning.num_tiles() {
        for (sub, task) in layout.iter().enumerate() {
            let mut pixels = Vec::new();
            let warps = task
                .iter()
                .map(|lanes| {
                    lanes
                        .iter()
                        .filter_map(|&l| local_to_pixel(binning, tile, l))
                        .map(|p| {
                            pixels.push(p);
                            pixels.len() - 1
                        })
                        .collect()
                })
                .collect();
            out.push(TaskSpec {
                task_id: (tile * layout.len() + sub) as u32,
                tile_id: tile as u32,
                pixels,
                warps,
            });
        }
    }
    out
}

/// Per-warp operation counts of one task.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarpCounts {
    /// Lockstep iterations of the blend loop (one splat per lane, or one 32-splat group).
    pub compute_steps: u64,
    pub prefix_groups: u64,
    pub reduce_ops: u64,
    pub writeback_ops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTrace {
    pub task_id: u32,
    pub tile_id: u32,
    /// Cooperative shared-memory load rounds of the whole block.
    pub shared_load_chunks: u64,
    pub warps: Vec<WarpCounts>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkTrace {
    pub variant: KernelVariant,
    /// Launch order.
    pub tasks: Vec<TaskTrace>,
}

impl WorkTrace {
    pub fn max_warps_per_task(&self) -> usize {
        self.tasks.iter().map(|t| t.warps.len()).max().unwrap_or(0)
    }
}

/// Lockstep steps of a pixel-parallel warp: it runs until its slowest lane stops.
pub fn warp_steps_pixelwise(term_indices: &[Option<u32>], list_len: u32) -> u32 {
    term_indices
        .iter()
        .map(|t| t.unwrap_or(list_len))
        .max()
        .unwrap_or(0)
}

/// 32-splat groups a Gaussian-parallel warp needs for one pixel; it halts after
/// the group containing the terminating splat.
pub fn warp_steps_gaussianwise(term_index: Option<u32>, list_len: u32) -> u32 {
    term_index.unwrap_or(list_len).div_ceil(WARP_SIZE as u32)
}

/// One local pixel slot of a tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lane {
    /// Outside the image.
    Inactive,
    /// In the image; carries its termination index.
    Active(Option<u32>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileTerms {
    pub list_len: u32,
    /// Row-major within the patch.
    pub lanes: Vec<Lane>,
}

/// Per-tile list lengths and per-pixel termination indices; all a trace depends on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermData {
    pub tile_pixels: usize,
    pub tiles: Vec<TileTerms>,
}

impl TermData {
    pub fn from_render(binning: &TileBinning, render: &RenderOutput) -> Self {
        let tile_pixels = (binning.patch[0] * binning.patch[1]) as usize;
        let tiles = (0..binning.num_tiles())
            .map(|tile| TileTerms {
                list_len: binning.tile_len(tile) as u32,
                lanes: (0..tile_pixels)
                    .map(|l| match local_to_pixel(binning, tile, l) {
                        Some([px, py]) => Lane::Active(render.pixel(px, py).term_index),
                        None => Lane::Inactive,
                    })
                    .collect(),
            })
            .collect();
        TermData { tile_pixels, tiles }
    }

    pub fn tile_counts(&self) -> Vec<u32> {
        self.tiles.iter().map(|t| t.list_len).collect()
    }
}

fn warp_counts(variant: KernelVariant, terms: &[Option<u32>], list_len: u32) -> WarpCounts {
    if terms.is_empty() {
        return WarpCounts::default();
    }
    if variant.is_gaussian_wise() {
        let groups: u64 = terms
            .iter()
            .map(|&t| warp_steps_gaussianwise(t, list_len) as u64)
            .sum();
        WarpCounts {
            compute_steps: groups,
            prefix_groups: groups,
            reduce_ops: terms.len() as u64,
            writeback_ops: terms.len() as u64,
        }
    } else {
        WarpCounts {
            compute_steps: warp_steps_pixelwise(terms, list_len) as u64,
            prefix_groups: 0,
            reduce_ops: 0,
            writeback_ops: 1,
        }
    }
}

fn chunks_for(list_len: u32, any_active: bool) -> u64 {
    if any_active {
        list_len.div_ceil(CHUNK_SIZE) as u64
    } else {
        0
    }
}

/// Derives a variant's trace from list lengths and termination indices alone.
pub fn trace_counts(variant: KernelVariant, terms: &TermData) -> WorkTrace {
    let layout = tile_task_layout(variant, terms.tile_pixels);
    let per_tile = layout.len();
    let tasks = terms
        .tiles
        .par_iter()
        .enumerate()
        .flat_map_iter(|(tile, tt)| {
            layout.iter().enumerate().map(move |(sub, task)| {
                let mut any_active = false;
                let warps = task
                    .iter()
                    .map(|lanes| {
                        let lane_terms: Vec<Option<u32>> = lanes
                            .iter()
                            .filter_map(|&l| match tt.lanes.get(l) {
                                Some(Lane::Active(t)) => Some(*t),
                                _ => None,
                            })
                            .collect();
                        any_active |= !lane_terms.is_empty();
                        warp_counts(variant, &lane_terms, tt.list_len)
                    })
                    .collect();
                TaskTrace {
                    task_id: (tile * per_tile + sub) as u32,
                    tile_id: tile as u32,
                    shared_load_chunks: chunks_for(tt.list_len, any_active),
                    warps,
                }
            })
        })
        .collect();
    WorkTrace { variant, tasks }
}

/// Pixel-parallel warp: lane `k` blends pixel `k`, all lanes step through the
/// list together until every lane has stopped. Returns the lockstep iteration count.
fn pixelwise_warp(
    list: &[u32],
    gaussians: &[Gaussian2D],
    pixels: &[[u32; 2]],
    background: [f32; 3],
    out: &mut Vec<PixelResult>,
) -> u64 {
    let centers: Vec<[f32; 2]> = pixels.iter().map(|&[x, y]| pixel_center(x, y)).collect();
    let mut states = vec![PixelState::default(); pixels.len()];
    let mut iterations = 0u64;
    for &idx in list {
        if states.iter().all(PixelState::is_finished) {
            break;
        }
        iterations += 1;
        let g = &gaussians[idx as usize];
        for (state, center) in states.iter_mut().zip(&centers) {
            if !state.is_finished() {
                state.step(&BlendStep::evaluate(g, *center));
            }
        }
    }
    out.extend(states.into_iter().map(|s| s.finalize(background)));
    iterations
}

/// Gaussian-parallel blend of one pixel: lane `k` of group `g` takes splat
/// `32·g + k`; transmittance is carried across lanes by a warp prefix product
/// and the per-lane partial sums are combined by a warp reduction at the end.
/// Returns the result and the number of groups executed.
pub fn gaussianwise_pixel(
    list: &[u32],
    gaussians: &[Gaussian2D],
    px: u32,
    py: u32,
    background: [f32; 3],
) -> (PixelResult, u32) {
    let center = pixel_center(px, py);
    let mut t = 1.0f32;
    let mut lane_color = [[0.0f32; WARP_SIZE]; 3];
    let mut lane_depth = [0.0f32; WARP_SIZE];
    let mut contrib = 0u32;
    let mut term = None;
    let mut groups = 0u32;

    for (group, ids) in list.chunks(WARP_SIZE).enumerate() {
        groups += 1;
        let mut steps = [None; WARP_SIZE];
        for (lane, &idx) in ids.iter().enumerate() {
            let s = BlendStep::evaluate(&gaussians[idx as usize], center);
            if !s.is_skipped() {
                steps[lane] = Some(s);
            }
        }
        if steps.iter().all(Option::is_none) {
            continue;
        }
        let one_minus = steps.map(|s| s.map_or(1.0, |s| 1.0 - s.alpha));
        let (lane_t, broadcast_t) = warp_prefix_product(&one_minus, t);
        let stop = (0..WARP_SIZE).find(|&k| steps[k].is_some() && lane_t[k] < T_STOP);
        let valid_end = stop.unwrap_or(WARP_SIZE);
        for k in 0..valid_end {
            if let Some(s) = steps[k] {
                let t_before = if k == 0 { t } else { lane_t[k - 1] };
                let w = s.alpha * t_before;
                for ch in 0..3 {
                    lane_color[ch][k] += s.color[ch] * w;
                }
                lane_depth[k] += s.depth * w;
                contrib += 1;
            }
        }
        match stop {
            Some(k) => {
                // The terminating lane's factor is not committed.
                if k > 0 {
                    t = lane_t[k - 1];
                }
                term = Some((group * WARP_SIZE + k + 1) as u32);
                break;
            }
            None => t = broadcast_t,
        }
    }

    let mut color = [0.0f32; 3];
    for ch in 0..3 {
        color[ch] = warp_reduce_sum(&lane_color[ch]) + background[ch] * t;
    }
    let result = PixelResult {
        color,
        out_alpha: 1.0 - t,
        out_depth: warp_reduce_sum(&lane_depth),
        final_t: t,
        contrib_count: contrib,
        term_index: term,
    };
    (result, groups)
}

struct TileRun {
    pixels: Vec<([u32; 2], PixelResult)>,
    tasks: Vec<TaskTrace>,
}

fn run_tile(
    variant: KernelVariant,
    binning: &TileBinning,
    gaussians: &[Gaussian2D],
    background: [f32; 3],
    specs: &[TaskSpec],
) -> TileRun {
    let mut pixels = Vec::new();
    let mut tasks = Vec::with_capacity(specs.len());
    for spec in specs {
        let list = binning.tile_list(spec.tile_id as usize);
        let list_len = list.len() as u32;
        let mut warps = Vec::with_capacity(spec.warps.len());
        for lanes in &spec.warps {
            let warp_pixels: Vec<[u32; 2]> = lanes.iter().map(|&i| spec.pixels[i]).collect();
            if warp_pixels.is_empty() {
                warps.push(WarpCounts::default());
                continue;
            }
            if variant.is_gaussian_wise() {
                let mut groups = 0u64;
                for &[px, py] in &warp_pixels {
                    let (r, g) = gaussianwise_pixel(list, gaussians, px, py, background);
                    groups += g as u64;
                    pixels.push(([px, py], r));
                }
                let n = warp_pixels.len() as u64;
                warps.push(WarpCounts {
                    compute_steps: groups,
                    prefix_groups: groups,
                    reduce_ops: n,
                    writeback_ops: n,
                });
            } else {
                let mut results = Vec::with_capacity(warp_pixels.len());
                let steps = pixelwise_warp(list, gaussians, &warp_pixels, background, &mut results);
                pixels.extend(warp_pixels.iter().copied().zip(results));
                warps.push(WarpCounts {
                    compute_steps: steps,
                    prefix_groups: 0,
                    reduce_ops: 0,
                    writeback_ops: 1,
                });
            }
        }
        tasks.push(TaskTrace {
            task_id: spec.task_id,
            tile_id: spec.tile_id,
            shared_load_chunks: chunks_for(list_len, !spec.pixels.is_empty()),
            warps,
        });
    }
    TileRun { pixels, tasks }
}

/// Executes `variant` functionally over a binned frame.
pub fn run_kernel(
    variant: KernelVariant,
    binning: &TileBinning,
    gaussians: &[Gaussian2D],
    dims: [u32; 2],
    background: [f32; 3],
) -> Result<(RenderOutput, WorkTrace)> {
    binning.check(dims, gaussians.len())?;
    let specs = task_specs(variant, binning);
    let per_tile = tasks_per_tile(variant, (binning.patch[0] * binning.patch[1]) as usize);
    let runs: Vec<TileRun> = specs
        .par_chunks(per_tile)
        .map(|tile_specs| run_tile(variant, binning, gaussians, background, tile_specs))
        .collect();

    let [w, h] = dims;
    let mut pixels = vec![PixelState::default().finalize(background); (w * h) as usize];
    let mut tasks = Vec::with_capacity(specs.len());
    for run in runs {
        for ([px, py], r) in run.pixels {
            pixels[(py * w + px) as usize] = r;
        }
        tasks.extend(run.tasks);
    }
    Ok((RenderOutput { dims, pixels }, WorkTrace { variant, tasks }))
}

/// Largest differences between a kernel's output and the reference, per
/// plane (red, green, blue, alpha, depth).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub max_abs: [f64; 5],
    pub max_rel: [f64; 5],
    pub contrib_mismatches: usize,
}

pub const PLANES: [&str; 5] = ["r", "g", "b", "alpha", "depth"];

/// Relative difference `|a - b| / max(|a|, |b|)`, 0 when both are 0.
pub fn relative_diff(a: f32, b: f32) -> f64 {
    let (a, b) = (a as f64, b as f64);
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn compare_outputs(reference: &RenderOutput, other: &RenderOutput) -> Result<Deviation> {
    if reference.dims != other.dims {
        return Err(Error::DimensionMismatch(format!(
            "outputs are {:?} and {:?}",
            reference.dims, other.dims
        )));
    }
    let mut d = Deviation::default();
    for (r, o) in reference.pixels.iter().zip(&other.pixels) {
        let pairs = [
            (r.color[0], o.color[0]),
            (r.color[1], o.color[1]),
            (r.color[2], o.color[2]),
            (r.out_alpha, o.out_alpha),
            (r.out_depth, o.out_depth),
        ];
        for (k, (a, b)) in pairs.into_iter().enumerate() {
            d.max_abs[k] = d.max_abs[k].max((a as f64 - b as f64).abs());
            d.max_rel[k] = d.max_rel[k].max(relative_diff(a, b));
        }
        if r.contrib_count != o.contrib_count {
            d.contrib_mismatches += 1;
        }
    }
    Ok(d)
}
