//! C ABI over the splatbalance core.
//!
//! Every function returns an [`SbStatus`]; on failure the message is kept per
//! thread and can be fetched with [`sb_last_error_message`]. Handles are
//! opaque, created by `sb_*_new`/`sb_*_load` style calls and released with the
//! matching `sb_*_free`. Panics never cross the boundary; they turn into
//! `SB_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use splatbalance::blend::{render_reference, RenderOutput, WARP_SIZE};
use splatbalance::cli::scene_terms;
use splatbalance::kernels::{compare_outputs, run_kernel, trace_counts, Dispatch, KernelVariant, TermData};
use splatbalance::preprocess::{bin_tiles, project_scene};
use splatbalance::scene::{load_scene, Scene};
use splatbalance::sim::{simulate_with_dispatch, CostModel, MachineConfig};
use splatbalance::workload::{
    gen_tile_loads, LoadDistribution, SkewParams, SyntheticTermModel,
};
use splatbalance::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidInput = 5,
    DimensionMismatch = 6,
    OutOfRange = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Kernel variants, in the order the simulator reports them.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SbKernelVariant {
    Naive = 0,
    DynamicBlocks = 1,
    GaussianWise = 2,
    FineGrainedCombined = 3,
    SharedMemOpt = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SbDistribution {
    Pareto = 0,
    LogNormal = 1,
    Uniform = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbMachineConfig {
    pub num_sms: u32,
    pub block_slots_per_sm: u32,
    pub warps_per_block: u32,
    pub warp_size: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbCostModel {
    pub compute_step: f64,
    pub shared_chunk_load: f64,
    pub shared_chunk_load_opt: f64,
    pub prefix_group_overhead: f64,
    pub warp_reduce: f64,
    pub pool_fetch: f64,
    pub writeback: f64,
    pub global_feature_read: f64,
}

/// Synthetic load generator parameters. `distribution` holds an `SbDistribution`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbSkewParams {
    pub distribution: u32,
    pub shape: f64,
    pub scale: f64,
    pub max_cap: u32,
    pub tiles: u32,
    pub seed: u64,
    pub term_fraction_mean: f64,
    pub term_fraction_spread: f64,
    pub tile_pixels: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbSimMetrics {
    /// An `SbKernelVariant`.
    pub variant: u32,
    /// 0 static, 1 dynamic.
    pub dynamic_dispatch: u32,
    pub makespan: f64,
    pub achieved_occupancy: f64,
    pub idle_fraction: f64,
    pub waves: f64,
    pub tasks: u64,
}

/// Largest relative difference per plane (r, g, b, alpha, depth) against the reference.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbDeviation {
    pub max_rel: [f64; 5],
    pub max_abs: [f64; 5],
    pub contrib_mismatches: u64,
}

/// A validated scene.
pub struct SbScene(Scene);

/// Per-tile list lengths and per-pixel termination indices.
pub struct SbLoads {
    counts: Vec<u32>,
    terms: TermData,
}

/// A rendered frame.
pub struct SbRender(RenderOutput);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> SbStatus {
    match e {
        Error::Io { .. } => SbStatus::Io,
        Error::Parse { .. } | Error::Csv(_) => SbStatus::Parse,
        Error::DimensionMismatch(_) => SbStatus::DimensionMismatch,
        Error::IterOutOfRange { .. } => SbStatus::OutOfRange,
        Error::InvalidGaussian { .. }
        | Error::InvalidCamera(_)
        | Error::InvalidConfig(_)
        | Error::InvalidParams(_) => SbStatus::InvalidInput,
    }
}

struct Fail(SbStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SbStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any failure and converts panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SbStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SbStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<String, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|e| Fail(SbStatus::InvalidUtf8, e.to_string()))
}

fn variant_of(v: u32) -> Result<KernelVariant, Fail> {
    KernelVariant::ALL
        .get(v as usize)
        .copied()
        .ok_or_else(|| Fail(SbStatus::InvalidInput, format!("unknown kernel variant {v}")))
}

fn machine_from(m: &SbMachineConfig) -> MachineConfig {
    MachineConfig {
        num_sms: m.num_sms,
        block_slots_per_sm: m.block_slots_per_sm,
        warps_per_block: m.warps_per_block,
        warp_size: m.warp_size,
    }
}

fn cost_from(c: &SbCostModel) -> CostModel {
    CostModel {
        compute_step: c.compute_step,
        shared_chunk_load: c.shared_chunk_load,
        shared_chunk_load_opt: c.shared_chunk_load_opt,
        prefix_group_overhead: c.prefix_group_overhead,
        warp_reduce: c.warp_reduce,
        pool_fetch: c.pool_fetch,
        writeback: c.writeback,
        global_feature_read: c.global_feature_read,
    }
}

fn skew_from(p: &SbSkewParams) -> Result<SkewParams, Fail> {
    let distribution = match p.distribution {
        0 => LoadDistribution::Pareto,
        1 => LoadDistribution::LogNormal,
        2 => LoadDistribution::Uniform,
        d => return Err(Fail(SbStatus::InvalidInput, format!("unknown distribution {d}"))),
    };
    Ok(SkewParams {
        distribution,
        shape: p.shape,
        scale: p.scale,
        max_cap: p.max_cap,
        tiles: p.tiles,
        seed: p.seed,
        term: SyntheticTermModel {
            term_fraction_mean: p.term_fraction_mean,
            term_fraction_spread: p.term_fraction_spread,
        },
        tile_pixels: p.tile_pixels,
    })
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to fit) and returns the full message length in bytes, excluding
/// the terminator. `buf` may be null to query the length.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn sb_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be null or point to writable memory for one struct.
#[no_mangle]
pub unsafe extern "C" fn sb_machine_default(out: *mut SbMachineConfig) -> SbStatus {
    guard(|| {
        let m = MachineConfig::default();
        *self::out(out, "out")? = SbMachineConfig {
            num_sms: m.num_sms,
            block_slots_per_sm: m.block_slots_per_sm,
            warps_per_block: m.warps_per_block,
            warp_size: m.warp_size,
        };
        Ok(())
    })
}

/// # Safety
/// `out` must be null or point to writable memory for one struct.
#[no_mangle]
pub unsafe extern "C" fn sb_cost_default(out: *mut SbCostModel) -> SbStatus {
    guard(|| {
        let c = CostModel::default();
        *self::out(out, "out")? = SbCostModel {
            compute_step: c.compute_step,
            shared_chunk_load: c.shared_chunk_load,
            shared_chunk_load_opt: c.shared_chunk_load_opt,
            prefix_group_overhead: c.prefix_group_overhead,
            warp_reduce: c.warp_reduce,
            pool_fetch: c.pool_fetch,
            writeback: c.writeback,
            global_feature_read: c.global_feature_read,
        };
        Ok(())
    })
}

/// Fills `out` with the skew fixture parameters.
///
/// # Safety
/// `out` must be null or point to writable memory for one struct.
#[no_mangle]
pub unsafe extern "C" fn sb_skew_default(out: *mut SbSkewParams) -> SbStatus {
    guard(|| {
        let p = SkewParams::default();
        *self::out(out, "out")? = SbSkewParams {
            distribution: p.distribution as u32,
            shape: p.shape,
            scale: p.scale,
            max_cap: p.max_cap,
            tiles: p.tiles,
            seed: p.seed,
            term_fraction_mean: p.term.term_fraction_mean,
            term_fraction_spread: p.term.term_fraction_spread,
            tile_pixels: p.tile_pixels,
        };
        Ok(())
    })
}

/// Loads and validates a JSON scene file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sb_scene_load(path: *const c_char, out: *mut *mut SbScene) -> SbStatus {
    guard(|| {
        let slot = self::out(out, "out")?;
        *slot = ptr::null_mut();
        let scene = load_scene(path_arg(path)?)?;
        *slot = Box::into_raw(Box::new(SbScene(scene)));
        Ok(())
    })
}

/// Parses and validates a scene from a JSON string.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sb_scene_from_json(json: *const c_char, out: *mut *mut SbScene) -> SbStatus {
    guard(|| {
        let slot = self::out(out, "out")?;
        *slot = ptr::null_mut();
        let text = path_arg(json)?;
        *slot = Box::into_raw(Box::new(SbScene(Scene::from_json_str(&text)?)));
        Ok(())
    })
}

/// # Safety
/// `scene` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sb_scene_free(scene: *mut SbScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Image size and splat count of a scene.
///
/// # Safety
/// `scene` must be a live handle; the out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn sb_scene_info(
    scene: *const SbScene,
    width: *mut u32,
    height: *mut u32,
    num_gaussians: *mut u64,
) -> SbStatus {
    guard(|| {
        let s = &as_ref(scene, "scene")?.0;
        if let Some(w) = width.as_mut() {
            *w = s.camera.dims[0];
        }
        if let Some(h) = height.as_mut() {
            *h = s.camera.dims[1];
        }
        if let Some(n) = num_gaussians.as_mut() {
            *n = s.gaussians.len() as u64;
        }
        Ok(())
    })
}

/// Renders `scene` with the sequential reference (`variant` < 0) or a kernel
/// variant (an `SbKernelVariant`).
///
/// # Safety
/// `scene` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sb_render(scene: *const SbScene, variant: i32, out: *mut *mut SbRender) -> SbStatus {
    guard(|| {
        let slot = self::out(out, "out")?;
        *slot = ptr::null_mut();
        let s = &as_ref(scene, "scene")?.0;
        let g = project_scene(s);
        let dims = s.camera.dims;
        let b = bin_tiles(&g, dims, s.config.patch);
        let bg = s.config.background_f32();
        let img = if variant < 0 {
            render_reference(&b, &g, dims, bg)?
        } else {
            run_kernel(variant_of(variant as u32)?, &b, &g, dims, bg)?.0
        };
        *slot = Box::into_raw(Box::new(SbRender(img)));
        Ok(())
    })
}

/// # Safety
/// `render` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sb_render_free(render: *mut SbRender) {
    if !render.is_null() {
        drop(Box::from_raw(render));
    }
}

/// Copies the frame's planes, row-major. `rgb` takes `3·w·h` floats
/// (interleaved), `alpha` and `depth` take `w·h` each; any may be null.
/// `capacity` is the pixel count each non-null buffer can hold.
///
/// # Safety
/// Non-null buffers must be valid for the sizes above.
#[no_mangle]
pub unsafe extern "C" fn sb_render_planes(
    render: *const SbRender,
    capacity: usize,
    rgb: *mut f32,
    alpha: *mut f32,
    depth: *mut f32,
) -> SbStatus {
    guard(|| {
        let r = &as_ref(render, "render")?.0;
        let n = r.pixels.len();
        if capacity < n {
            return Err(Fail(
                SbStatus::BufferTooSmall,
                format!("frame has {n} pixels, buffers hold {capacity}"),
            ));
        }
        for (i, p) in r.pixels.iter().enumerate() {
            if !rgb.is_null() {
                for c in 0..3 {
                    *rgb.add(3 * i + c) = p.color[c];
                }
            }
            if !alpha.is_null() {
                *alpha.add(i) = p.out_alpha;
            }
            if !depth.is_null() {
                *depth.add(i) = p.out_depth;
            }
        }
        Ok(())
    })
}

/// Compares `other` against `reference`.
///
/// # Safety
/// Both handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sb_render_compare(
    reference: *const SbRender,
    other: *const SbRender,
    out: *mut SbDeviation,
) -> SbStatus {
    guard(|| {
        let d = compare_outputs(&as_ref(reference, "reference")?.0, &as_ref(other, "other")?.0)?;
        *self::out(out, "out")? = SbDeviation {
            max_rel: d.max_rel,
            max_abs: d.max_abs,
            contrib_mismatches: d.contrib_mismatches as u64,
        };
        Ok(())
    })
}

/// Generates synthetic tile loads.
///
/// # Safety
/// `params` must be readable; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sb_loads_generate(params: *const SbSkewParams, out: *mut *mut SbLoads) -> SbStatus {
    guard(|| {
        let slot = self::out(out, "out")?;
        *slot = ptr::null_mut();
        let p = skew_from(as_ref(params, "params")?)?;
        let loads = gen_tile_loads(&p)?;
        *slot = Box::into_raw(Box::new(SbLoads {
            counts: loads.counts,
            terms: loads.terms,
        }));
        Ok(())
    })
}

/// Tile loads of a scene, from its binning and reference render.
///
/// # Safety
/// `scene` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sb_loads_from_scene(scene: *const SbScene, out: *mut *mut SbLoads) -> SbStatus {
    guard(|| {
        let slot = self::out(out, "out")?;
        *slot = ptr::null_mut();
        let terms = scene_terms(&as_ref(scene, "scene")?.0)?;
        *slot = Box::into_raw(Box::new(SbLoads {
            counts: terms.tile_counts(),
            terms,
        }));
        Ok(())
    })
}

/// # Safety
/// `loads` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sb_loads_free(loads: *mut SbLoads) {
    if !loads.is_null() {
        drop(Box::from_raw(loads));
    }
}

/// Copies per-tile counts into `counts` (may be null) and stores the tile
/// count in `num_tiles`.
///
/// # Safety
/// `loads` must be live; `counts` must be null or valid for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn sb_loads_counts(
    loads: *const SbLoads,
    counts: *mut u32,
    capacity: usize,
    num_tiles: *mut usize,
) -> SbStatus {
    guard(|| {
        let l = as_ref(loads, "loads")?;
        if let Some(n) = num_tiles.as_mut() {
            *n = l.counts.len();
        }
        if counts.is_null() {
            return Ok(());
        }
        if capacity < l.counts.len() {
            return Err(Fail(
                SbStatus::BufferTooSmall,
                format!("{} tiles, buffer holds {capacity}", l.counts.len()),
            ));
        }
        ptr::copy_nonoverlapping(l.counts.as_ptr(), counts, l.counts.len());
        Ok(())
    })
}

/// Simulates one kernel variant on `loads` under its own dispatch policy.
/// `machine` and `cost` may be null for the defaults.
///
/// # Safety
/// `loads` must be live; non-null pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sb_simulate(
    loads: *const SbLoads,
    variant: u32,
    machine: *const SbMachineConfig,
    cost: *const SbCostModel,
    out: *mut SbSimMetrics,
) -> SbStatus {
    guard(|| {
        let l = as_ref(loads, "loads")?;
        let v = variant_of(variant)?;
        let m = machine.as_ref().map_or_else(MachineConfig::default, machine_from);
        let c = cost.as_ref().map_or_else(CostModel::default, cost_from);
        m.validate()?;
        c.validate()?;
        let r = simulate_with_dispatch(&trace_counts(v, &l.terms), &m, &c, v.dispatch());
        *self::out(out, "out")? = SbSimMetrics {
            variant,
            dynamic_dispatch: (r.dispatch == Dispatch::Dynamic) as u32,
            makespan: r.makespan,
            achieved_occupancy: r.achieved_occupancy,
            idle_fraction: r.idle_fraction,
            waves: r.waves,
            tasks: r.tasks as u64,
        };
        Ok(())
    })
}

/// Inclusive warp prefix product: `out[k] = t_in · x[0] · … · x[k]` over 32
/// lanes; `broadcast` receives the full product.
///
/// # Safety
/// `x` and `out` must be valid for 32 doubles; `broadcast` may be null.
#[no_mangle]
pub unsafe extern "C" fn sb_warp_prefix_product(
    x: *const f64,
    t_in: f64,
    out: *mut f64,
    broadcast: *mut f64,
) -> SbStatus {
    guard(|| {
        if x.is_null() || out.is_null() {
            return Err(null("x or out"));
        }
        let lanes: [f64; WARP_SIZE] = *x.cast::<[f64; WARP_SIZE]>();
        let (prefix, total) = splatbalance::blend::warp_prefix_product(&lanes, t_in);
        ptr::copy_nonoverlapping(prefix.as_ptr(), out, WARP_SIZE);
        if let Some(b) = broadcast.as_mut() {
            *b = total;
        }
        Ok(())
    })
}
