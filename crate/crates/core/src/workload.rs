//! Seeded workload generators: synthetic per-tile loads, clustered and random
//! scenes, and a training trajectory whose tile loads flatten over time.
//!
//! Every tile draws from its own ChaCha stream, so output does not depend on
//! generation order or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{Lane, TermData, TileTerms};
use crate::preprocess::LoadStats;
use crate::scene::{Camera, Gaussian3D, Scene, SceneConfig};

/// Term streams are offset so they never collide with count streams.
const TERM_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadDistribution {
    Pareto,
    LogNormal,
    Uniform,
}

/// Per-pixel termination as a fraction of the tile list length, drawn from a
/// Beta distribution with the given mean. `spread` is the standard deviation
/// relative to the widest possible (Bernoulli) one: 0 gives every pixel the
/// mean fraction, 1 gives each pixel either 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTermModel {
    pub term_fraction_mean: f64,
    pub term_fraction_spread: f64,
}

impl Default for SyntheticTermModel {
    fn default() -> Self {
        SyntheticTermModel {
            term_fraction_mean: 0.5,
            term_fraction_spread: 0.5,
        }
    }
}

impl SyntheticTermModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("term_fraction_mean", self.term_fraction_mean),
            ("term_fraction_spread", self.term_fraction_spread),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParams(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    fn sample_fraction(&self, rng: &mut ChaCha8Rng) -> f64 {
        let m = self.term_fraction_mean;
        let s = self.term_fraction_spread;
        if s == 0.0 || m == 0.0 || m == 1.0 {
            return m;
        }
        let concentration = 1.0 / (s * s) - 1.0;
        if concentration <= 1e-9 {
            return if rng.gen::<f64>() < m { 1.0 } else { 0.0 };
        }
        match Beta::new(m * concentration, (1.0 - m) * concentration) {
            Ok(beta) => {
                let f: f64 = beta.sample(rng);
                if f.is_nan() {
                    m
                } else {
                    f
                }
            }
            Err(_) => m,
        }
    }

    /// Termination index for a pixel of a list of `list_len` splats.
    fn sample_term(&self, list_len: u32, rng: &mut ChaCha8Rng) -> Option<u32> {
        if list_len == 0 {
            return None;
        }
        let f = self.sample_fraction(rng);
        if f >= 1.0 {
            return None;
        }
        let k = (f * list_len as f64).ceil() as u32;
        Some(k.clamp(1, list_len))
    }
}

/// Generator parameters; missing fields in a config file take the skew
/// fixture's values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkewParams {
    pub distribution: LoadDistribution,
    pub shape: f64,
    pub scale: f64,
    pub max_cap: u32,
    pub tiles: u32,
    pub seed: u64,
    pub term: SyntheticTermModel,
    pub tile_pixels: u32,
}

impl Default for SkewParams {
    /// The skew fixture: 4080 tiles (960×540 with 16×8 patches), Pareto tail.
    fn default() -> Self {
        SkewParams {
            distribution: LoadDistribution::Pareto,
            shape: 1.1,
            scale: 100.0,
            max_cap: 100_000,
            tiles: 4080,
            seed: 42,
            term: SyntheticTermModel {
                term_fraction_mean: 0.03,
                term_fraction_spread: 0.9,
            },
            tile_pixels: 128,
        }
    }
}

impl SkewParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.max_cap < 1 {
            return bad("max_cap must be at least 1".into());
        }
        if self.tile_pixels < 1 {
            return bad("tile_pixels must be at least 1".into());
        }
        if !(self.scale.is_finite() && self.scale >= 0.0) {
            return bad(format!("scale must be non-negative, got {}", self.scale));
        }
        if self.distribution != LoadDistribution::Uniform
            && !(self.shape.is_finite() && self.shape > 0.0 && self.scale > 0.0)
        {
            return bad(format!(
                "shape and scale must be positive, got shape {} scale {}",
                self.shape, self.scale
            ));
        }
        self.term.validate()
    }

    fn draw_count(&self, rng: &mut ChaCha8Rng) -> u32 {
        let cap = self.max_cap as f64;
        let raw = match self.distribution {
            LoadDistribution::Pareto => {
                // 1 - u lies in (0, 1], so the power is finite.
                let u: f64 = 1.0 - rng.gen::<f64>();
                self.scale * u.powf(-1.0 / self.shape)
            }
            LoadDistribution::LogNormal => {
                let z: f64 = StandardNormal.sample(rng);
                self.scale * (self.shape * z).exp()
            }
            LoadDistribution::Uniform => self.scale,
        };
        raw.floor().min(cap) as u32
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Termination profile of one tile; `profile_id` selects the RNG stream.
pub fn tile_terms(
    model: &SyntheticTermModel,
    seed: u64,
    profile_id: u64,
    list_len: u32,
    tile_pixels: u32,
) -> TileTerms {
    let mut rng = stream(seed, TERM_STREAM_BASE + profile_id);
    TileTerms {
        list_len,
        lanes: (0..tile_pixels)
            .map(|_| Lane::Active(model.sample_term(list_len, &mut rng)))
            .collect(),
    }
}

/// Synthetic stand-in for a binned frame: per-tile counts plus per-pixel
/// termination indices, without geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLoads {
    pub params: SkewParams,
    pub counts: Vec<u32>,
    /// Stream id that generated each tile's termination profile.
    pub term_profile_ids: Vec<u64>,
    pub terms: TermData,
}

impl SyntheticLoads {
    pub fn stats(&self) -> LoadStats {
        LoadStats::from_counts(&self.counts)
    }

    /// Rebuilds loads from stored counts and profile ids (a loads file).
    pub fn from_counts(params: SkewParams, counts: Vec<u32>, profile_ids: Vec<u64>) -> Result<Self> {
        params.term.validate()?;
        if counts.len() != profile_ids.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} counts but {} profile ids",
                counts.len(),
                profile_ids.len()
            )));
        }
        let tiles = counts
            .par_iter()
            .zip(&profile_ids)
            .map(|(&n, &id)| tile_terms(&params.term, params.seed, id, n, params.tile_pixels))
            .collect();
        Ok(SyntheticLoads {
            params: SkewParams {
                tiles: counts.len() as u32,
                ..params
            },
            counts,
            term_profile_ids: profile_ids,
            terms: TermData {
                tile_pixels: params.tile_pixels as usize,
                tiles,
            },
        })
    }
}

pub fn gen_tile_counts(p: &SkewParams) -> Result<Vec<u32>> {
    p.validate()?;
    Ok((0..p.tiles as u64)
        .into_par_iter()
        .map(|tile| p.draw_count(&mut stream(p.seed, tile)))
        .collect())
}

pub fn gen_tile_loads(p: &SkewParams) -> Result<SyntheticLoads> {
    let counts = gen_tile_counts(p)?;
    let ids = (0..p.tiles as u64).collect();
    SyntheticLoads::from_counts(*p, counts, ids)
}

/// Spread of a cluster relative to its depth.
pub const DEFAULT_CLUSTER_SPREAD: f64 = 0.035;

fn random_rotation(rng: &mut ChaCha8Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-6 {
            return q.map(|v| v / n);
        }
    }
}

fn camera_to_world(cam: &Camera, p: [f64; 3]) -> [f64; 3] {
    let world = cam.rotation().transpose() * (nalgebra::Vector3::from(p) - cam.translation());
    [world.x, world.y, world.z]
}

fn random_splat(rng: &mut ChaCha8Rng, mean: [f64; 3], depth: f64) -> Gaussian3D {
    let scale = std::array::from_fn(|_| depth * 0.004 * (rng.gen::<f64>() * 6f64.ln()).exp());
    Gaussian3D {
        mean,
        scale,
        rotation: random_rotation(rng),
        opacity: rng.gen_range(0.05..0.95),
        color: std::array::from_fn(|_| rng.gen::<f64>()),
    }
}

/// Gaussians scattered around `n_clusters` centres inside the view frustum.
pub fn gen_clustered_scene(n_gaussians: usize, n_clusters: usize, seed: u64, cam: &Camera) -> Vec<Gaussian3D> {
    gen_clustered_scene_with_spread(n_gaussians, n_clusters, seed, cam, DEFAULT_CLUSTER_SPREAD)
}

pub fn gen_clustered_scene_with_spread(
    n_gaussians: usize,
    n_clusters: usize,
    seed: u64,
    cam: &Camera,
    spread: f64,
) -> Vec<Gaussian3D> {
    if n_gaussians == 0 || n_clusters == 0 {
        return Vec::new();
    }
    let mut rng = stream(seed, 0);
    let [w, h] = cam.dims.map(f64::from);
    let [fx, fy] = cam.focal;
    let centres: Vec<[f64; 3]> = (0..n_clusters)
        .map(|_| {
            let z = rng.gen_range(3.0..10.0);
            let u = rng.gen_range(0.1..0.9) * w;
            let v = rng.gen_range(0.1..0.9) * h;
            [(u - w / 2.0) * z / fx, (v - h / 2.0) * z / fy, z]
        })
        .collect();
    (0..n_gaussians)
        .map(|i| {
            let c = centres[i % n_clusters];
            let z = c[2];
            let offset: [f64; 3] = std::array::from_fn(|_| {
                let n: f64 = StandardNormal.sample(&mut rng);
                n * spread * z
            });
            let p = [c[0] + offset[0], c[1] + offset[1], (c[2] + offset[2]).max(0.5)];
            random_splat(&mut rng, camera_to_world(cam, p), z)
        })
        .collect()
}

/// Uniformly scattered splats of mixed size and opacity in front of an
/// identity camera; the mix produces both early-terminating and
/// non-terminating pixels.
pub fn gen_random_scene(n_gaussians: usize, dims: [u32; 2], seed: u64) -> Scene {
    let focal = dims[0].max(dims[1]) as f64;
    let camera = Camera::identity(dims[0], dims[1], focal);
    let mut rng = stream(seed, 1);
    let [w, h] = dims.map(f64::from);
    let gaussians = (0..n_gaussians)
        .map(|_| {
            let z = rng.gen_range(1.0..6.0);
            let u = rng.gen_range(-0.1..1.1) * w;
            let v = rng.gen_range(-0.1..1.1) * h;
            let mean = [(u - w / 2.0) * z / focal, (v - h / 2.0) * z / focal, z];
            let size = z * 0.01 * (rng.gen::<f64>() * 8f64.ln()).exp();
            Gaussian3D {
                mean,
                scale: std::array::from_fn(|_| size * rng.gen_range(0.3..1.0)),
                rotation: random_rotation(&mut rng),
                opacity: if rng.gen_bool(0.3) {
                    rng.gen_range(0.9..1.0)
                } else {
                    rng.gen_range(0.0..0.9)
                },
                color: std::array::from_fn(|_| rng.gen::<f64>()),
            }
        })
        .collect();
    Scene {
        camera,
        config: SceneConfig {
            seed,
            ..SceneConfig::default()
        },
        gaussians,
    }
}

/// Training-time evolution of tile loads. Parameters move from `start` to
/// `end` along the curve `(1 - e^(-decay·x)) / (1 - e^(-decay))` (linear when
/// `decay` is 0, front-loaded for larger values), held constant within stages
/// of `stage_iters` iterations. Shape rises
/// geometrically while scale and cap fall geometrically, so every tile's count
/// is non-increasing over iterations; the seed is shared by all stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryParams {
    pub total_iters: u32,
    pub stage_iters: u32,
    pub decay: f64,
    pub start: SkewParams,
    pub end: SkewParams,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        let start = SkewParams::default();
        TrajectoryParams {
            total_iters: 7000,
            stage_iters: 100,
            decay: 0.0,
            start,
            end: SkewParams {
                shape: 20.0,
                scale: 60.0,
                max_cap: 400,
                term: SyntheticTermModel {
                    term_fraction_mean: 0.6,
                    term_fraction_spread: 0.1,
                },
                ..start
            },
        }
    }
}

impl TrajectoryParams {
    /// A trajectory that stays at its starting skew.
    pub fn always_skewed() -> Self {
        let d = Self::default();
        TrajectoryParams { end: d.start, ..d }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.total_iters == 0 || self.stage_iters == 0 {
            return bad("total_iters and stage_iters must be positive".into());
        }
        if !(self.decay.is_finite() && self.decay >= 0.0) {
            return bad(format!("decay must be non-negative, got {}", self.decay));
        }
        self.start.validate()?;
        self.end.validate()?;
        let (s, e) = (&self.start, &self.end);
        if s.distribution != e.distribution
            || s.tiles != e.tiles
            || s.seed != e.seed
            || s.tile_pixels != e.tile_pixels
        {
            return bad("start and end must share distribution, tiles, seed and tile_pixels".into());
        }
        if e.shape < s.shape || e.scale > s.scale || e.max_cap > s.max_cap {
            return bad("end must not be more skewed than start (shape up, scale and cap down)".into());
        }
        Ok(())
    }

    pub fn stage_of(&self, iter: u32) -> u32 {
        iter / self.stage_iters
    }

    pub fn num_stages(&self) -> u32 {
        self.total_iters.div_ceil(self.stage_iters)
    }

    /// Progress in [0, 1] of a stage along the ease curve.
    fn progress(&self, stage: u32) -> f64 {
        let last = self.num_stages().saturating_sub(1);
        if last == 0 {
            return 0.0;
        }
        let x = stage as f64 / last as f64;
        if self.decay == 0.0 {
            x
        } else {
            (1.0 - (-self.decay * x).exp()) / (1.0 - (-self.decay).exp())
        }
    }

    pub fn params_for_stage(&self, stage: u32) -> SkewParams {
        let w = self.progress(stage);
        let (s, e) = (&self.start, &self.end);
        let geo = |a: f64, b: f64| {
            if a > 0.0 && b > 0.0 {
                a * (b / a).powf(w)
            } else {
                a + (b - a) * w
            }
        };
        let lin = |a: f64, b: f64| a + (b - a) * w;
        SkewParams {
            shape: geo(s.shape, e.shape).max(s.shape),
            scale: geo(s.scale, e.scale).min(s.scale),
            max_cap: (geo(s.max_cap as f64, e.max_cap as f64).round() as u32).clamp(e.max_cap, s.max_cap),
            term: SyntheticTermModel {
                term_fraction_mean: lin(s.term.term_fraction_mean, e.term.term_fraction_mean),
                term_fraction_spread: lin(s.term.term_fraction_spread, e.term.term_fraction_spread),
            },
            ..*s
        }
    }

    pub fn params_at(&self, iter: u32) -> Result<SkewParams> {
        if iter >= self.total_iters {
            return Err(Error::IterOutOfRange {
                iter,
                total: self.total_iters,
            });
        }
        Ok(self.params_for_stage(self.stage_of(iter)))
    }
}

pub fn trajectory_loads(tp: &TrajectoryParams, iter: u32) -> Result<SyntheticLoads> {
    tp.validate()?;
    gen_tile_loads(&tp.params_at(iter)?)
}
