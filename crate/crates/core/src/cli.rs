//! Command-line front end. Exit codes: 0 success, 1 failed check or I/O
//! error, 2 usage or invalid input.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::adaptive::{run_training_sim, speedup_summary, SpeedupSummary, DEFAULT_CHECK_INTERVAL};
use crate::blend::render_reference;
use crate::error::{Error, Result};
use crate::kernels::{compare_outputs, run_kernel, trace_counts, KernelVariant, TermData, WorkTrace, PLANES};
use crate::preprocess::{bin_tiles, project_scene, tile_load_histogram};
use crate::report;
use crate::scene::{load_scene, save_scene, Camera, Scene, SceneConfig};
use crate::sim::{makespan, simulate_detailed, CostModel, MachineConfig, SimMetrics};
use crate::workload::{gen_clustered_scene, gen_tile_loads, LoadDistribution, SkewParams, TrajectoryParams};

/// Variants whose makespans must be strictly decreasing on a skewed workload.
pub const ORDERING: [KernelVariant; 4] = [
    KernelVariant::Naive,
    KernelVariant::DynamicBlocks,
    KernelVariant::GaussianWise,
    KernelVariant::FineGrainedCombined,
];

#[derive(Debug, Parser)]
#[command(name = "splatbalance", version, about = "Gaussian splatting render-kernel load-balance simulator")]
pub struct Cli {
    /// JSON config file (machine, cost, skew, trajectory, seed, check_interval).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub machine_sms: Option<u32>,
    /// Block slots per SM.
    #[arg(long, global = true)]
    pub machine_slots: Option<u32>,
    #[command(flatten)]
    pub cost: CostFlags,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Default, Args)]
pub struct CostFlags {
    #[arg(long = "cost-compute-step", global = true)]
    pub compute_step: Option<f64>,
    #[arg(long = "cost-shared-chunk-load", global = true)]
    pub shared_chunk_load: Option<f64>,
    #[arg(long = "cost-shared-chunk-load-opt", global = true)]
    pub shared_chunk_load_opt: Option<f64>,
    #[arg(long = "cost-prefix-group-overhead", global = true)]
    pub prefix_group_overhead: Option<f64>,
    #[arg(long = "cost-warp-reduce", global = true)]
    pub warp_reduce: Option<f64>,
    #[arg(long = "cost-pool-fetch", global = true)]
    pub pool_fetch: Option<f64>,
    #[arg(long = "cost-writeback", global = true)]
    pub writeback: Option<f64>,
    #[arg(long = "cost-global-feature-read", global = true)]
    pub global_feature_read: Option<f64>,
}

impl CostFlags {
    fn apply(&self, cost: &mut CostModel) {
        let pairs = [
            (self.compute_step, &mut cost.compute_step),
            (self.shared_chunk_load, &mut cost.shared_chunk_load),
            (self.shared_chunk_load_opt, &mut cost.shared_chunk_load_opt),
            (self.prefix_group_overhead, &mut cost.prefix_group_overhead),
            (self.warp_reduce, &mut cost.warp_reduce),
            (self.pool_fetch, &mut cost.pool_fetch),
            (self.writeback, &mut cost.writeback),
            (self.global_feature_read, &mut cost.global_feature_read),
        ];
        for (flag, slot) in pairs {
            if let Some(v) = flag {
                *slot = v;
            }
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic loads file or a clustered scene.
    Gen(GenArgs),
    /// Render a scene with the reference and each kernel and compare.
    Render(RenderArgs),
    /// Simulate kernels on a workload and report makespan and occupancy.
    Sim(SimArgs),
    /// Check the kernel ordering over a grid of cost-constant multipliers.
    Sweep(SweepArgs),
    /// Replay a training run with adaptive kernel selection.
    Adapt(AdaptArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistArg {
    Pareto,
    Lognormal,
    Uniform,
}

impl From<DistArg> for LoadDistribution {
    fn from(d: DistArg) -> Self {
        match d {
            DistArg::Pareto => LoadDistribution::Pareto,
            DistArg::Lognormal => LoadDistribution::LogNormal,
            DistArg::Uniform => LoadDistribution::Uniform,
        }
    }
}

/// Overrides for the synthetic load generator.
#[derive(Debug, Default, Clone, Args)]
pub struct SkewFlags {
    #[arg(long)]
    pub shape: Option<f64>,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub cap: Option<u32>,
    #[arg(long)]
    pub tiles: Option<u32>,
    #[arg(long)]
    pub term_mean: Option<f64>,
    #[arg(long)]
    pub term_spread: Option<f64>,
    #[arg(long)]
    pub tile_pixels: Option<u32>,
}

impl SkewFlags {
    fn apply(&self, p: &mut SkewParams, dist: Option<DistArg>) {
        if let Some(d) = dist {
            p.distribution = d.into();
        }
        if let Some(v) = self.shape {
            p.shape = v;
        }
        if let Some(v) = self.scale {
            p.scale = v;
        }
        if let Some(v) = self.cap {
            p.max_cap = v;
        }
        if let Some(v) = self.tiles {
            p.tiles = v;
        }
        if let Some(v) = self.term_mean {
            p.term.term_fraction_mean = v;
        }
        if let Some(v) = self.term_spread {
            p.term.term_fraction_spread = v;
        }
        if let Some(v) = self.tile_pixels {
            p.tile_pixels = v;
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum, required_unless_present = "scene")]
    pub dist: Option<DistArg>,
    #[command(flatten)]
    pub skew: SkewFlags,
    /// Write a clustered scene instead of a loads file.
    #[arg(long)]
    pub scene: bool,
    #[arg(long, default_value_t = 20_000)]
    pub gaussians: usize,
    #[arg(long, default_value_t = 8)]
    pub clusters: usize,
    #[arg(long, default_value_t = 960)]
    pub width: u32,
    #[arg(long, default_value_t = 540)]
    pub height: u32,
    /// Focal length in pixels; defaults to the image width.
    #[arg(long)]
    pub focal: Option<f64>,
    /// Output file name inside the output directory.
    #[arg(long)]
    pub name: Option<String>,
}

/// Where a simulation's workload comes from.
#[derive(Debug, Default, Args)]
pub struct SourceArgs {
    /// Loads file written by `gen`.
    #[arg(long, conflicts_with = "scene")]
    pub loads: Option<PathBuf>,
    /// Scene file; loads come from its binning and reference termination.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub dist: Option<DistArg>,
    #[command(flatten)]
    pub skew: SkewFlags,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Comma-separated variant names; all variants by default.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<KernelVariant>,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    /// Perturb one variant's output (exercises the failure path).
    #[arg(long, hide = true)]
    pub corrupt: Option<KernelVariant>,
    /// Also write PPM images for every variant.
    #[arg(long)]
    pub images: bool,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<KernelVariant>,
    /// Write per-task timelines.
    #[arg(long)]
    pub timeline: bool,
    /// Write per-warp work traces.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Multipliers applied to each swept constant.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5")]
    pub multipliers: Vec<f64>,
    /// Cost constants to sweep; all of them by default.
    #[arg(long, value_delimiter = ',')]
    pub constants: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Default,
    AlwaysSkewed,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    /// Built-in trajectory, used when the config file has none.
    #[arg(long, value_enum, default_value = "default")]
    pub preset: Preset,
    #[arg(long)]
    pub interval: Option<u32>,
    #[arg(long)]
    pub total_iters: Option<u32>,
}

/// Contents of the `--config` file. Every section is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub machine: Option<MachineConfig>,
    pub cost: Option<CostModel>,
    pub skew: Option<SkewParams>,
    pub trajectory: Option<TrajectoryParams>,
    pub seed: Option<u64>,
    pub check_interval: Option<u32>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut de = serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }
}

/// Machine, cost and seed after applying defaults, config file and flags.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub machine: MachineConfig,
    pub cost: CostModel,
    pub seed: Option<u64>,
    #[serde(skip)]
    pub file: ConfigFile,
}

fn resolve(cli: &Cli) -> Result<Resolved> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let mut machine = file.machine.unwrap_or_default();
    if let Some(v) = cli.machine_sms {
        machine.num_sms = v;
    }
    if let Some(v) = cli.machine_slots {
        machine.block_slots_per_sm = v;
    }
    machine.validate()?;
    let mut cost = file.cost.unwrap_or_default();
    cli.cost.apply(&mut cost);
    cost.validate()?;
    Ok(Resolved {
        machine,
        cost,
        seed: cli.seed.or(file.seed),
        file,
    })
}

fn skew_params(r: &Resolved, flags: &SkewFlags, dist: Option<DistArg>) -> Result<SkewParams> {
    let mut p = r.file.skew.unwrap_or_default();
    if let Some(seed) = r.seed {
        p.seed = seed;
    }
    flags.apply(&mut p, dist);
    p.validate()?;
    Ok(p)
}

fn variants_or_all(v: &[KernelVariant]) -> Vec<KernelVariant> {
    if v.is_empty() {
        KernelVariant::ALL.to_vec()
    } else {
        v.to_vec()
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Per-tile termination data of a scene, from its reference render.
pub fn scene_terms(scene: &Scene) -> Result<TermData> {
    let g = project_scene(scene);
    let binning = bin_tiles(&g, scene.camera.dims, scene.config.patch);
    let reference = render_reference(&binning, &g, scene.camera.dims, scene.config.background_f32())?;
    Ok(TermData::from_render(&binning, &reference))
}

struct Workload {
    terms: TermData,
    description: serde_json::Value,
}

fn load_workload(r: &Resolved, src: &SourceArgs) -> Result<Workload> {
    if let Some(path) = &src.scene {
        let scene = load_scene(path)?;
        return Ok(Workload {
            terms: scene_terms(&scene)?,
            description: json!({ "scene": path }),
        });
    }
    if let Some(path) = &src.loads {
        // Term model and seed come from the file's own config line unless overridden.
        let mut params = match report::read_config_line(path)? {
            Some(v) => match v.get("skew") {
                Some(s) => serde_json::from_value(s.clone()).map_err(|e| Error::Parse {
                    path: format!("{}: config.skew", path.display()),
                    message: e.to_string(),
                })?,
                None => r.file.skew.unwrap_or_default(),
            },
            None => r.file.skew.unwrap_or_default(),
        };
        if let Some(seed) = r.seed {
            params.seed = seed;
        }
        src.skew.apply(&mut params, src.dist);
        let loads = report::read_loads(path, &params)?;
        return Ok(Workload {
            terms: loads.terms,
            description: json!({ "loads": path, "skew": params }),
        });
    }
    let params = skew_params(r, &src.skew, src.dist)?;
    let loads = gen_tile_loads(&params)?;
    Ok(Workload {
        terms: loads.terms,
        description: json!({ "skew": params }),
    })
}

fn config_json(r: &Resolved, command: &str, extra: serde_json::Value) -> serde_json::Value {
    let mut v = json!({
        "command": command,
        "machine": r.machine,
        "cost": r.cost,
        "seed": r.seed,
    });
    if let (Some(obj), serde_json::Value::Object(more)) = (v.as_object_mut(), extra) {
        obj.extend(more);
    }
    v
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    CheckFailed,
}

fn cmd_gen(cli: &Cli, r: &Resolved, a: &GenArgs) -> Result<Status> {
    ensure_dir(&cli.out)?;
    if a.scene {
        if a.width == 0 || a.height == 0 {
            return Err(Error::InvalidParams("image dims must be positive".into()));
        }
        let seed = r.seed.unwrap_or(0);
        let camera = Camera::identity(a.width, a.height, a.focal.unwrap_or(a.width as f64));
        let scene = Scene {
            camera,
            config: SceneConfig {
                seed,
                ..SceneConfig::default()
            },
            gaussians: gen_clustered_scene(a.gaussians, a.clusters, seed, &camera),
        };
        scene.validate()?;
        let path = cli.out.join(a.name.as_deref().unwrap_or("scene.json"));
        save_scene(&scene, &path)?;
        let g = project_scene(&scene);
        let stats = tile_load_histogram(&bin_tiles(&g, camera.dims, scene.config.patch)).stats;
        println!(
            "wrote {} ({} gaussians); tile loads max {} p99 {} p50 {}",
            path.display(),
            scene.gaussians.len(),
            stats.max,
            stats.p99,
            stats.p50
        );
        return Ok(Status::Ok);
    }
    let params = skew_params(r, &a.skew, a.dist)?;
    let loads = gen_tile_loads(&params)?;
    let path = cli.out.join(a.name.as_deref().unwrap_or("loads.csv"));
    report::write_loads(&path, &loads, &config_json(r, "gen", json!({ "skew": params })))?;
    let s = loads.stats();
    println!(
        "wrote {} ({} tiles); max {} p99 {} p50 {} digest {}",
        path.display(),
        loads.counts.len(),
        s.max,
        s.p99,
        s.p50,
        report::counts_digest(&loads.counts)
    );
    Ok(Status::Ok)
}

fn cmd_render(cli: &Cli, r: &Resolved, a: &RenderArgs) -> Result<Status> {
    ensure_dir(&cli.out)?;
    let scene = load_scene(&a.scene)?;
    let dims = scene.camera.dims;
    let bg = scene.config.background_f32();
    let g = project_scene(&scene);
    let binning = bin_tiles(&g, dims, scene.config.patch);
    let reference = render_reference(&binning, &g, dims, bg)?;
    report::write_ppm(&cli.out.join("reference.ppm"), &reference)?;
    report::write_f32_plane(&cli.out.join("reference_alpha.f32"), &reference.alphas())?;
    report::write_f32_plane(&cli.out.join("reference_depth.f32"), &reference.depths())?;

    let path = cli.out.join("render_deviation.csv");
    let cfg = config_json(r, "render", json!({ "scene": a.scene, "tolerance": a.tolerance }));
    let mut w = report::csv_writer(&path, &cfg)?;
    w.write_record(["variant", "plane", "max_abs", "max_rel", "contrib_mismatches", "pass"])?;
    let mut all_pass = true;
    for v in variants_or_all(&a.variants) {
        let (mut out, _) = run_kernel(v, &binning, &g, dims, bg)?;
        if a.corrupt == Some(v) {
            if let Some(p) = out.pixels.first_mut() {
                p.color[0] += 0.25;
                p.contrib_count += 1;
            }
        }
        if a.images {
            report::write_ppm(&cli.out.join(format!("{v}.ppm")), &out)?;
        }
        let d = compare_outputs(&reference, &out)?;
        for (k, plane) in PLANES.iter().enumerate() {
            let pass = d.max_rel[k] <= a.tolerance && d.contrib_mismatches == 0;
            all_pass &= pass;
            w.write_record([
                v.to_string(),
                plane.to_string(),
                d.max_abs[k].to_string(),
                d.max_rel[k].to_string(),
                d.contrib_mismatches.to_string(),
                pass.to_string(),
            ])?;
        }
        let worst = d.max_rel.iter().copied().fold(0.0, f64::max);
        println!(
            "{v:<20} max_rel {worst:.3e} contrib_mismatches {} {}",
            d.contrib_mismatches,
            if worst <= a.tolerance && d.contrib_mismatches == 0 { "ok" } else { "FAIL" }
        );
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(if all_pass { Status::Ok } else { Status::CheckFailed })
}

fn cmd_sim(cli: &Cli, r: &Resolved, a: &SimArgs) -> Result<Status> {
    ensure_dir(&cli.out)?;
    let wl = load_workload(r, &a.source)?;
    let cfg = config_json(r, "sim", wl.description.clone());
    let variants = variants_or_all(&a.variants);
    let traces: Vec<WorkTrace> = variants.par_iter().map(|&v| trace_counts(v, &wl.terms)).collect();
    let mut rows = Vec::new();
    for trace in &traces {
        let s = simulate_detailed(trace, &r.machine, &r.cost, trace.variant.dispatch());
        if a.timeline {
            let p = cli.out.join(format!("timeline_{}.csv", trace.variant));
            report::write_timeline(&p, &s.timeline, &cfg)?;
        }
        if a.trace {
            report::write_trace(&cli.out.join(format!("trace_{}.csv", trace.variant)), trace, &cfg)?;
        }
        rows.push(s.metrics);
    }
    report::write_metrics(&cli.out.join("sim_metrics.csv"), &rows, &cfg)?;
    print_metrics(&rows);
    Ok(Status::Ok)
}

fn print_metrics(rows: &[SimMetrics]) {
    println!(
        "{:<20} {:>8} {:>14} {:>9} {:>7} {:>8}",
        "variant", "dispatch", "makespan", "occupancy", "waves", "tasks"
    );
    for m in rows {
        println!(
            "{:<20} {:>8} {:>14.1} {:>9.4} {:>7.3} {:>8}",
            m.variant.to_string(),
            m.dispatch.to_string(),
            m.makespan,
            m.achieved_occupancy,
            m.waves,
            m.tasks
        );
    }
}

/// One point of a cost sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub multipliers: Vec<f64>,
    /// Makespans in [`ORDERING`] order.
    pub makespans: Vec<f64>,
    pub ordering_holds: bool,
}

/// Simulates the [`ORDERING`] variants at every point of the Cartesian grid
/// `multipliers^constants` applied to `base`.
pub fn run_sweep(
    traces: &[WorkTrace],
    machine: &MachineConfig,
    base: &CostModel,
    constants: &[String],
    multipliers: &[f64],
) -> Result<Vec<SweepPoint>> {
    if constants.is_empty() || multipliers.is_empty() {
        return Err(Error::InvalidParams("sweep grid is empty".into()));
    }
    for c in constants {
        if base.get(c).is_none() {
            return Err(Error::InvalidParams(format!("unknown cost constant `{c}`")));
        }
    }
    if multipliers.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(Error::InvalidParams("multipliers must be finite and non-negative".into()));
    }
    let by_variant: Vec<&WorkTrace> = ORDERING
        .iter()
        .map(|v| {
            traces
                .iter()
                .find(|t| t.variant == *v)
                .ok_or_else(|| Error::InvalidParams(format!("sweep needs a {v} trace")))
        })
        .collect::<Result<_>>()?;
    let n_points = (multipliers.len() as u64)
        .checked_pow(constants.len() as u32)
        .filter(|&n| n <= 10_000_000)
        .ok_or_else(|| Error::InvalidParams("sweep grid is too large".into()))?;
    let mut grid = Vec::with_capacity(n_points as usize);
    for mut idx in 0..n_points {
        let mut cost = *base;
        let mut mults = Vec::with_capacity(constants.len());
        for c in constants {
            let m = multipliers[(idx % multipliers.len() as u64) as usize];
            idx /= multipliers.len() as u64;
            cost.set(c, base.get(c).unwrap_or_default() * m)?;
            mults.push(m);
        }
        grid.push((mults, cost));
    }
    // Each variant is simulated once per distinct set of constants it reads.
    let per_variant: Vec<Vec<f64>> = by_variant
        .iter()
        .map(|trace| {
            let dispatch = trace.variant.dispatch();
            let mut keys: HashMap<[u64; 8], usize> = HashMap::new();
            let mut unique = Vec::new();
            let index: Vec<usize> = grid
                .iter()
                .map(|(_, cost)| {
                    let canon = cost.canonical_for(trace.variant, dispatch);
                    *keys.entry(canon.to_bits()).or_insert_with(|| {
                        unique.push(canon);
                        unique.len() - 1
                    })
                })
                .collect();
            let spans: Vec<f64> = unique.par_iter().map(|c| makespan(trace, machine, c)).collect();
            index.into_iter().map(|i| spans[i]).collect()
        })
        .collect();
    Ok(grid
        .into_iter()
        .enumerate()
        .map(|(i, (multipliers, _))| {
            let makespans: Vec<f64> = per_variant.iter().map(|v| v[i]).collect();
            let ordering_holds = makespans.windows(2).all(|w| w[0] > w[1]);
            SweepPoint {
                multipliers,
                makespans,
                ordering_holds,
            }
        })
        .collect())
}

fn cmd_sweep(cli: &Cli, r: &Resolved, a: &SweepArgs) -> Result<Status> {
    let constants: Vec<String> = match &a.constants {
        Some(c) => c.iter().filter(|s| !s.is_empty()).cloned().collect(),
        None => CostModel::FIELDS.iter().map(|s| s.to_string()).collect(),
    };
    ensure_dir(&cli.out)?;
    let wl = load_workload(r, &a.source)?;
    let traces: Vec<WorkTrace> = ORDERING.par_iter().map(|&v| trace_counts(v, &wl.terms)).collect();
    let points = run_sweep(&traces, &r.machine, &r.cost, &constants, &a.multipliers)?;

    let mut extra = wl.description;
    extra["constants"] = json!(constants);
    extra["multipliers"] = json!(a.multipliers);
    let path = cli.out.join("sweep.csv");
    let mut w = report::csv_writer(&path, &config_json(r, "sweep", extra))?;
    let mut header: Vec<String> = vec!["point".into()];
    header.extend(constants.iter().map(|c| format!("x_{c}")));
    header.extend(ORDERING.iter().map(|v| format!("makespan_{v}")));
    header.push("ordering_holds".into());
    w.write_record(&header)?;
    for (i, p) in points.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(p.multipliers.iter().map(f64::to_string));
        rec.extend(p.makespans.iter().map(f64::to_string));
        rec.push(p.ordering_holds.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let broken = points.iter().filter(|p| !p.ordering_holds).count();
    println!("{} grid points, ordering holds at {}", points.len(), points.len() - broken);
    if broken > 0 {
        eprintln!("warning: makespan ordering breaks at {broken} of {} grid points", points.len());
    }
    Ok(Status::Ok)
}

pub fn format_summary(inflection: Option<u32>, s: &SpeedupSummary) -> String {
    let opt = |v: Option<f64>| v.map_or("absent".to_string(), |x| format!("{x:.4}"));
    format!(
        "inflection={} pre_speedup={} post_speedup={} overall_speedup={:.4} overall_with_overhead={:.4}",
        inflection.map_or("none".to_string(), |i| i.to_string()),
        opt(s.pre_inflection),
        opt(s.post_inflection),
        s.overall,
        s.overall_with_overhead
    )
}

fn cmd_adapt(cli: &Cli, r: &Resolved, a: &AdaptArgs) -> Result<Status> {
    ensure_dir(&cli.out)?;
    let mut tp = r.file.trajectory.unwrap_or(match a.preset {
        Preset::Default => TrajectoryParams::default(),
        Preset::AlwaysSkewed => TrajectoryParams::always_skewed(),
    });
    if let Some(seed) = r.seed {
        tp.start.seed = seed;
        tp.end.seed = seed;
    }
    if let Some(n) = a.total_iters {
        tp.total_iters = n;
    }
    let interval = a
        .interval
        .or(r.file.check_interval)
        .unwrap_or(DEFAULT_CHECK_INTERVAL);
    let report = run_training_sim(&tp, &r.machine, &r.cost, interval)?;
    let summary = format_summary(report.inflection, &speedup_summary(&report));
    let cfg = config_json(r, "adapt", json!({ "trajectory": tp, "check_interval": interval }));
    report::write_training_report(&cli.out.join("adapt.csv"), &report, &summary, &cfg)?;
    for c in &report.state.history {
        println!(
            "checkpoint {:>6}: balanced {:.1} baseline {:.1}",
            c.iter, c.t_balanced, c.t_baseline
        );
    }
    println!(
        "adaptive {:.1} always-balanced {:.1} always-baseline {:.1}",
        report.adaptive_total, report.always_balanced_total, report.always_baseline_total
    );
    println!("{summary}");
    Ok(Status::Ok)
}

pub fn run(cli: &Cli) -> Result<Status> {
    let r = resolve(cli)?;
    match &cli.command {
        Command::Gen(a) => cmd_gen(cli, &r, a),
        Command::Render(a) => cmd_render(cli, &r, a),
        Command::Sim(a) => cmd_sim(cli, &r, a),
        Command::Sweep(a) => cmd_sweep(cli, &r, a),
        Command::Adapt(a) => cmd_adapt(cli, &r, a),
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Csv(_) | Error::DimensionMismatch(_) => 1,
        _ => 2,
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(Status::Ok) => 0,
        Ok(Status::CheckFailed) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main() -> i32 {
    run_with_args(std::env::args_os())
}
