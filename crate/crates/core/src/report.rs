//! File formats: CSV outputs (each starting with a `# config: {json}` line),
//! loads files, PPM images and raw f32 planes.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::adaptive::TrainingSimReport;
use crate::blend::RenderOutput;
use crate::error::{Error, Result};
use crate::kernels::WorkTrace;
use crate::sim::{SimMetrics, SimTimeline};
use crate::workload::{SkewParams, SyntheticLoads};

const CONFIG_PREFIX: &str = "# config: ";

/// CSV writer whose first line records the resolved configuration.
pub fn csv_writer(path: &Path, config: &impl Serialize) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let json = serde_json::to_string(config).expect("config serialization is infallible");
    writeln!(out, "{CONFIG_PREFIX}{json}").map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(out))
}

fn finish(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads the `# config:` line of a CSV written by [`csv_writer`], if any.
pub fn read_config_line(path: &Path) -> Result<Option<serde_json::Value>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut first = String::new();
    BufReader::new(file)
        .read_line(&mut first)
        .map_err(|e| Error::io(path, e))?;
    match first.trim_end().strip_prefix(CONFIG_PREFIX) {
        Some(json) => serde_json::from_str(json).map(Some).map_err(|e| Error::Parse {
            path: format!("{}:1", path.display()),
            message: e.to_string(),
        }),
        None => Ok(None),
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
struct LoadRow {
    tile_id: u32,
    count: u32,
    term_profile_id: u64,
}

pub fn write_loads(path: &Path, loads: &SyntheticLoads, config: &impl Serialize) -> Result<()> {
    let mut w = csv_writer(path, config)?;
    for (tile, (&count, &id)) in loads.counts.iter().zip(&loads.term_profile_ids).enumerate() {
        w.serialize(LoadRow {
            tile_id: tile as u32,
            count,
            term_profile_id: id,
        })?;
    }
    finish(w, path)
}

/// Reads a loads file; termination profiles are regenerated from `params`.
/// Rows must list tiles `0..n` in order.
pub fn read_loads(path: &Path, params: &SkewParams) -> Result<SyntheticLoads> {
    let mut counts = Vec::new();
    let mut ids = Vec::new();
    for (i, row) in csv_reader(path)?.deserialize::<LoadRow>().enumerate() {
        let row = row?;
        if row.tile_id as usize != i {
            return Err(Error::Parse {
                path: format!("{}: row {}", path.display(), i + 1),
                message: format!("expected tile_id {i}, found {}", row.tile_id),
            });
        }
        counts.push(row.count);
        ids.push(row.term_profile_id);
    }
    SyntheticLoads::from_counts(*params, counts, ids)
}

/// SHA-256 over the tile counts (little-endian u32s).
pub fn counts_digest(counts: &[u32]) -> String {
    let mut h = Sha256::new();
    for c in counts {
        h.update(c.to_le_bytes());
    }
    format!("{:x}", h.finalize())
}

pub fn write_trace(path: &Path, trace: &WorkTrace, config: &impl Serialize) -> Result<()> {
    let mut w = csv_writer(path, config)?;
    w.write_record([
        "task_id",
        "tile_id",
        "warp_id",
        "compute_steps",
        "chunks",
        "prefix_groups",
        "reduce_ops",
        "writeback_ops",
    ])?;
    for t in &trace.tasks {
        for (warp, c) in t.warps.iter().enumerate() {
            w.write_record([
                t.task_id.to_string(),
                t.tile_id.to_string(),
                warp.to_string(),
                c.compute_steps.to_string(),
                t.shared_load_chunks.to_string(),
                c.prefix_groups.to_string(),
                c.reduce_ops.to_string(),
                c.writeback_ops.to_string(),
            ])?;
        }
    }
    finish(w, path)
}

pub fn write_metrics(path: &Path, rows: &[SimMetrics], config: &impl Serialize) -> Result<()> {
    let mut w = csv_writer(path, config)?;
    w.write_record([
        "variant",
        "dispatch",
        "makespan_cycles",
        "occupancy",
        "idle_fraction",
        "waves",
        "tasks",
    ])?;
    for m in rows {
        w.write_record([
            m.variant.to_string(),
            m.dispatch.to_string(),
            m.makespan.to_string(),
            m.achieved_occupancy.to_string(),
            m.idle_fraction.to_string(),
            m.waves.to_string(),
            m.tasks.to_string(),
        ])?;
    }
    finish(w, path)
}

pub fn write_timeline(path: &Path, timeline: &SimTimeline, config: &impl Serialize) -> Result<()> {
    let mut w = csv_writer(path, config)?;
    w.write_record(["task_id", "start", "end", "sm", "slot"])?;
    for (i, p) in timeline.placements.iter().enumerate() {
        w.write_record([
            i.to_string(),
            p.start.to_string(),
            p.end.to_string(),
            p.sm.to_string(),
            p.slot.to_string(),
        ])?;
    }
    finish(w, path)
}

pub fn write_training_report(
    path: &Path,
    report: &TrainingSimReport,
    summary_line: &str,
    config: &impl Serialize,
) -> Result<()> {
    let mut w = csv_writer(path, config)?;
    w.write_record(["iter", "variant", "cycles", "is_checkpoint", "t_balanced", "t_baseline"])?;
    for r in &report.iterations {
        let (tb, tbase) = r
            .checkpoint
            .map_or((String::new(), String::new()), |c| {
                (c.t_balanced.to_string(), c.t_baseline.to_string())
            });
        w.write_record([
            r.iter.to_string(),
            r.variant.to_string(),
            r.cycles.to_string(),
            (r.checkpoint.is_some() as u8).to_string(),
            tb,
            tbase,
        ])?;
    }
    let mut inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    writeln!(inner, "# summary: {summary_line}").map_err(|e| Error::io(path, e))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PPM (P6) of the color plane.
pub fn write_ppm(path: &Path, img: &RenderOutput) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    for c in img.colors() {
        bytes.extend(c.map(to_byte));
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Raw little-endian f32 plane, row-major.
pub fn write_f32_plane(path: &Path, values: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
