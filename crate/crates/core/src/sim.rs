//! SIMT machine model: block slots on SMs, static or dynamic task dispatch.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::blend::WARP_SIZE;
use crate::error::{Error, Result};
use crate::kernels::{Dispatch, KernelVariant, TaskTrace, WarpCounts, WorkTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MachineConfig {
    pub num_sms: u32,
    pub block_slots_per_sm: u32,
    pub warps_per_block: u32,
    pub warp_size: u32,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig {
            num_sms: 108,
            block_slots_per_sm: 16,
            warps_per_block: 4,
            warp_size: 32,
        }
    }
}

impl MachineConfig {
    pub fn total_slots(&self) -> usize {
        self.num_sms as usize * self.block_slots_per_sm as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_sms == 0 || self.block_slots_per_sm == 0 || self.warps_per_block == 0 {
            return Err(Error::InvalidConfig(
                "machine sizes must be positive".to_string(),
            ));
        }
        // The kernels are written for 32-lane warps.
        if self.warp_size as usize != WARP_SIZE {
            return Err(Error::InvalidConfig(format!(
                "warp_size must be {WARP_SIZE}, got {}",
                self.warp_size
            )));
        }
        Ok(())
    }
}

/// Cycle costs per counted operation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub compute_step: f64,
    pub shared_chunk_load: f64,
    /// Chunk cost of `SharedMemOpt`, which also stages features and depths.
    pub shared_chunk_load_opt: f64,
    pub prefix_group_overhead: f64,
    pub warp_reduce: f64,
    pub pool_fetch: f64,
    pub writeback: f64,
    /// Extra per compute step for variants reading features from global memory.
    pub global_feature_read: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            compute_step: 1.0,
            shared_chunk_load: 32.0,
            shared_chunk_load_opt: 8.0,
            prefix_group_overhead: 5.0,
            warp_reduce: 5.0,
            pool_fetch: 20.0,
            writeback: 4.0,
            global_feature_read: 0.5,
        }
    }
}

impl CostModel {
    pub const FIELDS: [&'static str; 8] = [
        "compute_step",
        "shared_chunk_load",
        "shared_chunk_load_opt",
        "prefix_group_overhead",
        "warp_reduce",
        "pool_fetch",
        "writeback",
        "global_feature_read",
    ];

    fn field_mut(&mut self, name: &str) -> Option<&mut f64> {
        Some(match name {
            "compute_step" => &mut self.compute_step,
            "shared_chunk_load" => &mut self.shared_chunk_load,
            "shared_chunk_load_opt" => &mut self.shared_chunk_load_opt,
            "prefix_group_overhead" => &mut self.prefix_group_overhead,
            "warp_reduce" => &mut self.warp_reduce,
            "pool_fetch" => &mut self.pool_fetch,
            "writeback" => &mut self.writeback,
            "global_feature_read" => &mut self.global_feature_read,
            _ => return None,
        })
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        let mut copy = *self;
        copy.field_mut(name).map(|v| *v)
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = self
            .field_mut(name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown cost constant `{name}`")))?;
        *slot = value;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for name in Self::FIELDS {
            let v = self.get(name).unwrap_or_default();
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "cost constant {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Copy with the constants `variant` never reads under `dispatch` zeroed,
    /// so equal results share one key.
    pub fn canonical_for(&self, variant: KernelVariant, dispatch: Dispatch) -> CostModel {
        let mut c = *self;
        if variant.stages_features() {
            c.shared_chunk_load = 0.0;
            c.global_feature_read = 0.0;
        } else {
            c.shared_chunk_load_opt = 0.0;
        }
        if !variant.is_gaussian_wise() {
            c.prefix_group_overhead = 0.0;
            c.warp_reduce = 0.0;
        }
        if dispatch == Dispatch::Static {
            c.pool_fetch = 0.0;
        }
        c
    }

    pub fn to_bits(&self) -> [u64; 8] {
        Self::FIELDS.map(|f| self.get(f).unwrap_or_default().to_bits())
    }

    pub fn chunk_cost(&self, variant: KernelVariant) -> f64 {
        if variant.stages_features() {
            self.shared_chunk_load_opt
        } else {
            self.shared_chunk_load
        }
    }

    pub fn step_cost(&self, variant: KernelVariant) -> f64 {
        if variant.stages_features() {
            self.compute_step
        } else {
            self.compute_step + self.global_feature_read
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDuration {
    pub block_cycles: f64,
    /// Cycles each warp spends in its own blend loop.
    pub warp_busy: Vec<f64>,
    /// Cycles the whole block spends in cooperative loads and pool fetches;
    /// every warp of the block is resident and active during them.
    pub block_shared: f64,
}

impl TaskDuration {
    /// Active warp-cycles of the task, counted towards achieved occupancy.
    pub fn active_warp_cycles(&self) -> f64 {
        self.warp_busy.iter().sum::<f64>() + self.block_shared * self.warp_busy.len() as f64
    }
}

fn warp_cycles(w: &WarpCounts, step: f64, cost: &CostModel) -> f64 {
    w.compute_steps as f64 * step
        + w.prefix_groups as f64 * cost.prefix_group_overhead
        + w.reduce_ops as f64 * cost.warp_reduce
        + w.writeback_ops as f64 * cost.writeback
}

fn shared_cycles(task: &TaskTrace, variant: KernelVariant, dispatch: Dispatch, cost: &CostModel) -> f64 {
    let mut c = task.shared_load_chunks as f64 * cost.chunk_cost(variant);
    if dispatch == Dispatch::Dynamic {
        c += cost.pool_fetch;
    }
    c
}

pub fn task_duration(
    task: &TaskTrace,
    variant: KernelVariant,
    dispatch: Dispatch,
    cost: &CostModel,
) -> TaskDuration {
    let step = cost.step_cost(variant);
    let warp_busy: Vec<f64> = task.warps.iter().map(|w| warp_cycles(w, step, cost)).collect();
    let block_shared = shared_cycles(task, variant, dispatch, cost);
    let slowest = warp_busy.iter().copied().fold(0.0, f64::max);
    TaskDuration {
        block_cycles: slowest + block_shared,
        warp_busy,
        block_shared,
    }
}

/// Block cycles and active warp-cycles of a task, without allocating.
fn task_totals(task: &TaskTrace, variant: KernelVariant, dispatch: Dispatch, cost: &CostModel) -> (f64, f64) {
    let step = cost.step_cost(variant);
    let shared = shared_cycles(task, variant, dispatch, cost);
    let mut slowest = 0.0f64;
    let mut busy = 0.0;
    for w in &task.warps {
        let c = warp_cycles(w, step, cost);
        slowest = slowest.max(c);
        busy += c;
    }
    (slowest + shared, busy + shared * task.warps.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub start: f64,
    pub end: f64,
    pub sm: u32,
    pub slot: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTimeline {
    /// Indexed by task position in launch order.
    pub placements: Vec<Placement>,
    pub makespan: f64,
    pub sm_busy: Vec<f64>,
    /// Sum of block durations.
    pub block_busy_total: f64,
}

/// Min-heap of slot free times. Times are non-negative, so their bit patterns
/// order like the values; ties go to the lowest slot id.
struct FreeSlots(BinaryHeap<Reverse<(u64, u32)>>);

impl FreeSlots {
    fn new(slots: usize) -> Self {
        FreeSlots((0..slots as u32).map(|s| Reverse((0.0f64.to_bits(), s))).collect())
    }

    /// Hands the earliest free slot a task of length `d`; returns (start, slot).
    fn assign(&mut self, d: f64) -> (f64, usize) {
        let mut top = self.0.peek_mut().expect("at least one slot");
        let Reverse((bits, slot)) = *top;
        let start = f64::from_bits(bits);
        *top = Reverse(((start + d).to_bits(), slot));
        (start, slot as usize)
    }
}

fn slot_sm(slot: usize, machine: &MachineConfig) -> u32 {
    (slot % machine.num_sms as usize) as u32
}

fn finish_timeline(placements: Vec<Placement>, machine: &MachineConfig) -> SimTimeline {
    let mut sm_busy = vec![0.0; machine.num_sms as usize];
    let mut makespan = 0.0f64;
    let mut total = 0.0;
    for p in &placements {
        let d = p.end - p.start;
        sm_busy[p.sm as usize] += d;
        total += d;
        makespan = makespan.max(p.end);
    }
    SimTimeline {
        placements,
        makespan,
        sm_busy,
        block_busy_total: total,
    }
}

/// Task `i` runs on slot `i mod slots`, serially in index order per slot.
pub fn schedule_static(durations: &[f64], machine: &MachineConfig) -> SimTimeline {
    let slots = machine.total_slots();
    let mut slot_end = vec![0.0f64; slots];
    let placements = durations
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let slot = i % slots;
            let start = slot_end[slot];
            slot_end[slot] = start + d;
            Placement {
                start,
                end: start + d,
                sm: slot_sm(slot, machine),
                slot: slot as u32,
            }
        })
        .collect();
    finish_timeline(placements, machine)
}

/// Greedy list scheduling: the earliest free slot (lowest id on ties) takes
/// the next task in index order.
pub fn schedule_dynamic(durations: &[f64], machine: &MachineConfig) -> SimTimeline {
    let mut free = FreeSlots::new(machine.total_slots());
    let placements = durations
        .iter()
        .map(|&d| {
            let (start, slot) = free.assign(d);
            Placement {
                start,
                end: start + d,
                sm: slot_sm(slot, machine),
                slot: slot as u32,
            }
        })
        .collect();
    finish_timeline(placements, machine)
}

/// Makespan of a schedule without recording placements.
pub fn schedule_makespan(
    durations: impl Iterator<Item = f64>,
    machine: &MachineConfig,
    dispatch: Dispatch,
) -> f64 {
    let slots = machine.total_slots();
    match dispatch {
        Dispatch::Static => {
            let mut slot_end = vec![0.0f64; slots];
            for (i, d) in durations.enumerate() {
                slot_end[i % slots] += d;
            }
            slot_end.into_iter().fold(0.0, f64::max)
        }
        Dispatch::Dynamic => {
            let mut free = FreeSlots::new(slots);
            let mut makespan = 0.0f64;
            for d in durations {
                let (start, _) = free.assign(d);
                makespan = makespan.max(start + d);
            }
            makespan
        }
    }
}

pub fn schedule(durations: &[f64], machine: &MachineConfig, dispatch: Dispatch) -> SimTimeline {
    match dispatch {
        Dispatch::Static => schedule_static(durations, machine),
        Dispatch::Dynamic => schedule_dynamic(durations, machine),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub variant: KernelVariant,
    pub dispatch: Dispatch,
    pub makespan: f64,
    pub achieved_occupancy: f64,
    pub idle_fraction: f64,
    pub waves: f64,
    pub tasks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub metrics: SimMetrics,
    pub timeline: SimTimeline,
    pub durations: Vec<TaskDuration>,
    pub warp_busy_total: f64,
}

pub fn simulate_detailed(
    trace: &WorkTrace,
    machine: &MachineConfig,
    cost: &CostModel,
    dispatch: Dispatch,
) -> Simulation {
    let variant = trace.variant;
    let durations: Vec<TaskDuration> = trace
        .tasks
        .iter()
        .map(|t| task_duration(t, variant, dispatch, cost))
        .collect();
    let blocks: Vec<f64> = durations.iter().map(|d| d.block_cycles).collect();
    let timeline = schedule(&blocks, machine, dispatch);
    let warp_busy_total: f64 = durations.iter().map(TaskDuration::active_warp_cycles).sum();
    let metrics = metrics(trace, machine, dispatch, timeline.makespan, warp_busy_total);
    Simulation {
        metrics,
        timeline,
        durations,
        warp_busy_total,
    }
}

fn metrics(
    trace: &WorkTrace,
    machine: &MachineConfig,
    dispatch: Dispatch,
    makespan: f64,
    warp_busy_total: f64,
) -> SimMetrics {
    let warps_per_block = (machine.warps_per_block as usize).max(trace.max_warps_per_task());
    let capacity = machine.total_slots() as f64 * warps_per_block as f64 * makespan;
    let achieved_occupancy = if capacity > 0.0 {
        warp_busy_total / capacity
    } else {
        0.0
    };
    SimMetrics {
        variant: trace.variant,
        dispatch,
        makespan,
        achieved_occupancy,
        idle_fraction: 1.0 - achieved_occupancy,
        waves: trace.tasks.len() as f64 / machine.total_slots() as f64,
        tasks: trace.tasks.len(),
    }
}

/// Makespan of `trace` under its variant's dispatch policy.
pub fn makespan(trace: &WorkTrace, machine: &MachineConfig, cost: &CostModel) -> f64 {
    let (variant, dispatch) = (trace.variant, trace.variant.dispatch());
    let blocks = trace
        .tasks
        .iter()
        .map(|t| task_totals(t, variant, dispatch, cost).0);
    schedule_makespan(blocks, machine, dispatch)
}

/// Simulates `trace` under an explicit dispatch policy.
pub fn simulate_with_dispatch(
    trace: &WorkTrace,
    machine: &MachineConfig,
    cost: &CostModel,
    dispatch: Dispatch,
) -> SimMetrics {
    let variant = trace.variant;
    let mut warp_busy_total = 0.0;
    let blocks = trace.tasks.iter().map(|t| {
        let (block, busy) = task_totals(t, variant, dispatch, cost);
        warp_busy_total += busy;
        block
    });
    let makespan = schedule_makespan(blocks, machine, dispatch);
    metrics(trace, machine, dispatch, makespan, warp_busy_total)
}

/// Simulates `trace` under its variant's own dispatch policy.
pub fn simulate(trace: &WorkTrace, machine: &MachineConfig, cost: &CostModel) -> SimMetrics {
    simulate_with_dispatch(trace, machine, cost, trace.variant.dispatch())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn machine(slots: u32) -> MachineConfig {
        MachineConfig {
            num_sms: 1,
            block_slots_per_sm: slots,
            ..MachineConfig::default()
        }
    }

    #[test]
    fn default_slots() {
        assert_eq!(MachineConfig::default().total_slots(), 1728);
    }

    #[test]
    fn hand_schedules() {
        let m = machine(2);
        let costs = [10.0, 1.0, 1.0, 1.0];
        assert_eq!(schedule_static(&costs, &m).makespan, 11.0);
        let dynamic = schedule_dynamic(&costs, &m);
        assert_eq!(dynamic.makespan, 10.0);
        let slots: Vec<u32> = dynamic.placements.iter().map(|p| p.slot).collect();
        assert_eq!(slots, vec![0, 1, 1, 1]);
    }

    #[test]
    fn waves_of_equal_tasks() {
        let m = MachineConfig::default();
        let tl = schedule_static(&vec![1.0; 4080], &m);
        assert_eq!(tl.makespan, 3.0);
        let tl = schedule_dynamic(&vec![1.0; 4080], &m);
        assert_eq!(tl.makespan, 3.0);
    }

    #[test]
    fn greedy_counterexample_to_dominance() {
        // Greedy list scheduling is not always better than round robin.
        let m = machine(3);
        let costs = [6.0, 6.0, 2.0, 5.0, 4.0, 10.0];
        assert_eq!(schedule_static(&costs, &m).makespan, 12.0);
        assert_eq!(schedule_dynamic(&costs, &m).makespan, 16.0);
    }

    #[test]
    fn naive_duration_arithmetic() {
        let task = TaskTrace {
            task_id: 0,
            tile_id: 0,
            shared_load_chunks: 8,
            warps: vec![WarpCounts {
                compute_steps: 1000,
                ..WarpCounts::default()
            }],
        };
        let cost = CostModel::default();
        let d = task_duration(&task, KernelVariant::Naive, Dispatch::Static, &cost);
        assert_eq!(d.warp_busy, vec![1500.0]);
        assert_eq!(d.block_cycles, 1756.0);
        let d = task_duration(&task, KernelVariant::Naive, Dispatch::Dynamic, &cost);
        assert_eq!(d.block_cycles, 1776.0);
        let empty = TaskTrace {
            shared_load_chunks: 0,
            warps: vec![WarpCounts::default(); 4],
            ..task
        };
        let d = task_duration(&empty, KernelVariant::Naive, Dispatch::Static, &cost);
        assert_eq!(d.block_cycles, 0.0);
    }

    #[test]
    fn empty_trace_metrics() {
        let trace = WorkTrace {
            variant: KernelVariant::Naive,
            tasks: vec![],
        };
        let m = simulate(&trace, &MachineConfig::default(), &CostModel::default());
        assert_eq!(m.makespan, 0.0);
        assert_eq!(m.achieved_occupancy, 0.0);
    }

    #[test]
    fn cost_fields_by_name() {
        let mut c = CostModel::default();
        for name in CostModel::FIELDS {
            let v = c.get(name).unwrap();
            c.set(name, v * 2.0).unwrap();
            assert_eq!(c.get(name), Some(v * 2.0));
        }
        assert!(c.set("bogus", 1.0).is_err());
        c.pool_fetch = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn sm_mapping_spreads_slots() {
        let m = MachineConfig::default();
        let tl = schedule_static(&[1.0; 216], &m);
        assert!(tl.sm_busy.iter().all(|&b| b == 2.0));
    }
}
