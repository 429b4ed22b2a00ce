//! Self-adaptive kernel selection during training: run the fine-grained
//! balanced kernel, benchmark it against the shared-memory baseline every
//! `check_interval` iterations, and fall back to the baseline for good the
//! first time it loses.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{trace_counts, KernelVariant, TermData};
use crate::sim::{simulate, CostModel, MachineConfig};
use crate::workload::{gen_tile_loads, TrajectoryParams};

pub const BALANCED: KernelVariant = KernelVariant::FineGrainedCombined;
pub const BASELINE: KernelVariant = KernelVariant::SharedMemOpt;
pub const DEFAULT_CHECK_INTERVAL: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub iter: u32,
    pub t_balanced: f64,
    pub t_baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionState {
    pub current: KernelVariant,
    pub switched: bool,
    pub check_interval: u32,
    pub history: Vec<CheckpointRecord>,
}

impl SelectionState {
    pub fn new(check_interval: u32) -> Result<Self> {
        if check_interval == 0 {
            return Err(Error::InvalidParams("check_interval must be positive".into()));
        }
        Ok(SelectionState {
            current: BALANCED,
            switched: false,
            check_interval,
            history: Vec::new(),
        })
    }

    pub fn is_checkpoint(&self, iter: u32) -> bool {
        !self.switched && iter % self.check_interval == 0
    }

    /// Records a benchmark of both kernels; switches if the balanced one is slower.
    pub fn record(&mut self, iter: u32, t_balanced: f64, t_baseline: f64) -> Result<()> {
        if iter % self.check_interval != 0 {
            return Err(Error::InvalidParams(format!(
                "iteration {iter} is not a multiple of the check interval {}",
                self.check_interval
            )));
        }
        if self.switched {
            return Err(Error::InvalidParams(
                "selection already switched to the baseline".into(),
            ));
        }
        self.history.push(CheckpointRecord {
            iter,
            t_balanced,
            t_baseline,
        });
        if t_balanced > t_baseline {
            self.switched = true;
            self.current = BASELINE;
        }
        Ok(())
    }

    pub fn checkpoint(
        &mut self,
        iter: u32,
        loads: &TermData,
        machine: &MachineConfig,
        cost: &CostModel,
    ) -> Result<()> {
        let t_balanced = simulate(&trace_counts(BALANCED, loads), machine, cost).makespan;
        let t_baseline = simulate(&trace_counts(BASELINE, loads), machine, cost).makespan;
        self.record(iter, t_balanced, t_baseline)
    }

    pub fn inflection(&self) -> Option<u32> {
        if self.switched {
            self.history.last().map(|r| r.iter)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: u32,
    pub variant: KernelVariant,
    pub cycles: f64,
    pub checkpoint: Option<CheckpointRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSimReport {
    pub iterations: Vec<IterationRecord>,
    pub inflection: Option<u32>,
    pub state: SelectionState,
    /// Chosen-variant cycles plus all benchmark cycles.
    pub adaptive_total: f64,
    pub benchmark_overhead: f64,
    pub always_balanced_total: f64,
    pub always_baseline_total: f64,
    /// Per-iteration cycles of each fixed policy.
    pub balanced_cycles: Vec<f64>,
    pub baseline_cycles: Vec<f64>,
}

/// Makespans of both kernels for every stage of a trajectory.
pub fn stage_makespans(
    tp: &TrajectoryParams,
    machine: &MachineConfig,
    cost: &CostModel,
) -> Result<Vec<(f64, f64)>> {
    tp.validate()?;
    (0..tp.num_stages())
        .into_par_iter()
        .map(|stage| {
            let loads = gen_tile_loads(&tp.params_for_stage(stage))?;
            let tb = simulate(&trace_counts(BALANCED, &loads.terms), machine, cost).makespan;
            let tbase = simulate(&trace_counts(BASELINE, &loads.terms), machine, cost).makespan;
            Ok((tb, tbase))
        })
        .collect()
}

pub fn run_training_sim(
    tp: &TrajectoryParams,
    machine: &MachineConfig,
    cost: &CostModel,
    check_interval: u32,
) -> Result<TrainingSimReport> {
    machine.validate()?;
    cost.validate()?;
    let mut state = SelectionState::new(check_interval)?;
    let stages = stage_makespans(tp, machine, cost)?;

    let mut iterations = Vec::with_capacity(tp.total_iters as usize);
    let mut balanced_cycles = Vec::with_capacity(tp.total_iters as usize);
    let mut baseline_cycles = Vec::with_capacity(tp.total_iters as usize);
    let mut adaptive_total = 0.0;
    let mut overhead = 0.0;
    // Loads are piecewise constant, so stage results stand in for each iteration.
    for iter in 0..tp.total_iters {
        let (tb, tbase) = stages[tp.stage_of(iter) as usize];
        balanced_cycles.push(tb);
        baseline_cycles.push(tbase);
        let mut checkpoint = None;
        if state.is_checkpoint(iter) {
            state.record(iter, tb, tbase)?;
            checkpoint = state.history.last().copied();
            overhead += tb + tbase;
        }
        let cycles = if state.current == BALANCED { tb } else { tbase };
        adaptive_total += cycles;
        iterations.push(IterationRecord {
            iter,
            variant: state.current,
            cycles,
            checkpoint,
        });
    }
    Ok(TrainingSimReport {
        iterations,
        inflection: state.inflection(),
        adaptive_total: adaptive_total + overhead,
        benchmark_overhead: overhead,
        always_balanced_total: balanced_cycles.iter().sum(),
        always_baseline_total: baseline_cycles.iter().sum(),
        balanced_cycles,
        baseline_cycles,
        state,
    })
}

/// Speedups of the adaptive schedule over always running the baseline, as
/// baseline cycles / adaptive chosen-variant cycles per phase. Benchmark
/// overhead is reported separately in `overall_with_overhead`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedupSummary {
    pub pre_inflection: Option<f64>,
    pub post_inflection: Option<f64>,
    pub overall: f64,
    pub overall_with_overhead: f64,
}

fn ratio(baseline: f64, adaptive: f64) -> f64 {
    if adaptive > 0.0 {
        baseline / adaptive
    } else {
        1.0
    }
}

pub fn speedup_summary(report: &TrainingSimReport) -> SpeedupSummary {
    let split = report
        .inflection
        .map_or(report.iterations.len(), |i| i as usize);
    let phase = |range: std::ops::Range<usize>| -> Option<f64> {
        if range.is_empty() {
            return None;
        }
        let base: f64 = report.baseline_cycles[range.clone()].iter().sum();
        let adaptive: f64 = report.iterations[range].iter().map(|r| r.cycles).sum();
        Some(ratio(base, adaptive))
    };
    let n = report.iterations.len();
    let chosen: f64 = report.iterations.iter().map(|r| r.cycles).sum();
    SpeedupSummary {
        pre_inflection: phase(0..split),
        post_inflection: report.inflection.and_then(|_| phase(split..n)),
        overall: ratio(report.always_baseline_total, chosen),
        overall_with_overhead: ratio(report.always_baseline_total, report.adaptive_total),
    }
}
