//! Execution unit: runs the two phases of a decoding step and schedules the
//! resulting threads on the PE pool.
//!
//! Kernel routines are executed functionally in serial reference order
//! (setup, then threads in id order, then completion). Their measured
//! instruction counts are afterwards placed on the PE pool by [`schedule`],
//! so functional results never depend on the number of PEs.

mod schedule;

use serde::Serialize;

pub use schedule::{greedy_makespan, schedule, StageCosts, ThreadKind, ThreadRecord, Timeline};

use crate::config::AcceleratorConfig;
use crate::cost::{CostTable, PeContext};
use crate::error::{Error, Result};
use crate::kernel::{ExpansionKernel, KernelDescriptor, KernelState, Machine, ThreadOutput};
use crate::memory::CacheStats;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StepReport {
    pub step_index: usize,
    pub timeline: Timeline,
    pub acoustic_vectors_emitted: u64,
    pub hyp_expansion_repeats: u32,
    pub active_hypotheses_after: usize,
    pub best_partial_transcript: Vec<String>,
    pub step_time_seconds: f64,
    pub shared_mem_live_bytes: u64,
    pub shared_mem_peak_bytes: u64,
    pub dma_bytes: u64,
    pub cache: CacheStats,
    pub peak_incoming_hypotheses: usize,
    pub expansion_submissions: u64,
    /// Thread outputs of every acoustic kernel, when capture is enabled.
    #[serde(skip)]
    pub captured: Vec<(usize, Vec<ThreadOutput>)>,
}

/// What a decoding step needs besides the mutable machine state.
pub struct StepInputs<'a> {
    pub acoustic: &'a [KernelDescriptor],
    pub expansion: &'a dyn ExpansionKernel,
    pub config: &'a AcceleratorConfig,
    pub costs: &'a CostTable,
    pub beam_width: f64,
    pub capture: bool,
}

/// Seconds of a timeline at the configured clock.
pub fn compute_makespan(timeline: &Timeline, config: &AcceleratorConfig) -> f64 {
    timeline.step_cycles as f64 / config.frequency_hz as f64
}

pub fn run_decoding_step(
    machine: &mut Machine,
    states: &mut [KernelState],
    expansion_state: &mut KernelState,
    inputs: &StepInputs<'_>,
) -> Result<StepReport> {
    let lanes = inputs.config.mac_width;
    let n_acoustic = inputs.acoustic.len();
    if states.len() != n_acoustic {
        return Err(Error::Simulation(format!(
            "{} kernel states for {n_acoustic} kernels",
            states.len()
        )));
    }
    machine.model.begin_step();
    let dma_before = machine.model.dma_bytes_total();
    let mut report = StepReport::default();
    let mut stages = Vec::with_capacity(n_acoustic + 1);
    let mut stopped = false;

    for (k, desc) in inputs.acoustic.iter().enumerate() {
        let routine = desc.routine.as_ref();
        let state = &mut states[k];
        let mut pe = PeContext::new(inputs.costs, lanes);
        let n = routine
            .setup(machine, state, &mut pe)
            .map_err(|f| Error::kernel(k, None, f))?;
        let mut stage = StageCosts {
            kernel_index: k,
            setup_cycles: pe.instruction_count(),
            ..Default::default()
        };
        if n == 0 {
            stages.push(stage);
            stopped = true;
            // The stopping setup prefetches the first kernel's model data
            // for the next step.
            if let Some(blob) = inputs.acoustic[0].routine.model_blob() {
                machine.model.dma_prefetch(blob, 0).map_err(|f| Error::kernel(0, None, f))?;
            }
            break;
        }
        if let Some(blob) = routine.model_blob() {
            let done = machine
                .model
                .dma_prefetch(blob, 0)
                .map_err(|f| Error::kernel(k, None, f))?;
            // Later kernels' weights are prefetched while earlier kernels
            // run; only the first kernel of a step waits for its DMA.
            if k == 0 {
                stage.ready_cycle = done;
            }
        }
        let mut costs = Vec::with_capacity(n as usize);
        let mut outputs = Vec::with_capacity(n as usize);
        let state = &states[k];
        for tid in 0..n {
            let mut pe = PeContext::new(inputs.costs, lanes);
            let out = routine
                .thread(tid, machine, state, &mut pe)
                .map_err(|f| Error::kernel(k, Some(tid), f))?;
            costs.push(pe.instruction_count());
            outputs.push(out);
        }
        if inputs.capture {
            report.captured.push((k, outputs.clone()));
        }
        let state = &mut states[k];
        routine
            .complete(machine, state, outputs)
            .map_err(|f| Error::kernel(k, None, f))?;
        stage.rounds.push(costs);
        stages.push(stage);
    }

    if !stopped {
        report.acoustic_vectors_emitted = states.last().map_or(0, |s| s.launch_items);
        run_expansion(machine, expansion_state, inputs, n_acoustic, &mut stages, &mut report)?;
    }

    report.timeline = schedule(&stages, inputs.config.num_pes);
    report.step_time_seconds = compute_makespan(&report.timeline, inputs.config);
    report.active_hypotheses_after = machine.hyps.active_count();
    report.shared_mem_live_bytes = machine.shared.live_bytes();
    report.shared_mem_peak_bytes = machine.shared.peak_bytes();
    report.dma_bytes = machine.model.dma_bytes_total() - dma_before;
    report.peak_incoming_hypotheses = machine.hyps.peak_incoming();
    Ok(report)
}

fn run_expansion(
    machine: &mut Machine,
    state: &mut KernelState,
    inputs: &StepInputs<'_>,
    kernel_index: usize,
    stages: &mut Vec<StageCosts>,
    report: &mut StepReport,
) -> Result<()> {
    let kernel = inputs.expansion;
    let lanes = inputs.config.mac_width;
    machine.model.enter_cache_mode();
    machine.cache.flush();
    let cache_before = machine.cache.stats();

    let mut pe = PeContext::new(inputs.costs, lanes);
    let vectors = kernel
        .setup(machine, state, &mut pe)
        .map_err(|f| Error::kernel(kernel_index, None, f))?;
    let mut stage = StageCosts {
        kernel_index,
        setup_cycles: pe.instruction_count(),
        ..Default::default()
    };

    let mut tid = 0u32;
    for v in 0..vectors {
        let active = machine.hyps.active().to_vec();
        if active.is_empty() {
            return Err(Error::Simulation(
                "hypothesis expansion started with no active hypotheses".into(),
            ));
        }
        let mut costs = Vec::with_capacity(active.len());
        let mut expansions = Vec::with_capacity(active.len());
        for hyp in &active {
            let mut pe = PeContext::new(inputs.costs, lanes);
            let exp = kernel
                .thread(v, hyp, machine, state, &mut pe)
                .map_err(|f| Error::kernel(kernel_index, Some(tid), f))?;
            costs.push(pe.instruction_count());
            expansions.push((tid, exp));
            tid += 1;
        }
        for (tid, exp) in expansions {
            for &(addr, size) in &exp.accesses {
                machine.cache.access(addr, size);
            }
            report.expansion_submissions += exp.submissions.len() as u64;
            for sub in exp.submissions {
                machine
                    .hyps
                    .submit(sub)
                    .map_err(|f| Error::kernel(kernel_index, Some(tid), f))?;
            }
        }
        machine.hyps.finalize_step(inputs.beam_width)?;
        stage.rounds.push(costs);
    }
    kernel
        .complete(machine, state, vectors)
        .map_err(|f| Error::kernel(kernel_index, None, f))?;
    report.hyp_expansion_repeats = vectors;
    let after = machine.cache.stats();
    report.cache = CacheStats {
        hits: after.hits - cache_before.hits,
        misses: after.misses - cache_before.misses,
    };
    stages.push(stage);
    Ok(())
}
