//! The accelerator's command interface and the state it keeps between
//! commands.

use std::sync::Arc;

use crate::config::AcceleratorConfig;
use crate::cost::CostTable;
use crate::error::{Error, Result};
use crate::exec::{run_decoding_step, StepInputs, StepReport};
use crate::hypothesis::{Hypothesis, MergePolicy, NO_HISTORY};
use crate::kernel::{ExpansionKernel, KernelDescriptor, KernelState, Machine, PhaseProgram};
use crate::memory::SharedMemory;

/// Seed used when no expansion kernel is configured yet.
const DEFAULT_SEED: Hypothesis = Hypothesis {
    hash: 0,
    score: 0.0,
    lexicon_node: 0,
    lm_state: 0,
    backlink: NO_HISTORY,
    last_token: 0,
};

pub struct Accelerator {
    config: AcceleratorConfig,
    costs: CostTable,
    acoustic: Vec<KernelDescriptor>,
    expansion: Option<Arc<dyn ExpansionKernel>>,
    machine: Machine,
    states: Vec<KernelState>,
    expansion_state: KernelState,
    beam_width: f64,
    step_counter: usize,
    pending_bind: bool,
    step_in_flight: bool,
    capture: bool,
}

impl Accelerator {
    pub fn new(config: AcceleratorConfig, costs: CostTable) -> Result<Self> {
        config.validate()?;
        costs.validate().map_err(Error::Config)?;
        let machine = Machine::new(&config, MergePolicy::Max);
        let mut acc = Self {
            config,
            costs,
            acoustic: Vec::new(),
            expansion: None,
            machine,
            states: Vec::new(),
            expansion_state: KernelState::default(),
            beam_width: f64::INFINITY,
            step_counter: 0,
            pending_bind: true,
            step_in_flight: false,
            capture: false,
        };
        acc.clean_decoding();
        Ok(acc)
    }

    pub fn config(&self) -> &AcceleratorConfig {
        &self.config
    }

    pub fn costs(&self) -> &CostTable {
        &self.costs
    }

    pub fn machine(&self) -> &Machine {
        &self.machine
    }

    pub fn beam_width(&self) -> f64 {
        self.beam_width
    }

    pub fn step_counter(&self) -> usize {
        self.step_counter
    }

    pub fn acoustic_kernels(&self) -> &[KernelDescriptor] {
        &self.acoustic
    }

    /// Keeps every acoustic kernel's thread outputs in the step reports.
    pub fn set_capture(&mut self, capture: bool) {
        self.capture = capture;
    }

    fn ensure_idle(&self) -> Result<()> {
        if self.step_in_flight {
            Err(Error::Busy)
        } else {
            Ok(())
        }
    }

    /// Sets slot `n_kernel` of the acoustic-scoring phase, appending when
    /// `n_kernel` equals the current length.
    pub fn configure_acoustic_scoring(
        &mut self,
        n_kernel: usize,
        kernel: KernelDescriptor,
    ) -> Result<()> {
        self.ensure_idle()?;
        match n_kernel.cmp(&self.acoustic.len()) {
            std::cmp::Ordering::Less => self.acoustic[n_kernel] = kernel,
            std::cmp::Ordering::Equal => self.acoustic.push(kernel),
            std::cmp::Ordering::Greater => {
                return Err(Error::Config(format!(
                    "kernel slot {n_kernel} leaves a gap after {} configured kernels",
                    self.acoustic.len()
                )))
            }
        }
        self.pending_bind = true;
        Ok(())
    }

    pub fn configure_hyp_expansion(&mut self, kernel: Arc<dyn ExpansionKernel>) -> Result<()> {
        self.ensure_idle()?;
        self.expansion = Some(kernel);
        self.pending_bind = true;
        if self.step_counter == 0 {
            self.clean_decoding();
        }
        Ok(())
    }

    /// Configures both phases from a program.
    pub fn load_program(&mut self, program: &PhaseProgram) -> Result<()> {
        self.ensure_idle()?;
        self.acoustic.clear();
        for (i, k) in program.acoustic_scoring.iter().enumerate() {
            self.configure_acoustic_scoring(i, k.clone())?;
        }
        self.configure_hyp_expansion(program.hyp_expansion.clone())
    }

    pub fn configure_beam_width(&mut self, beam: f64) -> Result<()> {
        self.ensure_idle()?;
        if !(beam >= 0.0) {
            return Err(Error::Argument(format!("beam width {beam} is negative")));
        }
        self.beam_width = beam;
        Ok(())
    }

    pub fn configure_merge_policy(&mut self, merge: MergePolicy) -> Result<()> {
        self.ensure_idle()?;
        self.machine.hyps.set_merge_policy(merge);
        Ok(())
    }

    /// Drops all per-utterance state and seeds the root hypothesis. Model
    /// memory keeps its prefetched weights.
    pub fn clean_decoding(&mut self) {
        self.machine.shared.clear();
        self.machine.signal.clear();
        let seed = self.expansion.as_ref().map_or(DEFAULT_SEED, |e| e.seed());
        self.machine.hyps.reset(seed);
        self.states = vec![KernelState::default(); self.acoustic.len()];
        self.expansion_state = KernelState::default();
        self.step_counter = 0;
    }

    fn bind_buffers(&mut self) -> Result<()> {
        let mut shared = SharedMemory::new(self.config.shared_mem_bytes);
        let expansion = self.expansion.as_ref().expect("checked by caller");
        let decls = self
            .acoustic
            .iter()
            .flat_map(|k| k.routine.buffers())
            .chain(expansion.buffers());
        for d in decls {
            shared.declare(d.id, d.spec, &d.readers).map_err(Error::Config)?;
        }
        self.machine.shared = shared;
        self.states = vec![KernelState::default(); self.acoustic.len()];
        self.expansion_state = KernelState::default();
        self.pending_bind = false;
        Ok(())
    }

    pub fn decoding_step(&mut self, signal_chunk: &[f32]) -> Result<StepReport> {
        self.ensure_idle()?;
        if self.acoustic.is_empty() || self.expansion.is_none() {
            return Err(Error::Config(
                "both decoding phases must be configured before a decoding step".into(),
            ));
        }
        if self.pending_bind {
            if self.step_counter > 0 {
                return Err(Error::Config(
                    "program changed in the middle of an utterance; issue clean_decoding first"
                        .into(),
                ));
            }
            self.bind_buffers()?;
        }
        self.machine.signal.push(signal_chunk);
        self.step_in_flight = true;
        let result = self.run_step();
        self.step_in_flight = false;
        result
    }

    fn run_step(&mut self) -> Result<StepReport> {
        let expansion = self.expansion.clone().expect("checked by caller");
        let inputs = StepInputs {
            acoustic: &self.acoustic,
            expansion: expansion.as_ref(),
            config: &self.config,
            costs: &self.costs,
            beam_width: self.beam_width,
            capture: self.capture,
        };
        let mut report = run_decoding_step(
            &mut self.machine,
            &mut self.states,
            &mut self.expansion_state,
            &inputs,
        )?;
        report.step_index = self.step_counter;
        report.best_partial_transcript = self.best_transcript()?;
        self.step_counter += 1;
        Ok(report)
    }

    /// Words of the current best hypothesis.
    pub fn best_transcript(&self) -> Result<Vec<String>> {
        let best = self.machine.hyps.best_hypothesis()?;
        match &self.expansion {
            Some(e) => e
                .transcript(&self.machine.hyps, best)
                .map_err(|f| Error::Simulation(format!("backtrack failed: {f}"))),
            None => Ok(Vec::new()),
        }
    }

    pub fn best_hypothesis(&self) -> Result<Hypothesis> {
        self.machine.hyps.best_hypothesis().copied()
    }

    #[cfg(test)]
    pub(crate) fn set_step_in_flight(&mut self, v: bool) {
        self.step_in_flight = v;
    }
}
