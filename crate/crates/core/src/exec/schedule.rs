//! Greedy dispatch of setup and kernel threads onto the PE pool.
//!
//! Threads of a kernel are dispatched in ascending thread id, each to the PE
//! that becomes idle first (lowest PE id on ties). The setup thread of the
//! next kernel is dispatched, ahead of the current kernel's threads, as soon
//! as the current kernel's threads become dispatchable, so it overlaps them.
//! Kernel threads never start before every thread of the previous kernel has
//! finished.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ThreadKind {
    Setup,
    Kernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ThreadRecord {
    pub kernel_index: usize,
    pub thread_id: u32,
    pub pe_id: usize,
    pub start_cycle: u64,
    pub end_cycle: u64,
    pub kind: ThreadKind,
}

impl ThreadRecord {
    pub fn cycles(&self) -> u64 {
        self.end_cycle - self.start_cycle
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Timeline {
    pub records: Vec<ThreadRecord>,
    pub step_cycles: u64,
    pub early_stop: bool,
    /// Kernel whose setup returned zero, when the step stopped early.
    pub early_stop_kernel: Option<usize>,
    /// First kernel-thread start to last kernel-thread end, per kernel.
    pub per_kernel_cycles: BTreeMap<usize, u64>,
}

impl Timeline {
    /// Cycles PEs spent executing threads of `kernel_index`, setup included.
    pub fn busy_cycles(&self, kernel_index: usize) -> u64 {
        self.records
            .iter()
            .filter(|r| r.kernel_index == kernel_index)
            .map(ThreadRecord::cycles)
            .sum()
    }

    /// Last end cycle of any thread of a kernel below `kernel_limit`.
    pub fn end_cycle_before(&self, kernel_limit: usize) -> u64 {
        self.records
            .iter()
            .filter(|r| r.kernel_index < kernel_limit)
            .map(|r| r.end_cycle)
            .max()
            .unwrap_or(0)
    }

    pub fn total_busy_cycles(&self) -> u64 {
        self.records.iter().map(ThreadRecord::cycles).sum()
    }

    /// One line per record: kernel, thread, kind, PE, start, end.
    pub fn export(&self) -> String {
        let mut out = String::from("kernel_index\tthread_id\tkind\tpe_id\tstart_cycle\tend_cycle\n");
        for r in &self.records {
            let kind = match r.kind {
                ThreadKind::Setup => "setup",
                ThreadKind::Kernel => "kernel",
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.kernel_index, r.thread_id, kind, r.pe_id, r.start_cycle, r.end_cycle
            );
        }
        out
    }
}

/// Measured costs of one kernel within a step.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StageCosts {
    pub kernel_index: usize,
    pub setup_cycles: u64,
    /// Earliest cycle the kernel threads may start (model data arrival).
    pub ready_cycle: u64,
    /// Thread costs per round. Rounds run one after the other; acoustic
    /// kernels have a single round, the expansion kernel one per vector.
    /// No rounds means the setup returned zero and the step stops.
    pub rounds: Vec<Vec<u64>>,
}

struct Pool {
    free_at: Vec<u64>,
}

impl Pool {
    /// Places a thread of `cycles` on the PE that can start it first at or
    /// after `earliest`.
    fn place(&mut self, earliest: u64, cycles: u64) -> (usize, u64, u64) {
        let (pe, start) = self
            .free_at
            .iter()
            .enumerate()
            .map(|(pe, &free)| (pe, free.max(earliest)))
            .min_by_key(|&(pe, start)| (start, pe))
            .expect("at least one PE");
        let end = start + cycles;
        self.free_at[pe] = end;
        (pe, start, end)
    }
}

pub fn schedule(stages: &[StageCosts], num_pes: usize) -> Timeline {
    let mut pool = Pool { free_at: vec![0; num_pes.max(1)] };
    let mut tl = Timeline::default();
    if stages.is_empty() {
        return tl;
    }

    // `setup_end` is when the current stage's setup finished; `prev_end` is
    // when the previous stage's last thread finished.
    let mut prev_end = 0u64;
    let mut setup_end = {
        let s = &stages[0];
        let (pe, start, end) = pool.place(0, s.setup_cycles);
        tl.records.push(setup_record(s.kernel_index, pe, start, end));
        end
    };

    for (i, stage) in stages.iter().enumerate() {
        if stage.rounds.is_empty() {
            tl.early_stop = true;
            tl.early_stop_kernel = Some(stage.kernel_index);
            break;
        }
        let release = setup_end.max(prev_end);
        if let Some(next) = stages.get(i + 1) {
            let (pe, start, end) = pool.place(release, next.setup_cycles);
            tl.records.push(setup_record(next.kernel_index, pe, start, end));
            setup_end = end;
        }
        let mut round_start = release.max(stage.ready_cycle);
        let mut first_start = None;
        let mut tid = 0u32;
        for round in &stage.rounds {
            let mut round_end = round_start;
            for &cycles in round {
                let (pe, start, end) = pool.place(round_start, cycles);
                first_start.get_or_insert(start);
                round_end = round_end.max(end);
                tl.records.push(ThreadRecord {
                    kernel_index: stage.kernel_index,
                    thread_id: tid,
                    pe_id: pe,
                    start_cycle: start,
                    end_cycle: end,
                    kind: ThreadKind::Kernel,
                });
                tid += 1;
            }
            round_start = round_end;
        }
        let first = first_start.unwrap_or(round_start);
        tl.per_kernel_cycles.insert(stage.kernel_index, round_start - first);
        prev_end = round_start;
    }
    tl.step_cycles = tl.records.iter().map(|r| r.end_cycle).max().unwrap_or(0);
    tl
}

fn setup_record(kernel_index: usize, pe_id: usize, start: u64, end: u64) -> ThreadRecord {
    ThreadRecord {
        kernel_index,
        thread_id: 0,
        pe_id,
        start_cycle: start,
        end_cycle: end,
        kind: ThreadKind::Setup,
    }
}

/// Makespan of independent threads on `num_pes` PEs under greedy dispatch.
pub fn greedy_makespan(costs: &[u64], num_pes: usize) -> u64 {
    let mut pool = Pool { free_at: vec![0; num_pes.max(1)] };
    costs.iter().map(|&c| pool.place(0, c).2).max().unwrap_or(0)
}
