//! Instruction-counting cost model for processing elements.
//!
//! Every PE retires one instruction per cycle, so a thread's cycle count is
//! the sum of the primitive costs it charged. Loops are charged one
//! instruction for initialisation plus, per iteration, a compare, a
//! conditional branch and an induction update on top of the body.

use serde::{Deserialize, Serialize};

use crate::config::AcceleratorConfig;
use crate::error::Fault;

/// Instructions charged per primitive operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostTable {
    pub mac: u64,
    pub add: u64,
    pub mul: u64,
    pub load: u64,
    pub store: u64,
    pub compare: u64,
    pub branch: u64,
    pub sfu: u64,
}

impl Default for CostTable {
    fn default() -> Self {
        Self {
            mac: 1,
            add: 1,
            mul: 1,
            load: 1,
            store: 1,
            compare: 1,
            branch: 1,
            sfu: 1,
        }
    }
}

impl CostTable {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            ("mac", self.mac),
            ("add", self.add),
            ("mul", self.mul),
            ("load", self.load),
            ("store", self.store),
            ("compare", self.compare),
            ("branch", self.branch),
            ("sfu", self.sfu),
        ];
        match all.iter().find(|(_, c)| *c == 0) {
            Some((name, _)) => Err(format!("cost of `{name}` must be at least 1")),
            None => Ok(()),
        }
    }

    /// Per-iteration loop overhead: compare, branch and induction update.
    pub fn loop_iteration_overhead(&self) -> u64 {
        self.compare + self.branch + self.add
    }
}

/// Instructions for a counted loop: `1 + iterations * (body_cost + 3)` with
/// unit costs.
pub fn loop_cost(iterations: u64, body_cost: u64) -> u64 {
    loop_cost_with(&CostTable::default(), iterations, body_cost)
}

pub fn loop_cost_with(costs: &CostTable, iterations: u64, body_cost: u64) -> u64 {
    costs.add + iterations * (body_cost + costs.loop_iteration_overhead())
}

/// Special-function-unit operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfuOp {
    Log,
    Exp,
    Cos,
}

/// Register state and instruction counter of one simulated thread.
#[derive(Debug, Clone)]
pub struct PeContext<'a> {
    costs: &'a CostTable,
    lanes: usize,
    instructions: u64,
}

impl<'a> PeContext<'a> {
    pub fn new(costs: &'a CostTable, lanes: usize) -> Self {
        Self {
            costs,
            lanes,
            instructions: 0,
        }
    }

    pub fn instruction_count(&self) -> u64 {
        self.instructions
    }

    /// Width of the vector registers.
    pub fn lanes(&self) -> usize {
        self.lanes
    }

    pub fn costs(&self) -> &CostTable {
        self.costs
    }

    /// `acc + sum(a[i] * b[i])` over at most `lanes` int8 lanes. The
    /// accumulator is a 32-bit integer register so quantized dot products
    /// stay exact.
    #[inline]
    pub fn vector_mac(&mut self, acc: i32, a: &[i8], b: &[i8]) -> i32 {
        debug_assert!(a.len() == b.len() && a.len() <= self.lanes);
        self.instructions += self.costs.mac;
        a.iter()
            .zip(b)
            .fold(acc, |s, (&x, &y)| s + i32::from(x) * i32::from(y))
    }

    /// Lane-wise int8 product, saturating.
    pub fn vector_mul(&mut self, a: &[i8], b: &[i8], out: &mut [i8]) {
        debug_assert!(a.len() <= self.lanes);
        self.instructions += self.costs.mul;
        for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
            *o = (i16::from(x) * i16::from(y)).clamp(-128, 127) as i8;
        }
    }

    /// Lane-wise int8 sum, saturating.
    pub fn vector_add(&mut self, a: &[i8], b: &[i8], out: &mut [i8]) {
        debug_assert!(a.len() <= self.lanes);
        self.instructions += self.costs.add;
        for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
            *o = x.saturating_add(y);
        }
    }

    pub fn sfu_eval(&mut self, op: SfuOp, x: f32) -> Result<f32, Fault> {
        self.instructions += self.costs.sfu;
        match op {
            SfuOp::Log if x <= 0.0 || x.is_nan() => Err(Fault::Domain(x)),
            SfuOp::Log => Ok(x.ln()),
            SfuOp::Exp => Ok(x.exp()),
            SfuOp::Cos => Ok(x.cos()),
        }
    }

    #[inline]
    pub fn add(&mut self, n: u64) {
        self.instructions += n * self.costs.add;
    }

    #[inline]
    pub fn mul(&mut self, n: u64) {
        self.instructions += n * self.costs.mul;
    }

    #[inline]
    pub fn load(&mut self, n: u64) {
        self.instructions += n * self.costs.load;
    }

    #[inline]
    pub fn store(&mut self, n: u64) {
        self.instructions += n * self.costs.store;
    }

    #[inline]
    pub fn compare(&mut self, n: u64) {
        self.instructions += n * self.costs.compare;
    }

    #[inline]
    pub fn branch(&mut self, n: u64) {
        self.instructions += n * self.costs.branch;
    }

    /// Loop initialisation.
    #[inline]
    pub fn loop_init(&mut self) {
        self.instructions += self.costs.add;
    }

    /// Overhead of `n` loop iterations, excluding their bodies.
    #[inline]
    pub fn loop_iterations(&mut self, n: u64) {
        self.instructions += n * self.costs.loop_iteration_overhead();
    }

    /// A complete loop whose body has a fixed, already known cost.
    pub fn counted_loop(&mut self, iterations: u64, body_cost: u64) {
        self.instructions += loop_cost_with(self.costs, iterations, body_cost);
    }
}

/// Seconds needed to retire `instructions` at the configured clock.
pub fn elapsed_time(instructions: u64, config: &AcceleratorConfig) -> f64 {
    instructions as f64 / config.frequency_hz as f64
}
