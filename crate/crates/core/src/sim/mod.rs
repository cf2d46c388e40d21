//! Deterministic simulation of the IR.
//!
//! [`seq`] interprets affine modules in program order and is the
//! equivalence oracle for the transformation passes. [`machine`] executes
//! mapped kernels on an abstract warp-synchronous GPU: blocks run
//! independently, warps within a block run in round-robin segments
//! delimited by barriers, and every shared/global access feeds the counters
//! in [`SimMetrics`].

pub mod machine;
pub mod mem;
pub mod seq;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ir::{FuncArg, MemRefType};
use crate::num::round_to;

pub use machine::{run_gpu, run_gpu_with, SimOptions};
pub use mem::{count_bank_conflicts, race_check, transaction_cost, Race, SharedAccessEvent};
pub use seq::run_sequential;

/// Abstract machine constants: banking geometry, transaction granularity
/// and the latency weights of the stall model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MachineParams {
    pub banks: i64,
    pub bank_width_bytes: i64,
    pub transaction_bytes: i64,
    pub global_latency: u64,
    pub shared_latency: u64,
    pub wmma_latency: u64,
}

impl Default for MachineParams {
    fn default() -> Self {
        MachineParams {
            banks: 32,
            bank_width_bytes: 4,
            transaction_bytes: 128,
            global_latency: 400,
            shared_latency: 30,
            wmma_latency: 16,
        }
    }
}

/// A named, typed element buffer. Values are stored as f64 but always hold
/// exactly representable f16/f32 contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    pub ty: MemRefType,
    pub data: Vec<f64>,
}

impl Buffer {
    pub fn zeroed(ty: MemRefType) -> Self {
        let n = ty.alloc_elems() as usize;
        Buffer { ty, data: vec![0.0; n] }
    }

    pub fn at(&self, idx: &[i64]) -> f64 {
        self.data[self.ty.linearize(idx) as usize]
    }

    pub fn set(&mut self, idx: &[i64], v: f64) {
        let off = self.ty.linearize(idx) as usize;
        self.data[off] = v;
    }
}

/// Function inputs/outputs keyed by argument name.
pub type Tensors = BTreeMap<String, Buffer>;

/// Seeded inputs: uniform in [-1, 1], rounded to each argument's element
/// type. Arguments are filled in signature order from one generator, so a
/// (seed, signature) pair pins every bit.
pub fn seeded_inputs(args: &[FuncArg], seed: u64) -> Tensors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-1.0f64, 1.0f64);
    let mut out = Tensors::new();
    for arg in args {
        let mut buf = Buffer::zeroed(arg.ty.clone());
        for v in buf.data.iter_mut() {
            *v = round_to(arg.ty.elem, dist.sample(&mut rng));
        }
        out.insert(arg.name.clone(), buf);
    }
    out
}

/// Simulator instrumentation. The flat text report exposes the five stable
/// keys; the remaining fields back invariant tests.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimMetrics {
    pub bank_conflicts: u64,
    pub global_transactions: u64,
    pub barriers: u64,
    pub races: Vec<Race>,
    pub stall_cycles: u64,
    /// 128-byte segments touched by counted global accesses.
    pub global_segments: u64,
    /// Counted warp-level global accesses.
    pub global_accesses: u64,
    /// Accesses whose segment count exceeded the coalesced bound.
    pub coalescing_violations: u64,
    /// Element-wise write counts per written global buffer.
    pub write_census: BTreeMap<String, Vec<u32>>,
}

impl SimMetrics {
    /// Flat key-value report with the stable keys.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "bank_conflicts={}", self.bank_conflicts);
        let _ = writeln!(s, "global_transactions={}", self.global_transactions);
        let _ = writeln!(s, "barriers={}", self.barriers);
        let _ = writeln!(s, "races={}", self.races.len());
        let _ = writeln!(s, "stall_cycles={}", self.stall_cycles);
        s
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum SimError {
    #[error("missing input buffer '{0}'")]
    MissingInput(String),
    #[error("input '{name}' has the wrong shape (expected {expected:?})")]
    InputShape { name: String, expected: Vec<i64> },
    #[error("out-of-bounds access on {buffer}: indices {indices:?}, shape {shape:?} ({op})")]
    OutOfBounds { buffer: String, indices: Vec<i64>, shape: Vec<i64>, op: &'static str },
    #[error("barrier divergence: {0}")]
    Deadlock(String),
    #[error("simulation error: {0}")]
    Runtime(String),
}

pub(crate) fn take_inputs(args: &[FuncArg], inputs: &Tensors) -> Result<Vec<Buffer>, SimError> {
    args.iter()
        .map(|a| {
            let b = inputs.get(&a.name).ok_or_else(|| SimError::MissingInput(a.name.clone()))?;
            if b.ty.shape != a.ty.shape || b.ty.elem != a.ty.elem {
                return Err(SimError::InputShape { name: a.name.clone(), expected: a.ty.shape.clone() });
            }
            Ok(b.clone())
        })
        .collect()
}

pub(crate) fn check_bounds(
    ty: &MemRefType,
    idx: &[i64],
    buffer: &str,
    op: &'static str,
) -> Result<(), SimError> {
    if idx.len() != ty.rank() || idx.iter().zip(&ty.shape).any(|(i, s)| *i < 0 || i >= s) {
        return Err(SimError::OutOfBounds {
            buffer: buffer.to_string(),
            indices: idx.to_vec(),
            shape: ty.shape.clone(),
            op,
        });
    }
    Ok(())
}
