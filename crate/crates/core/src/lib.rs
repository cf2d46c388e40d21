//! A mini compiler pipeline that lowers a naive three-loop matmul, step by
//! step, into a GPU-mapped, software-pipelined, vectorized tensor-core
//! kernel, together with a deterministic functional simulator of an abstract
//! tensor-core GPU that validates the generated kernels and measures the
//! machine-level effects each rewrite targets (shared-memory bank conflicts,
//! global-memory coalescing, barrier safety, load-latency stalls).
//!
//! Organization:
//! - [`ir`]: the IR (affine loops over memrefs, WMMA ops), its textual
//!   format, parser, printer and verifier.
//! - [`transforms`]: affine-level rewrites (tiling, shared-memory copies,
//!   padding, WMMA raising, permutation, unrolling, CSE, accumulator
//!   hoisting, k-loop splitting, barrier insertion, copy vectorization,
//!   parallelism detection).
//! - [`gpu`]: mapping parallel loops onto the grid/warp hierarchy,
//!   completing the store/load decoupling, and pseudo-CUDA emission.
//! - [`sim`]: a sequential interpreter (the equivalence oracle) and a
//!   warp-synchronous machine model with race detection and counters.
//! - [`analysis`]: static resource and legality reporting.
//! - [`pipeline`]: the ordered pass pipeline with stop/dump hooks.

pub mod analysis;
pub mod gpu;
pub mod ir;
pub mod num;
pub mod pipeline;
pub mod sim;
pub mod transforms;
