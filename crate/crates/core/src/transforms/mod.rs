//! Affine-level rewrites. Every pass is a pure `Module -> Module` function
//! that re-verifies its output; structural deltas are reported alongside.

pub mod barriers;
pub mod copies;
pub mod cse;
pub mod hoist;
pub mod pad;
pub mod parallelize;
pub mod permute;
pub mod split;
pub mod tile;
pub mod unroll;
pub mod vectorize;
pub mod wmma;

use crate::ir::rewrite::{count_loops, count_ops};
use crate::ir::{verify_module, Module, ProblemConfig};

pub use barriers::insert_barriers;
pub use copies::generate_shared_copies;
pub use cse::cse;
pub use hoist::hoist_accumulator;
pub use pad::pad_shared_buffer;
pub use parallelize::parallelize;
pub use permute::permute_loops;
pub use split::split_pipeline;
pub use tile::tile_loop_nest;
pub use unroll::unroll_full;
pub use vectorize::vectorize_copies;
pub use wmma::raise_to_wmma;

/// All numeric knobs of the lowering: thread-block tile, warp tile, the
/// fixed 16x16x16 intrinsic shape, leading-dimension padding for the two
/// shared buffers, and the copy vector width in bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileConfig {
    pub tbm: i64,
    pub tbn: i64,
    pub tbk: i64,
    pub wm: i64,
    pub wn: i64,
    pub wmma_m: i64,
    pub wmma_n: i64,
    pub wmma_k: i64,
    pub padding_a: i64,
    pub padding_b: i64,
    pub vector_bits: i64,
}

impl TileConfig {
    pub fn new(tbm: i64, tbn: i64, tbk: i64, wm: i64, wn: i64) -> Self {
        TileConfig {
            tbm,
            tbn,
            tbk,
            wm,
            wn,
            wmma_m: 16,
            wmma_n: 16,
            wmma_k: 16,
            padding_a: 8,
            padding_b: 8,
            vector_bits: 128,
        }
    }

    pub fn with_padding(mut self, pad: i64) -> Self {
        self.padding_a = pad;
        self.padding_b = pad;
        self
    }

    pub fn with_vector_bits(mut self, bits: i64) -> Self {
        self.vector_bits = bits;
        self
    }

    /// Check the internal consistency rules. Problem divisibility is a
    /// separate check, see [`TileConfig::check_problem`].
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("tbm", self.tbm),
            ("tbn", self.tbn),
            ("tbk", self.tbk),
            ("wm", self.wm),
            ("wn", self.wn),
        ] {
            if v <= 0 {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if (self.wmma_m, self.wmma_n, self.wmma_k) != (16, 16, 16) {
            return Err("intrinsic shape must be 16x16x16".into());
        }
        if self.tbm % self.wm != 0 {
            return Err(format!("tbm = {} not a multiple of wm = {}", self.tbm, self.wm));
        }
        if self.tbn % self.wn != 0 {
            return Err(format!("tbn = {} not a multiple of wn = {}", self.tbn, self.wn));
        }
        if self.tbk % self.wmma_k != 0 {
            return Err(format!("tbk = {} not a multiple of wmmaK = {}", self.tbk, self.wmma_k));
        }
        if self.wm % self.wmma_m != 0 {
            return Err(format!("wm = {} not a multiple of wmmaM = {}", self.wm, self.wmma_m));
        }
        if self.wn % self.wmma_n != 0 {
            return Err(format!("wn = {} not a multiple of wmmaN = {}", self.wn, self.wmma_n));
        }
        for (name, pad) in [("paddingA", self.padding_a), ("paddingB", self.padding_b)] {
            if pad % 8 != 0 || pad < 0 || pad > 40 {
                return Err(format!(
                    "{name} = {pad} must be a non-negative multiple of 8 elements, at most 40"
                ));
            }
        }
        if ![32, 64, 128].contains(&self.vector_bits) {
            return Err(format!("vector width {} bits not in {{32, 64, 128}}", self.vector_bits));
        }
        // A copy row is tbk (for A) or tbn (for B) f16 elements.
        for (name, row) in [("A", self.tbk), ("B", self.tbn)] {
            if (row * 16) % self.vector_bits != 0 {
                return Err(format!(
                    "vector width {} bits does not divide the {}-copy row of {} bits",
                    self.vector_bits,
                    name,
                    row * 16
                ));
            }
        }
        Ok(())
    }

    /// Problem sizes must be multiples of the thread-block tile.
    pub fn check_problem(&self, p: &ProblemConfig) -> Result<(), String> {
        if p.m % self.tbm != 0 {
            return Err(format!("M = {} not a multiple of tbm = {}", p.m, self.tbm));
        }
        if p.n % self.tbn != 0 {
            return Err(format!("N = {} not a multiple of tbn = {}", p.n, self.tbn));
        }
        if p.k % self.tbk != 0 {
            return Err(format!("K = {} not a multiple of tbk = {}", p.k, self.tbk));
        }
        Ok(())
    }

    pub fn warps_x(&self) -> i64 {
        self.tbm / self.wm
    }

    pub fn warps_y(&self) -> i64 {
        self.tbn / self.wn
    }

    pub fn block_threads(&self) -> i64 {
        self.warps_x() * self.warps_y() * 32
    }

    /// F16 elements moved per vector access.
    pub fn vector_elems(&self) -> i64 {
        self.vector_bits / 16
    }

    /// Shared footprint after padding, in bytes.
    pub fn shared_bytes(&self) -> i64 {
        (self.tbm * (self.tbk + self.padding_a) + self.tbk * (self.tbn + self.padding_b)) * 2
    }
}

/// Static shared-memory budget (48 KB).
pub const SHARED_LIMIT_BYTES: i64 = 48 * 1024;

#[derive(Debug, Clone, thiserror::Error)]
pub enum PassError {
    #[error("{pass}: precondition not met: {msg}")]
    Precondition { pass: &'static str, msg: String },
    #[error("{pass}: rejected: {msg}")]
    Rejected { pass: &'static str, msg: String },
    #[error("{pass}: output failed verification:\n{diags}")]
    BrokenOutput { pass: &'static str, diags: String },
}

/// Structural delta of one pass application.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassReport {
    pub pass: &'static str,
    pub loops_before: usize,
    pub loops_after: usize,
    pub ops_before: usize,
    pub ops_after: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PassResult {
    pub module: Module,
    pub report: PassReport,
}

/// Wrap the body of a pass: snapshot counts, run, re-verify, report.
pub(crate) fn finish_pass(
    pass: &'static str,
    input: &Module,
    module: Module,
    notes: Vec<String>,
) -> Result<PassResult, PassError> {
    verify_module(&module)
        .map_err(|d| PassError::BrokenOutput { pass, diags: d.to_string() })?;
    let report = PassReport {
        pass,
        loops_before: count_loops(&input.main().body),
        loops_after: count_loops(&module.main().body),
        ops_before: count_ops(&input.main().body),
        ops_after: count_ops(&module.main().body),
        notes,
    };
    Ok(PassResult { module, report })
}

pub(crate) fn precondition(pass: &'static str, msg: impl Into<String>) -> PassError {
    PassError::Precondition { pass, msg: msg.into() }
}

pub(crate) fn rejected(pass: &'static str, msg: impl Into<String>) -> PassError {
    PassError::Rejected { pass, msg: msg.into() }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::ir::build_naive_matmul;

    /// The full affine pipeline, up to and including parallelism marking.
    pub(crate) fn lower_to_parallel(cfg: &TileConfig, p: &ProblemConfig) -> Module {
        let m = build_naive_matmul(p);
        let m = tile_loop_nest(&m, cfg).unwrap().module;
        let m = generate_shared_copies(&m, cfg).unwrap().module;
        let m = pad_shared_buffer(&m, cfg).unwrap().module;
        let m = raise_to_wmma(&m, cfg).unwrap().module;
        let m = permute::permute_outer(&m).unwrap().module;
        let m = permute::permute_inner(&m).unwrap().module;
        let mut m = m;
        for _ in 0..3 {
            let chain = crate::ir::rewrite::loop_chain(&m.main().body);
            m = unroll_full(&m, chain.len() - 1).unwrap().module;
        }
        let m = cse(&m).unwrap().module;
        let m = hoist_accumulator(&m).unwrap().module;
        let m = split_pipeline(&m).unwrap().module;
        let m = insert_barriers(&m).unwrap().module;
        let m = vectorize_copies(&m, cfg.vector_bits).unwrap().module;
        parallelize(&m).unwrap().module
    }
}
