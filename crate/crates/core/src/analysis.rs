//! Static resource and legality analysis.
//!
//! Mirrors the hardware envelope the generated kernels must fit: 48 KB of
//! statically allocated shared memory, at most 1024 threads per block, an
//! estimated 255 registers per thread, and the divisibility rules between
//! problem, block tile, warp tile and intrinsic shape.

use std::fmt;
use std::fmt::Write as _;

use crate::ir::{GpuKernel, MemorySpace, Module, ProblemConfig};
use crate::transforms::{TileConfig, SHARED_LIMIT_BYTES};

/// Register-estimate overhead beyond fragment storage (addressing,
/// staging temporaries). A declared heuristic, not an allocator promise.
pub const REGISTER_OVERHEAD: i64 = 40;

pub const MAX_REGISTERS_PER_THREAD: i64 = 255;
pub const MAX_BLOCK_THREADS: i64 = 1024;

/// Occupancy comparator knobs (Ampere-class defaults).
#[derive(Debug, Clone, Copy)]
pub struct SmLimits {
    pub shared_bytes: i64,
    pub max_warps: i64,
}

impl Default for SmLimits {
    fn default() -> Self {
        SmLimits { shared_bytes: 100 * 1024, max_warps: 48 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    SharedBytes { bytes: i64, limit: i64 },
    BlockThreads { threads: i64 },
    Registers { estimate: i64 },
    Divisibility { detail: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SharedBytes { bytes, limit } => {
                write!(f, "shared memory {bytes} bytes exceeds the {limit}-byte budget")
            }
            Violation::BlockThreads { threads } => {
                write!(f, "{threads} threads per block exceeds {MAX_BLOCK_THREADS}")
            }
            Violation::Registers { estimate } => {
                write!(f, "estimated {estimate} registers per thread exceeds {MAX_REGISTERS_PER_THREAD}")
            }
            Violation::Divisibility { detail } => write!(f, "divisibility: {detail}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceReport {
    pub shared_bytes: i64,
    pub fragments_per_warp: i64,
    pub est_registers_per_thread: i64,
    pub warps_per_block: i64,
    pub est_blocks_per_sm: i64,
    pub violations: Vec<Violation>,
}

impl ResourceReport {
    pub fn is_legal(&self) -> bool {
        self.violations.is_empty()
    }

    /// Flat key-value rendering, same style as the simulator metrics.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "shared_bytes={}", self.shared_bytes);
        let _ = writeln!(s, "fragments_per_warp={}", self.fragments_per_warp);
        let _ = writeln!(s, "est_registers_per_thread={}", self.est_registers_per_thread);
        let _ = writeln!(s, "warps_per_block={}", self.warps_per_block);
        let _ = writeln!(s, "est_blocks_per_sm={}", self.est_blocks_per_sm);
        let _ = writeln!(s, "violations={}", self.violations.len());
        for v in &self.violations {
            let _ = writeln!(s, "violation={v}");
        }
        s
    }
}

/// What to measure: an affine module, a mapped kernel, or the configuration
/// alone (before any pass has produced buffers).
#[derive(Debug, Clone, Copy)]
pub enum AnalyzeTarget<'a> {
    Module(&'a Module),
    Kernel(&'a GpuKernel),
    ConfigOnly,
}

pub fn analyze(target: AnalyzeTarget<'_>, cfg: &TileConfig, p: &ProblemConfig) -> ResourceReport {
    analyze_with(target, cfg, p, SmLimits::default())
}

pub fn analyze_with(
    target: AnalyzeTarget<'_>,
    cfg: &TileConfig,
    p: &ProblemConfig,
    sm: SmLimits,
) -> ResourceReport {
    let declared: Option<i64> = match target {
        AnalyzeTarget::Module(m) => shared_sum(&m.globals),
        AnalyzeTarget::Kernel(k) => shared_sum(&k.globals),
        AnalyzeTarget::ConfigOnly => None,
    };
    let shared_bytes = declared.unwrap_or_else(|| cfg.shared_bytes());

    let (am, an) = (cfg.wm / 16, cfg.wn / 16);
    let fragments_per_warp = am * an + am + an;
    let frag_elems = (am * an + am + an) * 256;
    let est_registers_per_thread = frag_elems / 32 + REGISTER_OVERHEAD;
    let warps_per_block = cfg.warps_x() * cfg.warps_y();
    let block_threads = warps_per_block * 32;

    let by_shared =
        if shared_bytes > 0 { sm.shared_bytes / shared_bytes } else { sm.max_warps };
    let by_warps = if warps_per_block > 0 { sm.max_warps / warps_per_block } else { 0 };
    let est_blocks_per_sm = by_shared.min(by_warps).max(0);

    let mut violations = Vec::new();
    if shared_bytes > SHARED_LIMIT_BYTES {
        violations.push(Violation::SharedBytes { bytes: shared_bytes, limit: SHARED_LIMIT_BYTES });
    }
    if block_threads > MAX_BLOCK_THREADS {
        violations.push(Violation::BlockThreads { threads: block_threads });
    }
    if est_registers_per_thread > MAX_REGISTERS_PER_THREAD {
        violations.push(Violation::Registers { estimate: est_registers_per_thread });
    }
    if let Err(e) = cfg.validate() {
        violations.push(Violation::Divisibility { detail: e });
    }
    if let Err(e) = cfg.check_problem(p) {
        violations.push(Violation::Divisibility { detail: e });
    }

    ResourceReport {
        shared_bytes,
        fragments_per_warp,
        est_registers_per_thread,
        warps_per_block,
        est_blocks_per_sm,
        violations,
    }
}

fn shared_sum(globals: &[crate::ir::GlobalBuffer]) -> Option<i64> {
    let shared: Vec<&crate::ir::GlobalBuffer> =
        globals.iter().filter(|g| g.ty.space == MemorySpace::Shared).collect();
    if shared.is_empty() {
        None
    } else {
        Some(shared.iter().map(|g| g.ty.alloc_bytes()).sum())
    }
}
