//! Mapping onto the GPU execution hierarchy and kernel emission.
//!
//! [`map_to_gpu`] consumes the four outer parallel loops (blocks and warps)
//! and distributes the copy loops across all block threads;
//! [`finalize_pipeline`] unrolls the in-loop copies and delays their shared
//! stores behind the compute, completing the latency hiding;
//! [`emit_kernel_text`] renders a deterministic pseudo-CUDA view.

mod emit;
mod finalize;
mod map;

pub use crate::ir::{GpuKernel, LaunchConfig, THREADS_PER_WARP};
pub use emit::emit_kernel_text;
pub use finalize::finalize_pipeline;
pub use map::{launch_config, map_to_gpu};

use crate::transforms::PassError;

/// Kernel-producing counterpart of the affine pass results.
#[derive(Debug, Clone)]
pub struct KernelResult {
    pub kernel: GpuKernel,
    pub notes: Vec<String>,
}

pub(crate) fn verify_out(
    pass: &'static str,
    kernel: GpuKernel,
    notes: Vec<String>,
) -> Result<KernelResult, PassError> {
    crate::ir::verify_kernel(&kernel)
        .map_err(|d| PassError::BrokenOutput { pass, diags: d.to_string() })?;
    Ok(KernelResult { kernel, notes })
}
