//! The ordered lowering pipeline.
//!
//! Stages run in a fixed order from the naive three-loop module down to the
//! finalized kernel. Any stage's output can be dumped, the pipeline can
//! stop after a named stage, and a dump can be re-parsed and resumed, which
//! must produce the same artifact as running straight through.

use std::collections::BTreeSet;

use crate::gpu;
use crate::ir::rewrite::loop_chain;
use crate::ir::{
    build_naive_matmul, print_kernel, print_module, GpuKernel, Module, ProblemConfig,
};
use crate::transforms::{self as tf, PassError, PassReport, TileConfig};

/// One stage of the lowering, in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Tile,
    Copies,
    Pad,
    Wmma,
    PermuteOuter,
    PermuteInner,
    Unroll,
    Cse,
    Hoist,
    Pipeline,
    Barriers,
    Vectorize,
    Parallelize,
    MapGpu,
    FinalizePipeline,
}

impl Stage {
    pub const ALL: [Stage; 15] = [
        Stage::Tile,
        Stage::Copies,
        Stage::Pad,
        Stage::Wmma,
        Stage::PermuteOuter,
        Stage::PermuteInner,
        Stage::Unroll,
        Stage::Cse,
        Stage::Hoist,
        Stage::Pipeline,
        Stage::Barriers,
        Stage::Vectorize,
        Stage::Parallelize,
        Stage::MapGpu,
        Stage::FinalizePipeline,
    ];

    /// The 13 affine stages (everything before GPU mapping).
    pub const AFFINE: [Stage; 13] = [
        Stage::Tile,
        Stage::Copies,
        Stage::Pad,
        Stage::Wmma,
        Stage::PermuteOuter,
        Stage::PermuteInner,
        Stage::Unroll,
        Stage::Cse,
        Stage::Hoist,
        Stage::Pipeline,
        Stage::Barriers,
        Stage::Vectorize,
        Stage::Parallelize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Tile => "tile",
            Stage::Copies => "copies",
            Stage::Pad => "pad",
            Stage::Wmma => "wmma",
            Stage::PermuteOuter => "permute-outer",
            Stage::PermuteInner => "permute-inner",
            Stage::Unroll => "unroll",
            Stage::Cse => "cse",
            Stage::Hoist => "hoist",
            Stage::Pipeline => "pipeline",
            Stage::Barriers => "barriers",
            Stage::Vectorize => "vectorize",
            Stage::Parallelize => "parallelize",
            Stage::MapGpu => "map-gpu",
            Stage::FinalizePipeline => "finalize-pipeline",
        }
    }

    pub fn from_name(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }
}

/// IR at some point of the pipeline: affine module or mapped kernel.
#[derive(Debug, Clone)]
pub enum Ir {
    Affine(Module),
    Gpu(GpuKernel),
}

impl Ir {
    pub fn print(&self) -> String {
        match self {
            Ir::Affine(m) => print_module(m),
            Ir::Gpu(k) => print_kernel(k),
        }
    }

    pub fn as_affine(&self) -> Option<&Module> {
        match self {
            Ir::Affine(m) => Some(m),
            Ir::Gpu(_) => None,
        }
    }

    pub fn as_gpu(&self) -> Option<&GpuKernel> {
        match self {
            Ir::Affine(_) => None,
            Ir::Gpu(k) => Some(k),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOpts {
    /// Stop after this stage.
    pub stop: Option<Stage>,
    /// Stages to skip (used to measure an optimization's effect).
    pub skip: BTreeSet<Stage>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub ir: Ir,
    pub reports: Vec<PassReport>,
}

/// Build the naive module for the problem and lower it through the
/// pipeline. `on_after` observes the IR after every executed stage.
pub fn run(
    cfg: &TileConfig,
    prob: &ProblemConfig,
    opts: &PipelineOpts,
    on_after: &mut dyn FnMut(Stage, &Ir),
) -> Result<PipelineOutput, PassError> {
    let ir = Ir::Affine(build_naive_matmul(prob));
    run_stages(ir, &Stage::ALL, cfg, prob, opts, on_after)
}

/// Resume from a dumped artifact: run every stage strictly after `after`.
pub fn resume(
    ir: Ir,
    after: Stage,
    cfg: &TileConfig,
    prob: &ProblemConfig,
    opts: &PipelineOpts,
    on_after: &mut dyn FnMut(Stage, &Ir),
) -> Result<PipelineOutput, PassError> {
    let pos = Stage::ALL.iter().position(|s| *s == after).unwrap();
    run_stages(ir, &Stage::ALL[pos + 1..], cfg, prob, opts, on_after)
}

fn run_stages(
    mut ir: Ir,
    stages: &[Stage],
    cfg: &TileConfig,
    prob: &ProblemConfig,
    opts: &PipelineOpts,
    on_after: &mut dyn FnMut(Stage, &Ir),
) -> Result<PipelineOutput, PassError> {
    let mut reports = Vec::new();
    for stage in stages {
        if opts.skip.contains(stage) {
            continue;
        }
        let (next, report) = apply(*stage, ir, cfg, prob)?;
        ir = next;
        on_after(*stage, &ir);
        reports.push(report);
        if opts.stop == Some(*stage) {
            break;
        }
    }
    Ok(PipelineOutput { ir, reports })
}

/// Apply one stage.
pub fn apply(
    stage: Stage,
    ir: Ir,
    cfg: &TileConfig,
    prob: &ProblemConfig,
) -> Result<(Ir, PassReport), PassError> {
    match (stage, ir) {
        (Stage::MapGpu, Ir::Affine(m)) => {
            let r = gpu::map_to_gpu(&m, cfg, prob)?;
            let report = kernel_report(Stage::MapGpu, &m, &r.kernel, r.notes);
            Ok((Ir::Gpu(r.kernel), report))
        }
        (Stage::FinalizePipeline, Ir::Gpu(k)) => {
            let r = gpu::finalize_pipeline(&k)?;
            let report = PassReport {
                pass: Stage::FinalizePipeline.name(),
                loops_before: crate::ir::rewrite::count_loops(&k.body),
                loops_after: crate::ir::rewrite::count_loops(&r.kernel.body),
                ops_before: crate::ir::rewrite::count_ops(&k.body),
                ops_after: crate::ir::rewrite::count_ops(&r.kernel.body),
                notes: r.notes,
            };
            Ok((Ir::Gpu(r.kernel), report))
        }
        (stage, Ir::Affine(m)) => {
            let result = match stage {
                Stage::Tile => tf::tile_loop_nest(&m, cfg)?,
                Stage::Copies => tf::generate_shared_copies(&m, cfg)?,
                Stage::Pad => tf::pad_shared_buffer(&m, cfg)?,
                Stage::Wmma => tf::raise_to_wmma(&m, cfg)?,
                Stage::PermuteOuter => tf::permute::permute_outer(&m)?,
                Stage::PermuteInner => tf::permute::permute_inner(&m)?,
                Stage::Unroll => unroll_intrinsic_nest(&m)?,
                Stage::Cse => tf::cse(&m)?,
                Stage::Hoist => tf::hoist_accumulator(&m)?,
                Stage::Pipeline => tf::split_pipeline(&m)?,
                Stage::Barriers => tf::insert_barriers(&m)?,
                Stage::Vectorize => tf::vectorize_copies(&m, cfg.vector_bits)?,
                Stage::Parallelize => tf::parallelize(&m)?,
                Stage::MapGpu | Stage::FinalizePipeline => unreachable!(),
            };
            Ok((Ir::Affine(result.module), result.report))
        }
        (stage, Ir::Gpu(_)) => Err(PassError::Precondition {
            pass: stage.name(),
            msg: "affine stage applied to a mapped kernel".into(),
        }),
    }
}

/// Fully unroll the innermost three loops of the chain (the intrinsic
/// m/n/k nest), deepest first.
fn unroll_intrinsic_nest(m: &Module) -> Result<tf::PassResult, PassError> {
    let mut m = m.clone();
    let mut notes = Vec::new();
    let before_loops = crate::ir::rewrite::count_loops(&m.main().body);
    let before_ops = crate::ir::rewrite::count_ops(&m.main().body);
    for _ in 0..3 {
        let chain = loop_chain(&m.main().body);
        if chain.is_empty() {
            return Err(PassError::Precondition {
                pass: Stage::Unroll.name(),
                msg: "no loop chain to unroll".into(),
            });
        }
        let r = tf::unroll_full(&m, chain.len() - 1)?;
        notes.extend(r.report.notes);
        m = r.module;
    }
    let report = PassReport {
        pass: Stage::Unroll.name(),
        loops_before: before_loops,
        loops_after: crate::ir::rewrite::count_loops(&m.main().body),
        ops_before: before_ops,
        ops_after: crate::ir::rewrite::count_ops(&m.main().body),
        notes,
    };
    Ok(tf::PassResult { module: m, report })
}

fn kernel_report(stage: Stage, m: &Module, k: &GpuKernel, notes: Vec<String>) -> PassReport {
    PassReport {
        pass: stage.name(),
        loops_before: crate::ir::rewrite::count_loops(&m.main().body),
        loops_after: crate::ir::rewrite::count_loops(&k.body),
        ops_before: crate::ir::rewrite::count_ops(&m.main().body),
        ops_after: crate::ir::rewrite::count_ops(&k.body),
        notes,
    }
}
