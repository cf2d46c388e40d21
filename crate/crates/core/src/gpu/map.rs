//! Mapping the parallel loops onto blocks and warps.
//!
//! The two outermost parallel loops become the grid, the next two become
//! the warp decomposition of the block, and every copy nest is distributed
//! across all block threads with consecutive threads touching consecutive
//! addresses (vector-width granular), which keeps global accesses
//! coalesced. Sequential k-loops survive into the kernel body.

use crate::ir::rewrite::{apply_subst, for_each_loop_mut, loop_at, loop_chain, Subst, SubstMap};
use crate::ir::{
    AffineBound, AffineExpr, GpuDim, GpuKernel, HwIds, Item, LaunchConfig, Loop, Module, OpKind,
    ProblemConfig, ValueId,
};
use crate::transforms::{precondition, rejected, PassError, TileConfig};

use super::{verify_out, KernelResult};

pub const NAME: &str = "map-gpu";

/// Grid/warp shape implied by problem and tile sizes.
pub fn launch_config(cfg: &TileConfig, p: &ProblemConfig) -> LaunchConfig {
    LaunchConfig {
        grid_x: p.m / cfg.tbm,
        grid_y: p.n / cfg.tbn,
        warps_x: cfg.warps_x(),
        warps_y: cfg.warps_y(),
    }
}

pub fn map_to_gpu(
    m: &Module,
    cfg: &TileConfig,
    p: &ProblemConfig,
) -> Result<KernelResult, PassError> {
    cfg.validate().map_err(|e| rejected(NAME, e))?;
    cfg.check_problem(p).map_err(|e| rejected(NAME, e))?;
    let launch = launch_config(cfg, p);
    if launch.block_threads() > 1024 {
        return Err(rejected(
            NAME,
            format!("{} threads per block exceeds the 1024-thread limit", launch.block_threads()),
        ));
    }

    let chain = loop_chain(&m.main().body);
    if chain.len() < 5 {
        return Err(precondition(NAME, "expected block/warp loops around a sequential k-loop"));
    }
    let func = m.main();
    let outer: Vec<&Loop> = chain[..4].iter().map(|p| loop_at(&func.body, p)).collect();
    for (l, what) in outer.iter().zip(["block-i", "block-j", "warp-i", "warp-j"]) {
        if !l.attrs.parallel {
            return Err(precondition(NAME, format!("{what} loop is not marked parallel")));
        }
    }
    let expect = [launch.grid_x, launch.grid_y, launch.warps_x, launch.warps_y];
    for ((l, want), what) in outer.iter().zip(expect).zip(["grid x", "grid y", "warps x", "warps y"])
    {
        if l.const_trip_count() != Some(want) {
            return Err(rejected(
                NAME,
                format!(
                    "{what}: loop trip count {:?} does not match the launch shape {want}",
                    l.const_trip_count()
                ),
            ));
        }
    }

    // Annotate (for the record), then consume.
    let mut annotated = m.clone();
    {
        let dims = [GpuDim::BlockX, GpuDim::BlockY, GpuDim::WarpX, GpuDim::WarpY];
        let body = &mut annotated.main_mut().body;
        for (path, dim) in chain[..4].iter().zip(dims) {
            crate::ir::rewrite::loop_at_mut(body, path).attrs.gpu = Some(dim);
        }
    }

    let func = annotated.main();
    let [i0, j0, i1, j1] = [outer[0].iv, outer[1].iv, outer[2].iv, outer[3].iv];
    let inner_body = loop_at(&func.body, &chain[3]).body.clone();

    let mut next = func.next_value;
    let mut fresh = || {
        let v = ValueId(next);
        next += 1;
        v
    };
    let hw = HwIds { bx: fresh(), by: fresh(), wx: fresh(), wy: fresh(), tid: fresh() };

    let mut body = inner_body;
    let mut subst = SubstMap::new();
    subst.insert(
        i0,
        Subst::Expr { operands: vec![hw.bx], expr: AffineExpr::dim(0).mul(cfg.tbm) },
    );
    subst.insert(
        j0,
        Subst::Expr { operands: vec![hw.by], expr: AffineExpr::dim(0).mul(cfg.tbn) },
    );
    subst.insert(
        i1,
        Subst::Expr {
            operands: vec![hw.bx, hw.wx],
            expr: AffineExpr::dim(0).mul(cfg.tbm).add(AffineExpr::dim(1).mul(cfg.wm)),
        },
    );
    subst.insert(
        j1,
        Subst::Expr {
            operands: vec![hw.by, hw.wy],
            expr: AffineExpr::dim(0).mul(cfg.tbn).add(AffineExpr::dim(1).mul(cfg.wn)),
        },
    );
    apply_subst(&mut body, &subst);

    let mut kernel = GpuKernel {
        name: func.name.clone(),
        launch,
        globals: annotated.globals.clone(),
        args: func.args.clone(),
        hw,
        body,
        next_value: next,
    };

    distribute_copies(&mut kernel)?;

    verify_out(
        NAME,
        kernel,
        vec![format!(
            "grid {}x{}, {}x{} warps, {} threads per block",
            launch.grid_x,
            launch.grid_y,
            launch.warps_x,
            launch.warps_y,
            launch.block_threads()
        )],
    )
}

/// Rewrite each tagged copy nest into one loop over vector-width chunks,
/// strided by the block size, with thread t handling the chunks whose
/// linear index is congruent to t.
fn distribute_copies(kernel: &mut GpuKernel) -> Result<(), PassError> {
    let bt = kernel.launch.block_threads();
    let tid = kernel.hw.tid;
    let mut next = kernel.next_value;
    let mut error = None;
    let mut body = std::mem::take(&mut kernel.body);
    for_each_loop_mut(&mut body, &mut |outer: &mut Loop| {
        if outer.attrs.tag.is_none() || error.is_some() {
            return;
        }
        match distribute_one(outer, bt, tid, &mut next) {
            Ok(()) => {}
            Err(e) => error = Some(e),
        }
    });
    kernel.body = body;
    kernel.next_value = next;
    match error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn distribute_one(
    outer: &mut Loop,
    block_threads: i64,
    tid: ValueId,
    next: &mut u32,
) -> Result<(), PassError> {
    let inner = match outer.body.as_slice() {
        [Item::Loop(inner)] => inner.as_ref().clone(),
        _ => return Err(precondition(NAME, "copy nest is not two perfectly nested loops")),
    };
    let rows = outer.const_trip_count().unwrap_or(0);
    let width = inner.step;
    let cols = inner.const_trip_count().unwrap_or(0) * width;
    // Sanity: the body must be the (possibly vectorized) load/store pair.
    let ok = inner.body.len() == 2
        && matches!(
            inner.body[0],
            Item::Op(ref op) if matches!(op.kind, OpKind::Load { .. } | OpKind::VectorLoad { .. })
        );
    if !ok {
        return Err(precondition(NAME, "copy nest body is not a load/store pair"));
    }
    let chunks = rows * cols / width;
    if chunks % block_threads != 0 {
        return Err(rejected(
            NAME,
            format!(
                "copy of {chunks} chunks cannot be split evenly across {block_threads} threads"
            ),
        ));
    }

    let q = ValueId(*next);
    *next += 1;

    // elem = (q + tid) * width; row = lbR + elem floordiv cols,
    // col = lbC + elem mod cols.
    let (r_ops, r_expr) = outer.lower.as_expr_over();
    let (c_ops, c_expr) = inner.lower.as_expr_over();
    let row_subst = {
        let mut operands = r_ops.to_vec();
        operands.push(q);
        operands.push(tid);
        let nd = r_ops.len();
        let elem = AffineExpr::dim(nd).add(AffineExpr::dim(nd + 1)).mul(width);
        Subst::Expr {
            operands,
            expr: r_expr.clone().add(elem.floordiv(cols)).simplify(),
        }
    };
    let col_subst = {
        let mut operands = c_ops.to_vec();
        operands.push(q);
        operands.push(tid);
        let nd = c_ops.len();
        let elem = AffineExpr::dim(nd).add(AffineExpr::dim(nd + 1)).mul(width);
        Subst::Expr {
            operands,
            expr: c_expr.clone().add(elem.modulo(cols)).simplify(),
        }
    };

    let mut new_body = inner.body.clone();
    let mut subst = SubstMap::new();
    subst.insert(outer.iv, row_subst);
    subst.insert(inner.iv, col_subst);
    apply_subst(&mut new_body, &subst);

    outer.iv = q;
    outer.lower = AffineBound::constant(0);
    outer.upper = AffineBound::constant(chunks);
    outer.step = block_threads;
    outer.body = new_body;
    outer.attrs.parallel = false;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::ElemType;
    use crate::transforms::testutil::lower_to_parallel;

    #[test]
    fn reference_tile_sizes_give_expected_launch() {
        let cfg = TileConfig::new(128, 128, 64, 64, 64);
        let p = ProblemConfig::new(8192, 8192, 8192, ElemType::F32);
        let l = launch_config(&cfg, &p);
        assert_eq!((l.grid_x, l.grid_y), (64, 64));
        assert_eq!((l.warps_x, l.warps_y), (2, 2));
        assert_eq!(l.block_threads(), 128);
    }

    #[test]
    fn single_block_problem_maps_to_1x1_grid() {
        let cfg = TileConfig::new(64, 64, 32, 32, 32);
        let p = ProblemConfig::new(64, 64, 64, ElemType::F32);
        let m = lower_to_parallel(&cfg, &p);
        let k = map_to_gpu(&m, &cfg, &p).unwrap().kernel;
        assert_eq!((k.launch.grid_x, k.launch.grid_y), (1, 1));
        assert_eq!(k.launch.warps_per_block(), 4);
    }

    #[test]
    fn wide_tile_launch_shape() {
        let cfg = TileConfig::new(128, 256, 32, 64, 64);
        let p = ProblemConfig::new(1024, 1024, 1024, ElemType::F32);
        let l = launch_config(&cfg, &p);
        assert_eq!((l.grid_x, l.grid_y), (8, 4));
        assert_eq!(l.warps_per_block(), 2 * 4);
    }

    #[test]
    fn oversized_block_rejected() {
        // 1280 threads: 40 warps of 32.
        let cfg = TileConfig::new(160, 128, 32, 16, 16);
        let p = ProblemConfig::new(320, 256, 64, ElemType::F32);
        let m = lower_to_parallel(&cfg, &p);
        let err = map_to_gpu(&m, &cfg, &p).unwrap_err();
        assert!(err.to_string().contains("1024"), "{err}");
    }
}
