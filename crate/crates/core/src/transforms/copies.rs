//! Shared-memory staging for the A and B tiles.
//!
//! Declares `a_smem` (tbm x tbk) and `b_smem` (tbk x tbn), inserts
//! element-wise global-to-shared copy nests at the top of the block k-loop
//! (B first, then A, matching the reference loop order), and rewrites the
//! intra-tile A/B loads to read the staged tiles. C is never staged: its
//! tiles stream straight from global memory into fragments.

use crate::ir::rewrite::{for_each_op_mut, loop_at_mut, loop_chain};
use crate::ir::{
    AffineBound, AffineExpr, BufferRef, ElemType, GlobalBuffer, Item, Loop, LoopAttrs, LoopTag,
    MemRefType, MemorySpace, Module, Op, OpKind, Subscript, ValueId,
};

use super::{finish_pass, precondition, rejected, PassError, PassResult, TileConfig, SHARED_LIMIT_BYTES};

pub const NAME: &str = "copies";

pub const A_SMEM: &str = "a_smem";
pub const B_SMEM: &str = "b_smem";

pub fn generate_shared_copies(m: &Module, cfg: &TileConfig) -> Result<PassResult, PassError> {
    cfg.validate().map_err(|e| rejected(NAME, e))?;
    if m.global(A_SMEM).is_some() || m.global(B_SMEM).is_some() {
        return Err(precondition(NAME, "shared copies already generated"));
    }
    let unpadded = (cfg.tbm * cfg.tbk + cfg.tbk * cfg.tbn) * 2;
    if unpadded > SHARED_LIMIT_BYTES {
        return Err(rejected(
            NAME,
            format!("shared tiles need {unpadded} bytes, over the {SHARED_LIMIT_BYTES}-byte budget"),
        ));
    }

    let mut out = m.clone();
    let chain = loop_chain(&out.main().body);
    if chain.len() != 8 {
        return Err(precondition(NAME, format!("expected the 8-loop tiled nest, found {} chain loops", chain.len())));
    }
    let ivs: Vec<ValueId> = chain
        .iter()
        .map(|p| crate::ir::rewrite::loop_at(&out.main().body, p).iv)
        .collect();
    let (i0, j0, k0) = (ivs[0], ivs[1], ivs[2]);

    out.globals.push(GlobalBuffer {
        name: A_SMEM.into(),
        ty: MemRefType::row_major(vec![cfg.tbm, cfg.tbk], ElemType::F16, MemorySpace::Shared),
    });
    out.globals.push(GlobalBuffer {
        name: B_SMEM.into(),
        ty: MemRefType::row_major(vec![cfg.tbk, cfg.tbn], ElemType::F16, MemorySpace::Shared),
    });

    // Rewrite intra-tile A/B loads inside the warp-tile subtree to read the
    // staged tiles at tile-relative coordinates.
    {
        let func = out.main_mut();
        let compute = loop_at_mut(&mut func.body, &chain[3]);
        for_each_op_mut(&mut compute.body, &mut |op: &mut Op| {
            let (origin_r, origin_c, smem) = match &op.kind {
                OpKind::Load { buf: BufferRef::Arg(0), .. } => (i0, k0, A_SMEM),
                OpKind::Load { buf: BufferRef::Arg(1), .. } => (k0, j0, B_SMEM),
                _ => return,
            };
            if let OpKind::Load { buf, at } = &mut op.kind {
                *buf = BufferRef::Global(smem.into());
                *at = relative_subscript(at, origin_r, origin_c);
            }
        });
    }

    // Copy nests go at the top of the block k-loop body: B, then A.
    let (copy_b, copy_a) = {
        let func = out.main_mut();
        let mut fresh = Vec::new();
        for _ in 0..4 {
            fresh.push(func.fresh_value());
        }
        let (kb, jb, ia, ka) = (fresh[0], fresh[1], fresh[2], fresh[3]);
        let vb = func.fresh_value();
        let va = func.fresh_value();
        let copy_b = copy_nest(
            kb,
            k0,
            cfg.tbk,
            jb,
            j0,
            cfg.tbn,
            vb,
            BufferRef::Arg(1),
            B_SMEM,
            LoopTag::CopyB,
        );
        let copy_a = copy_nest(
            ia,
            i0,
            cfg.tbm,
            ka,
            k0,
            cfg.tbk,
            va,
            BufferRef::Arg(0),
            A_SMEM,
            LoopTag::CopyA,
        );
        (copy_b, copy_a)
    };
    {
        let func = out.main_mut();
        let k_loop = loop_at_mut(&mut func.body, &chain[2]);
        k_loop.body.insert(0, copy_a);
        k_loop.body.insert(0, copy_b);
    }

    finish_pass(NAME, m, out, vec!["staged A and B tiles through shared memory".into()])
}

/// `[r, c]` -> `[r - origin_r, c - origin_c]`.
fn relative_subscript(at: &Subscript, origin_r: ValueId, origin_c: ValueId) -> Subscript {
    let mut operands = at.operands.clone();
    let dim_of = |v: ValueId, operands: &mut Vec<ValueId>| {
        match operands.iter().position(|o| *o == v) {
            Some(i) => AffineExpr::dim(i),
            None => {
                operands.push(v);
                AffineExpr::dim(operands.len() - 1)
            }
        }
    };
    let origin_r = dim_of(origin_r, &mut operands);
    let origin_c = dim_of(origin_c, &mut operands);
    let exprs = vec![
        at.map.results[0].clone().sub(origin_r).simplify(),
        at.map.results[1].clone().sub(origin_c).simplify(),
    ];
    Subscript::from_exprs(operands, exprs)
}

/// Two-deep element-wise copy: rows over [row0, row0+rows), cols over
/// [col0, col0+cols), loading `src[r, c]` and storing `dst[r-row0, c-col0]`.
#[allow(clippy::too_many_arguments)]
fn copy_nest(
    r_iv: ValueId,
    row0: ValueId,
    rows: i64,
    c_iv: ValueId,
    col0: ValueId,
    cols: i64,
    val: ValueId,
    src: BufferRef,
    dst: &str,
    tag: LoopTag,
) -> Item {
    let load = Item::Op(Op::new(
        Some(val),
        OpKind::Load {
            buf: src,
            at: Subscript::from_exprs(vec![r_iv, c_iv], vec![AffineExpr::dim(0), AffineExpr::dim(1)]),
        },
    ));
    let store = Item::Op(Op::new(
        None,
        OpKind::Store {
            value: val,
            buf: BufferRef::Global(dst.into()),
            at: Subscript::from_exprs(
                vec![r_iv, row0, c_iv, col0],
                vec![
                    AffineExpr::dim(0).sub(AffineExpr::dim(1)),
                    AffineExpr::dim(2).sub(AffineExpr::dim(3)),
                ],
            ),
        },
    ));
    let inner = Loop {
        iv: c_iv,
        lower: AffineBound::from_expr(vec![col0], AffineExpr::dim(0)),
        upper: AffineBound::from_expr(vec![col0], AffineExpr::dim(0).add(AffineExpr::cst(cols))),
        step: 1,
        iter_args: vec![],
        results: vec![],
        body: vec![load, store],
        attrs: LoopAttrs::default(),
    };
    let outer = Loop {
        iv: r_iv,
        lower: AffineBound::from_expr(vec![row0], AffineExpr::dim(0)),
        upper: AffineBound::from_expr(vec![row0], AffineExpr::dim(0).add(AffineExpr::cst(rows))),
        step: 1,
        iter_args: vec![],
        results: vec![],
        body: vec![Item::Loop(Box::new(inner))],
        attrs: LoopAttrs { tag: Some(tag), ..Default::default() },
    };
    Item::Loop(Box::new(outer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{build_naive_matmul, ProblemConfig};
    use crate::transforms::tile_loop_nest;

    #[test]
    fn declares_tiles_and_tags_copy_loops() {
        let cfg = TileConfig::new(128, 128, 64, 64, 64);
        let m = build_naive_matmul(&ProblemConfig::new(256, 256, 128, ElemType::F32));
        let tiled = tile_loop_nest(&m, &cfg).unwrap().module;
        let staged = generate_shared_copies(&tiled, &cfg).unwrap().module;
        let a = staged.global(A_SMEM).unwrap();
        let b = staged.global(B_SMEM).unwrap();
        assert_eq!(a.ty.shape, vec![128, 64]);
        assert_eq!(b.ty.shape, vec![64, 128]);
        let mut tags = Vec::new();
        crate::ir::rewrite::for_each_loop(&staged.main().body, &mut |l| {
            if let Some(t) = l.attrs.tag {
                tags.push(t);
            }
        });
        assert_eq!(tags, vec![LoopTag::CopyB, LoopTag::CopyA]);
    }

    #[test]
    fn rejects_oversized_tiles() {
        let cfg = TileConfig::new(256, 256, 128, 64, 64);
        let m = build_naive_matmul(&ProblemConfig::new(256, 256, 128, ElemType::F32));
        let tiled = tile_loop_nest(&m, &cfg).unwrap().module;
        let err = generate_shared_copies(&tiled, &cfg).unwrap_err();
        assert!(err.to_string().contains("budget"), "{err}");
    }
}
