//! Raising the scalar multiply-accumulate body to warp-level matrix ops.
//!
//! The innermost three loops step by 16 afterwards, and each iteration
//! loads an A fragment and a B fragment from the staged tiles, streams the
//! C fragment from global memory, computes, and stores C back. Leading
//! dimensions on the loads/stores come from the (possibly padded) buffer
//! layouts.

use crate::ir::rewrite::{loop_at_mut, loop_chain};
use crate::ir::{
    build, BufferRef, FragRole, Item, Module, OpKind, Subscript,
};

use super::copies::{A_SMEM, B_SMEM};
use super::{finish_pass, precondition, rejected, PassError, PassResult, TileConfig};

pub const NAME: &str = "wmma";

pub fn raise_to_wmma(m: &Module, _cfg: &TileConfig) -> Result<PassResult, PassError> {
    let mut out = m.clone();
    let chain = loop_chain(&out.main().body);
    if chain.len() != 8 {
        return Err(precondition(NAME, "expected the 8-loop tiled nest with staged copies"));
    }

    // The innermost three loops surround the scalar body.
    let extents: Vec<i64> = chain[5..]
        .iter()
        .map(|p| {
            let l = crate::ir::rewrite::loop_at(&out.main().body, p);
            l.const_trip_count().unwrap_or(0) * l.step
        })
        .collect();
    for (dim, extent) in ["warp-m", "warp-n", "warp-k"].iter().zip(&extents) {
        if extent % 16 != 0 {
            return Err(rejected(NAME, format!("{dim} tile extent {extent} is not a multiple of 16")));
        }
    }
    let steps: Vec<i64> = chain[5..]
        .iter()
        .map(|p| crate::ir::rewrite::loop_at(&out.main().body, p).step)
        .collect();
    if steps != vec![1, 1, 1] {
        return Err(precondition(NAME, "innermost loops already raised"));
    }

    // Match the scalar body: loads from the staged tiles and the C
    // read-modify-write.
    let accum = out.main().args[2].ty.elem;
    let (sub_a, sub_b, sub_c) = {
        let body = &crate::ir::rewrite::loop_at(&out.main().body, &chain[7]).body;
        let mut a = None;
        let mut b = None;
        let mut c = None;
        for item in body {
            if let Item::Op(op) = item {
                match &op.kind {
                    OpKind::Load { buf: BufferRef::Global(g), at } if g == A_SMEM => {
                        a = Some(at.clone())
                    }
                    OpKind::Load { buf: BufferRef::Global(g), at } if g == B_SMEM => {
                        b = Some(at.clone())
                    }
                    OpKind::Load { buf: BufferRef::Arg(2), at } => c = Some(at.clone()),
                    _ => {}
                }
            }
        }
        match (a, b, c) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(precondition(
                    NAME,
                    "scalar body must load the staged A/B tiles and the C operand",
                ))
            }
        }
    };

    let ld_a = out.global(A_SMEM).unwrap().ty.row_stride();
    let ld_b = out.global(B_SMEM).unwrap().ty.row_stride();
    let ld_c = out.main().args[2].ty.row_stride();

    let (fa, fb, fc, fr) = {
        let f = out.main_mut();
        (f.fresh_value(), f.fresh_value(), f.fresh_value(), f.fresh_value())
    };
    let new_body = vec![
        build::wmma_load(fa, BufferRef::Global(A_SMEM.into()), sub_a, ld_a, FragRole::MatA, crate::ir::ElemType::F16),
        build::wmma_load(fb, BufferRef::Global(B_SMEM.into()), sub_b, ld_b, FragRole::MatB, crate::ir::ElemType::F16),
        build::wmma_load(fc, BufferRef::Arg(2), sub_c.clone(), ld_c, FragRole::Accum, accum),
        build::wmma_compute(fr, fa, fb, fc, accum),
        build::wmma_store(fr, BufferRef::Arg(2), sub_c, ld_c),
    ];
    {
        let func = out.main_mut();
        for p in &chain[5..] {
            loop_at_mut(&mut func.body, p).step = 16;
        }
        let k1 = loop_at_mut(&mut func.body, &chain[7]);
        k1.body = new_body;
    }
    finish_pass(NAME, m, out, vec!["scalar multiply-accumulate replaced by matrix ops".into()])
}

/// Subscript helper shared with tests: the canonical form of an access.
pub(crate) fn canon_subscript(at: &Subscript) -> Subscript {
    let mut pairs: Vec<(crate::ir::ValueId, usize)> =
        at.operands.iter().copied().enumerate().map(|(i, v)| (v, i)).collect();
    pairs.sort();
    pairs.dedup_by_key(|(v, _)| *v);
    let operands: Vec<crate::ir::ValueId> = pairs.iter().map(|(v, _)| *v).collect();
    let repl: Vec<crate::ir::AffineExpr> = at
        .operands
        .iter()
        .map(|v| {
            let idx = operands.iter().position(|o| o == v).unwrap();
            crate::ir::AffineExpr::dim(idx)
        })
        .collect();
    let exprs = at.map.results.iter().map(|e| e.substitute_dims(&repl).simplify()).collect();
    Subscript::from_exprs(operands, exprs)
}
