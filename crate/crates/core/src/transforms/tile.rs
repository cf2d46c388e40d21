//! Two-level tiling of the naive three-loop matmul.
//!
//! The first level carves thread-block tiles (tbm x tbn x tbk); the second
//! partitions the block tile among warps (wm x wn). The result is the
//! eight-loop structure every later pass consumes:
//!
//! ```text
//! i0 (block row)   0..M  step tbm
//!  j0 (block col)  0..N  step tbn
//!   k0 (block k)   0..K  step tbk
//!    i1 (warp row)   i0..i0+tbm step wm
//!     j1 (warp col)  j0..j0+tbn step wn
//!      i2             i1..i1+wm step 1
//!       j2            j1..j1+wn step 1
//!        k1           k0..k0+tbk step 1
//!         <original scalar body>
//! ```
//!
//! Iteration-space points and per-element execution order are preserved.

use std::collections::HashMap;

use crate::ir::rewrite::Subst;
use crate::ir::{
    AffineBound, AffineExpr, Item, Loop, LoopAttrs, Module, OpKind, ProblemConfig, ValueId,
};

use super::{finish_pass, precondition, rejected, PassError, PassResult, TileConfig};

pub const NAME: &str = "tile";

pub fn tile_loop_nest(m: &Module, cfg: &TileConfig) -> Result<PassResult, PassError> {
    cfg.validate().map_err(|e| rejected(NAME, e))?;
    let (prob, old_ivs, scalar_body) = match_naive(m)?;
    cfg.check_problem(&prob).map_err(|e| rejected(NAME, e))?;

    let mut out = m.clone();
    let func = out.main_mut();

    let ivs: Vec<ValueId> = (0..8).map(|_| func.fresh_value()).collect();
    let (i0, j0, k0, i1, j1, i2, j2, k1) =
        (ivs[0], ivs[1], ivs[2], ivs[3], ivs[4], ivs[5], ivs[6], ivs[7]);

    let mut body = scalar_body;
    let mut subst = HashMap::new();
    subst.insert(old_ivs[0], Subst::Value(i2));
    subst.insert(old_ivs[1], Subst::Value(j2));
    subst.insert(old_ivs[2], Subst::Value(k1));
    crate::ir::rewrite::apply_subst(&mut body, &subst);

    let nest = block_loop(
        i0,
        prob.m,
        cfg.tbm,
        block_loop(
            j0,
            prob.n,
            cfg.tbn,
            block_loop(
                k0,
                prob.k,
                cfg.tbk,
                intra_loop(
                    i1,
                    i0,
                    cfg.tbm,
                    cfg.wm,
                    intra_loop(
                        j1,
                        j0,
                        cfg.tbn,
                        cfg.wn,
                        intra_loop(
                            i2,
                            i1,
                            cfg.wm,
                            1,
                            intra_loop(j2, j1, cfg.wn, 1, intra_loop_body(k1, k0, cfg.tbk, 1, body)),
                        ),
                    ),
                ),
            ),
        ),
    );
    func.body = vec![nest];
    finish_pass(NAME, m, out, vec![format!("3 loops tiled into 8")])
}

fn block_loop(iv: ValueId, extent: i64, step: i64, inner: Item) -> Item {
    Item::Loop(Box::new(Loop {
        iv,
        lower: AffineBound::constant(0),
        upper: AffineBound::constant(extent),
        step,
        iter_args: vec![],
        results: vec![],
        body: vec![inner],
        attrs: LoopAttrs::default(),
    }))
}

fn intra_loop(iv: ValueId, base: ValueId, extent: i64, step: i64, inner: Item) -> Item {
    intra_loop_body(iv, base, extent, step, vec![inner])
}

fn intra_loop_body(iv: ValueId, base: ValueId, extent: i64, step: i64, body: Vec<Item>) -> Item {
    Item::Loop(Box::new(Loop {
        iv,
        lower: AffineBound::from_expr(vec![base], AffineExpr::dim(0)),
        upper: AffineBound::from_expr(vec![base], AffineExpr::dim(0).add(AffineExpr::cst(extent))),
        step,
        iter_args: vec![],
        results: vec![],
        body,
        attrs: LoopAttrs::default(),
    }))
}

/// Match the naive module shape and pull out (problem, [i j k] IVs, body).
pub(crate) fn match_naive(m: &Module) -> Result<(ProblemConfig, [ValueId; 3], Vec<Item>), PassError> {
    let func = m.main();
    if func.args.len() != 3 {
        return Err(precondition(NAME, "expected a 3-argument matmul function"));
    }
    let shape_a = &func.args[0].ty.shape;
    let shape_c = &func.args[2].ty.shape;
    if shape_a.len() != 2 || shape_c.len() != 2 {
        return Err(precondition(NAME, "arguments must be rank-2 memrefs"));
    }
    let (big_m, big_k) = (shape_a[0], shape_a[1]);
    let big_n = shape_c[1];
    let accum = func.args[2].ty.elem;

    let i = single_loop(&func.body).ok_or_else(|| precondition(NAME, "expected i loop"))?;
    let j = single_loop(&i.body).ok_or_else(|| precondition(NAME, "expected j loop"))?;
    let k = single_loop(&j.body).ok_or_else(|| precondition(NAME, "expected k loop"))?;
    for (l, extent) in [(i, big_m), (j, big_n), (k, big_k)] {
        if l.step != 1 || l.const_trip_count() != Some(extent) || !l.iter_args.is_empty() {
            return Err(precondition(NAME, "loops must be unit-step over the full problem"));
        }
    }
    let has_scalar_body = k.body.iter().all(|it| {
        matches!(
            it,
            Item::Op(op) if matches!(
                op.kind,
                OpKind::Load { .. }
                    | OpKind::Store { .. }
                    | OpKind::MulF { .. }
                    | OpKind::AddF { .. }
                    | OpKind::ExtF { .. }
            )
        )
    });
    if !has_scalar_body || k.body.is_empty() {
        return Err(precondition(NAME, "innermost body must be the scalar multiply-accumulate"));
    }
    Ok((
        ProblemConfig { m: big_m, n: big_n, k: big_k, accum },
        [i.iv, j.iv, k.iv],
        k.body.clone(),
    ))
}

fn single_loop(items: &[Item]) -> Option<&Loop> {
    match items {
        [Item::Loop(l)] => Some(l),
        _ => None,
    }
}

/// Problem config recovered from a module's signature (any stage).
pub fn problem_of(m: &Module) -> ProblemConfig {
    let f = m.main();
    ProblemConfig {
        m: f.args[0].ty.shape[0],
        n: f.args[1].ty.shape[1],
        k: f.args[0].ty.shape[1],
        accum: f.args[2].ty.elem,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{build_naive_matmul, ElemType};

    fn cfg() -> TileConfig {
        TileConfig::new(128, 128, 64, 64, 64)
    }

    #[test]
    fn produces_eight_loop_nest_with_block_steps() {
        let m = build_naive_matmul(&ProblemConfig::new(8192, 8192, 8192, ElemType::F32));
        let r = tile_loop_nest(&m, &cfg()).unwrap();
        let chain = crate::ir::rewrite::loop_chain(&r.module.main().body);
        assert_eq!(chain.len(), 8);
        let steps: Vec<i64> = chain
            .iter()
            .map(|p| crate::ir::rewrite::loop_at(&r.module.main().body, p).step)
            .collect();
        assert_eq!(steps, vec![128, 128, 64, 64, 64, 1, 1, 1]);
        let outer = r.module.main().body[0].as_loop().unwrap();
        assert_eq!(outer.const_trip_count(), Some(64));
    }

    #[test]
    fn full_size_tile_gives_unit_outer_trip_counts() {
        let m = build_naive_matmul(&ProblemConfig::new(64, 64, 64, ElemType::F32));
        let c = TileConfig::new(64, 64, 64, 64, 64);
        let r = tile_loop_nest(&m, &c).unwrap();
        let body = &r.module.main().body;
        let chain = crate::ir::rewrite::loop_chain(body);
        for p in &chain[..3] {
            assert_eq!(crate::ir::rewrite::loop_at(body, p).const_trip_count(), Some(1));
        }
    }

    #[test]
    fn rejects_indivisible_problem() {
        let m = build_naive_matmul(&ProblemConfig::new(100, 128, 128, ElemType::F32));
        let err = tile_loop_nest(&m, &cfg()).unwrap_err();
        assert!(err.to_string().contains("M = 100"), "got: {err}");
    }
}
