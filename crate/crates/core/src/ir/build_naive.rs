//! Builder for the three-loop starting point of the lowering pipeline.

use super::expr::AffineExpr;
use super::ops::build;
use super::ops::{AffineBound, BufferRef, Func, FuncArg, Item, Loop, LoopAttrs, Module, Subscript};
use super::types::{ElemType, MemRefType, MemorySpace, ProblemConfig};

/// Build the naive matmul `C[i][j] += A[i][k] * B[k][j]` as a perfectly
/// nested i/j/k loop over global memrefs, with the products widened to f32
/// when the accumulate type is f32.
pub fn build_naive_matmul(cfg: &ProblemConfig) -> Module {
    assert!(cfg.validate().is_ok(), "invalid problem config");
    let args = vec![
        FuncArg {
            name: "A".into(),
            ty: MemRefType::row_major(vec![cfg.m, cfg.k], ElemType::F16, MemorySpace::Global),
        },
        FuncArg {
            name: "B".into(),
            ty: MemRefType::row_major(vec![cfg.k, cfg.n], ElemType::F16, MemorySpace::Global),
        },
        FuncArg {
            name: "C".into(),
            ty: MemRefType::row_major(vec![cfg.m, cfg.n], cfg.accum, MemorySpace::Global),
        },
    ];
    let mut func = Func::new("matmul", args);

    let iv_i = func.fresh_value();
    let iv_j = func.fresh_value();
    let iv_k = func.fresh_value();

    let a = func.fresh_value();
    let b = func.fresh_value();
    let mut body = vec![
        build::load(a, BufferRef::Arg(0), idx2(iv_i, iv_k)),
        build::load(b, BufferRef::Arg(1), idx2(iv_k, iv_j)),
    ];
    let (lhs, rhs) = if cfg.accum == ElemType::F32 {
        let ea = func.fresh_value();
        let eb = func.fresh_value();
        body.push(build::extf(ea, a));
        body.push(build::extf(eb, b));
        (ea, eb)
    } else {
        (a, b)
    };
    let p = func.fresh_value();
    let c = func.fresh_value();
    let s = func.fresh_value();
    body.push(build::mulf(p, lhs, rhs, cfg.accum));
    body.push(build::load(c, BufferRef::Arg(2), idx2(iv_i, iv_j)));
    body.push(build::addf(s, c, p, cfg.accum));
    body.push(build::store(s, BufferRef::Arg(2), idx2(iv_i, iv_j)));

    let k_loop = unit_loop(iv_k, cfg.k, body);
    let j_loop = unit_loop(iv_j, cfg.n, vec![Item::Loop(Box::new(k_loop))]);
    let i_loop = unit_loop(iv_i, cfg.m, vec![Item::Loop(Box::new(j_loop))]);
    func.body = vec![Item::Loop(Box::new(i_loop))];

    Module { globals: vec![], funcs: vec![func] }
}

fn idx2(r: super::ops::ValueId, c: super::ops::ValueId) -> Subscript {
    Subscript::from_exprs(vec![r, c], vec![AffineExpr::dim(0), AffineExpr::dim(1)])
}

fn unit_loop(iv: super::ops::ValueId, extent: i64, body: Vec<Item>) -> Loop {
    Loop {
        iv,
        lower: AffineBound::constant(0),
        upper: AffineBound::constant(extent),
        step: 1,
        iter_args: vec![],
        results: vec![],
        body,
        attrs: LoopAttrs::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_perfectly_nested_unit_loops() {
        let m = build_naive_matmul(&ProblemConfig::new(8192, 8192, 8192, ElemType::F32));
        let f = m.main();
        let i = f.body[0].as_loop().unwrap();
        assert_eq!(i.step, 1);
        assert_eq!(i.const_trip_count(), Some(8192));
        let j = i.body[0].as_loop().unwrap();
        assert_eq!(j.const_trip_count(), Some(8192));
        let k = j.body[0].as_loop().unwrap();
        assert_eq!(k.const_trip_count(), Some(8192));
        // f32 accumulate widens both operands.
        assert_eq!(k.body.len(), 8);
    }

    #[test]
    fn f16_accumulate_has_no_widening() {
        let m = build_naive_matmul(&ProblemConfig::new(16, 16, 16, ElemType::F16));
        let k = m.main().body[0].as_loop().unwrap().body[0].as_loop().unwrap().body[0]
            .as_loop()
            .unwrap();
        assert_eq!(k.body.len(), 6);
    }
}
