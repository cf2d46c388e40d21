//! Rewriting utilities shared by the transformation passes: cloning with
//! fresh values, substituting values by affine expressions (folded into the
//! subscript and bound maps), and loop-chain discovery.

use std::collections::HashMap;

use super::expr::AffineExpr;
use super::ops::*;

/// What a value is replaced with during substitution.
#[derive(Debug, Clone)]
pub enum Subst {
    Value(ValueId),
    /// An affine expression over other values. Only legal where the value is
    /// used as an index operand (bounds and subscripts).
    Expr { operands: Vec<ValueId>, expr: AffineExpr },
}

impl Subst {
    pub fn constant(c: i64) -> Self {
        Subst::Expr { operands: vec![], expr: AffineExpr::Const(c) }
    }
}

pub type SubstMap = HashMap<ValueId, Subst>;

/// Clone a list of items, giving every definition a fresh value and
/// remapping uses; uses of values defined outside the region stay as-is.
/// `map` records def renames and may be pre-seeded.
pub fn clone_items(
    items: &[Item],
    fresh: &mut dyn FnMut() -> ValueId,
    map: &mut HashMap<ValueId, ValueId>,
) -> Vec<Item> {
    items
        .iter()
        .map(|item| match item {
            Item::Op(op) => {
                let mut new = op.clone();
                new.for_each_use_mut(&mut |v| {
                    if let Some(n) = map.get(v) {
                        *v = *n;
                    }
                });
                if let Some(r) = new.result {
                    let nr = fresh();
                    map.insert(r, nr);
                    new.result = Some(nr);
                }
                Item::Op(new)
            }
            Item::Loop(l) => {
                let mut new = Loop {
                    iv: ValueId(u32::MAX),
                    lower: remap_bound(&l.lower, map),
                    upper: remap_bound(&l.upper, map),
                    step: l.step,
                    iter_args: Vec::new(),
                    results: Vec::new(),
                    body: Vec::new(),
                    attrs: l.attrs,
                };
                for ia in &l.iter_args {
                    let init = map.get(&ia.init).copied().unwrap_or(ia.init);
                    let arg = fresh();
                    map.insert(ia.arg, arg);
                    new.iter_args.push(IterArg { arg, init, ty: ia.ty });
                }
                let iv = fresh();
                map.insert(l.iv, iv);
                new.iv = iv;
                new.body = clone_items(&l.body, fresh, map);
                for r in &l.results {
                    let nr = fresh();
                    map.insert(*r, nr);
                    new.results.push(nr);
                }
                Item::Loop(Box::new(new))
            }
        })
        .collect()
}

fn remap_bound(b: &AffineBound, map: &HashMap<ValueId, ValueId>) -> AffineBound {
    AffineBound {
        map: b.map.clone(),
        operands: b.operands.iter().map(|v| map.get(v).copied().unwrap_or(*v)).collect(),
    }
}

/// Apply a substitution to every use in the items, folding expression
/// substitutions into the affine maps of bounds and subscripts.
pub fn apply_subst(items: &mut [Item], subst: &SubstMap) {
    for item in items.iter_mut() {
        match item {
            Item::Op(op) => {
                subst_float_uses(op, subst);
                if let Some(at) = op.subscript_mut() {
                    subst_subscript(at, subst);
                }
            }
            Item::Loop(l) => {
                subst_bound(&mut l.lower, subst);
                subst_bound(&mut l.upper, subst);
                for ia in l.iter_args.iter_mut() {
                    if let Some(Subst::Value(w)) = subst.get(&ia.init) {
                        ia.init = *w;
                    }
                }
                apply_subst(&mut l.body, subst);
            }
        }
    }
}

fn subst_float_uses(op: &mut Op, subst: &SubstMap) {
    // Float/fragment operands admit only value-for-value substitution, so
    // rewrite them via the generic visitor and let subscripts be rebuilt
    // separately.
    let at_backup = op.subscript().cloned();
    op.for_each_use_mut(&mut |v| {
        if let Some(Subst::Value(w)) = subst.get(v) {
            *v = *w;
        }
    });
    if let (Some(backup), Some(at)) = (at_backup, op.subscript_mut()) {
        *at = backup;
    }
}

fn subst_subscript(at: &mut Subscript, subst: &SubstMap) {
    let (operands, results) = rebuild_exprs(&at.operands, &at.map.results, subst);
    *at = Subscript::from_exprs(operands, results);
}

fn subst_bound(b: &mut AffineBound, subst: &SubstMap) {
    let (operands, results) = rebuild_exprs(&b.operands, &b.map.results, subst);
    debug_assert_eq!(results.len(), 1);
    *b = AffineBound::from_expr(operands, results.into_iter().next().unwrap());
}

fn rebuild_exprs(
    old_operands: &[ValueId],
    exprs: &[AffineExpr],
    subst: &SubstMap,
) -> (Vec<ValueId>, Vec<AffineExpr>) {
    let mut new_operands: Vec<ValueId> = Vec::new();
    let index_of = |v: ValueId, ops: &mut Vec<ValueId>| -> usize {
        match ops.iter().position(|o| *o == v) {
            Some(i) => i,
            None => {
                ops.push(v);
                ops.len() - 1
            }
        }
    };
    let repl: Vec<AffineExpr> = old_operands
        .iter()
        .map(|v| match subst.get(v) {
            None => AffineExpr::Dim(index_of(*v, &mut new_operands)),
            Some(Subst::Value(w)) => AffineExpr::Dim(index_of(*w, &mut new_operands)),
            Some(Subst::Expr { operands, expr }) => {
                let inner: Vec<AffineExpr> = operands
                    .iter()
                    .map(|w| AffineExpr::Dim(index_of(*w, &mut new_operands)))
                    .collect();
                expr.substitute_dims(&inner)
            }
        })
        .collect();
    let results = exprs.iter().map(|e| e.substitute_dims(&repl).simplify()).collect();
    (new_operands, results)
}

/// Replace every use of `from` with `to`.
pub fn replace_uses(items: &mut [Item], from: ValueId, to: ValueId) {
    for item in items.iter_mut() {
        match item {
            Item::Op(op) => op.for_each_use_mut(&mut |v| {
                if *v == from {
                    *v = to;
                }
            }),
            Item::Loop(l) => {
                for o in l.lower.operands.iter_mut().chain(l.upper.operands.iter_mut()) {
                    if *o == from {
                        *o = to;
                    }
                }
                for ia in l.iter_args.iter_mut() {
                    if ia.init == from {
                        ia.init = to;
                    }
                }
                replace_uses(&mut l.body, from, to);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Loop chain discovery
// ---------------------------------------------------------------------------

/// Paths (item indices per nesting level) of the main loop chain: at each
/// level the unique untagged loop, ignoring copy-tagged nests and plain ops.
pub fn loop_chain(body: &[Item]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut prefix = Vec::new();
    let mut items = body;
    loop {
        let candidates: Vec<usize> = items
            .iter()
            .enumerate()
            .filter(|(_, it)| matches!(it, Item::Loop(l) if l.attrs.tag.is_none()))
            .map(|(i, _)| i)
            .collect();
        if candidates.len() != 1 {
            return out;
        }
        let idx = candidates[0];
        prefix.push(idx);
        out.push(prefix.clone());
        items = match &items[idx] {
            Item::Loop(l) => &l.body,
            Item::Op(_) => unreachable!(),
        };
    }
}

pub fn loop_at<'a>(body: &'a [Item], path: &[usize]) -> &'a Loop {
    let mut items = body;
    let mut lp: Option<&Loop> = None;
    for idx in path {
        match &items[*idx] {
            Item::Loop(l) => {
                items = &l.body;
                lp = Some(l);
            }
            Item::Op(_) => panic!("path does not address a loop"),
        }
    }
    lp.expect("empty path")
}

pub fn loop_at_mut<'a>(body: &'a mut Vec<Item>, path: &[usize]) -> &'a mut Loop {
    let mut items = body;
    for (n, idx) in path.iter().enumerate() {
        match &mut items[*idx] {
            Item::Loop(l) => {
                if n + 1 == path.len() {
                    return l;
                }
                items = &mut l.body;
            }
            Item::Op(_) => panic!("path does not address a loop"),
        }
    }
    panic!("empty path")
}

/// The item list addressed by a path ("" = the body itself).
pub fn body_at_mut<'a>(body: &'a mut Vec<Item>, path: &[usize]) -> &'a mut Vec<Item> {
    if path.is_empty() {
        return body;
    }
    &mut loop_at_mut(body, path).body
}

// ---------------------------------------------------------------------------
// Counting and traversal helpers
// ---------------------------------------------------------------------------

pub fn count_loops(items: &[Item]) -> usize {
    items
        .iter()
        .map(|i| match i {
            Item::Loop(l) => 1 + count_loops(&l.body),
            Item::Op(_) => 0,
        })
        .sum()
}

pub fn count_ops(items: &[Item]) -> usize {
    items
        .iter()
        .map(|i| match i {
            Item::Loop(l) => count_ops(&l.body),
            Item::Op(_) => 1,
        })
        .sum()
}

pub fn for_each_op(items: &[Item], f: &mut dyn FnMut(&Op)) {
    for item in items {
        match item {
            Item::Op(op) => f(op),
            Item::Loop(l) => for_each_op(&l.body, f),
        }
    }
}

pub fn for_each_op_mut(items: &mut [Item], f: &mut dyn FnMut(&mut Op)) {
    for item in items.iter_mut() {
        match item {
            Item::Op(op) => f(op),
            Item::Loop(l) => for_each_op_mut(&mut l.body, f),
        }
    }
}

pub fn for_each_loop(items: &[Item], f: &mut dyn FnMut(&Loop)) {
    for item in items {
        if let Item::Loop(l) = item {
            f(l);
            for_each_loop(&l.body, f);
        }
    }
}

pub fn for_each_loop_mut(items: &mut [Item], f: &mut dyn FnMut(&mut Loop)) {
    for item in items.iter_mut() {
        if let Item::Loop(l) = item {
            f(l);
            for_each_loop_mut(&mut l.body, f);
        }
    }
}
