//! Splitting the block k-loop for global-load latency hiding.
//!
//! The copies for iteration 0 are peeled in front of the loop and the
//! compute for the last iteration is peeled after it. Inside the loop the
//! copy nests are shifted one block-k step ahead (fetching the tile the
//! next iteration will consume), and compute runs on the tile staged by the
//! previous iteration, so the loop body keeps its sequential meaning while
//! the copies and compute for different iterations overlap.

use std::collections::HashMap;

use crate::ir::rewrite::{apply_subst, clone_items, loop_at_mut, replace_uses, Subst, SubstMap};
use crate::ir::{AffineExpr, Item, Module, Op, OpKind, ValueId};

use super::hoist::find_k_block;
use super::{finish_pass, precondition, PassError, PassResult};

pub const NAME: &str = "pipeline";

pub fn split_pipeline(m: &Module) -> Result<PassResult, PassError> {
    let path = find_k_block(m)
        .ok_or_else(|| precondition(NAME, "no unique block k-loop with staged copies found"))?;

    let k_loop = crate::ir::rewrite::loop_at(&m.main().body, &path).clone();
    let trip = k_loop
        .const_trip_count()
        .ok_or_else(|| precondition(NAME, "k-loop trip count must be constant"))?;
    if trip < 2 {
        return finish_pass(
            NAME,
            m,
            m.clone(),
            vec![format!("trip count {trip} < 2, nothing to pipeline")],
        );
    }

    // Partition the body: a contiguous run of copy-tagged nests, the rest.
    let copy_idx: Vec<usize> = k_loop
        .body
        .iter()
        .enumerate()
        .filter(|(_, it)| matches!(it, Item::Loop(l) if l.attrs.tag.is_some()))
        .map(|(i, _)| i)
        .collect();
    if copy_idx.is_empty() {
        return Err(precondition(NAME, "k-loop has no staged copy nests"));
    }
    if copy_idx.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(precondition(NAME, "copy nests are not contiguous"));
    }
    let copies: Vec<Item> = copy_idx.iter().map(|i| k_loop.body[*i].clone()).collect();
    let rest: Vec<Item> = k_loop
        .body
        .iter()
        .enumerate()
        .filter(|(i, _)| !copy_idx.contains(i))
        .map(|(_, it)| it.clone())
        .collect();

    let (lb_ops, lb_expr) = k_loop.lower.as_expr_over();
    let (ub_ops, ub_expr) = k_loop.upper.as_expr_over();
    let lb_ops = lb_ops.to_vec();
    let lb_expr = lb_expr.clone();
    let last_expr = ub_expr.clone().add(AffineExpr::cst(-k_loop.step)).simplify();
    let ub_ops = ub_ops.to_vec();

    let mut out = m.clone();

    // Prologue: the copies with the IV pinned to the first iteration.
    let prologue = {
        let func = out.main_mut();
        let mut map = HashMap::new();
        let mut items = clone_items(&copies, &mut || func.fresh_value(), &mut map);
        let mut subst = SubstMap::new();
        subst.insert(k_loop.iv, Subst::Expr { operands: lb_ops.clone(), expr: lb_expr.clone() });
        apply_subst(&mut items, &subst);
        items
    };

    // Epilogue: the compute with the IV pinned to the last iteration and
    // iter_args reading the loop results.
    let (epilogue, final_of): (Vec<Item>, HashMap<ValueId, ValueId>) = {
        let func = out.main_mut();
        let mut body: Vec<Item> = rest.clone();
        let yielded: Vec<ValueId> = match body.last() {
            Some(Item::Op(Op { kind: OpKind::Yield { values }, .. })) => {
                let v = values.clone();
                body.pop();
                v
            }
            _ => Vec::new(),
        };
        let mut map = HashMap::new();
        let mut items = clone_items(&body, &mut || func.fresh_value(), &mut map);
        let mut subst = SubstMap::new();
        subst.insert(
            k_loop.iv,
            Subst::Expr { operands: ub_ops.clone(), expr: last_expr.clone() },
        );
        for (ia, r) in k_loop.iter_args.iter().zip(&k_loop.results) {
            subst.insert(ia.arg, Subst::Value(*r));
        }
        apply_subst(&mut items, &subst);
        // loop result -> value that now holds the final accumulator
        let mut final_of = HashMap::new();
        for (y, r) in yielded.iter().zip(&k_loop.results) {
            let cloned = map.get(y).copied().unwrap_or(*y);
            let cloned = match k_loop.iter_args.iter().position(|ia| ia.arg == cloned) {
                Some(i) => k_loop.results[i],
                None => cloned,
            };
            final_of.insert(*r, cloned);
        }
        (items, final_of)
    };

    // In-loop: compute first, then the copies shifted one iteration ahead.
    {
        let func = out.main_mut();
        let k_mut = loop_at_mut(&mut func.body, &path);
        let mut shifted = copies.clone();
        let mut subst = SubstMap::new();
        subst.insert(
            k_loop.iv,
            Subst::Expr {
                operands: vec![k_loop.iv],
                expr: AffineExpr::dim(0).add(AffineExpr::cst(k_loop.step)),
            },
        );
        apply_subst(&mut shifted, &subst);

        let mut body: Vec<Item> = rest;
        let yield_op = match body.last() {
            Some(Item::Op(Op { kind: OpKind::Yield { .. }, .. })) => body.pop(),
            _ => None,
        };
        body.extend(shifted);
        if let Some(y) = yield_op {
            body.push(y);
        }
        k_mut.body = body;
        k_mut.upper = crate::ir::AffineBound::from_expr(ub_ops.clone(), last_expr.clone());
    }

    // Splice prologue before the loop and epilogue after it; rewire the
    // trailing stores from the loop results to the epilogue's values.
    {
        let func = out.main_mut();
        let parent = crate::ir::rewrite::body_at_mut(
            &mut func.body,
            path.split_last().map(|(_, p)| p).unwrap_or(&[]),
        );
        let k_idx = *path.last().unwrap();
        let mut tail: Vec<Item> = parent.drain(k_idx + 1..).collect();
        for (from, to) in &final_of {
            replace_uses(&mut tail, *from, *to);
        }
        let mut insert_at = k_idx;
        for item in prologue {
            parent.insert(insert_at, item);
            insert_at += 1;
        }
        parent.extend(epilogue);
        parent.extend(tail);
    }

    finish_pass(
        NAME,
        m,
        out,
        vec![format!("peeled first-iteration copies and last-iteration compute; main loop now {} iterations", trip - 1)],
    )
}
