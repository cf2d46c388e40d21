//! Full unrolling of constant-trip-count loops.

use std::collections::HashMap;

use crate::ir::rewrite::{apply_subst, clone_items, loop_chain, Subst, SubstMap};
use crate::ir::{AffineExpr, Item, Loop, Module, Op, OpKind, ValueId};

use super::{finish_pass, precondition, rejected, PassError, PassResult};

pub const NAME: &str = "unroll";

/// Fully unroll the chain loop at the given position: the loop is replaced
/// by trip-count many copies of its body with the IV substituted, iter_args
/// chained through the copies, and the loop results wired to the final
/// yielded values.
pub fn unroll_full(m: &Module, chain_position: usize) -> Result<PassResult, PassError> {
    let chain = loop_chain(&m.main().body);
    if chain_position >= chain.len() {
        return Err(precondition(
            NAME,
            format!("chain position {chain_position} out of range ({} loops)", chain.len()),
        ));
    }
    let path = chain[chain_position].clone();

    let mut out = m.clone();
    let func = out.main_mut();

    let target = crate::ir::rewrite::loop_at(&func.body, &path).clone();
    let trip = target
        .const_trip_count()
        .ok_or_else(|| rejected(NAME, "loop trip count is not a compile-time constant"))?;

    let mut result_map: Vec<(ValueId, ValueId)> = Vec::new();
    let expanded = expand_loop(&target, trip, &mut || func_fresh(func), &mut result_map);

    {
        let parent = crate::ir::rewrite::body_at_mut(
            &mut func.body,
            path.split_last().map(|(_, p)| p).unwrap_or(&[]),
        );
        let idx = *path.last().unwrap();
        parent.splice(idx..=idx, expanded);
    }
    for (from, to) in result_map {
        crate::ir::rewrite::replace_uses(&mut func.body, from, to);
    }

    finish_pass(NAME, m, out, vec![format!("unrolled {trip} iterations")])
}

fn func_fresh(f: &mut crate::ir::Func) -> ValueId {
    f.fresh_value()
}

/// Flatten one loop into `trip` body copies. `result_map` receives the
/// (loop result -> final yielded value) rewires for the caller to apply.
pub(crate) fn expand_loop(
    l: &Loop,
    trip: i64,
    fresh: &mut dyn FnMut() -> ValueId,
    result_map: &mut Vec<(ValueId, ValueId)>,
) -> Vec<Item> {
    let mut items = Vec::new();
    // Values carried between iterations: start at the inits.
    let mut carried: Vec<ValueId> = l.iter_args.iter().map(|ia| ia.init).collect();
    let (lb_ops, lb_expr) = l.lower.as_expr_over();

    for n in 0..trip {
        let mut map = HashMap::new();
        let mut body = clone_items(&l.body, fresh, &mut map);
        // Drop the yield, remembering what it carried.
        let yielded: Vec<ValueId> = match body.last() {
            Some(Item::Op(Op { kind: OpKind::Yield { values }, .. })) => {
                let v = values.clone();
                body.pop();
                v
            }
            _ => Vec::new(),
        };
        let mut subst: SubstMap = SubstMap::new();
        subst.insert(
            l.iv,
            Subst::Expr {
                operands: lb_ops.to_vec(),
                expr: lb_expr.clone().add(AffineExpr::cst(n * l.step)).simplify(),
            },
        );
        for (ia, prev) in l.iter_args.iter().zip(&carried) {
            subst.insert(ia.arg, Subst::Value(*prev));
        }
        apply_subst(&mut body, &subst);
        carried = yielded
            .iter()
            .map(|v| {
                let v = map.get(v).copied().unwrap_or(*v);
                // A yielded value may itself be an iter_arg passed through.
                match subst.get(&v) {
                    Some(Subst::Value(w)) => *w,
                    _ => v,
                }
            })
            .collect();
        items.extend(body);
    }
    for (r, fin) in l.results.iter().zip(&carried) {
        result_map.push((*r, *fin));
    }
    items
}
