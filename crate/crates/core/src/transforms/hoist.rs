//! Hoisting the C-operand fragment traffic out of the block k-loop.
//!
//! After unrolling, every k-iteration loads, accumulates and stores each C
//! fragment. This pass forwards each store to the following load, keeps the
//! first load (moved before the loop) and the last store (moved after), and
//! threads the accumulators through the loop as iter_args, so global C is
//! touched exactly once per warp tile when block-tile processing begins and
//! ends.

use std::collections::HashMap;

use crate::ir::rewrite::{for_each_op, loop_at_mut};
use crate::ir::{
    build, BufferRef, FragRole, FragmentType, IterArg, Item, Module, Op, OpKind, Subscript,
    ValueId, ValueType,
};

use super::wmma::canon_subscript;
use super::{finish_pass, precondition, rejected, PassError, PassResult};

pub const NAME: &str = "hoist";

/// Path to the block k-loop: the unique untagged loop whose body directly
/// contains copy-tagged nests.
pub(crate) fn find_k_block(m: &Module) -> Option<Vec<usize>> {
    find_k_block_items(&m.main().body)
}

pub(crate) fn find_k_block_items(body: &[Item]) -> Option<Vec<usize>> {
    fn search(items: &[Item], path: &mut Vec<usize>, hits: &mut Vec<Vec<usize>>) {
        for (i, item) in items.iter().enumerate() {
            if let Item::Loop(l) = item {
                path.push(i);
                if l.attrs.tag.is_none()
                    && l.body.iter().any(|it| matches!(it, Item::Loop(c) if c.attrs.tag.is_some()))
                {
                    hits.push(path.clone());
                }
                search(&l.body, path, hits);
                path.pop();
            }
        }
    }
    let mut hits = Vec::new();
    search(body, &mut Vec::new(), &mut hits);
    // After pipelining, the loop enclosing the k-loop holds the peeled
    // prologue copies and matches too; the k-loop proper is the deepest hit.
    let max = hits.iter().map(|p| p.len()).max()?;
    let mut deepest: Vec<Vec<usize>> = hits.into_iter().filter(|p| p.len() == max).collect();
    if deepest.len() == 1 {
        deepest.pop()
    } else {
        None
    }
}

struct Group {
    sub: Subscript,
    canon: Subscript,
    buf: BufferRef,
    ld: i64,
    frag: FragmentType,
    load_op: Op,
    arg: ValueId,
    current: ValueId,
}

pub fn hoist_accumulator(m: &Module) -> Result<PassResult, PassError> {
    let path = find_k_block(m)
        .ok_or_else(|| precondition(NAME, "no unique block k-loop with staged copies found"))?;

    let mut out = m.clone();

    let (k_loop_snapshot, defined_inside) = {
        let l = crate::ir::rewrite::loop_at(&out.main().body, &path).clone();
        let mut defs = vec![l.iv];
        collect_defs(&l.body, &mut defs);
        (l, defs)
    };
    if !k_loop_snapshot.iter_args.is_empty() {
        return Err(precondition(NAME, "k-loop already carries iter_args"));
    }
    // Accumulator traffic hidden inside nested loops cannot be hoisted.
    for item in &k_loop_snapshot.body {
        if let Item::Loop(l) = item {
            if l.attrs.tag.is_none() {
                let mut bad = false;
                for_each_op(&l.body, &mut |op| {
                    if let OpKind::WmmaLoad { frag, .. } = &op.kind {
                        bad |= frag.role == FragRole::Accum;
                    }
                    bad |= matches!(op.kind, OpKind::WmmaStore { .. });
                });
                if bad {
                    return Err(rejected(NAME, "accumulator access nested under an inner loop"));
                }
            }
        }
    }

    let mut groups: Vec<Group> = Vec::new();
    let mut replace: HashMap<ValueId, ValueId> = HashMap::new();
    let mut value_group: HashMap<ValueId, usize> = HashMap::new();
    let mut new_body: Vec<Item> = Vec::new();

    let fresh = |out: &mut Module| out.main_mut().fresh_value();

    for item in k_loop_snapshot.body.iter() {
        match item {
            Item::Op(op) => {
                let mut op = op.clone();
                op.for_each_use_mut(&mut |v| {
                    if let Some(w) = replace.get(v) {
                        *v = *w;
                    }
                });
                match &op.kind {
                    OpKind::WmmaLoad { buf, at, ld, frag } if frag.role == FragRole::Accum => {
                        if at.operands.iter().any(|v| defined_inside.contains(v)) {
                            return Err(rejected(
                                NAME,
                                "a C access is not invariant with respect to the k-loop",
                            ));
                        }
                        let canon = canon_subscript(at);
                        match groups.iter().position(|g| g.canon == canon && g.buf == *buf) {
                            None => {
                                let arg = fresh(&mut out);
                                let result = op.result.unwrap();
                                replace.insert(result, arg);
                                value_group.insert(arg, groups.len());
                                groups.push(Group {
                                    sub: at.clone(),
                                    canon,
                                    buf: buf.clone(),
                                    ld: *ld,
                                    frag: *frag,
                                    load_op: op.clone(),
                                    arg,
                                    current: arg,
                                });
                            }
                            Some(gi) => {
                                let cur = groups[gi].current;
                                replace.insert(op.result.unwrap(), cur);
                            }
                        }
                    }
                    OpKind::WmmaCompute { acc, .. } => {
                        let result = op.result.unwrap();
                        if let Some(gi) = value_group.get(acc).copied() {
                            groups[gi].current = result;
                            value_group.insert(result, gi);
                        }
                        new_body.push(Item::Op(op));
                    }
                    OpKind::WmmaStore { value, .. } => {
                        if value_group.get(value).is_none() {
                            return Err(rejected(
                                NAME,
                                "a C store does not consume the accumulator chain",
                            ));
                        }
                        // Forwarded: dropped here, recreated after the loop.
                    }
                    OpKind::Yield { .. } => {
                        return Err(precondition(NAME, "unexpected yield in the k-loop"))
                    }
                    _ => new_body.push(Item::Op(op)),
                }
            }
            Item::Loop(_) => new_body.push(item.clone()),
        }
    }
    if groups.is_empty() {
        return Err(precondition(NAME, "no accumulator loads found in the k-loop"));
    }

    new_body.push(build::yield_(groups.iter().map(|g| g.current).collect()));
    let results: Vec<ValueId> = groups.iter().map(|_| fresh(&mut out)).collect();

    {
        let func = out.main_mut();
        let k_loop = loop_at_mut(&mut func.body, &path);
        k_loop.body = new_body;
        k_loop.iter_args = groups
            .iter()
            .map(|g| IterArg {
                arg: g.arg,
                init: g.load_op.result.unwrap(),
                ty: ValueType::Frag(g.frag),
            })
            .collect();
        k_loop.results = results.clone();
    }
    {
        let func = out.main_mut();
        let parent = crate::ir::rewrite::body_at_mut(
            &mut func.body,
            path.split_last().map(|(_, p)| p).unwrap_or(&[]),
        );
        let k_idx = *path.last().unwrap();
        for (off, g) in groups.iter().enumerate() {
            parent.insert(k_idx + off, Item::Op(g.load_op.clone()));
        }
        let after = k_idx + groups.len() + 1;
        for (off, (g, r)) in groups.iter().zip(&results).enumerate() {
            parent.insert(
                after + off,
                build::wmma_store(*r, g.buf.clone(), g.sub.clone(), g.ld),
            );
        }
    }

    finish_pass(
        NAME,
        m,
        out,
        vec![format!("hoisted {} accumulator fragments into iter_args", groups.len())],
    )
}

fn collect_defs(items: &[Item], out: &mut Vec<ValueId>) {
    for item in items {
        match item {
            Item::Op(op) => {
                if let Some(r) = op.result {
                    out.push(r);
                }
            }
            Item::Loop(l) => {
                out.push(l.iv);
                for ia in &l.iter_args {
                    out.push(ia.arg);
                }
                out.extend(l.results.iter().copied());
                collect_defs(&l.body, out);
            }
        }
    }
}
