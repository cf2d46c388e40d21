//! Barrier insertion around the shared-memory copy regions.
//!
//! Placement is driven entirely by the copy-loop tags recorded when the
//! copies were generated, not by dependence analysis: every maximal run of
//! copy nests gets a barrier on each side. When the run sits at the tail of
//! a loop body (the pipelined shape), the trailing barrier wraps around:
//! one lands at the top of the body and one after the loop itself, which is
//! exactly the barrier/load/compute/store ordering of the final kernel.
//! The pass is idempotent: barriers already in place are not duplicated.

use crate::ir::{build, Item, MemorySpace, Module, OpKind};

use super::{finish_pass, PassError, PassResult};

pub const NAME: &str = "barriers";

pub fn insert_barriers(m: &Module) -> Result<PassResult, PassError> {
    let mut out = m.clone();
    let mut inserted = 0usize;
    if out.globals.iter().any(|g| g.ty.space == MemorySpace::Shared) {
        let mut body = std::mem::take(&mut out.main_mut().body);
        process(&mut body, false, &mut inserted);
        out.main_mut().body = body;
    }
    finish_pass(NAME, m, out, vec![format!("inserted {inserted} barriers")])
}

fn is_barrier(item: &Item) -> bool {
    matches!(item, Item::Op(op) if matches!(op.kind, OpKind::Barrier))
}

fn is_copy(item: &Item) -> bool {
    matches!(item, Item::Loop(l) if l.attrs.tag.is_some())
}

fn is_yield(item: &Item) -> bool {
    matches!(item, Item::Op(op) if matches!(op.kind, OpKind::Yield { .. }))
}

/// Rewrites one block. Returns true if a trailing copy region wrapped, so
/// the caller must also place a barrier after the enclosing loop.
fn process(items: &mut Vec<Item>, in_loop: bool, inserted: &mut usize) -> bool {
    // Recurse first; note which nested loops need a follow-up barrier.
    let mut follow_up: Vec<usize> = Vec::new();
    for (i, item) in items.iter_mut().enumerate() {
        if let Item::Loop(l) = item {
            if l.attrs.tag.is_none() && process(&mut l.body, true, inserted) {
                follow_up.push(i);
            }
        }
    }
    for i in follow_up.into_iter().rev() {
        let after = i + 1;
        if after >= items.len() || !is_barrier(&items[after]) {
            items.insert(after, build::barrier());
            *inserted += 1;
        }
    }

    // Find maximal copy runs and surround them.
    let mut wrapped = false;
    let mut i = 0;
    while i < items.len() {
        if !is_copy(&items[i]) {
            i += 1;
            continue;
        }
        let start = i;
        let mut end = i;
        while end + 1 < items.len() && is_copy(&items[end + 1]) {
            end += 1;
        }

        // Barrier before the region.
        if start == 0 || !is_barrier(&items[start - 1]) {
            items.insert(start, build::barrier());
            *inserted += 1;
            i = end + 2;
        } else {
            i = end + 1;
        }
        let region_end = i; // index one past the last copy nest

        // Barrier after the region. A region at the tail of a loop body
        // (ignoring the yield) wraps to the top of the body instead.
        let at_tail = in_loop
            && (region_end >= items.len()
                || (region_end + 1 == items.len() && is_yield(&items[region_end])));
        if at_tail {
            if !items.first().map(is_barrier).unwrap_or(false) {
                items.insert(0, build::barrier());
                *inserted += 1;
            }
            wrapped = true;
            break;
        } else if region_end >= items.len() || !is_barrier(&items[region_end]) {
            items.insert(region_end, build::barrier());
            *inserted += 1;
            i = region_end + 1;
        }
    }
    wrapped
}
