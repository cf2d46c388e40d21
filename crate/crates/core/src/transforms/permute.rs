//! Loop permutation over the main chain.
//!
//! `from`/`to` are chain positions (depth indices along the main loop
//! chain): the loop at `from[i]` moves to position `to[i]`. Non-chain items
//! (copy nests, hoisted ops) stay attached to their loop and move with it.
//!
//! Legality: a permutation is rejected if a moved loop's bounds would
//! reference the IV of a loop that ends up inside it, or if a flipped pair
//! crosses a memory dependence that is neither an idempotent staged copy
//! (tagged copy nest into shared memory) nor a same-address
//! read-modify-write reduction.

use std::collections::HashSet;

use crate::ir::rewrite::{loop_at, loop_chain};
use crate::ir::{BufferRef, Item, Loop, MemorySpace, Module, Subscript, ValueId};

use super::wmma::canon_subscript;
use super::{finish_pass, precondition, rejected, PassError, PassResult};

pub const NAME: &str = "permute";

pub fn permute_loops(m: &Module, from: &[usize], to: &[usize]) -> Result<PassResult, PassError> {
    if from.len() != to.len() {
        return Err(precondition(NAME, "fromOrder and toOrder differ in length"));
    }
    let mut sorted_from = from.to_vec();
    let mut sorted_to = to.to_vec();
    sorted_from.sort_unstable();
    sorted_to.sort_unstable();
    if sorted_from != sorted_to {
        return Err(precondition(NAME, "fromOrder and toOrder must permute the same positions"));
    }
    if sorted_from.windows(2).any(|w| w[0] == w[1]) {
        return Err(precondition(NAME, "duplicate positions"));
    }
    if from == to {
        return finish_pass(NAME, m, m.clone(), vec!["identity permutation".into()]);
    }
    if sorted_from.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(precondition(NAME, "permuted positions must be contiguous"));
    }

    let chain = loop_chain(&m.main().body);
    let lo = sorted_from[0];
    let hi = *sorted_from.last().unwrap();
    if hi >= chain.len() {
        return Err(precondition(
            NAME,
            format!("position {hi} out of range for a {}-deep chain", chain.len()),
        ));
    }

    // slot[s] = original chain position of the loop placed at position s.
    let mut slot: Vec<usize> = (lo..=hi).collect();
    for (f, t) in from.iter().zip(to) {
        slot[*t - lo] = *f;
    }

    check_bound_scoping(m, &chain, lo, hi, &slot)?;
    check_memory_legality(m, &chain, lo, hi, &slot)?;

    // Rebuild the affected range. Each loop keeps its own non-chain body
    // items (they move with it); the content below `hi` stays innermost.
    let body = &m.main().body;
    let innermost_content: Vec<Item> = if hi + 1 < chain.len() {
        let idx = *chain[hi + 1].last().unwrap();
        vec![loop_at(body, &chain[hi]).body[idx].clone()]
    } else {
        loop_at(body, &chain[hi]).body.clone()
    };
    // Shell of each permuted loop: the loop minus its chain child.
    let shells: Vec<(Loop, usize)> = (lo..=hi)
        .map(|pos| {
            let l = loop_at(body, &chain[pos]);
            let mut shell = l.clone();
            if pos + 1 < chain.len() {
                let idx = *chain[pos + 1].last().unwrap();
                shell.body.remove(idx);
                (shell, idx)
            } else {
                shell.body.clear();
                (shell, 0)
            }
        })
        .collect();

    let mut content = innermost_content;
    for s in (0..slot.len()).rev() {
        let (shell, insert_at) = &shells[slot[s] - lo];
        let mut shell = shell.clone();
        let at = (*insert_at).min(shell.body.len());
        for (off, item) in content.into_iter().enumerate() {
            shell.body.insert(at + off, item);
        }
        content = vec![Item::Loop(Box::new(shell))];
    }

    let mut out = m.clone();
    let func = out.main_mut();
    let anchor_path = &chain[lo];
    let parent = crate::ir::rewrite::body_at_mut(
        &mut func.body,
        anchor_path.split_last().map(|(_, p)| p).unwrap_or(&[]),
    );
    let idx = *anchor_path.last().unwrap();
    debug_assert_eq!(content.len(), 1);
    parent[idx] = content.pop().unwrap();

    finish_pass(NAME, m, out, vec![format!("permuted chain positions {from:?} -> {to:?}")])
}

/// Bounds of a loop placed at position `p` may only reference IVs of chain
/// loops above `p` (plus values from outside the band).
fn check_bound_scoping(
    m: &Module,
    chain: &[Vec<usize>],
    lo: usize,
    hi: usize,
    slot: &[usize],
) -> Result<(), PassError> {
    let iv_of: Vec<ValueId> = chain.iter().map(|p| loop_at(&m.main().body, p).iv).collect();
    for (s, orig) in slot.iter().enumerate() {
        let new_pos = lo + s;
        let l = loop_at(&m.main().body, &chain[*orig]);
        for op in l.lower.operands.iter().chain(l.upper.operands.iter()) {
            // Which chain loop defines this operand (if any)?
            if let Some(def_pos) = iv_of.iter().position(|iv| iv == op) {
                let def_new = if (lo..=hi).contains(&def_pos) {
                    lo + slot.iter().position(|o| *o == def_pos).unwrap()
                } else {
                    def_pos
                };
                if def_new >= new_pos {
                    return Err(rejected(
                        NAME,
                        format!(
                            "bound of the loop moving to position {new_pos} depends on the IV of \
                             the loop at position {def_new}; dependence would be reversed"
                        ),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Conservative memory check over the band: flipped loop pairs may only
/// cross staged-copy writes and same-address reductions.
fn check_memory_legality(
    m: &Module,
    chain: &[Vec<usize>],
    lo: usize,
    _hi: usize,
    slot: &[usize],
) -> Result<(), PassError> {
    let flips_exist = slot.iter().enumerate().any(|(s, orig)| lo + s != *orig);
    if !flips_exist {
        return Ok(());
    }
    let band = loop_at(&m.main().body, &chain[lo]);

    // Collect accesses, remembering whether each lives under a copy tag.
    struct Access {
        write: bool,
        buf: BufferRef,
        sub: Subscript,
        tagged: bool,
        shared: bool,
    }
    let mut accesses: Vec<Access> = Vec::new();
    fn walk(items: &[Item], tagged: bool, m: &Module, out: &mut Vec<Access>) {
        for item in items {
            match item {
                Item::Loop(l) => walk(&l.body, tagged || l.attrs.tag.is_some(), m, out),
                Item::Op(op) => {
                    if let (Some(buf), Some(at)) = (op.buffer(), op.subscript()) {
                        let shared = m
                            .buffer_type(m.main(), buf)
                            .map(|t| t.space == MemorySpace::Shared)
                            .unwrap_or(false);
                        out.push(Access {
                            write: op.is_memory_write(),
                            buf: buf.clone(),
                            sub: canon_subscript(at),
                            tagged,
                            shared,
                        });
                    }
                }
            }
        }
    }
    walk(&band.body, band.attrs.tag.is_some(), m, &mut accesses);

    let written: HashSet<BufferRef> =
        accesses.iter().filter(|a| a.write).map(|a| a.buf.clone()).collect();
    for buf in written {
        let ws: Vec<&Access> = accesses.iter().filter(|a| a.write && a.buf == buf).collect();
        if ws.iter().all(|a| a.tagged && a.shared) {
            // Idempotent tile staging: every iteration writes the same data.
            continue;
        }
        // Reduction discipline: every access to the buffer must reuse a
        // write's subscript exactly (same-address read-modify-write).
        let write_subs: Vec<&Subscript> = ws.iter().map(|a| &a.sub).collect();
        for acc in accesses.iter().filter(|a| a.buf == buf) {
            if !write_subs.iter().any(|s| **s == acc.sub) {
                return Err(rejected(
                    NAME,
                    format!(
                        "dependence on {:?} crosses the permuted loops: an access does not \
                         follow the same-address reduction pattern",
                        buf
                    ),
                ));
            }
        }
    }
    Ok(())
}

/// The two fixed permutations of the lowering pipeline.
pub fn permute_outer(m: &Module) -> Result<PassResult, PassError> {
    // (i0 j0 k0 i1 j1) -> (i0 j0 i1 j1 k0): the block k-loop sinks below
    // the warp loops.
    permute_loops(m, &[2, 3, 4], &[4, 2, 3])
}

pub fn permute_inner(m: &Module) -> Result<PassResult, PassError> {
    // (i2 j2 k1) -> (k1 i2 j2): the warp-level matmul becomes an outer
    // product over k.
    permute_loops(m, &[5, 6, 7], &[6, 7, 5])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::rewrite::loop_chain;
    use crate::ir::{build_naive_matmul, structural_eq, ElemType, ProblemConfig};
    use crate::transforms::{
        generate_shared_copies, pad_shared_buffer, raise_to_wmma, tile_loop_nest, TileConfig,
    };

    fn wmma_module() -> (Module, TileConfig) {
        let cfg = TileConfig::new(128, 128, 64, 64, 64);
        let m = build_naive_matmul(&ProblemConfig::new(256, 256, 128, ElemType::F32));
        let m = tile_loop_nest(&m, &cfg).unwrap().module;
        let m = generate_shared_copies(&m, &cfg).unwrap().module;
        let m = pad_shared_buffer(&m, &cfg).unwrap().module;
        (raise_to_wmma(&m, &cfg).unwrap().module, cfg)
    }

    #[test]
    fn outer_permutation_sinks_block_k_below_warp_loops() {
        let (m, cfg) = wmma_module();
        let out = permute_outer(&m).unwrap().module;
        let chain = loop_chain(&out.main().body);
        let steps: Vec<i64> =
            chain.iter().map(|p| crate::ir::rewrite::loop_at(&out.main().body, p).step).collect();
        // i0 j0 i1 j1 k0 i2 j2 k1
        assert_eq!(steps, vec![128, 128, cfg.wm, cfg.wn, cfg.tbk, 16, 16, 16]);
        // The copies moved with the k-block loop.
        let k0 = crate::ir::rewrite::loop_at(&out.main().body, &chain[4]);
        assert!(matches!(&k0.body[0], Item::Loop(l) if l.attrs.tag.is_some()));
    }

    #[test]
    fn inner_permutation_hoists_k_of_the_intrinsic_nest() {
        let (m, _) = wmma_module();
        let m = permute_outer(&m).unwrap().module;
        let out = permute_inner(&m).unwrap().module;
        let chain = loop_chain(&out.main().body);
        let trips: Vec<i64> = chain[5..]
            .iter()
            .map(|p| {
                crate::ir::rewrite::loop_at(&out.main().body, p).const_trip_count().unwrap()
            })
            .collect();
        assert_eq!(trips, vec![4, 4, 4]);
    }

    #[test]
    fn identity_permutation_is_a_no_op() {
        let (m, _) = wmma_module();
        let out = permute_loops(&m, &[2, 3, 4], &[2, 3, 4]).unwrap().module;
        assert!(structural_eq(&m, &out));
    }

    #[test]
    fn rejects_bound_dependence_reversal() {
        // Sinking the block-i loop below the intra-tile loop whose bounds
        // reference its IV reverses a structural dependence.
        let cfg = TileConfig::new(128, 128, 64, 64, 64);
        let m = build_naive_matmul(&ProblemConfig::new(256, 256, 128, ElemType::F32));
        let m = tile_loop_nest(&m, &cfg).unwrap().module;
        let err = permute_loops(&m, &[0, 1, 2, 3], &[3, 0, 1, 2]).unwrap_err();
        assert!(err.to_string().contains("reversed"), "{err}");
    }

    #[test]
    fn rejects_shift_dependences() {
        // A nest where iteration i reads the element written at i-1:
        // interchanging the two loops reverses a true dependence.
        let text = "\
module {
  func @shift(%X: memref<8x8xf32, global>) {
    for %i = 1 to 8 step 1 {
      for %j = 0 to 8 step 1 {
        %v = load %X[%i - 1, %j] : memref<8x8xf32, global>
        store %v, %X[%i, %j] : memref<8x8xf32, global>
      }
    }
  }
}
";
        let m = crate::ir::parse_ir(text).unwrap();
        let err = permute_loops(&m, &[0, 1], &[1, 0]).unwrap_err();
        assert!(err.to_string().contains("dependence"), "{err}");
    }
}
