//! Completing the latency hiding inside the kernel.
//!
//! The distributed copy loops inside the block k-loop are fully unrolled,
//! their global loads stay at the top of the body (right after the leading
//! barrier) and their shared stores become the trailing operations after
//! the second barrier, with the values carried in registers in between:
//!
//! ```text
//! for k0 ... {
//!   barrier
//!   <global loads for iteration i+1>
//!   <compute on the staged tile for iteration i>
//!   barrier
//!   <shared stores for iteration i+1>
//!   yield ...
//! }
//! ```

use crate::ir::rewrite::loop_at_mut;
use crate::ir::{GpuKernel, Item, OpKind, ValueId};
use crate::transforms::hoist::find_k_block_items;
use crate::transforms::unroll::expand_loop;
use crate::transforms::{rejected, PassError};

use super::{verify_out, KernelResult};

pub const NAME: &str = "finalize-pipeline";

pub fn finalize_pipeline(k: &GpuKernel) -> Result<KernelResult, PassError> {
    let path = match find_k_block_items(&k.body) {
        Some(p) => p,
        None => {
            return verify_out(
                NAME,
                k.clone(),
                vec!["no in-loop copies; kernel unchanged".into()],
            )
        }
    };
    let mut out = k.clone();
    let mut next = out.next_value;
    {
        let k_loop = loop_at_mut(&mut out.body, &path);
        let copy_idx: Vec<usize> = k_loop
            .body
            .iter()
            .enumerate()
            .filter(|(_, it)| matches!(it, Item::Loop(l) if l.attrs.tag.is_some()))
            .map(|(i, _)| i)
            .collect();
        let first_compute = k_loop
            .body
            .iter()
            .position(|it| matches!(it, Item::Op(op) if matches!(op.kind, OpKind::WmmaCompute { .. })));
        let pipelined = match (copy_idx.first(), first_compute) {
            (Some(c), Some(f)) => *c > f,
            _ => false,
        };
        if !pipelined {
            return verify_out(
                NAME,
                k.clone(),
                vec!["copies are not pipelined ahead of compute; kernel unchanged".into()],
            );
        }

        // Unroll each copy loop in place.
        let start = copy_idx[0];
        let mut fresh = || {
            let v = ValueId(next);
            next += 1;
            v
        };
        for idx in copy_idx.into_iter().rev() {
            let l = match &k_loop.body[idx] {
                Item::Loop(l) => l.as_ref().clone(),
                Item::Op(_) => unreachable!(),
            };
            let trip = l
                .const_trip_count()
                .ok_or_else(|| rejected(NAME, "copy loop trip count is not constant"))?;
            let mut result_map = Vec::new();
            let items = expand_loop(&l, trip, &mut fresh, &mut result_map);
            k_loop.body.splice(idx..=idx, items);
        }

        // Split the flattened section: loads to the top, stores stay.
        let end = k_loop
            .body
            .iter()
            .position(|it| matches!(it, Item::Op(op) if matches!(op.kind, OpKind::Yield { .. })))
            .unwrap_or(k_loop.body.len());
        let section: Vec<Item> = k_loop.body.drain(start..end).collect();
        let (loads, stores): (Vec<Item>, Vec<Item>) = section
            .into_iter()
            .partition(|it| matches!(it, Item::Op(op) if op.is_memory_read()));
        let insert_at = usize::from(matches!(
            k_loop.body.first(),
            Some(Item::Op(op)) if matches!(op.kind, OpKind::Barrier)
        ));
        let n_loads = loads.len();
        k_loop.body.splice(insert_at..insert_at, loads);
        let store_at = start + n_loads;
        k_loop.body.splice(store_at..store_at, stores);
    }
    out.next_value = next;
    verify_out(NAME, out, vec!["copy loads lead the body; shared stores trail the compute".into()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpu::map_to_gpu;
    use crate::ir::{ElemType, ProblemConfig};
    use crate::transforms::testutil::lower_to_parallel;
    use crate::transforms::TileConfig;

    fn mapped(cfg: &TileConfig, p: &ProblemConfig) -> GpuKernel {
        let m = lower_to_parallel(cfg, p);
        map_to_gpu(&m, cfg, p).unwrap().kernel
    }

    #[test]
    fn body_orders_barrier_loads_compute_barrier_stores() {
        let cfg = TileConfig::new(64, 64, 32, 32, 32);
        let p = ProblemConfig::new(128, 128, 128, ElemType::F32);
        let k = finalize_pipeline(&mapped(&cfg, &p)).unwrap().kernel;
        // Locate the k-loop (the loop with iter_args) and record its shape.
        let mut shape = Vec::new();
        fn walk(items: &[Item], out: &mut Vec<String>) {
            for it in items {
                match it {
                    Item::Loop(l) if !l.iter_args.is_empty() => {
                        for b in &l.body {
                            out.push(match b {
                                Item::Loop(_) => "loop".into(),
                                Item::Op(op) => match &op.kind {
                                    OpKind::Barrier => "barrier".into(),
                                    OpKind::VectorLoad { .. } | OpKind::Load { .. } => "load".into(),
                                    OpKind::VectorStore { .. } | OpKind::Store { .. } => {
                                        "store".into()
                                    }
                                    OpKind::WmmaCompute { .. } => "compute".into(),
                                    OpKind::WmmaLoad { .. } => "wload".into(),
                                    OpKind::Yield { .. } => "yield".into(),
                                    _ => "other".into(),
                                },
                            });
                        }
                    }
                    Item::Loop(l) => walk(&l.body, out),
                    _ => {}
                }
            }
        }
        walk(&k.body, &mut shape);
        assert_eq!(shape[0], "barrier");
        let first_load = shape.iter().position(|s| s == "load").unwrap();
        let first_wload = shape.iter().position(|s| s == "wload").unwrap();
        let second_barrier = shape.iter().rposition(|s| s == "barrier").unwrap();
        let first_store = shape.iter().position(|s| s == "store").unwrap();
        assert!(first_load < first_wload, "loads must lead the compute: {shape:?}");
        assert!(second_barrier < first_store, "stores must trail the second barrier");
        assert_eq!(shape.last().unwrap(), "yield");
    }

    #[test]
    fn unpipelined_kernel_unchanged() {
        // K == tbk: the k-loop has one iteration, the split was a no-op and
        // the copies still lead the compute.
        let cfg = TileConfig::new(64, 64, 64, 32, 32);
        let p = ProblemConfig::new(64, 64, 64, ElemType::F32);
        let k = mapped(&cfg, &p);
        let out = finalize_pipeline(&k).unwrap();
        assert!(crate::ir::structural_eq_kernel(&k, &out.kernel));
        assert!(out.notes[0].contains("unchanged"));
    }
}
