//! Golden IR snapshots of every pipeline stage at the reference
//! configuration (8192^3 problem, 128x128x64 block tile, 64x64 warp tile,
//! padding 8, 128-bit copies), plus the structural properties each stage
//! must exhibit.
//!
//! Regenerate with `UPDATE_GOLDEN=1 cargo test -p tcgen-core --test golden`.

use std::path::PathBuf;

use tcgen_core::gpu::emit_kernel_text;
use tcgen_core::ir::rewrite::{loop_at, loop_chain};
use tcgen_core::ir::{ElemType, Item, OpKind, ProblemConfig};
use tcgen_core::pipeline::{self, PipelineOpts, Stage};
use tcgen_core::transforms::TileConfig;

fn reference_cfg() -> (TileConfig, ProblemConfig) {
    (
        TileConfig::new(128, 128, 64, 64, 64),
        ProblemConfig::new(8192, 8192, 8192, ElemType::F32),
    )
}

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

fn check_golden(name: &str, text: &str) {
    let path = golden_dir().join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&path, text).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing golden file {path:?} ({e}); run with UPDATE_GOLDEN=1"));
    assert_eq!(text, want, "golden mismatch for {name}; regenerate with UPDATE_GOLDEN=1 if intended");
}

#[test]
fn stage_dumps_match_goldens() {
    let (cfg, prob) = reference_cfg();
    let mut index = 0;
    pipeline::run(&cfg, &prob, &PipelineOpts::default(), &mut |stage, ir| {
        index += 1;
        let name = format!("{index:02}_{}.ir", stage.name());
        check_golden(&name, &ir.print());
    })
    .unwrap();
    assert_eq!(index, 15);
}

#[test]
fn kernel_text_matches_golden() {
    let (cfg, prob) = reference_cfg();
    let out = pipeline::run(&cfg, &prob, &PipelineOpts::default(), &mut |_, _| {}).unwrap();
    let k = out.ir.as_gpu().unwrap();
    let text = emit_kernel_text(k);
    assert!(text.contains("__shared__ half a_smem[128][72];"));
    assert!(text.contains("__shared__ half b_smem[64][136];"));
    check_golden("kernel_text.cu", &text);
}

/// Staged-and-padded structure: shared tiles with widened strides and the
/// matrix ops in place.
#[test]
fn padded_buffer_shapes_at_reference_config() {
    let (cfg, prob) = reference_cfg();
    let opts = PipelineOpts { stop: Some(Stage::Pad), ..Default::default() };
    let out = pipeline::run(&cfg, &prob, &opts, &mut |_, _| {}).unwrap();
    let m = out.ir.as_affine().unwrap();
    let a = m.global("a_smem").unwrap();
    let b = m.global("b_smem").unwrap();
    assert_eq!((a.ty.shape.clone(), a.ty.alloc_elems()), (vec![128, 64], 128 * 72));
    assert_eq!((b.ty.shape.clone(), b.ty.alloc_elems()), (vec![64, 128], 64 * 136));
    let text = out.ir.print();
    assert!(text.contains("memref<128x64xf16, shared, (d0, d1) -> (d0 * 72 + d1)>"), "{text}");
    assert!(text.contains("memref<64x128xf16, shared, (d0, d1) -> (d0 * 136 + d1)>"));
}

/// Accumulator loop: hoisted loads, iter_args, yielded computes, trailing
/// stores.
#[test]
fn hoisted_accumulator_loop_shape() {
    let (cfg, prob) = reference_cfg();
    let opts = PipelineOpts { stop: Some(Stage::Hoist), ..Default::default() };
    let out = pipeline::run(&cfg, &prob, &opts, &mut |_, _| {}).unwrap();
    let m = out.ir.as_affine().unwrap();
    let chain = loop_chain(&m.main().body);
    // i0 j0 i1 j1 k0
    assert_eq!(chain.len(), 5);
    let k0 = loop_at(&m.main().body, &chain[4]);
    assert_eq!(k0.iter_args.len(), 16);
    assert_eq!(k0.results.len(), 16);
    assert!(matches!(
        k0.body.last(),
        Some(Item::Op(op)) if matches!(op.kind, OpKind::Yield { .. })
    ));
    // The parent body: 16 hoisted loads, the loop, 16 stores.
    let j1 = loop_at(&m.main().body, &chain[3]);
    let loads = j1
        .body
        .iter()
        .take_while(|it| matches!(it, Item::Op(op) if matches!(op.kind, OpKind::WmmaLoad { .. })))
        .count();
    assert_eq!(loads, 16);
    let stores = j1
        .body
        .iter()
        .rev()
        .take_while(|it| matches!(it, Item::Op(op) if matches!(op.kind, OpKind::WmmaStore { .. })))
        .count();
    assert_eq!(stores, 16);
}

/// Peeled prologue copies and epilogue compute around a 127-iteration main
/// loop.
#[test]
fn pipelined_loop_shape() {
    let (cfg, prob) = reference_cfg();
    let opts = PipelineOpts { stop: Some(Stage::Pipeline), ..Default::default() };
    let out = pipeline::run(&cfg, &prob, &opts, &mut |_, _| {}).unwrap();
    let m = out.ir.as_affine().unwrap();
    let chain = loop_chain(&m.main().body);
    let k0 = loop_at(&m.main().body, &chain[4]);
    assert_eq!(k0.const_trip_count(), Some(127));
    // In-loop copies now trail the compute, fetching one step ahead.
    let n = k0.body.len();
    assert!(matches!(&k0.body[n - 2], Item::Loop(l) if l.attrs.tag.is_some()));
    let j1 = loop_at(&m.main().body, &chain[3]);
    let k_idx = j1
        .body
        .iter()
        .position(|it| matches!(it, Item::Loop(l) if l.attrs.tag.is_none()))
        .unwrap();
    // Two peeled copy nests directly before the loop.
    assert!(matches!(&j1.body[k_idx - 1], Item::Loop(l) if l.attrs.tag.is_some()));
    assert!(matches!(&j1.body[k_idx - 2], Item::Loop(l) if l.attrs.tag.is_some()));
    // Peeled compute (fragment loads) after it.
    assert!(matches!(
        &j1.body[k_idx + 1],
        Item::Op(op) if matches!(op.kind, OpKind::WmmaLoad { .. })
    ));
}

/// Final kernel: barrier, global loads, compute, barrier, shared stores.
#[test]
fn finalized_kernel_body_order() {
    let (cfg, prob) = reference_cfg();
    let out = pipeline::run(&cfg, &prob, &PipelineOpts::default(), &mut |_, _| {}).unwrap();
    let k = out.ir.as_gpu().unwrap();

    fn k_loop(items: &[Item]) -> Option<&tcgen_core::ir::Loop> {
        for item in items {
            if let Item::Loop(l) = item {
                if !l.iter_args.is_empty() {
                    return Some(l);
                }
                if let Some(f) = k_loop(&l.body) {
                    return Some(f);
                }
            }
        }
        None
    }
    let main = k_loop(&k.body).expect("main k-loop");
    let kinds: Vec<&'static str> = main
        .body
        .iter()
        .map(|it| match it {
            Item::Loop(_) => "loop",
            Item::Op(op) => match op.kind {
                OpKind::Barrier => "barrier",
                OpKind::VectorLoad { .. } | OpKind::Load { .. } => "gload",
                OpKind::VectorStore { .. } | OpKind::Store { .. } => "sstore",
                OpKind::WmmaLoad { .. } => "wload",
                OpKind::WmmaCompute { .. } => "compute",
                OpKind::Yield { .. } => "yield",
                _ => "other",
            },
        })
        .collect();
    // barrier, all global loads, fragment loads + computes, barrier,
    // shared stores, yield.
    assert_eq!(kinds[0], "barrier");
    let gloads: Vec<usize> =
        kinds.iter().enumerate().filter(|(_, k)| **k == "gload").map(|(i, _)| i).collect();
    let computes: Vec<usize> =
        kinds.iter().enumerate().filter(|(_, k)| **k == "compute").map(|(i, _)| i).collect();
    let sstores: Vec<usize> =
        kinds.iter().enumerate().filter(|(_, k)| **k == "sstore").map(|(i, _)| i).collect();
    let second_barrier = kinds.iter().rposition(|k| *k == "barrier").unwrap();
    assert!(!gloads.is_empty() && !sstores.is_empty());
    assert!(gloads.last().unwrap() < computes.first().unwrap());
    assert!(computes.last().unwrap() < &second_barrier);
    assert!(&second_barrier < sstores.first().unwrap());
    assert_eq!(*kinds.last().unwrap(), "yield");
}
