//! Machine-model validation: oracle comparisons for the interpreter and the
//! warp-synchronous machine, race detection, schedule independence, the
//! stall model, transaction monotonicity and the padding effect.

use tcgen_core::ir::{
    parse_artifact_text, Artifact, ElemType, GpuKernel, Item, MemorySpace, MemRefType, OpKind,
    ProblemConfig,
};
use tcgen_core::num::round_to;
use tcgen_core::pipeline::{self, Ir, PipelineOpts, Stage};
use tcgen_core::sim::{
    run_gpu, run_gpu_with, run_sequential, seeded_inputs, Buffer, MachineParams, SimError,
    SimMetrics, SimOptions, Tensors,
};
use tcgen_core::transforms::TileConfig;

fn f64_reference(inputs: &Tensors, m: i64, n: i64, k: i64) -> Vec<f64> {
    let (a, b, c) = (&inputs["A"], &inputs["B"], &inputs["C"]);
    let mut out = vec![0.0; (m * n) as usize];
    for i in 0..m {
        for j in 0..n {
            let mut acc = c.at(&[i, j]);
            for kk in 0..k {
                acc += a.at(&[i, kk]) * b.at(&[kk, j]);
            }
            out[(i * n + j) as usize] = acc;
        }
    }
    out
}

/// The scalar-semantics oracle: f64 arithmetic with one rounding to the
/// accumulate type per multiply and per add, in program order.
fn rounded_reference(inputs: &Tensors, p: &ProblemConfig) -> Vec<f64> {
    let (a, b, c) = (&inputs["A"], &inputs["B"], &inputs["C"]);
    let mut out: Vec<f64> = (0..p.m * p.n).map(|l| c.data[l as usize]).collect();
    for i in 0..p.m {
        for j in 0..p.n {
            let mut acc = out[(i * p.n + j) as usize];
            for kk in 0..p.k {
                let prod = round_to(p.accum, a.at(&[i, kk]) * b.at(&[kk, j]));
                acc = round_to(p.accum, acc + prod);
            }
            out[(i * p.n + j) as usize] = acc;
        }
    }
    out
}

#[test]
fn sequential_matches_rounded_oracle_bit_for_bit() {
    for accum in [ElemType::F32, ElemType::F16] {
        let p = ProblemConfig::new(64, 64, 64, accum);
        let m = tcgen_core::ir::build_naive_matmul(&p);
        let inputs = seeded_inputs(&m.main().args, 5);
        let got = run_sequential(&m, &inputs).unwrap()["C"].data.clone();
        assert_eq!(got, rounded_reference(&inputs, &p), "{accum:?}");
    }
}

#[test]
fn sequential_is_close_to_plain_f64() {
    let p = ProblemConfig::new(64, 64, 64, ElemType::F32);
    let m = tcgen_core::ir::build_naive_matmul(&p);
    let inputs = seeded_inputs(&m.main().args, 9);
    let got = run_sequential(&m, &inputs).unwrap()["C"].data.clone();
    let want = f64_reference(&inputs, 64, 64, 64);
    let err = got
        .iter()
        .zip(&want)
        .map(|(g, w)| (g - w).abs() / w.abs().max(1.0))
        .fold(0.0, f64::max);
    assert!(err <= 1e-3, "rel err {err}");
}

#[test]
fn wmma_step_matches_direct_rounding_on_random_fragments() {
    // One 16x16x16 matrix op, checked element-wise against f64 compute
    // followed by per-step rounding, over many random fragment triples.
    for accum in [ElemType::F32, ElemType::F16] {
        let text = format!(
            "\
module {{
  func @one(%A: memref<16x16xf16, global>, %B: memref<16x16xf16, global>, %C: memref<16x16x{t}, global>) {{
    %fa = wmma.load %A[0, 0] {{ld = 16, role = a}} : memref<16x16xf16, global> -> frag<a, 16x16x16, f16>
    %fb = wmma.load %B[0, 0] {{ld = 16, role = b}} : memref<16x16xf16, global> -> frag<b, 16x16x16, f16>
    %fc = wmma.load %C[0, 0] {{ld = 16, role = acc}} : memref<16x16x{t}, global> -> frag<acc, 16x16x16, {t}>
    %r = wmma.compute %fa, %fb, %fc : frag<acc, 16x16x16, {t}>
    wmma.store %r, %C[0, 0] {{ld = 16}} : memref<16x16x{t}, global>
  }}
}}
",
            t = accum
        );
        let m = tcgen_core::ir::parse_ir(&text).unwrap();
        for seed in 0..500u64 {
            let inputs = seeded_inputs(&m.main().args, seed);
            let got = run_sequential(&m, &inputs).unwrap()["C"].data.clone();
            let (a, b, c) = (&inputs["A"], &inputs["B"], &inputs["C"]);
            for i in 0..16 {
                for j in 0..16 {
                    let mut acc = c.at(&[i, j]);
                    for kk in 0..16 {
                        acc = round_to(accum, acc + a.at(&[i, kk]) * b.at(&[kk, j]));
                    }
                    assert_eq!(got[(i * 16 + j) as usize], acc, "seed {seed} ({i},{j})");
                }
            }
        }
    }
}

#[test]
fn out_of_bounds_access_is_reported_with_indices() {
    let text = "\
module {
  func @f(%X: memref<4x4xf32, global>) {
    for %i = 0 to 8 step 1 {
      %v = load %X[%i, 0] : memref<4x4xf32, global>
      store %v, %X[%i, 1] : memref<4x4xf32, global>
    }
  }
}
";
    let m = tcgen_core::ir::parse_ir(text).unwrap();
    let mut inputs = Tensors::new();
    inputs.insert(
        "X".into(),
        Buffer::zeroed(MemRefType::row_major(vec![4, 4], ElemType::F32, MemorySpace::Global)),
    );
    let err = run_sequential(&m, &inputs).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("out-of-bounds"), "{msg}");
    assert!(msg.contains("[4, 0]"), "{msg}");
    assert!(msg.contains("X"), "{msg}");
}

// ---------------------------------------------------------------------------
// Mapped-kernel behaviour
// ---------------------------------------------------------------------------

fn build_kernel(cfg: &TileConfig, p: &ProblemConfig, skip: &[Stage]) -> GpuKernel {
    let opts = PipelineOpts { stop: None, skip: skip.iter().copied().collect() };
    let out = pipeline::run(cfg, p, &opts, &mut |_, _| {}).unwrap();
    match out.ir {
        Ir::Gpu(k) => k,
        Ir::Affine(_) => panic!("pipeline did not produce a kernel"),
    }
}

fn strip_barriers(items: &mut Vec<Item>) {
    items.retain(|it| !matches!(it, Item::Op(op) if matches!(op.kind, OpKind::Barrier)));
    for item in items.iter_mut() {
        if let Item::Loop(l) = item {
            strip_barriers(&mut l.body);
        }
    }
}

#[test]
fn mapped_kernel_matches_sequential_interpretation() {
    let cfg = TileConfig::new(64, 64, 32, 32, 32);
    let p = ProblemConfig::new(128, 128, 128, ElemType::F32);
    let pre = pipeline::run(
        &cfg,
        &p,
        &PipelineOpts { stop: Some(Stage::Parallelize), ..Default::default() },
        &mut |_, _| {},
    )
    .unwrap();
    let module = pre.ir.as_affine().unwrap();
    let kernel = build_kernel(&cfg, &p, &[]);
    let inputs = seeded_inputs(&kernel.args, 3);
    let seq = run_sequential(module, &inputs).unwrap()["C"].data.clone();
    let (out, metrics) = run_gpu(&kernel, &inputs, &MachineParams::default()).unwrap();
    assert!(metrics.races.is_empty());
    assert_eq!(out["C"].data, seq, "mapping must preserve the sequential results");
}

#[test]
fn barrier_removal_produces_races_on_two_warps() {
    // tbm/wm = 2, tbn/wn = 1: two warps per block.
    let cfg = TileConfig::new(64, 32, 32, 32, 32);
    let p = ProblemConfig::new(64, 32, 64, ElemType::F32);
    let kernel = build_kernel(&cfg, &p, &[]);
    let inputs = seeded_inputs(&kernel.args, 0);

    let (_, clean) = run_gpu(&kernel, &inputs, &MachineParams::default()).unwrap();
    assert!(clean.races.is_empty());
    assert!(clean.barriers > 0);

    let mut stripped = kernel.clone();
    strip_barriers(&mut stripped.body);
    let (_, dirty) = run_gpu(&stripped, &inputs, &MachineParams::default()).unwrap();
    assert!(!dirty.races.is_empty(), "expected races once barriers are gone");
    assert_eq!(dirty.barriers, 0);
}

#[test]
fn single_warp_kernel_never_races() {
    let cfg = TileConfig::new(64, 64, 32, 64, 64);
    let p = ProblemConfig::new(64, 64, 64, ElemType::F32);
    let kernel = build_kernel(&cfg, &p, &[]);
    assert_eq!(kernel.launch.warps_per_block(), 1);
    let inputs = seeded_inputs(&kernel.args, 0);
    let mut stripped = kernel.clone();
    strip_barriers(&mut stripped.body);
    let (_, metrics) = run_gpu(&stripped, &inputs, &MachineParams::default()).unwrap();
    assert!(metrics.races.is_empty());
}

#[test]
fn block_order_and_warp_schedule_independence() {
    let cfg = TileConfig::new(64, 64, 32, 32, 32);
    let p = ProblemConfig::new(128, 128, 64, ElemType::F32);
    let kernel = build_kernel(&cfg, &p, &[]);
    let inputs = seeded_inputs(&kernel.args, 4);
    let params = MachineParams::default();
    let (base_out, base_metrics) = run_gpu(&kernel, &inputs, &params).unwrap();
    assert!(base_metrics.races.is_empty());
    for opts in [
        SimOptions { warp_rotation: 1, reverse_blocks: false, segment_ops: None },
        SimOptions { warp_rotation: 3, reverse_blocks: false, segment_ops: None },
        SimOptions { warp_rotation: 0, reverse_blocks: true, segment_ops: None },
        SimOptions { warp_rotation: 2, reverse_blocks: true, segment_ops: None },
        SimOptions { warp_rotation: 0, reverse_blocks: false, segment_ops: Some(1) },
        SimOptions { warp_rotation: 0, reverse_blocks: false, segment_ops: Some(7) },
        SimOptions { warp_rotation: 2, reverse_blocks: true, segment_ops: Some(13) },
    ] {
        let (out, metrics) = run_gpu_with(&kernel, &inputs, &params, opts).unwrap();
        assert_eq!(out["C"].data, base_out["C"].data, "{opts:?}");
        assert_eq!(metrics.races, base_metrics.races, "{opts:?}");
        assert_eq!(metrics.bank_conflicts, base_metrics.bank_conflicts, "{opts:?}");
        assert_eq!(metrics.global_transactions, base_metrics.global_transactions, "{opts:?}");
        assert_eq!(metrics.stall_cycles, base_metrics.stall_cycles, "{opts:?}");
        assert_eq!(metrics.barriers, base_metrics.barriers, "{opts:?}");
    }
}

#[test]
fn identical_runs_are_byte_identical() {
    let cfg = TileConfig::new(64, 64, 32, 32, 32);
    let p = ProblemConfig::new(64, 64, 64, ElemType::F16);
    let kernel = build_kernel(&cfg, &p, &[]);
    let inputs = seeded_inputs(&kernel.args, 2);
    let params = MachineParams::default();
    let (o1, m1) = run_gpu(&kernel, &inputs, &params).unwrap();
    let (o2, m2) = run_gpu(&kernel, &inputs, &params).unwrap();
    assert_eq!(o1, o2);
    assert_eq!(m1, m2);
    assert_eq!(m1.report(), m2.report());
}

#[test]
fn every_output_element_written_exactly_once() {
    let cfg = TileConfig::new(64, 64, 32, 32, 32);
    let p = ProblemConfig::new(128, 64, 64, ElemType::F32);
    let kernel = build_kernel(&cfg, &p, &[]);
    let inputs = seeded_inputs(&kernel.args, 0);
    let (_, metrics) = run_gpu(&kernel, &inputs, &MachineParams::default()).unwrap();
    let census = &metrics.write_census["C"];
    assert_eq!(census.len(), (p.m * p.n) as usize);
    assert!(census.iter().all(|c| *c == 1), "every C element is written exactly once");
}

#[test]
fn copy_accesses_stay_coalesced_on_aligned_tiles() {
    let cfg = TileConfig::new(128, 128, 64, 64, 64);
    let p = ProblemConfig::new(256, 256, 256, ElemType::F32);
    let kernel = build_kernel(&cfg, &p, &[]);
    let inputs = seeded_inputs(&kernel.args, 0);
    let (_, metrics) = run_gpu(&kernel, &inputs, &MachineParams::default()).unwrap();
    assert_eq!(metrics.coalescing_violations, 0);
}

#[test]
fn deadlock_detected_on_divergent_barriers() {
    let text = "\
module {
  kernel @dead(%X: memref<4x4xf32, global>) grid(1, 1) warps(2, 1) {
    for %i = 0 to %wx + 1 step 1 {
      barrier
    }
  }
}
";
    let kernel = match parse_artifact_text(text).unwrap() {
        Artifact::Kernel(k) => k,
        Artifact::Module(_) => unreachable!(),
    };
    let mut inputs = Tensors::new();
    inputs.insert(
        "X".into(),
        Buffer::zeroed(MemRefType::row_major(vec![4, 4], ElemType::F32, MemorySpace::Global)),
    );
    let err = run_gpu(&kernel, &inputs, &MachineParams::default()).unwrap_err();
    assert!(matches!(err, SimError::Deadlock(_)), "{err}");
}

// ---------------------------------------------------------------------------
// Effect counters
// ---------------------------------------------------------------------------

fn metrics_for(cfg: &TileConfig, p: &ProblemConfig, skip: &[Stage], seed: u64) -> SimMetrics {
    let kernel = build_kernel(cfg, p, skip);
    let inputs = seeded_inputs(&kernel.args, seed);
    let (_, metrics) = run_gpu(&kernel, &inputs, &MachineParams::default()).unwrap();
    metrics
}

#[test]
fn vector_width_cuts_transactions_monotonically() {
    let p = ProblemConfig::new(128, 128, 128, ElemType::F32);
    let base = TileConfig::new(128, 128, 64, 64, 64);
    let scalar = metrics_for(&base, &p, &[Stage::Vectorize], 0).global_transactions;
    let v32 = metrics_for(&base.with_vector_bits(32), &p, &[], 0).global_transactions;
    let v64 = metrics_for(&base.with_vector_bits(64), &p, &[], 0).global_transactions;
    let v128 = metrics_for(&base.with_vector_bits(128), &p, &[], 0).global_transactions;
    assert!(scalar >= v32 && v32 >= v64 && v64 >= v128, "{scalar} {v32} {v64} {v128}");
    assert!(
        v128 * 4 <= scalar,
        "128-bit copies must cut transactions at least 4x: {v128} vs {scalar}"
    );
}

#[test]
fn padding_strictly_reduces_bank_conflicts() {
    let p = ProblemConfig::new(128, 128, 128, ElemType::F32);
    let padded = TileConfig::new(128, 128, 64, 64, 64).with_padding(8);
    let unpadded = TileConfig::new(128, 128, 64, 64, 64).with_padding(0);
    let with_pad = metrics_for(&padded, &p, &[], 0).bank_conflicts;
    let without = metrics_for(&unpadded, &p, &[], 0).bank_conflicts;
    assert!(without > 0, "the unpadded layout must conflict");
    assert!(with_pad < without, "padding must strictly reduce conflicts: {with_pad} vs {without}");
}

#[test]
fn pipelining_strictly_reduces_stall_cycles() {
    let cfg = TileConfig::new(64, 64, 32, 32, 32);
    let p = ProblemConfig::new(128, 128, 256, ElemType::F32);
    let kernel_piped = build_kernel(&cfg, &p, &[]);
    let kernel_plain = build_kernel(&cfg, &p, &[Stage::Pipeline, Stage::FinalizePipeline]);
    let inputs = seeded_inputs(&kernel_piped.args, 1);
    let params = MachineParams::default();
    let (out_piped, piped) = run_gpu(&kernel_piped, &inputs, &params).unwrap();
    let (out_plain, plain) = run_gpu(&kernel_plain, &inputs, &params).unwrap();
    assert!(
        piped.stall_cycles < plain.stall_cycles,
        "pipelining must hide load latency: {} vs {}",
        piped.stall_cycles,
        plain.stall_cycles
    );
    assert_eq!(out_piped["C"].data, out_plain["C"].data);
    assert!(piped.races.is_empty() && plain.races.is_empty());
}

#[test]
fn finalize_alone_strictly_reduces_stall_cycles() {
    let cfg = TileConfig::new(64, 64, 32, 32, 32);
    let p = ProblemConfig::new(128, 128, 256, ElemType::F32);
    let kernel_full = build_kernel(&cfg, &p, &[]);
    let kernel_nofin = build_kernel(&cfg, &p, &[Stage::FinalizePipeline]);
    let inputs = seeded_inputs(&kernel_full.args, 1);
    let params = MachineParams::default();
    let (of, full) = run_gpu(&kernel_full, &inputs, &params).unwrap();
    let (on, nofin) = run_gpu(&kernel_nofin, &inputs, &params).unwrap();
    assert!(full.stall_cycles < nofin.stall_cycles);
    assert_eq!(of["C"].data, on["C"].data);
}
