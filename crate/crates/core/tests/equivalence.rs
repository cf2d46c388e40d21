//! Pass equivalence under the sequential interpreter, plus the brute-force
//! oracles for CSE load counts and parallelism verdicts.

use std::collections::HashSet;

use tcgen_core::ir::rewrite::{for_each_op, loop_at, loop_chain};
use tcgen_core::ir::{ElemType, Module, OpKind, ProblemConfig};
use tcgen_core::pipeline::{self, Ir, PipelineOpts, Stage};
use tcgen_core::sim::{run_sequential, seeded_inputs, Tensors};
use tcgen_core::transforms::{self, TileConfig};

fn interp(m: &Module, inputs: &Tensors) -> Vec<f64> {
    run_sequential(m, inputs).unwrap()["C"].data.clone()
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Interpret the module after every affine stage; order-preserving stages
/// must match bit for bit, the k-reordering ones within tolerance.
fn check_stage_equivalence(accum: ElemType, tol: f64, reorder_ok: &[Stage]) {
    let cfg = TileConfig::new(64, 64, 32, 32, 32);
    let prob = ProblemConfig::new(64, 64, 64, accum);
    let naive = tcgen_core::ir::build_naive_matmul(&prob);
    let inputs = seeded_inputs(&naive.main().args, 11);

    let mut prev = interp(&naive, &inputs);
    let opts = PipelineOpts { stop: Some(Stage::Parallelize), ..Default::default() };
    pipeline::run(&cfg, &prob, &opts, &mut |stage, ir| {
        let m = match ir {
            Ir::Affine(m) => m,
            Ir::Gpu(_) => unreachable!(),
        };
        let cur = interp(m, &inputs);
        if reorder_ok.contains(&stage) {
            let err = max_rel(&cur, &prev);
            assert!(err <= tol, "{}: rel err {err} over {tol}", stage.name());
        } else {
            assert_eq!(cur, prev, "{}: sequential interpretation changed", stage.name());
        }
        prev = cur;
    })
    .unwrap();
}

#[test]
fn stagewise_equivalence_f32_accumulate() {
    // With f32 accumulation even the WMMA raise is bit-exact: the scalar
    // body rounds once per multiply-accumulate, exactly like the matrix op.
    check_stage_equivalence(
        ElemType::F32,
        1e-3,
        &[Stage::PermuteInner, Stage::Unroll],
    );
}

#[test]
fn stagewise_equivalence_f16_accumulate() {
    // f16 accumulation rounds the scalar product before the add, so the
    // matrix raise itself is only tolerance-equivalent.
    check_stage_equivalence(
        ElemType::F16,
        5e-2,
        &[Stage::Wmma, Stage::PermuteInner, Stage::Unroll],
    );
}

#[test]
fn multi_seed_equivalence_through_pipeline_split() {
    // The k-loop split changes program structure the most; check several
    // seeds end-to-end around it.
    let cfg = TileConfig::new(64, 64, 32, 32, 32);
    let prob = ProblemConfig::new(64, 64, 64, ElemType::F32);
    let before = pipeline::run(
        &cfg,
        &prob,
        &PipelineOpts { stop: Some(Stage::Hoist), ..Default::default() },
        &mut |_, _| {},
    )
    .unwrap();
    let after = pipeline::run(
        &cfg,
        &prob,
        &PipelineOpts { stop: Some(Stage::Pipeline), ..Default::default() },
        &mut |_, _| {},
    )
    .unwrap();
    let (mb, ma) = (before.ir.as_affine().unwrap(), after.ir.as_affine().unwrap());
    for seed in 0..10 {
        let inputs = seeded_inputs(&mb.main().args, seed);
        assert_eq!(interp(mb, &inputs), interp(ma, &inputs), "seed {seed}");
    }
}

#[test]
fn shared_staging_preserves_results_over_ten_seeds() {
    let cfg = TileConfig::new(32, 32, 32, 16, 16).with_vector_bits(32);
    let prob = ProblemConfig::new(32, 32, 32, ElemType::F16);
    let tiled = pipeline::run(
        &cfg,
        &prob,
        &PipelineOpts { stop: Some(Stage::Tile), ..Default::default() },
        &mut |_, _| {},
    )
    .unwrap();
    let staged = pipeline::run(
        &cfg,
        &prob,
        &PipelineOpts { stop: Some(Stage::Copies), ..Default::default() },
        &mut |_, _| {},
    )
    .unwrap();
    let (mt, ms) = (tiled.ir.as_affine().unwrap(), staged.ir.as_affine().unwrap());
    for seed in 0..10 {
        let inputs = seeded_inputs(&mt.main().args, seed);
        assert_eq!(interp(mt, &inputs), interp(ms, &inputs), "seed {seed}");
    }
}

#[test]
fn cse_fragment_load_counts_match_brute_force() {
    let cfg = TileConfig::new(128, 128, 64, 64, 64);
    let prob = ProblemConfig::new(128, 128, 128, ElemType::F32);
    let out = pipeline::run(
        &cfg,
        &prob,
        &PipelineOpts { stop: Some(Stage::Cse), ..Default::default() },
        &mut |_, _| {},
    )
    .unwrap();
    let m = out.ir.as_affine().unwrap();

    // Brute force: enumerate the unrolled intrinsic grid and count unique
    // fragment origins per operand.
    let mut unique_a = HashSet::new();
    let mut unique_b = HashSet::new();
    let mut unique_c = HashSet::new();
    for kk in (0..cfg.tbk).step_by(16) {
        for i2 in (0..cfg.wm).step_by(16) {
            for j2 in (0..cfg.wn).step_by(16) {
                unique_a.insert((i2, kk));
                unique_b.insert((kk, j2));
                unique_c.insert((i2, j2));
            }
        }
    }

    let mut a = 0;
    let mut b = 0;
    let mut c = 0;
    for_each_op(&m.main().body, &mut |op| {
        if let OpKind::WmmaLoad { buf, frag, .. } = &op.kind {
            match buf {
                tcgen_core::ir::BufferRef::Global(n) if n == "a_smem" => a += 1,
                tcgen_core::ir::BufferRef::Global(n) if n == "b_smem" => b += 1,
                _ => {
                    assert_eq!(frag.role, tcgen_core::ir::FragRole::Accum);
                    c += 1;
                }
            }
        }
    });
    assert_eq!(a, unique_a.len(), "A-fragment loads after unroll+cse");
    assert_eq!(b, unique_b.len(), "B-fragment loads after unroll+cse");
    assert_eq!(a, 16);
    assert_eq!(b, 16);
    // C loads cannot be deduplicated across the interleaved stores.
    assert_eq!(c, 64, "C loads remain per (i, j, k) point until hoisting");
    let _ = unique_c;
}

#[test]
fn hoisted_loop_shape_carries_one_iter_arg_per_warp_fragment() {
    let cfg = TileConfig::new(128, 128, 64, 64, 64);
    let prob = ProblemConfig::new(128, 128, 128, ElemType::F32);
    let out = pipeline::run(
        &cfg,
        &prob,
        &PipelineOpts { stop: Some(Stage::Hoist), ..Default::default() },
        &mut |_, _| {},
    )
    .unwrap();
    let m = out.ir.as_affine().unwrap();
    let chain = loop_chain(&m.main().body);
    let k0 = loop_at(&m.main().body, chain.last().unwrap());
    assert_eq!(k0.iter_args.len(), ((cfg.wm / 16) * (cfg.wn / 16)) as usize);
}

// ---------------------------------------------------------------------------
// Parallelism oracle: exhaustive iteration-pair conflict scan
// ---------------------------------------------------------------------------

/// Concrete per-iteration footprints of one loop, with all outer values
/// fixed, considering only global-space buffers (shared tiles are
/// block-private staging).
fn oracle_is_parallel(m: &Module, chain_pos: usize) -> bool {
    use tcgen_core::ir::{BufferRef, Item, Loop};

    let chain = loop_chain(&m.main().body);
    let target = loop_at(&m.main().body, &chain[chain_pos]);

    // Fix every outer IV at its lower bound (bounds are constant or depend
    // on outer IVs only).
    let mut env: std::collections::HashMap<tcgen_core::ir::ValueId, i64> =
        std::collections::HashMap::new();
    for p in &chain[..chain_pos] {
        let l = loop_at(&m.main().body, p);
        let dims: Vec<i64> = l.lower.operands.iter().map(|v| env[v]).collect();
        env.insert(l.iv, l.lower.map.eval_one(&dims));
    }

    fn collect(
        m: &Module,
        items: &[Item],
        env: &mut std::collections::HashMap<tcgen_core::ir::ValueId, i64>,
        out: &mut Vec<(BufferRef, Vec<i64>, bool)>,
    ) {
        for item in items {
            match item {
                Item::Loop(l) => {
                    let lb_dims: Vec<i64> = l.lower.operands.iter().map(|v| env[v]).collect();
                    let ub_dims: Vec<i64> = l.upper.operands.iter().map(|v| env[v]).collect();
                    let lb = l.lower.map.eval_one(&lb_dims);
                    let ub = l.upper.map.eval_one(&ub_dims);
                    let mut iv = lb;
                    while iv < ub {
                        env.insert(l.iv, iv);
                        collect(m, &l.body, env, out);
                        iv += l.step;
                    }
                }
                Item::Op(op) => {
                    if let (Some(buf), Some(at)) = (op.buffer(), op.subscript()) {
                        let ty = m.buffer_type(m.main(), buf).unwrap();
                        if ty.space != tcgen_core::ir::MemorySpace::Global {
                            continue;
                        }
                        let dims: Vec<i64> = at.operands.iter().map(|v| env[v]).collect();
                        out.push((buf.clone(), at.map.eval(&dims), op.is_memory_write()));
                    }
                }
            }
        }
    }

    let run_iter = |target: &Loop,
                    iv: i64,
                    env: &std::collections::HashMap<tcgen_core::ir::ValueId, i64>| {
        let mut env = env.clone();
        env.insert(target.iv, iv);
        let mut accesses = Vec::new();
        collect(m, &target.body, &mut env, &mut accesses);
        accesses
    };

    let dims: Vec<i64> = target.lower.operands.iter().map(|v| env[v]).collect();
    let lb = target.lower.map.eval_one(&dims);
    let dims: Vec<i64> = target.upper.operands.iter().map(|v| env[v]).collect();
    let ub = target.upper.map.eval_one(&dims);

    let mut iters = Vec::new();
    let mut iv = lb;
    while iv < ub {
        iters.push(run_iter(target, iv, &env));
        iv += target.step;
    }
    for (x, a) in iters.iter().enumerate() {
        for (y, b) in iters.iter().enumerate() {
            if x == y {
                continue;
            }
            for (buf_a, idx_a, w_a) in a {
                for (buf_b, idx_b, w_b) in b {
                    if buf_a == buf_b && idx_a == idx_b && (*w_a || *w_b) {
                        return false;
                    }
                }
            }
        }
    }
    true
}

#[test]
fn parallelize_agrees_with_exhaustive_scan_on_8x8x8() {
    let prob = ProblemConfig::new(8, 8, 8, ElemType::F32);
    let m = tcgen_core::ir::build_naive_matmul(&prob);
    let marked = transforms::parallelize(&m).unwrap().module;
    let chain = loop_chain(&marked.main().body);
    for (pos, path) in chain.iter().enumerate() {
        let verdict = loop_at(&marked.main().body, path).attrs.parallel;
        let oracle = oracle_is_parallel(&marked, pos);
        assert_eq!(verdict, oracle, "loop at chain position {pos}");
    }
    let flags: Vec<bool> =
        chain.iter().map(|p| loop_at(&marked.main().body, p).attrs.parallel).collect();
    assert_eq!(flags, vec![true, true, false]);
}

#[test]
fn parallelize_agrees_with_scan_on_a_shift_dependence() {
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
    let m = tcgen_core::ir::parse_ir(text).unwrap();
    let marked = transforms::parallelize(&m).unwrap().module;
    let chain = loop_chain(&marked.main().body);
    for (pos, path) in chain.iter().enumerate() {
        let verdict = loop_at(&marked.main().body, path).attrs.parallel;
        assert_eq!(verdict, oracle_is_parallel(&marked, pos), "position {pos}");
    }
    // The i loop carries the shift; the j loop is independent.
    assert!(!loop_at(&marked.main().body, &chain[0]).attrs.parallel);
    assert!(loop_at(&marked.main().body, &chain[1]).attrs.parallel);
}
