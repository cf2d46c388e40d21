use criterion::{black_box, criterion_group, criterion_main, Criterion};

use tcgen_core::ir::{build_naive_matmul, parse_ir, print_module, ElemType, ProblemConfig};
use tcgen_core::pipeline::{run, Ir, PipelineOpts};
use tcgen_core::sim::{run_gpu, seeded_inputs, MachineParams};
use tcgen_core::transforms::TileConfig;

fn bench_lowering(c: &mut Criterion) {
    let cfg = TileConfig::new(128, 128, 64, 64, 64);
    let prob = ProblemConfig::new(8192, 8192, 8192, ElemType::F32);
    c.bench_function("lower_full_pipeline_8192", |b| {
        b.iter(|| {
            let out = run(&cfg, &prob, &PipelineOpts::default(), &mut |_, _| {}).unwrap();
            black_box(out.reports.len())
        })
    });
}

fn bench_parser(c: &mut Criterion) {
    let cfg = TileConfig::new(128, 128, 64, 64, 64);
    let prob = ProblemConfig::new(8192, 8192, 8192, ElemType::F32);
    let out = run(&cfg, &prob, &PipelineOpts::default(), &mut |_, _| {}).unwrap();
    let text = out.ir.print();
    c.bench_function("print_parse_final_kernel", |b| {
        b.iter(|| {
            let parsed = tcgen_core::ir::parse_artifact_text(black_box(&text)).unwrap();
            black_box(parsed)
        })
    });
    let naive = build_naive_matmul(&prob);
    let naive_text = print_module(&naive);
    c.bench_function("parse_naive_module", |b| {
        b.iter(|| black_box(parse_ir(black_box(&naive_text)).unwrap()))
    });
}

fn bench_simulator(c: &mut Criterion) {
    let cfg = TileConfig::new(64, 64, 32, 32, 32);
    let prob = ProblemConfig::new(128, 128, 128, ElemType::F32);
    let out = run(&cfg, &prob, &PipelineOpts::default(), &mut |_, _| {}).unwrap();
    let kernel = match out.ir {
        Ir::Gpu(k) => k,
        Ir::Affine(_) => unreachable!(),
    };
    let inputs = seeded_inputs(&kernel.args, 0);
    let params = MachineParams::default();
    c.bench_function("simulate_kernel_128_cubed", |b| {
        b.iter(|| {
            let (out, metrics) = run_gpu(&kernel, &inputs, &params).unwrap();
            black_box((out["C"].data[0], metrics.global_transactions))
        })
    });
}

criterion_group!(benches, bench_lowering, bench_parser, bench_simulator);
criterion_main!(benches);
