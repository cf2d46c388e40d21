//! Command-line front end for the lowering pipeline.
//!
//! ```text
//! tcgen --m 128 --n 128 --k 128 --tbm 64 --tbn 64 --tbk 32 --wm 32 --wn 32 \
//!       --pad 8 --vec 128 --accum f32 --simulate --check
//! ```

use std::collections::BTreeSet;
use std::process::ExitCode;

use clap::Parser;

use tcgen_cli::{bench_report, parse_sweep, run_pipeline, EmitKind, RunConfig};
use tcgen_core::ir::{ElemType, ProblemConfig};
use tcgen_core::pipeline::Stage;
use tcgen_core::sim::MachineParams;
use tcgen_core::transforms::TileConfig;

#[derive(Parser, Debug)]
#[command(
    name = "tcgen",
    about = "Progressive lowering of matmul to a simulated tensor-core GPU kernel",
    disable_help_subcommand = true
)]
struct Args {
    /// Problem rows of A/C.
    #[arg(long = "m", default_value_t = 128)]
    m: i64,
    /// Problem columns of B/C.
    #[arg(long = "n", default_value_t = 128)]
    n: i64,
    /// Problem depth (columns of A, rows of B).
    #[arg(long = "k", default_value_t = 128)]
    k: i64,
    /// Accumulate (and C) element type.
    #[arg(long = "accum", value_parser = parse_accum, default_value = "f32")]
    accum: ElemType,
    /// Thread-block tile.
    #[arg(long = "tbm", default_value_t = 128)]
    tbm: i64,
    #[arg(long = "tbn", default_value_t = 128)]
    tbn: i64,
    #[arg(long = "tbk", default_value_t = 64)]
    tbk: i64,
    /// Warp tile.
    #[arg(long = "wm", default_value_t = 64)]
    wm: i64,
    #[arg(long = "wn", default_value_t = 64)]
    wn: i64,
    /// Shared-buffer leading-dimension padding (f16 elements, multiple of 8).
    #[arg(long = "pad", default_value_t = 8)]
    pad: i64,
    /// Copy vector width in bits.
    #[arg(long = "vec", default_value_t = 128, value_parser = clap::value_parser!(i64))]
    vec: i64,
    /// Stop after this pass and print the IR.
    #[arg(long = "pipeline-stop", value_parser = parse_stage)]
    pipeline_stop: Option<Stage>,
    /// Dump IR after these passes (comma separated).
    #[arg(long = "dump-after", value_delimiter = ',', value_parser = parse_stage)]
    dump_after: Vec<Stage>,
    /// Run the warp-synchronous simulator on seeded inputs.
    #[arg(long = "simulate")]
    simulate: bool,
    /// Compare the simulated output against an f64 reference.
    #[arg(long = "check")]
    check: bool,
    /// Input generator seed.
    #[arg(long = "seed", default_value_t = 0)]
    seed: u64,
    /// What to print when the pipeline finishes.
    #[arg(long = "emit", value_parser = parse_emit)]
    emit: Option<EmitKind>,
    /// Sweep file: one configuration per line as key=value pairs.
    #[arg(long = "sweep")]
    sweep: Option<std::path::PathBuf>,
    /// Abstract cycles of an unhidden global load.
    #[arg(long = "global-latency")]
    global_latency: Option<u64>,
    #[arg(long = "shared-latency")]
    shared_latency: Option<u64>,
    #[arg(long = "wmma-latency")]
    wmma_latency: Option<u64>,
}

fn parse_accum(s: &str) -> Result<ElemType, String> {
    match s {
        "f16" => Ok(ElemType::F16),
        "f32" => Ok(ElemType::F32),
        other => Err(format!("unknown accumulate type '{other}' (expected f16 or f32)")),
    }
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    Stage::from_name(s).ok_or_else(|| {
        let names: Vec<&str> = Stage::ALL.iter().map(|st| st.name()).collect();
        format!("unknown pass '{s}' (expected one of {})", names.join(", "))
    })
}

fn parse_emit(s: &str) -> Result<EmitKind, String> {
    match s {
        "ir" => Ok(EmitKind::Ir),
        "kernel-text" => Ok(EmitKind::KernelText),
        "none" => Ok(EmitKind::None),
        other => Err(format!("unknown emit kind '{other}' (expected ir, kernel-text or none)")),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();

    let problem = ProblemConfig::new(args.m, args.n, args.k, args.accum);
    let tiles = TileConfig::new(args.tbm, args.tbn, args.tbk, args.wm, args.wn)
        .with_padding(args.pad)
        .with_vector_bits(args.vec);

    let mut machine = MachineParams::default();
    if let Some(v) = args.global_latency {
        machine.global_latency = v;
    }
    if let Some(v) = args.shared_latency {
        machine.shared_latency = v;
    }
    if let Some(v) = args.wmma_latency {
        machine.wmma_latency = v;
    }

    // Stopping early prints the IR unless the caller asked for something
    // else explicitly.
    let emit = args.emit.unwrap_or(if args.pipeline_stop.is_some() {
        EmitKind::Ir
    } else {
        EmitKind::None
    });

    let rc = RunConfig {
        problem,
        tiles,
        pipeline_stop: args.pipeline_stop,
        dump_after: args.dump_after.iter().copied().collect::<BTreeSet<_>>(),
        simulate: args.simulate,
        check: args.check,
        seed: args.seed,
        emit,
        machine,
    };

    let mut out = String::new();
    let result = if let Some(path) = &args.sweep {
        std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read sweep file {path:?}: {e}"))
            .and_then(|text| parse_sweep(&text, &rc.tiles))
            .and_then(|entries| bench_report(&rc, &entries, &mut out))
    } else {
        run_pipeline(&rc, &mut out).map(|_| ())
    };

    print!("{out}");
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
