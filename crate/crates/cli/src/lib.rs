//! Driver: builds the naive module, runs the lowering pipeline in order,
//! dumps IR, simulates the kernel, checks against the f64 reference, and
//! sweeps tile configurations.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use anyhow::{anyhow, bail, Context, Result};

use tcgen_core::analysis::{analyze, AnalyzeTarget};
use tcgen_core::gpu::emit_kernel_text;
use tcgen_core::ir::{ElemType, ProblemConfig};
use tcgen_core::pipeline::{self, Ir, PipelineOpts, Stage};
use tcgen_core::sim::{run_gpu, seeded_inputs, MachineParams, SimMetrics, Tensors};
use tcgen_core::transforms::TileConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmitKind {
    Ir,
    KernelText,
    #[default]
    None,
}

/// Everything one pipeline invocation needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub tiles: TileConfig,
    pub pipeline_stop: Option<Stage>,
    pub dump_after: BTreeSet<Stage>,
    pub simulate: bool,
    pub check: bool,
    pub seed: u64,
    pub emit: EmitKind,
    pub machine: MachineParams,
}

impl RunConfig {
    pub fn new(problem: ProblemConfig, tiles: TileConfig) -> Self {
        RunConfig {
            problem,
            tiles,
            pipeline_stop: None,
            dump_after: BTreeSet::new(),
            simulate: false,
            check: false,
            seed: 0,
            emit: EmitKind::None,
            machine: MachineParams::default(),
        }
    }

    /// Relative-error budget of `--check`, by accumulate type.
    pub fn check_tolerance(&self) -> f64 {
        match self.problem.accum {
            ElemType::F32 => 1e-3,
            ElemType::F16 => 5e-2,
        }
    }
}

/// Outcome of a successful run (the process exit is nonzero on any Err).
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub metrics: Option<SimMetrics>,
    pub max_rel_err: Option<f64>,
}

/// Run one configuration, writing dumps/reports/emissions to `out`.
pub fn run_pipeline(rc: &RunConfig, out: &mut String) -> Result<RunSummary> {
    rc.problem.validate().map_err(|e| anyhow!(e))?;

    // Legality gate: divisibility and resource violations reject the
    // configuration before any pass runs.
    let gate = analyze(AnalyzeTarget::ConfigOnly, &rc.tiles, &rc.problem);
    if !gate.is_legal() {
        out.push_str(&gate.report());
        bail!("configuration rejected: {}", gate.violations[0]);
    }

    let opts = PipelineOpts { stop: rc.pipeline_stop, skip: BTreeSet::new() };
    let dump_after = rc.dump_after.clone();
    let mut dumps = String::new();
    let result = pipeline::run(&rc.tiles, &rc.problem, &opts, &mut |stage, ir| {
        if dump_after.contains(&stage) {
            let _ = writeln!(dumps, "// ----- after {} -----", stage.name());
            dumps.push_str(&ir.print());
        }
    })
    .map_err(|e| anyhow!("{e}"))?;
    out.push_str(&dumps);

    match rc.emit {
        EmitKind::Ir => out.push_str(&result.ir.print()),
        EmitKind::KernelText => match &result.ir {
            Ir::Gpu(k) => out.push_str(&emit_kernel_text(k)),
            Ir::Affine(_) => bail!("--emit kernel-text requires the pipeline to reach map-gpu"),
        },
        EmitKind::None => {}
    }

    let mut summary = RunSummary::default();
    if rc.simulate || rc.check {
        let kernel = match &result.ir {
            Ir::Gpu(k) => k,
            Ir::Affine(_) => bail!("--simulate/--check require the full pipeline"),
        };
        let inputs = seeded_inputs(&kernel.args, rc.seed);
        let (outputs, metrics) =
            run_gpu(kernel, &inputs, &rc.machine).map_err(|e| anyhow!("{e}"))?;
        out.push_str(&metrics.report());
        let races = metrics.races.len();
        if rc.check {
            let err = max_rel_err(&inputs, &outputs, &rc.problem);
            let _ = writeln!(out, "max_rel_err={err:e}");
            let pass = err <= rc.check_tolerance();
            let _ = writeln!(out, "check={}", if pass { "pass" } else { "fail" });
            summary.max_rel_err = Some(err);
            if !pass {
                bail!("check failed: max relative error {err:e} over {:e}", rc.check_tolerance());
            }
        }
        summary.metrics = Some(metrics);
        if races > 0 {
            bail!("race detected: {races} conflicting shared accesses");
        }
    }
    Ok(summary)
}

/// Max relative error of the simulated C against a plain f64 reference.
/// Each element is normalized by its own magnitude or by the sqrt(K)
/// reduction scale, whichever is larger, so near-zero sums of long dot
/// products do not blow up the ratio while structural errors still land
/// orders of magnitude above the tolerance.
pub fn max_rel_err(inputs: &Tensors, outputs: &Tensors, p: &ProblemConfig) -> f64 {
    let (a, b, c0) = (&inputs["A"], &inputs["B"], &inputs["C"]);
    let c = &outputs["C"];
    let floor = (p.k as f64).sqrt().max(1.0);
    let mut worst = 0.0f64;
    for i in 0..p.m {
        for j in 0..p.n {
            let mut acc = c0.at(&[i, j]);
            for kk in 0..p.k {
                acc += a.at(&[i, kk]) * b.at(&[kk, j]);
            }
            let rel = (c.at(&[i, j]) - acc).abs() / acc.abs().max(floor);
            worst = worst.max(rel);
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// One row of a sweep: a tile configuration and where it came from.
#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub label: String,
    pub tiles: TileConfig,
}

/// Parse a sweep file: one configuration per line as `key=value` pairs
/// (tbm tbn tbk wm wn pad vec), blank lines and `#` comments ignored.
/// Missing keys inherit the base configuration.
pub fn parse_sweep(text: &str, base: &TileConfig) -> Result<Vec<SweepEntry>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tiles = *base;
        for pair in line.split_whitespace() {
            let (key, value) = pair
                .split_once('=')
                .with_context(|| format!("sweep line {}: expected key=value, got '{pair}'", ln + 1))?;
            let v: i64 = value
                .parse()
                .with_context(|| format!("sweep line {}: bad value '{value}'", ln + 1))?;
            match key {
                "tbm" => tiles.tbm = v,
                "tbn" => tiles.tbn = v,
                "tbk" => tiles.tbk = v,
                "wm" => tiles.wm = v,
                "wn" => tiles.wn = v,
                "pad" => {
                    tiles.padding_a = v;
                    tiles.padding_b = v;
                }
                "vec" => tiles.vector_bits = v,
                other => bail!("sweep line {}: unknown key '{other}'", ln + 1),
            }
        }
        out.push(SweepEntry { label: line.to_string(), tiles });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub enum SweepRow {
    Illegal { label: String, reason: String },
    Ran { label: String, shared_bytes: i64, metrics: SimMetrics, best: bool },
}

/// Run every configuration of a sweep and mark the one minimizing
/// stall cycles plus bank conflicts as best.
pub fn bench_report(rc: &RunConfig, sweep: &[SweepEntry], out: &mut String) -> Result<()> {
    let mut rows: Vec<SweepRow> = Vec::new();
    for entry in sweep {
        let gate = analyze(AnalyzeTarget::ConfigOnly, &entry.tiles, &rc.problem);
        if !gate.is_legal() {
            rows.push(SweepRow::Illegal {
                label: entry.label.clone(),
                reason: gate.violations[0].to_string(),
            });
            continue;
        }
        let mut sub = RunConfig::new(rc.problem, entry.tiles);
        sub.seed = rc.seed;
        sub.machine = rc.machine;
        sub.simulate = true;
        let mut scratch = String::new();
        let metrics = run_pipeline(&sub, &mut scratch)?
            .metrics
            .ok_or_else(|| anyhow!("sweep run produced no metrics"))?;
        rows.push(SweepRow::Ran {
            label: entry.label.clone(),
            shared_bytes: entry.tiles.shared_bytes(),
            metrics,
            best: false,
        });
    }

    // Mark the best legal row (ties keep the earliest).
    let mut best: Option<(usize, u64)> = None;
    for (i, row) in rows.iter().enumerate() {
        if let SweepRow::Ran { metrics, .. } = row {
            let score = metrics.stall_cycles + metrics.bank_conflicts;
            if best.map(|(_, s)| score < s).unwrap_or(true) {
                best = Some((i, score));
            }
        }
    }
    if let Some((i, _)) = best {
        if let SweepRow::Ran { best, .. } = &mut rows[i] {
            *best = true;
        }
    }

    let _ = writeln!(
        out,
        "{:<40} {:>12} {:>14} {:>14} {:>12} {:>7} {:>5}",
        "config", "shared_bytes", "bank_conflicts", "transactions", "stall_cycles", "races", "best"
    );
    for row in &rows {
        match row {
            SweepRow::Illegal { label, reason } => {
                let _ = writeln!(out, "{label:<40} illegal: {reason} (skipped)");
            }
            SweepRow::Ran { label, shared_bytes, metrics, best } => {
                let _ = writeln!(
                    out,
                    "{:<40} {:>12} {:>14} {:>14} {:>12} {:>7} {:>5}",
                    label,
                    shared_bytes,
                    metrics.bank_conflicts,
                    metrics.global_transactions,
                    metrics.stall_cycles,
                    metrics.races.len(),
                    if *best { "yes" } else { "" }
                );
            }
        }
    }
    for (i, row) in rows.iter().enumerate() {
        match row {
            SweepRow::Illegal { reason, .. } => {
                let _ = writeln!(out, "sweep.{i}.illegal={reason}");
            }
            SweepRow::Ran { shared_bytes, metrics, best, .. } => {
                let _ = writeln!(out, "sweep.{i}.shared_bytes={shared_bytes}");
                let _ = writeln!(out, "sweep.{i}.bank_conflicts={}", metrics.bank_conflicts);
                let _ = writeln!(out, "sweep.{i}.global_transactions={}", metrics.global_transactions);
                let _ = writeln!(out, "sweep.{i}.stall_cycles={}", metrics.stall_cycles);
                let _ = writeln!(out, "sweep.{i}.races={}", metrics.races.len());
                let _ = writeln!(out, "sweep.{i}.best={}", best);
            }
        }
    }
    Ok(())
}
