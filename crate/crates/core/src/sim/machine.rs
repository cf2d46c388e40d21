//! Warp-synchronous execution of mapped kernels.
//!
//! Blocks run independently (their order must not matter); warps inside a
//! block run round-robin in segments delimited by barriers, and all warps
//! must arrive at the same barrier or the machine reports a deadlock.
//! Matrix ops execute as single warp-collective steps. Shared accesses feed
//! the bank-conflict counter and the race detector; global load/store
//! traffic feeds the coalesced-transaction counter; unhidden global copy
//! loads feed the stall counter.

use std::collections::HashMap;

use crate::ir::kernel::THREADS_PER_WARP;
use crate::ir::{
    AffineBound, BufferRef, GpuKernel, Item, MemRefType, MemorySpace, Op, OpKind, Subscript,
    ValueId,
};
use crate::num::{mac_step, round_to};

use super::mem::{shared_base_offsets, transaction_cost};
use super::{
    check_bounds, race_check, take_inputs, Buffer, MachineParams, SimError, SimMetrics, Tensors,
};

const LANES: usize = THREADS_PER_WARP as usize;

/// Scheduling knobs for the independence property tests; the default is
/// what `run_gpu` uses.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    /// Rotate the round-robin warp order by this many positions.
    pub warp_rotation: usize,
    /// Execute blocks in reverse order.
    pub reverse_blocks: bool,
    /// Preempt a warp after this many executed items (None: warps run
    /// until a barrier). Results must not depend on this when the run is
    /// race-free.
    pub segment_ops: Option<u64>,
}

pub fn run_gpu(
    k: &GpuKernel,
    inputs: &Tensors,
    params: &MachineParams,
) -> Result<(Tensors, SimMetrics), SimError> {
    run_gpu_with(k, inputs, params, SimOptions::default())
}

pub fn run_gpu_with(
    k: &GpuKernel,
    inputs: &Tensors,
    params: &MachineParams,
    opts: SimOptions,
) -> Result<(Tensors, SimMetrics), SimError> {
    let mut args = take_inputs(&k.args, inputs)?;
    let mut metrics = SimMetrics::default();

    let mut blocks: Vec<(i64, i64)> = Vec::new();
    for bx in 0..k.launch.grid_x {
        for by in 0..k.launch.grid_y {
            blocks.push((bx, by));
        }
    }
    if opts.reverse_blocks {
        blocks.reverse();
    }
    for (bx, by) in blocks {
        run_block(k, bx, by, &mut args, params, &opts, &mut metrics)?;
    }
    metrics.races.sort();
    metrics.races.dedup();

    let mut out = Tensors::new();
    for (a, buf) in k.args.iter().zip(args) {
        out.insert(a.name.clone(), buf);
    }
    Ok((out, metrics))
}

#[derive(Debug, Clone)]
enum Val {
    Idx(IdxV),
    F(Box<[f64; LANES]>),
    V(Vec<f64>), // lane-major: [lane * width + t]
    Frag(Box<[f64; 256]>),
}

#[derive(Debug, Clone)]
enum IdxV {
    U(i64),
    L(Box<[i64; LANES]>),
}

#[derive(Debug)]
struct Frame {
    /// Path of loop-item indices addressing the current body; empty =
    /// kernel body.
    path: Vec<usize>,
    idx: usize,
    state: Option<LoopState>,
}

#[derive(Debug)]
struct LoopState {
    iv: i64,
    ub: i64,
    next: Vec<Val>,
}

struct WarpExec {
    global_warp: u32,
    env: HashMap<ValueId, Val>,
    stack: Vec<Frame>,
    done: bool,
    wmma_count: u64,
    pending: HashMap<ValueId, u64>,
}

enum Outcome {
    Done,
    Barrier((Vec<usize>, usize)),
    Paused,
}

struct BlockCtx<'a> {
    shared: HashMap<String, Buffer>,
    base: std::collections::BTreeMap<String, i64>,
    trace: Vec<super::SharedAccessEvent>,
    interval: u32,
    args: &'a mut Vec<Buffer>,
    params: &'a MachineParams,
    metrics: &'a mut SimMetrics,
}

fn run_block(
    k: &GpuKernel,
    bx: i64,
    by: i64,
    args: &mut Vec<Buffer>,
    params: &MachineParams,
    opts: &SimOptions,
    metrics: &mut SimMetrics,
) -> Result<(), SimError> {
    let warps_per_block = k.launch.warps_per_block();
    let mut shared = HashMap::new();
    for g in &k.globals {
        shared.insert(g.name.clone(), Buffer::zeroed(g.ty.clone()));
    }
    let mut ctx = BlockCtx {
        shared,
        base: shared_base_offsets(&k.globals),
        trace: Vec::new(),
        interval: 0,
        args,
        params,
        metrics,
    };

    let block_linear = bx * k.launch.grid_y + by;
    let mut warps: Vec<WarpExec> = (0..warps_per_block)
        .map(|w| {
            let wx = w % k.launch.warps_x;
            let wy = w / k.launch.warps_x;
            let mut env = HashMap::new();
            env.insert(k.hw.bx, Val::Idx(IdxV::U(bx)));
            env.insert(k.hw.by, Val::Idx(IdxV::U(by)));
            env.insert(k.hw.wx, Val::Idx(IdxV::U(wx)));
            env.insert(k.hw.wy, Val::Idx(IdxV::U(wy)));
            let mut lanes = [0i64; LANES];
            for (l, v) in lanes.iter_mut().enumerate() {
                *v = w * THREADS_PER_WARP + l as i64;
            }
            env.insert(k.hw.tid, Val::Idx(IdxV::L(Box::new(lanes))));
            WarpExec {
                global_warp: (block_linear * warps_per_block + w) as u32,
                env,
                stack: vec![Frame { path: vec![], idx: 0, state: None }],
                done: false,
                wmma_count: 0,
                pending: HashMap::new(),
            }
        })
        .collect();

    let n = warps.len();
    let mut waiting: Vec<Option<(Vec<usize>, usize)>> = vec![None; n];
    loop {
        let mut progressed = false;
        for i in 0..n {
            let w = (i + opts.warp_rotation) % n;
            if warps[w].done || waiting[w].is_some() {
                continue;
            }
            progressed = true;
            match warps[w].run_until_barrier(k, &mut ctx, opts.segment_ops)? {
                Outcome::Done => warps[w].done = true,
                Outcome::Barrier(site) => waiting[w] = Some(site),
                Outcome::Paused => {}
            }
        }
        let done = warps.iter().filter(|w| w.done).count();
        if done == n {
            break;
        }
        let blocked = waiting.iter().filter(|s| s.is_some()).count();
        if blocked == n - done {
            // Everyone left has arrived at a barrier.
            if done > 0 {
                return Err(SimError::Deadlock(format!(
                    "{blocked} warps wait at a barrier while {done} already finished"
                )));
            }
            let sites: Vec<_> = waiting.iter().flatten().collect();
            if sites.windows(2).any(|w| w[0] != w[1]) {
                return Err(SimError::Deadlock("warps wait at different barriers".into()));
            }
            waiting.iter_mut().for_each(|s| *s = None);
            ctx.interval += 1;
            ctx.metrics.barriers += 1;
        } else if !progressed {
            return Err(SimError::Deadlock("no warp can make progress".into()));
        }
    }

    ctx.metrics.bank_conflicts += super::count_bank_conflicts(&ctx.trace, params);
    ctx.metrics.races.extend(race_check(&ctx.trace));
    Ok(())
}

fn body_at<'k>(k: &'k GpuKernel, path: &[usize]) -> &'k [Item] {
    let mut items: &[Item] = &k.body;
    for p in path {
        items = match &items[*p] {
            Item::Loop(l) => &l.body,
            Item::Op(_) => unreachable!("frame path must address loops"),
        };
    }
    items
}

fn loop_at<'k>(k: &'k GpuKernel, path: &[usize]) -> &'k crate::ir::Loop {
    let parent = body_at(k, &path[..path.len() - 1]);
    match &parent[*path.last().unwrap()] {
        Item::Loop(l) => l,
        Item::Op(_) => unreachable!(),
    }
}

impl WarpExec {
    fn run_until_barrier(
        &mut self,
        k: &GpuKernel,
        ctx: &mut BlockCtx,
        budget: Option<u64>,
    ) -> Result<Outcome, SimError> {
        let mut executed = 0u64;
        loop {
            if self.stack.is_empty() {
                return Ok(Outcome::Done);
            }
            if let Some(b) = budget {
                if executed >= b {
                    return Ok(Outcome::Paused);
                }
            }
            let (path, idx) = {
                let f = self.stack.last().unwrap();
                (f.path.clone(), f.idx)
            };
            let body = body_at(k, &path);
            if idx >= body.len() {
                executed += 1;
                self.finish_body(k)?;
                continue;
            }
            self.stack.last_mut().unwrap().idx += 1;
            executed += 1;
            match &body[idx] {
                Item::Loop(l) => {
                    let lb = self.eval_bound(&l.lower)?;
                    let ub = self.eval_bound(&l.upper)?;
                    let inits: Vec<Val> = l
                        .iter_args
                        .iter()
                        .map(|ia| self.value(ia.init))
                        .collect::<Result<_, _>>()?;
                    if lb >= ub {
                        for (r, v) in l.results.iter().zip(inits) {
                            self.env.insert(*r, v);
                        }
                        continue;
                    }
                    self.env.insert(l.iv, Val::Idx(IdxV::U(lb)));
                    for (ia, v) in l.iter_args.iter().zip(&inits) {
                        self.env.insert(ia.arg, v.clone());
                    }
                    let mut child = path.clone();
                    child.push(idx);
                    self.stack.push(Frame {
                        path: child,
                        idx: 0,
                        state: Some(LoopState { iv: lb, ub, next: inits }),
                    });
                }
                Item::Op(op) => {
                    if matches!(op.kind, OpKind::Barrier) {
                        return Ok(Outcome::Barrier((path, idx)));
                    }
                    self.exec_op(op, k, ctx)?;
                }
            }
        }
    }

    /// A body ran to its end: advance the iteration or pop the loop frame.
    fn finish_body(&mut self, k: &GpuKernel) -> Result<(), SimError> {
        let frame = self.stack.pop().unwrap();
        let state = match frame.state {
            Some(s) => s,
            None => return Ok(()), // kernel body finished
        };
        let l = loop_at(k, &frame.path);
        let carried = state.next;
        let iv = state.iv + l.step;
        if iv < state.ub {
            self.env.insert(l.iv, Val::Idx(IdxV::U(iv)));
            for (ia, v) in l.iter_args.iter().zip(&carried) {
                self.env.insert(ia.arg, v.clone());
            }
            self.stack.push(Frame {
                path: frame.path,
                idx: 0,
                state: Some(LoopState { iv, ub: state.ub, next: carried }),
            });
        } else {
            for (r, v) in l.results.iter().zip(carried) {
                self.env.insert(*r, v);
            }
        }
        Ok(())
    }

    fn value(&self, v: ValueId) -> Result<Val, SimError> {
        self.env
            .get(&v)
            .cloned()
            .ok_or_else(|| SimError::Runtime(format!("value {} not evaluated", v.0)))
    }

    fn index_val(&self, v: ValueId) -> Result<IdxV, SimError> {
        match self.env.get(&v) {
            Some(Val::Idx(i)) => Ok(i.clone()),
            _ => Err(SimError::Runtime(format!("value {} is not an index", v.0))),
        }
    }

    fn eval_bound(&self, b: &AffineBound) -> Result<i64, SimError> {
        let dims: Result<Vec<i64>, SimError> = b
            .operands
            .iter()
            .map(|v| match self.index_val(*v)? {
                IdxV::U(x) => Ok(x),
                IdxV::L(_) => {
                    Err(SimError::Runtime("loop bound depends on a lane-varying value".into()))
                }
            })
            .collect();
        Ok(b.map.eval_one(&dims?))
    }

    /// Per-lane index vectors for a subscript; collapses to one vector when
    /// every operand is warp-uniform.
    fn eval_subscript(&self, at: &Subscript) -> Result<SubIdx, SimError> {
        let vals: Vec<IdxV> =
            at.operands.iter().map(|v| self.index_val(*v)).collect::<Result<_, _>>()?;
        if vals.iter().all(|v| matches!(v, IdxV::U(_))) {
            let dims: Vec<i64> = vals
                .iter()
                .map(|v| match v {
                    IdxV::U(x) => *x,
                    IdxV::L(_) => unreachable!(),
                })
                .collect();
            return Ok(SubIdx::Uniform(at.map.eval(&dims)));
        }
        let mut lanes = Vec::with_capacity(LANES);
        for lane in 0..LANES {
            let dims: Vec<i64> = vals
                .iter()
                .map(|v| match v {
                    IdxV::U(x) => *x,
                    IdxV::L(l) => l[lane],
                })
                .collect();
            lanes.push(at.map.eval(&dims));
        }
        Ok(SubIdx::PerLane(lanes))
    }

    /// First use of a pending global load with no matrix op since issue
    /// pays the full global latency.
    fn use_operands(&mut self, op: &Op, ctx: &mut BlockCtx) {
        for v in op.float_operands() {
            if let Some(issue) = self.pending.remove(&v) {
                if issue == self.wmma_count {
                    ctx.metrics.stall_cycles += ctx.params.global_latency;
                }
            }
        }
    }

    fn exec_op(&mut self, op: &Op, k: &GpuKernel, ctx: &mut BlockCtx) -> Result<(), SimError> {
        self.use_operands(op, ctx);
        match &op.kind {
            OpKind::ConstF { value, ty } => {
                let v = round_to(*ty, *value);
                self.env.insert(op.result.unwrap(), Val::F(Box::new([v; LANES])));
            }
            OpKind::Load { buf, at } => {
                let idx = self.eval_subscript(at)?;
                let vals = self.mem_read(k, ctx, buf, &idx, 1, "load")?;
                let mut out = [0.0; LANES];
                out.copy_from_slice(&vals[..LANES]);
                if buffer_space(k, buf) == MemorySpace::Global {
                    self.pending.insert(op.result.unwrap(), self.wmma_count);
                }
                self.env.insert(op.result.unwrap(), Val::F(Box::new(out)));
            }
            OpKind::VectorLoad { buf, at, width } => {
                let idx = self.eval_subscript(at)?;
                let vals = self.mem_read(k, ctx, buf, &idx, *width, "vload")?;
                if buffer_space(k, buf) == MemorySpace::Global {
                    self.pending.insert(op.result.unwrap(), self.wmma_count);
                }
                self.env.insert(op.result.unwrap(), Val::V(vals));
            }
            OpKind::Store { value, buf, at } => {
                let idx = self.eval_subscript(at)?;
                let vals = match self.value(*value)? {
                    Val::F(f) => f.to_vec(),
                    _ => return Err(SimError::Runtime("store of a non-scalar".into())),
                };
                self.mem_write(k, ctx, buf, &idx, 1, &vals, "store")?;
            }
            OpKind::VectorStore { value, buf, at, width } => {
                let idx = self.eval_subscript(at)?;
                let vals = match self.value(*value)? {
                    Val::V(v) if v.len() == LANES * width => v,
                    _ => return Err(SimError::Runtime("vstore of a non-vector".into())),
                };
                self.mem_write(k, ctx, buf, &idx, *width, &vals, "vstore")?;
            }
            OpKind::MulF { lhs, rhs, ty } => {
                let a = *self.lanes(*lhs)?;
                let b = *self.lanes(*rhs)?;
                let mut out = [0.0; LANES];
                for l in 0..LANES {
                    out[l] = round_to(*ty, a[l] * b[l]);
                }
                self.env.insert(op.result.unwrap(), Val::F(Box::new(out)));
            }
            OpKind::AddF { lhs, rhs, ty } => {
                let a = *self.lanes(*lhs)?;
                let b = *self.lanes(*rhs)?;
                let mut out = [0.0; LANES];
                for l in 0..LANES {
                    out[l] = round_to(*ty, a[l] + b[l]);
                }
                self.env.insert(op.result.unwrap(), Val::F(Box::new(out)));
            }
            OpKind::ExtF { value } => {
                let a = *self.lanes(*value)?;
                self.env.insert(op.result.unwrap(), Val::F(Box::new(a)));
            }
            OpKind::WmmaLoad { buf, at, .. } => {
                let base = self.uniform_subscript(at)?;
                let (ty, name, space) = buffer_info(k, ctx, buf);
                let mut data = Box::new([0.0f64; 256]);
                {
                    let b = buffer_of(ctx, buf);
                    for r in 0..16i64 {
                        for c in 0..16i64 {
                            let i = [base[0] + r, base[1] + c];
                            check_bounds(&ty, &i, &name, "wmma.load")?;
                            data[(r * 16 + c) as usize] = b.at(&i);
                        }
                    }
                }
                if space == MemorySpace::Shared {
                    self.record_wmma_shared(ctx, &ty, &name, &base, false);
                }
                self.env.insert(op.result.unwrap(), Val::Frag(data));
            }
            OpKind::WmmaCompute { a, b, acc, frag } => {
                let fa = self.frag(*a)?;
                let fb = self.frag(*b)?;
                let facc = self.frag(*acc)?;
                let mut out = Box::new([0.0f64; 256]);
                for i in 0..16 {
                    for j in 0..16 {
                        let mut v = facc[i * 16 + j];
                        for kk in 0..16 {
                            v = mac_step(frag.elem, v, fa[i * 16 + kk], fb[kk * 16 + j]);
                        }
                        out[i * 16 + j] = v;
                    }
                }
                self.wmma_count += 1;
                self.env.insert(op.result.unwrap(), Val::Frag(out));
            }
            OpKind::WmmaStore { value, buf, at, .. } => {
                let base = self.uniform_subscript(at)?;
                let frag = self.frag(*value)?;
                let (ty, name, space) = buffer_info(k, ctx, buf);
                {
                    let b = buffer_of_mut(ctx, buf);
                    for r in 0..16i64 {
                        for c in 0..16i64 {
                            let i = [base[0] + r, base[1] + c];
                            check_bounds(&ty, &i, &name, "wmma.store")?;
                            b.set(&i, frag[(r * 16 + c) as usize]);
                        }
                    }
                }
                if space == MemorySpace::Shared {
                    self.record_wmma_shared(ctx, &ty, &name, &base, true);
                } else {
                    fragment_census(ctx, &ty, &name, &base);
                }
            }
            OpKind::Barrier => unreachable!("barriers are handled by the scheduler"),
            OpKind::Yield { values } => {
                let vals: Vec<Val> =
                    values.iter().map(|v| self.value(*v)).collect::<Result<_, _>>()?;
                let frame = self.stack.last_mut().unwrap();
                match frame.state.as_mut() {
                    Some(state) => state.next = vals,
                    None => return Err(SimError::Runtime("yield outside a loop".into())),
                }
            }
        }
        Ok(())
    }

    fn uniform_subscript(&self, at: &Subscript) -> Result<Vec<i64>, SimError> {
        match self.eval_subscript(at)? {
            SubIdx::Uniform(v) => Ok(v),
            SubIdx::PerLane(_) => {
                Err(SimError::Runtime("matrix-op subscripts must be warp-uniform".into()))
            }
        }
    }

    fn lanes(&self, v: ValueId) -> Result<&[f64; LANES], SimError> {
        match self.env.get(&v) {
            Some(Val::F(f)) => Ok(f),
            _ => Err(SimError::Runtime(format!("value {} is not a warp scalar", v.0))),
        }
    }

    fn frag(&self, v: ValueId) -> Result<Box<[f64; 256]>, SimError> {
        match self.env.get(&v) {
            Some(Val::Frag(f)) => Ok(f.clone()),
            _ => Err(SimError::Runtime(format!("value {} is not a fragment", v.0))),
        }
    }

    /// Warp-wide read of `width` consecutive elements per lane, lane-major.
    fn mem_read(
        &mut self,
        k: &GpuKernel,
        ctx: &mut BlockCtx,
        buf: &BufferRef,
        idx: &SubIdx,
        width: usize,
        what: &'static str,
    ) -> Result<Vec<f64>, SimError> {
        let (ty, name, space) = buffer_info(k, ctx, buf);
        let mut vals = vec![0.0; LANES * width];
        let mut offsets = Vec::with_capacity(LANES * width);
        {
            let b = buffer_of(ctx, buf);
            for lane in 0..LANES {
                let base = idx.lane(lane);
                for t in 0..width {
                    let mut i = base.clone();
                    *i.last_mut().unwrap() += t as i64;
                    check_bounds(&ty, &i, &name, what)?;
                    let off = ty.linearize(&i);
                    vals[lane * width + t] = b.data[off as usize];
                    offsets.push(off);
                }
            }
        }
        self.record_access(ctx, &ty, &name, space, &offsets, width, false);
        Ok(vals)
    }

    fn mem_write(
        &mut self,
        k: &GpuKernel,
        ctx: &mut BlockCtx,
        buf: &BufferRef,
        idx: &SubIdx,
        width: usize,
        vals: &[f64],
        what: &'static str,
    ) -> Result<(), SimError> {
        let (ty, name, space) = buffer_info(k, ctx, buf);
        let mut offsets = Vec::with_capacity(LANES * width);
        {
            let b = buffer_of_mut(ctx, buf);
            for lane in 0..LANES {
                let base = idx.lane(lane);
                for t in 0..width {
                    let mut i = base.clone();
                    *i.last_mut().unwrap() += t as i64;
                    check_bounds(&ty, &i, &name, what)?;
                    let off = ty.linearize(&i);
                    b.data[off as usize] = vals[lane * width + t];
                    offsets.push(off);
                }
            }
        }
        self.record_access(ctx, &ty, &name, space, &offsets, width, true);
        if space == MemorySpace::Global {
            let entry = ctx
                .metrics
                .write_census
                .entry(name.clone())
                .or_insert_with(|| vec![0u32; ty.alloc_elems() as usize]);
            for off in &offsets {
                entry[*off as usize] += 1;
            }
        }
        Ok(())
    }

    fn record_access(
        &mut self,
        ctx: &mut BlockCtx,
        ty: &MemRefType,
        name: &str,
        space: MemorySpace,
        offsets: &[i64],
        width: usize,
        write: bool,
    ) {
        let eb = ty.elem.bytes();
        match space {
            MemorySpace::Global => {
                // Each lane's `width` elements are consecutive.
                let ranges: Vec<(i64, i64)> = offsets
                    .chunks(width)
                    .map(|c| (c[0] * eb, width as i64 * eb))
                    .collect();
                let (cost, segs, minimal) =
                    transaction_cost(&ranges, ctx.params.transaction_bytes);
                ctx.metrics.global_transactions += cost;
                ctx.metrics.global_segments += segs;
                ctx.metrics.global_accesses += 1;
                if segs > minimal {
                    ctx.metrics.coalescing_violations += 1;
                }
            }
            MemorySpace::Shared => {
                let base = ctx.base[name];
                let words: Vec<i64> =
                    offsets.iter().map(|o| (base + o * eb) / ctx.params.bank_width_bytes).collect();
                ctx.trace.push(super::SharedAccessEvent {
                    warp: self.global_warp,
                    interval: ctx.interval,
                    buffer: name.to_string(),
                    write,
                    elems: offsets.to_vec(),
                    words,
                });
            }
            MemorySpace::Fragment => {}
        }
    }

    /// A 16x16 fragment moved to/from shared memory: sixteen 16-element
    /// row reads issued warp-wide, packed four rows per access.
    fn record_wmma_shared(
        &mut self,
        ctx: &mut BlockCtx,
        ty: &MemRefType,
        name: &str,
        base_idx: &[i64],
        write: bool,
    ) {
        let eb = ty.elem.bytes();
        let base = ctx.base[name];
        for group in 0..4i64 {
            let mut words = Vec::new();
            let mut elems = Vec::new();
            for r in 0..4i64 {
                let row = base_idx[0] + group * 4 + r;
                let off = ty.linearize(&[row, base_idx[1]]);
                let b0 = base + off * eb;
                for e in 0..16i64 {
                    elems.push(off + e);
                }
                let mut w = b0 / ctx.params.bank_width_bytes;
                while w * ctx.params.bank_width_bytes < b0 + 16 * eb {
                    words.push(w);
                    w += 1;
                }
            }
            ctx.trace.push(super::SharedAccessEvent {
                warp: self.global_warp,
                interval: ctx.interval,
                buffer: name.to_string(),
                write,
                elems,
                words,
            });
        }
    }
}

#[derive(Debug)]
enum SubIdx {
    Uniform(Vec<i64>),
    PerLane(Vec<Vec<i64>>),
}

impl SubIdx {
    fn lane(&self, lane: usize) -> Vec<i64> {
        match self {
            SubIdx::Uniform(v) => v.clone(),
            SubIdx::PerLane(l) => l[lane].clone(),
        }
    }
}

fn buffer_space(k: &GpuKernel, buf: &BufferRef) -> MemorySpace {
    match buf {
        BufferRef::Arg(i) => k.args[*i].ty.space,
        BufferRef::Global(_) => MemorySpace::Shared,
    }
}

fn buffer_info(k: &GpuKernel, ctx: &BlockCtx, buf: &BufferRef) -> (MemRefType, String, MemorySpace) {
    match buf {
        BufferRef::Arg(i) => (k.args[*i].ty.clone(), k.args[*i].name.clone(), k.args[*i].ty.space),
        BufferRef::Global(n) => (ctx.shared[n].ty.clone(), n.clone(), MemorySpace::Shared),
    }
}

fn buffer_of<'a>(ctx: &'a BlockCtx, buf: &BufferRef) -> &'a Buffer {
    match buf {
        BufferRef::Arg(i) => &ctx.args[*i],
        BufferRef::Global(n) => &ctx.shared[n],
    }
}

fn buffer_of_mut<'a>(ctx: &'a mut BlockCtx, buf: &BufferRef) -> &'a mut Buffer {
    match buf {
        BufferRef::Arg(i) => &mut ctx.args[*i],
        BufferRef::Global(n) => ctx.shared.get_mut(n).unwrap(),
    }
}

/// Element-wise write counts for fragment stores to global buffers.
fn fragment_census(ctx: &mut BlockCtx, ty: &MemRefType, name: &str, base_idx: &[i64]) {
    let entry = ctx
        .metrics
        .write_census
        .entry(name.to_string())
        .or_insert_with(|| vec![0u32; ty.alloc_elems() as usize]);
    for r in 0..16i64 {
        let off = ty.linearize(&[base_idx[0] + r, base_idx[1]]);
        for c in 0..16i64 {
            entry[(off + c) as usize] += 1;
        }
    }
}
