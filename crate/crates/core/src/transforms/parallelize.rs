//! Marking loops whose iterations are independent.
//!
//! A loop is parallel when no two of its iterations touch the same global
//! memory element with at least one write, and it carries no iter_args
//! (those are reductions by construction). Shared-memory buffers are
//! block-private staging whose contents are determined by the surrounding
//! global state, so they do not constrain parallelism here; the block
//! k-loop that rewrites them stays sequential through its iter_args.
//!
//! The check is a small linear-interval analysis: each subscript dimension
//! is reduced to `c * iv + fixed + [lo, hi]`, where the interval covers
//! inner-loop freedom and the access footprint, and two iterations conflict
//! only if the difference can be zero for some nonzero iteration delta.

use std::collections::{BTreeMap, HashMap};

use crate::ir::rewrite::for_each_loop_mut;
use crate::ir::{
    AffineExpr, BufferRef, Item, Loop, MemorySpace, Module, OpKind, ValueId,
};

use super::{finish_pass, PassError, PassResult};

pub const NAME: &str = "parallelize";

pub fn parallelize(m: &Module) -> Result<PassResult, PassError> {
    let mut out = m.clone();
    let module_view = m.clone();
    let mut marked = 0usize;
    for_each_loop_mut(&mut out.main_mut().body, &mut |l: &mut Loop| {
        let parallel = is_loop_parallel(&module_view, l);
        if parallel {
            marked += 1;
        }
        l.attrs.parallel = parallel;
    });
    finish_pass(NAME, m, out, vec![format!("{marked} loops marked parallel")])
}

/// Decide parallelism of one loop (by value identity of its IV).
pub fn is_loop_parallel(m: &Module, l: &Loop) -> bool {
    if !l.iter_args.is_empty() {
        return false;
    }
    let mut env: HashMap<ValueId, Option<Lin>> = HashMap::new();
    let mut accesses = Vec::new();
    collect(m, &l.body, l.iv, &mut env, &mut accesses);

    for w in accesses.iter().filter(|a| a.write) {
        for x in accesses.iter().filter(|a| a.buf == w.buf) {
            let disjoint = w
                .dims
                .iter()
                .zip(&x.dims)
                .any(|(wd, xd)| match (wd, xd) {
                    (Some(wd), Some(xd)) => disjoint_dim(wd, xd, l.step),
                    _ => false,
                });
            if !disjoint {
                return false;
            }
        }
    }
    true
}

/// `c * iv + vars + konst + [lo, hi]`
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Lin {
    iv: i64,
    vars: BTreeMap<ValueId, i64>,
    konst: i64,
    lo: i64,
    hi: i64,
}

impl Lin {
    fn var(v: ValueId) -> Self {
        let mut vars = BTreeMap::new();
        vars.insert(v, 1);
        Lin { vars, ..Default::default() }
    }

    fn of_iv() -> Self {
        Lin { iv: 1, ..Default::default() }
    }

    fn add(mut self, other: &Lin) -> Self {
        self.iv += other.iv;
        for (v, c) in &other.vars {
            *self.vars.entry(*v).or_insert(0) += c;
        }
        self.vars.retain(|_, c| *c != 0);
        self.konst += other.konst;
        self.lo += other.lo;
        self.hi += other.hi;
        self
    }

    fn scale(mut self, c: i64) -> Self {
        self.iv *= c;
        for coeff in self.vars.values_mut() {
            *coeff *= c;
        }
        self.vars.retain(|_, k| *k != 0);
        self.konst *= c;
        let (lo, hi) = (self.lo * c, self.hi * c);
        self.lo = lo.min(hi);
        self.hi = lo.max(hi);
        self
    }

    fn widen(mut self, extra: i64) -> Self {
        self.hi += extra;
        self
    }
}

struct Access {
    write: bool,
    buf: BufferRef,
    dims: Vec<Option<Lin>>,
}

fn lin_of(
    expr: &AffineExpr,
    operands: &[ValueId],
    iv: ValueId,
    env: &HashMap<ValueId, Option<Lin>>,
) -> Option<Lin> {
    match expr {
        AffineExpr::Dim(d) => {
            let v = operands[*d];
            if v == iv {
                Some(Lin::of_iv())
            } else if let Some(lin) = env.get(&v) {
                lin.clone()
            } else {
                Some(Lin::var(v))
            }
        }
        AffineExpr::Sym(_) => None,
        AffineExpr::Const(c) => Some(Lin { konst: *c, ..Default::default() }),
        AffineExpr::Add(a, b) => {
            Some(lin_of(a, operands, iv, env)?.add(&lin_of(b, operands, iv, env)?))
        }
        AffineExpr::Mul(a, c) => Some(lin_of(a, operands, iv, env)?.scale(*c)),
        AffineExpr::FloorDiv(..) | AffineExpr::Mod(..) => None,
    }
}

fn collect(
    m: &Module,
    items: &[Item],
    iv: ValueId,
    env: &mut HashMap<ValueId, Option<Lin>>,
    out: &mut Vec<Access>,
) {
    for item in items {
        match item {
            Item::Loop(inner) => {
                let (ops, expr) = inner.lower.as_expr_over();
                let base = lin_of(expr, ops, iv, env);
                let lin = match (base, inner.const_trip_count()) {
                    (Some(b), Some(trip)) if trip > 0 => {
                        Some(b.widen((trip - 1) * inner.step))
                    }
                    _ => None,
                };
                env.insert(inner.iv, lin);
                collect(m, &inner.body, iv, env, out);
                env.remove(&inner.iv);
            }
            Item::Op(op) => {
                let (buf, at) = match (op.buffer(), op.subscript()) {
                    (Some(b), Some(a)) => (b, a),
                    _ => continue,
                };
                let ty = match m.buffer_type(m.main(), buf) {
                    Some(t) => t,
                    None => continue,
                };
                if ty.space != MemorySpace::Global {
                    continue;
                }
                let rank = at.map.results.len();
                let dims: Vec<Option<Lin>> = at
                    .map
                    .results
                    .iter()
                    .enumerate()
                    .map(|(d, e)| {
                        let lin = lin_of(e, &at.operands, iv, env)?;
                        Some(lin.widen(footprint(&op.kind, d, rank)))
                    })
                    .collect();
                out.push(Access { write: op.is_memory_write(), buf: buf.clone(), dims });
            }
        }
    }
}

/// Extent minus one of the access along dimension `d`.
fn footprint(kind: &OpKind, d: usize, rank: usize) -> i64 {
    match kind {
        OpKind::VectorLoad { width, .. } | OpKind::VectorStore { width, .. } => {
            if d + 1 == rank {
                *width as i64 - 1
            } else {
                0
            }
        }
        OpKind::WmmaLoad { .. } | OpKind::WmmaStore { .. } => 15,
        _ => 0,
    }
}

/// Can `w` and `x` never alias across distinct iterations of the loop?
fn disjoint_dim(w: &Lin, x: &Lin, step: i64) -> bool {
    if w.vars != x.vars || w.iv != x.iv {
        return false;
    }
    let fixed = w.konst - x.konst;
    // Conflict iff exists n != 0 with c*step*n + fixed in [x.lo - w.hi, x.hi - w.lo].
    let lo = x.lo - w.hi;
    let hi = x.hi - w.lo;
    let c = w.iv;
    if c == 0 {
        return fixed < lo || fixed > hi;
    }
    let stride = c * step;
    // Integer n in [(lo - fixed)/stride, (hi - fixed)/stride] other than 0?
    let (a, b) = if stride > 0 {
        (div_ceil(lo - fixed, stride), div_floor(hi - fixed, stride))
    } else {
        (div_ceil(hi - fixed, stride), div_floor(lo - fixed, stride))
    };
    if a > b {
        return true;
    }
    a == 0 && b == 0
}

fn div_floor(a: i64, b: i64) -> i64 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) != (b < 0)) {
        q - 1
    } else {
        q
    }
}

fn div_ceil(a: i64, b: i64) -> i64 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) == (b < 0)) {
        q + 1
    } else {
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::rewrite::{for_each_loop, loop_chain};
    use crate::ir::{build_naive_matmul, ElemType, ProblemConfig};

    #[test]
    fn naive_matmul_i_j_parallel_k_sequential() {
        let m = build_naive_matmul(&ProblemConfig::new(32, 32, 32, ElemType::F32));
        let out = parallelize(&m).unwrap().module;
        let chain = loop_chain(&out.main().body);
        let flags: Vec<bool> = chain
            .iter()
            .map(|p| crate::ir::rewrite::loop_at(&out.main().body, p).attrs.parallel)
            .collect();
        assert_eq!(flags, vec![true, true, false]);
    }

    #[test]
    fn idempotent() {
        let m = build_naive_matmul(&ProblemConfig::new(32, 32, 32, ElemType::F32));
        let once = parallelize(&m).unwrap().module;
        let twice = parallelize(&once).unwrap().module;
        assert!(crate::ir::structural_eq(&once, &twice));
    }

    #[test]
    fn full_pipeline_flags_match_expectation() {
        let cfg = crate::transforms::TileConfig::new(128, 128, 64, 64, 64);
        let p = ProblemConfig::new(256, 256, 256, ElemType::F32);
        let m = build_naive_matmul(&p);
        let m = crate::transforms::tile_loop_nest(&m, &cfg).unwrap().module;
        let m = crate::transforms::generate_shared_copies(&m, &cfg).unwrap().module;
        let m = crate::transforms::pad_shared_buffer(&m, &cfg).unwrap().module;
        let m = crate::transforms::raise_to_wmma(&m, &cfg).unwrap().module;
        let m = crate::transforms::permute::permute_outer(&m).unwrap().module;
        let m = crate::transforms::permute::permute_inner(&m).unwrap().module;
        let mut m = m;
        for _ in 0..3 {
            let chain = loop_chain(&m.main().body);
            m = crate::transforms::unroll_full(&m, chain.len() - 1).unwrap().module;
        }
        let m = crate::transforms::cse(&m).unwrap().module;
        let m = crate::transforms::hoist_accumulator(&m).unwrap().module;
        let m = crate::transforms::split_pipeline(&m).unwrap().module;
        let m = crate::transforms::insert_barriers(&m).unwrap().module;
        let m = crate::transforms::vectorize_copies(&m, 128).unwrap().module;
        let out = parallelize(&m).unwrap().module;

        // The four compute loops are parallel, the k-block loop is not,
        // and every copy loop is parallel.
        let chain = loop_chain(&out.main().body);
        let flags: Vec<bool> = chain
            .iter()
            .map(|p| crate::ir::rewrite::loop_at(&out.main().body, p).attrs.parallel)
            .collect();
        assert_eq!(flags, vec![true, true, true, true, false]);
        let mut copy_flags = Vec::new();
        for_each_loop(&out.main().body, &mut |l| {
            if l.attrs.tag.is_some() {
                copy_flags.push(l.attrs.parallel);
            }
        });
        assert!(!copy_flags.is_empty());
        assert!(copy_flags.iter().all(|f| *f));
    }
}
