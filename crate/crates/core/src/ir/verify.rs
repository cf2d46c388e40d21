//! Structural and type verification, plus structural equality modulo value
//! renumbering.

use std::collections::{HashMap, HashSet};
use std::fmt;

use super::kernel::GpuKernel;
use super::ops::*;
use super::types::{ElemType, FragRole, MemRefType, MemorySpace, ValueType};

#[derive(Debug, Clone)]
pub struct Diagnostic {
    pub rule: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct Diagnostics(pub Vec<Diagnostic>);

impl Diagnostics {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn push(&mut self, rule: &'static str, detail: impl Into<String>) {
        self.0.push(Diagnostic { rule, detail: detail.into() });
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.0 {
            writeln!(f, "[{}] {}", d.rule, d.detail)?;
        }
        Ok(())
    }
}

/// Verify every type and structure invariant; returns all diagnostics
/// rather than stopping at the first.
pub fn verify_module(m: &Module) -> Result<(), Diagnostics> {
    let mut diags = Diagnostics::default();
    let mut names = HashSet::new();
    for g in &m.globals {
        if !names.insert(g.name.clone()) {
            diags.push("unique-globals", format!("duplicate global @{}", g.name));
        }
        if g.ty.space != MemorySpace::Shared {
            diags.push("global-space", format!("global @{} must live in shared memory", g.name));
        }
        check_memref(&g.ty, &format!("@{}", g.name), &mut diags);
    }
    for f in &m.funcs {
        for a in &f.args {
            check_memref(&a.ty, &format!("%{}", a.name), &mut diags);
        }
        let mut w = Walker::new(&m.globals, &f.args, &mut diags);
        w.walk_items(&f.body, None);
    }
    if diags.is_empty() {
        Ok(())
    } else {
        Err(diags)
    }
}

pub fn verify_kernel(k: &GpuKernel) -> Result<(), Diagnostics> {
    let mut diags = Diagnostics::default();
    let mut names = HashSet::new();
    for g in &k.globals {
        if !names.insert(g.name.clone()) {
            diags.push("unique-globals", format!("duplicate global @{}", g.name));
        }
        check_memref(&g.ty, &format!("@{}", g.name), &mut diags);
    }
    for a in &k.args {
        check_memref(&a.ty, &format!("%{}", a.name), &mut diags);
    }
    if k.launch.block_threads() > 1024 {
        diags.push(
            "block-threads",
            format!("{} threads per block exceeds 1024", k.launch.block_threads()),
        );
    }
    if k.launch.grid_x <= 0 || k.launch.grid_y <= 0 || k.launch.warps_x <= 0 || k.launch.warps_y <= 0
    {
        diags.push("launch", "grid and warp counts must be positive".to_string());
    }
    let mut w = Walker::new(&k.globals, &k.args, &mut diags);
    for id in k.hw.all() {
        w.define(id, ValueType::Index);
    }
    w.forbid_gpu_attrs = true;
    w.walk_items(&k.body, None);
    if diags.is_empty() {
        Ok(())
    } else {
        Err(diags)
    }
}

fn check_memref(t: &MemRefType, what: &str, diags: &mut Diagnostics) {
    if t.shape.iter().any(|d| *d <= 0) {
        diags.push("memref-shape", format!("{what}: non-positive extent in shape"));
        return;
    }
    if t.layout.num_results() != 1 {
        diags.push("memref-layout", format!("{what}: layout must produce one linear offset"));
        return;
    }
    if t.layout.num_dims != t.rank() {
        diags.push(
            "memref-layout",
            format!("{what}: layout arity {} != rank {}", t.layout.num_dims, t.rank()),
        );
        return;
    }
    if let Err(e) = t.layout.check() {
        diags.push("memref-layout", format!("{what}: {e}"));
        return;
    }
    if t.alloc_elems() < t.logical_elems() {
        diags.push(
            "memref-footprint",
            format!(
                "{what}: allocated footprint {} smaller than logical {}",
                t.alloc_elems(),
                t.logical_elems()
            ),
        );
    }
}

struct Walker<'a> {
    globals: &'a [GlobalBuffer],
    args: &'a [FuncArg],
    diags: &'a mut Diagnostics,
    /// Scope stack: values visible in the current block.
    scopes: Vec<HashMap<ValueId, ValueType>>,
    all_defs: HashSet<ValueId>,
    forbid_gpu_attrs: bool,
}

impl<'a> Walker<'a> {
    fn new(globals: &'a [GlobalBuffer], args: &'a [FuncArg], diags: &'a mut Diagnostics) -> Self {
        Walker {
            globals,
            args,
            diags,
            scopes: vec![HashMap::new()],
            all_defs: HashSet::new(),
            forbid_gpu_attrs: false,
        }
    }

    fn define(&mut self, v: ValueId, ty: ValueType) {
        if !self.all_defs.insert(v) {
            self.diags.push("single-assignment", format!("value {} defined twice", v.0));
        }
        self.scopes.last_mut().unwrap().insert(v, ty);
    }

    fn lookup(&self, v: ValueId) -> Option<ValueType> {
        self.scopes.iter().rev().find_map(|s| s.get(&v)).copied()
    }

    fn use_val(&mut self, v: ValueId, what: &str) -> Option<ValueType> {
        match self.lookup(v) {
            Some(t) => Some(t),
            None => {
                self.diags.push(
                    "dominance",
                    format!("{what}: value {} used before definition (or out of scope)", v.0),
                );
                None
            }
        }
    }

    fn buffer_type(&self, b: &BufferRef) -> Option<MemRefType> {
        match b {
            BufferRef::Arg(i) => self.args.get(*i).map(|a| a.ty.clone()),
            BufferRef::Global(n) => self.globals.iter().find(|g| &g.name == n).map(|g| g.ty.clone()),
        }
    }

    fn walk_items(&mut self, items: &[Item], enclosing: Option<&Loop>) {
        for (pos, item) in items.iter().enumerate() {
            match item {
                Item::Loop(l) => self.walk_loop(l),
                Item::Op(op) => {
                    let last = pos + 1 == items.len();
                    self.walk_op(op, enclosing, last);
                }
            }
        }
        // A loop with iter_args must end in a matching yield.
        if let Some(l) = enclosing {
            if !l.iter_args.is_empty() {
                let ok = matches!(
                    items.last(),
                    Some(Item::Op(Op { kind: OpKind::Yield { values }, .. }))
                        if values.len() == l.iter_args.len()
                );
                if !ok {
                    self.diags.push(
                        "yield/iter_args mismatch",
                        format!(
                            "loop with {} iter_args must end with a yield of the same arity",
                            l.iter_args.len()
                        ),
                    );
                }
            }
        }
    }

    fn walk_loop(&mut self, l: &Loop) {
        if l.step <= 0 {
            self.diags.push("loop-step", format!("step {} must be positive", l.step));
        }
        if self.forbid_gpu_attrs && l.attrs.gpu.is_some() {
            self.diags.push("kernel-mapping", "kernel body retains a gpu-mapped loop".to_string());
        }
        self.check_bound(&l.lower, "lower bound");
        self.check_bound(&l.upper, "upper bound");
        if l.const_trip_count().is_none() {
            self.diags.push(
                "constant-trip-count",
                "loop trip count is not a compile-time constant".to_string(),
            );
        }
        if l.results.len() != l.iter_args.len() {
            self.diags.push(
                "loop-results",
                format!("{} results for {} iter_args", l.results.len(), l.iter_args.len()),
            );
        }
        // inits are read in the enclosing scope
        let mut init_tys = Vec::new();
        for ia in &l.iter_args {
            let t = self.use_val(ia.init, "iter_args init");
            if let Some(t) = t {
                if t != ia.ty {
                    self.diags.push(
                        "iter_args-type",
                        format!("init type {:?} does not match declared {:?}", t, ia.ty),
                    );
                }
            }
            init_tys.push(ia.ty);
        }
        self.scopes.push(HashMap::new());
        self.define(l.iv, ValueType::Index);
        for ia in &l.iter_args {
            self.define(ia.arg, ia.ty);
        }
        self.walk_items(&l.body, Some(l));
        self.scopes.pop();
        for (r, ia) in l.results.iter().zip(&l.iter_args) {
            self.define(*r, ia.ty);
        }
    }

    fn check_bound(&mut self, b: &AffineBound, what: &str) {
        if b.map.num_results() != 1 {
            self.diags.push("bound-map", format!("{what}: bound map must have one result"));
        }
        if b.map.num_dims != b.operands.len() {
            self.diags.push(
                "bound-map",
                format!(
                    "{what}: map arity {} != operand count {}",
                    b.map.num_dims,
                    b.operands.len()
                ),
            );
        }
        if let Err(e) = b.map.check() {
            self.diags.push("bound-map", format!("{what}: {e}"));
        }
        for v in &b.operands {
            if let Some(t) = self.use_val(*v, what) {
                if t != ValueType::Index {
                    self.diags.push("bound-map", format!("{what}: operand {} is not an index", v.0));
                }
            }
        }
    }

    fn check_subscript(&mut self, at: &Subscript, buf: &BufferRef, what: &str) -> Option<MemRefType> {
        let ty = match self.buffer_type(buf) {
            Some(t) => t,
            None => {
                self.diags.push("buffer", format!("{what}: unknown buffer"));
                return None;
            }
        };
        if at.map.num_dims != at.operands.len() {
            self.diags.push(
                "subscript",
                format!("{what}: map arity {} != operand count {}", at.map.num_dims, at.operands.len()),
            );
        }
        if let Err(e) = at.map.check() {
            self.diags.push("subscript", format!("{what}: {e}"));
        }
        if at.map.num_results() != ty.rank() {
            self.diags.push(
                "subscript-arity",
                format!(
                    "{what}: {} indices for rank-{} memref",
                    at.map.num_results(),
                    ty.rank()
                ),
            );
        }
        for v in &at.operands {
            if let Some(t) = self.use_val(*v, what) {
                if t != ValueType::Index {
                    self.diags.push("subscript", format!("{what}: operand {} is not an index", v.0));
                }
            }
        }
        Some(ty)
    }

    fn expect_ty(&mut self, v: ValueId, want: ValueType, what: &str) {
        if let Some(t) = self.use_val(v, what) {
            if t != want {
                self.diags.push("type", format!("{what}: expected {:?}, found {:?}", want, t));
            }
        }
    }

    fn walk_op(&mut self, op: &Op, enclosing: Option<&Loop>, last: bool) {
        match &op.kind {
            OpKind::ConstF { ty, .. } => {
                self.def_result(op, ValueType::Scalar(*ty));
            }
            OpKind::Load { buf, at } => {
                if let Some(t) = self.check_subscript(at, buf, "load") {
                    self.def_result(op, ValueType::Scalar(t.elem));
                }
            }
            OpKind::Store { value, buf, at } => {
                if let Some(t) = self.check_subscript(at, buf, "store") {
                    self.expect_ty(*value, ValueType::Scalar(t.elem), "store value");
                }
            }
            OpKind::VectorLoad { buf, at, width } => {
                if let Some(t) = self.check_subscript(at, buf, "vload") {
                    if *width < 2 {
                        self.diags.push("vector-width", "vector width below 2 elements".to_string());
                    }
                    self.def_result(op, ValueType::Vector(t.elem, *width));
                }
            }
            OpKind::VectorStore { value, buf, at, width } => {
                if let Some(t) = self.check_subscript(at, buf, "vstore") {
                    self.expect_ty(*value, ValueType::Vector(t.elem, *width), "vstore value");
                }
            }
            OpKind::MulF { lhs, rhs, ty } => {
                self.expect_ty(*lhs, ValueType::Scalar(*ty), "mulf lhs");
                self.expect_ty(*rhs, ValueType::Scalar(*ty), "mulf rhs");
                self.def_result(op, ValueType::Scalar(*ty));
            }
            OpKind::AddF { lhs, rhs, ty } => {
                self.expect_ty(*lhs, ValueType::Scalar(*ty), "addf lhs");
                self.expect_ty(*rhs, ValueType::Scalar(*ty), "addf rhs");
                self.def_result(op, ValueType::Scalar(*ty));
            }
            OpKind::ExtF { value } => {
                self.expect_ty(*value, ValueType::Scalar(ElemType::F16), "extf operand");
                self.def_result(op, ValueType::Scalar(ElemType::F32));
            }
            OpKind::WmmaLoad { buf, at, ld, frag } => {
                if (frag.m, frag.n, frag.k) != (16, 16, 16) {
                    self.diags.push("frag-shape", "fragment intrinsic shape must be 16x16x16".to_string());
                }
                match frag.role {
                    FragRole::MatA | FragRole::MatB => {
                        if frag.elem != ElemType::F16 {
                            self.diags.push("frag-elem", "A/B fragments must be f16".to_string());
                        }
                    }
                    FragRole::Accum => {}
                }
                if let Some(t) = self.check_subscript(at, buf, "wmma.load") {
                    if t.rank() != 2 {
                        self.diags.push("wmma-rank", "matrix ops require rank-2 buffers".to_string());
                    }
                    if t.elem != frag.elem {
                        self.diags.push(
                            "frag-elem",
                            "fragment element type does not match buffer".to_string(),
                        );
                    }
                    if t.rank() == 2 && *ld != t.row_stride() {
                        self.diags.push(
                            "leading-dimension",
                            format!("ld = {} but buffer row stride is {}", ld, t.row_stride()),
                        );
                    }
                }
                self.def_result(op, ValueType::Frag(*frag));
            }
            OpKind::WmmaCompute { a, b, acc, frag } => {
                if frag.role != FragRole::Accum {
                    self.diags.push("wmma-roles", "compute result must be an accumulator".to_string());
                }
                match self.use_val(*a, "wmma.compute a") {
                    Some(ValueType::Frag(f)) if f.role == FragRole::MatA => {}
                    Some(_) => self.diags.push("wmma-roles", "first operand must be a MatA fragment".to_string()),
                    None => {}
                }
                match self.use_val(*b, "wmma.compute b") {
                    Some(ValueType::Frag(f)) if f.role == FragRole::MatB => {}
                    Some(_) => self.diags.push("wmma-roles", "second operand must be a MatB fragment".to_string()),
                    None => {}
                }
                match self.use_val(*acc, "wmma.compute acc") {
                    Some(ValueType::Frag(f)) if f.role == FragRole::Accum => {
                        if f.elem != frag.elem {
                            self.diags.push("wmma-roles", "accumulator element type mismatch".to_string());
                        }
                    }
                    Some(_) => self.diags.push("wmma-roles", "third operand must be an Accum fragment".to_string()),
                    None => {}
                }
                self.def_result(op, ValueType::Frag(*frag));
            }
            OpKind::WmmaStore { value, buf, at, ld } => {
                match self.use_val(*value, "wmma.store value") {
                    Some(ValueType::Frag(f)) if f.role == FragRole::Accum => {
                        if let Some(t) = self.buffer_type(buf) {
                            if t.elem != f.elem {
                                self.diags.push(
                                    "frag-elem",
                                    "stored fragment element type does not match buffer".to_string(),
                                );
                            }
                        }
                    }
                    Some(_) => self.diags.push("wmma-roles", "only accumulator fragments can be stored".to_string()),
                    None => {}
                }
                if let Some(t) = self.check_subscript(at, buf, "wmma.store") {
                    if t.rank() != 2 {
                        self.diags.push("wmma-rank", "matrix ops require rank-2 buffers".to_string());
                    }
                    if t.rank() == 2 && *ld != t.row_stride() {
                        self.diags.push(
                            "leading-dimension",
                            format!("ld = {} but buffer row stride is {}", ld, t.row_stride()),
                        );
                    }
                }
            }
            OpKind::Barrier => {}
            OpKind::Yield { values } => {
                match enclosing {
                    None => self.diags.push("yield-placement", "yield outside a loop".to_string()),
                    Some(l) => {
                        if !last {
                            self.diags.push("yield-placement", "yield must be the last op of its loop".to_string());
                        }
                        if values.len() != l.iter_args.len() {
                            self.diags.push(
                                "yield/iter_args mismatch",
                                format!("yield arity {} != iter_args {}", values.len(), l.iter_args.len()),
                            );
                        } else {
                            for (v, ia) in values.iter().zip(&l.iter_args) {
                                self.expect_ty(*v, ia.ty, "yield value");
                            }
                        }
                    }
                }
            }
        }
    }

    fn def_result(&mut self, op: &Op, ty: ValueType) {
        match op.result {
            Some(r) => self.define(r, ty),
            None => self.diags.push("result", "op requires a result value".to_string()),
        }
    }
}

// ---------------------------------------------------------------------------
// Structural equality
// ---------------------------------------------------------------------------

#[derive(Default)]
struct Matcher {
    fwd: HashMap<ValueId, ValueId>,
    rev: HashMap<ValueId, ValueId>,
}

impl Matcher {
    fn pair(&mut self, a: ValueId, b: ValueId) -> bool {
        match (self.fwd.get(&a), self.rev.get(&b)) {
            (None, None) => {
                self.fwd.insert(a, b);
                self.rev.insert(b, a);
                true
            }
            (Some(x), Some(y)) => *x == b && *y == a,
            _ => false,
        }
    }

    fn pairs(&mut self, a: &[ValueId], b: &[ValueId]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| self.pair(*x, *y))
    }
}

/// Tree equality modulo value renumbering: shapes, types, attributes, maps
/// and buffer references must match literally; values must be in bijection.
pub fn structural_eq(a: &Module, b: &Module) -> bool {
    if a.globals != b.globals || a.funcs.len() != b.funcs.len() {
        return false;
    }
    for (fa, fb) in a.funcs.iter().zip(&b.funcs) {
        if fa.name != fb.name || fa.args != fb.args {
            return false;
        }
        let mut m = Matcher::default();
        if !items_eq(&fa.body, &fb.body, &mut m) {
            return false;
        }
    }
    true
}

pub fn structural_eq_kernel(a: &GpuKernel, b: &GpuKernel) -> bool {
    if a.globals != b.globals || a.args != b.args || a.launch != b.launch || a.name != b.name {
        return false;
    }
    let mut m = Matcher::default();
    if !m.pairs(&a.hw.all(), &b.hw.all()) {
        return false;
    }
    items_eq(&a.body, &b.body, &mut m)
}

fn items_eq(a: &[Item], b: &[Item], m: &mut Matcher) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| match (x, y) {
            (Item::Loop(la), Item::Loop(lb)) => loop_eq(la, lb, m),
            (Item::Op(oa), Item::Op(ob)) => op_eq(oa, ob, m),
            _ => false,
        })
}

fn bound_eq(a: &AffineBound, b: &AffineBound, m: &mut Matcher) -> bool {
    a.map == b.map && m.pairs(&a.operands, &b.operands)
}

fn loop_eq(a: &Loop, b: &Loop, m: &mut Matcher) -> bool {
    if a.step != b.step || a.attrs != b.attrs {
        return false;
    }
    if !bound_eq(&a.lower, &b.lower, m) || !bound_eq(&a.upper, &b.upper, m) {
        return false;
    }
    if a.iter_args.len() != b.iter_args.len() {
        return false;
    }
    for (x, y) in a.iter_args.iter().zip(&b.iter_args) {
        if x.ty != y.ty || !m.pair(x.init, y.init) || !m.pair(x.arg, y.arg) {
            return false;
        }
    }
    if !m.pair(a.iv, b.iv) || !m.pairs(&a.results, &b.results) {
        return false;
    }
    items_eq(&a.body, &b.body, m)
}

fn subscript_eq(a: &Subscript, b: &Subscript, m: &mut Matcher) -> bool {
    a.map == b.map && m.pairs(&a.operands, &b.operands)
}

fn op_eq(a: &Op, b: &Op, m: &mut Matcher) -> bool {
    let res_ok = match (a.result, b.result) {
        (None, None) => true,
        (Some(x), Some(y)) => m.pair(x, y),
        _ => false,
    };
    if !res_ok {
        return false;
    }
    use OpKind::*;
    match (&a.kind, &b.kind) {
        (ConstF { value: v1, ty: t1 }, ConstF { value: v2, ty: t2 }) => {
            v1.to_bits() == v2.to_bits() && t1 == t2
        }
        (Load { buf: b1, at: a1 }, Load { buf: b2, at: a2 }) => b1 == b2 && subscript_eq(a1, a2, m),
        (Store { value: v1, buf: b1, at: a1 }, Store { value: v2, buf: b2, at: a2 }) => {
            m.pair(*v1, *v2) && b1 == b2 && subscript_eq(a1, a2, m)
        }
        (
            VectorLoad { buf: b1, at: a1, width: w1 },
            VectorLoad { buf: b2, at: a2, width: w2 },
        ) => b1 == b2 && w1 == w2 && subscript_eq(a1, a2, m),
        (
            VectorStore { value: v1, buf: b1, at: a1, width: w1 },
            VectorStore { value: v2, buf: b2, at: a2, width: w2 },
        ) => m.pair(*v1, *v2) && b1 == b2 && w1 == w2 && subscript_eq(a1, a2, m),
        (MulF { lhs: l1, rhs: r1, ty: t1 }, MulF { lhs: l2, rhs: r2, ty: t2 }) => {
            t1 == t2 && m.pair(*l1, *l2) && m.pair(*r1, *r2)
        }
        (AddF { lhs: l1, rhs: r1, ty: t1 }, AddF { lhs: l2, rhs: r2, ty: t2 }) => {
            t1 == t2 && m.pair(*l1, *l2) && m.pair(*r1, *r2)
        }
        (ExtF { value: v1 }, ExtF { value: v2 }) => m.pair(*v1, *v2),
        (
            WmmaLoad { buf: b1, at: a1, ld: l1, frag: f1 },
            WmmaLoad { buf: b2, at: a2, ld: l2, frag: f2 },
        ) => b1 == b2 && l1 == l2 && f1 == f2 && subscript_eq(a1, a2, m),
        (
            WmmaCompute { a: x1, b: y1, acc: z1, frag: f1 },
            WmmaCompute { a: x2, b: y2, acc: z2, frag: f2 },
        ) => f1 == f2 && m.pair(*x1, *x2) && m.pair(*y1, *y2) && m.pair(*z1, *z2),
        (
            WmmaStore { value: v1, buf: b1, at: a1, ld: l1 },
            WmmaStore { value: v2, buf: b2, at: a2, ld: l2 },
        ) => b1 == b2 && l1 == l2 && m.pair(*v1, *v2) && subscript_eq(a1, a2, m),
        (Barrier, Barrier) => true,
        (Yield { values: v1 }, Yield { values: v2 }) => m.pairs(v1, v2),
        _ => false,
    }
}
