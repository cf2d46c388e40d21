//! The IR tree: operations, loops, functions and modules.
//!
//! Values are immutable and single-assignment; loops carry state across
//! iterations only through `iter_args`. Every structure is a plain tree so
//! passes are pure `Module -> Module` functions.

use super::expr::{AffineExpr, AffineMap};
use super::types::{ElemType, FragRole, FragmentType, MemRefType, ValueType};

/// An SSA value reference, unique within a function (or kernel).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(pub u32);

/// Reference to a memory buffer: a function argument or a module-level
/// shared global.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BufferRef {
    Arg(usize),
    Global(String),
}

/// A memory subscript: one affine map applied to index-typed operands,
/// producing `rank` results.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscript {
    pub map: AffineMap,
    pub operands: Vec<ValueId>,
}

impl Subscript {
    pub fn new(map: AffineMap, operands: Vec<ValueId>) -> Self {
        Subscript { map, operands }
    }

    /// Subscript with one expression per result over the given operands,
    /// normalized: operands appear in order of first use (by value
    /// identity, duplicates unified) and unused operands are dropped, the
    /// same form the parser produces, so round-trips are exact.
    pub fn from_exprs(operands: Vec<ValueId>, exprs: Vec<AffineExpr>) -> Self {
        let (new_operands, new_exprs) = normalize_over(&operands, &exprs);
        Subscript { map: AffineMap::new(new_operands.len(), 0, new_exprs), operands: new_operands }
    }
}

/// Renumber dims to first-use order over unique operand values.
pub(crate) fn normalize_over(
    operands: &[ValueId],
    exprs: &[AffineExpr],
) -> (Vec<ValueId>, Vec<AffineExpr>) {
    fn visit(e: &AffineExpr, operands: &[ValueId], order: &mut Vec<ValueId>) {
        match e {
            AffineExpr::Dim(d) => {
                let v = operands[*d];
                if !order.contains(&v) {
                    order.push(v);
                }
            }
            AffineExpr::Sym(_) | AffineExpr::Const(_) => {}
            AffineExpr::Add(a, b) => {
                visit(a, operands, order);
                visit(b, operands, order);
            }
            AffineExpr::Mul(a, _) | AffineExpr::FloorDiv(a, _) | AffineExpr::Mod(a, _) => {
                visit(a, operands, order)
            }
        }
    }
    let mut order: Vec<ValueId> = Vec::new();
    for e in exprs {
        visit(e, operands, &mut order);
    }
    let repl: Vec<AffineExpr> = operands
        .iter()
        .map(|v| match order.iter().position(|o| o == v) {
            Some(i) => AffineExpr::Dim(i),
            None => AffineExpr::Const(0), // unused dim
        })
        .collect();
    let new_exprs = exprs.iter().map(|e| e.substitute_dims(&repl)).collect();
    (order, new_exprs)
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    /// Floating constant of the given element type.
    ConstF { value: f64, ty: ElemType },
    Load { buf: BufferRef, at: Subscript },
    Store { value: ValueId, buf: BufferRef, at: Subscript },
    VectorLoad { buf: BufferRef, at: Subscript, width: usize },
    VectorStore { value: ValueId, buf: BufferRef, at: Subscript, width: usize },
    MulF { lhs: ValueId, rhs: ValueId, ty: ElemType },
    AddF { lhs: ValueId, rhs: ValueId, ty: ElemType },
    /// Widen f16 to f32.
    ExtF { value: ValueId },
    WmmaLoad { buf: BufferRef, at: Subscript, ld: i64, frag: FragmentType },
    WmmaCompute { a: ValueId, b: ValueId, acc: ValueId, frag: FragmentType },
    WmmaStore { value: ValueId, buf: BufferRef, at: Subscript, ld: i64 },
    Barrier,
    Yield { values: Vec<ValueId> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Op {
    pub result: Option<ValueId>,
    pub kind: OpKind,
}

impl Op {
    pub fn new(result: Option<ValueId>, kind: OpKind) -> Self {
        Op { result, kind }
    }

    /// Non-index value operands of this op, in order. Subscript operands
    /// are reachable through [`Op::subscript`].
    pub fn float_operands(&self) -> Vec<ValueId> {
        match &self.kind {
            OpKind::ConstF { .. } | OpKind::Barrier => vec![],
            OpKind::Load { .. } | OpKind::VectorLoad { .. } | OpKind::WmmaLoad { .. } => vec![],
            OpKind::Store { value, .. }
            | OpKind::VectorStore { value, .. }
            | OpKind::WmmaStore { value, .. } => vec![*value],
            OpKind::MulF { lhs, rhs, .. } | OpKind::AddF { lhs, rhs, .. } => vec![*lhs, *rhs],
            OpKind::ExtF { value } => vec![*value],
            OpKind::WmmaCompute { a, b, acc, .. } => vec![*a, *b, *acc],
            OpKind::Yield { values } => values.clone(),
        }
    }

    pub fn subscript(&self) -> Option<&Subscript> {
        match &self.kind {
            OpKind::Load { at, .. }
            | OpKind::Store { at, .. }
            | OpKind::VectorLoad { at, .. }
            | OpKind::VectorStore { at, .. }
            | OpKind::WmmaLoad { at, .. }
            | OpKind::WmmaStore { at, .. } => Some(at),
            _ => None,
        }
    }

    pub fn subscript_mut(&mut self) -> Option<&mut Subscript> {
        match &mut self.kind {
            OpKind::Load { at, .. }
            | OpKind::Store { at, .. }
            | OpKind::VectorLoad { at, .. }
            | OpKind::VectorStore { at, .. }
            | OpKind::WmmaLoad { at, .. }
            | OpKind::WmmaStore { at, .. } => Some(at),
            _ => None,
        }
    }

    pub fn buffer(&self) -> Option<&BufferRef> {
        match &self.kind {
            OpKind::Load { buf, .. }
            | OpKind::Store { buf, .. }
            | OpKind::VectorLoad { buf, .. }
            | OpKind::VectorStore { buf, .. }
            | OpKind::WmmaLoad { buf, .. }
            | OpKind::WmmaStore { buf, .. } => Some(buf),
            _ => None,
        }
    }

    pub fn is_memory_write(&self) -> bool {
        matches!(
            self.kind,
            OpKind::Store { .. } | OpKind::VectorStore { .. } | OpKind::WmmaStore { .. }
        )
    }

    pub fn is_memory_read(&self) -> bool {
        matches!(
            self.kind,
            OpKind::Load { .. } | OpKind::VectorLoad { .. } | OpKind::WmmaLoad { .. }
        )
    }

    /// Visit every value use in this op (float operands and subscript
    /// operands), allowing replacement.
    pub fn for_each_use_mut(&mut self, f: &mut dyn FnMut(&mut ValueId)) {
        match &mut self.kind {
            OpKind::ConstF { .. } | OpKind::Barrier => {}
            OpKind::Load { at, .. } | OpKind::VectorLoad { at, .. } | OpKind::WmmaLoad { at, .. } => {
                at.operands.iter_mut().for_each(&mut *f)
            }
            OpKind::Store { value, at, .. }
            | OpKind::VectorStore { value, at, .. }
            | OpKind::WmmaStore { value, at, .. } => {
                f(value);
                at.operands.iter_mut().for_each(&mut *f);
            }
            OpKind::MulF { lhs, rhs, .. } | OpKind::AddF { lhs, rhs, .. } => {
                f(lhs);
                f(rhs);
            }
            OpKind::ExtF { value } => f(value),
            OpKind::WmmaCompute { a, b, acc, .. } => {
                f(a);
                f(b);
                f(acc);
            }
            OpKind::Yield { values } => values.iter_mut().for_each(&mut *f),
        }
    }
}

/// GPU hierarchy dimension a parallel loop is mapped to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpuDim {
    BlockX,
    BlockY,
    WarpX,
    WarpY,
}

/// Tag attached by the copy-generation pass so later passes can identify
/// copy loops statically instead of rediscovering them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopTag {
    CopyA,
    CopyB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoopAttrs {
    pub parallel: bool,
    pub gpu: Option<GpuDim>,
    pub tag: Option<LoopTag>,
}

/// An affine bound: a single-result map applied to index operands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffineBound {
    pub map: AffineMap,
    pub operands: Vec<ValueId>,
}

impl AffineBound {
    pub fn constant(c: i64) -> Self {
        AffineBound { map: AffineMap::constant(c), operands: vec![] }
    }

    pub fn from_expr(operands: Vec<ValueId>, expr: AffineExpr) -> Self {
        let (operands, mut exprs) = normalize_over(&operands, &[expr]);
        AffineBound {
            map: AffineMap::new(operands.len(), 0, vec![exprs.pop().unwrap()]),
            operands,
        }
    }

    pub fn as_expr_over(&self) -> (&[ValueId], &AffineExpr) {
        (&self.operands, &self.map.results[0])
    }
}

/// A loop-carried value: `arg` is bound inside the body, starting at `init`
/// and taking the corresponding yielded value on each later iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IterArg {
    pub arg: ValueId,
    pub init: ValueId,
    pub ty: ValueType,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loop {
    pub iv: ValueId,
    pub lower: AffineBound,
    pub upper: AffineBound,
    pub step: i64,
    pub iter_args: Vec<IterArg>,
    /// One result per iter_arg, defined after the loop.
    pub results: Vec<ValueId>,
    pub body: Vec<Item>,
    pub attrs: LoopAttrs,
}

impl Loop {
    /// Trip count when both bounds reduce to a constant difference. Bounds
    /// may reference outer IVs; the difference must not.
    pub fn const_trip_count(&self) -> Option<i64> {
        let diff = bound_difference(&self.lower, &self.upper)?;
        if diff <= 0 {
            return Some(0);
        }
        Some((diff + self.step - 1) / self.step)
    }
}

/// `upper - lower` when it folds to a constant. Operand lists are unified by
/// value identity.
pub fn bound_difference(lower: &AffineBound, upper: &AffineBound) -> Option<i64> {
    let mut operands = lower.operands.clone();
    let mut up_repl = Vec::with_capacity(upper.operands.len());
    for v in &upper.operands {
        let idx = match operands.iter().position(|o| o == v) {
            Some(i) => i,
            None => {
                operands.push(*v);
                operands.len() - 1
            }
        };
        up_repl.push(AffineExpr::dim(idx));
    }
    let lo = lower.map.results[0].clone();
    let up = upper.map.results[0].substitute_dims(&up_repl);
    match up.sub(lo).simplify() {
        AffineExpr::Const(c) => Some(c),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Item {
    Loop(Box<Loop>),
    Op(Op),
}

impl Item {
    pub fn as_loop(&self) -> Option<&Loop> {
        match self {
            Item::Loop(l) => Some(l),
            Item::Op(_) => None,
        }
    }

    pub fn as_loop_mut(&mut self) -> Option<&mut Loop> {
        match self {
            Item::Loop(l) => Some(l),
            Item::Op(_) => None,
        }
    }

    pub fn as_op(&self) -> Option<&Op> {
        match self {
            Item::Op(o) => Some(o),
            Item::Loop(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuncArg {
    pub name: String,
    pub ty: MemRefType,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Func {
    pub name: String,
    pub args: Vec<FuncArg>,
    pub body: Vec<Item>,
    pub(crate) next_value: u32,
}

impl Func {
    pub fn new(name: impl Into<String>, args: Vec<FuncArg>) -> Self {
        Func { name: name.into(), args, body: Vec::new(), next_value: 0 }
    }

    pub fn fresh_value(&mut self) -> ValueId {
        let v = ValueId(self.next_value);
        self.next_value += 1;
        v
    }

    pub fn reserve_values(&mut self, n: u32) -> u32 {
        let base = self.next_value;
        self.next_value += n;
        base
    }

    pub(crate) fn bump_next(&mut self, at_least: u32) {
        self.next_value = self.next_value.max(at_least);
    }
}

/// A module-level shared-memory buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalBuffer {
    pub name: String,
    pub ty: MemRefType,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Module {
    pub globals: Vec<GlobalBuffer>,
    pub funcs: Vec<Func>,
}

impl Module {
    pub fn main(&self) -> &Func {
        &self.funcs[0]
    }

    pub fn main_mut(&mut self) -> &mut Func {
        &mut self.funcs[0]
    }

    pub fn global(&self, name: &str) -> Option<&GlobalBuffer> {
        self.globals.iter().find(|g| g.name == name)
    }

    /// Resolve a buffer reference against a function of this module.
    pub fn buffer_type<'a>(&'a self, func: &'a Func, buf: &BufferRef) -> Option<&'a MemRefType> {
        match buf {
            BufferRef::Arg(i) => func.args.get(*i).map(|a| &a.ty),
            BufferRef::Global(name) => self.global(name).map(|g| &g.ty),
        }
    }
}

/// Convenience constructors used by the builder and the passes.
pub mod build {
    use super::*;

    pub fn load(result: ValueId, buf: BufferRef, at: Subscript) -> Item {
        Item::Op(Op::new(Some(result), OpKind::Load { buf, at }))
    }

    pub fn store(value: ValueId, buf: BufferRef, at: Subscript) -> Item {
        Item::Op(Op::new(None, OpKind::Store { value, buf, at }))
    }

    pub fn mulf(result: ValueId, lhs: ValueId, rhs: ValueId, ty: ElemType) -> Item {
        Item::Op(Op::new(Some(result), OpKind::MulF { lhs, rhs, ty }))
    }

    pub fn addf(result: ValueId, lhs: ValueId, rhs: ValueId, ty: ElemType) -> Item {
        Item::Op(Op::new(Some(result), OpKind::AddF { lhs, rhs, ty }))
    }

    pub fn extf(result: ValueId, value: ValueId) -> Item {
        Item::Op(Op::new(Some(result), OpKind::ExtF { value }))
    }

    pub fn barrier() -> Item {
        Item::Op(Op::new(None, OpKind::Barrier))
    }

    pub fn yield_(values: Vec<ValueId>) -> Item {
        Item::Op(Op::new(None, OpKind::Yield { values }))
    }

    pub fn wmma_load(
        result: ValueId,
        buf: BufferRef,
        at: Subscript,
        ld: i64,
        role: FragRole,
        elem: ElemType,
    ) -> Item {
        Item::Op(Op::new(
            Some(result),
            OpKind::WmmaLoad { buf, at, ld, frag: FragmentType::new(role, elem) },
        ))
    }

    pub fn wmma_compute(result: ValueId, a: ValueId, b: ValueId, acc: ValueId, accum: ElemType) -> Item {
        Item::Op(Op::new(
            Some(result),
            OpKind::WmmaCompute { a, b, acc, frag: FragmentType::new(FragRole::Accum, accum) },
        ))
    }

    pub fn wmma_store(value: ValueId, buf: BufferRef, at: Subscript, ld: i64) -> Item {
        Item::Op(Op::new(None, OpKind::WmmaStore { value, buf, at, ld }))
    }
}
