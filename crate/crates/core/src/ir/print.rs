//! Deterministic textual form of the IR.
//!
//! Value names are assigned sequentially in definition order, so printing is
//! stable across runs and `parse(print(m))` reproduces the module up to
//! value renumbering (see `structural_eq`).

use std::collections::HashMap;
use std::fmt::Write;

use super::expr::{AffineExpr, AffineMap};
use super::ops::*;
use super::types::{FragmentType, MemRefType, ValueType};

pub fn print_module(m: &Module) -> String {
    let mut out = String::new();
    out.push_str("module {\n");
    for g in &m.globals {
        let _ = writeln!(out, "  global @{} : {}", g.name, memref_str(&g.ty));
    }
    for f in &m.funcs {
        let mut p = Printer::new(&m.globals, &f.args);
        let _ = write!(out, "  func @{}(", f.name);
        for (i, a) in f.args.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "%{}: {}", a.name, memref_str(&a.ty));
        }
        out.push_str(") {\n");
        p.print_items(&f.body, &mut out, 2);
        out.push_str("  }\n");
    }
    out.push_str("}\n");
    out
}

pub fn memref_str(t: &MemRefType) -> String {
    let mut s = String::from("memref<");
    for d in &t.shape {
        let _ = write!(s, "{d}x");
    }
    let _ = write!(s, "{}, {}", t.elem, t.space);
    if t.layout != MemRefType::strided_layout(&t.shape, 0) {
        let _ = write!(s, ", {}", map_str(&t.layout));
    }
    s.push('>');
    s
}

pub fn map_str(m: &AffineMap) -> String {
    let mut s = String::from("(");
    for d in 0..m.num_dims {
        if d > 0 {
            s.push_str(", ");
        }
        let _ = write!(s, "d{d}");
    }
    s.push_str(") -> (");
    for (i, e) in m.results.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        s.push_str(&expr_str(e, &|d| format!("d{d}")));
    }
    s.push(')');
    s
}

pub fn frag_str(f: &FragmentType) -> String {
    format!("frag<{}, {}x{}x{}, {}>", f.role, f.m, f.n, f.k, f.elem)
}

pub fn expr_str(e: &AffineExpr, name: &dyn Fn(usize) -> String) -> String {
    struct W<'a>(&'a AffineExpr, &'a dyn Fn(usize) -> String);
    impl std::fmt::Display for W<'_> {
        fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
            self.0.fmt_with(f, self.1)
        }
    }
    format!("{}", W(e, name))
}

pub(crate) struct Printer<'a> {
    globals: &'a [GlobalBuffer],
    args: &'a [FuncArg],
    names: HashMap<ValueId, String>,
    next: u32,
}

impl<'a> Printer<'a> {
    pub(crate) fn new(globals: &'a [GlobalBuffer], args: &'a [FuncArg]) -> Self {
        Printer { globals, args, names: HashMap::new(), next: 0 }
    }

    /// Pre-bind a value to a fixed name (kernel hardware ids).
    pub(crate) fn bind(&mut self, v: ValueId, name: &str) {
        self.names.insert(v, name.to_string());
    }

    fn def(&mut self, v: ValueId) -> String {
        let name = format!("%{}", self.next);
        self.next += 1;
        self.names.insert(v, name.clone());
        name
    }

    fn use_(&self, v: ValueId) -> String {
        self.names.get(&v).cloned().unwrap_or_else(|| format!("%<undef:{}>", v.0))
    }

    fn buf(&self, b: &BufferRef) -> String {
        match b {
            BufferRef::Arg(i) => format!("%{}", self.args[*i].name),
            BufferRef::Global(name) => format!("@{name}"),
        }
    }

    fn buf_ty(&self, b: &BufferRef) -> Option<&MemRefType> {
        match b {
            BufferRef::Arg(i) => self.args.get(*i).map(|a| &a.ty),
            BufferRef::Global(name) => {
                self.globals.iter().find(|g| &g.name == name).map(|g| &g.ty)
            }
        }
    }

    fn bound(&self, b: &AffineBound) -> String {
        let names: Vec<String> = b.operands.iter().map(|v| self.use_(*v)).collect();
        expr_str(&b.map.results[0], &|d| names[d].clone())
    }

    fn subscript(&self, at: &Subscript) -> String {
        let names: Vec<String> = at.operands.iter().map(|v| self.use_(*v)).collect();
        let mut s = String::from("[");
        for (i, e) in at.map.results.iter().enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            s.push_str(&expr_str(e, &|d| names[d].clone()));
        }
        s.push(']');
        s
    }

    pub(crate) fn print_items(&mut self, items: &[Item], out: &mut String, depth: usize) {
        for item in items {
            match item {
                Item::Loop(l) => self.print_loop(l, out, depth),
                Item::Op(op) => self.print_op(op, out, depth),
            }
        }
    }

    fn print_loop(&mut self, l: &Loop, out: &mut String, depth: usize) {
        let pad = "  ".repeat(depth);
        out.push_str(&pad);
        if !l.results.is_empty() {
            let names: Vec<String> = l.results.iter().map(|r| self.def(*r)).collect();
            let _ = write!(out, "{} = ", names.join(", "));
        }
        let iv = self.def(l.iv);
        let _ = write!(out, "for {} = {} to {} step {}", iv, self.bound(&l.lower), self.bound(&l.upper), l.step);
        let attrs = attr_list(&l.attrs);
        if !attrs.is_empty() {
            let _ = write!(out, " [{}]", attrs.join(", "));
        }
        if !l.iter_args.is_empty() {
            out.push_str(" iter_args(");
            for (i, ia) in l.iter_args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                let init = self.use_(ia.init);
                let arg = self.def(ia.arg);
                let _ = write!(out, "{arg} = {init} : {}", value_ty_str(&ia.ty));
            }
            out.push(')');
        }
        out.push_str(" {\n");
        self.print_items(&l.body, out, depth + 1);
        out.push_str(&pad);
        out.push_str("}\n");
    }

    fn print_op(&mut self, op: &Op, out: &mut String, depth: usize) {
        let pad = "  ".repeat(depth);
        out.push_str(&pad);
        let res = op.result.map(|r| self.def(r));
        match &op.kind {
            OpKind::ConstF { value, ty } => {
                let _ = writeln!(out, "{} = const {} : {}", res.unwrap(), fmt_f64(*value), ty);
            }
            OpKind::Load { buf, at } => {
                let _ = writeln!(
                    out,
                    "{} = load {}{} : {}",
                    res.unwrap(),
                    self.buf(buf),
                    self.subscript(at),
                    self.mem_ty(buf)
                );
            }
            OpKind::Store { value, buf, at } => {
                let _ = writeln!(
                    out,
                    "store {}, {}{} : {}",
                    self.use_(*value),
                    self.buf(buf),
                    self.subscript(at),
                    self.mem_ty(buf)
                );
            }
            OpKind::VectorLoad { buf, at, width } => {
                let elem = self.buf_ty(buf).map(|t| t.elem).unwrap_or(super::types::ElemType::F16);
                let _ = writeln!(
                    out,
                    "{} = vload {}{} : {}, vector<{}x{}>",
                    res.unwrap(),
                    self.buf(buf),
                    self.subscript(at),
                    self.mem_ty(buf),
                    width,
                    elem
                );
            }
            OpKind::VectorStore { value, buf, at, width } => {
                let elem = self.buf_ty(buf).map(|t| t.elem).unwrap_or(super::types::ElemType::F16);
                let _ = writeln!(
                    out,
                    "vstore {}, {}{} : {}, vector<{}x{}>",
                    self.use_(*value),
                    self.buf(buf),
                    self.subscript(at),
                    self.mem_ty(buf),
                    width,
                    elem
                );
            }
            OpKind::MulF { lhs, rhs, ty } => {
                let _ = writeln!(out, "{} = mulf {}, {} : {}", res.unwrap(), self.use_(*lhs), self.use_(*rhs), ty);
            }
            OpKind::AddF { lhs, rhs, ty } => {
                let _ = writeln!(out, "{} = addf {}, {} : {}", res.unwrap(), self.use_(*lhs), self.use_(*rhs), ty);
            }
            OpKind::ExtF { value } => {
                let _ = writeln!(out, "{} = extf {}", res.unwrap(), self.use_(*value));
            }
            OpKind::WmmaLoad { buf, at, ld, frag } => {
                let _ = writeln!(
                    out,
                    "{} = wmma.load {}{} {{ld = {}, role = {}}} : {} -> {}",
                    res.unwrap(),
                    self.buf(buf),
                    self.subscript(at),
                    ld,
                    frag.role,
                    self.mem_ty(buf),
                    frag_str(frag)
                );
            }
            OpKind::WmmaCompute { a, b, acc, frag } => {
                let _ = writeln!(
                    out,
                    "{} = wmma.compute {}, {}, {} : {}",
                    res.unwrap(),
                    self.use_(*a),
                    self.use_(*b),
                    self.use_(*acc),
                    frag_str(frag)
                );
            }
            OpKind::WmmaStore { value, buf, at, ld } => {
                let _ = writeln!(
                    out,
                    "wmma.store {}, {}{} {{ld = {}}} : {}",
                    self.use_(*value),
                    self.buf(buf),
                    self.subscript(at),
                    ld,
                    self.mem_ty(buf)
                );
            }
            OpKind::Barrier => {
                out.push_str("barrier\n");
            }
            OpKind::Yield { values } => {
                if values.is_empty() {
                    out.push_str("yield\n");
                } else {
                    let names: Vec<String> = values.iter().map(|v| self.use_(*v)).collect();
                    let _ = writeln!(out, "yield {}", names.join(", "));
                }
            }
        }
    }

    fn mem_ty(&self, buf: &BufferRef) -> String {
        self.buf_ty(buf).map(memref_str).unwrap_or_else(|| "memref<?>".into())
    }
}

pub fn value_ty_str(t: &ValueType) -> String {
    match t {
        ValueType::Index => "index".into(),
        ValueType::Scalar(e) => e.to_string(),
        ValueType::Vector(e, w) => format!("vector<{w}x{e}>"),
        ValueType::Frag(f) => frag_str(f),
    }
}

fn attr_list(attrs: &LoopAttrs) -> Vec<String> {
    let mut v = Vec::new();
    if attrs.parallel {
        v.push("parallel".to_string());
    }
    if let Some(g) = attrs.gpu {
        v.push(format!(
            "gpu = {}",
            match g {
                GpuDim::BlockX => "block_x",
                GpuDim::BlockY => "block_y",
                GpuDim::WarpX => "warp_x",
                GpuDim::WarpY => "warp_y",
            }
        ));
    }
    if let Some(t) = attrs.tag {
        v.push(format!(
            "tag = {}",
            match t {
                LoopTag::CopyA => "copy_a",
                LoopTag::CopyB => "copy_b",
            }
        ));
    }
    v
}

fn fmt_f64(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{:.1}", v)
    } else {
        format!("{v}")
    }
}
