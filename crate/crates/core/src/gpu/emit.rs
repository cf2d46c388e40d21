//! Deterministic pseudo-CUDA rendering of a mapped kernel.
//!
//! Meant for human inspection and golden tests; it borrows CUDA and WMMA
//! spellings but is not guaranteed to compile.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::ir::{
    AffineBound, AffineExpr, BufferRef, ElemType, FragRole, GpuKernel, Item, Loop, Op, OpKind,
    Subscript, ValueId,
};

pub fn emit_kernel_text(k: &GpuKernel) -> String {
    let mut e = Emitter { k, names: HashMap::new(), next: 0, out: String::new(), indent: 1 };
    e.names.insert(k.hw.bx, "bx".into());
    e.names.insert(k.hw.by, "by".into());
    e.names.insert(k.hw.wx, "wx".into());
    e.names.insert(k.hw.wy, "wy".into());
    e.names.insert(k.hw.tid, "tid".into());

    let mut out = String::new();
    let _ = writeln!(
        out,
        "// launch: grid({}, {}) x block({} threads = {}x{} warps)",
        k.launch.grid_x,
        k.launch.grid_y,
        k.launch.block_threads(),
        k.launch.warps_x,
        k.launch.warps_y
    );
    let _ = write!(out, "__global__ void {}(", k.name);
    for (i, a) in k.args.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "{}* {}", c_elem(a.ty.elem), a.name);
    }
    out.push_str(") {\n");
    for g in &k.globals {
        let rows = g.ty.shape[0];
        let cols = g.ty.alloc_elems() / rows;
        let _ = writeln!(out, "  __shared__ {} {}[{}][{}];", c_elem(g.ty.elem), g.name, rows, cols);
    }
    out.push_str("  const int bx = blockIdx.x, by = blockIdx.y;\n");
    out.push_str("  const int tid = threadIdx.x;\n");
    let _ = writeln!(
        out,
        "  const int wx = (tid / 32) % {}, wy = (tid / 32) / {};",
        k.launch.warps_x, k.launch.warps_x
    );
    e.items(&k.body);
    out.push_str(&e.out);
    out.push_str("}\n");
    out
}

struct Emitter<'k> {
    k: &'k GpuKernel,
    names: HashMap<ValueId, String>,
    next: u32,
    out: String,
    indent: usize,
}

impl<'k> Emitter<'k> {
    fn def(&mut self, v: ValueId, prefix: &str) -> String {
        let n = format!("{prefix}{}", self.next);
        self.next += 1;
        self.names.insert(v, n.clone());
        n
    }

    fn name(&self, v: ValueId) -> String {
        self.names.get(&v).cloned().unwrap_or_else(|| format!("v_undef{}", v.0))
    }

    fn line(&mut self, s: &str) {
        for _ in 0..self.indent {
            self.out.push_str("  ");
        }
        self.out.push_str(s);
        self.out.push('\n');
    }

    fn items(&mut self, items: &[Item]) {
        for item in items {
            match item {
                Item::Loop(l) => self.emit_loop(l),
                Item::Op(op) => self.emit_op(op),
            }
        }
    }

    fn expr(&self, e: &AffineExpr, operands: &[ValueId]) -> String {
        let names: Vec<String> = operands.iter().map(|v| self.name(*v)).collect();
        c_expr(e, &names)
    }

    fn bound(&self, b: &AffineBound) -> String {
        self.expr(&b.map.results[0], &b.operands)
    }

    /// Flat C index into a buffer: row expression times the allocation's
    /// row stride plus the column expression (2-d buffers).
    fn address(&self, buf: &BufferRef, at: &Subscript) -> String {
        let ty = self.k.buffer_type(buf).expect("buffer");
        let indices: Vec<String> =
            at.map.results.iter().map(|e| self.expr(e, &at.operands)).collect();
        match buf {
            BufferRef::Global(n) => {
                // Shared arrays are emitted 2-d.
                format!("{}[{}][{}]", n, indices[0], indices[1])
            }
            BufferRef::Arg(i) => {
                let name = &self.k.args[*i].name;
                if ty.rank() == 2 {
                    format!("{}[({}) * {} + ({})]", name, indices[0], ty.row_stride(), indices[1])
                } else {
                    format!("{}[{}]", name, indices[0])
                }
            }
        }
    }

    fn emit_loop(&mut self, l: &Loop) {
        // Loop-carried accumulators become mutable locals.
        for ia in &l.iter_args {
            let init = self.name(ia.init);
            let acc = self.def(ia.arg, "acc");
            self.line(&format!("auto {acc} = {init};"));
            // Loop results alias the accumulator after the loop.
            // (filled below once results are known)
        }
        for (r, ia) in l.results.iter().zip(&l.iter_args) {
            let acc = self.name(ia.arg);
            self.names.insert(*r, acc);
        }
        let iv = self.def(l.iv, "i");
        self.line(&format!(
            "for (int {iv} = {}; {iv} < {}; {iv} += {}) {{",
            self.bound(&l.lower),
            self.bound(&l.upper),
            l.step
        ));
        self.indent += 1;
        self.items(&l.body);
        self.indent -= 1;
        self.line("}");
    }

    fn emit_op(&mut self, op: &Op) {
        match &op.kind {
            OpKind::ConstF { value, ty } => {
                let r = self.def(op.result.unwrap(), "v");
                self.line(&format!("{} {} = {};", c_elem(*ty), r, value));
            }
            OpKind::Load { buf, at } => {
                let addr = self.address(buf, at);
                let ty = self.k.buffer_type(buf).unwrap().elem;
                let r = self.def(op.result.unwrap(), "v");
                self.line(&format!("{} {} = {};", c_elem(ty), r, addr));
            }
            OpKind::Store { value, buf, at } => {
                let addr = self.address(buf, at);
                let v = self.name(*value);
                self.line(&format!("{addr} = {v};"));
            }
            OpKind::VectorLoad { buf, at, width } => {
                let addr = self.address(buf, at);
                let ty = self.k.buffer_type(buf).unwrap().elem;
                let r = self.def(op.result.unwrap(), "v");
                self.line(&format!("{}{} {} = vload{}(&{});", c_elem(ty), width, r, width, addr));
            }
            OpKind::VectorStore { value, buf, at, width } => {
                let addr = self.address(buf, at);
                let v = self.name(*value);
                self.line(&format!("vstore{}(&{}, {});", width, addr, v));
            }
            OpKind::MulF { lhs, rhs, .. } => {
                let r = self.def(op.result.unwrap(), "v");
                let (a, b) = (self.name(*lhs), self.name(*rhs));
                self.line(&format!("auto {r} = {a} * {b};"));
            }
            OpKind::AddF { lhs, rhs, .. } => {
                let r = self.def(op.result.unwrap(), "v");
                let (a, b) = (self.name(*lhs), self.name(*rhs));
                self.line(&format!("auto {r} = {a} + {b};"));
            }
            OpKind::ExtF { value } => {
                let r = self.def(op.result.unwrap(), "v");
                let v = self.name(*value);
                self.line(&format!("float {r} = (float){v};"));
            }
            OpKind::WmmaLoad { buf, at, ld, frag } => {
                let addr = self.address(buf, at);
                let r = self.def(op.result.unwrap(), "frag");
                self.line(&format!(
                    "wmma::fragment<{}, 16, 16, 16, {}> {};",
                    frag_kind(frag.role),
                    c_elem(frag.elem),
                    r
                ));
                self.line(&format!("wmma::load_matrix_sync({r}, &{addr}, {ld});"));
            }
            OpKind::WmmaCompute { a, b, acc, frag } => {
                let r = self.def(op.result.unwrap(), "frag");
                self.line(&format!(
                    "wmma::fragment<accumulator, 16, 16, 16, {}> {};",
                    c_elem(frag.elem),
                    r
                ));
                self.line(&format!(
                    "wmma::mma_sync({r}, {}, {}, {});",
                    self.name(*a),
                    self.name(*b),
                    self.name(*acc)
                ));
            }
            OpKind::WmmaStore { value, buf, at, ld } => {
                let addr = self.address(buf, at);
                let v = self.name(*value);
                self.line(&format!(
                    "wmma::store_matrix_sync(&{addr}, {v}, {ld}, wmma::mem_row_major);"
                ));
            }
            OpKind::Barrier => self.line("__syncthreads();"),
            OpKind::Yield { values } => {
                // Feed the accumulators of the enclosing loop.
                let names: Vec<String> = values.iter().map(|v| self.name(*v)).collect();
                for (i, n) in names.iter().enumerate() {
                    self.line(&format!("/* carry */ acc_set({i}, {n});"));
                }
            }
        }
    }
}

fn c_elem(e: ElemType) -> &'static str {
    match e {
        ElemType::F16 => "half",
        ElemType::F32 => "float",
    }
}

fn frag_kind(role: FragRole) -> &'static str {
    match role {
        FragRole::MatA => "matrix_a",
        FragRole::MatB => "matrix_b",
        FragRole::Accum => "accumulator",
    }
}

fn c_expr(e: &AffineExpr, names: &[String]) -> String {
    match e {
        AffineExpr::Dim(d) => names[*d].clone(),
        AffineExpr::Sym(s) => format!("s{s}"),
        AffineExpr::Const(c) => c.to_string(),
        AffineExpr::Add(a, b) => format!("{} + {}", c_expr(a, names), c_expr(b, names)),
        AffineExpr::Mul(a, c) => format!("({}) * {}", c_expr(a, names), c),
        AffineExpr::FloorDiv(a, c) => format!("({}) / {}", c_expr(a, names), c),
        AffineExpr::Mod(a, c) => format!("({}) % {}", c_expr(a, names), c),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpu::{finalize_pipeline, map_to_gpu};
    use crate::ir::{ElemType, ProblemConfig};
    use crate::transforms::testutil::lower_to_parallel;
    use crate::transforms::TileConfig;

    #[test]
    fn padded_shared_declarations_appear() {
        let cfg = TileConfig::new(128, 128, 64, 64, 64);
        let p = ProblemConfig::new(256, 256, 256, ElemType::F32);
        let m = lower_to_parallel(&cfg, &p);
        let k = map_to_gpu(&m, &cfg, &p).unwrap().kernel;
        let k = finalize_pipeline(&k).unwrap().kernel;
        let text = emit_kernel_text(&k);
        assert!(text.contains("__shared__ half a_smem[128][72];"), "{text}");
        assert!(text.contains("__shared__ half b_smem[64][136];"), "{text}");
        assert!(text.contains("__syncthreads();"));
    }

    #[test]
    fn empty_kernel_emits_signature_and_empty_body() {
        use crate::ir::{FuncArg, HwIds, LaunchConfig, MemRefType, MemorySpace, ValueId};
        let k = GpuKernel {
            name: "empty".into(),
            launch: LaunchConfig { grid_x: 1, grid_y: 1, warps_x: 1, warps_y: 1 },
            globals: vec![],
            args: vec![FuncArg {
                name: "X".into(),
                ty: MemRefType::row_major(vec![4, 4], ElemType::F32, MemorySpace::Global),
            }],
            hw: HwIds {
                bx: ValueId(0),
                by: ValueId(1),
                wx: ValueId(2),
                wy: ValueId(3),
                tid: ValueId(4),
            },
            body: vec![],
            next_value: 5,
        };
        let text = emit_kernel_text(&k);
        assert!(text.contains("__global__ void empty(float* X)"), "{text}");
        assert!(text.trim_end().ends_with('}'));
        assert!(!text.contains("for ("));
    }

    #[test]
    fn emission_is_deterministic() {
        let cfg = TileConfig::new(64, 64, 32, 32, 32);
        let p = ProblemConfig::new(128, 128, 128, ElemType::F32);
        let m = lower_to_parallel(&cfg, &p);
        let k = map_to_gpu(&m, &cfg, &p).unwrap().kernel;
        let a = emit_kernel_text(&k);
        let b = emit_kernel_text(&k);
        assert_eq!(a, b);
    }
}
