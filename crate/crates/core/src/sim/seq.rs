//! Sequential interpreter: executes an affine module in program order.
//!
//! Matrix ops run as 16x16x16 multiply-accumulates with one rounding per
//! step in the accumulate type (k ascending, row-major), the same element
//! order at every pipeline stage, which is what makes pass equivalence
//! bit-exact for order-preserving rewrites.

use std::collections::HashMap;

use crate::ir::{AffineBound, BufferRef, Item, Loop, Module, Op, OpKind, Subscript, ValueId};
use crate::num::{mac_step, round_to};

use super::{check_bounds, take_inputs, Buffer, SimError, Tensors};

#[derive(Debug, Clone)]
enum Val {
    Idx(i64),
    F(f64),
    V(Vec<f64>),
    Frag(Box<Frag>),
}

#[derive(Debug, Clone)]
struct Frag {
    data: [f64; 256], // 16x16 row-major
}

struct Interp<'m> {
    module: &'m Module,
    args: Vec<Buffer>,
    shared: HashMap<String, Buffer>,
    env: HashMap<ValueId, Val>,
}

/// Run the module's first function on the given inputs and return the
/// final global buffers.
pub fn run_sequential(m: &Module, inputs: &Tensors) -> Result<Tensors, SimError> {
    let func = m.main();
    let args = take_inputs(&func.args, inputs)?;
    let mut shared = HashMap::new();
    for g in &m.globals {
        shared.insert(g.name.clone(), Buffer::zeroed(g.ty.clone()));
    }
    let mut interp = Interp { module: m, args, shared, env: HashMap::new() };
    interp.run_items(&func.body)?;
    let mut out = Tensors::new();
    for (a, buf) in func.args.iter().zip(interp.args) {
        out.insert(a.name.clone(), buf);
    }
    Ok(out)
}

impl<'m> Interp<'m> {
    fn idx(&self, v: ValueId) -> Result<i64, SimError> {
        match self.env.get(&v) {
            Some(Val::Idx(i)) => Ok(*i),
            _ => Err(SimError::Runtime(format!("value {} is not an index", v.0))),
        }
    }

    fn scalar(&self, v: ValueId) -> Result<f64, SimError> {
        match self.env.get(&v) {
            Some(Val::F(x)) => Ok(*x),
            _ => Err(SimError::Runtime(format!("value {} is not a scalar", v.0))),
        }
    }

    fn bound(&self, b: &AffineBound) -> Result<i64, SimError> {
        let dims: Result<Vec<i64>, _> = b.operands.iter().map(|v| self.idx(*v)).collect();
        Ok(b.map.eval_one(&dims?))
    }

    fn subscript(&self, at: &Subscript) -> Result<Vec<i64>, SimError> {
        let dims: Result<Vec<i64>, _> = at.operands.iter().map(|v| self.idx(*v)).collect();
        Ok(at.map.eval(&dims?))
    }

    fn buffer(&self, b: &BufferRef) -> &Buffer {
        match b {
            BufferRef::Arg(i) => &self.args[*i],
            BufferRef::Global(n) => &self.shared[n],
        }
    }

    fn buffer_mut(&mut self, b: &BufferRef) -> &mut Buffer {
        match b {
            BufferRef::Arg(i) => &mut self.args[*i],
            BufferRef::Global(n) => self.shared.get_mut(n).unwrap(),
        }
    }

    fn buffer_name(&self, b: &BufferRef) -> String {
        match b {
            BufferRef::Arg(i) => self.module.main().args[*i].name.clone(),
            BufferRef::Global(n) => n.clone(),
        }
    }

    fn run_items(&mut self, items: &[Item]) -> Result<(), SimError> {
        for item in items {
            match item {
                Item::Loop(l) => self.run_loop(l)?,
                Item::Op(op) => self.run_op(op)?,
            }
        }
        Ok(())
    }

    fn run_loop(&mut self, l: &Loop) -> Result<(), SimError> {
        let lb = self.bound(&l.lower)?;
        let ub = self.bound(&l.upper)?;
        let mut carried: Vec<Val> = l
            .iter_args
            .iter()
            .map(|ia| {
                self.env
                    .get(&ia.init)
                    .cloned()
                    .ok_or_else(|| SimError::Runtime("iter_args init not evaluated".into()))
            })
            .collect::<Result<_, _>>()?;
        let mut iv = lb;
        while iv < ub {
            self.env.insert(l.iv, Val::Idx(iv));
            for (ia, v) in l.iter_args.iter().zip(carried.iter()) {
                self.env.insert(ia.arg, v.clone());
            }
            // Body; a trailing yield updates the carried values.
            for item in &l.body {
                match item {
                    Item::Loop(inner) => self.run_loop(inner)?,
                    Item::Op(op) => {
                        if let OpKind::Yield { values } = &op.kind {
                            carried = values
                                .iter()
                                .map(|v| {
                                    self.env.get(v).cloned().ok_or_else(|| {
                                        SimError::Runtime("yield of unevaluated value".into())
                                    })
                                })
                                .collect::<Result<_, _>>()?;
                        } else {
                            self.run_op(op)?;
                        }
                    }
                }
            }
            iv += l.step;
        }
        for (r, v) in l.results.iter().zip(carried) {
            self.env.insert(*r, v);
        }
        Ok(())
    }

    fn run_op(&mut self, op: &Op) -> Result<(), SimError> {
        match &op.kind {
            OpKind::ConstF { value, ty } => {
                self.env.insert(op.result.unwrap(), Val::F(round_to(*ty, *value)));
            }
            OpKind::Load { buf, at } => {
                let idx = self.subscript(at)?;
                let b = self.buffer(buf);
                check_bounds(&b.ty, &idx, &self.buffer_name(buf), "load")?;
                let v = b.at(&idx);
                self.env.insert(op.result.unwrap(), Val::F(v));
            }
            OpKind::Store { value, buf, at } => {
                let idx = self.subscript(at)?;
                let v = self.scalar(*value)?;
                let name = self.buffer_name(buf);
                let b = self.buffer_mut(buf);
                check_bounds(&b.ty, &idx, &name, "store")?;
                b.set(&idx, v);
            }
            OpKind::VectorLoad { buf, at, width } => {
                let idx = self.subscript(at)?;
                let b = self.buffer(buf);
                let name = self.buffer_name(buf);
                let mut out = Vec::with_capacity(*width);
                for t in 0..*width {
                    let mut i = idx.clone();
                    *i.last_mut().unwrap() += t as i64;
                    check_bounds(&b.ty, &i, &name, "vload")?;
                    out.push(b.at(&i));
                }
                self.env.insert(op.result.unwrap(), Val::V(out));
            }
            OpKind::VectorStore { value, buf, at, width } => {
                let idx = self.subscript(at)?;
                let vals = match self.env.get(value) {
                    Some(Val::V(v)) if v.len() == *width => v.clone(),
                    _ => return Err(SimError::Runtime("vstore of a non-vector value".into())),
                };
                let name = self.buffer_name(buf);
                let b = self.buffer_mut(buf);
                for (t, v) in vals.into_iter().enumerate() {
                    let mut i = idx.clone();
                    *i.last_mut().unwrap() += t as i64;
                    check_bounds(&b.ty, &i, &name, "vstore")?;
                    b.set(&i, v);
                }
            }
            OpKind::MulF { lhs, rhs, ty } => {
                let v = round_to(*ty, self.scalar(*lhs)? * self.scalar(*rhs)?);
                self.env.insert(op.result.unwrap(), Val::F(v));
            }
            OpKind::AddF { lhs, rhs, ty } => {
                let v = round_to(*ty, self.scalar(*lhs)? + self.scalar(*rhs)?);
                self.env.insert(op.result.unwrap(), Val::F(v));
            }
            OpKind::ExtF { value } => {
                let v = self.scalar(*value)?;
                self.env.insert(op.result.unwrap(), Val::F(v));
            }
            OpKind::WmmaLoad { buf, at, .. } => {
                let idx = self.subscript(at)?;
                let b = self.buffer(buf);
                let name = self.buffer_name(buf);
                let mut frag = Frag { data: [0.0; 256] };
                for r in 0..16i64 {
                    for c in 0..16i64 {
                        let i = [idx[0] + r, idx[1] + c];
                        check_bounds(&b.ty, &i, &name, "wmma.load")?;
                        frag.data[(r * 16 + c) as usize] = b.at(&i);
                    }
                }
                self.env.insert(op.result.unwrap(), Val::Frag(Box::new(frag)));
            }
            OpKind::WmmaCompute { a, b, acc, frag } => {
                let fa = self.frag(*a)?;
                let fb = self.frag(*b)?;
                let facc = self.frag(*acc)?;
                let mut out = Frag { data: [0.0; 256] };
                for i in 0..16 {
                    for j in 0..16 {
                        let mut v = facc.data[i * 16 + j];
                        for k in 0..16 {
                            v = mac_step(frag.elem, v, fa.data[i * 16 + k], fb.data[k * 16 + j]);
                        }
                        out.data[i * 16 + j] = v;
                    }
                }
                self.env.insert(op.result.unwrap(), Val::Frag(Box::new(out)));
            }
            OpKind::WmmaStore { value, buf, at, .. } => {
                let idx = self.subscript(at)?;
                let frag = self.frag(*value)?.clone();
                let name = self.buffer_name(buf);
                let b = self.buffer_mut(buf);
                for r in 0..16i64 {
                    for c in 0..16i64 {
                        let i = [idx[0] + r, idx[1] + c];
                        check_bounds(&b.ty, &i, &name, "wmma.store")?;
                        b.set(&i, frag.data[(r * 16 + c) as usize]);
                    }
                }
            }
            OpKind::Barrier => {}
            OpKind::Yield { .. } => {
                return Err(SimError::Runtime("yield outside a loop body".into()))
            }
        }
        Ok(())
    }

    fn frag(&self, v: ValueId) -> Result<&Frag, SimError> {
        match self.env.get(&v) {
            Some(Val::Frag(f)) => Ok(f),
            _ => Err(SimError::Runtime(format!("value {} is not a fragment", v.0))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{build_naive_matmul, ElemType, MemorySpace, MemRefType, ProblemConfig};
    use crate::sim::seeded_inputs;

    fn ident_buffer(n: i64) -> Buffer {
        let ty = MemRefType::row_major(vec![n, n], ElemType::F16, MemorySpace::Global);
        let mut b = Buffer::zeroed(ty);
        for i in 0..n {
            b.set(&[i, i], 1.0);
        }
        b
    }

    #[test]
    fn identity_times_b_is_b() {
        let p = ProblemConfig::new(32, 32, 32, ElemType::F32);
        let m = build_naive_matmul(&p);
        let mut inputs = seeded_inputs(&m.main().args, 7);
        inputs.insert("A".into(), ident_buffer(32));
        // C starts at zero.
        let c_ty = m.main().args[2].ty.clone();
        inputs.insert("C".into(), Buffer::zeroed(c_ty));
        let out = run_sequential(&m, &inputs).unwrap();
        let b = &inputs["B"];
        let c = &out["C"];
        for i in 0..32 {
            for j in 0..32 {
                assert_eq!(c.at(&[i, j]), b.at(&[i, j]), "({i},{j})");
            }
        }
    }

    #[test]
    fn zero_a_leaves_c() {
        let p = ProblemConfig::new(16, 16, 16, ElemType::F32);
        let m = build_naive_matmul(&p);
        let mut inputs = seeded_inputs(&m.main().args, 3);
        let a_ty = m.main().args[0].ty.clone();
        inputs.insert("A".into(), Buffer::zeroed(a_ty));
        let out = run_sequential(&m, &inputs).unwrap();
        assert_eq!(out["C"].data, inputs["C"].data);
    }

    #[test]
    fn single_element_problem() {
        let p = ProblemConfig::new(1, 1, 1, ElemType::F16);
        let m = build_naive_matmul(&p);
        let inputs = seeded_inputs(&m.main().args, 0);
        let out = run_sequential(&m, &inputs).unwrap();
        let expect = crate::num::round_to(
            ElemType::F16,
            crate::num::round_to(ElemType::F16, inputs["A"].at(&[0, 0]) * inputs["B"].at(&[0, 0]))
                + inputs["C"].at(&[0, 0]),
        );
        assert_eq!(out["C"].at(&[0, 0]), expect);
    }
}
