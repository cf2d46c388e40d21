//! Common subexpression elimination.
//!
//! Pure ops with identical kind, operands and (canonicalized) subscripts
//! are deduplicated within a straight-line block. Availability is
//! conservative: a store kills loads of its buffer, a barrier kills every
//! load, and nothing flows across loop boundaries.

use std::collections::HashMap;

use crate::ir::rewrite::for_each_op;
use crate::ir::{
    AffineExpr, BufferRef, ElemType, FragmentType, Item, Module, Op, OpKind, Subscript, ValueId,
};

use super::wmma::canon_subscript;
use super::{finish_pass, PassError, PassResult};

pub const NAME: &str = "cse";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Key {
    Const(u64, ElemType),
    Load(BufferRef, Vec<AffineExpr>, Vec<ValueId>),
    VLoad(BufferRef, Vec<AffineExpr>, Vec<ValueId>, usize),
    WLoad(BufferRef, Vec<AffineExpr>, Vec<ValueId>, i64, FragmentType),
    Mul(ValueId, ValueId, ElemType),
    Add(ValueId, ValueId, ElemType),
    Ext(ValueId),
    Compute(ValueId, ValueId, ValueId, FragmentType),
}

fn key_of(op: &Op) -> Option<(Key, Option<BufferRef>)> {
    let sub = op.subscript().map(canon_subscript);
    match &op.kind {
        OpKind::ConstF { value, ty } => Some((Key::Const(value.to_bits(), *ty), None)),
        OpKind::Load { buf, .. } => {
            let Subscript { map, operands } = sub.unwrap();
            Some((Key::Load(buf.clone(), map.results, operands), Some(buf.clone())))
        }
        OpKind::VectorLoad { buf, width, .. } => {
            let Subscript { map, operands } = sub.unwrap();
            Some((Key::VLoad(buf.clone(), map.results, operands, *width), Some(buf.clone())))
        }
        OpKind::WmmaLoad { buf, ld, frag, .. } => {
            let Subscript { map, operands } = sub.unwrap();
            Some((Key::WLoad(buf.clone(), map.results, operands, *ld, *frag), Some(buf.clone())))
        }
        OpKind::MulF { lhs, rhs, ty } => Some((Key::Mul(*lhs, *rhs, *ty), None)),
        OpKind::AddF { lhs, rhs, ty } => Some((Key::Add(*lhs, *rhs, *ty), None)),
        OpKind::ExtF { value } => Some((Key::Ext(*value), None)),
        OpKind::WmmaCompute { a, b, acc, frag } => {
            Some((Key::Compute(*a, *b, *acc, *frag), None))
        }
        _ => None,
    }
}

pub fn cse(m: &Module) -> Result<PassResult, PassError> {
    let mut out = m.clone();
    let mut replace: HashMap<ValueId, ValueId> = HashMap::new();
    let mut removed = 0usize;
    let body = std::mem::take(&mut out.main_mut().body);
    let body = run_block(body, &mut replace, &mut removed);
    out.main_mut().body = body;
    finish_pass(NAME, m, out, vec![format!("removed {removed} redundant ops")])
}

fn run_block(
    items: Vec<Item>,
    replace: &mut HashMap<ValueId, ValueId>,
    removed: &mut usize,
) -> Vec<Item> {
    let mut avail: HashMap<Key, ValueId> = HashMap::new();
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        match item {
            Item::Op(mut op) => {
                op.for_each_use_mut(&mut |v| {
                    if let Some(w) = replace.get(v) {
                        *v = *w;
                    }
                });
                if op.is_memory_write() {
                    let buf = op.buffer().cloned();
                    avail.retain(|k, _| match (k, &buf) {
                        (Key::Load(b, ..) | Key::VLoad(b, ..) | Key::WLoad(b, ..), Some(w)) => {
                            b != w
                        }
                        _ => true,
                    });
                    out.push(Item::Op(op));
                    continue;
                }
                if matches!(op.kind, OpKind::Barrier) {
                    avail.retain(|k, _| {
                        !matches!(k, Key::Load(..) | Key::VLoad(..) | Key::WLoad(..))
                    });
                    out.push(Item::Op(op));
                    continue;
                }
                match key_of(&op) {
                    Some((key, _)) => match avail.get(&key) {
                        Some(prev) => {
                            if let Some(r) = op.result {
                                replace.insert(r, *prev);
                            }
                            *removed += 1;
                        }
                        None => {
                            if let Some(r) = op.result {
                                avail.insert(key, r);
                            }
                            out.push(Item::Op(op));
                        }
                    },
                    None => out.push(Item::Op(op)),
                }
            }
            Item::Loop(mut l) => {
                for v in l.lower.operands.iter_mut().chain(l.upper.operands.iter_mut()) {
                    if let Some(w) = replace.get(v) {
                        *v = *w;
                    }
                }
                for ia in l.iter_args.iter_mut() {
                    if let Some(w) = replace.get(&ia.init) {
                        ia.init = *w;
                    }
                }
                let inner = std::mem::take(&mut l.body);
                l.body = run_block(inner, replace, removed);
                // Anything the loop writes invalidates loads of that buffer.
                let mut written = Vec::new();
                for_each_op(&l.body, &mut |op| {
                    if op.is_memory_write() {
                        if let Some(b) = op.buffer() {
                            written.push(b.clone());
                        }
                    }
                });
                if !written.is_empty() {
                    avail.retain(|k, _| match k {
                        Key::Load(b, ..) | Key::VLoad(b, ..) | Key::WLoad(b, ..) => {
                            !written.contains(b)
                        }
                        _ => true,
                    });
                }
                // Barriers inside the loop kill load availability too.
                let mut has_barrier = false;
                for_each_op(&l.body, &mut |op| has_barrier |= matches!(op.kind, OpKind::Barrier));
                if has_barrier {
                    avail.retain(|k, _| {
                        !matches!(k, Key::Load(..) | Key::VLoad(..) | Key::WLoad(..))
                    });
                }
                out.push(Item::Loop(l));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_ir;

    #[test]
    fn duplicate_loads_collapse_to_one() {
        let text = "\
module {
  global @s : memref<16x16xf16, shared>
  func @f(%X: memref<16x16xf16, global>) {
    for %i = 0 to 16 step 1 {
      %a = load @s[%i, 0] : memref<16x16xf16, shared>
      %b = load @s[%i, 0] : memref<16x16xf16, shared>
      %p = mulf %a, %b : f16
      store %p, %X[%i, %i] : memref<16x16xf16, global>
    }
  }
}
";
        let m = parse_ir(text).unwrap();
        let out = cse(&m).unwrap().module;
        let body = &out.main().body[0].as_loop().unwrap().body;
        assert_eq!(body.len(), 3);
    }

    #[test]
    fn stores_kill_availability() {
        let text = "\
module {
  global @s : memref<16x16xf16, shared>
  func @f(%X: memref<16x16xf16, global>) {
    for %i = 0 to 16 step 1 {
      %a = load @s[%i, 0] : memref<16x16xf16, shared>
      store %a, @s[%i, 0] : memref<16x16xf16, shared>
      %b = load @s[%i, 0] : memref<16x16xf16, shared>
      store %b, %X[%i, %i] : memref<16x16xf16, global>
    }
  }
}
";
        let m = parse_ir(text).unwrap();
        let out = cse(&m).unwrap().module;
        let body = &out.main().body[0].as_loop().unwrap().body;
        assert_eq!(body.len(), 4, "reload after a store must survive");
    }

    #[test]
    fn nested_loop_with_barrier_kills_load_availability() {
        let text = "\
module {
  global @s : memref<16x16xf16, shared>
  func @f(%X: memref<16x16xf16, global>) {
    for %i = 0 to 16 step 1 {
      %a = load @s[%i, 0] : memref<16x16xf16, shared>
      for %j = 0 to 4 step 1 {
        barrier
      }
      %b = load @s[%i, 0] : memref<16x16xf16, shared>
      %p = mulf %a, %b : f16
      store %p, %X[%i, %i] : memref<16x16xf16, global>
    }
  }
}
";
        let m = parse_ir(text).unwrap();
        let out = cse(&m).unwrap().module;
        // The reload after the barrier loop must survive.
        let body = &out.main().body[0].as_loop().unwrap().body;
        assert_eq!(body.len(), 5);
    }

    #[test]
    fn idempotent() {
        let text = "\
module {
  func @f(%X: memref<8x8xf32, global>) {
    for %i = 0 to 8 step 1 {
      %a = load %X[%i, 0] : memref<8x8xf32, global>
      %b = load %X[%i, 0] : memref<8x8xf32, global>
      %c = addf %a, %b : f32
      store %c, %X[%i, 1] : memref<8x8xf32, global>
    }
  }
}
";
        let m = parse_ir(text).unwrap();
        let once = cse(&m).unwrap().module;
        let twice = cse(&once).unwrap().module;
        assert!(crate::ir::structural_eq(&once, &twice));
    }
}
