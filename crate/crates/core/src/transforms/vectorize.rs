//! Vectorizing the global-to-shared copy loops.
//!
//! Scalar copy load/store pairs become vector accesses of
//! `vectorBits / 16` f16 elements and the inner copy loop steps by the
//! vector width. Requires contiguity in the fastest dimension of both the
//! source and the destination, and rows divisible by the vector width.

use crate::ir::rewrite::for_each_loop_mut;
use crate::ir::{Item, Loop, Module, Op, OpKind, Subscript, ValueId};

use super::{finish_pass, rejected, PassError, PassResult};

pub const NAME: &str = "vectorize";

pub fn vectorize_copies(m: &Module, vector_bits: i64) -> Result<PassResult, PassError> {
    if ![32, 64, 128].contains(&vector_bits) {
        return Err(rejected(NAME, format!("vector width {vector_bits} bits not in {{32, 64, 128}}")));
    }
    let width = (vector_bits / 16) as usize; // f16 elements

    let mut out = m.clone();
    let mut rewritten = 0usize;
    let mut error: Option<PassError> = None;
    for_each_loop_mut(&mut out.main_mut().body, &mut |outer: &mut Loop| {
        if outer.attrs.tag.is_none() || error.is_some() {
            return;
        }
        let tag = format!("{:?}", outer.attrs.tag.unwrap());
        let inner = match outer.body.as_mut_slice() {
            [Item::Loop(inner)] => inner,
            _ => {
                error = Some(rejected(NAME, format!("{tag}: copy nest is not two perfectly nested loops")));
                return;
            }
        };
        match vectorize_nest(inner, width) {
            Ok(()) => rewritten += 1,
            Err(msg) => error = Some(rejected(NAME, format!("{tag}: {msg}"))),
        }
    });
    if let Some(e) = error {
        return Err(e);
    }
    if rewritten == 0 {
        return Err(rejected(NAME, "no scalar copy nests found"));
    }
    finish_pass(
        NAME,
        m,
        out,
        vec![format!("vectorized {rewritten} copy nests at {width} f16 elements per access")],
    )
}

fn vectorize_nest(inner: &mut Loop, width: usize) -> Result<(), String> {
    if inner.step != 1 {
        return Err("inner copy loop is not scalar".into());
    }
    let trip = inner.const_trip_count().ok_or("inner copy loop trip count unknown")?;
    if trip % width as i64 != 0 {
        return Err(format!("row of {trip} f16 elements not divisible by the {width}-element vector"));
    }
    let (load, store) = match inner.body.as_mut_slice() {
        [Item::Op(l), Item::Op(s)] => (l, s),
        _ => return Err("copy body is not a load/store pair".into()),
    };
    check_contiguous(load, inner.iv)?;
    check_contiguous(store, inner.iv)?;

    let (buf, at, value) = match &load.kind {
        OpKind::Load { buf, at } => (buf.clone(), at.clone(), load.result.unwrap()),
        _ => return Err("copy body does not start with a scalar load".into()),
    };
    load.kind = OpKind::VectorLoad { buf, at, width };
    match &store.kind {
        OpKind::Store { value: v, buf, at } if *v == value => {
            store.kind =
                OpKind::VectorStore { value, buf: buf.clone(), at: at.clone(), width };
        }
        _ => return Err("copy body does not end with a matching scalar store".into()),
    }
    inner.step = width as i64;
    Ok(())
}

/// The op's last index must move 1-for-1 with the inner IV and all other
/// indices must be invariant in it.
fn check_contiguous(op: &Op, iv: ValueId) -> Result<(), String> {
    let at: &Subscript = op.subscript().ok_or("copy op has no subscript")?;
    let dim = at.operands.iter().position(|v| *v == iv);
    let rank = at.map.results.len();
    for (i, e) in at.map.results.iter().enumerate() {
        let coeffs = e.linear_coeffs().ok_or("non-linear copy subscript")?.0;
        let c = dim.and_then(|d| coeffs.get(&d).copied()).unwrap_or(0);
        if i + 1 == rank {
            if c != 1 {
                return Err("fastest dimension is not contiguous in the inner loop".into());
            }
        } else if c != 0 {
            return Err("outer index varies with the inner copy loop".into());
        }
    }
    Ok(())
}
