//! IR definition: types, operations, structured loops, textual format,
//! parser, printer, verifier, and the naive-matmul builder.
//!
//! # Textual format
//!
//! UTF-8, line oriented, `//` comments. Values are `%name`, shared globals
//! `@name`; subscripts and loop bounds are quasi-affine expressions over
//! in-scope index values (`+ - * floordiv mod`, constant right operands
//! for the last three).
//!
//! ```text
//! module      := "module" "{" global* (func | kernel)* "}"
//! global      := "global" @name ":" memref
//! func        := "func" @name "(" params? ")" "{" item* "}"
//! kernel      := "kernel" @name "(" params? ")"
//!                "grid" "(" int "," int ")" "warps" "(" int "," int ")"
//!                "{" item* "}"            // implicit %bx %by %wx %wy %tid
//! param       := %name ":" memref
//! memref      := "memref" "<" (int "x")+ elem "," space ("," layout)? ">"
//! layout      := "(" dims ")" "->" "(" expr ")"    // d0-style, row-major
//!                                                  // strides when omitted
//! elem        := "f16" | "f32"      space := "global" | "shared"
//!
//! item        := loop | op
//! loop        := (results "=")? "for" %iv "=" expr "to" expr "step" int
//!                attrs? iterargs? "{" item* "}"
//! attrs       := "[" ("parallel" | "gpu = <dim>" | "tag = copy_a|copy_b")
//!                ("," ...)* "]"
//! iterargs    := "iter_args" "(" (%arg "=" %init ":" type),+ ")"
//!
//! op          := %r "=" "const" float ":" elem
//!              | %r "=" "load" buf "[" exprs "]" ":" memref
//!              | "store" %v "," buf "[" exprs "]" ":" memref
//!              | %r "=" "vload" buf "[" exprs "]" ":" memref "," vector
//!              | "vstore" %v "," buf "[" exprs "]" ":" memref "," vector
//!              | %r "=" "mulf" %a "," %b ":" elem      (same for "addf")
//!              | %r "=" "extf" %a
//!              | %r "=" "wmma.load" buf "[" exprs "]"
//!                "{ld = " int ", role = " a|b|acc "}" ":" memref "->" frag
//!              | %r "=" "wmma.compute" %a "," %b "," %acc ":" frag
//!              | "wmma.store" %v "," buf "[" exprs "]" "{ld = " int "}"
//!                ":" memref
//!              | "barrier" | "yield" (%v ("," %v)*)?
//! vector      := "vector" "<" int "x" elem ">"
//! frag        := "frag" "<" a|b|acc "," "16x16x16" "," elem ">"
//! buf         := @name | %arg-name
//! ```
//!
//! Printing is deterministic (values renamed `%0, %1, ...` in definition
//! order) and `parse(print(m))` is structurally identical to `m`.

pub mod build_naive;
pub mod expr;
pub mod kernel;
pub mod ops;
pub mod parse;
pub mod print;
pub mod rewrite;
pub mod types;
pub mod verify;

pub use build_naive::build_naive_matmul;
pub use expr::{AffineExpr, AffineMap};
pub use kernel::{print_kernel, GpuKernel, HwIds, LaunchConfig, THREADS_PER_WARP};
pub use ops::{
    bound_difference, build, AffineBound, BufferRef, Func, FuncArg, GlobalBuffer, GpuDim, IterArg,
    Item, Loop, LoopAttrs, LoopTag, Module, Op, OpKind, Subscript, ValueId,
};
pub use parse::{parse_artifact_text, parse_ir, parse_module_text, Artifact, IrTextError};
pub use print::print_module;
pub use types::{
    ElemType, FragRole, FragmentType, MemRefType, MemorySpace, ProblemConfig, ValueType, WMMA_K,
    WMMA_M, WMMA_N,
};
pub use verify::{structural_eq, structural_eq_kernel, verify_kernel, verify_module, Diagnostics};

/// Print a module to its stable textual form.
pub fn print_ir(m: &Module) -> String {
    print_module(m)
}
