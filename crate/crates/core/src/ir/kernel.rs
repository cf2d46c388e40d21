//! GPU kernel form of the IR: the loop nest after block/warp mapping.

use std::fmt::Write as _;

use super::ops::{BufferRef, FuncArg, GlobalBuffer, Item, ValueId};
use super::print::{memref_str, Printer};
use super::types::MemRefType;

/// Grid and block shape of a mapped kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LaunchConfig {
    pub grid_x: i64,
    pub grid_y: i64,
    pub warps_x: i64,
    pub warps_y: i64,
}

pub const THREADS_PER_WARP: i64 = 32;

impl LaunchConfig {
    pub fn warps_per_block(&self) -> i64 {
        self.warps_x * self.warps_y
    }

    pub fn block_threads(&self) -> i64 {
        self.warps_per_block() * THREADS_PER_WARP
    }

    pub fn blocks(&self) -> i64 {
        self.grid_x * self.grid_y
    }
}

/// Hardware-id values bound implicitly in a kernel body: block x/y, warp
/// x/y within the block, and the linear thread id within the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HwIds {
    pub bx: ValueId,
    pub by: ValueId,
    pub wx: ValueId,
    pub wy: ValueId,
    pub tid: ValueId,
}

impl HwIds {
    pub fn all(&self) -> [ValueId; 5] {
        [self.bx, self.by, self.wx, self.wy, self.tid]
    }
}

/// A GPU-mapped kernel: block/warp loops consumed into hardware ids, shared
/// buffers carried along, sequential loops left in the body.
#[derive(Debug, Clone, PartialEq)]
pub struct GpuKernel {
    pub name: String,
    pub launch: LaunchConfig,
    pub globals: Vec<GlobalBuffer>,
    pub args: Vec<FuncArg>,
    pub hw: HwIds,
    pub body: Vec<Item>,
    pub(crate) next_value: u32,
}

impl GpuKernel {
    pub fn fresh_value(&mut self) -> ValueId {
        let v = ValueId(self.next_value);
        self.next_value += 1;
        v
    }

    pub fn buffer_type(&self, buf: &BufferRef) -> Option<&MemRefType> {
        match buf {
            BufferRef::Arg(i) => self.args.get(*i).map(|a| &a.ty),
            BufferRef::Global(name) => {
                self.globals.iter().find(|g| &g.name == name).map(|g| &g.ty)
            }
        }
    }
}

/// Deterministic textual form, parseable by `parse_artifact_text`.
pub fn print_kernel(k: &GpuKernel) -> String {
    let mut out = String::new();
    out.push_str("module {\n");
    for g in &k.globals {
        let _ = writeln!(out, "  global @{} : {}", g.name, memref_str(&g.ty));
    }
    let mut p = Printer::new(&k.globals, &k.args);
    p.bind(k.hw.bx, "%bx");
    p.bind(k.hw.by, "%by");
    p.bind(k.hw.wx, "%wx");
    p.bind(k.hw.wy, "%wy");
    p.bind(k.hw.tid, "%tid");
    let _ = write!(out, "  kernel @{}(", k.name);
    for (i, a) in k.args.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "%{}: {}", a.name, memref_str(&a.ty));
    }
    let _ = writeln!(
        out,
        ") grid({}, {}) warps({}, {}) {{",
        k.launch.grid_x, k.launch.grid_y, k.launch.warps_x, k.launch.warps_y
    );
    p.print_items(&k.body, &mut out, 2);
    out.push_str("  }\n}\n");
    out
}
