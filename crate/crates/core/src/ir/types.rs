//! Element, buffer and fragment types.

use std::fmt;

use super::expr::{AffineExpr, AffineMap};

/// Scalar element type. Inputs are always F16; accumulation is F16 or F32.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElemType {
    F16,
    F32,
}

impl ElemType {
    pub fn bytes(self) -> i64 {
        match self {
            ElemType::F16 => 2,
            ElemType::F32 => 4,
        }
    }

    pub fn bits(self) -> i64 {
        self.bytes() * 8
    }
}

impl fmt::Display for ElemType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElemType::F16 => write!(f, "f16"),
            ElemType::F32 => write!(f, "f32"),
        }
    }
}

/// Address space of a shaped buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MemorySpace {
    Global,
    Shared,
    Fragment,
}

impl fmt::Display for MemorySpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MemorySpace::Global => write!(f, "global"),
            MemorySpace::Shared => write!(f, "shared"),
            MemorySpace::Fragment => write!(f, "fragment"),
        }
    }
}

/// A shaped buffer type: logical shape, element type, layout map from
/// logical indices to a linear element offset, and address space.
///
/// Padding a buffer leaves the logical shape alone and widens the strides in
/// the layout map, so subscripts elsewhere in the IR never change.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MemRefType {
    pub shape: Vec<i64>,
    pub elem: ElemType,
    pub layout: AffineMap,
    pub space: MemorySpace,
}

impl MemRefType {
    /// Dense row-major buffer.
    pub fn row_major(shape: Vec<i64>, elem: ElemType, space: MemorySpace) -> Self {
        let layout = Self::strided_layout(&shape, 0);
        MemRefType { shape, elem, layout, space }
    }

    /// Row-major layout whose leading dimension (the stride of dim 0 for
    /// rank 2) is widened by `pad` elements.
    pub fn strided_layout(shape: &[i64], pad: i64) -> AffineMap {
        let rank = shape.len();
        let mut strides = vec![1i64; rank];
        for d in (0..rank.saturating_sub(1)).rev() {
            let mut extent = shape[d + 1];
            if d + 1 == rank - 1 {
                extent += pad;
            }
            strides[d] = strides[d + 1] * extent;
        }
        let mut expr = AffineExpr::cst(0);
        for d in 0..rank {
            expr = expr.add(AffineExpr::dim(d).mul(strides[d]));
        }
        AffineMap::new(rank, 0, vec![expr])
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Logical element count.
    pub fn logical_elems(&self) -> i64 {
        self.shape.iter().product()
    }

    /// Allocated element count: the layout evaluated one full stride past
    /// the last row. Covers whole padded rows for the strided layouts this
    /// IR constructs.
    pub fn alloc_elems(&self) -> i64 {
        if self.shape.is_empty() {
            return 1;
        }
        let mut idx = vec![0i64; self.rank()];
        idx[0] = self.shape[0];
        self.layout.eval_one(&idx)
    }

    pub fn alloc_bytes(&self) -> i64 {
        self.alloc_elems() * self.elem.bytes()
    }

    /// Linear element offset of a logical index.
    pub fn linearize(&self, idx: &[i64]) -> i64 {
        self.layout.eval_one(idx)
    }

    /// Stride in elements between consecutive values of the leading
    /// dimension (rank >= 2), i.e. the leading dimension of the allocation.
    pub fn row_stride(&self) -> i64 {
        if self.rank() < 2 {
            return 1;
        }
        let a = vec![0i64; self.rank()];
        let mut b = vec![0i64; self.rank()];
        b[0] = 1;
        self.layout.eval_one(&b) - self.layout.eval_one(&a)
    }
}

/// Operand role of a WMMA fragment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FragRole {
    MatA,
    MatB,
    Accum,
}

impl fmt::Display for FragRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FragRole::MatA => write!(f, "a"),
            FragRole::MatB => write!(f, "b"),
            FragRole::Accum => write!(f, "acc"),
        }
    }
}

/// A warp-collective matrix fragment. The intrinsic shape is 16x16x16; the
/// element-to-thread mapping is opaque and never modeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FragmentType {
    pub role: FragRole,
    pub m: i64,
    pub n: i64,
    pub k: i64,
    pub elem: ElemType,
}

/// The intrinsic tile size of the matrix ops.
pub const WMMA_M: i64 = 16;
pub const WMMA_N: i64 = 16;
pub const WMMA_K: i64 = 16;

impl FragmentType {
    pub fn new(role: FragRole, elem: ElemType) -> Self {
        FragmentType { role, m: WMMA_M, n: WMMA_N, k: WMMA_K, elem }
    }

    /// Rows x cols of the fragment as stored/loaded (16x16 for every role
    /// at the intrinsic size used here).
    pub fn store_shape(&self) -> (i64, i64) {
        (16, 16)
    }
}

/// Type of an SSA value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueType {
    Index,
    Scalar(ElemType),
    Vector(ElemType, usize),
    Frag(FragmentType),
}

/// Matmul problem: C(MxN) += A(MxK) * B(KxN), A and B in F16.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProblemConfig {
    pub m: i64,
    pub n: i64,
    pub k: i64,
    pub accum: ElemType,
}

impl ProblemConfig {
    pub fn new(m: i64, n: i64, k: i64, accum: ElemType) -> Self {
        ProblemConfig { m, n, k, accum }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.m <= 0 || self.n <= 0 || self.k <= 0 {
            return Err(format!("problem sizes must be positive, got {}x{}x{}", self.m, self.n, self.k));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_linearization() {
        let t = MemRefType::row_major(vec![128, 64], ElemType::F16, MemorySpace::Shared);
        assert_eq!(t.linearize(&[0, 0]), 0);
        assert_eq!(t.linearize(&[1, 0]), 64);
        assert_eq!(t.linearize(&[2, 3]), 131);
        assert_eq!(t.alloc_elems(), 128 * 64);
        assert_eq!(t.row_stride(), 64);
    }

    #[test]
    fn padded_layout_widens_allocation_only() {
        let layout = MemRefType::strided_layout(&[128, 64], 8);
        let t = MemRefType {
            shape: vec![128, 64],
            elem: ElemType::F16,
            layout,
            space: MemorySpace::Shared,
        };
        assert_eq!(t.logical_elems(), 128 * 64);
        assert_eq!(t.alloc_elems(), 128 * 72);
        assert_eq!(t.row_stride(), 72);
        assert_eq!(t.linearize(&[1, 0]), 72);
        // Alloc covers the logical footprint.
        assert!(t.alloc_elems() >= t.logical_elems());
    }
}
