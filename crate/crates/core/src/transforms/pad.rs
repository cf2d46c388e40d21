//! Leading-dimension padding of the shared tiles.
//!
//! Widens each shared buffer's allocated leading dimension by the padding
//! factor, so successive rows land on shifted bank offsets. Only the layout
//! map changes; logical shapes and every subscript stay untouched.

use crate::ir::{MemRefType, Module};

use super::copies::{A_SMEM, B_SMEM};
use super::{finish_pass, rejected, PassError, PassResult, TileConfig, SHARED_LIMIT_BYTES};

pub const NAME: &str = "pad";

pub fn pad_shared_buffer(m: &Module, cfg: &TileConfig) -> Result<PassResult, PassError> {
    for (name, pad) in [("paddingA", cfg.padding_a), ("paddingB", cfg.padding_b)] {
        if pad % 8 != 0 || pad < 0 {
            return Err(rejected(NAME, format!("{name} = {pad} is not a non-negative multiple of 8")));
        }
    }
    if cfg.padding_a == 0 && cfg.padding_b == 0 {
        return finish_pass(NAME, m, m.clone(), vec!["padding 0, buffers unchanged".into()]);
    }

    let mut out = m.clone();
    let mut padded = 0;
    let mut total_bytes = 0i64;
    for g in out.globals.iter_mut() {
        let pad = match g.name.as_str() {
            A_SMEM => cfg.padding_a,
            B_SMEM => cfg.padding_b,
            _ => 0,
        };
        if pad > 0 {
            g.ty.layout = MemRefType::strided_layout(&g.ty.shape, pad);
            padded += 1;
        }
        total_bytes += g.ty.alloc_bytes();
    }
    if total_bytes > SHARED_LIMIT_BYTES {
        return Err(rejected(
            NAME,
            format!("padded shared footprint {total_bytes} bytes exceeds {SHARED_LIMIT_BYTES}"),
        ));
    }
    finish_pass(NAME, m, out, vec![format!("padded {padded} shared buffers")])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{build_naive_matmul, structural_eq, ElemType, ProblemConfig};
    use crate::transforms::{generate_shared_copies, tile_loop_nest};

    fn staged(cfg: &TileConfig) -> Module {
        let m = build_naive_matmul(&ProblemConfig::new(256, 256, 128, ElemType::F32));
        let tiled = tile_loop_nest(&m, cfg).unwrap().module;
        generate_shared_copies(&tiled, cfg).unwrap().module
    }

    #[test]
    fn widens_allocations_to_reference_shapes() {
        let cfg = TileConfig::new(128, 128, 64, 64, 64);
        let m = staged(&cfg);
        let out = pad_shared_buffer(&m, &cfg).unwrap().module;
        let a = out.global(A_SMEM).unwrap();
        let b = out.global(B_SMEM).unwrap();
        assert_eq!(a.ty.alloc_elems(), 128 * 72);
        assert_eq!(b.ty.alloc_elems(), 64 * 136);
        assert_eq!(a.ty.shape, vec![128, 64]);
        assert_eq!(b.ty.shape, vec![64, 128]);
        assert_eq!((a.ty.alloc_bytes() + b.ty.alloc_bytes()), 35840);
    }

    #[test]
    fn zero_padding_is_identity() {
        let cfg = TileConfig::new(128, 128, 64, 64, 64).with_padding(0);
        let m = staged(&cfg);
        let out = pad_shared_buffer(&m, &cfg).unwrap().module;
        assert!(structural_eq(&m, &out));
    }

    #[test]
    fn rejects_padding_that_overflows_the_budget() {
        // Unpadded 36864 bytes fit; padding by 40 pushes past 48 KB.
        let cfg = TileConfig::new(128, 160, 64, 64, 32).with_padding(40);
        let m = build_naive_matmul(&ProblemConfig::new(256, 320, 128, ElemType::F32));
        let tiled = tile_loop_nest(&m, &cfg).unwrap().module;
        let staged = generate_shared_copies(&tiled, &cfg).unwrap().module;
        let err = pad_shared_buffer(&staged, &cfg).unwrap_err();
        assert!(err.to_string().contains("exceeds"), "{err}");
    }

    #[test]
    fn rejects_unaligned_padding() {
        let mut cfg = TileConfig::new(128, 128, 64, 64, 64);
        cfg.padding_a = 4;
        let m = staged(&TileConfig::new(128, 128, 64, 64, 64));
        assert!(pad_shared_buffer(&m, &cfg).is_err());
    }
}
