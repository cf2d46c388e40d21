//! Floating-point semantics shared by the interpreter and the GPU machine
//! model.
//!
//! All element values travel through the simulators as `f64`. Whenever a
//! value is produced for a given element type (a scalar op result, a store,
//! or one multiply-accumulate step of a matrix op), it is rounded to that
//! type with round-to-nearest-even. A rounded f16 or f32 value is exactly
//! representable in f64, so buffers can hold plain `f64` without losing the
//! storage semantics.

use half::f16;

use crate::ir::ElemType;

/// Round an f64 to the nearest representable value of `ty` (ties to even).
pub fn round_to(ty: ElemType, value: f64) -> f64 {
    match ty {
        ElemType::F16 => f64::from(f16::from_f64(value)),
        ElemType::F32 => value as f32 as f64,
    }
}

/// One multiply-accumulate step `acc + a * b`, rounded once in the
/// accumulate type. The product of two f16 values is exact in f64.
pub fn mac_step(accum: ElemType, acc: f64, a: f64, b: f64) -> f64 {
    round_to(accum, acc + a * b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f16_rounding_is_nearest_even() {
        // 2049 is exactly between 2048 and 2050 in f16; ties go to even.
        assert_eq!(round_to(ElemType::F16, 2049.0), 2048.0);
        assert_eq!(round_to(ElemType::F16, 2051.0), 2052.0);
        assert_eq!(round_to(ElemType::F16, 0.5), 0.5);
    }

    #[test]
    fn f32_rounding_matches_cast() {
        let x = 0.1f64;
        assert_eq!(round_to(ElemType::F32, x), 0.1f32 as f64);
    }

    #[test]
    fn rounded_values_are_fixed_points() {
        for bits in [0x3c00u16, 0x2e66, 0xbc01, 0x7bff] {
            let v = f64::from(f16::from_bits(bits));
            assert_eq!(round_to(ElemType::F16, v), v);
        }
    }
}
