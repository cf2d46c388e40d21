//! Verifier diagnostics: the named rules fire on ill-formed modules and
//! every pipeline stage verifies cleanly.

use tcgen_core::ir::{parse_module_text, verify_module, ElemType, ProblemConfig};
use tcgen_core::pipeline::{self, Ir, PipelineOpts};
use tcgen_core::transforms::TileConfig;

fn diags_of(text: &str) -> String {
    let m = parse_module_text(text).expect("parse");
    match verify_module(&m) {
        Ok(()) => String::new(),
        Err(d) => d.to_string(),
    }
}

#[test]
fn naive_matmul_verifies() {
    let m = tcgen_core::ir::build_naive_matmul(&ProblemConfig::new(16, 16, 16, ElemType::F32));
    assert!(verify_module(&m).is_ok());
}

#[test]
fn yield_arity_mismatch_is_diagnosed() {
    let text = "\
module {
  func @f(%C: memref<16x16xf32, global>) {
    %init = wmma.load %C[0, 0] {ld = 16, role = acc} : memref<16x16xf32, global> -> frag<acc, 16x16x16, f32>
    %r = for %k = 0 to 32 step 16 iter_args(%acc = %init : frag<acc, 16x16x16, f32>) {
      yield
    }
    wmma.store %r, %C[0, 0] {ld = 16} : memref<16x16xf32, global>
  }
}
";
    let diags = diags_of(text);
    assert!(diags.contains("yield/iter_args mismatch"), "{diags}");
}

#[test]
fn wrong_fragment_role_is_diagnosed() {
    // The accumulator operand position gets a MatA fragment.
    let text = "\
module {
  func @f(%A: memref<16x16xf16, global>, %B: memref<16x16xf16, global>, %C: memref<16x16xf32, global>) {
    %fa = wmma.load %A[0, 0] {ld = 16, role = a} : memref<16x16xf16, global> -> frag<a, 16x16x16, f16>
    %fb = wmma.load %B[0, 0] {ld = 16, role = b} : memref<16x16xf16, global> -> frag<b, 16x16x16, f16>
    %r = wmma.compute %fb, %fa, %fa : frag<acc, 16x16x16, f32>
    wmma.store %r, %C[0, 0] {ld = 16} : memref<16x16xf32, global>
  }
}
";
    let diags = diags_of(text);
    assert!(diags.contains("wmma-roles"), "{diags}");
}

#[test]
fn use_before_definition_is_diagnosed() {
    // %v is defined inside the first loop and used in a sibling loop.
    let text = "\
module {
  func @f(%X: memref<8x8xf32, global>) {
    for %i = 0 to 8 step 1 {
      %v = load %X[%i, 0] : memref<8x8xf32, global>
      store %v, %X[%i, 1] : memref<8x8xf32, global>
    }
    for %j = 0 to 8 step 1 {
      store %v, %X[%j, 2] : memref<8x8xf32, global>
    }
  }
}
";
    // Name resolution in the parser is flat; scoping is the verifier's job.
    let diags = diags_of(text);
    assert!(diags.contains("dominance"), "{diags}");
}

#[test]
fn leading_dimension_must_match_buffer_stride() {
    let text = "\
module {
  func @f(%C: memref<16x16xf32, global>) {
    %fc = wmma.load %C[0, 0] {ld = 32, role = acc} : memref<16x16xf32, global> -> frag<acc, 16x16x16, f32>
    wmma.store %fc, %C[0, 0] {ld = 16} : memref<16x16xf32, global>
  }
}
";
    let diags = diags_of(text);
    assert!(diags.contains("leading-dimension"), "{diags}");
}

#[test]
fn non_constant_trip_counts_are_diagnosed() {
    // An upper bound over a value the verifier cannot fold against the
    // lower bound.
    let text = "\
module {
  func @f(%X: memref<8x8xf32, global>) {
    for %i = 0 to 8 step 1 {
      for %j = 0 to %i + 1 step 1 {
        %v = load %X[%i, %j] : memref<8x8xf32, global>
        store %v, %X[%i, %j] : memref<8x8xf32, global>
      }
    }
  }
}
";
    let diags = diags_of(text);
    assert!(diags.contains("constant-trip-count"), "{diags}");
}

#[test]
fn only_staging_and_padding_change_shared_allocation() {
    let cfg = TileConfig::new(64, 64, 32, 32, 32);
    let prob = ProblemConfig::new(128, 128, 128, ElemType::F32);
    let mut footprints: Vec<(String, i64)> = Vec::new();
    pipeline::run(&cfg, &prob, &PipelineOpts::default(), &mut |stage, ir| {
        let bytes: i64 = match ir {
            Ir::Affine(m) => m.globals.iter().map(|g| g.ty.alloc_bytes()).sum(),
            Ir::Gpu(k) => k.globals.iter().map(|g| g.ty.alloc_bytes()).sum(),
        };
        footprints.push((stage.name().to_string(), bytes));
    })
    .unwrap();
    let mut prev = 0i64;
    for (name, bytes) in footprints {
        match name.as_str() {
            "copies" => assert!(bytes > prev, "staging must allocate the tiles"),
            "pad" => assert!(bytes > prev, "padding must grow the allocation"),
            _ => assert_eq!(bytes, prev, "{name} changed the shared allocation"),
        }
        prev = bytes;
    }
}

#[test]
fn every_pipeline_stage_verifies() {
    let cfg = TileConfig::new(64, 64, 32, 32, 32);
    let prob = ProblemConfig::new(128, 128, 128, ElemType::F32);
    pipeline::run(&cfg, &prob, &PipelineOpts::default(), &mut |stage, ir| {
        match ir {
            Ir::Affine(m) => assert!(
                verify_module(m).is_ok(),
                "stage {} produced an invalid module",
                stage.name()
            ),
            Ir::Gpu(k) => assert!(
                tcgen_core::ir::verify_kernel(k).is_ok(),
                "stage {} produced an invalid kernel",
                stage.name()
            ),
        }
    })
    .unwrap();
}
