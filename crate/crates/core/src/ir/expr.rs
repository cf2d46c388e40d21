//! Quasi-affine index expressions and maps.
//!
//! Expressions are built from dimension/symbol references and integer
//! constants with addition, multiplication by a constant, floor division by
//! a constant, and modulo by a constant. Loop bounds, memory subscripts and
//! memref layouts are all expressed as [`AffineMap`]s over these.

use std::collections::BTreeMap;
use std::fmt;

/// A quasi-affine expression. Multiplication, floordiv and mod take one
/// constant operand; divisors are strictly positive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AffineExpr {
    Dim(usize),
    Sym(usize),
    Const(i64),
    Add(Box<AffineExpr>, Box<AffineExpr>),
    Mul(Box<AffineExpr>, i64),
    FloorDiv(Box<AffineExpr>, i64),
    Mod(Box<AffineExpr>, i64),
}

impl AffineExpr {
    pub fn dim(i: usize) -> Self {
        AffineExpr::Dim(i)
    }

    pub fn sym(i: usize) -> Self {
        AffineExpr::Sym(i)
    }

    pub fn cst(c: i64) -> Self {
        AffineExpr::Const(c)
    }

    pub fn add(self, rhs: AffineExpr) -> Self {
        match (&self, &rhs) {
            (AffineExpr::Const(a), AffineExpr::Const(b)) => AffineExpr::Const(a + b),
            (AffineExpr::Const(0), _) => rhs,
            (_, AffineExpr::Const(0)) => self,
            _ => AffineExpr::Add(Box::new(self), Box::new(rhs)),
        }
    }

    pub fn sub(self, rhs: AffineExpr) -> Self {
        self.add(rhs.mul(-1))
    }

    pub fn mul(self, c: i64) -> Self {
        match (&self, c) {
            (AffineExpr::Const(a), _) => AffineExpr::Const(a * c),
            (_, 1) => self,
            (_, 0) => AffineExpr::Const(0),
            _ => AffineExpr::Mul(Box::new(self), c),
        }
    }

    pub fn floordiv(self, c: i64) -> Self {
        assert!(c > 0, "floordiv divisor must be positive");
        if let AffineExpr::Const(a) = self {
            return AffineExpr::Const(a.div_euclid(c));
        }
        AffineExpr::FloorDiv(Box::new(self), c)
    }

    pub fn modulo(self, c: i64) -> Self {
        assert!(c > 0, "mod divisor must be positive");
        if let AffineExpr::Const(a) = self {
            return AffineExpr::Const(a.rem_euclid(c));
        }
        AffineExpr::Mod(Box::new(self), c)
    }

    /// Evaluate with concrete dimension and symbol values.
    pub fn eval(&self, dims: &[i64], syms: &[i64]) -> i64 {
        match self {
            AffineExpr::Dim(i) => dims[*i],
            AffineExpr::Sym(i) => syms[*i],
            AffineExpr::Const(c) => *c,
            AffineExpr::Add(a, b) => a.eval(dims, syms) + b.eval(dims, syms),
            AffineExpr::Mul(a, c) => a.eval(dims, syms) * c,
            AffineExpr::FloorDiv(a, c) => a.eval(dims, syms).div_euclid(*c),
            AffineExpr::Mod(a, c) => a.eval(dims, syms).rem_euclid(*c),
        }
    }

    /// Check dim/symbol references stay below the declared arities.
    pub fn check_arity(&self, num_dims: usize, num_syms: usize) -> Result<(), String> {
        match self {
            AffineExpr::Dim(i) if *i >= num_dims => {
                Err(format!("dim d{i} out of range (arity {num_dims})"))
            }
            AffineExpr::Sym(i) if *i >= num_syms => {
                Err(format!("symbol s{i} out of range (arity {num_syms})"))
            }
            AffineExpr::Dim(_) | AffineExpr::Sym(_) | AffineExpr::Const(_) => Ok(()),
            AffineExpr::Add(a, b) => {
                a.check_arity(num_dims, num_syms)?;
                b.check_arity(num_dims, num_syms)
            }
            AffineExpr::Mul(a, _) | AffineExpr::FloorDiv(a, _) | AffineExpr::Mod(a, _) => {
                a.check_arity(num_dims, num_syms)
            }
        }
    }

    /// Replace every `Dim(i)` with `repl[i]`.
    pub fn substitute_dims(&self, repl: &[AffineExpr]) -> AffineExpr {
        match self {
            AffineExpr::Dim(i) => repl[*i].clone(),
            AffineExpr::Sym(_) | AffineExpr::Const(_) => self.clone(),
            AffineExpr::Add(a, b) => a.substitute_dims(repl).add(b.substitute_dims(repl)),
            AffineExpr::Mul(a, c) => a.substitute_dims(repl).mul(*c),
            AffineExpr::FloorDiv(a, c) => a.substitute_dims(repl).floordiv(*c),
            AffineExpr::Mod(a, c) => a.substitute_dims(repl).modulo(*c),
        }
    }

    /// Canonical form: linear terms sorted by dim/symbol index, folded
    /// constants, floordiv/mod arguments canonicalized recursively.
    pub fn simplify(&self) -> AffineExpr {
        let nf = NormForm::of(self);
        nf.rebuild()
    }

    /// Decompose into per-dim linear coefficients and a constant. `None` if
    /// the expression contains floordiv/mod or symbols.
    pub fn linear_coeffs(&self) -> Option<(BTreeMap<usize, i64>, i64)> {
        let nf = NormForm::of(self);
        let mut coeffs = BTreeMap::new();
        for (term, c) in &nf.terms {
            match term {
                Term::Dim(i) => {
                    coeffs.insert(*i, *c);
                }
                _ => return None,
            }
        }
        Some((coeffs, nf.constant))
    }

    /// All dimension indices referenced, ascending.
    pub fn dims_used(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_dims(&mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    fn collect_dims(&self, out: &mut Vec<usize>) {
        match self {
            AffineExpr::Dim(i) => out.push(*i),
            AffineExpr::Sym(_) | AffineExpr::Const(_) => {}
            AffineExpr::Add(a, b) => {
                a.collect_dims(out);
                b.collect_dims(out);
            }
            AffineExpr::Mul(a, _) | AffineExpr::FloorDiv(a, _) | AffineExpr::Mod(a, _) => {
                a.collect_dims(out)
            }
        }
    }

    /// Render with caller-supplied dimension names (used by the printer for
    /// both `d0`-style layout maps and `%value`-style subscripts).
    pub fn fmt_with(&self, f: &mut fmt::Formatter<'_>, name: &dyn Fn(usize) -> String) -> fmt::Result {
        self.fmt_prec(f, name, 0)
    }

    // prec 0: additive context, prec 1: multiplicative context
    fn fmt_prec(
        &self,
        f: &mut fmt::Formatter<'_>,
        name: &dyn Fn(usize) -> String,
        prec: u8,
    ) -> fmt::Result {
        match self {
            AffineExpr::Dim(i) => write!(f, "{}", name(*i)),
            AffineExpr::Sym(i) => write!(f, "s{i}"),
            AffineExpr::Const(c) => {
                if *c < 0 && prec > 0 {
                    write!(f, "({c})")
                } else {
                    write!(f, "{c}")
                }
            }
            AffineExpr::Add(a, b) => {
                let parens = prec > 0;
                if parens {
                    write!(f, "(")?;
                }
                a.fmt_prec(f, name, 0)?;
                // Print `x + y * -1` as `x - y`.
                match b.as_ref() {
                    AffineExpr::Mul(inner, -1) => {
                        write!(f, " - ")?;
                        inner.fmt_prec(f, name, 1)?;
                    }
                    AffineExpr::Const(c) if *c < 0 => {
                        write!(f, " - {}", -c)?;
                    }
                    other => {
                        write!(f, " + ")?;
                        other.fmt_prec(f, name, 0)?;
                    }
                }
                if parens {
                    write!(f, ")")?;
                }
                Ok(())
            }
            AffineExpr::Mul(a, c) => {
                a.fmt_prec(f, name, 1)?;
                write!(f, " * {c}")
            }
            AffineExpr::FloorDiv(a, c) => {
                a.fmt_prec(f, name, 1)?;
                write!(f, " floordiv {c}")
            }
            AffineExpr::Mod(a, c) => {
                a.fmt_prec(f, name, 1)?;
                write!(f, " mod {c}")
            }
        }
    }
}

/// Sum-of-terms normal form used for canonicalization and linear analysis.
#[derive(Debug)]
struct NormForm {
    terms: Vec<(Term, i64)>,
    constant: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Term {
    Dim(usize),
    Sym(usize),
    FloorDiv(AffineExpr, i64),
    Mod(AffineExpr, i64),
}

impl NormForm {
    fn of(expr: &AffineExpr) -> NormForm {
        let mut acc: BTreeMap<Term, i64> = BTreeMap::new();
        let mut constant = 0i64;
        Self::accumulate(expr, 1, &mut acc, &mut constant);
        let terms = acc.into_iter().filter(|(_, c)| *c != 0).map(|(t, c)| (t, c)).collect();
        NormForm { terms, constant }
    }

    fn accumulate(expr: &AffineExpr, scale: i64, acc: &mut BTreeMap<Term, i64>, constant: &mut i64) {
        match expr {
            AffineExpr::Dim(i) => *acc.entry(Term::Dim(*i)).or_insert(0) += scale,
            AffineExpr::Sym(i) => *acc.entry(Term::Sym(*i)).or_insert(0) += scale,
            AffineExpr::Const(c) => *constant += scale * c,
            AffineExpr::Add(a, b) => {
                Self::accumulate(a, scale, acc, constant);
                Self::accumulate(b, scale, acc, constant);
            }
            AffineExpr::Mul(a, c) => Self::accumulate(a, scale * c, acc, constant),
            AffineExpr::FloorDiv(a, c) => {
                let inner = a.simplify();
                if let AffineExpr::Const(v) = inner {
                    *constant += scale * v.div_euclid(*c);
                } else {
                    *acc.entry(Term::FloorDiv(inner, *c)).or_insert(0) += scale;
                }
            }
            AffineExpr::Mod(a, c) => {
                let inner = a.simplify();
                if let AffineExpr::Const(v) = inner {
                    *constant += scale * v.rem_euclid(*c);
                } else {
                    *acc.entry(Term::Mod(inner, *c)).or_insert(0) += scale;
                }
            }
        }
    }

    fn rebuild(&self) -> AffineExpr {
        let mut out: Option<AffineExpr> = None;
        for (term, coeff) in &self.terms {
            let base = match term {
                Term::Dim(i) => AffineExpr::Dim(*i),
                Term::Sym(i) => AffineExpr::Sym(*i),
                Term::FloorDiv(a, c) => AffineExpr::FloorDiv(Box::new(a.clone()), *c),
                Term::Mod(a, c) => AffineExpr::Mod(Box::new(a.clone()), *c),
            };
            let scaled = base.mul(*coeff);
            out = Some(match out {
                None => scaled,
                Some(prev) => prev.add(scaled),
            });
        }
        match out {
            None => AffineExpr::Const(self.constant),
            Some(e) => e.add(AffineExpr::Const(self.constant)),
        }
    }
}

/// A list of affine expressions over `num_dims` dimensions and `num_syms`
/// symbols.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AffineMap {
    pub num_dims: usize,
    pub num_syms: usize,
    pub results: Vec<AffineExpr>,
}

impl AffineMap {
    pub fn new(num_dims: usize, num_syms: usize, results: Vec<AffineExpr>) -> Self {
        AffineMap { num_dims, num_syms, results }
    }

    /// `(d0, .., dn) -> (d0, .., dn)`
    pub fn identity(rank: usize) -> Self {
        AffineMap::new(rank, 0, (0..rank).map(AffineExpr::Dim).collect())
    }

    /// `() -> (c)`
    pub fn constant(c: i64) -> Self {
        AffineMap::new(0, 0, vec![AffineExpr::Const(c)])
    }

    pub fn num_results(&self) -> usize {
        self.results.len()
    }

    pub fn eval(&self, dims: &[i64]) -> Vec<i64> {
        self.results.iter().map(|e| e.eval(dims, &[])).collect()
    }

    pub fn eval_one(&self, dims: &[i64]) -> i64 {
        debug_assert_eq!(self.results.len(), 1);
        self.results[0].eval(dims, &[])
    }

    pub fn check(&self) -> Result<(), String> {
        for (i, e) in self.results.iter().enumerate() {
            e.check_arity(self.num_dims, self.num_syms)
                .map_err(|m| format!("result {i}: {m}"))?;
        }
        Ok(())
    }

    pub fn simplify(&self) -> AffineMap {
        AffineMap::new(
            self.num_dims,
            self.num_syms,
            self.results.iter().map(|e| e.simplify()).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_floor_semantics() {
        let e = AffineExpr::dim(0).floordiv(8);
        assert_eq!(e.eval(&[-7], &[]), -1);
        assert_eq!(e.eval(&[17], &[]), 2);
        let m = AffineExpr::dim(0).modulo(8);
        assert_eq!(m.eval(&[-7], &[]), 1);
    }

    #[test]
    fn simplify_merges_linear_terms() {
        // d0 + d1*2 + d0*3 + 4 - 4  ->  d0*4 + d1*2
        let e = AffineExpr::dim(0)
            .add(AffineExpr::dim(1).mul(2))
            .add(AffineExpr::dim(0).mul(3))
            .add(AffineExpr::cst(4))
            .add(AffineExpr::cst(-4));
        let s = e.simplify();
        let (coeffs, c) = s.linear_coeffs().unwrap();
        assert_eq!(c, 0);
        assert_eq!(coeffs.get(&0), Some(&4));
        assert_eq!(coeffs.get(&1), Some(&2));
    }

    #[test]
    fn simplify_is_idempotent_and_canonical() {
        let a = AffineExpr::dim(1).add(AffineExpr::dim(0));
        let b = AffineExpr::dim(0).add(AffineExpr::dim(1));
        assert_eq!(a.simplify(), b.simplify());
        assert_eq!(a.simplify().simplify(), a.simplify());
    }

    #[test]
    fn arity_check_catches_out_of_range() {
        let m = AffineMap::new(1, 0, vec![AffineExpr::dim(1)]);
        assert!(m.check().is_err());
    }

    #[test]
    fn substitution_composes() {
        // d0 + 8 with d0 := d1 * 2  ->  d1 * 2 + 8
        let e = AffineExpr::dim(0).add(AffineExpr::cst(8));
        let sub = e.substitute_dims(&[AffineExpr::dim(1).mul(2)]);
        assert_eq!(sub.eval(&[0, 5], &[]), 18);
    }
}
