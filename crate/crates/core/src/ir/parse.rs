//! Parser for the textual IR.
//!
//! The grammar mirrors the printer output exactly; see the crate docs for a
//! summary. Syntax errors carry line/column; `parse_ir` additionally runs
//! the verifier so ill-typed modules are rejected with diagnostics.

use std::collections::HashMap;

use super::expr::{AffineExpr, AffineMap};
use super::kernel::{GpuKernel, HwIds, LaunchConfig};
use super::ops::*;
use super::types::{ElemType, FragRole, FragmentType, MemRefType, MemorySpace, ValueType};
use super::verify::verify_module;

#[derive(Debug, Clone, thiserror::Error)]
pub enum IrTextError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("verification failed:\n{0}")]
    Verify(String),
}

/// Parse a textual module and verify it.
pub fn parse_ir(text: &str) -> Result<Module, IrTextError> {
    let m = parse_module_text(text)?;
    verify_module(&m).map_err(|d| IrTextError::Verify(d.to_string()))?;
    Ok(m)
}

/// Parse without verification (used to build negative verifier tests).
pub fn parse_module_text(text: &str) -> Result<Module, IrTextError> {
    match parse_artifact_text(text)? {
        Artifact::Module(m) => Ok(m),
        Artifact::Kernel(_) => Err(IrTextError::Syntax {
            line: 1,
            col: 1,
            msg: "expected an affine module, found a gpu kernel".into(),
        }),
    }
}

/// Either kind of IR artifact the pipeline can dump.
#[derive(Debug, Clone)]
pub enum Artifact {
    Module(Module),
    Kernel(GpuKernel),
}

/// Parse a dump that may hold either an affine module or a mapped kernel.
pub fn parse_artifact_text(text: &str) -> Result<Artifact, IrTextError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, idx: 0 };
    p.parse_artifact()
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Value(String),
    Global(String),
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Lt,
    Gt,
    Comma,
    Colon,
    Eq,
    Plus,
    Minus,
    Star,
    Arrow,
    X,
}

struct Sp {
    tok: Tok,
    line: usize,
    col: usize,
}

fn err(line: usize, col: usize, msg: impl Into<String>) -> IrTextError {
    IrTextError::Syntax { line, col, msg: msg.into() }
}

fn lex(text: &str) -> Result<Vec<Sp>, IrTextError> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    let mut line = 1usize;
    let mut col = 1usize;

    macro_rules! push {
        ($t:expr, $l:expr, $c:expr) => {
            out.push(Sp { tok: $t, line: $l, col: $c })
        };
    }

    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        let adv = |i: &mut usize, line: &mut usize, col: &mut usize, n: usize| {
            for _ in 0..n {
                if chars[*i] == '\n' {
                    *line += 1;
                    *col = 1;
                } else {
                    *col += 1;
                }
                *i += 1;
            }
        };
        match c {
            ' ' | '\t' | '\r' | '\n' => adv(&mut i, &mut line, &mut col, 1),
            '/' if i + 1 < chars.len() && chars[i + 1] == '/' => {
                while i < chars.len() && chars[i] != '\n' {
                    adv(&mut i, &mut line, &mut col, 1);
                }
            }
            '{' => {
                push!(Tok::LBrace, l0, c0);
                adv(&mut i, &mut line, &mut col, 1);
            }
            '}' => {
                push!(Tok::RBrace, l0, c0);
                adv(&mut i, &mut line, &mut col, 1);
            }
            '(' => {
                push!(Tok::LParen, l0, c0);
                adv(&mut i, &mut line, &mut col, 1);
            }
            ')' => {
                push!(Tok::RParen, l0, c0);
                adv(&mut i, &mut line, &mut col, 1);
            }
            '[' => {
                push!(Tok::LBracket, l0, c0);
                adv(&mut i, &mut line, &mut col, 1);
            }
            ']' => {
                push!(Tok::RBracket, l0, c0);
                adv(&mut i, &mut line, &mut col, 1);
            }
            '<' => {
                push!(Tok::Lt, l0, c0);
                adv(&mut i, &mut line, &mut col, 1);
            }
            '>' => {
                push!(Tok::Gt, l0, c0);
                adv(&mut i, &mut line, &mut col, 1);
            }
            ',' => {
                push!(Tok::Comma, l0, c0);
                adv(&mut i, &mut line, &mut col, 1);
            }
            ':' => {
                push!(Tok::Colon, l0, c0);
                adv(&mut i, &mut line, &mut col, 1);
            }
            '=' => {
                push!(Tok::Eq, l0, c0);
                adv(&mut i, &mut line, &mut col, 1);
            }
            '+' => {
                push!(Tok::Plus, l0, c0);
                adv(&mut i, &mut line, &mut col, 1);
            }
            '*' => {
                push!(Tok::Star, l0, c0);
                adv(&mut i, &mut line, &mut col, 1);
            }
            '-' => {
                if i + 1 < chars.len() && chars[i + 1] == '>' {
                    push!(Tok::Arrow, l0, c0);
                    adv(&mut i, &mut line, &mut col, 2);
                } else {
                    push!(Tok::Minus, l0, c0);
                    adv(&mut i, &mut line, &mut col, 1);
                }
            }
            '%' | '@' => {
                let sigil = c;
                adv(&mut i, &mut line, &mut col, 1);
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    adv(&mut i, &mut line, &mut col, 1);
                }
                if i == start {
                    return Err(err(l0, c0, format!("expected name after '{sigil}'")));
                }
                let name: String = chars[start..i].iter().collect();
                if sigil == '%' {
                    push!(Tok::Value(name), l0, c0);
                } else {
                    push!(Tok::Global(name), l0, c0);
                }
            }
            'x' if i + 1 < chars.len()
                && (chars[i + 1].is_ascii_digit() || is_elem_ahead(&chars, i + 1)) =>
            {
                // Dimension separator inside shaped types: 128x64xf16.
                push!(Tok::X, l0, c0);
                adv(&mut i, &mut line, &mut col, 1);
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    adv(&mut i, &mut line, &mut col, 1);
                }
                let mut is_float = false;
                if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                    is_float = true;
                    adv(&mut i, &mut line, &mut col, 1);
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        adv(&mut i, &mut line, &mut col, 1);
                    }
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '-' || chars[j] == '+') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        is_float = true;
                        while i < j {
                            adv(&mut i, &mut line, &mut col, 1);
                        }
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            adv(&mut i, &mut line, &mut col, 1);
                        }
                    }
                }
                let s: String = chars[start..i].iter().collect();
                if is_float {
                    let v: f64 = s.parse().map_err(|_| err(l0, c0, format!("bad float '{s}'")))?;
                    push!(Tok::Float(v), l0, c0);
                } else {
                    let v: i64 = s.parse().map_err(|_| err(l0, c0, format!("bad integer '{s}'")))?;
                    push!(Tok::Int(v), l0, c0);
                }
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '.')
                {
                    adv(&mut i, &mut line, &mut col, 1);
                }
                let s: String = chars[start..i].iter().collect();
                push!(Tok::Ident(s), l0, c0);
            }
            other => return Err(err(l0, c0, format!("unexpected character '{other}'"))),
        }
    }
    Ok(out)
}

fn is_elem_ahead(chars: &[char], at: usize) -> bool {
    // "f16" or "f32" immediately after an 'x' separator.
    let rest: String = chars[at..chars.len().min(at + 3)].iter().collect();
    rest == "f16" || rest == "f32"
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser {
    toks: Vec<Sp>,
    idx: usize,
}

/// Per-function parsing state: value names and buffer names in scope.
struct Scope {
    values: HashMap<String, ValueId>,
    args: HashMap<String, usize>,
    next_value: u32,
}

impl Scope {
    fn new() -> Self {
        Scope { values: HashMap::new(), args: HashMap::new(), next_value: 0 }
    }

    fn define(&mut self, name: &str, line: usize, col: usize) -> Result<ValueId, IrTextError> {
        if self.values.contains_key(name) {
            return Err(err(line, col, format!("value %{name} redefined")));
        }
        let v = ValueId(self.next_value);
        self.next_value += 1;
        self.values.insert(name.to_string(), v);
        Ok(v)
    }

    fn lookup(&self, name: &str, line: usize, col: usize) -> Result<ValueId, IrTextError> {
        self.values
            .get(name)
            .copied()
            .ok_or_else(|| err(line, col, format!("unknown value %{name}")))
    }
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.idx).map(|s| &s.tok)
    }

    fn pos(&self) -> (usize, usize) {
        self.toks
            .get(self.idx)
            .map(|s| (s.line, s.col))
            .unwrap_or_else(|| self.toks.last().map(|s| (s.line, s.col + 1)).unwrap_or((1, 1)))
    }

    fn bump(&mut self) -> Option<&Sp> {
        let s = self.toks.get(self.idx);
        if s.is_some() {
            self.idx += 1;
        }
        s
    }

    fn expect(&mut self, t: &Tok, what: &str) -> Result<(), IrTextError> {
        let (l, c) = self.pos();
        match self.bump() {
            Some(s) if &s.tok == t => Ok(()),
            Some(s) => Err(err(s.line, s.col, format!("expected {what}, found {:?}", s.tok))),
            None => Err(err(l, c, format!("expected {what}, found end of input"))),
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), IrTextError> {
        let (l, c) = self.pos();
        match self.bump() {
            Some(Sp { tok: Tok::Ident(s), .. }) if s == kw => Ok(()),
            Some(s) => Err(err(s.line, s.col, format!("expected '{kw}', found {:?}", s.tok))),
            None => Err(err(l, c, format!("expected '{kw}', found end of input"))),
        }
    }

    fn expect_int(&mut self, what: &str) -> Result<i64, IrTextError> {
        let (l, c) = self.pos();
        match self.bump() {
            Some(Sp { tok: Tok::Int(v), .. }) => Ok(*v),
            Some(s) => Err(err(s.line, s.col, format!("expected {what}, found {:?}", s.tok))),
            None => Err(err(l, c, format!("expected {what}"))),
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<String, IrTextError> {
        let (l, c) = self.pos();
        match self.bump() {
            Some(Sp { tok: Tok::Ident(s), .. }) => Ok(s.clone()),
            Some(s) => Err(err(s.line, s.col, format!("expected {what}, found {:?}", s.tok))),
            None => Err(err(l, c, format!("expected {what}"))),
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Ident(s)) if s == kw) {
            self.idx += 1;
            true
        } else {
            false
        }
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == Some(t) {
            self.idx += 1;
            true
        } else {
            false
        }
    }

    fn parse_artifact(&mut self) -> Result<Artifact, IrTextError> {
        self.expect_kw("module")?;
        self.expect(&Tok::LBrace, "'{'")?;
        let mut globals = Vec::new();
        let mut funcs = Vec::new();
        let mut kernel: Option<GpuKernel> = None;
        loop {
            if self.eat(&Tok::RBrace) {
                break;
            }
            let (l, c) = self.pos();
            if self.eat_kw("global") {
                let name = match self.bump() {
                    Some(Sp { tok: Tok::Global(n), .. }) => n.clone(),
                    _ => return Err(err(l, c, "expected '@name' after 'global'")),
                };
                self.expect(&Tok::Colon, "':'")?;
                let ty = self.parse_memref()?;
                globals.push(GlobalBuffer { name, ty });
            } else if self.eat_kw("func") {
                funcs.push(self.parse_func(&globals)?);
            } else if self.eat_kw("kernel") {
                kernel = Some(self.parse_kernel(&globals)?);
            } else {
                return Err(err(l, c, "expected 'global', 'func', 'kernel' or '}'"));
            }
        }
        match kernel {
            Some(mut k) => {
                k.globals = globals;
                Ok(Artifact::Kernel(k))
            }
            None => Ok(Artifact::Module(Module { globals, funcs })),
        }
    }

    fn parse_params(&mut self) -> Result<(Vec<FuncArg>, Vec<String>), IrTextError> {
        self.expect(&Tok::LParen, "'('")?;
        let mut args = Vec::new();
        let mut names = Vec::new();
        if !self.eat(&Tok::RParen) {
            loop {
                let (l, c) = self.pos();
                let name = match self.bump() {
                    Some(Sp { tok: Tok::Value(n), .. }) => n.clone(),
                    _ => return Err(err(l, c, "expected '%name' parameter")),
                };
                self.expect(&Tok::Colon, "':'")?;
                let ty = self.parse_memref()?;
                names.push(name.clone());
                args.push(FuncArg { name, ty });
                if self.eat(&Tok::RParen) {
                    break;
                }
                self.expect(&Tok::Comma, "','")?;
            }
        }
        Ok((args, names))
    }

    fn parse_func(&mut self, globals: &[GlobalBuffer]) -> Result<Func, IrTextError> {
        let (l, c) = self.pos();
        let name = match self.bump() {
            Some(Sp { tok: Tok::Global(n), .. }) => n.clone(),
            _ => return Err(err(l, c, "expected '@name' after 'func'")),
        };
        let (args, arg_names) = self.parse_params()?;
        let mut scope = Scope::new();
        for (i, n) in arg_names.iter().enumerate() {
            scope.args.insert(n.clone(), i);
        }
        self.expect(&Tok::LBrace, "'{'")?;
        let body = self.parse_items(&mut scope, globals, &args)?;
        let mut f = Func::new(name, args);
        f.body = body;
        f.bump_next(scope.next_value);
        Ok(f)
    }

    fn parse_kernel(&mut self, globals: &[GlobalBuffer]) -> Result<GpuKernel, IrTextError> {
        let (l, c) = self.pos();
        let name = match self.bump() {
            Some(Sp { tok: Tok::Global(n), .. }) => n.clone(),
            _ => return Err(err(l, c, "expected '@name' after 'kernel'")),
        };
        let (args, arg_names) = self.parse_params()?;
        self.expect_kw("grid")?;
        self.expect(&Tok::LParen, "'('")?;
        let grid_x = self.expect_int("grid x")?;
        self.expect(&Tok::Comma, "','")?;
        let grid_y = self.expect_int("grid y")?;
        self.expect(&Tok::RParen, "')'")?;
        self.expect_kw("warps")?;
        self.expect(&Tok::LParen, "'('")?;
        let warps_x = self.expect_int("warps x")?;
        self.expect(&Tok::Comma, "','")?;
        let warps_y = self.expect_int("warps y")?;
        self.expect(&Tok::RParen, "')'")?;

        let mut scope = Scope::new();
        for (i, n) in arg_names.iter().enumerate() {
            scope.args.insert(n.clone(), i);
        }
        let hw = HwIds {
            bx: scope.define("bx", l, c)?,
            by: scope.define("by", l, c)?,
            wx: scope.define("wx", l, c)?,
            wy: scope.define("wy", l, c)?,
            tid: scope.define("tid", l, c)?,
        };
        self.expect(&Tok::LBrace, "'{'")?;
        let body = self.parse_items(&mut scope, globals, &args)?;
        Ok(GpuKernel {
            name,
            launch: LaunchConfig { grid_x, grid_y, warps_x, warps_y },
            globals: vec![],
            args,
            hw,
            body,
            next_value: scope.next_value,
        })
    }

    fn parse_items(
        &mut self,
        scope: &mut Scope,
        globals: &[GlobalBuffer],
        args: &[FuncArg],
    ) -> Result<Vec<Item>, IrTextError> {
        let mut items = Vec::new();
        loop {
            if self.eat(&Tok::RBrace) {
                return Ok(items);
            }
            let (l, c) = self.pos();
            match self.peek() {
                Some(Tok::Ident(kw)) => {
                    let kw = kw.clone();
                    match kw.as_str() {
                        "for" => {
                            self.idx += 1;
                            items.push(self.parse_loop(vec![], scope, globals, args)?);
                        }
                        "store" | "vstore" | "wmma.store" | "barrier" | "yield" => {
                            self.idx += 1;
                            items.push(self.parse_op_after_kw(&kw, None, scope, globals, args)?);
                        }
                        other => {
                            return Err(err(l, c, format!("unexpected '{other}'")));
                        }
                    }
                }
                Some(Tok::Value(_)) => {
                    // result list '=' (op | for)
                    let mut result_names = Vec::new();
                    loop {
                        let (l2, c2) = self.pos();
                        match self.bump() {
                            Some(Sp { tok: Tok::Value(n), .. }) => result_names.push((n.clone(), l2, c2)),
                            _ => return Err(err(l2, c2, "expected '%name'")),
                        }
                        if self.eat(&Tok::Comma) {
                            continue;
                        }
                        break;
                    }
                    self.expect(&Tok::Eq, "'='")?;
                    if self.eat_kw("for") {
                        let mut results = Vec::new();
                        for (n, l2, c2) in &result_names {
                            results.push(scope.define(n, *l2, *c2)?);
                        }
                        items.push(self.parse_loop(results, scope, globals, args)?);
                    } else {
                        if result_names.len() != 1 {
                            return Err(err(l, c, "ops produce exactly one result"));
                        }
                        let kw = self.expect_ident("op name")?;
                        let (n, l2, c2) = &result_names[0];
                        let r = scope.define(n, *l2, *c2)?;
                        items.push(self.parse_op_after_kw(&kw, Some(r), scope, globals, args)?);
                    }
                }
                Some(other) => {
                    return Err(err(l, c, format!("unexpected {other:?} in block")));
                }
                None => return Err(err(l, c, "unexpected end of input, missing '}'")),
            }
        }
    }

    fn parse_loop(
        &mut self,
        results: Vec<ValueId>,
        scope: &mut Scope,
        globals: &[GlobalBuffer],
        args: &[FuncArg],
    ) -> Result<Item, IrTextError> {
        let (l, c) = self.pos();
        let iv_name = match self.bump() {
            Some(Sp { tok: Tok::Value(n), .. }) => n.clone(),
            _ => return Err(err(l, c, "expected induction variable")),
        };
        self.expect(&Tok::Eq, "'='")?;
        let lower = self.parse_bound(scope)?;
        self.expect_kw("to")?;
        let upper = self.parse_bound(scope)?;
        self.expect_kw("step")?;
        let step = self.expect_int("step")?;

        let mut attrs = LoopAttrs::default();
        if self.eat(&Tok::LBracket) {
            loop {
                let (al, ac) = self.pos();
                let name = self.expect_ident("attribute")?;
                match name.as_str() {
                    "parallel" => attrs.parallel = true,
                    "gpu" => {
                        self.expect(&Tok::Eq, "'='")?;
                        let v = self.expect_ident("gpu dimension")?;
                        attrs.gpu = Some(match v.as_str() {
                            "block_x" => GpuDim::BlockX,
                            "block_y" => GpuDim::BlockY,
                            "warp_x" => GpuDim::WarpX,
                            "warp_y" => GpuDim::WarpY,
                            other => return Err(err(al, ac, format!("unknown gpu dim '{other}'"))),
                        });
                    }
                    "tag" => {
                        self.expect(&Tok::Eq, "'='")?;
                        let v = self.expect_ident("tag")?;
                        attrs.tag = Some(match v.as_str() {
                            "copy_a" => LoopTag::CopyA,
                            "copy_b" => LoopTag::CopyB,
                            other => return Err(err(al, ac, format!("unknown tag '{other}'"))),
                        });
                    }
                    other => return Err(err(al, ac, format!("unknown attribute '{other}'"))),
                }
                if self.eat(&Tok::Comma) {
                    continue;
                }
                self.expect(&Tok::RBracket, "']'")?;
                break;
            }
        }

        let mut iter_args = Vec::new();
        if self.eat_kw("iter_args") {
            self.expect(&Tok::LParen, "'('")?;
            loop {
                let (al, ac) = self.pos();
                let arg_name = match self.bump() {
                    Some(Sp { tok: Tok::Value(n), .. }) => n.clone(),
                    _ => return Err(err(al, ac, "expected iter_arg name")),
                };
                self.expect(&Tok::Eq, "'='")?;
                let (il, ic) = self.pos();
                let init_name = match self.bump() {
                    Some(Sp { tok: Tok::Value(n), .. }) => n.clone(),
                    _ => return Err(err(il, ic, "expected iter_arg init value")),
                };
                self.expect(&Tok::Colon, "':'")?;
                let ty = self.parse_value_type()?;
                let init = scope.lookup(&init_name, il, ic)?;
                let arg = scope.define(&arg_name, al, ac)?;
                iter_args.push(IterArg { arg, init, ty });
                if self.eat(&Tok::Comma) {
                    continue;
                }
                self.expect(&Tok::RParen, "')'")?;
                break;
            }
        }

        let iv = scope.define(&iv_name, l, c)?;
        self.expect(&Tok::LBrace, "'{'")?;
        let body = self.parse_items(scope, globals, args)?;
        Ok(Item::Loop(Box::new(Loop { iv, lower, upper, step, iter_args, results, body, attrs })))
    }

    fn parse_op_after_kw(
        &mut self,
        kw: &str,
        result: Option<ValueId>,
        scope: &mut Scope,
        globals: &[GlobalBuffer],
        args: &[FuncArg],
    ) -> Result<Item, IrTextError> {
        let (l, c) = self.pos();
        let kind = match kw {
            "const" => {
                let neg = self.eat(&Tok::Minus);
                let value = match self.bump() {
                    Some(Sp { tok: Tok::Float(v), .. }) => *v,
                    Some(Sp { tok: Tok::Int(v), .. }) => *v as f64,
                    _ => return Err(err(l, c, "expected constant value")),
                };
                let value = if neg { -value } else { value };
                self.expect(&Tok::Colon, "':'")?;
                let ty = self.parse_elem()?;
                OpKind::ConstF { value, ty }
            }
            "load" | "vload" => {
                let (buf, at) = self.parse_buf_subscript(scope, globals, args)?;
                self.expect(&Tok::Colon, "':'")?;
                self.check_mem_ty(&buf, globals, args)?;
                if kw == "vload" {
                    self.expect(&Tok::Comma, "','")?;
                    let (width, _) = self.parse_vector_type()?;
                    OpKind::VectorLoad { buf, at, width }
                } else {
                    OpKind::Load { buf, at }
                }
            }
            "store" | "vstore" => {
                let value = self.parse_value_use(scope)?;
                self.expect(&Tok::Comma, "','")?;
                let (buf, at) = self.parse_buf_subscript(scope, globals, args)?;
                self.expect(&Tok::Colon, "':'")?;
                self.check_mem_ty(&buf, globals, args)?;
                if kw == "vstore" {
                    self.expect(&Tok::Comma, "','")?;
                    let (width, _) = self.parse_vector_type()?;
                    OpKind::VectorStore { value, buf, at, width }
                } else {
                    OpKind::Store { value, buf, at }
                }
            }
            "mulf" | "addf" => {
                let lhs = self.parse_value_use(scope)?;
                self.expect(&Tok::Comma, "','")?;
                let rhs = self.parse_value_use(scope)?;
                self.expect(&Tok::Colon, "':'")?;
                let ty = self.parse_elem()?;
                if kw == "mulf" {
                    OpKind::MulF { lhs, rhs, ty }
                } else {
                    OpKind::AddF { lhs, rhs, ty }
                }
            }
            "extf" => {
                let value = self.parse_value_use(scope)?;
                OpKind::ExtF { value }
            }
            "wmma.load" => {
                let (buf, at) = self.parse_buf_subscript(scope, globals, args)?;
                self.expect(&Tok::LBrace, "'{'")?;
                self.expect_kw("ld")?;
                self.expect(&Tok::Eq, "'='")?;
                let ld = self.expect_int("leading dimension")?;
                self.expect(&Tok::Comma, "','")?;
                self.expect_kw("role")?;
                self.expect(&Tok::Eq, "'='")?;
                let role = self.parse_role()?;
                self.expect(&Tok::RBrace, "'}'")?;
                self.expect(&Tok::Colon, "':'")?;
                self.check_mem_ty(&buf, globals, args)?;
                self.expect(&Tok::Arrow, "'->'")?;
                let frag = self.parse_frag_type()?;
                if frag.role != role {
                    return Err(err(l, c, "role attribute and fragment type disagree"));
                }
                OpKind::WmmaLoad { buf, at, ld, frag }
            }
            "wmma.compute" => {
                let a = self.parse_value_use(scope)?;
                self.expect(&Tok::Comma, "','")?;
                let b = self.parse_value_use(scope)?;
                self.expect(&Tok::Comma, "','")?;
                let acc = self.parse_value_use(scope)?;
                self.expect(&Tok::Colon, "':'")?;
                let frag = self.parse_frag_type()?;
                OpKind::WmmaCompute { a, b, acc, frag }
            }
            "wmma.store" => {
                let value = self.parse_value_use(scope)?;
                self.expect(&Tok::Comma, "','")?;
                let (buf, at) = self.parse_buf_subscript(scope, globals, args)?;
                self.expect(&Tok::LBrace, "'{'")?;
                self.expect_kw("ld")?;
                self.expect(&Tok::Eq, "'='")?;
                let ld = self.expect_int("leading dimension")?;
                self.expect(&Tok::RBrace, "'}'")?;
                self.expect(&Tok::Colon, "':'")?;
                self.check_mem_ty(&buf, globals, args)?;
                OpKind::WmmaStore { value, buf, at, ld }
            }
            "barrier" => OpKind::Barrier,
            "yield" => {
                let mut values = Vec::new();
                if matches!(self.peek(), Some(Tok::Value(_))) {
                    loop {
                        values.push(self.parse_value_use(scope)?);
                        if !self.eat(&Tok::Comma) {
                            break;
                        }
                    }
                }
                OpKind::Yield { values }
            }
            other => return Err(err(l, c, format!("unknown op '{other}'"))),
        };
        Ok(Item::Op(Op::new(result, kind)))
    }

    fn parse_value_use(&mut self, scope: &Scope) -> Result<ValueId, IrTextError> {
        let (l, c) = self.pos();
        match self.bump() {
            Some(Sp { tok: Tok::Value(n), .. }) => {
                let n = n.clone();
                scope.lookup(&n, l, c)
            }
            _ => Err(err(l, c, "expected '%value'")),
        }
    }

    fn parse_buf_subscript(
        &mut self,
        scope: &Scope,
        globals: &[GlobalBuffer],
        args: &[FuncArg],
    ) -> Result<(BufferRef, Subscript), IrTextError> {
        let (l, c) = self.pos();
        let buf = match self.bump() {
            Some(Sp { tok: Tok::Global(n), .. }) => {
                let n = n.clone();
                if !globals.iter().any(|g| g.name == n) {
                    return Err(err(l, c, format!("unknown global @{n}")));
                }
                BufferRef::Global(n)
            }
            Some(Sp { tok: Tok::Value(n), .. }) => {
                let n = n.clone();
                match scope.args.get(&n) {
                    Some(i) => BufferRef::Arg(*i),
                    None => return Err(err(l, c, format!("'%{n}' is not a buffer argument"))),
                }
            }
            _ => return Err(err(l, c, "expected buffer ('@global' or '%arg')")),
        };
        let _ = args;
        self.expect(&Tok::LBracket, "'['")?;
        let mut operands: Vec<ValueId> = Vec::new();
        let mut exprs = Vec::new();
        if !self.eat(&Tok::RBracket) {
            loop {
                let e = self.parse_expr(scope, &mut operands)?;
                exprs.push(e);
                if self.eat(&Tok::Comma) {
                    continue;
                }
                self.expect(&Tok::RBracket, "']'")?;
                break;
            }
        }
        Ok((buf, Subscript::from_exprs(operands, exprs)))
    }

    fn check_mem_ty(
        &mut self,
        buf: &BufferRef,
        globals: &[GlobalBuffer],
        args: &[FuncArg],
    ) -> Result<(), IrTextError> {
        let (l, c) = self.pos();
        let declared = match buf {
            BufferRef::Arg(i) => args[*i].ty.clone(),
            BufferRef::Global(n) => globals.iter().find(|g| &g.name == n).unwrap().ty.clone(),
        };
        let written = self.parse_memref()?;
        if written != declared {
            return Err(err(l, c, "memref type annotation does not match buffer declaration"));
        }
        Ok(())
    }

    fn parse_bound(&mut self, scope: &Scope) -> Result<AffineBound, IrTextError> {
        let mut operands = Vec::new();
        let expr = self.parse_expr(scope, &mut operands)?;
        Ok(AffineBound::from_expr(operands, expr))
    }

    // expr := term (('+'|'-') term)*
    fn parse_expr(
        &mut self,
        scope: &Scope,
        operands: &mut Vec<ValueId>,
    ) -> Result<AffineExpr, IrTextError> {
        let mut e = self.parse_term(scope, operands)?;
        loop {
            if self.eat(&Tok::Plus) {
                let t = self.parse_term(scope, operands)?;
                e = AffineExpr::Add(Box::new(e), Box::new(t));
            } else if self.eat(&Tok::Minus) {
                let t = self.parse_term(scope, operands)?;
                e = AffineExpr::Add(Box::new(e), Box::new(AffineExpr::Mul(Box::new(t), -1)));
            } else {
                return Ok(e);
            }
        }
    }

    // term := atom (('*' int) | ('floordiv' int) | ('mod' int))*
    fn parse_term(
        &mut self,
        scope: &Scope,
        operands: &mut Vec<ValueId>,
    ) -> Result<AffineExpr, IrTextError> {
        let mut e = self.parse_atom(scope, operands)?;
        loop {
            if self.eat(&Tok::Star) {
                let c = self.parse_signed_int()?;
                e = AffineExpr::Mul(Box::new(e), c);
            } else if self.eat_kw("floordiv") {
                let c = self.parse_signed_int()?;
                e = AffineExpr::FloorDiv(Box::new(e), c);
            } else if self.eat_kw("mod") {
                let c = self.parse_signed_int()?;
                e = AffineExpr::Mod(Box::new(e), c);
            } else {
                return Ok(e);
            }
        }
    }

    fn parse_signed_int(&mut self) -> Result<i64, IrTextError> {
        if self.eat(&Tok::Minus) {
            Ok(-self.expect_int("integer")?)
        } else {
            self.expect_int("integer")
        }
    }

    fn parse_atom(
        &mut self,
        scope: &Scope,
        operands: &mut Vec<ValueId>,
    ) -> Result<AffineExpr, IrTextError> {
        let (l, c) = self.pos();
        match self.peek() {
            Some(Tok::Int(_)) => {
                let v = self.expect_int("integer")?;
                Ok(AffineExpr::Const(v))
            }
            Some(Tok::Minus) => {
                self.idx += 1;
                let v = self.expect_int("integer")?;
                Ok(AffineExpr::Const(-v))
            }
            Some(Tok::Value(_)) => {
                let v = self.parse_value_use(scope)?;
                let idx = match operands.iter().position(|o| *o == v) {
                    Some(i) => i,
                    None => {
                        operands.push(v);
                        operands.len() - 1
                    }
                };
                Ok(AffineExpr::Dim(idx))
            }
            Some(Tok::LParen) => {
                self.idx += 1;
                let e = self.parse_expr(scope, operands)?;
                self.expect(&Tok::RParen, "')'")?;
                Ok(e)
            }
            _ => Err(err(l, c, "expected expression atom")),
        }
    }

    // d0-style expressions inside layout maps
    fn parse_dim_expr(&mut self, num_dims: usize) -> Result<AffineExpr, IrTextError> {
        let mut e = self.parse_dim_term(num_dims)?;
        loop {
            if self.eat(&Tok::Plus) {
                let t = self.parse_dim_term(num_dims)?;
                e = AffineExpr::Add(Box::new(e), Box::new(t));
            } else if self.eat(&Tok::Minus) {
                let t = self.parse_dim_term(num_dims)?;
                e = AffineExpr::Add(Box::new(e), Box::new(AffineExpr::Mul(Box::new(t), -1)));
            } else {
                return Ok(e);
            }
        }
    }

    fn parse_dim_term(&mut self, num_dims: usize) -> Result<AffineExpr, IrTextError> {
        let mut e = self.parse_dim_atom(num_dims)?;
        loop {
            if self.eat(&Tok::Star) {
                let c = self.parse_signed_int()?;
                e = AffineExpr::Mul(Box::new(e), c);
            } else if self.eat_kw("floordiv") {
                let c = self.parse_signed_int()?;
                e = AffineExpr::FloorDiv(Box::new(e), c);
            } else if self.eat_kw("mod") {
                let c = self.parse_signed_int()?;
                e = AffineExpr::Mod(Box::new(e), c);
            } else {
                return Ok(e);
            }
        }
    }

    fn parse_dim_atom(&mut self, num_dims: usize) -> Result<AffineExpr, IrTextError> {
        let (l, c) = self.pos();
        match self.bump() {
            Some(Sp { tok: Tok::Int(v), .. }) => Ok(AffineExpr::Const(*v)),
            Some(Sp { tok: Tok::Minus, .. }) => {
                let v = self.expect_int("integer")?;
                Ok(AffineExpr::Const(-v))
            }
            Some(Sp { tok: Tok::LParen, .. }) => {
                let e = self.parse_dim_expr(num_dims)?;
                self.expect(&Tok::RParen, "')'")?;
                Ok(e)
            }
            Some(Sp { tok: Tok::Ident(s), .. }) => {
                let s = s.clone();
                if let Some(n) = s.strip_prefix('d').and_then(|n| n.parse::<usize>().ok()) {
                    if n >= num_dims {
                        return Err(err(l, c, format!("d{n} out of range")));
                    }
                    Ok(AffineExpr::Dim(n))
                } else {
                    Err(err(l, c, format!("expected dim reference, found '{s}'")))
                }
            }
            _ => Err(err(l, c, "expected layout expression atom")),
        }
    }

    fn parse_elem(&mut self) -> Result<ElemType, IrTextError> {
        let (l, c) = self.pos();
        let s = self.expect_ident("element type")?;
        match s.as_str() {
            "f16" => Ok(ElemType::F16),
            "f32" => Ok(ElemType::F32),
            other => Err(err(l, c, format!("unknown element type '{other}'"))),
        }
    }

    fn parse_role(&mut self) -> Result<FragRole, IrTextError> {
        let (l, c) = self.pos();
        let s = self.expect_ident("fragment role")?;
        match s.as_str() {
            "a" => Ok(FragRole::MatA),
            "b" => Ok(FragRole::MatB),
            "acc" => Ok(FragRole::Accum),
            other => Err(err(l, c, format!("unknown fragment role '{other}'"))),
        }
    }

    // memref<128x64xf16, shared[, (d0, d1) -> (...)]>
    fn parse_memref(&mut self) -> Result<MemRefType, IrTextError> {
        self.expect_kw("memref")?;
        self.expect(&Tok::Lt, "'<'")?;
        let mut shape = Vec::new();
        let elem;
        loop {
            shape.push(self.expect_int("dimension")?);
            self.expect(&Tok::X, "'x'")?;
            if matches!(self.peek(), Some(Tok::Ident(s)) if s == "f16" || s == "f32") {
                elem = self.parse_elem()?;
                break;
            }
        }
        self.expect(&Tok::Comma, "','")?;
        let (l, c) = self.pos();
        let s = self.expect_ident("memory space")?;
        let space = match s.as_str() {
            "global" => MemorySpace::Global,
            "shared" => MemorySpace::Shared,
            "fragment" => MemorySpace::Fragment,
            other => return Err(err(l, c, format!("unknown memory space '{other}'"))),
        };
        let layout = if self.eat(&Tok::Comma) {
            self.parse_layout_map(shape.len())?
        } else {
            MemRefType::strided_layout(&shape, 0)
        };
        self.expect(&Tok::Gt, "'>'")?;
        Ok(MemRefType { shape, elem, layout, space })
    }

    fn parse_layout_map(&mut self, rank: usize) -> Result<AffineMap, IrTextError> {
        self.expect(&Tok::LParen, "'('")?;
        let mut dims = 0usize;
        if !self.eat(&Tok::RParen) {
            loop {
                let (l, c) = self.pos();
                let s = self.expect_ident("dim")?;
                if s != format!("d{dims}") {
                    return Err(err(l, c, format!("expected d{dims}, found '{s}'")));
                }
                dims += 1;
                if self.eat(&Tok::Comma) {
                    continue;
                }
                self.expect(&Tok::RParen, "')'")?;
                break;
            }
        }
        let (l, c) = self.pos();
        if dims != rank {
            return Err(err(l, c, format!("layout arity {dims} does not match rank {rank}")));
        }
        self.expect(&Tok::Arrow, "'->'")?;
        self.expect(&Tok::LParen, "'('")?;
        let mut results = Vec::new();
        loop {
            results.push(self.parse_dim_expr(dims)?);
            if self.eat(&Tok::Comma) {
                continue;
            }
            self.expect(&Tok::RParen, "')'")?;
            break;
        }
        Ok(AffineMap::new(dims, 0, results))
    }

    fn parse_vector_type(&mut self) -> Result<(usize, ElemType), IrTextError> {
        self.expect_kw("vector")?;
        self.expect(&Tok::Lt, "'<'")?;
        let w = self.expect_int("vector width")?;
        self.expect(&Tok::X, "'x'")?;
        let e = self.parse_elem()?;
        self.expect(&Tok::Gt, "'>'")?;
        Ok((w as usize, e))
    }

    fn parse_frag_type(&mut self) -> Result<FragmentType, IrTextError> {
        self.expect_kw("frag")?;
        self.expect(&Tok::Lt, "'<'")?;
        let role = self.parse_role()?;
        self.expect(&Tok::Comma, "','")?;
        let m = self.expect_int("m")?;
        self.expect(&Tok::X, "'x'")?;
        let n = self.expect_int("n")?;
        self.expect(&Tok::X, "'x'")?;
        let k = self.expect_int("k")?;
        self.expect(&Tok::Comma, "','")?;
        let elem = self.parse_elem()?;
        self.expect(&Tok::Gt, "'>'")?;
        Ok(FragmentType { role, m, n, k, elem })
    }

    fn parse_value_type(&mut self) -> Result<ValueType, IrTextError> {
        match self.peek() {
            Some(Tok::Ident(s)) if s == "index" => {
                self.idx += 1;
                Ok(ValueType::Index)
            }
            Some(Tok::Ident(s)) if s == "vector" => {
                let (w, e) = self.parse_vector_type()?;
                Ok(ValueType::Vector(e, w))
            }
            Some(Tok::Ident(s)) if s == "frag" => Ok(ValueType::Frag(self.parse_frag_type()?)),
            _ => Ok(ValueType::Scalar(self.parse_elem()?)),
        }
    }
}
