use std::collections::BTreeSet;

use thiserror::Error;

use super::{
    ArrayDecl, BinOp, Bound, CmpOp, Cond, Expr, KernelIR, LValue, Loc, Loop, ReduceOp, Stmt,
    MAX_DEPTH,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{loc}: {msg}")]
pub struct ParseError {
    pub loc: Loc,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(i64),
    Sym(&'static str),
    Eof,
}

const SYMS: [&str; 25] = [
    "..", "==", "!=", "<=", ">=", "<<", ">>", "{", "}", "[", "]", "(", ")", "=", "<", ">", "+",
    "-", "*", "/", "%", "&", "|", "^", ",",
];

fn lex(src: &str) -> Result<Vec<(Tok, Loc)>, ParseError> {
    let mut out = Vec::new();
    for (ln, line) in src.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        let bytes = line.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let loc = Loc { line: ln + 1, col: i + 1 };
            let c = bytes[i];
            if c.is_ascii_whitespace() || c == b';' {
                i += 1;
            } else if c.is_ascii_alphabetic() || c == b'_' {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(line[start..i].to_string()), loc));
            } else if c.is_ascii_digit() {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let text = line[start..i].replace('_', "");
                let v = match text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
                    Some(h) => i64::from_str_radix(h, 16),
                    None => text.parse(),
                };
                let v = v.map_err(|_| ParseError { loc, msg: format!("bad integer `{text}`") })?;
                out.push((Tok::Int(v), loc));
            } else if let Some(s) = SYMS.iter().find(|s| line[i..].starts_with(**s)) {
                out.push((Tok::Sym(s), loc));
                i += s.len();
            } else {
                return Err(ParseError { loc, msg: format!("unexpected character `{}`", c as char) });
            }
        }
    }
    let end = Loc { line: src.lines().count() + 1, col: 1 };
    out.push((Tok::Eof, end));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, Loc)>,
    pos: usize,
    ir: KernelIR,
    tables: BTreeSet<String>,
    vars: Vec<String>,
}

/// Parses kernel source into a [`KernelIR`].
pub fn parse_kernel(src: &str) -> Result<KernelIR, ParseError> {
    let mut p = Parser { toks: lex(src)?, pos: 0, ir: KernelIR::default(), tables: BTreeSet::new(), vars: Vec::new() };
    p.program()?;
    Ok(p.ir)
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn loc(&self) -> Loc {
        self.toks[self.pos].1
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if t != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { loc: self.loc(), msg: msg.into() })
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == s)
    }

    fn expect(&mut self, s: &str) -> Result<(), ParseError> {
        if self.is_sym(s) {
            self.next();
            Ok(())
        } else {
            self.err(format!("expected `{s}`, found {}", describe(self.peek())))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.next();
                Ok(s)
            }
            t => self.err(format!("expected identifier, found {}", describe(&t))),
        }
    }

    fn known(&self, name: &str) -> bool {
        self.ir.consts.contains_key(name)
            || self.ir.is_param(name)
            || self.ir.array(name).is_some()
            || self.ir.is_scalar(name)
            || self.vars.iter().any(|v| v == name)
    }

    fn fresh(&self, name: &str) -> Result<(), ParseError> {
        if KEYWORDS.contains(&name) {
            return self.err(format!("`{name}` is a keyword"));
        }
        if self.known(name) {
            return self.err(format!("`{name}` is already defined"));
        }
        Ok(())
    }

    fn program(&mut self) -> Result<(), ParseError> {
        loop {
            let loc = self.loc();
            match self.next() {
                Tok::Eof => return Ok(()),
                Tok::Ident(kw) => match kw.as_str() {
                    "const" => {
                        let name = self.ident_fresh()?;
                        self.expect("=")?;
                        let neg = self.is_sym("-");
                        if neg {
                            self.next();
                        }
                        let v = self.int()?;
                        self.ir.consts.insert(name, if neg { -v } else { v });
                    }
                    "param" => {
                        let name = self.ident_fresh()?;
                        self.ir.params.push(name);
                    }
                    "array" | "table" => {
                        let name = self.ident_fresh()?;
                        self.expect("[")?;
                        let len = self.size()?;
                        self.expect("]")?;
                        if kw == "table" {
                            self.tables.insert(name.clone());
                        }
                        self.ir.arrays.push(ArrayDecl { name, len });
                    }
                    "scalar" => {
                        let name = self.ident_fresh()?;
                        self.ir.scalars.push(name);
                    }
                    "for" => {
                        let l = self.for_loop(loc, 1)?;
                        self.ir.loops.push(l);
                    }
                    other => {
                        return Err(ParseError {
                            loc,
                            msg: format!("expected a declaration or `for` at top level, found `{other}`"),
                        })
                    }
                },
                t => return Err(ParseError { loc, msg: format!("unexpected {}", describe(&t)) }),
            }
        }
    }

    fn ident_fresh(&mut self) -> Result<String, ParseError> {
        let loc = self.loc();
        let name = self.ident()?;
        self.fresh(&name).map_err(|e| ParseError { loc, ..e })?;
        Ok(name)
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.next();
                Ok(v)
            }
            t => self.err(format!("expected integer, found {}", describe(&t))),
        }
    }

    /// Positive size: literal or const name.
    fn size(&mut self) -> Result<u32, ParseError> {
        let loc = self.loc();
        let v = match self.peek().clone() {
            Tok::Int(v) => {
                self.next();
                v
            }
            Tok::Ident(n) => {
                self.next();
                match self.ir.consts.get(&n) {
                    Some(&v) => v,
                    None => return Err(ParseError { loc, msg: format!("`{n}` is not a constant") }),
                }
            }
            t => return self.err(format!("expected size, found {}", describe(&t))),
        };
        if !(1..=i32::MAX as i64).contains(&v) {
            return Err(ParseError { loc, msg: format!("size {v} must be positive") });
        }
        Ok(v as u32)
    }

    fn for_loop(&mut self, loc: Loc, depth: usize) -> Result<Loop, ParseError> {
        if depth > MAX_DEPTH {
            return Err(ParseError { loc, msg: format!("loop nesting deeper than {MAX_DEPTH}") });
        }
        let var = self.ident_fresh()?;
        if !self.is_kw("in") {
            return self.err("expected `in`");
        }
        self.next();
        let lo_loc = self.loc();
        if self.int()? != 0 {
            return Err(ParseError { loc: lo_loc, msg: "loops must start at 0".into() });
        }
        self.expect("..")?;
        let bloc = self.loc();
        let bound = match self.peek().clone() {
            Tok::Ident(n) if self.ir.is_param(&n) => {
                self.next();
                Bound::Param(n)
            }
            Tok::Ident(n) => Bound::Named(n, self.size()?),
            _ => Bound::Const(self.size()?),
        };
        let _ = bloc;
        self.vars.push(var.clone());
        let body = self.block(depth)?;
        self.vars.pop();
        Ok(Loop { var, bound, body, depth, loc })
    }

    fn block(&mut self, depth: usize) -> Result<Vec<Stmt>, ParseError> {
        self.expect("{")?;
        let mut body = Vec::new();
        while !self.is_sym("}") {
            if *self.peek() == Tok::Eof {
                return self.err("unterminated block");
            }
            body.push(self.stmt(depth)?);
        }
        self.next();
        Ok(body)
    }

    fn stmt(&mut self, depth: usize) -> Result<Stmt, ParseError> {
        let loc = self.loc();
        let name = self.ident()?;
        match name.as_str() {
            "for" => return Ok(Stmt::For(self.for_loop(loc, depth + 1)?)),
            "break" => return Ok(Stmt::Break(loc)),
            "continue" => return Ok(Stmt::Continue(loc)),
            "if" => {
                let lhs = self.expr()?;
                let op = match self.next() {
                    Tok::Sym("==") => CmpOp::Eq,
                    Tok::Sym("!=") => CmpOp::Ne,
                    Tok::Sym("<") => CmpOp::Lt,
                    Tok::Sym("<=") => CmpOp::Le,
                    Tok::Sym(">") => CmpOp::Gt,
                    Tok::Sym(">=") => CmpOp::Ge,
                    _ => return Err(ParseError { loc, msg: "expected comparison in `if`".into() }),
                };
                let rhs = self.expr()?;
                let then_body = self.if_block(depth)?;
                let else_body = if self.is_kw("else") {
                    self.next();
                    self.if_block(depth)?
                } else {
                    Vec::new()
                };
                return Ok(Stmt::If { cond: Cond { op, lhs, rhs }, then_body, else_body, loc });
            }
            _ => {}
        }
        if !self.known(&name) {
            return Err(ParseError { loc, msg: format!("unknown name `{name}`") });
        }
        let target = if self.is_sym("[") {
            if self.ir.array(&name).is_none() {
                return Err(ParseError { loc, msg: format!("`{name}` is not an array") });
            }
            if self.tables.contains(&name) {
                return Err(ParseError { loc, msg: format!("table `{name}` is read-only") });
            }
            self.next();
            let idx = self.expr()?;
            self.expect("]")?;
            LValue::Elem(name, idx)
        } else {
            if self.ir.array(&name).is_some() {
                return Err(ParseError { loc, msg: format!("array `{name}` needs a subscript") });
            }
            LValue::Name(name)
        };
        let op = match self.peek().clone() {
            Tok::Sym("=") => None,
            Tok::Ident(r) if r == "reduce" => {
                self.next();
                Some(match self.next() {
                    Tok::Sym("+") => ReduceOp::Add,
                    Tok::Sym("^") => ReduceOp::Xor,
                    Tok::Sym("|") => ReduceOp::Or,
                    Tok::Sym("&") => ReduceOp::And,
                    _ => return Err(ParseError { loc, msg: "expected `+`, `^`, `|` or `&` after `reduce`".into() }),
                })
            }
            Tok::Ident(r) if r == "reducemin" => {
                self.next();
                Some(ReduceOp::Min)
            }
            Tok::Ident(r) if r == "reducemax" => {
                self.next();
                Some(ReduceOp::Max)
            }
            t => return self.err(format!("expected `=` or a reduction, found {}", describe(&t))),
        };
        self.expect("=")?;
        let value = self.expr()?;
        Ok(match op {
            None => Stmt::Assign { target, value, loc },
            Some(op) => Stmt::Reduce { target, op, value, loc },
        })
    }

    fn if_block(&mut self, depth: usize) -> Result<Vec<Stmt>, ParseError> {
        let body = self.block(depth)?;
        if let Some(Stmt::For(l)) = body.iter().find(|s| matches!(s, Stmt::For(_))) {
            return Err(ParseError { loc: l.loc, msg: "loops inside `if` are not supported".into() });
        }
        Ok(body)
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.binary(0)
    }

    fn binary(&mut self, level: usize) -> Result<Expr, ParseError> {
        const LEVELS: [&[(&str, BinOp)]; 5] = [
            &[("|", BinOp::Or)],
            &[("^", BinOp::Xor)],
            &[("&", BinOp::And)],
            &[("<<", BinOp::Shl), (">>", BinOp::Shr)],
            &[("+", BinOp::Add), ("-", BinOp::Sub)],
        ];
        const MUL: &[(&str, BinOp)] = &[("*", BinOp::Mul), ("/", BinOp::Div), ("%", BinOp::Rem)];
        let ops = if level < LEVELS.len() { LEVELS[level] } else if level == LEVELS.len() { MUL } else {
            return self.unary();
        };
        let mut lhs = self.binary(level + 1)?;
        'outer: loop {
            for (s, op) in ops {
                if self.is_sym(s) {
                    self.next();
                    let rhs = self.binary(level + 1)?;
                    lhs = Expr::Bin(*op, Box::new(lhs), Box::new(rhs));
                    continue 'outer;
                }
            }
            return Ok(lhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        let loc = self.loc();
        match self.next() {
            Tok::Sym("-") => Ok(match self.unary()? {
                Expr::Int(v) => Expr::Int(-v),
                e => Expr::Neg(Box::new(e)),
            }),
            Tok::Sym("(") => {
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Tok::Int(v) => Ok(Expr::Int(v)),
            Tok::Ident(n) => {
                if self.ir.array(&n).is_some() {
                    self.expect("[")?;
                    let idx = self.expr()?;
                    self.expect("]")?;
                    Ok(Expr::Load(n, Box::new(idx)))
                } else if self.known(&n) {
                    Ok(Expr::Name(n))
                } else {
                    Err(ParseError { loc, msg: format!("unknown name `{n}`") })
                }
            }
            t => Err(ParseError { loc, msg: format!("expected expression, found {}", describe(&t)) }),
        }
    }
}

const KEYWORDS: [&str; 14] = [
    "const", "param", "array", "table", "scalar", "for", "in", "if", "else", "break", "continue",
    "reduce", "reducemin", "reducemax",
];

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Int(v) => format!("`{v}`"),
        Tok::Sym(s) => format!("`{s}`"),
        Tok::Eof => "end of input".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::IndexMap;

    const MAC: &str = "\
# dot product
const N = 16
array a[N]
array w[N]
scalar s
for i in 0..N {
    s reduce+ = a[i] * w[i]
}
";

    #[test]
    fn parses_mac() {
        let ir = parse_kernel(MAC).unwrap();
        assert_eq!(ir.loops.len(), 1);
        let sums = ir.loop_summaries();
        assert_eq!(sums.len(), 1);
        assert_eq!(sums[0].bound, Bound::Named("N".into(), 16));
        assert_eq!(sums[0].reductions, vec![("s".to_string(), ReduceOp::Add)]);
        for (_, m, w) in &sums[0].accesses {
            assert!(!w);
            assert!(matches!(m, IndexMap::Affine { .. }));
            assert_eq!(m.coef("i"), 1);
        }
    }

    #[test]
    fn precedence() {
        let src = "scalar s\nfor i in 0..4 { s = 1 + 2 * 3 << 1 }";
        let ir = parse_kernel(src).unwrap();
        let Stmt::Assign { value, .. } = &ir.loops[0].body[0] else { panic!() };
        // (1 + 2*3) << 1
        let e = Expr::Bin(
            BinOp::Shl,
            Box::new(Expr::Bin(
                BinOp::Add,
                Box::new(Expr::Int(1)),
                Box::new(Expr::Bin(BinOp::Mul, Box::new(Expr::Int(2)), Box::new(Expr::Int(3)))),
            )),
            Box::new(Expr::Int(1)),
        );
        assert_eq!(*value, e);
    }

    #[test]
    fn errors_carry_location() {
        let e = parse_kernel("array a[4]\nfor i in 0..4 {\n  a[i] = b\n}").unwrap_err();
        assert_eq!(e.loc, Loc { line: 3, col: 10 });
        let e = parse_kernel("for i in 1..4 { }").unwrap_err();
        assert!(e.msg.contains("start at 0"));
        let e = parse_kernel("table t[4]\nfor i in 0..4 { t[i] = 1 }").unwrap_err();
        assert!(e.msg.contains("read-only"));
        let deep = "scalar s\nfor a in 0..2 { for b in 0..2 { for c in 0..2 { for d in 0..2 { s = 1 } } } }";
        assert!(parse_kernel(deep).unwrap_err().msg.contains("deeper"));
    }

    #[test]
    fn param_bound_and_else() {
        let src = "param M\narray x[64]\nfor i in 0..M { if x[i] < 0 { x[i] = 0 } else { x[i] = 1 } }";
        let ir = parse_kernel(src).unwrap();
        assert_eq!(ir.loops[0].bound, Bound::Param("M".into()));
    }
}
