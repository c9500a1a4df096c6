//! Loop-kernel compiler.
//!
//! Kernels are written in a small loop language (see `docs/kernel-lang.md`),
//! checked against the three permutation legality rules (loop-invariant
//! bound, compile-time index map, no loop-carried dependency other than an
//! associative-commutative reduction) and lowered to either plain RV32IM or
//! PermuteV assembly with identical loop-body instruction counts.

mod legality;
mod lower;
mod parse;

pub use legality::{check_legality, Criterion, LegalityVerdict, Violation};
pub use lower::{lower, LoopLabels, LowerError, Lowered, Layout, Mode, LigAssignment, SCALAR_BASE, ARRAY_BASE};
pub use parse::{parse_kernel, ParseError};

use std::collections::BTreeMap;

/// Source position (1-based line and column).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Loc {
    pub line: usize,
    pub col: usize,
}

impl std::fmt::Display for Loc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// Maximum loop nesting (one LIG slot per level).
pub const MAX_DEPTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReduceOp {
    Add,
    Xor,
    Or,
    And,
    Min,
    Max,
}

impl ReduceOp {
    pub fn apply(self, acc: i32, v: i32) -> i32 {
        match self {
            ReduceOp::Add => acc.wrapping_add(v),
            ReduceOp::Xor => acc ^ v,
            ReduceOp::Or => acc | v,
            ReduceOp::And => acc & v,
            ReduceOp::Min => acc.min(v),
            ReduceOp::Max => acc.max(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    And,
    Or,
    Xor,
    Shl,
    Shr,
}

impl BinOp {
    /// Evaluation with RV32IM semantics (wrapping, M-extension division).
    pub fn eval(self, a: i32, b: i32) -> i32 {
        use crate::isa::Opcode;
        let op = match self {
            BinOp::Add => Opcode::Add,
            BinOp::Sub => Opcode::Sub,
            BinOp::Mul => Opcode::Mul,
            BinOp::Div => Opcode::Div,
            BinOp::Rem => Opcode::Rem,
            BinOp::And => Opcode::And,
            BinOp::Or => Opcode::Or,
            BinOp::Xor => Opcode::Xor,
            BinOp::Shl => Opcode::Sll,
            BinOp::Shr => Opcode::Sra,
        };
        crate::cpu::alu(op, a as u32, b as u32) as i32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn eval(self, a: i32, b: i32) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Int(i64),
    /// Loop variable, scalar, const or param.
    Name(String),
    Load(String, Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LValue {
    Name(String),
    Elem(String, Expr),
}

impl LValue {
    pub fn name(&self) -> &str {
        match self {
            LValue::Name(n) | LValue::Elem(n, _) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cond {
    pub op: CmpOp,
    pub lhs: Expr,
    pub rhs: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Bound {
    Const(u32),
    /// Named compile-time constant.
    Named(String, u32),
    Param(String),
}

impl Bound {
    pub fn name(&self) -> Option<&str> {
        match self {
            Bound::Const(_) => None,
            Bound::Named(n, _) | Bound::Param(n) => Some(n),
        }
    }

    pub fn constant(&self) -> Option<u32> {
        match self {
            Bound::Const(v) | Bound::Named(_, v) => Some(*v),
            Bound::Param(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Loop {
    pub var: String,
    pub bound: Bound,
    pub body: Vec<Stmt>,
    /// 1 for outermost.
    pub depth: usize,
    pub loc: Loc,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    Assign { target: LValue, value: Expr, loc: Loc },
    Reduce { target: LValue, op: ReduceOp, value: Expr, loc: Loc },
    If { cond: Cond, then_body: Vec<Stmt>, else_body: Vec<Stmt>, loc: Loc },
    For(Loop),
    Break(Loc),
    Continue(Loc),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrayDecl {
    pub name: String,
    pub len: u32,
}

/// Parsed kernel.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KernelIR {
    pub consts: BTreeMap<String, i64>,
    pub params: Vec<String>,
    pub arrays: Vec<ArrayDecl>,
    pub scalars: Vec<String>,
    /// Top-level loops, in program order.
    pub loops: Vec<Loop>,
}

/// How an array subscript depends on the enclosing loop variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IndexMap {
    /// `Σ coef[v]·v + constant`, with loop variables in `coefs`.
    Affine { coefs: BTreeMap<String, i64>, constant: i64 },
    /// Subscript goes through another array (`a[t[i]]`).
    Table,
    /// Other compile-time function of the loop variables (e.g. `i*i`).
    Nonlinear,
}

impl IndexMap {
    pub fn coef(&self, var: &str) -> i64 {
        match self {
            IndexMap::Affine { coefs, .. } => coefs.get(var).copied().unwrap_or(0),
            _ => 0,
        }
    }
}

/// Classifies `expr` relative to `loop_vars`. Consts fold to integers;
/// scalars and params make the expression non-affine.
pub fn index_map(expr: &Expr, loop_vars: &[&str], consts: &BTreeMap<String, i64>) -> IndexMap {
    fn walk(
        e: &Expr,
        vars: &[&str],
        consts: &BTreeMap<String, i64>,
    ) -> Result<(BTreeMap<String, i64>, i64), bool> {
        // Err(true) = table-driven, Err(false) = nonlinear
        match e {
            Expr::Int(v) => Ok((BTreeMap::new(), *v)),
            Expr::Name(n) if vars.contains(&n.as_str()) => {
                Ok((BTreeMap::from([(n.clone(), 1)]), 0))
            }
            Expr::Name(n) => consts.get(n).map(|&v| (BTreeMap::new(), v)).ok_or(false),
            Expr::Load(..) => Err(true),
            Expr::Neg(a) => {
                let (c, k) = walk(a, vars, consts)?;
                Ok((c.into_iter().map(|(n, v)| (n, -v)).collect(), -k))
            }
            Expr::Bin(op, a, b) => {
                let l = walk(a, vars, consts);
                let r = walk(b, vars, consts);
                let (l, r) = match (l, r) {
                    (Err(true), _) | (_, Err(true)) => return Err(true),
                    (Err(_), _) | (_, Err(_)) => return Err(false),
                    (Ok(l), Ok(r)) => (l, r),
                };
                match op {
                    BinOp::Add | BinOp::Sub => {
                        let s = if *op == BinOp::Add { 1 } else { -1 };
                        let mut c = l.0;
                        for (n, v) in r.0 {
                            *c.entry(n).or_insert(0) += s * v;
                        }
                        c.retain(|_, v| *v != 0);
                        Ok((c, l.1 + s * r.1))
                    }
                    BinOp::Mul if l.0.is_empty() || r.0.is_empty() => {
                        let (k, (c, off)) = if l.0.is_empty() { (l.1, r) } else { (r.1, l) };
                        let mut c: BTreeMap<String, i64> =
                            c.into_iter().map(|(n, v)| (n, v * k)).collect();
                        c.retain(|_, v| *v != 0);
                        Ok((c, off * k))
                    }
                    BinOp::Shl if r.0.is_empty() && (0..31).contains(&r.1) => {
                        let k = 1i64 << r.1;
                        Ok((l.0.into_iter().map(|(n, v)| (n, v * k)).collect(), l.1 * k))
                    }
                    _ if l.0.is_empty() && r.0.is_empty() => {
                        Ok((BTreeMap::new(), op.eval(l.1 as i32, r.1 as i32) as i64))
                    }
                    _ => Err(false),
                }
            }
        }
    }
    match walk(expr, loop_vars, consts) {
        Ok((coefs, constant)) => IndexMap::Affine { coefs, constant },
        Err(true) => IndexMap::Table,
        Err(false) => IndexMap::Nonlinear,
    }
}

/// Summary of one loop for inspection and reporting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopSummary {
    pub var: String,
    pub depth: usize,
    pub bound: Bound,
    /// Every array access directly in this loop's body: (array, map, is_write).
    pub accesses: Vec<(String, IndexMap, bool)>,
    /// Reduction targets updated directly in this loop's body.
    pub reductions: Vec<(String, ReduceOp)>,
}

impl KernelIR {
    pub fn array(&self, name: &str) -> Option<&ArrayDecl> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn is_scalar(&self, name: &str) -> bool {
        self.scalars.iter().any(|s| s == name)
    }

    pub fn is_param(&self, name: &str) -> bool {
        self.params.iter().any(|s| s == name)
    }

    /// Flattened loop summaries, outer before inner, program order.
    pub fn loop_summaries(&self) -> Vec<LoopSummary> {
        let mut out = Vec::new();
        for l in &self.loops {
            self.summarize(l, &mut Vec::new(), &mut out);
        }
        out
    }

    fn summarize<'a>(&self, l: &'a Loop, vars: &mut Vec<&'a str>, out: &mut Vec<LoopSummary>) {
        vars.push(&l.var);
        let mut s = LoopSummary {
            var: l.var.clone(),
            depth: l.depth,
            bound: l.bound.clone(),
            accesses: Vec::new(),
            reductions: Vec::new(),
        };
        let idx = out.len();
        out.push(s.clone());
        let mut inner = Vec::new();
        collect_direct(&l.body, &mut |stmt| match stmt {
            Stmt::For(child) => inner.push(child),
            Stmt::Assign { target, value, .. } | Stmt::Reduce { target, value, .. } => {
                if let LValue::Elem(a, e) = target {
                    s.accesses.push((a.clone(), index_map(e, vars, &self.consts), true));
                    loads(e, &mut |a, i| s.accesses.push((a.into(), index_map(i, vars, &self.consts), false)));
                }
                loads(value, &mut |a, i| s.accesses.push((a.into(), index_map(i, vars, &self.consts), false)));
                if let Stmt::Reduce { op, .. } = stmt {
                    s.reductions.push((target.name().to_string(), *op));
                }
            }
            Stmt::If { cond, .. } => {
                for e in [&cond.lhs, &cond.rhs] {
                    loads(e, &mut |a, i| s.accesses.push((a.into(), index_map(i, vars, &self.consts), false)));
                }
            }
            _ => {}
        });
        out[idx] = s;
        for child in inner {
            self.summarize(child, vars, out);
        }
        vars.pop();
    }
}

/// Visits statements of a body, descending into `if` arms but not loops.
pub(crate) fn collect_direct<'a>(body: &'a [Stmt], f: &mut impl FnMut(&'a Stmt)) {
    for s in body {
        f(s);
        if let Stmt::If { then_body, else_body, .. } = s {
            collect_direct(then_body, f);
            collect_direct(else_body, f);
        }
    }
}

/// Visits every statement at any depth, inner loops included.
pub(crate) fn walk_all<'a>(body: &'a [Stmt], f: &mut impl FnMut(&'a Stmt)) {
    for s in body {
        f(s);
        match s {
            Stmt::If { then_body, else_body, .. } => {
                walk_all(then_body, f);
                walk_all(else_body, f);
            }
            Stmt::For(c) => walk_all(&c.body, f),
            _ => {}
        }
    }
}

/// Visits every array load in an expression, including nested subscripts.
pub(crate) fn loads<'a>(e: &'a Expr, f: &mut impl FnMut(&'a str, &'a Expr)) {
    match e {
        Expr::Load(a, i) => {
            f(a, i);
            loads(i, f);
        }
        Expr::Bin(_, a, b) => {
            loads(a, f);
            loads(b, f);
        }
        Expr::Neg(a) => loads(a, f),
        _ => {}
    }
}
