use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use super::{index_map, loads, walk_all, Expr, IndexMap, KernelIR, LValue, Loc, Loop, ReduceOp, Stmt};

/// Which permutation condition a violation breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Criterion {
    /// Trip count must be known at loop entry and never change.
    ConstantBound,
    /// The index must be a compile-time function of the iteration number.
    IndexMap,
    /// No loop-carried dependency except reductions.
    DataDependency,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::ConstantBound => "constant-bound",
            Criterion::IndexMap => "index-map",
            Criterion::DataDependency => "data-dependency",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    pub criterion: Criterion,
    pub loc: Loc,
    /// Variable of the loop that cannot be permuted.
    pub loop_var: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: [{}] loop `{}`: {}", self.loc, self.criterion, self.loop_var, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LegalityVerdict {
    pub violations: Vec<Violation>,
}

impl LegalityVerdict {
    pub fn is_legal(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, c: Criterion) -> bool {
        self.violations.iter().any(|v| v.criterion == c)
    }
}

impl fmt::Display for LegalityVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_legal() {
            return f.write_str("legal");
        }
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Upper bound on index evaluations for the exact dependence test.
const ENUM_LIMIT: u64 = 1 << 22;

/// Checks every loop in the kernel against the three permutation conditions.
pub fn check_legality(ir: &KernelIR) -> LegalityVerdict {
    let mut set = BTreeSet::new();
    let mut outer = Vec::new();
    for l in &ir.loops {
        check_loop(ir, l, &mut outer, &mut set);
    }
    LegalityVerdict { violations: set.into_iter().collect() }
}

fn check_loop<'a>(ir: &'a KernelIR, l: &'a Loop, outer: &mut Vec<&'a Loop>, out: &mut BTreeSet<Violation>) {
    let mut v = |criterion, loc, message: String| {
        out.insert(Violation { criterion, loc, loop_var: l.var.clone(), message });
    };

    // Bound and index mutation anywhere in the body; early exits directly in it.
    walk_all(&l.body, &mut |s| {
        if let Stmt::Assign { target: LValue::Name(n), loc, .. } | Stmt::Reduce { target: LValue::Name(n), loc, .. } = s {
            if Some(n.as_str()) == l.bound.name() {
                v(Criterion::ConstantBound, *loc, format!("bound `{n}` is modified in the body"));
            }
            if *n == l.var {
                v(Criterion::IndexMap, *loc, format!("loop index `{n}` is modified in the body"));
            }
        }
    });
    super::collect_direct(&l.body, &mut |s| match s {
        Stmt::Break(loc) => v(Criterion::ConstantBound, *loc, "`break` makes the trip count data dependent".into()),
        Stmt::Continue(loc) => {
            v(Criterion::ConstantBound, *loc, "`continue` skips part of the body".into())
        }
        _ => {}
    });

    scalar_deps(ir, l, &mut v);
    array_deps(ir, l, outer, &mut v);

    outer.push(l);
    for s in &l.body {
        for_each_child(s, &mut |c| check_loop(ir, c, outer, out));
    }
    outer.pop();
}

fn for_each_child<'a>(s: &'a Stmt, f: &mut impl FnMut(&'a Loop)) {
    if let Stmt::For(c) = s {
        f(c)
    }
}

fn names<'a>(e: &'a Expr, f: &mut impl FnMut(&'a str)) {
    match e {
        Expr::Name(n) => f(n),
        Expr::Load(_, i) | Expr::Neg(i) => names(i, f),
        Expr::Bin(_, a, b) => {
            names(a, f);
            names(b, f);
        }
        Expr::Int(_) => {}
    }
}

/// Expressions read by one statement (not descending into nested bodies).
fn stmt_reads(s: &Stmt) -> Vec<&Expr> {
    match s {
        Stmt::Assign { target, value, .. } | Stmt::Reduce { target, value, .. } => {
            let mut v = vec![value];
            if let LValue::Elem(_, i) = target {
                v.push(i);
            }
            v
        }
        Stmt::If { cond, .. } => vec![&cond.lhs, &cond.rhs],
        _ => Vec::new(),
    }
}

fn scalar_deps(ir: &KernelIR, l: &Loop, v: &mut impl FnMut(Criterion, Loc, String)) {
    for s in &ir.scalars {
        let mut reduce_ops: BTreeMap<ReduceOp, Loc> = BTreeMap::new();
        let mut plain_write: Option<Loc> = None;
        let mut read: Option<Loc> = None;
        walk_all(&l.body, &mut |st| {
            for e in stmt_reads(st) {
                names(e, &mut |n| {
                    if n == s {
                        let loc = stmt_loc(st);
                        read = Some(read.map_or(loc, |r| r.min(loc)));
                    }
                });
            }
            match st {
                Stmt::Reduce { target: LValue::Name(n), op, loc, .. } if n == s => {
                    reduce_ops.entry(*op).or_insert(*loc);
                }
                Stmt::Assign { target: LValue::Name(n), loc, .. } if n == s => {
                    plain_write = Some(plain_write.map_or(*loc, |w| w.min(*loc)));
                }
                _ => {}
            }
        });
        if !reduce_ops.is_empty() {
            let first = *reduce_ops.values().min().unwrap();
            if let Some(loc) = read {
                v(Criterion::DataDependency, loc, format!("reduction target `{s}` is read in the body"));
            }
            if let Some(loc) = plain_write {
                v(Criterion::DataDependency, loc, format!("reduction target `{s}` is also assigned"));
            }
            if reduce_ops.len() > 1 {
                v(Criterion::DataDependency, first, format!("`{s}` mixes different reduction operators"));
            }
            continue;
        }
        if plain_write.is_none() {
            continue;
        }
        // Private temporary: every read must follow a definite write in the same iteration.
        let mut defined = false;
        if let Some(loc) = exposed_read(&l.body, s, &mut defined, None) {
            v(Criterion::DataDependency, loc, format!("`{s}` carries a value between iterations"));
        }
        // A temporary read outside this loop observes whichever iteration ran last.
        let outside = ir.loops.iter().filter(|t| !std::ptr::eq(*t, l)).find_map(|t| {
            exposed_read(&t.body, s, &mut false, Some(l))
        });
        if let Some(loc) = outside {
            v(Criterion::DataDependency, loc, format!("`{s}` is live after the loop"));
        }
    }
}

fn stmt_loc(s: &Stmt) -> Loc {
    match s {
        Stmt::Assign { loc, .. } | Stmt::Reduce { loc, .. } | Stmt::If { loc, .. } => *loc,
        Stmt::For(l) => l.loc,
        Stmt::Break(loc) | Stmt::Continue(loc) => *loc,
    }
}

fn reads_name(s: &Stmt, name: &str) -> bool {
    let mut hit = false;
    for e in stmt_reads(s) {
        names(e, &mut |n| hit |= n == name);
    }
    hit
}

/// First read of `name` not preceded by a definite assignment. The `skip`
/// loop is treated as if absent.
fn exposed_read(body: &[Stmt], name: &str, defined: &mut bool, skip: Option<&Loop>) -> Option<Loc> {
    for s in body {
        if let (Stmt::For(c), Some(k)) = (s, skip) {
            if std::ptr::eq(c, k) {
                continue;
            }
        }
        if !*defined && reads_name(s, name) {
            return Some(stmt_loc(s));
        }
        match s {
            Stmt::Assign { target: LValue::Name(n), .. } if n == name => *defined = true,
            Stmt::If { then_body, else_body, .. } => {
                let (mut a, mut b) = (*defined, *defined);
                if let Some(loc) = exposed_read(then_body, name, &mut a, skip) {
                    return Some(loc);
                }
                if let Some(loc) = exposed_read(else_body, name, &mut b, skip) {
                    return Some(loc);
                }
                *defined = a && b;
            }
            Stmt::For(c) => {
                if let Some(loc) = exposed_read(&c.body, name, defined, skip) {
                    return Some(loc);
                }
            }
            _ => {}
        }
    }
    None
}

struct Access<'a> {
    array: &'a str,
    idx: &'a Expr,
    write: bool,
    reduce: Option<ReduceOp>,
    /// Loops strictly inside the loop under test that enclose this access.
    inner: Vec<&'a Loop>,
    loc: Loc,
}

fn collect_accesses<'a>(body: &'a [Stmt], inner: &mut Vec<&'a Loop>, out: &mut Vec<Access<'a>>) {
    for s in body {
        let loc = stmt_loc(s);
        for e in stmt_reads(s) {
            loads(e, &mut |a, idx| {
                out.push(Access { array: a, idx, write: false, reduce: None, inner: inner.clone(), loc })
            });
        }
        match s {
            Stmt::Assign { target: LValue::Elem(a, idx), .. } => {
                out.push(Access { array: a, idx, write: true, reduce: None, inner: inner.clone(), loc });
            }
            Stmt::Reduce { target: LValue::Elem(a, idx), op, .. } => {
                out.push(Access { array: a, idx, write: true, reduce: Some(*op), inner: inner.clone(), loc });
            }
            Stmt::If { then_body, else_body, .. } => {
                collect_accesses(then_body, inner, out);
                collect_accesses(else_body, inner, out);
            }
            Stmt::For(c) => {
                inner.push(c);
                collect_accesses(&c.body, inner, out);
                inner.pop();
            }
            _ => {}
        }
    }
}

fn array_deps(ir: &KernelIR, l: &Loop, outer: &[&Loop], v: &mut impl FnMut(Criterion, Loc, String)) {
    let mut acc = Vec::new();
    collect_accesses(&l.body, &mut Vec::new(), &mut acc);
    for (wi, w) in acc.iter().enumerate() {
        if !w.write {
            continue;
        }
        for (ai, a) in acc.iter().enumerate() {
            if a.array != w.array || (a.write && ai < wi) {
                continue;
            }
            if w.reduce.is_some() && w.reduce == a.reduce {
                continue;
            }
            if carried(ir, l, outer, w, a) {
                let loc = w.loc.max(a.loc);
                let what = if a.write { "written" } else { "read" };
                v(
                    Criterion::DataDependency,
                    loc,
                    format!("`{}` is written and {what} in different iterations", w.array),
                );
            }
        }
    }
}

/// True if `w` and `a` may touch the same element in different iterations
/// of `l` (with all enclosing loop variables held equal).
fn carried(ir: &KernelIR, l: &Loop, outer: &[&Loop], w: &Access, a: &Access) -> bool {
    let vars = |acc: &Access| -> Vec<String> {
        outer.iter().map(|o| o.var.clone()).chain([l.var.clone()]).chain(acc.inner.iter().map(|c| c.var.clone())).collect()
    };
    let (wv, av) = (vars(w), vars(a));
    let map = |acc: &Access, vs: &[String]| {
        let refs: Vec<&str> = vs.iter().map(String::as_str).collect();
        index_map(acc.idx, &refs, &ir.consts)
    };
    let (IndexMap::Affine { coefs: cw, constant: kw }, IndexMap::Affine { coefs: ca, constant: ka }) =
        (map(w, &wv), map(a, &av))
    else {
        return true;
    };

    let outer_vars: Vec<&Loop> =
        outer.iter().copied().filter(|o| cw.contains_key(&o.var) || ca.contains_key(&o.var)).collect();
    let all_const = outer_vars.iter().chain([&l]).chain(w.inner.iter()).chain(a.inner.iter()).all(|x| x.bound.constant().is_some());
    if all_const {
        let size = |loops: &[&Loop]| loops.iter().map(|x| x.bound.constant().unwrap() as u64).product::<u64>();
        let n_outer = size(&outer_vars);
        let n_l = l.bound.constant().unwrap() as u64;
        let cost = n_outer.saturating_mul(n_l).saturating_mul(size(&w.inner) + size(&a.inner));
        if cost <= ENUM_LIMIT {
            return enumerate(l, &outer_vars, (&cw, kw, &w.inner), (&ca, ka, &a.inner));
        }
    }
    // Symbolic fallback: identical maps that depend on the loop index and
    // nothing deeper touch one element per iteration.
    let deeper = |c: &BTreeMap<String, i64>, acc: &Access| acc.inner.iter().any(|x| c.contains_key(&x.var));
    !(cw == ca && kw == ka && cw.get(&l.var).is_some_and(|&c| c != 0) && !deeper(&cw, w) && !deeper(&ca, a))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Seen {
    One(u32),
    Many,
}

type Side<'a> = (&'a BTreeMap<String, i64>, i64, &'a Vec<&'a Loop>);

fn enumerate(l: &Loop, outer: &[&Loop], w: Side, a: Side) -> bool {
    let mut env: HashMap<&str, i64> = HashMap::new();
    odometer(outer, &mut env, &mut |env| {
        let wm = touched(l, env, w);
        let same = std::ptr::eq(w.0, a.0) && w.1 == a.1 && std::ptr::eq(w.2, a.2);
        if same {
            return wm.values().any(|s| *s == Seen::Many);
        }
        let am = touched(l, env, a);
        wm.iter().any(|(e, sw)| match (am.get(e), sw) {
            (None, _) => false,
            (Some(Seen::One(x)), Seen::One(y)) => x != y,
            _ => true,
        })
    })
}

fn touched(l: &Loop, env: &HashMap<&str, i64>, (coefs, k, inner): Side) -> HashMap<i64, Seen> {
    let mut out: HashMap<i64, Seen> = HashMap::new();
    let mut env = env.clone();
    for i in 0..l.bound.constant().unwrap() {
        env.insert(&l.var, i as i64);
        odometer(inner, &mut env, &mut |env| {
            let e = k + coefs.iter().map(|(v, c)| c * env.get(v.as_str()).copied().unwrap_or(0)).sum::<i64>();
            out.entry(e)
                .and_modify(|s| {
                    if *s != Seen::One(i) {
                        *s = Seen::Many
                    }
                })
                .or_insert(Seen::One(i));
            false
        });
    }
    out
}

/// Runs `f` over the Cartesian product of the loops' iteration spaces;
/// stops early when `f` returns true.
fn odometer<'a>(loops: &[&'a Loop], env: &mut HashMap<&'a str, i64>, f: &mut impl FnMut(&HashMap<&'a str, i64>) -> bool) -> bool {
    match loops.split_first() {
        None => f(env),
        Some((head, rest)) => {
            for i in 0..head.bound.constant().unwrap() {
                env.insert(&head.var, i as i64);
                if odometer(rest, env, f) {
                    return true;
                }
            }
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::parse_kernel;

    fn verdict(src: &str) -> LegalityVerdict {
        check_legality(&parse_kernel(src).unwrap())
    }

    #[test]
    fn dot_product_is_legal() {
        let v = verdict("const N = 16\narray a[N]\narray w[N]\nscalar s\nfor i in 0..N { s reduce+ = a[i] * w[i] }");
        assert!(v.is_legal(), "{v}");
    }

    #[test]
    fn prefix_sum_is_rejected_at_the_statement() {
        let v = verdict("array a[16]\nfor i in 0..15 {\n  a[i + 1] = a[i + 1] + a[i]\n}");
        assert!(v.has(Criterion::DataDependency), "{v}");
        assert_eq!(v.violations[0].loc.line, 3);
    }

    #[test]
    fn break_and_bound_and_index() {
        let v = verdict("param M\narray a[8]\nfor i in 0..8 {\n if a[i] == 0 { break }\n}");
        assert!(v.has(Criterion::ConstantBound));
        let v = verdict("param M\narray a[8]\nfor i in 0..M {\n M = 3\n}");
        assert!(v.has(Criterion::ConstantBound));
        let v = verdict("array a[8]\nfor i in 0..8 {\n i = i + 1\n}");
        assert!(v.has(Criterion::IndexMap));
        assert!(!v.has(Criterion::DataDependency));
    }

    #[test]
    fn scalar_temporaries() {
        let ok = "array a[8]\narray b[8]\nscalar t\nfor i in 0..8 { t = a[i] * 2\n b[i] = t + 1 }";
        assert!(verdict(ok).is_legal());
        let carried = "array a[8]\narray b[8]\nscalar t\nfor i in 0..8 { b[i] = t\n t = a[i] }";
        assert!(verdict(carried).has(Criterion::DataDependency));
        let red_read = "array a[8]\narray b[8]\nscalar s\nfor i in 0..8 { s reduce+ = a[i]\n b[i] = s }";
        assert!(verdict(red_read).has(Criterion::DataDependency));
    }

    #[test]
    fn independent_strided_and_nested() {
        // even/odd halves never meet
        assert!(verdict("array x[32]\nfor i in 0..16 { x[2*i] = x[2*i+1] }").is_legal());
        assert!(!verdict("array x[32]\nfor i in 0..15 { x[2*i] = x[2*i+2] }").is_legal());
        let mm = "array a[16]\narray b[16]\narray c[16]\nfor i in 0..4 { for j in 0..4 { for k in 0..4 {\n c[i*4+j] reduce+ = a[i*4+k] * b[k*4+j] } } }";
        assert!(verdict(mm).is_legal(), "{}", verdict(mm));
        let table = "table t[8]\narray x[8]\nfor i in 0..8 { x[t[i]] = i }";
        assert!(verdict(table).has(Criterion::DataDependency));
    }

    #[test]
    fn param_bounds_use_symbolic_test() {
        assert!(verdict("param M\narray a[64]\narray b[64]\nfor i in 0..M { a[i] = a[i] + b[i] }").is_legal());
        assert!(!verdict("param M\narray a[64]\nfor i in 0..M { a[i] = a[i+1] }").is_legal());
    }
}
