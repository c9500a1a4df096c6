use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use super::{
    check_legality, collect_direct, index_map, BinOp, Bound, CmpOp, Expr, IndexMap, KernelIR,
    LValue, LegalityVerdict, Loc, Loop, ReduceOp, Stmt,
};
use crate::isa::{assemble, reg_name, AsmError, Program};

/// Scalars and params live in word slots starting here, reachable with
/// `lw rd, addr(zero)`.
pub const SCALAR_BASE: u32 = 0x600;
const SCALAR_END: u32 = 0x800;
/// Arrays are laid out upward from here.
pub const ARRAY_BASE: u32 = 0x8000;
const ARRAY_ALIGN: u32 = 0x100;
const MIN_MEM: u32 = 64 * 1024;

/// Registers available to generated code: t0-t6 and a0-a7.
const POOL: [u8; 15] = [5, 6, 7, 28, 29, 30, 31, 10, 11, 12, 13, 14, 15, 16, 17];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Baseline,
    Permuted,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Permuted => "permuted",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "permuted" => Ok(Mode::Permuted),
            _ => Err(format!("unknown mode `{s}` (expected baseline or permuted)")),
        }
    }
}

/// LIG slot used at each nesting depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LigAssignment(pub [u8; 3]);

impl Default for LigAssignment {
    fn default() -> Self {
        LigAssignment([1, 2, 3])
    }
}

impl LigAssignment {
    fn validate(&self) -> Result<(), LowerError> {
        let s = self.0;
        let ok = s.iter().all(|&x| (1..=3).contains(&x)) && s[0] != s[1] && s[1] != s[2] && s[0] != s[2];
        if ok {
            Ok(())
        } else {
            Err(LowerError::LigAssignment(s))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LowerError {
    #[error("kernel cannot be permuted:\n{0}")]
    Illegal(LegalityVerdict),
    #[error("{loc}: {msg}")]
    Unsupported { loc: Loc, msg: String },
    #[error("{0}: kernel needs more than 15 registers")]
    Registers(Loc),
    #[error("LIG assignment {0:?} must map depths to distinct slots 1..3")]
    LigAssignment([u8; 3]),
    #[error("layout: {0}")]
    Layout(String),
    #[error("generated code does not assemble: {0}")]
    Asm(#[from] AsmError),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Layout {
    pub scalars: BTreeMap<String, u32>,
    pub params: BTreeMap<String, u32>,
    /// name -> (address, length in words)
    pub arrays: BTreeMap<String, (u32, u32)>,
    /// Memory size the image needs (at least 64 KiB).
    pub mem_size: usize,
}

/// Labels bracketing one loop body, `[top, end)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopLabels {
    pub var: String,
    pub depth: usize,
    pub slot: u8,
    pub top: String,
    pub end: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lowered {
    pub mode: Mode,
    pub asm: String,
    pub program: Program,
    pub layout: Layout,
    /// Loops in pre-order (outer before inner, program order).
    pub loops: Vec<LoopLabels>,
}

impl Lowered {
    /// Address range `[top, end)` of a loop body.
    pub fn body_range(&self, loop_index: usize) -> (u32, u32) {
        let l = &self.loops[loop_index];
        (self.program.symbols[&l.top], self.program.symbols[&l.end])
    }

    /// Number of instructions between a loop's body labels.
    pub fn static_body_count(&self, loop_index: usize) -> u32 {
        let (a, b) = self.body_range(loop_index);
        (b - a) / 4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    /// `pv.add Ln.2, p, q, zero`
    Add,
    /// `pv.slli Ln.0, p, q, s` with q = base >> s
    Slli(u32),
    /// `pv.mul Ln.0, p, q, rk` with q = base / (4a), rk = 4a
    Mul,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct StreamKey {
    array: String,
    outer: BTreeMap<String, i64>,
    a: i64,
}

#[derive(Debug, Clone)]
struct Stream {
    key: StreamKey,
    kind: Kind,
    p: u8,
    q: u8,
    rk: u8,
}

#[derive(Debug, Clone)]
struct Plan {
    var: String,
    depth: usize,
    bound: Bound,
    loc: Loc,
    streams: Vec<Stream>,
    need_ri: bool,
    ri: u8,
    rn: u8,
    rend: u8,
    rspan: u8,
}

#[derive(Clone, Copy)]
enum Opnd {
    Own(u8),
    Ref(u8),
}

impl Opnd {
    fn reg(self) -> u8 {
        match self {
            Opnd::Own(r) | Opnd::Ref(r) => r,
        }
    }
}

struct Gen<'a> {
    ir: &'a KernelIR,
    mode: Mode,
    slots: LigAssignment,
    plans: Vec<Plan>,
    layout: Layout,
    free: BTreeSet<usize>,
    out: String,
    label: usize,
    /// Stack of plan indices for the loops being emitted.
    stack: Vec<usize>,
    /// Scalars held in registers (reduction accumulators and temporaries).
    sregs: BTreeMap<String, u8>,
    accs: Vec<String>,
    loops: Vec<LoopLabels>,
    loc: Loc,
}

/// Compiles a kernel. In [`Mode::Permuted`] the kernel must pass
/// [`check_legality`]; both modes emit the same loop bodies apart from
/// index bookkeeping, so per-iteration instruction counts match.
pub fn lower(ir: &KernelIR, mode: Mode, slots: LigAssignment) -> Result<Lowered, LowerError> {
    slots.validate()?;
    if mode == Mode::Permuted {
        let v = check_legality(ir);
        if !v.is_legal() {
            return Err(LowerError::Illegal(v));
        }
    }
    let mut g = Gen {
        ir,
        mode,
        slots,
        plans: Vec::new(),
        layout: Layout::default(),
        free: (0..POOL.len()).collect(),
        out: String::new(),
        label: 0,
        stack: Vec::new(),
        sregs: BTreeMap::new(),
        accs: Vec::new(),
        loops: Vec::new(),
        loc: Loc::default(),
    };
    for l in &ir.loops {
        g.plan(l)?;
    }
    g.layout()?;
    g.emit_kernel()?;
    let program = assemble(&g.out)?;
    if program.words.len() as u32 * 4 > SCALAR_BASE {
        return Err(LowerError::Layout(format!(
            "code is {} instructions, limit is {}",
            program.words.len(),
            SCALAR_BASE / 4
        )));
    }
    Ok(Lowered { mode, asm: g.out, program, layout: g.layout, loops: g.loops })
}

fn is_pow2(v: i64) -> bool {
    v > 0 && v & (v - 1) == 0
}

fn fits12(v: i64) -> bool {
    (-2048..2048).contains(&v)
}

impl<'a> Gen<'a> {
    fn unsupported<T>(&self, loc: Loc, msg: impl Into<String>) -> Result<T, LowerError> {
        Err(LowerError::Unsupported { loc, msg: msg.into() })
    }

    // ---- planning ----

    fn plan(&mut self, l: &Loop) -> Result<(), LowerError> {
        if let Bound::Const(n) | Bound::Named(_, n) = l.bound {
            if n == 0 {
                return self.unsupported(l.loc, "loop bound must be positive");
            }
        }
        let idx = self.plans.len();
        self.plans.push(Plan {
            var: l.var.clone(),
            depth: l.depth,
            bound: l.bound.clone(),
            loc: l.loc,
            streams: Vec::new(),
            need_ri: false,
            ri: 0,
            rn: 0,
            rend: 0,
            rspan: 0,
        });
        self.stack.push(idx);
        let mut err = None;
        let mut children = Vec::new();
        collect_direct(&l.body, &mut |s| match s {
            Stmt::For(c) => children.push(c),
            Stmt::Assign { target, value, loc } | Stmt::Reduce { target, value, loc, .. } => {
                if let LValue::Elem(a, i) = target {
                    self.plan_access(a, i);
                }
                if let LValue::Name(n) = target {
                    if self.var_level(n).is_some() || self.ir.consts.contains_key(n) || self.ir.is_param(n) {
                        err.get_or_insert((*loc, format!("cannot assign to `{n}`")));
                    }
                }
                self.plan_expr(value);
            }
            Stmt::If { cond, .. } => {
                self.plan_expr(&cond.lhs);
                self.plan_expr(&cond.rhs);
            }
            Stmt::Break(loc) | Stmt::Continue(loc) => {
                err.get_or_insert((*loc, "`break` and `continue` are not supported".into()));
            }
        });
        if let Some((loc, msg)) = err {
            return self.unsupported(loc, msg);
        }
        for c in children {
            self.plan(c)?;
        }
        self.stack.pop();
        let p = &mut self.plans[idx];
        p.need_ri |= p.streams.is_empty() || matches!(p.bound, Bound::Param(_));
        Ok(())
    }

    fn var_level(&self, name: &str) -> Option<usize> {
        self.stack.iter().rev().copied().find(|&k| self.plans[k].var == name)
    }

    fn plan_expr(&mut self, e: &Expr) {
        match e {
            Expr::Name(n) => {
                if let Some(k) = self.var_level(n) {
                    self.plans[k].need_ri = true;
                }
            }
            Expr::Load(a, i) => self.plan_access(a, i),
            Expr::Bin(_, a, b) => {
                self.plan_expr(a);
                self.plan_expr(b);
            }
            Expr::Neg(a) => self.plan_expr(a),
            Expr::Int(_) => {}
        }
    }

    fn plan_access(&mut self, array: &str, idx: &Expr) {
        let Some((key, kind, _)) = self.fold(array, idx) else {
            self.plan_expr(idx);
            return;
        };
        for v in key.outer.keys() {
            if let Some(k) = self.var_level(v) {
                self.plans[k].need_ri = true;
            }
        }
        let cur = *self.stack.last().unwrap();
        if !self.plans[cur].streams.iter().any(|s| s.key == key) {
            self.plans[cur].streams.push(Stream { key, kind, p: 0, q: 0, rk: 0 });
        }
    }

    /// Decides whether an access directly in the innermost open loop can use
    /// a strength-reduced pointer. Returns the stream and byte displacement.
    fn fold(&self, array: &str, idx: &Expr) -> Option<(StreamKey, Kind, i32)> {
        let vars: Vec<&str> = self.stack.iter().map(|&k| self.plans[k].var.as_str()).collect();
        let IndexMap::Affine { mut coefs, constant } = index_map(idx, &vars, &self.ir.consts) else {
            return None;
        };
        let cur = &self.plans[*self.stack.last()?];
        let a = coefs.remove(&cur.var)?;
        let disp = 4 * constant;
        if a <= 0 || 4 * a > 2047 || !fits12(disp) {
            return None;
        }
        let kind = if a == 1 {
            Kind::Add
        } else if self.stack.len() > 1 {
            return None;
        } else if is_pow2(a) {
            Kind::Slli((4 * a).trailing_zeros())
        } else {
            Kind::Mul
        };
        if self.stack.len() == 1 && !coefs.is_empty() {
            return None;
        }
        Some((StreamKey { array: array.to_string(), outer: coefs, a }, kind, disp as i32))
    }

    fn layout(&mut self) -> Result<(), LowerError> {
        let mut slot = SCALAR_BASE;
        for name in self.ir.scalars.iter().chain(&self.ir.params) {
            if slot >= SCALAR_END {
                return Err(LowerError::Layout("too many scalars and params".into()));
            }
            if self.ir.is_param(name) {
                self.layout.params.insert(name.clone(), slot);
            } else {
                self.layout.scalars.insert(name.clone(), slot);
            }
            slot += 4;
        }
        let mut cursor = ARRAY_BASE as u64;
        for arr in &self.ir.arrays {
            let mut align = ARRAY_ALIGN as u64;
            for s in self.plans.iter().flat_map(|p| &p.streams).filter(|s| s.key.array == arr.name) {
                let need = match s.kind {
                    Kind::Add => 4,
                    Kind::Slli(sh) => 1u64 << sh,
                    Kind::Mul => 4 * s.key.a as u64,
                };
                align = lcm(align, need);
            }
            cursor = cursor.div_ceil(align) * align;
            self.layout.arrays.insert(arr.name.clone(), (cursor as u32, arr.len));
            cursor += 4 * arr.len as u64;
        }
        if cursor > i32::MAX as u64 {
            return Err(LowerError::Layout("arrays exceed the address space".into()));
        }
        self.layout.mem_size = (cursor.div_ceil(4096) * 4096).max(MIN_MEM as u64) as usize;
        Ok(())
    }

    // ---- registers ----

    fn alloc(&mut self) -> Result<u8, LowerError> {
        let k = *self.free.iter().next().ok_or(LowerError::Registers(self.loc))?;
        self.free.remove(&k);
        Ok(POOL[k])
    }

    fn release(&mut self, r: u8) {
        let k = POOL.iter().position(|&x| x == r).expect("pool register");
        assert!(self.free.insert(k), "double free of {}", reg_name(r));
    }

    fn drop_opnd(&mut self, o: Opnd) {
        if let Opnd::Own(r) = o {
            self.release(r);
        }
    }

    // ---- emission ----

    fn ins(&mut self, text: impl AsRef<str>) {
        let _ = writeln!(self.out, "    {}", text.as_ref());
    }

    fn label_def(&mut self, name: &str) {
        let _ = writeln!(self.out, "{name}:");
    }

    fn fresh_label(&mut self, what: &str) -> String {
        self.label += 1;
        format!("{what}{}", self.label)
    }

    fn emit_kernel(&mut self) -> Result<(), LowerError> {
        let mode = match self.mode {
            Mode::Baseline => "baseline",
            Mode::Permuted => "permuted",
        };
        let _ = writeln!(self.out, "# {mode} kernel");

        // Scalars assigned in the kernel get registers; reductions are
        // loaded here and stored back at the end.
        let mut reduced = BTreeSet::new();
        let mut assigned = BTreeSet::new();
        for l in &self.ir.loops {
            super::walk_all(&l.body, &mut |s| match s {
                Stmt::Reduce { target: LValue::Name(n), .. } => {
                    reduced.insert(n.clone());
                }
                Stmt::Assign { target: LValue::Name(n), .. } if self.ir.is_scalar(n) => {
                    assigned.insert(n.clone());
                }
                _ => {}
            });
        }
        for name in &self.ir.scalars {
            if reduced.contains(name) || assigned.contains(name) {
                let r = self.alloc()?;
                self.sregs.insert(name.clone(), r);
                if reduced.contains(name) {
                    let slot = self.layout.scalars[name];
                    self.accs.push(name.clone());
                    self.ins(format!("lw {}, {slot}(zero)", reg_name(r)));
                }
            }
        }

        // Loop-invariant registers.
        for k in 0..self.plans.len() {
            self.loc = self.plans[k].loc;
            let (need_rn, need_span) = {
                let p = &self.plans[k];
                (
                    self.mode == Mode::Permuted || p.need_ri,
                    self.mode == Mode::Baseline && !p.need_ri && p.depth > 1,
                )
            };
            if need_rn {
                let r = self.alloc()?;
                self.plans[k].rn = r;
                match self.plans[k].bound.clone() {
                    Bound::Param(n) => {
                        let slot = self.layout.params[&n];
                        self.ins(format!("lw {}, {slot}(zero)", reg_name(r)));
                    }
                    b => self.ins(format!("li {}, {}", reg_name(r), b.constant().unwrap())),
                }
            }
            if need_span {
                let r = self.alloc()?;
                self.plans[k].rspan = r;
                let span = self.span(k);
                self.ins(format!("li {}, {span}", reg_name(r)));
            }
            if self.mode == Mode::Permuted {
                for s in 0..self.plans[k].streams.len() {
                    if self.plans[k].streams[s].kind == Kind::Mul {
                        let r = self.alloc()?;
                        self.plans[k].streams[s].rk = r;
                        let a = self.plans[k].streams[s].key.a;
                        self.ins(format!("li {}, {}", reg_name(r), 4 * a));
                    }
                }
            }
        }

        let mut next = 0;
        for l in &self.ir.loops {
            self.emit_loop(l, &mut next)?;
        }
        for name in self.accs.clone() {
            let (r, slot) = (self.sregs[&name], self.layout.scalars[&name]);
            self.ins(format!("sw {}, {slot}(zero)", reg_name(r)));
        }
        self.ins("ebreak");
        Ok(())
    }

    fn span(&self, k: usize) -> i64 {
        let p = &self.plans[k];
        4 * p.streams[0].key.a * p.bound.constant().unwrap() as i64
    }

    fn emit_loop(&mut self, l: &Loop, next: &mut usize) -> Result<(), LowerError> {
        let k = *next;
        *next += 1;
        self.loc = l.loc;
        let slot = self.slots.0[l.depth - 1];
        let top = format!("loop{k}_top");
        let end = format!("loop{k}_end");
        self.loops.push(LoopLabels { var: l.var.clone(), depth: l.depth, slot, top: top.clone(), end: end.clone() });

        // Per-entry registers.
        if self.plans[k].need_ri {
            self.plans[k].ri = self.alloc()?;
        }
        for s in 0..self.plans[k].streams.len() {
            self.plans[k].streams[s].p = self.alloc()?;
            if self.mode == Mode::Permuted {
                self.plans[k].streams[s].q = self.alloc()?;
            }
        }
        let baseline = self.mode == Mode::Baseline;
        let use_end = baseline && !self.plans[k].need_ri;
        if use_end {
            self.plans[k].rend = self.alloc()?;
        }

        // Entry: stream bases, then the trip-count setup.
        for s in 0..self.plans[k].streams.len() {
            self.stream_base(k, s)?;
        }
        let p = self.plans[k].clone();
        match self.mode {
            Mode::Baseline if p.need_ri => self.ins(format!("li {}, 0", reg_name(p.ri))),
            Mode::Baseline if p.depth == 1 => {
                let base = self.layout.arrays[&p.streams[0].key.array].0 as i64;
                self.ins(format!("li {}, {}", reg_name(p.rend), base + self.span(k)));
            }
            Mode::Baseline => self.ins(format!(
                "add {}, {}, {}",
                reg_name(p.rend),
                reg_name(p.streams[0].p),
                reg_name(p.rspan)
            )),
            Mode::Permuted => match p.bound.constant() {
                Some(n) if n <= 4095 => self.ins(format!("pv.initi L{slot}, {n}")),
                _ => self.ins(format!("pv.init L{slot}, {}", reg_name(p.rn))),
            },
        }

        self.label_def(&top);
        self.stack.push(k);
        if !baseline {
            if p.need_ri {
                self.ins(format!("pv.add L{slot}.0, {}, zero, zero", reg_name(p.ri)));
            }
            for s in &p.streams {
                let (pr, qr) = (reg_name(s.p), reg_name(s.q));
                match s.kind {
                    Kind::Add => self.ins(format!("pv.add L{slot}.2, {pr}, {qr}, zero")),
                    Kind::Slli(sh) => self.ins(format!("pv.slli L{slot}.0, {pr}, {qr}, {sh}")),
                    Kind::Mul => self.ins(format!("pv.mul L{slot}.0, {pr}, {qr}, {}", reg_name(s.rk))),
                }
            }
        }
        self.block(&l.body, next)?;
        self.stack.pop();
        self.loc = l.loc;
        if baseline {
            for s in &p.streams {
                self.ins(format!("addi {0}, {0}, {1}", reg_name(s.p), 4 * s.key.a));
            }
            if p.need_ri {
                self.ins(format!("addi {0}, {0}, 1", reg_name(p.ri)));
                self.ins(format!("bne {}, {}, {top}", reg_name(p.ri), reg_name(p.rn)));
            } else {
                self.ins(format!("bne {}, {}, {top}", reg_name(p.streams[0].p), reg_name(p.rend)));
            }
        } else {
            self.ins(format!("pv.bne L{slot}.0, {}, {top}", reg_name(p.rn)));
        }
        self.label_def(&end);

        if use_end {
            self.release(p.rend);
        }
        for s in &p.streams {
            self.release(s.p);
            if !baseline {
                self.release(s.q);
            }
        }
        if p.need_ri {
            self.release(p.ri);
        }
        Ok(())
    }

    /// Writes the value a stream's pointer starts from: the pointer itself in
    /// baseline mode, the pre-scaled base register in permuted mode.
    fn stream_base(&mut self, k: usize, s: usize) -> Result<(), LowerError> {
        let st = self.plans[k].streams[s].clone();
        let base = self.layout.arrays[&st.key.array].0 as i64;
        let (dest, value) = match (self.mode, st.kind) {
            (Mode::Baseline, _) => (st.p, base),
            (Mode::Permuted, Kind::Add) => (st.q, base),
            (Mode::Permuted, Kind::Slli(sh)) => (st.q, base >> sh),
            (Mode::Permuted, Kind::Mul) => (st.q, base / (4 * st.key.a)),
        };
        let d = reg_name(dest);
        self.ins(format!("li {d}, {value}"));
        for (var, c) in &st.key.outer {
            let level = self.var_level(var).expect("outer variable in scope");
            let ri = reg_name(self.plans[level].ri);
            let t = self.alloc()?;
            let tn = reg_name(t);
            let scale = 4 * c;
            if is_pow2(scale) {
                self.ins(format!("slli {tn}, {ri}, {}", scale.trailing_zeros()));
            } else {
                self.ins(format!("li {tn}, {scale}"));
                self.ins(format!("mul {tn}, {ri}, {tn}"));
            }
            self.ins(format!("add {d}, {d}, {tn}"));
            self.release(t);
        }
        Ok(())
    }

    fn block(&mut self, body: &[Stmt], next: &mut usize) -> Result<(), LowerError> {
        for s in body {
            self.stmt(s, next)?;
        }
        Ok(())
    }

    fn stmt(&mut self, s: &Stmt, next: &mut usize) -> Result<(), LowerError> {
        match s {
            Stmt::For(l) => self.emit_loop(l, next),
            Stmt::Break(loc) | Stmt::Continue(loc) => {
                self.unsupported(*loc, "`break` and `continue` are not supported")
            }
            Stmt::Assign { target, value, loc } => {
                self.loc = *loc;
                let v = self.expr(value)?;
                match target {
                    LValue::Name(n) => {
                        let Some(&r) = self.sregs.get(n) else {
                            return self.unsupported(*loc, format!("cannot assign to `{n}`"));
                        };
                        self.ins(format!("mv {}, {}", reg_name(r), reg_name(v.reg())));
                    }
                    LValue::Elem(a, i) => {
                        let (base, disp) = self.address(a, i)?;
                        self.ins(format!("sw {}, {disp}({})", reg_name(v.reg()), reg_name(base.reg())));
                        self.drop_opnd(base);
                    }
                }
                self.drop_opnd(v);
                Ok(())
            }
            Stmt::Reduce { target, op, value, loc } => {
                self.loc = *loc;
                let v = self.expr(value)?;
                match target {
                    LValue::Name(n) => {
                        let acc = self.sregs[n];
                        self.combine(*op, acc, v.reg())?;
                    }
                    LValue::Elem(a, i) => {
                        let (base, disp) = self.address(a, i)?;
                        let u = self.alloc()?;
                        let (un, bn) = (reg_name(u), reg_name(base.reg()));
                        self.ins(format!("lw {un}, {disp}({bn})"));
                        self.combine(*op, u, v.reg())?;
                        self.ins(format!("sw {un}, {disp}({bn})"));
                        self.release(u);
                        self.drop_opnd(base);
                    }
                }
                self.drop_opnd(v);
                Ok(())
            }
            Stmt::If { cond, then_body, else_body, loc } => {
                self.loc = *loc;
                let a = self.expr(&cond.lhs)?;
                let b = self.expr(&cond.rhs)?;
                let else_l = self.fresh_label("else");
                let end_l = self.fresh_label("endif");
                let target = if else_body.is_empty() { &end_l } else { &else_l };
                let (an, bn) = (reg_name(a.reg()), reg_name(b.reg()));
                let br = match cond.op {
                    CmpOp::Eq => format!("bne {an}, {bn}, {target}"),
                    CmpOp::Ne => format!("beq {an}, {bn}, {target}"),
                    CmpOp::Lt => format!("bge {an}, {bn}, {target}"),
                    CmpOp::Ge => format!("blt {an}, {bn}, {target}"),
                    CmpOp::Le => format!("blt {bn}, {an}, {target}"),
                    CmpOp::Gt => format!("bge {bn}, {an}, {target}"),
                };
                self.ins(br);
                self.drop_opnd(a);
                self.drop_opnd(b);
                self.block(then_body, next)?;
                if !else_body.is_empty() {
                    self.ins(format!("j {end_l}"));
                    self.label_def(&else_l);
                    self.block(else_body, next)?;
                }
                self.label_def(&end_l);
                Ok(())
            }
        }
    }

    /// `acc = acc op v`, branch-free for min and max.
    fn combine(&mut self, op: ReduceOp, acc: u8, v: u8) -> Result<(), LowerError> {
        let (a, v) = (reg_name(acc), reg_name(v));
        match op {
            ReduceOp::Add => self.ins(format!("add {a}, {a}, {v}")),
            ReduceOp::Xor => self.ins(format!("xor {a}, {a}, {v}")),
            ReduceOp::Or => self.ins(format!("or {a}, {a}, {v}")),
            ReduceOp::And => self.ins(format!("and {a}, {a}, {v}")),
            ReduceOp::Min | ReduceOp::Max => {
                let c = self.alloc()?;
                let d = self.alloc()?;
                let (cn, dn) = (reg_name(c), reg_name(d));
                if op == ReduceOp::Min {
                    self.ins(format!("slt {cn}, {v}, {a}"));
                } else {
                    self.ins(format!("slt {cn}, {a}, {v}"));
                }
                self.ins(format!("sub {cn}, zero, {cn}"));
                self.ins(format!("xor {dn}, {v}, {a}"));
                self.ins(format!("and {dn}, {dn}, {cn}"));
                self.ins(format!("xor {a}, {a}, {dn}"));
                self.release(c);
                self.release(d);
            }
        }
        Ok(())
    }

    /// Base register and byte displacement for an element access.
    fn address(&mut self, array: &str, idx: &Expr) -> Result<(Opnd, i32), LowerError> {
        if let Some((key, _, disp)) = self.fold(array, idx) {
            let cur = *self.stack.last().unwrap();
            let s = self.plans[cur].streams.iter().find(|s| s.key == key).expect("planned stream");
            return Ok((Opnd::Ref(s.p), disp));
        }
        let base = self.layout.arrays[array].0 as i64;
        let vars: Vec<&str> = self.stack.iter().map(|&k| self.plans[k].var.as_str()).collect();
        if let IndexMap::Affine { coefs, constant } = index_map(idx, &vars, &self.ir.consts) {
            if coefs.is_empty() {
                let r = self.alloc()?;
                self.ins(format!("li {}, {}", reg_name(r), base + 4 * constant));
                return Ok((Opnd::Own(r), 0));
            }
        }
        let i = self.expr(idx)?;
        let t = self.alloc()?;
        let u = self.alloc()?;
        let (tn, un) = (reg_name(t), reg_name(u));
        self.ins(format!("slli {tn}, {}, 2", reg_name(i.reg())));
        self.ins(format!("li {un}, {base}"));
        self.ins(format!("add {tn}, {tn}, {un}"));
        self.release(u);
        self.drop_opnd(i);
        Ok((Opnd::Own(t), 0))
    }

    fn constant(&mut self, v: i64) -> Result<Opnd, LowerError> {
        if i32::try_from(v).is_err() && u32::try_from(v).is_err() {
            return self.unsupported(self.loc, format!("constant {v} does not fit in 32 bits"));
        }
        if v == 0 {
            return Ok(Opnd::Ref(0));
        }
        let r = self.alloc()?;
        self.ins(format!("li {}, {}", reg_name(r), v as i32));
        Ok(Opnd::Own(r))
    }

    fn expr(&mut self, e: &Expr) -> Result<Opnd, LowerError> {
        match e {
            Expr::Int(v) => self.constant(*v),
            Expr::Name(n) => {
                if let Some(k) = self.var_level(n) {
                    return Ok(Opnd::Ref(self.plans[k].ri));
                }
                if let Some(&r) = self.sregs.get(n) {
                    return Ok(Opnd::Ref(r));
                }
                if let Some(&c) = self.ir.consts.get(n) {
                    return self.constant(c);
                }
                let slot = self.layout.scalars.get(n).or_else(|| self.layout.params.get(n)).copied();
                let Some(slot) = slot else {
                    return self.unsupported(self.loc, format!("`{n}` has no storage"));
                };
                let r = self.alloc()?;
                self.ins(format!("lw {}, {slot}(zero)", reg_name(r)));
                Ok(Opnd::Own(r))
            }
            Expr::Load(a, i) => {
                let (base, disp) = self.address(a, i)?;
                let r = match base {
                    Opnd::Own(r) => r,
                    Opnd::Ref(_) => self.alloc()?,
                };
                self.ins(format!("lw {}, {disp}({})", reg_name(r), reg_name(base.reg())));
                Ok(Opnd::Own(r))
            }
            Expr::Neg(a) => {
                let v = self.expr(a)?;
                let d = self.dest(v, None)?;
                self.ins(format!("sub {}, zero, {}", reg_name(d), reg_name(v.reg())));
                Ok(Opnd::Own(d))
            }
            Expr::Bin(op, a, b) => {
                let lhs = self.expr(a)?;
                if let Some(imm) = self.immediate(*op, b) {
                    let d = self.dest(lhs, None)?;
                    let (dn, ln) = (reg_name(d), reg_name(lhs.reg()));
                    self.ins(imm.replace("{d}", dn).replace("{s}", ln));
                    return Ok(Opnd::Own(d));
                }
                let rhs = self.expr(b)?;
                let d = self.dest(lhs, Some(rhs))?;
                let m = match op {
                    BinOp::Add => "add",
                    BinOp::Sub => "sub",
                    BinOp::Mul => "mul",
                    BinOp::Div => "div",
                    BinOp::Rem => "rem",
                    BinOp::And => "and",
                    BinOp::Or => "or",
                    BinOp::Xor => "xor",
                    BinOp::Shl => "sll",
                    BinOp::Shr => "sra",
                };
                self.ins(format!("{m} {}, {}, {}", reg_name(d), reg_name(lhs.reg()), reg_name(rhs.reg())));
                for o in [lhs, rhs] {
                    if let Opnd::Own(r) = o {
                        if r != d {
                            self.release(r);
                        }
                    }
                }
                Ok(Opnd::Own(d))
            }
        }
    }

    /// Reuses an owned operand register as the destination when possible.
    fn dest(&mut self, a: Opnd, b: Option<Opnd>) -> Result<u8, LowerError> {
        match (a, b) {
            (Opnd::Own(r), _) | (_, Some(Opnd::Own(r))) => Ok(r),
            _ => self.alloc(),
        }
    }

    /// Immediate-form template for `lhs op constant`, if one exists.
    fn immediate(&self, op: BinOp, rhs: &Expr) -> Option<String> {
        let v = match rhs {
            Expr::Int(v) => *v,
            Expr::Name(n) if self.var_level(n).is_none() => *self.ir.consts.get(n)?,
            _ => return None,
        };
        let shift = (0..32).contains(&v);
        Some(match op {
            BinOp::Add if fits12(v) => format!("addi {{d}}, {{s}}, {v}"),
            BinOp::Sub if fits12(-v) => format!("addi {{d}}, {{s}}, {}", -v),
            BinOp::And if fits12(v) => format!("andi {{d}}, {{s}}, {v}"),
            BinOp::Or if fits12(v) => format!("ori {{d}}, {{s}}, {v}"),
            BinOp::Xor if fits12(v) => format!("xori {{d}}, {{s}}, {v}"),
            BinOp::Shl if shift => format!("slli {{d}}, {{s}}, {v}"),
            BinOp::Shr if shift => format!("srai {{d}}, {{s}}, {v}"),
            BinOp::Mul if is_pow2(v) && v < (1 << 31) => {
                format!("slli {{d}}, {{s}}, {}", v.trailing_zeros())
            }
            _ => return None,
        })
    }
}

fn lcm(a: u64, b: u64) -> u64 {
    fn gcd(a: u64, b: u64) -> u64 {
        if b == 0 { a } else { gcd(b, a % b) }
    }
    a / gcd(a, b) * b
}
