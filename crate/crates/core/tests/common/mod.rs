//! Shared helpers for integration tests: the kernel corpus, a direct
//! interpreter for kernels, and a runner for lowered images.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use permutev_core::cpu::{Cpu, CpuConfig, RetireEvent};
use permutev_core::rng::HybridRng;
use permutev_core::transform::{Bound, Expr, KernelIR, LValue, Lowered, Stmt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn kernel_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/kernels")
}

/// (file stem, source) for every kernel in the corpus, sorted by name.
pub fn corpus() -> Vec<(String, String)> {
    let mut out: Vec<_> = std::fs::read_dir(kernel_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "pvk"))
        .map(|p| (p.file_stem().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap()))
        .collect();
    out.sort();
    out
}

/// Observable kernel state: arrays, scalars and params by name.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct State {
    pub arrays: BTreeMap<String, Vec<i32>>,
    pub scalars: BTreeMap<String, i32>,
    pub params: BTreeMap<String, i32>,
}

/// Random inputs; params are drawn from 1..=8.
pub fn random_state(ir: &KernelIR, seed: u64) -> State {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut st = State::default();
    for a in &ir.arrays {
        st.arrays.insert(a.name.clone(), (0..a.len).map(|_| rng.random()).collect());
    }
    for s in &ir.scalars {
        st.scalars.insert(s.clone(), rng.random());
    }
    for p in &ir.params {
        st.params.insert(p.clone(), rng.random_range(1..=8));
    }
    st
}

/// Reference semantics: sequential execution; scalars assigned with `=`
/// are loop-private and never written back.
pub fn interpret(ir: &KernelIR, input: &State) -> State {
    let mut st = input.clone();
    let mut temps: BTreeMap<String, i32> = BTreeMap::new();
    let mut env: Vec<(String, i32)> = Vec::new();
    for l in &ir.loops {
        run_loop(ir, l, &mut st, &mut temps, &mut env);
    }
    st
}

fn bound(b: &Bound, st: &State) -> i32 {
    match b {
        Bound::Const(n) | Bound::Named(_, n) => *n as i32,
        Bound::Param(p) => st.params[p],
    }
}

fn run_loop(
    ir: &KernelIR,
    l: &permutev_core::transform::Loop,
    st: &mut State,
    temps: &mut BTreeMap<String, i32>,
    env: &mut Vec<(String, i32)>,
) {
    let n = bound(&l.bound, st);
    for i in 0..n {
        env.push((l.var.clone(), i));
        block(ir, &l.body, st, temps, env);
        env.pop();
    }
}

fn block(ir: &KernelIR, body: &[Stmt], st: &mut State, temps: &mut BTreeMap<String, i32>, env: &mut Vec<(String, i32)>) {
    for s in body {
        match s {
            Stmt::For(l) => run_loop(ir, l, st, temps, env),
            Stmt::Assign { target, value, .. } => {
                let v = eval(ir, value, st, temps, env);
                match target {
                    LValue::Name(n) => {
                        temps.insert(n.clone(), v);
                    }
                    LValue::Elem(a, i) => {
                        let i = eval(ir, i, st, temps, env) as usize;
                        st.arrays.get_mut(a).unwrap()[i] = v;
                    }
                }
            }
            Stmt::Reduce { target, op, value, .. } => {
                let v = eval(ir, value, st, temps, env);
                match target {
                    LValue::Name(n) => {
                        let acc = st.scalars.get_mut(n).unwrap();
                        *acc = op.apply(*acc, v);
                    }
                    LValue::Elem(a, i) => {
                        let i = eval(ir, i, st, temps, env) as usize;
                        let slot = &mut st.arrays.get_mut(a).unwrap()[i];
                        *slot = op.apply(*slot, v);
                    }
                }
            }
            Stmt::If { cond, then_body, else_body, .. } => {
                let a = eval(ir, &cond.lhs, st, temps, env);
                let b = eval(ir, &cond.rhs, st, temps, env);
                if cond.op.eval(a, b) {
                    block(ir, then_body, st, temps, env);
                } else {
                    block(ir, else_body, st, temps, env);
                }
            }
            Stmt::Break(_) | Stmt::Continue(_) => panic!("early exit in reference run"),
        }
    }
}

fn eval(ir: &KernelIR, e: &Expr, st: &State, temps: &BTreeMap<String, i32>, env: &[(String, i32)]) -> i32 {
    match e {
        Expr::Int(v) => *v as i32,
        Expr::Name(n) => {
            if let Some((_, v)) = env.iter().rev().find(|(k, _)| k == n) {
                *v
            } else if let Some(v) = temps.get(n) {
                *v
            } else if let Some(v) = ir.consts.get(n) {
                *v as i32
            } else if let Some(v) = st.params.get(n) {
                *v
            } else {
                st.scalars[n]
            }
        }
        Expr::Load(a, i) => {
            let i = eval(ir, i, st, temps, env) as usize;
            st.arrays[a][i]
        }
        Expr::Bin(op, a, b) => op.eval(eval(ir, a, st, temps, env), eval(ir, b, st, temps, env)),
        Expr::Neg(a) => eval(ir, a, st, temps, env).wrapping_neg(),
    }
}

/// Loads `input` into a fresh core, runs the image to `ebreak` and reads
/// the state back.
pub fn execute(low: &Lowered, input: &State, lig_seed: u64, block_size: u32) -> (State, Vec<RetireEvent>) {
    let cfg = CpuConfig { mem_size: low.layout.mem_size, block_size };
    let mut cpu = Cpu::new(cfg, HybridRng::seed(lig_seed));
    cpu.load_program(&low.program).unwrap();
    for (name, vals) in &input.arrays {
        let words: Vec<u32> = vals.iter().map(|&v| v as u32).collect();
        cpu.write_words(low.layout.arrays[name].0, &words).unwrap();
    }
    for (name, v) in input.scalars.iter().chain(&input.params) {
        let addr = low.layout.scalars.get(name).or_else(|| low.layout.params.get(name)).unwrap();
        cpu.write_words(*addr, &[*v as u32]).unwrap();
    }
    let events = cpu.run(50_000_000).unwrap();
    let mut out = input.clone();
    for (name, vals) in out.arrays.iter_mut() {
        let (addr, len) = low.layout.arrays[name];
        *vals = cpu.read_words(addr, len as usize).unwrap().into_iter().map(|w| w as i32).collect();
    }
    for (name, v) in out.scalars.iter_mut() {
        *v = cpu.read_words(low.layout.scalars[name], 1).unwrap()[0] as i32;
    }
    (out, events)
}

/// How many times each loop (pre-order) is entered for the given params.
pub fn loop_entries(ir: &KernelIR, st: &State) -> Vec<u64> {
    fn walk(l: &permutev_core::transform::Loop, times: u64, st: &State, out: &mut Vec<u64>) {
        out.push(times);
        let n = bound(&l.bound, st) as u64;
        for s in &l.body {
            if let Stmt::For(c) = s {
                walk(c, times * n, st, out);
            }
        }
    }
    let mut out = Vec::new();
    for l in &ir.loops {
        walk(l, 1, st, &mut out);
    }
    out
}

/// Instruction lines of a loop body in an assembly listing.
pub fn body_lines(asm: &str, top: &str, end: &str) -> Vec<String> {
    let mut inside = false;
    let mut out = Vec::new();
    for line in asm.lines() {
        let t = line.trim();
        if t == format!("{top}:") {
            inside = true;
        } else if t == format!("{end}:") {
            break;
        } else if inside && !t.ends_with(':') {
            out.push(t.to_string());
        }
    }
    out
}
