//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset.

mod common;

use std::collections::BTreeSet;
use std::time::Instant;

use permutev_core::cpu::{count_loop_body_instructions, Cpu, CpuConfig};
use permutev_core::isa::{decode, encode, Instruction, Opcode};
use permutev_core::lig::{lig_stream, LigConfig};
use permutev_core::rng::{mix_seed, HybridRng};
use permutev_core::sidechannel::{
    sweep_csv, sweep_experiment, Campaign, CampaignConfig, Core, Scenario, DEFAULT_SCHEDULE, DEFAULT_STABILITY,
};
use permutev_core::transform::{lower, parse_kernel, LigAssignment, Mode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use common::{corpus, execute, interpret, loop_entries, random_state};

// Criterion 1
const COVERAGE_CASES: usize = 1_000;
const COVERAGE_MAX_N: u32 = 4096;
// Criterion 2
const UNIFORM_SEEDS: u64 = 100_000;
const UNIFORM_TOL: f64 = 0.01;
// Criterion 3
const OPERAND_DRAWS: usize = 10_000;
const RANDOM_PROGRAMS: usize = 10_000;
const PROGRAM_LEN: u32 = 48;
// Criterion 4
const INPUTS_PER_KERNEL: u64 = 100;
const LIG_SEEDS: u64 = 10;
// Criterion 5
const MAX_OVERHEAD_PER_ENTRY: i64 = 2;
// Criteria 6 to 9
const SIGMA: f64 = 1.0;
const CAMPAIGN_SEED: u64 = 0x5eed;
const FAST_BUDGET: usize = 5_000;
const DEFENSE_BUDGET: usize = 50_000;
const SWEEP_BUDGET: usize = 20_000;
const SWEEP_NS: [usize; 4] = [16, 32, 48, 64];
const SWEEP_TOL: usize = 1;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

type Criterion = (u32, &'static str, fn() -> Verdict);

fn main() {
    let wanted: BTreeSet<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [Criterion; 9] = [
        (1, "permutation coverage", permutation_coverage),
        (2, "slot uniformity", slot_uniformity),
        (3, "ISA round-trip and conservativity", isa_round_trip),
        (4, "semantic preservation", semantic_preservation),
        (5, "instruction parity", instruction_parity),
        (6, "sequential core breaks fast", sequential_breaks_fast),
        (7, "defense effectiveness", defense_effectiveness),
        (8, "N-scaling trend", n_scaling),
        (9, "determinism", determinism),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let v = run();
        failed += usize::from(!v.pass);
        println!(
            "criterion {id} {name}: {} ({}) [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn permutation_coverage() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bad = Vec::new();
    for _ in 0..COVERAGE_CASES {
        let seed: u64 = rng.random();
        let n = rng.random_range(1..=COVERAGE_MAX_N);
        let b = if rng.random::<bool>() { 4 } else { 8 };
        let cfg = LigConfig::new(b, 1).unwrap();
        let mut s = lig_stream(&cfg, n, &mut HybridRng::seed(seed)).unwrap();
        s.sort_unstable();
        if s != (0..n).collect::<Vec<_>>() {
            bad.push((seed, n, b));
        }
    }
    verdict(bad.is_empty(), format!("{} of {COVERAGE_CASES} streams not a permutation {bad:?}", bad.len()))
}

fn slot_uniformity() -> Verdict {
    const N: usize = 16;
    let cfg = LigConfig::new(4, 1).unwrap();
    let counts = (0..UNIFORM_SEEDS)
        .into_par_iter()
        .fold(
            || vec![[0u64; N]; N],
            |mut c, k| {
                let s = lig_stream(&cfg, N as u32, &mut HybridRng::seed(mix_seed(0x5107, k))).unwrap();
                for (slot, &idx) in s.iter().enumerate() {
                    c[slot][idx as usize] += 1;
                }
                c
            },
        )
        .reduce(
            || vec![[0u64; N]; N],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    for (p, q) in x.iter_mut().zip(y) {
                        *p += q;
                    }
                }
                a
            },
        );
    let worst = counts
        .iter()
        .flatten()
        .map(|&c| (c as f64 / UNIFORM_SEEDS as f64 - 1.0 / N as f64).abs())
        .fold(0.0, f64::max);
    verdict(worst <= UNIFORM_TOL, format!("max |freq - 1/16| = {worst:.5}, tolerance {UNIFORM_TOL}"))
}

// ---------------------------------------------------------------- criterion 3

/// Random well-formed instance of a PermuteV mnemonic's opcode.
fn random_pv(op: Opcode, rng: &mut ChaCha8Rng) -> Instruction {
    let reg = |rng: &mut ChaCha8Rng| rng.random_range(0..32u8);
    let ln = rng.random_range(1..=3u8);
    let x = rng.random_range(0..=2u8);
    match op {
        Opcode::PvInit => Instruction::pv_init(ln, reg(rng)),
        Opcode::PvIniti => Instruction::pv_initi(ln, rng.random_range(1..=4095)),
        op if op.is_branch() => Instruction::b(op, reg(rng), 0, rng.random_range(-2048..2048) * 2).with_lig(ln, x),
        op if op.is_shift_imm() => Instruction::i(op, reg(rng), reg(rng), rng.random_range(0..32)).with_lig(ln, x),
        op => Instruction::r(op, reg(rng), reg(rng), reg(rng)).with_lig(ln, x),
    }
}

fn pv_opcodes() -> Vec<(&'static str, Opcode)> {
    let mut v: Vec<(&'static str, Opcode)> =
        Opcode::ALL.iter().filter_map(|&op| op.pv_name().map(|n| (n, op))).collect();
    v.push(("pv.init", Opcode::PvInit));
    v.push(("pv.initi", Opcode::PvIniti));
    v.sort();
    v.dedup();
    v
}

fn isa_round_trip() -> Verdict {
    let ops = pv_opcodes();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for &(name, op) in &ops {
        for _ in 0..OPERAND_DRAWS {
            let ins = random_pv(op, &mut rng);
            let ok = encode(&ins).map(|w| decode(w) == ins && decode(w).mnemonic() == name).unwrap_or(false);
            mismatches += usize::from(!ok);
        }
    }
    let diverged: Vec<u64> = (0..RANDOM_PROGRAMS as u64).into_par_iter().filter(|&s| !program_agrees(s)).collect();
    verdict(
        ops.len() == 25 && mismatches == 0 && diverged.is_empty(),
        format!(
            "{} mnemonics x {OPERAND_DRAWS} draws, {mismatches} mismatches; {} of {RANDOM_PROGRAMS} programs diverge {:?}",
            ops.len(),
            diverged.len(),
            &diverged[..diverged.len().min(5)]
        ),
    )
}

const DATA: u32 = 0x400;
const MEM: usize = 0x1000;

fn enc_r(f7: u32, rs2: u32, rs1: u32, f3: u32, rd: u32, op: u32) -> u32 {
    f7 << 25 | rs2 << 20 | rs1 << 15 | f3 << 12 | rd << 7 | op
}

fn enc_i(imm: i32, rs1: u32, f3: u32, rd: u32, op: u32) -> u32 {
    ((imm as u32) & 0xfff) << 20 | rs1 << 15 | f3 << 12 | rd << 7 | op
}

fn enc_s(imm: i32, rs2: u32, rs1: u32, f3: u32) -> u32 {
    let i = imm as u32;
    (i >> 5 & 0x7f) << 25 | rs2 << 20 | rs1 << 15 | f3 << 12 | (i & 0x1f) << 7 | 0x23
}

fn enc_b(imm: i32, rs2: u32, rs1: u32, f3: u32) -> u32 {
    let i = imm as u32;
    (i >> 12 & 1) << 31 | (i >> 5 & 0x3f) << 25 | rs2 << 20 | rs1 << 15 | f3 << 12 | (i >> 1 & 0xf) << 8 | (i >> 11 & 1) << 7 | 0x63
}

fn enc_j(imm: i32, rd: u32) -> u32 {
    let i = imm as u32;
    (i >> 20 & 1) << 31 | (i >> 1 & 0x3ff) << 21 | (i >> 11 & 1) << 20 | (i >> 12 & 0xff) << 12 | rd << 7 | 0x6f
}

/// Random terminating RV32IM program (code stays below `DATA`): forward control flow only, memory
/// accesses aligned inside the data window, ends in `ebreak`.
fn random_program(rng: &mut ChaCha8Rng) -> Vec<u32> {
    let mut words = Vec::with_capacity(PROGRAM_LEN as usize + 1);
    for k in 0..PROGRAM_LEN {
        let rd = rng.random_range(0..32u32);
        let rs1 = rng.random_range(0..32u32);
        let rs2 = rng.random_range(0..32u32);
        let forward = |rng: &mut ChaCha8Rng| 4 * (rng.random_range(k + 1..=PROGRAM_LEN) - k) as i32;
        let w = match rng.random_range(0..100) {
            0..30 => {
                let (f7, f3) = match rng.random_range(0..18) {
                    f3 @ 0..8 => (0, f3),
                    8 => (0x20, 0),
                    9 => (0x20, 5),
                    m => (1, m - 10),
                };
                enc_r(f7, rs2, rs1, f3, rd, 0x33)
            }
            30..50 => {
                let f3 = [0, 2, 3, 4, 6, 7][rng.random_range(0..6)];
                enc_i(rng.random_range(-2048..2048), rs1, f3, rd, 0x13)
            }
            50..58 => {
                let (f7, f3) = [(0, 1), (0, 5), (0x20, 5)][rng.random_range(0..3)];
                enc_r(f7, rng.random_range(0..32), rs1, f3, rd, 0x13)
            }
            58..66 => (rng.random::<u32>() & !0xfff) | rd << 7 | if rng.random() { 0x37 } else { 0x17 },
            66..76 => {
                let (f3, size) = [(0, 1), (1, 2), (2, 4), (4, 1), (5, 2)][rng.random_range(0..5)];
                let addr = DATA + rng.random_range(0..0x3ff / size) * size;
                enc_i(addr as i32, 0, f3, rd, 0x03)
            }
            76..86 => {
                let (f3, size) = [(0, 1), (1, 2), (2, 4)][rng.random_range(0..3)];
                let addr = DATA + rng.random_range(0..0x3ff / size) * size;
                enc_s(addr as i32, rs2, 0, f3)
            }
            86..94 => {
                let f3 = [0, 1, 4, 5, 6, 7][rng.random_range(0..6)];
                enc_b(forward(rng), rs2, rs1, f3)
            }
            94..97 => enc_j(forward(rng), rd),
            97..99 => {
                let target = 4 * rng.random_range(k + 1..=PROGRAM_LEN) as i32;
                enc_i(target, 0, 0, rd, 0x67)
            }
            _ => 0x0ff0_000f,
        };
        words.push(w);
    }
    words.push(0x0010_0073);
    words
}

/// Minimal RV32IM interpreter working from raw bit fields.
struct Reference {
    x: [u32; 32],
    pc: u32,
    mem: Vec<u8>,
    retired: u64,
}

impl Reference {
    fn load(&self, a: u32, n: u32) -> u32 {
        (0..n).rev().fold(0, |v, k| v << 8 | self.mem[(a + k) as usize] as u32)
    }

    fn store(&mut self, a: u32, v: u32, n: u32) {
        for k in 0..n {
            self.mem[(a + k) as usize] = (v >> (8 * k)) as u8;
        }
    }

    /// Executes until `ebreak`; returns false on anything unexpected.
    fn run(&mut self, limit: u64) -> bool {
        while self.retired < limit {
            let w = self.load(self.pc, 4);
            let (op, rd, f3, rs1, rs2, f7) =
                (w & 0x7f, (w >> 7 & 31) as usize, w >> 12 & 7, (w >> 15 & 31) as usize, (w >> 20 & 31) as usize, w >> 25);
            let (a, b) = (self.x[rs1], self.x[rs2]);
            let imm_i = (w as i32 >> 20) as u32;
            let mut next = self.pc.wrapping_add(4);
            let mut val = None;
            match op {
                0x37 => val = Some(w & !0xfff),
                0x17 => val = Some(self.pc.wrapping_add(w & !0xfff)),
                0x6f => {
                    let imm = ((w >> 31) << 20 | (w >> 12 & 0xff) << 12 | (w >> 20 & 1) << 11 | (w >> 21 & 0x3ff) << 1) as i32;
                    val = Some(next);
                    next = self.pc.wrapping_add(((imm << 11) >> 11) as u32);
                }
                0x67 => {
                    val = Some(next);
                    next = a.wrapping_add(imm_i) & !1;
                }
                0x63 => {
                    let imm = ((w >> 31) << 12 | (w >> 7 & 1) << 11 | (w >> 25 & 0x3f) << 5 | (w >> 8 & 0xf) << 1) as i32;
                    let taken = match f3 {
                        0 => a == b,
                        1 => a != b,
                        4 => (a as i32) < (b as i32),
                        5 => (a as i32) >= (b as i32),
                        6 => a < b,
                        7 => a >= b,
                        _ => return false,
                    };
                    if taken {
                        next = self.pc.wrapping_add(((imm << 19) >> 19) as u32);
                    }
                }
                0x03 => {
                    let addr = a.wrapping_add(imm_i);
                    val = Some(match f3 {
                        0 => self.load(addr, 1) as i8 as u32,
                        1 => self.load(addr, 2) as i16 as u32,
                        2 => self.load(addr, 4),
                        4 => self.load(addr, 1),
                        5 => self.load(addr, 2),
                        _ => return false,
                    });
                }
                0x23 => {
                    let imm = ((w as i32 >> 25) << 5) as u32 | (w >> 7 & 31);
                    self.store(a.wrapping_add(imm), b, 1 << f3);
                }
                0x13 => {
                    let sh = w >> 20 & 31;
                    val = Some(match f3 {
                        0 => a.wrapping_add(imm_i),
                        1 => a << sh,
                        2 => ((a as i32) < imm_i as i32) as u32,
                        3 => (a < imm_i) as u32,
                        4 => a ^ imm_i,
                        5 if f7 == 0x20 => ((a as i32) >> sh) as u32,
                        5 => a >> sh,
                        6 => a | imm_i,
                        _ => a & imm_i,
                    });
                }
                0x33 => {
                    let (sa, sb) = (a as i32, b as i32);
                    val = Some(match (f7, f3) {
                        (0, 0) => a.wrapping_add(b),
                        (0x20, 0) => a.wrapping_sub(b),
                        (0, 1) => a << (b & 31),
                        (0, 2) => (sa < sb) as u32,
                        (0, 3) => (a < b) as u32,
                        (0, 4) => a ^ b,
                        (0, 5) => a >> (b & 31),
                        (0x20, 5) => (sa >> (b & 31)) as u32,
                        (0, 6) => a | b,
                        (0, 7) => a & b,
                        (1, 0) => a.wrapping_mul(b),
                        (1, 1) => ((sa as i64 * sb as i64) >> 32) as u32,
                        (1, 2) => ((sa as i64 * b as i64) >> 32) as u32,
                        (1, 3) => ((a as u64 * b as u64) >> 32) as u32,
                        (1, 4) => match sb {
                            0 => u32::MAX,
                            -1 => sa.wrapping_neg() as u32,
                            _ => (sa / sb) as u32,
                        },
                        (1, 5) => a.checked_div(b).unwrap_or(u32::MAX),
                        (1, 6) => match sb {
                            0 => a,
                            -1 => 0,
                            _ => (sa % sb) as u32,
                        },
                        (1, 7) => a.checked_rem(b).unwrap_or(a),
                        _ => return false,
                    });
                }
                0x0f => {}
                0x73 if w == 0x0010_0073 => {
                    self.retired += 1;
                    return true;
                }
                _ => return false,
            }
            if let (Some(v), true) = (val, rd != 0) {
                self.x[rd] = v;
            }
            self.pc = next;
            self.retired += 1;
        }
        false
    }
}

fn program_agrees(seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(0xc0de, seed));
    let words = random_program(&mut rng);
    let data: Vec<u32> = (0..0x100).map(|_| rng.random()).collect();

    let mut cpu = Cpu::new(CpuConfig { mem_size: MEM, block_size: 4 }, HybridRng::seed(seed));
    cpu.write_words(0, &words).unwrap();
    cpu.write_words(DATA, &data).unwrap();
    let got = cpu.run(1_000);

    let mut r = Reference { x: [0; 32], pc: 0, mem: vec![0; MEM], retired: 0 };
    for (k, w) in words.iter().enumerate() {
        r.store(4 * k as u32, *w, 4);
    }
    for (k, w) in data.iter().enumerate() {
        r.store(DATA + 4 * k as u32, *w, 4);
    }
    let halted = r.run(1_000);
    // compare the pc of the halting instruction
    let halt_pc = got.ok().and_then(|ev| ev.last().map(|e| e.pc));
    halted && halt_pc == Some(r.pc) && cpu.regs() == &r.x && cpu.memory() == r.mem.as_slice() && cpu.retired() == r.retired
}

// ------------------------------------------------------------- criteria 4, 5

fn block_for(seed: u64) -> u32 {
    if seed % 2 == 0 {
        4
    } else {
        8
    }
}

fn semantic_preservation() -> Verdict {
    let kernels = corpus();
    let styles: BTreeSet<&str> = kernels.iter().map(|(n, _)| &n[..2]).collect();
    let failures: Vec<String> = kernels
        .par_iter()
        .flat_map(|(name, src)| {
            let ir = parse_kernel(src).unwrap();
            let base = lower(&ir, Mode::Baseline, LigAssignment::default()).unwrap();
            let perm = lower(&ir, Mode::Permuted, LigAssignment::default()).unwrap();
            (0..INPUTS_PER_KERNEL)
                .into_par_iter()
                .filter_map(|i| {
                    let input = random_state(&ir, mix_seed(0x1a, i));
                    let (b, _) = execute(&base, &input, 0, 4);
                    if b != interpret(&ir, &input) {
                        return Some(format!("{name} input {i}: baseline differs from reference"));
                    }
                    (0..LIG_SEEDS).find_map(|s| {
                        let (p, _) = execute(&perm, &input, mix_seed(0x11, s), block_for(s));
                        (p != b).then(|| format!("{name} input {i} seed {s}"))
                    })
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let runs = kernels.len() as u64 * INPUTS_PER_KERNEL * LIG_SEEDS;
    verdict(
        kernels.len() >= 20 && styles.len() == 4 && failures.is_empty(),
        format!("{} kernels, {} styles, {runs} permuted runs, {} mismatches {:?}", kernels.len(), styles.len(), failures.len(), failures.first()),
    )
}

fn instruction_parity() -> Verdict {
    let mut problems = Vec::new();
    let mut worst = 0.0f64;
    for (name, src) in corpus() {
        let ir = parse_kernel(&src).unwrap();
        let base = lower(&ir, Mode::Baseline, LigAssignment::default()).unwrap();
        let perm = lower(&ir, Mode::Permuted, LigAssignment::default()).unwrap();
        for k in 0..base.loops.len() {
            if base.static_body_count(k) != perm.static_body_count(k) {
                problems.push(format!("{name} loop {k} static"));
            }
        }
        for i in 0..5 {
            let input = random_state(&ir, mix_seed(0x9a, i));
            let (_, eb) = execute(&base, &input, 0, 4);
            let (_, ep) = execute(&perm, &input, mix_seed(0x11, i), block_for(i));
            for (k, l) in base.loops.iter().enumerate() {
                let db = count_loop_body_instructions(&eb, &base.program.symbols, &l.top, &l.end).unwrap();
                let dp = count_loop_body_instructions(&ep, &perm.program.symbols, &l.top, &l.end).unwrap();
                if db != dp {
                    problems.push(format!("{name} loop {k} dynamic {db} vs {dp}"));
                }
            }
            let entries: u64 = loop_entries(&ir, &input).iter().sum();
            let overhead = ep.len() as i64 - eb.len() as i64;
            worst = worst.max(overhead as f64 / entries.max(1) as f64);
            if overhead > MAX_OVERHEAD_PER_ENTRY * entries as i64 {
                problems.push(format!("{name}: overhead {overhead} over {entries} loop executions"));
            }
        }
    }
    verdict(problems.is_empty(), format!("worst overhead {worst:.2} per loop execution (limit {MAX_OVERHEAD_PER_ENTRY}); {problems:?}"))
}

// --------------------------------------------------------------- criteria 6-9

fn campaign(core: Core, traces: usize) -> Campaign<f64> {
    Campaign::generate(CampaignConfig { n: 16, core, sigma: SIGMA, traces, seed: CAMPAIGN_SEED }).unwrap()
}

fn recovered_set(c: &Campaign<f64>, s: Scenario) -> (BTreeSet<usize>, String) {
    let r = c.attack(s, &DEFAULT_SCHEDULE, DEFAULT_STABILITY).unwrap();
    let set = r.weights.iter().filter(|w| w.min_traces.is_some()).map(|w| w.index).collect();
    let worst = r.weights.iter().filter_map(|w| w.min_traces).max();
    (set, format!("{s} {} at most {worst:?} traces", r.recovered()))
}

fn sequential_breaks_fast() -> Verdict {
    let c = campaign(Core::Sequential, FAST_BUDGET);
    let (wb, wd) = recovered_set(&c, Scenario::WhiteBox);
    let (bb, bd) = recovered_set(&c, Scenario::BlackBox);
    verdict(wb.len() == 16 && bb.len() == 16, format!("budget {FAST_BUDGET}: {wd}; {bd}"))
}

fn defense_effectiveness() -> Verdict {
    let seq = campaign(Core::Sequential, DEFENSE_BUDGET);
    let b4 = campaign(Core::Permuted { block_size: 4 }, DEFENSE_BUDGET);
    let b8 = campaign(Core::Permuted { block_size: 8 }, DEFENSE_BUDGET);
    let (seq_wb, _) = recovered_set(&seq, Scenario::WhiteBox);
    let (b4_wb, _) = recovered_set(&b4, Scenario::WhiteBox);
    let (b4_bb, _) = recovered_set(&b4, Scenario::BlackBox);
    let (b8_wb, _) = recovered_set(&b8, Scenario::WhiteBox);
    let (b8_bb, _) = recovered_set(&b8, Scenario::BlackBox);
    let a = b4_bb.iter().all(|&k| k == 0);
    let b = b4_wb.len() < seq_wb.len();
    let c = b4_wb.contains(&15) && b8_wb.contains(&15);
    let d = b8_wb.len() <= b4_wb.len() && b8_bb.len() <= b4_bb.len();
    verdict(
        a && b && c && d,
        format!(
            "(a) {a} B=4 black-box {b4_bb:?}; (b) {b} white-box B=4 {} vs sequential {}; (c) {c} last weight B=4/B=8 {}/{}; (d) {d} B=8 {}/{} vs B=4 {}/{} (white/black)",
            b4_wb.len(),
            seq_wb.len(),
            b4_wb.contains(&15),
            b8_wb.contains(&15),
            b8_wb.len(),
            b8_bb.len(),
            b4_wb.len(),
            b4_bb.len()
        ),
    )
}

fn n_scaling() -> Verdict {
    let cores = [Core::Permuted { block_size: 4 }, Core::Permuted { block_size: 8 }];
    let rows = sweep_experiment::<f64>(
        &SWEEP_NS,
        &cores,
        Scenario::WhiteBox,
        SWEEP_BUDGET,
        SIGMA,
        CAMPAIGN_SEED,
        &DEFAULT_SCHEDULE,
        DEFAULT_STABILITY,
    )
    .unwrap();
    let count = |n: usize, core: Core| rows.iter().find(|r| r.n == n && r.core == core).unwrap().recovered;
    let mut ok = true;
    let mut detail = Vec::new();
    for core in cores {
        let series: Vec<usize> = SWEEP_NS.iter().map(|&n| count(n, core)).collect();
        ok &= series.windows(2).all(|w| w[1] <= w[0]);
        detail.push(format!("{core}: {series:?}"));
    }
    for n in [48, 64] {
        ok &= count(n, cores[0]).abs_diff(count(n, cores[1])) <= SWEEP_TOL;
    }
    verdict(ok, format!("white-box, budget {SWEEP_BUDGET}, N = {SWEEP_NS:?}: {}", detail.join("; ")))
}

fn determinism() -> Verdict {
    let experiment = || {
        let cfg = CampaignConfig { n: 16, core: Core::Permuted { block_size: 4 }, sigma: SIGMA, traces: 3_000, seed: 99 };
        let c = Campaign::<f64>::generate(cfg).unwrap();
        let mut out = String::new();
        for s in [Scenario::WhiteBox, Scenario::BlackBox] {
            out += &c.attack(s, &DEFAULT_SCHEDULE, DEFAULT_STABILITY).unwrap().to_csv();
        }
        let rows = sweep_experiment::<f64>(
            &[16, 32],
            &[Core::Sequential, Core::Permuted { block_size: 8 }],
            Scenario::BlackBox,
            1_000,
            SIGMA,
            7,
            &DEFAULT_SCHEDULE,
            DEFAULT_STABILITY,
        )
        .unwrap();
        out + &sweep_csv(&rows)
    };
    let first = experiment();
    let second = experiment();
    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(experiment);
    verdict(
        first == second && first == serial,
        format!("{} bytes; repeat identical {}; single-thread identical {}", first.len(), first == second, first == serial),
    )
}

