//! Functional RV32IM + PermuteV simulator.
//!
//! One retired instruction is one cycle. Every step yields a [`RetireEvent`]
//! carrying the writeback value and, for PermuteV arithmetic, the permuted
//! index consumed; the side-channel lab builds its leakage traces from these.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::isa::{decode, Instruction, Opcode, Program};
use crate::lig::{LigConfig, LigError, LigState};
use crate::rng::{BitSource, HybridRng};

pub const DEFAULT_MEM_SIZE: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CpuConfig {
    pub mem_size: usize,
    /// Block size shared by the three LIG slots.
    pub block_size: u32,
}

impl Default for CpuConfig {
    fn default() -> Self {
        CpuConfig { mem_size: DEFAULT_MEM_SIZE, block_size: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetireEvent {
    pub cycle: u64,
    pub pc: u32,
    pub ins: Instruction,
    pub writeback: Option<u32>,
    /// Permuted index read by a PermuteV arithmetic op.
    pub pi: Option<u32>,
    pub halt: bool,
}

impl RetireEvent {
    pub fn mnemonic(&self) -> &'static str {
        self.ins.mnemonic()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TrapKind {
    #[error("illegal instruction 0x{0:08x}")]
    Illegal(u32),
    #[error("LIG slot L{0} used before pv.init")]
    LigUninit(u8),
    #[error("LIG slot L{0} exhausted")]
    LigExhausted(u8),
    #[error("LIG slot L{slot} init failed: {reason}")]
    LigInit { slot: u8, reason: LigError },
    #[error("misaligned access at 0x{0:08x}")]
    Misaligned(u32),
    #[error("access outside memory at 0x{0:08x}")]
    OutOfBounds(u32),
    #[error("environment call")]
    Ecall,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("trap at pc 0x{pc:08x} (cycle {cycle}): {kind}")]
pub struct Trap {
    pub pc: u32,
    pub cycle: u64,
    pub kind: TrapKind,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RunError {
    #[error(transparent)]
    Trap(#[from] Trap),
    #[error("no halt within {0} steps")]
    Runaway(u64),
    #[error("max_steps must be at least 1")]
    ZeroSteps,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CountError {
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
}

/// Simulator state: registers, PC, flat little-endian memory and three
/// optional LIG slots fed by one bit source.
#[derive(Debug, Clone)]
pub struct Cpu<R: BitSource = HybridRng> {
    regs: [u32; 32],
    pc: u32,
    mem: Vec<u8>,
    lig: [Option<LigState>; 3],
    retired: u64,
    config: CpuConfig,
    rng: R,
}

impl<R: BitSource> Cpu<R> {
    pub fn new(config: CpuConfig, rng: R) -> Self {
        Cpu {
            regs: [0; 32],
            pc: 0,
            mem: vec![0; config.mem_size],
            lig: [None, None, None],
            retired: 0,
            config,
            rng,
        }
    }

    /// Clears registers, PC, LIG slots and the cycle counter and installs a
    /// fresh bit source. Memory is kept.
    pub fn reset(&mut self, rng: R) {
        self.regs = [0; 32];
        self.pc = 0;
        self.lig = [None, None, None];
        self.retired = 0;
        self.rng = rng;
    }

    pub fn config(&self) -> CpuConfig {
        self.config
    }

    pub fn reg(&self, r: u8) -> u32 {
        self.regs[r as usize]
    }

    pub fn regs(&self) -> &[u32; 32] {
        &self.regs
    }

    pub fn set_reg(&mut self, r: u8, v: u32) {
        if r != 0 {
            self.regs[r as usize] = v;
        }
    }

    pub fn pc(&self) -> u32 {
        self.pc
    }

    pub fn retired(&self) -> u64 {
        self.retired
    }

    pub fn lig(&self, slot: u8) -> Option<&LigState> {
        self.lig.get(slot as usize - 1).and_then(|s| s.as_ref())
    }

    pub fn memory(&self) -> &[u8] {
        &self.mem
    }

    pub fn load_program(&mut self, program: &Program) -> Result<(), TrapKind> {
        self.write_words(0, &program.words)
    }

    pub fn write_words(&mut self, addr: u32, words: &[u32]) -> Result<(), TrapKind> {
        for (k, &w) in words.iter().enumerate() {
            self.store(addr.wrapping_add(4 * k as u32), w, 4)?;
        }
        Ok(())
    }

    pub fn read_words(&self, addr: u32, count: usize) -> Result<Vec<u32>, TrapKind> {
        (0..count).map(|k| self.load(addr.wrapping_add(4 * k as u32), 4)).collect()
    }

    fn check(&self, addr: u32, size: u32) -> Result<usize, TrapKind> {
        if addr % size != 0 {
            return Err(TrapKind::Misaligned(addr));
        }
        let a = addr as usize;
        if a + size as usize > self.mem.len() {
            return Err(TrapKind::OutOfBounds(addr));
        }
        Ok(a)
    }

    fn load(&self, addr: u32, size: u32) -> Result<u32, TrapKind> {
        let a = self.check(addr, size)?;
        let mut v = 0u32;
        for k in (0..size as usize).rev() {
            v = v << 8 | self.mem[a + k] as u32;
        }
        Ok(v)
    }

    fn store(&mut self, addr: u32, value: u32, size: u32) -> Result<(), TrapKind> {
        let a = self.check(addr, size)?;
        for k in 0..size as usize {
            self.mem[a + k] = (value >> (8 * k)) as u8;
        }
        Ok(())
    }

    fn slot(&self, ln: u8) -> Result<&LigState, TrapKind> {
        self.lig[ln as usize - 1].as_ref().ok_or(TrapKind::LigUninit(ln))
    }

    fn lig_init(&mut self, ln: u8, n: u32) -> Result<(), TrapKind> {
        let config = LigConfig::new(self.config.block_size, ln)
            .map_err(|reason| TrapKind::LigInit { slot: ln, reason })?;
        let state = LigState::init(&config, n, &mut self.rng)
            .map_err(|reason| TrapKind::LigInit { slot: ln, reason })?;
        self.lig[ln as usize - 1] = Some(state);
        Ok(())
    }

    /// Executes one instruction.
    pub fn step(&mut self) -> Result<RetireEvent, Trap> {
        let pc = self.pc;
        let cycle = self.retired;
        let trap = |kind| Trap { pc, cycle, kind };
        let word = self.load(pc, 4).map_err(trap)?;
        let ins = decode(word);
        let outcome = self.execute(&ins, word).map_err(trap)?;
        if outcome.next_pc % 4 != 0 {
            return Err(trap(TrapKind::Misaligned(outcome.next_pc)));
        }
        let writeback = match outcome.rd_value {
            Some(v) if ins.rd != 0 => {
                self.regs[ins.rd as usize] = v;
                Some(v)
            }
            _ => None,
        };
        self.pc = outcome.next_pc;
        self.retired += 1;
        Ok(RetireEvent { cycle, pc, ins, writeback, pi: outcome.pi, halt: outcome.halt })
    }

    fn execute(&mut self, ins: &Instruction, word: u32) -> Result<Outcome, TrapKind> {
        use Opcode::*;
        let pc = self.pc;
        let rs1v = self.regs[ins.rs1 as usize];
        let rs2v = self.regs[ins.rs2 as usize];
        let imm = ins.imm as u32;
        let mut out = Outcome { rd_value: None, next_pc: pc.wrapping_add(4), pi: None, halt: false };

        // PermuteV operand: rs1 + (Ln.pi << x), read without advancing.
        let mut op1 = rs1v;
        if ins.ln != 0 && ins.op.has_counterpart() && !ins.op.is_branch() {
            let state = self.slot(ins.ln)?;
            let pi = state.pi().map_err(|_| TrapKind::LigExhausted(ins.ln))?;
            op1 = rs1v.wrapping_add(pi << ins.x);
            out.pi = Some(pi);
        }

        let branch = |out: &mut Outcome, taken: bool| {
            if taken {
                out.next_pc = pc.wrapping_add(imm);
            }
        };

        match ins.op {
            Illegal => return Err(TrapKind::Illegal(word)),
            Lui => out.rd_value = Some(imm),
            Auipc => out.rd_value = Some(pc.wrapping_add(imm)),
            Jal => {
                out.rd_value = Some(pc.wrapping_add(4));
                out.next_pc = pc.wrapping_add(imm);
            }
            Jalr => {
                out.rd_value = Some(pc.wrapping_add(4));
                out.next_pc = rs1v.wrapping_add(imm) & !1;
            }
            Beq | Bne if ins.ln != 0 => {
                let ln = ins.ln;
                let state = self.lig[ln as usize - 1].as_mut().ok_or(TrapKind::LigUninit(ln))?;
                state.advance(&mut self.rng).map_err(|e| match e {
                    LigError::Exhausted => TrapKind::LigExhausted(ln),
                    reason => TrapKind::LigInit { slot: ln, reason },
                })?;
                let count = state.iteration() << ins.x;
                let taken = if ins.op == Beq { rs1v == count } else { rs1v != count };
                branch(&mut out, taken);
            }
            Beq => branch(&mut out, rs1v == rs2v),
            Bne => branch(&mut out, rs1v != rs2v),
            Blt => branch(&mut out, (rs1v as i32) < (rs2v as i32)),
            Bge => branch(&mut out, (rs1v as i32) >= (rs2v as i32)),
            Bltu => branch(&mut out, rs1v < rs2v),
            Bgeu => branch(&mut out, rs1v >= rs2v),
            Lb => out.rd_value = Some(self.load(rs1v.wrapping_add(imm), 1)? as i8 as i32 as u32),
            Lh => out.rd_value = Some(self.load(rs1v.wrapping_add(imm), 2)? as i16 as i32 as u32),
            Lw => out.rd_value = Some(self.load(rs1v.wrapping_add(imm), 4)?),
            Lbu => out.rd_value = Some(self.load(rs1v.wrapping_add(imm), 1)?),
            Lhu => out.rd_value = Some(self.load(rs1v.wrapping_add(imm), 2)?),
            Sb => self.store(rs1v.wrapping_add(imm), rs2v, 1)?,
            Sh => self.store(rs1v.wrapping_add(imm), rs2v, 2)?,
            Sw => self.store(rs1v.wrapping_add(imm), rs2v, 4)?,
            Addi => out.rd_value = Some(rs1v.wrapping_add(imm)),
            Slti => out.rd_value = Some(((rs1v as i32) < ins.imm) as u32),
            Sltiu => out.rd_value = Some((rs1v < imm) as u32),
            Xori => out.rd_value = Some(rs1v ^ imm),
            Ori => out.rd_value = Some(rs1v | imm),
            Andi => out.rd_value = Some(rs1v & imm),
            Fence => {}
            Ecall => return Err(TrapKind::Ecall),
            Ebreak => out.halt = true,
            PvInit => self.lig_init(ins.ln, rs2v)?,
            PvIniti => self.lig_init(ins.ln, imm)?,
            Slli | Srli | Srai | Add | Sub | Sll | Slt | Sltu | Xor | Srl | Sra | Or | And | Mul
            | Mulh | Mulhsu | Mulhu | Div | Divu | Rem | Remu => {
                let op2 = if ins.op.is_shift_imm() { imm } else { rs2v };
                out.rd_value = Some(alu(ins.op, op1, op2));
            }
        }
        Ok(out)
    }

    /// Steps until `ebreak`, a trap, or `max_steps`, collecting every event.
    pub fn run(&mut self, max_steps: u64) -> Result<Vec<RetireEvent>, RunError> {
        let mut events = Vec::new();
        self.run_with(max_steps, |e| events.push(*e))?;
        Ok(events)
    }

    /// Like [`Cpu::run`] but hands each event to `sink` instead of storing it.
    /// Returns the number of retired instructions.
    pub fn run_with<F: FnMut(&RetireEvent)>(
        &mut self,
        max_steps: u64,
        mut sink: F,
    ) -> Result<u64, RunError> {
        if max_steps == 0 {
            return Err(RunError::ZeroSteps);
        }
        for n in 1..=max_steps {
            let ev = self.step()?;
            sink(&ev);
            if ev.halt {
                return Ok(n);
            }
        }
        Err(RunError::Runaway(max_steps))
    }
}

struct Outcome {
    rd_value: Option<u32>,
    next_pc: u32,
    pi: Option<u32>,
    halt: bool,
}

/// Register-register / shift-immediate ALU, M-extension corner cases included.
pub fn alu(op: Opcode, a: u32, b: u32) -> u32 {
    use Opcode::*;
    let (sa, sb) = (a as i32, b as i32);
    match op {
        Add => a.wrapping_add(b),
        Sub => a.wrapping_sub(b),
        Sll | Slli => a << (b & 31),
        Srl | Srli => a >> (b & 31),
        Sra | Srai => (sa >> (b & 31)) as u32,
        Slt => (sa < sb) as u32,
        Sltu => (a < b) as u32,
        Xor => a ^ b,
        Or => a | b,
        And => a & b,
        Mul => a.wrapping_mul(b),
        Mulh => ((sa as i64 * sb as i64) >> 32) as u32,
        Mulhsu => ((sa as i64 * b as i64) >> 32) as u32,
        Mulhu => ((a as u64 * b as u64) >> 32) as u32,
        Div => match (sa, sb) {
            (_, 0) => u32::MAX,
            (i32::MIN, -1) => a,
            _ => (sa / sb) as u32,
        },
        Divu => a.checked_div(b).unwrap_or(u32::MAX),
        Rem => match (sa, sb) {
            (_, 0) => a,
            (i32::MIN, -1) => 0,
            _ => (sa % sb) as u32,
        },
        Remu => a.checked_rem(b).unwrap_or(a),
        _ => unreachable!("not an ALU opcode: {op:?}"),
    }
}

/// Dynamic count of retired instructions whose PC lies in
/// `[symbol(start), symbol(end))`.
pub fn count_loop_body_instructions(
    events: &[RetireEvent],
    symbols: &BTreeMap<String, u32>,
    start: &str,
    end: &str,
) -> Result<u64, CountError> {
    let lo = *symbols.get(start).ok_or_else(|| CountError::UnknownLabel(start.into()))?;
    let hi = *symbols.get(end).ok_or_else(|| CountError::UnknownLabel(end.into()))?;
    Ok(events.iter().filter(|e| (lo..hi).contains(&e.pc)).count() as u64)
}

/// Event log as CSV: `cycle,pc,mnemonic,writeback_hex,pi`.
pub fn events_csv(events: &[RetireEvent]) -> String {
    let mut s = String::from("cycle,pc,mnemonic,writeback_hex,pi\n");
    for e in events {
        let wb = e.writeback.map(|v| format!("0x{v:08x}")).unwrap_or_default();
        let pi = e.pi.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},0x{:08x},{},{},{}", e.cycle, e.pc, e.mnemonic(), wb, pi);
    }
    s
}
