//! Two-pass assembler for RV32IM + PermuteV.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{encode, EncodeError, Instruction, Opcode};

/// A flat program image loaded at address 0, entry at word 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Program {
    pub words: Vec<u32>,
    /// Label → byte address.
    pub symbols: BTreeMap<String, u32>,
}

impl Program {
    pub fn to_bytes(&self) -> Vec<u8> {
        self.words.iter().flat_map(|w| w.to_le_bytes()).collect()
    }

    /// Reads a little-endian image; trailing bytes that do not fill a word
    /// are rejected.
    pub fn from_bytes(bytes: &[u8]) -> Option<Program> {
        if bytes.len() % 4 != 0 {
            return None;
        }
        let words = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Some(Program { words, symbols: BTreeMap::new() })
    }

    pub fn symbol(&self, name: &str) -> Option<u32> {
        self.symbols.get(name).copied()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AsmErrorKind {
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("bad operand `{0}`")]
    BadOperand(String),
    #[error("expected {expected} operands, found {found}")]
    OperandCount { expected: usize, found: usize },
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {kind}")]
pub struct AsmError {
    pub line: usize,
    pub kind: AsmErrorKind,
}

struct Line<'a> {
    number: usize,
    mnemonic: &'a str,
    operands: Vec<&'a str>,
    addr: u32,
}

/// Assembles a listing into a program image plus symbol table.
pub fn assemble(text: &str) -> Result<Program, AsmError> {
    let mut symbols = BTreeMap::new();
    let mut lines = Vec::new();
    let mut addr = 0u32;

    for (idx, raw) in text.lines().enumerate() {
        let number = idx + 1;
        let mut rest = raw.split('#').next().unwrap_or("").trim();
        while let Some(colon) = label_end(rest) {
            let name = rest[..colon].trim();
            if symbols.insert(name.to_string(), addr).is_some() {
                return Err(AsmError { line: number, kind: AsmErrorKind::DuplicateLabel(name.into()) });
            }
            rest = rest[colon + 1..].trim();
        }
        if rest.is_empty() {
            continue;
        }
        let (mnemonic, ops) = match rest.find(char::is_whitespace) {
            Some(p) => (&rest[..p], rest[p..].trim()),
            None => (rest, ""),
        };
        let operands: Vec<&str> = if ops.is_empty() {
            Vec::new()
        } else {
            ops.split(',').map(str::trim).collect()
        };
        let size = size_of(mnemonic, &operands).map_err(|kind| AsmError { line: number, kind })?;
        lines.push(Line { number, mnemonic, operands, addr });
        addr += 4 * size;
    }

    let mut words = Vec::with_capacity(addr as usize / 4);
    for line in &lines {
        let emitted = emit(line, &symbols).map_err(|kind| AsmError { line: line.number, kind })?;
        words.extend(emitted);
    }
    Ok(Program { words, symbols })
}

fn label_end(s: &str) -> Option<usize> {
    let colon = s.find(':')?;
    let name = &s[..colon];
    let ok = !name.is_empty()
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        && !name.starts_with(|c: char| c.is_ascii_digit());
    ok.then_some(colon)
}

fn size_of(mnemonic: &str, ops: &[&str]) -> Result<u32, AsmErrorKind> {
    Ok(match mnemonic {
        "li" => {
            let v = ops.get(1).map(|s| parse_int(s)).transpose()?.unwrap_or(0);
            li_sequence(0, v).len() as u32
        }
        _ => 1,
    })
}

/// `li` expansion: one `addi` when the value fits 12 signed bits, otherwise
/// `lui` (+ `addi` when the low part is non-zero).
fn li_sequence(rd: u8, value: i64) -> Vec<Instruction> {
    let v = value as i32;
    if (-2048..2048).contains(&v) {
        return vec![Instruction::i(Opcode::Addi, rd, 0, v)];
    }
    let lo = (v << 20) >> 20;
    let hi = v.wrapping_sub(lo) as u32 & 0xffff_f000;
    let mut seq = vec![Instruction { rd, imm: hi as i32, ..Instruction::new(Opcode::Lui) }];
    if lo != 0 {
        seq.push(Instruction::i(Opcode::Addi, rd, rd, lo));
    }
    seq
}

pub(crate) fn parse_int(s: &str) -> Result<i64, AsmErrorKind> {
    let t = s.trim();
    let (neg, body) = match t.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, t),
    };
    let v = if let Some(h) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(h, 16)
    } else if let Some(b) = body.strip_prefix("0b") {
        i64::from_str_radix(b, 2)
    } else {
        body.parse::<i64>()
    }
    .map_err(|_| AsmErrorKind::BadOperand(s.to_string()))?;
    Ok(if neg { -v } else { v })
}

const ABI: [&str; 32] = [
    "zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2", "s0", "s1", "a0", "a1", "a2", "a3", "a4",
    "a5", "a6", "a7", "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9", "s10", "s11", "t3", "t4",
    "t5", "t6",
];

pub(crate) fn parse_reg(s: &str) -> Result<u8, AsmErrorKind> {
    let t = s.trim();
    if let Some(n) = t.strip_prefix('x') {
        if let Ok(v) = n.parse::<u8>() {
            if v < 32 {
                return Ok(v);
            }
        }
    }
    if t == "fp" {
        return Ok(8);
    }
    ABI.iter()
        .position(|&r| r == t)
        .map(|p| p as u8)
        .ok_or_else(|| AsmErrorKind::BadOperand(s.to_string()))
}

/// Parses `Ln.x` (or `Ln` when `with_shift` is false).
fn parse_lig(s: &str, with_shift: bool) -> Result<(u8, u8), AsmErrorKind> {
    let bad = || AsmErrorKind::BadOperand(s.to_string());
    let body = s.trim().strip_prefix('L').ok_or_else(bad)?;
    let (ln, x) = match body.split_once('.') {
        Some((l, x)) if with_shift => (l, x),
        None if !with_shift => (body, "0"),
        _ => return Err(bad()),
    };
    let ln: u8 = ln.parse().map_err(|_| bad())?;
    let x: u8 = x.parse().map_err(|_| bad())?;
    if !(1..=3).contains(&ln) || x > 2 {
        return Err(bad());
    }
    Ok((ln, x))
}

fn parse_mem(s: &str) -> Result<(i32, u8), AsmErrorKind> {
    let t = s.trim();
    let open = t.find('(').ok_or_else(|| AsmErrorKind::BadOperand(s.to_string()))?;
    let close = t.rfind(')').ok_or_else(|| AsmErrorKind::BadOperand(s.to_string()))?;
    let off = if t[..open].trim().is_empty() { 0 } else { parse_int(&t[..open])? };
    Ok((off as i32, parse_reg(&t[open + 1..close])?))
}

fn target(
    s: &str,
    pc: u32,
    symbols: &BTreeMap<String, u32>,
) -> Result<i32, AsmErrorKind> {
    let t = s.trim();
    if t.starts_with(|c: char| c.is_ascii_digit() || c == '-') {
        return Ok(parse_int(t)? as i32);
    }
    symbols
        .get(t)
        .map(|&a| a.wrapping_sub(pc) as i32)
        .ok_or_else(|| AsmErrorKind::UndefinedLabel(t.to_string()))
}

fn count(ops: &[&str], n: usize) -> Result<(), AsmErrorKind> {
    if ops.len() != n {
        Err(AsmErrorKind::OperandCount { expected: n, found: ops.len() })
    } else {
        Ok(())
    }
}

fn base_opcode(name: &str) -> Option<Opcode> {
    Opcode::ALL.iter().copied().find(|o| o.base_name() == name)
}

fn emit(line: &Line<'_>, symbols: &BTreeMap<String, u32>) -> Result<Vec<u32>, AsmErrorKind> {
    let ops = &line.operands;
    let pc = line.addr;
    let m = line.mnemonic;

    let one = |ins: Instruction| -> Result<Vec<u32>, AsmErrorKind> { Ok(vec![encode(&ins)?]) };

    match m {
        ".word" => {
            count(ops, 1)?;
            let v = match symbols.get(ops[0]) {
                Some(&a) => a,
                None => parse_int(ops[0])? as u32,
            };
            return Ok(vec![v]);
        }
        ".insn" => {
            count(ops, 1)?;
            return Ok(vec![parse_int(ops[0])? as u32]);
        }
        "li" => {
            count(ops, 2)?;
            let rd = parse_reg(ops[0])?;
            return li_sequence(rd, parse_int(ops[1])?)
                .iter()
                .map(|i| encode(i).map_err(Into::into))
                .collect();
        }
        "mv" => {
            count(ops, 2)?;
            return one(Instruction::i(Opcode::Addi, parse_reg(ops[0])?, parse_reg(ops[1])?, 0));
        }
        "nop" => {
            count(ops, 0)?;
            return one(Instruction::i(Opcode::Addi, 0, 0, 0));
        }
        "neg" => {
            count(ops, 2)?;
            return one(Instruction::r(Opcode::Sub, parse_reg(ops[0])?, 0, parse_reg(ops[1])?));
        }
        "j" => {
            count(ops, 1)?;
            let ins = Instruction { imm: target(ops[0], pc, symbols)?, ..Instruction::new(Opcode::Jal) };
            return one(ins);
        }
        "ret" => {
            count(ops, 0)?;
            return one(Instruction::i(Opcode::Jalr, 0, 1, 0));
        }
        "beqz" | "bnez" => {
            count(ops, 2)?;
            let op = if m == "beqz" { Opcode::Beq } else { Opcode::Bne };
            return one(Instruction::b(op, parse_reg(ops[0])?, 0, target(ops[1], pc, symbols)?));
        }
        "pv.init" => {
            count(ops, 2)?;
            let (ln, _) = parse_lig(ops[0], false)?;
            return one(Instruction::pv_init(ln, parse_reg(ops[1])?));
        }
        "pv.initi" => {
            count(ops, 2)?;
            let (ln, _) = parse_lig(ops[0], false)?;
            let n = parse_int(ops[1])?;
            if !(0..=u32::MAX as i64).contains(&n) {
                return Err(AsmErrorKind::BadOperand(ops[1].to_string()));
            }
            return one(Instruction::pv_initi(ln, n as u32));
        }
        _ => {}
    }

    let (op, lig, ops): (Opcode, Option<(u8, u8)>, &[&str]) = if let Some(pv) = m.strip_prefix("pv.") {
        let op = Opcode::ALL
            .iter()
            .copied()
            .find(|o| o.has_counterpart() && o.pv_name() == Some(m))
            .ok_or_else(|| AsmErrorKind::UnknownMnemonic(format!("pv.{pv}")))?;
        if ops.is_empty() {
            return Err(AsmErrorKind::OperandCount { expected: 1, found: 0 });
        }
        (op, Some(parse_lig(ops[0], true)?), &ops[1..])
    } else {
        let op = base_opcode(m).ok_or_else(|| AsmErrorKind::UnknownMnemonic(m.to_string()))?;
        (op, None, &ops[..])
    };

    use super::Format;
    let mut ins = match op {
        Opcode::Lui | Opcode::Auipc => {
            count(ops, 2)?;
            let v = parse_int(ops[1])?;
            if !(0..=0xfffff).contains(&v) {
                return Err(AsmErrorKind::BadOperand(ops[1].to_string()));
            }
            Instruction { rd: parse_reg(ops[0])?, imm: (v << 12) as u32 as i32, ..Instruction::new(op) }
        }
        Opcode::Jal => match ops.len() {
            1 => Instruction { rd: 1, imm: target(ops[0], pc, symbols)?, ..Instruction::new(op) },
            _ => {
                count(ops, 2)?;
                Instruction { rd: parse_reg(ops[0])?, imm: target(ops[1], pc, symbols)?, ..Instruction::new(op) }
            }
        },
        Opcode::Jalr => {
            count(ops, 2)?;
            let (off, rs1) = parse_mem(ops[1])?;
            Instruction::i(op, parse_reg(ops[0])?, rs1, off)
        }
        Opcode::Ecall | Opcode::Ebreak => {
            count(ops, 0)?;
            Instruction::new(op)
        }
        Opcode::Fence => {
            count(ops, 0)?;
            Instruction { imm: 0x0ff, ..Instruction::new(op) }
        }
        _ if op.is_load() => {
            count(ops, 2)?;
            let (off, rs1) = parse_mem(ops[1])?;
            Instruction::i(op, parse_reg(ops[0])?, rs1, off)
        }
        _ => match op.format() {
            Format::S => {
                count(ops, 2)?;
                let (off, rs1) = parse_mem(ops[1])?;
                Instruction::s(op, rs1, parse_reg(ops[0])?, off)
            }
            Format::B if lig.is_some() => {
                count(ops, 2)?;
                Instruction::b(op, parse_reg(ops[0])?, 0, target(ops[1], pc, symbols)?)
            }
            Format::B => {
                count(ops, 3)?;
                Instruction::b(op, parse_reg(ops[0])?, parse_reg(ops[1])?, target(ops[2], pc, symbols)?)
            }
            Format::R => {
                count(ops, 3)?;
                Instruction::r(op, parse_reg(ops[0])?, parse_reg(ops[1])?, parse_reg(ops[2])?)
            }
            _ => {
                count(ops, 3)?;
                Instruction::i(op, parse_reg(ops[0])?, parse_reg(ops[1])?, parse_int(ops[2])? as i32)
            }
        },
    };
    if let Some((ln, x)) = lig {
        ins = ins.with_lig(ln, x);
    }
    one(ins)
}
