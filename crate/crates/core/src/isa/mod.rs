//! RV32IM plus the PermuteV extension: instruction model, encoder, decoder.
//!
//! PermuteV counterparts reuse their base opcode and funct fields. R- and
//! I-type counterparts carry the LIG selector in bits `[29:28]` and the index
//! shift in bits `[27:26]`; both ranges are zero in every RV32IM R-type and
//! shift-immediate word. Branch counterparts use the reserved BRANCH funct3
//! values `010`/`011` and pack `{0, Ln, x}` into the rs2 field.
//! `pv.init`/`pv.initi` live in the custom-0 opcode space.

mod asm;
mod disasm;

pub use asm::{assemble, AsmError, AsmErrorKind, Program};
pub use disasm::{disassemble, reg_name};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    Lui,
    Auipc,
    Jal,
    Jalr,
    Beq,
    Bne,
    Blt,
    Bge,
    Bltu,
    Bgeu,
    Lb,
    Lh,
    Lw,
    Lbu,
    Lhu,
    Sb,
    Sh,
    Sw,
    Addi,
    Slti,
    Sltiu,
    Xori,
    Ori,
    Andi,
    Slli,
    Srli,
    Srai,
    Add,
    Sub,
    Sll,
    Slt,
    Sltu,
    Xor,
    Srl,
    Sra,
    Or,
    And,
    Fence,
    Ecall,
    Ebreak,
    Mul,
    Mulh,
    Mulhsu,
    Mulhu,
    Div,
    Divu,
    Rem,
    Remu,
    PvInit,
    PvIniti,
    Illegal,
}

/// Encoding family of an opcode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    R,
    I,
    S,
    B,
    U,
    J,
}

const OP_LUI: u32 = 0b011_0111;
const OP_AUIPC: u32 = 0b001_0111;
const OP_JAL: u32 = 0b110_1111;
const OP_JALR: u32 = 0b110_0111;
const OP_BRANCH: u32 = 0b110_0011;
const OP_LOAD: u32 = 0b000_0011;
const OP_STORE: u32 = 0b010_0011;
const OP_IMM: u32 = 0b001_0011;
const OP_REG: u32 = 0b011_0011;
const OP_FENCE: u32 = 0b000_1111;
const OP_SYSTEM: u32 = 0b111_0011;
/// custom-0, home of `pv.init`/`pv.initi`.
pub const OP_CUSTOM0: u32 = 0b000_1011;

const WORD_ECALL: u32 = 0x0000_0073;
const WORD_EBREAK: u32 = 0x0010_0073;

/// (opcode, funct3, funct7) of every R-type instruction.
const R_TABLE: [(Opcode, u32, u32); 18] = [
    (Opcode::Add, 0, 0x00),
    (Opcode::Sub, 0, 0x20),
    (Opcode::Sll, 1, 0x00),
    (Opcode::Slt, 2, 0x00),
    (Opcode::Sltu, 3, 0x00),
    (Opcode::Xor, 4, 0x00),
    (Opcode::Srl, 5, 0x00),
    (Opcode::Sra, 5, 0x20),
    (Opcode::Or, 6, 0x00),
    (Opcode::And, 7, 0x00),
    (Opcode::Mul, 0, 0x01),
    (Opcode::Mulh, 1, 0x01),
    (Opcode::Mulhsu, 2, 0x01),
    (Opcode::Mulhu, 3, 0x01),
    (Opcode::Div, 4, 0x01),
    (Opcode::Divu, 5, 0x01),
    (Opcode::Rem, 6, 0x01),
    (Opcode::Remu, 7, 0x01),
];

const BRANCH_TABLE: [(Opcode, u32); 6] = [
    (Opcode::Beq, 0),
    (Opcode::Bne, 1),
    (Opcode::Blt, 4),
    (Opcode::Bge, 5),
    (Opcode::Bltu, 6),
    (Opcode::Bgeu, 7),
];

const LOAD_TABLE: [(Opcode, u32); 5] = [
    (Opcode::Lb, 0),
    (Opcode::Lh, 1),
    (Opcode::Lw, 2),
    (Opcode::Lbu, 4),
    (Opcode::Lhu, 5),
];

const STORE_TABLE: [(Opcode, u32); 3] = [(Opcode::Sb, 0), (Opcode::Sh, 1), (Opcode::Sw, 2)];

const IMM_TABLE: [(Opcode, u32); 6] = [
    (Opcode::Addi, 0),
    (Opcode::Slti, 2),
    (Opcode::Sltiu, 3),
    (Opcode::Xori, 4),
    (Opcode::Ori, 6),
    (Opcode::Andi, 7),
];

/// The 25 PermuteV mnemonics, in table order.
pub const PV_MNEMONICS: [&str; 25] = [
    "pv.init", "pv.initi", "pv.add", "pv.sub", "pv.xor", "pv.or", "pv.and", "pv.sll", "pv.srl",
    "pv.sra", "pv.slt", "pv.sltu", "pv.slli", "pv.srli", "pv.srai", "pv.beq", "pv.bne", "pv.mul",
    "pv.mulh", "pv.mulsu", "pv.mulu", "pv.div", "pv.divu", "pv.rem", "pv.remu",
];

impl Opcode {
    pub const ALL: [Opcode; 50] = [
        Opcode::Lui,
        Opcode::Auipc,
        Opcode::Jal,
        Opcode::Jalr,
        Opcode::Beq,
        Opcode::Bne,
        Opcode::Blt,
        Opcode::Bge,
        Opcode::Bltu,
        Opcode::Bgeu,
        Opcode::Lb,
        Opcode::Lh,
        Opcode::Lw,
        Opcode::Lbu,
        Opcode::Lhu,
        Opcode::Sb,
        Opcode::Sh,
        Opcode::Sw,
        Opcode::Addi,
        Opcode::Slti,
        Opcode::Sltiu,
        Opcode::Xori,
        Opcode::Ori,
        Opcode::Andi,
        Opcode::Slli,
        Opcode::Srli,
        Opcode::Srai,
        Opcode::Add,
        Opcode::Sub,
        Opcode::Sll,
        Opcode::Slt,
        Opcode::Sltu,
        Opcode::Xor,
        Opcode::Srl,
        Opcode::Sra,
        Opcode::Or,
        Opcode::And,
        Opcode::Fence,
        Opcode::Ecall,
        Opcode::Ebreak,
        Opcode::Mul,
        Opcode::Mulh,
        Opcode::Mulhsu,
        Opcode::Mulhu,
        Opcode::Div,
        Opcode::Divu,
        Opcode::Rem,
        Opcode::Remu,
        Opcode::PvInit,
        Opcode::PvIniti,
    ];

    /// Base RV32IM assembler name.
    pub fn base_name(self) -> &'static str {
        use Opcode::*;
        match self {
            Lui => "lui",
            Auipc => "auipc",
            Jal => "jal",
            Jalr => "jalr",
            Beq => "beq",
            Bne => "bne",
            Blt => "blt",
            Bge => "bge",
            Bltu => "bltu",
            Bgeu => "bgeu",
            Lb => "lb",
            Lh => "lh",
            Lw => "lw",
            Lbu => "lbu",
            Lhu => "lhu",
            Sb => "sb",
            Sh => "sh",
            Sw => "sw",
            Addi => "addi",
            Slti => "slti",
            Sltiu => "sltiu",
            Xori => "xori",
            Ori => "ori",
            Andi => "andi",
            Slli => "slli",
            Srli => "srli",
            Srai => "srai",
            Add => "add",
            Sub => "sub",
            Sll => "sll",
            Slt => "slt",
            Sltu => "sltu",
            Xor => "xor",
            Srl => "srl",
            Sra => "sra",
            Or => "or",
            And => "and",
            Fence => "fence",
            Ecall => "ecall",
            Ebreak => "ebreak",
            Mul => "mul",
            Mulh => "mulh",
            Mulhsu => "mulhsu",
            Mulhu => "mulhu",
            Div => "div",
            Divu => "divu",
            Rem => "rem",
            Remu => "remu",
            PvInit => "pv.init",
            PvIniti => "pv.initi",
            Illegal => ".insn",
        }
    }

    /// PermuteV name of the counterpart, if this opcode has one.
    pub fn pv_name(self) -> Option<&'static str> {
        use Opcode::*;
        Some(match self {
            Add => "pv.add",
            Sub => "pv.sub",
            Xor => "pv.xor",
            Or => "pv.or",
            And => "pv.and",
            Sll => "pv.sll",
            Srl => "pv.srl",
            Sra => "pv.sra",
            Slt => "pv.slt",
            Sltu => "pv.sltu",
            Slli => "pv.slli",
            Srli => "pv.srli",
            Srai => "pv.srai",
            Beq => "pv.beq",
            Bne => "pv.bne",
            Mul => "pv.mul",
            Mulh => "pv.mulh",
            Mulhsu => "pv.mulsu",
            Mulhu => "pv.mulu",
            Div => "pv.div",
            Divu => "pv.divu",
            Rem => "pv.rem",
            Remu => "pv.remu",
            PvInit => "pv.init",
            PvIniti => "pv.initi",
            _ => return None,
        })
    }

    /// True for the 23 arithmetic/branch opcodes with a PermuteV counterpart.
    pub fn has_counterpart(self) -> bool {
        self.pv_name().is_some() && !matches!(self, Opcode::PvInit | Opcode::PvIniti)
    }

    pub fn format(self) -> Format {
        use Opcode::*;
        match self {
            Lui | Auipc => Format::U,
            Jal => Format::J,
            Beq | Bne | Blt | Bge | Bltu | Bgeu => Format::B,
            Sb | Sh | Sw => Format::S,
            Add | Sub | Sll | Slt | Sltu | Xor | Srl | Sra | Or | And | Mul | Mulh | Mulhsu
            | Mulhu | Div | Divu | Rem | Remu | PvInit => Format::R,
            _ => Format::I,
        }
    }

    pub fn is_shift_imm(self) -> bool {
        matches!(self, Opcode::Slli | Opcode::Srli | Opcode::Srai)
    }

    pub fn is_branch(self) -> bool {
        self.format() == Format::B
    }

    pub fn is_load(self) -> bool {
        matches!(self, Opcode::Lb | Opcode::Lh | Opcode::Lw | Opcode::Lbu | Opcode::Lhu)
    }
}

/// A decoded instruction. Fields an opcode does not use are zero.
///
/// `ln` selects LIG slot 1..=3 (0 = plain RV32IM); `x` is the left shift
/// applied to the LIG index. For `Illegal`, `imm` carries the raw word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub op: Opcode,
    pub rd: u8,
    pub rs1: u8,
    pub rs2: u8,
    pub imm: i32,
    pub ln: u8,
    pub x: u8,
}

impl Instruction {
    pub fn new(op: Opcode) -> Self {
        Instruction { op, rd: 0, rs1: 0, rs2: 0, imm: 0, ln: 0, x: 0 }
    }

    pub fn r(op: Opcode, rd: u8, rs1: u8, rs2: u8) -> Self {
        Instruction { rd, rs1, rs2, ..Self::new(op) }
    }

    pub fn i(op: Opcode, rd: u8, rs1: u8, imm: i32) -> Self {
        Instruction { rd, rs1, imm, ..Self::new(op) }
    }

    pub fn s(op: Opcode, rs1: u8, rs2: u8, imm: i32) -> Self {
        Instruction { rs1, rs2, imm, ..Self::new(op) }
    }

    pub fn b(op: Opcode, rs1: u8, rs2: u8, imm: i32) -> Self {
        Instruction { rs1, rs2, imm, ..Self::new(op) }
    }

    /// PermuteV counterpart of `self` bound to LIG slot `ln` with shift `x`.
    pub fn with_lig(mut self, ln: u8, x: u8) -> Self {
        self.ln = ln;
        self.x = x;
        self
    }

    pub fn pv_init(ln: u8, rs2: u8) -> Self {
        Instruction { rs2, ln, ..Self::new(Opcode::PvInit) }
    }

    pub fn pv_initi(ln: u8, n: u32) -> Self {
        Instruction { imm: n as i32, ln, ..Self::new(Opcode::PvIniti) }
    }

    pub fn illegal(word: u32) -> Self {
        Instruction { imm: word as i32, ..Self::new(Opcode::Illegal) }
    }

    pub fn is_permutev(&self) -> bool {
        self.ln != 0 || matches!(self.op, Opcode::PvInit | Opcode::PvIniti)
    }

    pub fn mnemonic(&self) -> &'static str {
        if self.ln != 0 {
            if let Some(name) = self.op.pv_name() {
                return name;
            }
        }
        self.op.base_name()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("{mnemonic}: register field {field} = {value} out of range")]
    Register { mnemonic: &'static str, field: &'static str, value: u8 },
    #[error("{mnemonic}: immediate {value} out of range for this format")]
    Immediate { mnemonic: &'static str, value: i32 },
    #[error("{mnemonic}: LIG selector {value} invalid")]
    Lig { mnemonic: &'static str, value: u8 },
    #[error("{mnemonic}: shift amount x = {value} invalid (0..=2)")]
    Shift { mnemonic: &'static str, value: u8 },
    #[error("{mnemonic}: field {field} must be zero")]
    UnusedField { mnemonic: &'static str, field: &'static str },
    #[error("cannot encode the illegal-instruction marker")]
    Illegal,
}

fn fits_signed(v: i32, bits: u32) -> bool {
    let lim = 1i64 << (bits - 1);
    (-lim..lim).contains(&(v as i64))
}

/// Encodes a well-formed instruction into its 32-bit word.
pub fn encode(ins: &Instruction) -> Result<u32, EncodeError> {
    use Opcode::*;
    let m = ins.mnemonic();
    for (field, value) in [("rd", ins.rd), ("rs1", ins.rs1), ("rs2", ins.rs2)] {
        if value > 31 {
            return Err(EncodeError::Register { mnemonic: m, field, value });
        }
    }
    if ins.ln > 3 {
        return Err(EncodeError::Lig { mnemonic: m, value: ins.ln });
    }
    if ins.x > 2 {
        return Err(EncodeError::Shift { mnemonic: m, value: ins.x });
    }
    let counterpart = ins.op.has_counterpart();
    if !counterpart && !matches!(ins.op, PvInit | PvIniti) && ins.ln != 0 {
        return Err(EncodeError::Lig { mnemonic: m, value: ins.ln });
    }
    if ins.x != 0 && (ins.ln == 0 || !counterpart) {
        return Err(EncodeError::UnusedField { mnemonic: m, field: "x" });
    }
    let unused = |field: &'static str, value: i64| -> Result<(), EncodeError> {
        if value != 0 {
            Err(EncodeError::UnusedField { mnemonic: m, field })
        } else {
            Ok(())
        }
    };
    let bad_imm = || EncodeError::Immediate { mnemonic: m, value: ins.imm };
    let rd = ins.rd as u32;
    let rs1 = ins.rs1 as u32;
    let rs2 = ins.rs2 as u32;
    let lig_rt = (ins.ln as u32) << 28 | (ins.x as u32) << 26;

    let word = match ins.op {
        Illegal => return Err(EncodeError::Illegal),
        Lui | Auipc => {
            unused("rs1", ins.rs1 as i64)?;
            unused("rs2", ins.rs2 as i64)?;
            if ins.imm & 0xfff != 0 {
                return Err(bad_imm());
            }
            let opc = if ins.op == Lui { OP_LUI } else { OP_AUIPC };
            (ins.imm as u32) | rd << 7 | opc
        }
        Jal => {
            unused("rs1", ins.rs1 as i64)?;
            unused("rs2", ins.rs2 as i64)?;
            if !fits_signed(ins.imm, 21) || ins.imm & 1 != 0 {
                return Err(bad_imm());
            }
            let i = ins.imm as u32;
            (i >> 20 & 1) << 31
                | (i >> 1 & 0x3ff) << 21
                | (i >> 11 & 1) << 20
                | (i >> 12 & 0xff) << 12
                | rd << 7
                | OP_JAL
        }
        Jalr => {
            unused("rs2", ins.rs2 as i64)?;
            if !fits_signed(ins.imm, 12) {
                return Err(bad_imm());
            }
            (ins.imm as u32 & 0xfff) << 20 | rs1 << 15 | rd << 7 | OP_JALR
        }
        Beq | Bne | Blt | Bge | Bltu | Bgeu => {
            unused("rd", ins.rd as i64)?;
            if !fits_signed(ins.imm, 13) || ins.imm & 1 != 0 {
                return Err(bad_imm());
            }
            let f3 = BRANCH_TABLE.iter().find(|(o, _)| *o == ins.op).unwrap().1;
            let (f3, rs2_field) = if ins.ln != 0 {
                unused("rs2", ins.rs2 as i64)?;
                (f3 | 0b010, (ins.ln as u32) << 2 | ins.x as u32)
            } else {
                (f3, rs2)
            };
            let i = ins.imm as u32;
            (i >> 12 & 1) << 31
                | (i >> 5 & 0x3f) << 25
                | rs2_field << 20
                | rs1 << 15
                | f3 << 12
                | (i >> 1 & 0xf) << 8
                | (i >> 11 & 1) << 7
                | OP_BRANCH
        }
        Lb | Lh | Lw | Lbu | Lhu => {
            unused("rs2", ins.rs2 as i64)?;
            if !fits_signed(ins.imm, 12) {
                return Err(bad_imm());
            }
            let f3 = LOAD_TABLE.iter().find(|(o, _)| *o == ins.op).unwrap().1;
            (ins.imm as u32 & 0xfff) << 20 | rs1 << 15 | f3 << 12 | rd << 7 | OP_LOAD
        }
        Sb | Sh | Sw => {
            unused("rd", ins.rd as i64)?;
            if !fits_signed(ins.imm, 12) {
                return Err(bad_imm());
            }
            let f3 = STORE_TABLE.iter().find(|(o, _)| *o == ins.op).unwrap().1;
            let i = ins.imm as u32;
            (i >> 5 & 0x7f) << 25 | rs2 << 20 | rs1 << 15 | f3 << 12 | (i & 0x1f) << 7 | OP_STORE
        }
        Addi | Slti | Sltiu | Xori | Ori | Andi => {
            unused("rs2", ins.rs2 as i64)?;
            if !fits_signed(ins.imm, 12) {
                return Err(bad_imm());
            }
            let f3 = IMM_TABLE.iter().find(|(o, _)| *o == ins.op).unwrap().1;
            (ins.imm as u32 & 0xfff) << 20 | rs1 << 15 | f3 << 12 | rd << 7 | OP_IMM
        }
        Slli | Srli | Srai => {
            unused("rs2", ins.rs2 as i64)?;
            if !(0..32).contains(&ins.imm) {
                return Err(bad_imm());
            }
            let (f3, f7) = match ins.op {
                Slli => (1, 0x00),
                Srli => (5, 0x00),
                _ => (5, 0x20),
            };
            f7 << 25 | lig_rt | (ins.imm as u32) << 20 | rs1 << 15 | f3 << 12 | rd << 7 | OP_IMM
        }
        Fence => {
            unused("rs2", ins.rs2 as i64)?;
            if !fits_signed(ins.imm, 12) {
                return Err(bad_imm());
            }
            (ins.imm as u32 & 0xfff) << 20 | rs1 << 15 | rd << 7 | OP_FENCE
        }
        Ecall | Ebreak => {
            unused("rd", ins.rd as i64)?;
            unused("rs1", ins.rs1 as i64)?;
            unused("rs2", ins.rs2 as i64)?;
            unused("imm", ins.imm as i64)?;
            if ins.op == Ecall {
                WORD_ECALL
            } else {
                WORD_EBREAK
            }
        }
        PvInit => {
            unused("rd", ins.rd as i64)?;
            unused("rs1", ins.rs1 as i64)?;
            unused("imm", ins.imm as i64)?;
            if ins.ln == 0 {
                return Err(EncodeError::Lig { mnemonic: m, value: 0 });
            }
            (ins.ln as u32) << 28 | rs2 << 20 | OP_CUSTOM0
        }
        PvIniti => {
            unused("rd", ins.rd as i64)?;
            unused("rs1", ins.rs1 as i64)?;
            unused("rs2", ins.rs2 as i64)?;
            if ins.ln == 0 {
                return Err(EncodeError::Lig { mnemonic: m, value: 0 });
            }
            if !(1..=4095).contains(&ins.imm) {
                return Err(bad_imm());
            }
            (ins.imm as u32) << 20 | 1 << 12 | (ins.ln as u32) << 7 | OP_CUSTOM0
        }
        op => {
            // remaining R-type ALU / M-extension
            let &(_, f3, f7) = R_TABLE.iter().find(|(o, _, _)| *o == op).unwrap();
            unused("imm", ins.imm as i64)?;
            f7 << 25 | lig_rt | rs2 << 20 | rs1 << 15 | f3 << 12 | rd << 7 | OP_REG
        }
    };
    Ok(word)
}

fn sext(v: u32, bits: u32) -> i32 {
    let shift = 32 - bits;
    ((v << shift) as i32) >> shift
}

/// Decodes a 32-bit word. Unknown or reserved encodings decode to
/// [`Opcode::Illegal`] carrying the raw word.
pub fn decode(word: u32) -> Instruction {
    use Opcode::*;
    let opcode = word & 0x7f;
    let rd = (word >> 7 & 0x1f) as u8;
    let f3 = word >> 12 & 7;
    let rs1 = (word >> 15 & 0x1f) as u8;
    let rs2 = (word >> 20 & 0x1f) as u8;
    let f7 = word >> 25;
    let illegal = Instruction::illegal(word);

    match opcode {
        OP_LUI | OP_AUIPC => {
            let op = if opcode == OP_LUI { Lui } else { Auipc };
            Instruction { rd, imm: (word & 0xffff_f000) as i32, ..Instruction::new(op) }
        }
        OP_JAL => {
            let imm = (word >> 31 & 1) << 20
                | (word >> 21 & 0x3ff) << 1
                | (word >> 20 & 1) << 11
                | (word >> 12 & 0xff) << 12;
            Instruction { rd, imm: sext(imm, 21), ..Instruction::new(Jal) }
        }
        OP_JALR if f3 == 0 => Instruction::i(Jalr, rd, rs1, sext(word >> 20, 12)),
        OP_BRANCH => {
            let imm = sext(
                (word >> 31 & 1) << 12
                    | (word >> 7 & 1) << 11
                    | (word >> 25 & 0x3f) << 5
                    | (word >> 8 & 0xf) << 1,
                13,
            );
            if f3 == 2 || f3 == 3 {
                let ln = (rs2 >> 2) & 3;
                let x = rs2 & 3;
                if rs2 & 0x10 != 0 || ln == 0 || x == 3 {
                    return illegal;
                }
                let op = if f3 == 2 { Beq } else { Bne };
                return Instruction { rs1, imm, ln, x, ..Instruction::new(op) };
            }
            match BRANCH_TABLE.iter().find(|(_, f)| *f == f3) {
                Some(&(op, _)) => Instruction::b(op, rs1, rs2, imm),
                None => illegal,
            }
        }
        OP_LOAD => match LOAD_TABLE.iter().find(|(_, f)| *f == f3) {
            Some(&(op, _)) => Instruction::i(op, rd, rs1, sext(word >> 20, 12)),
            None => illegal,
        },
        OP_STORE => match STORE_TABLE.iter().find(|(_, f)| *f == f3) {
            Some(&(op, _)) => {
                let imm = sext((word >> 25) << 5 | (word >> 7 & 0x1f), 12);
                Instruction::s(op, rs1, rs2, imm)
            }
            None => illegal,
        },
        OP_IMM => {
            if f3 == 1 || f3 == 5 {
                let ln = (word >> 28 & 3) as u8;
                let x = (word >> 26 & 3) as u8;
                let rest = f7 & !0b001_1110;
                let op = match (f3, rest) {
                    (1, 0x00) => Slli,
                    (5, 0x00) => Srli,
                    (5, 0x20) => Srai,
                    _ => return illegal,
                };
                if (ln == 0 && x != 0) || x == 3 {
                    return illegal;
                }
                return Instruction { rd, rs1, imm: rs2 as i32, ln, x, ..Instruction::new(op) };
            }
            match IMM_TABLE.iter().find(|(_, f)| *f == f3) {
                Some(&(op, _)) => Instruction::i(op, rd, rs1, sext(word >> 20, 12)),
                None => illegal,
            }
        }
        OP_REG => {
            let ln = (word >> 28 & 3) as u8;
            let x = (word >> 26 & 3) as u8;
            let rest = f7 & !0b001_1110;
            if (ln == 0 && x != 0) || x == 3 {
                return illegal;
            }
            match R_TABLE.iter().find(|(_, a, b)| *a == f3 && *b == rest) {
                Some(&(op, _, _)) => Instruction::r(op, rd, rs1, rs2).with_lig(ln, x),
                None => illegal,
            }
        }
        OP_FENCE if f3 == 0 => {
            Instruction { rd, rs1, imm: sext(word >> 20, 12), ..Instruction::new(Fence) }
        }
        OP_SYSTEM => match word {
            WORD_ECALL => Instruction::new(Ecall),
            WORD_EBREAK => Instruction::new(Ebreak),
            _ => illegal,
        },
        OP_CUSTOM0 => match f3 {
            0 => {
                let ln = (word >> 28 & 3) as u8;
                if rd != 0 || rs1 != 0 || f7 & !0b001_1000 != 0 || ln == 0 {
                    return illegal;
                }
                Instruction::pv_init(ln, rs2)
            }
            1 => {
                let n = word >> 20;
                if rs1 != 0 || rd & !3 != 0 || rd == 0 || n == 0 {
                    return illegal;
                }
                Instruction::pv_initi(rd, n)
            }
            _ => illegal,
        },
        _ => illegal,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_add_unchanged() {
        // add x5, x6, x7
        let w = encode(&Instruction::r(Opcode::Add, 5, 6, 7)).unwrap();
        assert_eq!(w, 0x0073_02b3);
        assert_eq!(w >> 28 & 3, 0);
    }

    #[test]
    fn pv_add_sets_ln_and_x_bits() {
        let base = encode(&Instruction::r(Opcode::Add, 5, 6, 7)).unwrap();
        let pv = encode(&Instruction::r(Opcode::Add, 5, 6, 7).with_lig(1, 2)).unwrap();
        assert_eq!(pv, base | 0b01 << 28 | 0b10 << 26);
    }

    #[test]
    fn pv_bne_layout() {
        // bne x12, x0, -16 assembled by hand:
        // imm=-16 -> imm[12]=1 imm[10:5]=0x3f imm[4:1]=0b1000 imm[11]=1
        let base = 1 << 31 | 0x3f << 25 | 12 << 15 | 1 << 12 | 0b1000 << 8 | 1 << 7 | 0x63;
        assert_eq!(encode(&Instruction::b(Opcode::Bne, 12, 0, -16)).unwrap(), base);
        let pv = encode(&Instruction::b(Opcode::Bne, 12, 0, -16).with_lig(2, 0)).unwrap();
        assert_eq!(pv >> 22 & 3, 0b10);
        assert_eq!(pv >> 20 & 3, 0b00);
        // Same word apart from the funct3 marker bit and the packed rs2 field.
        assert_eq!(pv & !(0x1f << 20 | 0b010 << 12), base);
        assert_eq!(pv >> 12 & 7, 0b011);
    }

    #[test]
    fn mul_with_l3_bits_decodes_to_pv_mul() {
        let w = encode(&Instruction::r(Opcode::Mul, 1, 2, 3)).unwrap() | 0b11 << 28;
        let d = decode(w);
        assert_eq!(d.mnemonic(), "pv.mul");
        assert_eq!((d.ln, d.x, d.rd, d.rs1, d.rs2), (3, 0, 1, 2, 3));
    }

    #[test]
    fn zero_word_is_illegal() {
        assert_eq!(decode(0).op, Opcode::Illegal);
        assert_eq!(decode(0xffff_ffff).op, Opcode::Illegal);
    }

    #[test]
    fn x_three_is_reserved() {
        let w = encode(&Instruction::r(Opcode::Add, 1, 2, 3).with_lig(1, 0)).unwrap() | 3 << 26;
        assert_eq!(decode(w).op, Opcode::Illegal);
        assert!(matches!(
            encode(&Instruction::r(Opcode::Add, 1, 2, 3).with_lig(1, 3)),
            Err(EncodeError::Shift { .. })
        ));
    }

    #[test]
    fn lig_on_non_counterpart_rejected() {
        let e = encode(&Instruction::i(Opcode::Addi, 1, 2, 3).with_lig(1, 0));
        assert!(matches!(e, Err(EncodeError::Lig { .. })));
    }

    #[test]
    fn pv_init_forms() {
        let w = encode(&Instruction::pv_init(2, 12)).unwrap();
        assert_eq!(w & 0x7f, OP_CUSTOM0);
        assert_eq!(decode(w), Instruction::pv_init(2, 12));
        let w = encode(&Instruction::pv_initi(1, 16)).unwrap();
        assert_eq!(w >> 20, 16);
        assert_eq!(decode(w), Instruction::pv_initi(1, 16));
        assert!(encode(&Instruction::pv_initi(1, 0)).is_err());
        assert!(encode(&Instruction::pv_initi(1, 4096)).is_err());
        assert!(encode(&Instruction::pv_initi(0, 5)).is_err());
    }

    #[test]
    fn clearing_ln_bits_gives_base_word() {
        for op in Opcode::ALL.iter().copied().filter(|o| o.has_counterpart()) {
            let ins = match op.format() {
                Format::B => Instruction::b(op, 9, 0, 64).with_lig(3, 1),
                Format::I => Instruction::i(op, 4, 5, 7).with_lig(2, 2),
                _ => Instruction::r(op, 4, 5, 6).with_lig(1, 1),
            };
            let w = encode(&ins).unwrap();
            let stripped = if op.is_branch() {
                w & !(0x1f << 20 | 0b010 << 12)
            } else {
                w & !(0xf << 26)
            };
            let d = decode(stripped);
            assert_eq!(d.op, op);
            assert_eq!(d.ln, 0);
            assert_eq!((d.rd, d.rs1, d.imm), (ins.rd, ins.rs1, ins.imm));
        }
    }

    #[test]
    fn immediate_ranges() {
        assert!(encode(&Instruction::i(Opcode::Addi, 1, 1, 2048)).is_err());
        assert!(encode(&Instruction::i(Opcode::Addi, 1, 1, -2048)).is_ok());
        assert!(encode(&Instruction::i(Opcode::Slli, 1, 1, 32)).is_err());
        assert!(encode(&Instruction::b(Opcode::Beq, 1, 1, 3)).is_err());
        assert!(encode(&Instruction::r(Opcode::Add, 32, 1, 1)).is_err());
    }
}
