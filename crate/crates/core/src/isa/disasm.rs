use super::{decode, Format, Opcode};

const ABI: [&str; 32] = [
    "zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2", "s0", "s1", "a0", "a1", "a2", "a3", "a4",
    "a5", "a6", "a7", "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9", "s10", "s11", "t3", "t4",
    "t5", "t6",
];

pub fn reg_name(r: u8) -> &'static str {
    ABI[r as usize & 31]
}

/// Renders one word as assembler text. Branch and jump targets are printed
/// as PC-relative offsets with the absolute target in a trailing comment.
pub fn disassemble(word: u32, pc: u32) -> String {
    let ins = decode(word);
    let m = ins.mnemonic();
    let (rd, rs1, rs2) = (reg_name(ins.rd), reg_name(ins.rs1), reg_name(ins.rs2));
    let lig = format!("L{}.{}", ins.ln, ins.x);
    let pv = ins.ln != 0;
    let target = |off: i32| format!("{off}  # 0x{:x}", pc.wrapping_add(off as u32));

    match ins.op {
        Opcode::Illegal => format!(".insn 0x{word:08x}"),
        Opcode::Fence if word == 0x0ff0_000f => "fence".into(),
        Opcode::Fence => format!(".insn 0x{word:08x}"),
        Opcode::Ecall | Opcode::Ebreak => m.into(),
        Opcode::PvInit => format!("{m} L{}, {rs2}", ins.ln),
        Opcode::PvIniti => format!("{m} L{}, {}", ins.ln, ins.imm),
        Opcode::Lui | Opcode::Auipc => format!("{m} {rd}, 0x{:x}", (ins.imm as u32) >> 12),
        Opcode::Jal => format!("{m} {rd}, {}", target(ins.imm)),
        Opcode::Jalr => format!("{m} {rd}, {}({rs1})", ins.imm),
        op if op.is_load() => format!("{m} {rd}, {}({rs1})", ins.imm),
        op => match op.format() {
            Format::S => format!("{m} {rs2}, {}({rs1})", ins.imm),
            Format::B if pv => format!("{m} {lig}, {rs1}, {}", target(ins.imm)),
            Format::B => format!("{m} {rs1}, {rs2}, {}", target(ins.imm)),
            Format::R if pv => format!("{m} {lig}, {rd}, {rs1}, {rs2}"),
            Format::R => format!("{m} {rd}, {rs1}, {rs2}"),
            _ if pv => format!("{m} {lig}, {rd}, {rs1}, {}", ins.imm),
            _ => format!("{m} {rd}, {rs1}, {}", ins.imm),
        },
    }
}
