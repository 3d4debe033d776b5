//! Instruction encodings for the supported MIPS I subset.
//!
//! | mnemonic | format | op   | funct |
//! |----------|--------|------|-------|
//! | SLL      | R      | 0x00 | 0x00  |
//! | SRL      | R      | 0x00 | 0x02  |
//! | SRA      | R      | 0x00 | 0x03  |
//! | JR       | R      | 0x00 | 0x08  |
//! | MFLO     | R      | 0x00 | 0x12  |
//! | MULT     | R      | 0x00 | 0x18  |
//! | ADD      | R      | 0x00 | 0x20  |
//! | ADDU     | R      | 0x00 | 0x21  |
//! | SUB      | R      | 0x00 | 0x22  |
//! | AND      | R      | 0x00 | 0x24  |
//! | OR       | R      | 0x00 | 0x25  |
//! | XOR      | R      | 0x00 | 0x26  |
//! | NOR      | R      | 0x00 | 0x27  |
//! | SLT      | R      | 0x00 | 0x2A  |
//! | SLTU     | R      | 0x00 | 0x2B  |
//! | HALT     | R      | 0x00 | 0x3F  |
//! | J        | J      | 0x02 |       |
//! | JAL      | J      | 0x03 |       |
//! | BEQ      | I      | 0x04 |       |
//! | BNE      | I      | 0x05 |       |
//! | ADDI     | I      | 0x08 |       |
//! | ADDIU    | I      | 0x09 |       |
//! | SLTI     | I      | 0x0A |       |
//! | ANDI     | I      | 0x0C |       |
//! | ORI      | I      | 0x0D |       |
//! | XORI     | I      | 0x0E |       |
//! | LUI      | I      | 0x0F |       |
//! | LW       | I      | 0x23 |       |
//! | SW       | I      | 0x2B |       |
//!
//! Field layout: `op[31:26] rs[25:21] rt[20:16] rd[15:11] shamt[10:6]
//! funct[5:0]`, `imm16[15:0]`, `target26[25:0]`. Decoding looks only at
//! `op` and `funct`; other fields of an R-type word are free.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Sll,
    Srl,
    Sra,
    Jr,
    Mflo,
    Mult,
    Add,
    Addu,
    Sub,
    And,
    Or,
    Xor,
    Nor,
    Slt,
    Sltu,
    Halt,
    J,
    Jal,
    Beq,
    Bne,
    Addi,
    Addiu,
    Slti,
    Andi,
    Ori,
    Xori,
    Lui,
    Lw,
    Sw,
}

pub const OP_SPECIAL: u32 = 0x00;

impl Op {
    pub const ALL: [Op; 29] = [
        Op::Sll,
        Op::Srl,
        Op::Sra,
        Op::Jr,
        Op::Mflo,
        Op::Mult,
        Op::Add,
        Op::Addu,
        Op::Sub,
        Op::And,
        Op::Or,
        Op::Xor,
        Op::Nor,
        Op::Slt,
        Op::Sltu,
        Op::Halt,
        Op::J,
        Op::Jal,
        Op::Beq,
        Op::Bne,
        Op::Addi,
        Op::Addiu,
        Op::Slti,
        Op::Andi,
        Op::Ori,
        Op::Xori,
        Op::Lui,
        Op::Lw,
        Op::Sw,
    ];

    /// `Some(funct)` for R-type ops.
    pub fn funct(self) -> Option<u32> {
        Some(match self {
            Op::Sll => 0x00,
            Op::Srl => 0x02,
            Op::Sra => 0x03,
            Op::Jr => 0x08,
            Op::Mflo => 0x12,
            Op::Mult => 0x18,
            Op::Add => 0x20,
            Op::Addu => 0x21,
            Op::Sub => 0x22,
            Op::And => 0x24,
            Op::Or => 0x25,
            Op::Xor => 0x26,
            Op::Nor => 0x27,
            Op::Slt => 0x2A,
            Op::Sltu => 0x2B,
            Op::Halt => 0x3F,
            _ => return None,
        })
    }

    pub fn opcode(self) -> u32 {
        match self {
            Op::J => 0x02,
            Op::Jal => 0x03,
            Op::Beq => 0x04,
            Op::Bne => 0x05,
            Op::Addi => 0x08,
            Op::Addiu => 0x09,
            Op::Slti => 0x0A,
            Op::Andi => 0x0C,
            Op::Ori => 0x0D,
            Op::Xori => 0x0E,
            Op::Lui => 0x0F,
            Op::Lw => 0x23,
            Op::Sw => 0x2B,
            _ => OP_SPECIAL,
        }
    }

    pub fn is_mult_unit(self) -> bool {
        matches!(self, Op::Mult | Op::Mflo)
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Op::Sll => "SLL",
            Op::Srl => "SRL",
            Op::Sra => "SRA",
            Op::Jr => "JR",
            Op::Mflo => "MFLO",
            Op::Mult => "MULT",
            Op::Add => "ADD",
            Op::Addu => "ADDU",
            Op::Sub => "SUB",
            Op::And => "AND",
            Op::Or => "OR",
            Op::Xor => "XOR",
            Op::Nor => "NOR",
            Op::Slt => "SLT",
            Op::Sltu => "SLTU",
            Op::Halt => "HALT",
            Op::J => "J",
            Op::Jal => "JAL",
            Op::Beq => "BEQ",
            Op::Bne => "BNE",
            Op::Addi => "ADDI",
            Op::Addiu => "ADDIU",
            Op::Slti => "SLTI",
            Op::Andi => "ANDI",
            Op::Ori => "ORI",
            Op::Xori => "XORI",
            Op::Lui => "LUI",
            Op::Lw => "LW",
            Op::Sw => "SW",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Op> {
        let upper = s.to_ascii_uppercase();
        Op::ALL.into_iter().find(|op| op.mnemonic() == upper)
    }

    /// Decodes by `op` and `funct` only.
    pub fn decode(word: u32) -> Option<Op> {
        let opcode = word >> 26;
        if opcode == OP_SPECIAL {
            let funct = word & 0x3F;
            Op::ALL.into_iter().find(|op| op.funct() == Some(funct))
        } else {
            Op::ALL
                .into_iter()
                .find(|op| op.funct().is_none() && op.opcode() == opcode)
        }
    }
}

impl std::fmt::Display for Op {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// Field view of a 32-bit instruction word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Instr(pub u32);

impl Instr {
    pub fn opcode(self) -> u32 {
        self.0 >> 26
    }
    pub fn rs(self) -> usize {
        ((self.0 >> 21) & 31) as usize
    }
    pub fn rt(self) -> usize {
        ((self.0 >> 16) & 31) as usize
    }
    pub fn rd(self) -> usize {
        ((self.0 >> 11) & 31) as usize
    }
    pub fn shamt(self) -> u32 {
        (self.0 >> 6) & 31
    }
    pub fn funct(self) -> u32 {
        self.0 & 0x3F
    }
    pub fn imm16(self) -> u32 {
        self.0 & 0xFFFF
    }
    pub fn simm(self) -> i32 {
        self.0 as u16 as i16 as i32
    }
    pub fn target26(self) -> u32 {
        self.0 & 0x03FF_FFFF
    }
    pub fn op(self) -> Option<Op> {
        Op::decode(self.0)
    }

    pub fn r(op: Op, rd: usize, rs: usize, rt: usize, shamt: u32) -> Instr {
        let funct = op.funct().expect("R-type op");
        Instr(
            ((rs as u32 & 31) << 21)
                | ((rt as u32 & 31) << 16)
                | ((rd as u32 & 31) << 11)
                | ((shamt & 31) << 6)
                | funct,
        )
    }

    pub fn i(op: Op, rt: usize, rs: usize, imm: u32) -> Instr {
        assert!(op.funct().is_none() && !matches!(op, Op::J | Op::Jal));
        Instr(
            (op.opcode() << 26) | ((rs as u32 & 31) << 21) | ((rt as u32 & 31) << 16) | (imm & 0xFFFF),
        )
    }

    pub fn j(op: Op, target: u32) -> Instr {
        assert!(matches!(op, Op::J | Op::Jal));
        Instr((op.opcode() << 26) | (target & 0x03FF_FFFF))
    }

    pub fn halt() -> Instr {
        Instr::r(Op::Halt, 0, 0, 0, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_encoding() {
        assert_eq!(Instr::r(Op::Add, 3, 1, 2, 0).0, 0x0022_1820);
    }

    #[test]
    fn decode_round_trip_for_every_op() {
        for op in Op::ALL {
            let w = match op {
                Op::J | Op::Jal => Instr::j(op, 1234),
                _ if op.funct().is_some() => Instr::r(op, 1, 2, 3, 4),
                _ => Instr::i(op, 1, 2, 0xBEEF),
            };
            assert_eq!(w.op(), Some(op));
        }
    }

    #[test]
    fn reserved_encodings_do_not_decode() {
        assert_eq!(Op::decode(0x0000_0001), None);
        assert_eq!(Op::decode(0x3F << 26), None);
        assert_eq!(Op::decode(0x01 << 26), None);
    }
}
