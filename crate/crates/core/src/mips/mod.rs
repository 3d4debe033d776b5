//! MIPS-subset machine: encodings, reference emulator, assembler and the
//! universal single-step netlist.

pub mod isa;
mod machine;
mod netlist;
mod program;

pub use isa::{Instr, Op};
pub use machine::{
    layout, push_word, read_word, run_plain, step_plain, word_bits, CpuState, CpuStepConfig,
    RunOptions, RunOutput, WriteEvent, WriteTarget,
};
pub use netlist::{build_step_netlist, logic_unit_netlist};
pub use program::{assemble, disassemble, disassemble_word, MipsProgram};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MipsError {
    #[error("unsupported instruction 0x{word:08x} at pc {pc}")]
    Unsupported { word: u32, pc: u32 },
    #[error("data address {addr} outside {words}-word memory")]
    AddressOutOfRange { addr: u32, words: usize },
    #[error("step limit {0} exceeded")]
    StepLimit(u64),
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("bad region: {0}")]
    Region(String),
    #[error("expected {expected} {what}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: {message}")]
    Asm { line: usize, message: String },
}
