//! Reference emulator.
//!
//! The PC is a word index into the instruction list and there are no delay
//! slots: a taken branch goes to `pc + 1 + simm`. Data addresses are word
//! indices. HALT sets the halted flag and leaves the PC in place; a halted
//! machine is frozen.

use super::isa::{Instr, Op};
use super::{MipsError, MipsProgram};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct CpuStepConfig {
    pub dmem_words: usize,
    pub include_mult: bool,
    pub trace_hooks: bool,
}

impl Default for CpuStepConfig {
    fn default() -> Self {
        CpuStepConfig {
            dmem_words: 256,
            include_mult: true,
            trace_hooks: false,
        }
    }
}

impl CpuStepConfig {
    pub fn new(dmem_words: usize) -> CpuStepConfig {
        CpuStepConfig {
            dmem_words,
            ..CpuStepConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), MipsError> {
        let w = self.dmem_words;
        if !w.is_power_of_two() || !(16..=4096).contains(&w) {
            return Err(MipsError::BadConfig(format!(
                "dmem_words must be a power of two in 16..=4096, got {w}"
            )));
        }
        Ok(())
    }

    pub fn addr_bits(&self) -> usize {
        self.dmem_words.trailing_zeros() as usize
    }

    /// Width of the state block: pc, halted, lo, r1..r31, dmem.
    pub fn state_bits(&self) -> usize {
        32 + 1 + 32 + 31 * 32 + 32 * self.dmem_words
    }

    pub fn supports(&self, op: Op) -> bool {
        self.include_mult || !op.is_mult_unit()
    }
}

/// Bit offsets into the state block.
pub mod layout {
    pub const PC: usize = 0;
    pub const HALTED: usize = 32;
    pub const LO: usize = 33;
    /// Register `r` (1..=31) starts at `REGS + 32 * (r - 1)`.
    pub const REGS: usize = 65;
    pub const DMEM: usize = REGS + 31 * 32;

    pub fn reg(r: usize) -> usize {
        debug_assert!((1..32).contains(&r));
        REGS + 32 * (r - 1)
    }

    pub fn dmem(addr: usize) -> usize {
        DMEM + 32 * addr
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CpuState {
    pub pc: u32,
    pub regs: [u32; 32],
    pub lo: u32,
    pub dmem: Vec<u32>,
    pub halted: bool,
}

impl CpuState {
    pub fn reset(cfg: &CpuStepConfig) -> CpuState {
        CpuState {
            pc: 0,
            regs: [0; 32],
            lo: 0,
            dmem: vec![0; cfg.dmem_words],
            halted: false,
        }
    }

    /// LSB-first bits in the state-block layout.
    pub fn to_bits(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(65 + 31 * 32 + 32 * self.dmem.len());
        push_word(&mut out, self.pc);
        out.push(self.halted);
        push_word(&mut out, self.lo);
        for &r in &self.regs[1..] {
            push_word(&mut out, r);
        }
        for &w in &self.dmem {
            push_word(&mut out, w);
        }
        out
    }

    pub fn from_bits(cfg: &CpuStepConfig, bits: &[bool]) -> Result<CpuState, MipsError> {
        if bits.len() != cfg.state_bits() {
            return Err(MipsError::Length {
                what: "state bits",
                expected: cfg.state_bits(),
                got: bits.len(),
            });
        }
        let word = |off: usize| read_word(&bits[off..off + 32]);
        let mut regs = [0u32; 32];
        for (r, reg) in regs.iter_mut().enumerate().skip(1) {
            *reg = word(layout::reg(r));
        }
        Ok(CpuState {
            pc: word(layout::PC),
            halted: bits[layout::HALTED],
            lo: word(layout::LO),
            regs,
            dmem: (0..cfg.dmem_words).map(|a| word(layout::dmem(a))).collect(),
        })
    }
}

pub fn push_word(out: &mut Vec<bool>, w: u32) {
    out.extend((0..32).map(|i| (w >> i) & 1 == 1));
}

pub fn word_bits(w: u32) -> Vec<bool> {
    (0..32).map(|i| (w >> i) & 1 == 1).collect()
}

pub fn read_word(bits: &[bool]) -> u32 {
    bits.iter()
        .take(32)
        .enumerate()
        .fold(0, |acc, (i, &b)| acc | ((b as u32) << i))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize)]
pub enum WriteTarget {
    Reg(u8),
    Lo,
    Mem(u32),
}

/// One architectural write, as seen by a power probe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize)]
pub struct WriteEvent {
    pub step: u32,
    pub target: WriteTarget,
    pub value: u32,
    pub width: u8,
}

impl WriteEvent {
    pub fn hamming_weight(&self) -> u32 {
        self.value.count_ones()
    }
}

/// Executes one instruction. A halted state is returned unchanged.
pub fn step_plain(
    cfg: &CpuStepConfig,
    state: &CpuState,
    instr: u32,
) -> Result<CpuState, MipsError> {
    let mut next = state.clone();
    step_in_place(cfg, &mut next, instr, 0, None)?;
    Ok(next)
}

pub(crate) fn step_in_place(
    cfg: &CpuStepConfig,
    s: &mut CpuState,
    word: u32,
    step: u32,
    mut events: Option<&mut Vec<WriteEvent>>,
) -> Result<(), MipsError> {
    if s.halted {
        return Ok(());
    }
    let i = Instr(word);
    let op = i
        .op()
        .filter(|&op| cfg.supports(op))
        .ok_or(MipsError::Unsupported { word, pc: s.pc })?;
    let rs = s.regs[i.rs()];
    let rt = s.regs[i.rt()];
    let simm = i.simm() as u32;
    let zimm = i.imm16();
    let mut pc = s.pc.wrapping_add(1);
    let mut write: Option<(usize, u32)> = None;

    match op {
        Op::Add | Op::Addu => write = Some((i.rd(), rs.wrapping_add(rt))),
        Op::Sub => write = Some((i.rd(), rs.wrapping_sub(rt))),
        Op::And => write = Some((i.rd(), rs & rt)),
        Op::Or => write = Some((i.rd(), rs | rt)),
        Op::Xor => write = Some((i.rd(), rs ^ rt)),
        Op::Nor => write = Some((i.rd(), !(rs | rt))),
        Op::Slt => write = Some((i.rd(), ((rs as i32) < (rt as i32)) as u32)),
        Op::Sltu => write = Some((i.rd(), (rs < rt) as u32)),
        Op::Sll => write = Some((i.rd(), rt << i.shamt())),
        Op::Srl => write = Some((i.rd(), rt >> i.shamt())),
        Op::Sra => write = Some((i.rd(), ((rt as i32) >> i.shamt()) as u32)),
        Op::Jr => pc = rs,
        Op::Mult => {
            s.lo = rs.wrapping_mul(rt);
            if let Some(ev) = events.as_deref_mut() {
                ev.push(WriteEvent {
                    step,
                    target: WriteTarget::Lo,
                    value: s.lo,
                    width: 32,
                });
            }
        }
        Op::Mflo => write = Some((i.rd(), s.lo)),
        Op::Halt => {
            s.halted = true;
            pc = s.pc;
        }
        Op::Addi | Op::Addiu => write = Some((i.rt(), rs.wrapping_add(simm))),
        Op::Slti => write = Some((i.rt(), ((rs as i32) < (simm as i32)) as u32)),
        Op::Andi => write = Some((i.rt(), rs & zimm)),
        Op::Ori => write = Some((i.rt(), rs | zimm)),
        Op::Xori => write = Some((i.rt(), rs ^ zimm)),
        Op::Lui => write = Some((i.rt(), zimm << 16)),
        Op::Lw => {
            let a = mem_addr(cfg, rs, simm)?;
            write = Some((i.rt(), s.dmem[a]));
        }
        Op::Sw => {
            let a = mem_addr(cfg, rs, simm)?;
            s.dmem[a] = rt;
            if let Some(ev) = events.as_deref_mut() {
                ev.push(WriteEvent {
                    step,
                    target: WriteTarget::Mem(a as u32),
                    value: rt,
                    width: 32,
                });
            }
        }
        Op::Beq => {
            if rs == rt {
                pc = pc.wrapping_add(simm);
            }
        }
        Op::Bne => {
            if rs != rt {
                pc = pc.wrapping_add(simm);
            }
        }
        Op::J => pc = i.target26(),
        Op::Jal => {
            write = Some((31, pc));
            pc = i.target26();
        }
    }

    if let Some((r, v)) = write {
        if r != 0 {
            s.regs[r] = v;
            if let Some(ev) = events {
                ev.push(WriteEvent {
                    step,
                    target: WriteTarget::Reg(r as u8),
                    value: v,
                    width: 32,
                });
            }
        }
    }
    s.pc = pc;
    Ok(())
}

fn mem_addr(cfg: &CpuStepConfig, base: u32, simm: u32) -> Result<usize, MipsError> {
    let a = base.wrapping_add(simm);
    if (a as usize) < cfg.dmem_words {
        Ok(a as usize)
    } else {
        Err(MipsError::AddressOutOfRange {
            addr: a,
            words: cfg.dmem_words,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub step_limit: u64,
    pub hooks: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            step_limit: 10_000_000,
            hooks: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunOutput {
    pub output_words: Vec<u32>,
    pub step_count: u64,
    /// Instruction word executed at each step.
    pub executed: Vec<u32>,
    pub events: Vec<WriteEvent>,
    pub final_state: CpuState,
}

/// Runs until HALT or until the PC leaves the program. HALT counts as a
/// step; falling off the end does not.
pub fn run_plain(
    program: &MipsProgram,
    input_words: &[u32],
    opts: RunOptions,
) -> Result<RunOutput, MipsError> {
    let cfg = program.step_config();
    let mut s = program.initial_state(input_words)?;
    let mut events = Vec::new();
    let mut executed = Vec::new();
    let mut steps = 0u64;
    while !s.halted && (s.pc as usize) < program.instructions.len() {
        if steps >= opts.step_limit {
            return Err(MipsError::StepLimit(opts.step_limit));
        }
        let w = program.instructions[s.pc as usize];
        step_in_place(
            &cfg,
            &mut s,
            w,
            steps as u32,
            opts.hooks.then_some(&mut events),
        )?;
        executed.push(w);
        steps += 1;
    }
    Ok(RunOutput {
        output_words: program.read_output(&s),
        step_count: steps,
        executed,
        events,
        final_state: s,
    })
}
